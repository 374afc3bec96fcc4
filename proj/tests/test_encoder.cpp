#include "xsum/rng.hpp"
#include "xsum/video_encoder.hpp"

#include <doctest.h>

using namespace xsum;

TEST_CASE("random projection encoder is deterministic per seed") {
    Rng rng(1);
    VideoRecord rec;
    rec.frame_count = 5;
    for (int i = 0; i < 5; ++i) rec.raw_frames.push_back(rng.gaussian_matrix(12, 1, 1.0).col(0));

    RandomProjectionEncoder a(12, 6, 42), b(12, 6, 42), c(12, 6, 43);
    CHECK((a.encode(rec) - b.encode(rec)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.encode(rec) - c.encode(rec)).cwiseAbs().maxCoeff() > 0.0);
    CHECK(a.encode(rec).rows() == 5);
    CHECK(a.encode(rec).cols() == 6);
    CHECK(a.frozen());
}

TEST_CASE("precomputed features pass through unchanged") {
    Rng rng(2);
    VideoRecord rec;
    rec.frame_count = 4;
    rec.features = rng.gaussian_matrix(4, 6, 1.0);
    RandomProjectionEncoder enc(12, 6, 0);
    CHECK((enc.encode(rec) - *rec.features).cwiseAbs().maxCoeff() == 0.0);

    VideoRecord bad;
    bad.frame_count = 4;
    bad.features = rng.gaussian_matrix(4, 3, 1.0);  // wrong width
    CHECK_THROWS(enc.encode(bad));
}

TEST_CASE("temporal embedding bounds") {
    EncoderConfig cfg;
    cfg.d_vis = 8;
    cfg.max_len = 6;
    TemporalEncoder enc(cfg);
    Rng rng(3);
    CHECK_NOTHROW(enc.apply_temporal_embedding(ad::constant(rng.gaussian_matrix(6, 8, 1.0))));
    CHECK_THROWS(enc.apply_temporal_embedding(ad::constant(rng.gaussian_matrix(7, 8, 1.0))));
}

TEST_CASE("temporal embedding actually shifts by position") {
    EncoderConfig cfg;
    cfg.d_vis = 8;
    cfg.max_len = 16;
    TemporalEncoder enc(cfg);
    Eigen::MatrixXd same = Eigen::MatrixXd::Ones(3, 8);
    ad::Var z0 = enc.apply_temporal_embedding(ad::constant(same));
    // identical inputs at different positions become distinct
    CHECK((z0->value.row(0) - z0->value.row(1)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("padded frames do not change unpadded outputs") {
    EncoderConfig cfg;
    cfg.d_vis = 8;
    cfg.n_tem = 2;
    cfg.max_len = 32;
    cfg.seed = 4;
    TemporalEncoder enc(cfg);
    Rng rng(5);
    Eigen::MatrixXd x = rng.gaussian_matrix(5, 8, 1.0);

    std::vector<int> mask_full(5, 1);
    ad::Var plain = enc.encode(ad::constant(x), mask_full);

    Eigen::MatrixXd padded(8, 8);
    padded.topRows(5) = x;
    padded.bottomRows(3) = rng.gaussian_matrix(3, 8, 5.0);  // junk pad content
    std::vector<int> mask = {1, 1, 1, 1, 1, 0, 0, 0};
    ad::Var with_pad = enc.encode(ad::constant(padded), mask);

    CHECK((with_pad->value.topRows(5) - plain->value).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("zero-depth temporal stack is the embedded identity") {
    EncoderConfig cfg;
    cfg.d_vis = 8;
    cfg.n_tem = 0;
    cfg.max_len = 16;
    TemporalEncoder enc(cfg);
    Rng rng(6);
    Eigen::MatrixXd x = rng.gaussian_matrix(4, 8, 1.0);
    ad::Var z0 = enc.apply_temporal_embedding(ad::constant(x));
    ad::Var z = enc.forward(z0, std::vector<int>(4, 1));
    CHECK((z->value - z0->value).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sinusoidal temporal table has no trainable embedding") {
    EncoderConfig learned;
    learned.d_vis = 8;
    learned.max_len = 16;
    EncoderConfig sine = learned;
    sine.sinusoidal_temporal = true;
    TemporalEncoder a(learned), b(sine);
    auto count_embedding_params = [](const TemporalEncoder& e) {
        int n = 0;
        for (const auto& [name, p] : e.params().items)
            if (name.find("temporal") != std::string::npos) ++n;
        return n;
    };
    CHECK(count_embedding_params(a) == 1);
    CHECK(count_embedding_params(b) == 0);
}
