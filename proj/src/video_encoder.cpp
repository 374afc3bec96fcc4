#include "xsum/video_encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace xsum {

namespace nn {

Var attention(const Var& q_in, const Var& kv_in, const Attention& p,
              const Mat* additive_mask) {
    Var q = linear(q_in, p.q);
    Var k = linear(kv_in, p.k);
    Var v = linear(kv_in, p.v);
    const int dim = static_cast<int>(q->value.cols());
    if (dim % p.heads != 0)
        throw std::invalid_argument("attention: dim not divisible by head count");
    const int dh = dim / p.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> outs;
    for (int h = 0; h < p.heads; ++h) {
        Var qh = p.heads == 1 ? q : ad::slice_cols(q, h * dh, dh);
        Var kh = p.heads == 1 ? k : ad::slice_cols(k, h * dh, dh);
        Var vh = p.heads == 1 ? v : ad::slice_cols(v, h * dh, dh);
        Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
        if (additive_mask) scores = ad::add_const(scores, *additive_mask);
        Var weights = ad::softmax_rows(scores);
        outs.push_back(ad::matmul(weights, vh));
    }
    Var merged = outs.size() == 1 ? outs[0] : ad::concat_cols(outs);
    return linear(merged, p.o);
}

Mat pad_attention_mask(int t_query, const std::vector<int>& key_mask) {
    Mat m = Mat::Zero(t_query, static_cast<Eigen::Index>(key_mask.size()));
    for (size_t j = 0; j < key_mask.size(); ++j)
        if (key_mask[j] == 0) m.col(static_cast<Eigen::Index>(j)).setConstant(kMaskedLogit);
    return m;
}

Mat causal_attention_mask(int t) {
    Mat m = Mat::Zero(t, t);
    for (int i = 0; i < t; ++i)
        for (int j = i + 1; j < t; ++j) m(i, j) = kMaskedLogit;
    return m;
}

}  // namespace nn

RandomProjectionEncoder::RandomProjectionEncoder(int raw_dim, int d_vis,
                                                 std::uint64_t seed) {
    Rng rng(seed);
    proj_ = rng.gaussian_matrix(raw_dim, d_vis, 1.0 / std::sqrt(double(raw_dim)));
    bias_ = rng.gaussian_matrix(1, d_vis, 0.02).row(0);
}

Eigen::MatrixXd RandomProjectionEncoder::encode(const VideoRecord& video) const {
    if (video.features) {
        if (video.features->cols() != proj_.cols())
            throw std::invalid_argument("encode_frames: feature dimension " +
                                        std::to_string(video.features->cols()) +
                                        " != configured d_vis " +
                                        std::to_string(proj_.cols()));
        return *video.features;
    }
    if (static_cast<int>(video.raw_frames.size()) != video.frame_count)
        throw std::invalid_argument("encode_frames: frame count mismatch for " +
                                    video.video_id);
    Eigen::MatrixXd z(video.frame_count, proj_.cols());
    for (int i = 0; i < video.frame_count; ++i) {
        const Eigen::VectorXd& f = video.raw_frames[static_cast<size_t>(i)];
        if (f.size() != proj_.rows())
            throw std::invalid_argument("encode_frames: raw frame dimension mismatch");
        z.row(i) = ((f.transpose() * proj_) + bias_).array().tanh();
    }
    return z;
}

namespace {

Eigen::MatrixXd sinusoidal_table(int max_len, int dim) {
    Eigen::MatrixXd table(max_len, dim);
    for (int pos = 0; pos < max_len; ++pos)
        for (int i = 0; i < dim; ++i) {
            double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / dim);
            table(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return table;
}

}  // namespace

TemporalEncoder::TemporalEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
    Rng rng(cfg.seed);
    if (cfg.sinusoidal_temporal) {
        temporal_table_ = ad::constant(sinusoidal_table(cfg.max_len, cfg.d_vis));
    } else {
        temporal_table_ = params_.create(
            "temporal_embedding", rng.gaussian_matrix(cfg.max_len, cfg.d_vis, 0.02));
    }
    for (int l = 0; l < cfg.n_tem; ++l) {
        std::string base = "tt." + std::to_string(l);
        Block b;
        b.ln1 = nn::LayerNorm::create(params_, base + ".ln1", cfg.d_vis);
        b.attn = nn::Attention::create(params_, base + ".attn", cfg.d_vis, cfg.d_vis,
                                       cfg.d_vis, cfg.heads(), rng);
        b.ln2 = nn::LayerNorm::create(params_, base + ".ln2", cfg.d_vis);
        b.ffn = nn::FeedForward::create(params_, base + ".ffn", cfg.d_vis,
                                        cfg.ffn_mult * cfg.d_vis, rng);
        blocks_.push_back(std::move(b));
    }
}

ad::Var TemporalEncoder::apply_temporal_embedding(const ad::Var& z) const {
    const int t = static_cast<int>(z->value.rows());
    if (t > cfg_.max_len)
        throw std::invalid_argument("apply_temporal_embedding: T=" + std::to_string(t) +
                                    " exceeds max_len=" + std::to_string(cfg_.max_len));
    std::vector<int> idx(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i) idx[static_cast<size_t>(i)] = i;
    return ad::add(z, ad::rows(temporal_table_, idx));
}

ad::Var TemporalEncoder::forward(const ad::Var& z0, const std::vector<int>& mask) const {
    const int t = static_cast<int>(z0->value.rows());
    if (static_cast<int>(mask.size()) != t)
        throw std::invalid_argument("temporal_forward: mask length mismatch");
    bool any_pad = false;
    for (int m : mask) any_pad = any_pad || m == 0;
    ad::Mat pad_mask;
    if (any_pad) pad_mask = nn::pad_attention_mask(t, mask);
    ad::Var x = z0;
    for (const Block& b : blocks_) {
        ad::Var normed = nn::layernorm(x, b.ln1);
        x = ad::add(x, nn::attention(normed, normed, b.attn,
                                     any_pad ? &pad_mask : nullptr));
        x = ad::add(x, nn::feed_forward(nn::layernorm(x, b.ln2), b.ffn));
    }
    return x;
}

}  // namespace xsum
