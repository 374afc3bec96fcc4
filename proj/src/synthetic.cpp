#include "xsum/synthetic.hpp"

#include "xsum/rng.hpp"

#include <algorithm>
#include <iterator>
#include <numeric>
#include <stdexcept>

namespace xsum {

namespace {

const char* kConceptWords[] = {
    "guitar", "surfing", "cooking", "juggling", "climbing", "dancing",
    "painting", "skating", "rowing", "archery", "fencing", "knitting",
    "diving", "drumming", "boxing", "hiking",
};
constexpr int kMaxConcepts = static_cast<int>(std::size(kConceptWords));

}  // namespace

std::vector<CorpusRecord> make_synthetic_corpus(const SyntheticConfig& cfg) {
    if (cfg.n_concepts > kMaxConcepts)
        throw std::invalid_argument("make_synthetic_corpus: at most 16 concepts");
    if (cfg.t_min < kMinVideoSeconds)
        throw std::invalid_argument("make_synthetic_corpus: t_min below 10");
    Rng rng(cfg.seed);

    // Orthogonal-ish prototypes: unit gaussians
    std::vector<Eigen::VectorXd> prototypes;
    for (int c = 0; c < cfg.n_concepts; ++c) {
        Eigen::VectorXd p = rng.gaussian_matrix(cfg.d_vis, 1, 1.0).col(0);
        prototypes.push_back(p.normalized() * 2.0);
    }

    std::vector<CorpusRecord> records;
    for (int v = 0; v < cfg.n_videos; ++v) {
        CorpusRecord rec;
        const int t = static_cast<int>(rng.uniform_int(cfg.t_min, cfg.t_max));
        rec.video.video_id = "synthetic_" + std::to_string(v);
        rec.video.duration_sec = static_cast<double>(t);
        rec.video.frame_count = t;
        rec.video.split = "train";

        // Non-overlapping concept spans, total bounded to ~12% so annotator
        // jitter stays under the 20% filter.
        const int n_spans = cfg.concepts_per_video;
        const int span_len = std::max(1, static_cast<int>(0.12 * t / n_spans));
        std::vector<Span> true_spans;
        std::vector<int> concepts;
        int attempts = 0;
        while (static_cast<int>(true_spans.size()) < n_spans && attempts++ < 200) {
            int start = static_cast<int>(rng.uniform_int(1, std::max(1, t - span_len - 2)));
            Span s{start, start + span_len};
            bool clash = false;
            for (const Span& o : true_spans)
                clash = clash || (s.start < o.end + 2 && o.start < s.end + 2);
            if (clash) continue;
            true_spans.push_back(s);
            concepts.push_back(static_cast<int>(rng.uniform_int(0, cfg.n_concepts - 1)));
        }
        std::vector<size_t> order(true_spans.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            return true_spans[a].start < true_spans[b].start;
        });

        Eigen::MatrixXd features = rng.gaussian_matrix(t, cfg.d_vis, cfg.noise);
        for (size_t k = 0; k < true_spans.size(); ++k)
            for (int i = true_spans[k].start; i < true_spans[k].end; ++i)
                features.row(i) += prototypes[static_cast<size_t>(concepts[k])].transpose();
        rec.video.features = features;

        std::string caption;
        for (size_t k : order) {
            if (!caption.empty()) caption += " then ";
            caption += kConceptWords[concepts[k]];
        }
        rec.refs.video_id = rec.video.video_id;
        rec.refs.text_summary = caption;

        for (int a = 0; a < kNumAnnotators; ++a) {
            SpanAnnotation ann;
            ann.annotator_id = a;
            for (const Span& s : true_spans) {
                int ds = static_cast<int>(rng.uniform_int(-1, 1));
                int de = static_cast<int>(rng.uniform_int(-1, 1));
                Span j{std::max(0, s.start + ds), std::min(t, s.end + de)};
                if (j.end <= j.start) j = s;
                ann.spans.push_back(j);
            }
            ann.spans = normalize_spans(ann.spans);
            // Keep every annotator under the 20% ratio filter.
            const int cap = std::max(1, static_cast<int>(0.19 * t));
            while (covered_frames(ann) > cap && ann.spans.back().end - ann.spans.back().start > 1)
                --ann.spans.back().end;
            rec.refs.video_refs.push_back(std::move(ann));
        }
        records.push_back(std::move(rec));
    }
    return records;
}

void write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticConfig& cfg) {
    std::filesystem::create_directories(dir);
    std::vector<CorpusRecord> records = make_synthetic_corpus(cfg);
    // Assign splits 80/10/10 round-robin for usable defaults.
    for (size_t i = 0; i < records.size(); ++i)
        records[i].video.split = (i % 10 == 8) ? "val" : (i % 10 == 9) ? "test" : "train";
    write_corpus_jsonl(dir / "annotations.jsonl", records);
    std::vector<std::pair<std::string, Eigen::MatrixXd>> feats;
    for (const auto& rec : records)
        feats.emplace_back(rec.video.video_id, *rec.video.features);
    write_feature_store(dir / "features", feats);
}

}  // namespace xsum
