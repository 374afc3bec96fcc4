#include "xsum/dataset.hpp"

#include "xsum/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace xsum {

using nlohmann::json;

std::vector<Span> normalize_spans(std::vector<Span> spans) {
    std::sort(spans.begin(), spans.end(),
              [](const Span& a, const Span& b) { return a.start < b.start; });
    std::vector<Span> out;
    for (const Span& s : spans) {
        if (!out.empty() && s.start <= out.back().end) {
            out.back().end = std::max(out.back().end, s.end);
        } else {
            out.push_back(s);
        }
    }
    return out;
}

std::vector<Span> labels_to_spans(const std::vector<int>& labels) {
    std::vector<Span> spans;
    int start = -1;
    for (int i = 0; i <= static_cast<int>(labels.size()); ++i) {
        bool on = i < static_cast<int>(labels.size()) && labels[static_cast<size_t>(i)] != 0;
        if (on && start < 0) start = i;
        if (!on && start >= 0) {
            spans.push_back({start, i});
            start = -1;
        }
    }
    return spans;
}

std::vector<int> spans_to_labels(const SpanAnnotation& ann, int t) {
    std::vector<int> labels(static_cast<size_t>(t), 0);
    for (const Span& s : ann.spans) {
        if (s.start < 0 || s.end > t || s.start >= s.end)
            throw std::out_of_range("spans_to_labels: span [" + std::to_string(s.start) +
                                    "," + std::to_string(s.end) + ") invalid for T=" +
                                    std::to_string(t));
        for (int i = s.start; i < s.end; ++i) labels[static_cast<size_t>(i)] = 1;
    }
    return labels;
}

double compression_ratio(int summary_frames, int video_frames) {
    if (video_frames <= 0)
        throw std::domain_error("compression_ratio: video_frames must be positive");
    if (summary_frames < 0 || summary_frames > video_frames)
        throw std::domain_error("compression_ratio: summary_frames out of range");
    return static_cast<double>(summary_frames) / static_cast<double>(video_frames);
}

int covered_frames(const SpanAnnotation& ann) {
    int total = 0;
    for (const Span& s : normalize_spans(ann.spans)) total += s.end - s.start;
    return total;
}

namespace {

std::string validate_and_fix(CorpusRecord& rec, bool strict_spans,
                             std::vector<std::string>& warnings) {
    const std::string& id = rec.video.video_id;
    const int t = rec.video.frame_count;
    if (id.empty()) return "record has empty video_id";
    if (rec.video.duration_sec <= 0.0) return id + ": duration_sec must be positive";
    if (t < kMinVideoSeconds)
        return id + ": frame_count " + std::to_string(t) + " below minimum of 10";
    if (t > 755) return id + ": frame_count " + std::to_string(t) + " exceeds corpus maximum 755";
    if (rec.video.split != "train" && rec.video.split != "val" && rec.video.split != "test")
        return id + ": split must be one of train/val/test";
    if (rec.refs.text_summary.empty()) return id + ": text_summary must be non-empty";
    if (static_cast<int>(rec.refs.video_refs.size()) != kNumAnnotators)
        return id + ": video_refs must have 10 entries";
    const int budget_cap = static_cast<int>(std::ceil(kRatioThreshold * t));
    for (auto& ann : rec.refs.video_refs) {
        for (const Span& s : ann.spans) {
            if (s.start < 0 || s.start >= s.end || s.end > t)
                return id + ": annotator " + std::to_string(ann.annotator_id) +
                       " span [" + std::to_string(s.start) + "," + std::to_string(s.end) +
                       ") invalid for T=" + std::to_string(t);
        }
        std::vector<Span> merged = normalize_spans(ann.spans);
        if (merged.size() != ann.spans.size()) {
            if (strict_spans)
                return id + ": annotator " + std::to_string(ann.annotator_id) +
                       " has overlapping spans";
            warnings.push_back(id + ": annotator " + std::to_string(ann.annotator_id) +
                               " spans overlapped; merged to " +
                               std::to_string(merged.size()) + " spans");
        }
        ann.spans = std::move(merged);
        // Over-budget annotations are legal input; filter_by_ratio drops them.
        if (covered_frames(ann) > budget_cap)
            warnings.push_back(id + ": annotator " + std::to_string(ann.annotator_id) +
                               " covers more than 20% of the video");
    }
    if (rec.video.features) {
        if (rec.video.features->rows() != t)
            return id + ": feature frame count " + std::to_string(rec.video.features->rows()) +
                   " != frame_count " + std::to_string(t);
    }
    return {};
}

Histogram make_histogram(std::vector<double> values, double lo, double hi, int bins) {
    Histogram h;
    h.bin_edges.resize(static_cast<size_t>(bins) + 1);
    for (int i = 0; i <= bins; ++i)
        h.bin_edges[static_cast<size_t>(i)] = lo + (hi - lo) * i / bins;
    h.counts.assign(static_cast<size_t>(bins), 0);
    for (double v : values) {
        int b = static_cast<int>((v - lo) / (hi - lo) * bins);
        b = std::clamp(b, 0, bins - 1);
        h.counts[static_cast<size_t>(b)]++;
    }
    if (!values.empty()) {
        h.mean = std::accumulate(values.begin(), values.end(), 0.0) /
                 static_cast<double>(values.size());
        std::sort(values.begin(), values.end());
        size_t n = values.size();
        h.median = (n % 2 == 1) ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    }
    return h;
}

size_t count_words(const std::string& text) {
    std::istringstream iss(text);
    std::string w;
    size_t n = 0;
    while (iss >> w) ++n;
    return n;
}

}  // namespace

LoadReport load_corpus(const std::filesystem::path& path, const LoadOptions& opts) {
    namespace fs = std::filesystem;
    fs::path ann_file = path;
    std::optional<fs::path> feature_dir = opts.feature_dir;
    if (fs::is_directory(path)) {
        ann_file = path / "annotations.jsonl";
        if (!feature_dir && fs::exists(path / "features" / "manifest.json"))
            feature_dir = path / "features";
    }
    std::ifstream in(ann_file);
    if (!in) throw std::runtime_error("load_corpus: cannot open " + ann_file.string());

    std::optional<FeatureStore> store;
    if (feature_dir) store = FeatureStore::open(*feature_dir);

    LoadReport report;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        CorpusRecord rec;
        try {
            json j = json::parse(line);
            rec.video.video_id = j.at("video_id").get<std::string>();
            rec.video.duration_sec = j.at("duration_sec").get<double>();
            rec.video.split = j.at("split").get<std::string>();
            rec.video.frame_count =
                j.contains("frame_count")
                    ? j.at("frame_count").get<int>()
                    : static_cast<int>(std::llround(rec.video.duration_sec));
            rec.refs.video_id = rec.video.video_id;
            rec.refs.text_summary = j.at("tsum").get<std::string>();
            int aid = 0;
            for (const auto& ref : j.at("vsum_onehot")) {
                SpanAnnotation ann;
                ann.annotator_id = aid++;
                for (const auto& pair : ref) {
                    if (!pair.is_array() || pair.size() != 2)
                        throw std::runtime_error("span must be [start,end]");
                    ann.spans.push_back({pair[0].get<int>(), pair[1].get<int>()});
                }
                rec.refs.video_refs.push_back(std::move(ann));
            }
        } catch (const std::exception& e) {
            report.errors.push_back("line " + std::to_string(lineno) +
                                    ": malformed record: " + e.what());
            continue;
        }
        if (store && store->frame_counts.count(rec.video.video_id))
            rec.video.features = store->load(rec.video.video_id);
        std::string err = validate_and_fix(rec, opts.strict_spans, report.warnings);
        if (!err.empty()) {
            report.errors.push_back(err);
            continue;
        }
        report.records.push_back(std::move(rec));
    }
    return report;
}

std::vector<CorpusRecord> filter_by_ratio(const std::vector<CorpusRecord>& records,
                                          double threshold) {
    std::vector<CorpusRecord> kept;
    for (const auto& rec : records) {
        if (rec.refs.video_refs.empty())
            throw std::invalid_argument("filter_by_ratio: record " + rec.video.video_id +
                                        " has no references");
        double worst = 0.0;
        for (const auto& ann : rec.refs.video_refs)
            worst = std::max(worst,
                             compression_ratio(covered_frames(ann), rec.video.frame_count));
        if (worst <= threshold) kept.push_back(rec);
    }
    return kept;
}

SplitResult split_corpus(const std::vector<CorpusRecord>& records, SplitSizes sizes,
                         std::uint64_t seed) {
    const size_t n = records.size();
    if (sizes.train + sizes.val + sizes.test != n)
        throw std::invalid_argument("split_corpus: sizes must sum to record count");

    // Decile buckets on video length.
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return records[a].video.frame_count < records[b].video.frame_count ||
               (records[a].video.frame_count == records[b].video.frame_count &&
                records[a].video.video_id < records[b].video.video_id);
    });

    Rng rng(seed);
    SplitResult out;
    // Round-robin targets inside each decile so every bucket contributes to
    // all three splits in proportion.
    double want_train = static_cast<double>(sizes.train) / static_cast<double>(n);
    double want_val = static_cast<double>(sizes.val) / static_cast<double>(n);
    size_t n_train = 0, n_val = 0, n_test = 0;
    const size_t buckets = 10;
    for (size_t b = 0; b < buckets; ++b) {
        size_t lo = n * b / buckets, hi = n * (b + 1) / buckets;
        std::vector<size_t> bucket(order.begin() + static_cast<long>(lo),
                                   order.begin() + static_cast<long>(hi));
        rng.shuffle(bucket);
        for (size_t idx : bucket) {
            // Assign to the split currently furthest below its quota.
            double d_train = sizes.train ? want_train - static_cast<double>(n_train) /
                                                            static_cast<double>(n)
                                         : -1.0;
            double d_val = sizes.val ? want_val - static_cast<double>(n_val) /
                                                      static_cast<double>(n)
                                     : -1.0;
            if (n_train >= sizes.train) d_train = -1.0;
            if (n_val >= sizes.val) d_val = -1.0;
            bool test_open = n_test < sizes.test;
            double d_test = test_open
                                ? (1.0 - want_train - want_val) -
                                      static_cast<double>(n_test) / static_cast<double>(n)
                                : -1.0;
            if (d_train >= d_val && d_train >= d_test && n_train < sizes.train) {
                out.train.push_back(records[idx]);
                ++n_train;
            } else if (d_val >= d_test && n_val < sizes.val) {
                out.val.push_back(records[idx]);
                ++n_val;
            } else if (test_open) {
                out.test.push_back(records[idx]);
                ++n_test;
            } else if (n_train < sizes.train) {
                out.train.push_back(records[idx]);
                ++n_train;
            } else {
                out.val.push_back(records[idx]);
                ++n_val;
            }
        }
    }
    return out;
}

CorpusStats compute_stats(const std::vector<CorpusRecord>& records) {
    if (records.empty()) throw std::invalid_argument("compute_stats: empty corpus");
    std::vector<double> lengths, ratios, text_lengths, centers;
    for (const auto& rec : records) {
        lengths.push_back(rec.video.duration_sec);
        text_lengths.push_back(static_cast<double>(count_words(rec.refs.text_summary)));
        for (const auto& ann : rec.refs.video_refs) {
            ratios.push_back(compression_ratio(covered_frames(ann), rec.video.frame_count));
            for (const Span& s : ann.spans)
                centers.push_back(0.5 * (s.start + s.end) /
                                  static_cast<double>(rec.video.frame_count));
        }
    }
    CorpusStats stats;
    stats.num_records = static_cast<long>(records.size());
    double max_len = *std::max_element(lengths.begin(), lengths.end());
    double max_text = *std::max_element(text_lengths.begin(), text_lengths.end());
    stats.video_length = make_histogram(lengths, 0.0, std::max(max_len, 1.0), 30);
    stats.ratio = make_histogram(ratios, 0.0, 0.25, 25);
    stats.text_length = make_histogram(text_lengths, 0.0, std::max(max_text, 1.0), 30);
    stats.span_center = make_histogram(centers, 0.0, 1.0, 20);
    return stats;
}

PaddedBatch pad_batch(const std::vector<const VideoRecord*>& batch, int max_len) {
    if (batch.empty()) throw std::invalid_argument("pad_batch: empty batch");
    PaddedBatch out;
    int width = 0;
    for (const VideoRecord* rec : batch) {
        if (!rec->features)
            throw std::invalid_argument("pad_batch: record " + rec->video_id +
                                        " has no features");
        width = std::max(width, std::min(rec->frame_count, max_len));
    }
    out.width = width;
    for (const VideoRecord* rec : batch) {
        int t = std::min(rec->frame_count, max_len);
        Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(width, rec->features->cols());
        padded.topRows(t) = rec->features->topRows(t);
        std::vector<int> mask(static_cast<size_t>(width), 0);
        for (int i = 0; i < t; ++i) mask[static_cast<size_t>(i)] = 1;
        out.features.push_back(std::move(padded));
        out.mask.push_back(std::move(mask));
    }
    return out;
}

FeatureStore FeatureStore::open(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in)
        throw std::runtime_error("FeatureStore: missing manifest in " + dir.string());
    json j = json::parse(in);
    FeatureStore store;
    store.root = dir;
    store.d_vis = j.at("d_vis").get<int>();
    for (const auto& [id, count] : j.at("videos").items())
        store.frame_counts[id] = count.get<int>();
    return store;
}

Eigen::MatrixXd FeatureStore::load(const std::string& video_id) const {
    auto it = frame_counts.find(video_id);
    if (it == frame_counts.end())
        throw std::runtime_error("FeatureStore: unknown video " + video_id);
    const int t = it->second;
    std::ifstream in(root / (video_id + ".bin"), std::ios::binary);
    if (!in)
        throw std::runtime_error("FeatureStore: missing feature file for " + video_id);
    std::vector<float> buf(static_cast<size_t>(t) * static_cast<size_t>(d_vis));
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in)
        throw std::runtime_error("FeatureStore: truncated feature file for " + video_id);
    Eigen::MatrixXd m(t, d_vis);
    for (int i = 0; i < t; ++i)
        for (int d = 0; d < d_vis; ++d)
            m(i, d) = static_cast<double>(buf[static_cast<size_t>(i) * d_vis + d]);
    return m;
}

void write_feature_store(const std::filesystem::path& dir,
                         const std::vector<std::pair<std::string, Eigen::MatrixXd>>& features) {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["version"] = 1;
    manifest["dtype"] = "f32";
    manifest["d_vis"] = features.empty() ? 0 : static_cast<int>(features[0].second.cols());
    json videos = json::object();
    for (const auto& [id, m] : features) {
        videos[id] = static_cast<int>(m.rows());
        std::ofstream out(dir / (id + ".bin"), std::ios::binary);
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index d = 0; d < m.cols(); ++d) {
                float v = static_cast<float>(m(i, d));
                out.write(reinterpret_cast<const char*>(&v), sizeof(float));
            }
    }
    manifest["videos"] = videos;
    std::ofstream mout(dir / "manifest.json");
    mout << manifest.dump(2) << "\n";
}

void write_corpus_jsonl(const std::filesystem::path& file,
                        const std::vector<CorpusRecord>& records) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("write_corpus_jsonl: cannot open " + file.string());
    for (const auto& rec : records) {
        json j;
        j["video_id"] = rec.video.video_id;
        j["duration_sec"] = rec.video.duration_sec;
        j["frame_count"] = rec.video.frame_count;
        j["split"] = rec.video.split;
        j["tsum"] = rec.refs.text_summary;
        json refs = json::array();
        for (const auto& ann : rec.refs.video_refs) {
            json spans = json::array();
            for (const Span& s : ann.spans) spans.push_back({s.start, s.end});
            refs.push_back(spans);
        }
        j["vsum_onehot"] = refs;
        out << j.dump() << "\n";
    }
}

}  // namespace xsum
