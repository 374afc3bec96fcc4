#pragma once

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace xsum {

inline constexpr int kNumAnnotators = 10;
inline constexpr double kRatioThreshold = 0.20;
inline constexpr int kMaxVideoLen = 512;
inline constexpr int kMinVideoSeconds = 10;

// Half-open frame interval [start, end) at 1 fps.
struct Span {
    int start = 0;
    int end = 0;
    bool operator==(const Span&) const = default;
};

struct SpanAnnotation {
    std::vector<Span> spans;
    int annotator_id = 0;
};

struct ReferenceSet {
    std::string video_id;
    std::vector<SpanAnnotation> video_refs;  // exactly kNumAnnotators entries
    std::string text_summary;
};

struct VideoRecord {
    std::string video_id;
    double duration_sec = 0.0;
    int frame_count = 0;  // T, frames at 1 fps
    std::string split;    // train / val / test
    // Either precomputed T x d_vis features or raw per-frame vectors.
    std::optional<Eigen::MatrixXd> features;
    std::vector<Eigen::VectorXd> raw_frames;
};

struct CorpusRecord {
    VideoRecord video;
    ReferenceSet refs;
};

struct Histogram {
    std::vector<double> bin_edges;  // n+1 edges
    std::vector<long> counts;      // n bins
    double mean = 0.0;
    double median = 0.0;
};

struct CorpusStats {
    Histogram video_length;
    Histogram ratio;
    Histogram text_length;
    Histogram span_center;  // normalized span centers in [0,1]
    long num_records = 0;
};

struct LoadOptions {
    // Overlapping spans are merged with a warning by default; with
    // strict_spans they fail validation instead.
    bool strict_spans = false;
    // Optional feature store directory; when unset, records carry no features.
    std::optional<std::filesystem::path> feature_dir;
};

struct LoadReport {
    std::vector<CorpusRecord> records;
    std::vector<std::string> errors;    // per-record validation failures
    std::vector<std::string> warnings;  // e.g. merged overlapping spans
};

// Sort spans and merge overlapping/adjacent-overlapping ones.
std::vector<Span> normalize_spans(std::vector<Span> spans);

// Maximal runs of 1s back to spans.
std::vector<Span> labels_to_spans(const std::vector<int>& labels);

std::vector<int> spans_to_labels(const SpanAnnotation& ann, int t);

double compression_ratio(int summary_frames, int video_frames);

int covered_frames(const SpanAnnotation& ann);

// Load JSON-lines annotations. `path` is either the annotation file itself or
// a directory containing annotations.jsonl (and optionally features/).
LoadReport load_corpus(const std::filesystem::path& path, const LoadOptions& opts = {});

std::vector<CorpusRecord> filter_by_ratio(const std::vector<CorpusRecord>& records,
                                          double threshold = kRatioThreshold);

struct SplitSizes {
    std::size_t train = 0, val = 0, test = 0;
};

struct SplitResult {
    std::vector<CorpusRecord> train, val, test;
};

// Stratified by video-length decile bucket, deterministic given seed.
SplitResult split_corpus(const std::vector<CorpusRecord>& records, SplitSizes sizes,
                         std::uint64_t seed = 0);

CorpusStats compute_stats(const std::vector<CorpusRecord>& records);

struct PaddedBatch {
    // One entry per video: features truncated to max_len, then padded with
    // zero rows to the common width.
    std::vector<Eigen::MatrixXd> features;        // each width x d_vis
    std::vector<std::vector<int>> mask;           // 1 = real frame, 0 = pad
    int width = 0;
};

PaddedBatch pad_batch(const std::vector<const VideoRecord*>& batch, int max_len = kMaxVideoLen);

// Feature store: manifest.json {"version", "d_vis", "dtype": "f32",
// "videos": {id: frame_count}} plus one <id>.bin of row-major float32.
struct FeatureStore {
    int d_vis = 0;
    std::map<std::string, int> frame_counts;
    std::filesystem::path root;

    static FeatureStore open(const std::filesystem::path& dir);
    Eigen::MatrixXd load(const std::string& video_id) const;
};

void write_feature_store(const std::filesystem::path& dir,
                         const std::vector<std::pair<std::string, Eigen::MatrixXd>>& features);

void write_corpus_jsonl(const std::filesystem::path& file,
                        const std::vector<CorpusRecord>& records);

}  // namespace xsum
