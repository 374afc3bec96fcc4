#pragma once

#include "xsum/dataset.hpp"

#include <filesystem>

namespace xsum {

// Synthetic corpora with planted structure: each video carries a few concept
// spans whose frames point at a concept prototype vector, the ten annotator
// references jitter the true spans, and the text summary names the concepts
// in temporal order. Both decoders can learn the planted signal.
struct SyntheticConfig {
    int n_videos = 32;
    int t_min = 24;
    int t_max = 48;
    int d_vis = 16;
    int n_concepts = 8;
    int concepts_per_video = 2;
    double noise = 0.1;
    std::uint64_t seed = 0;
};

std::vector<CorpusRecord> make_synthetic_corpus(const SyntheticConfig& cfg);

// Write annotations.jsonl plus a feature store under dir.
void write_synthetic_corpus(const std::filesystem::path& dir,
                            const SyntheticConfig& cfg);

}  // namespace xsum
