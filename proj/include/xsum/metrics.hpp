#pragma once

#include "xsum/dataset.hpp"
#include "xsum/layers.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace xsum::metrics {

struct F1Pair {
    double avg = 0.0;
    double max = 0.0;
};

// Frame-level F1 between binary keep vectors. Both empty -> 1, one empty -> 0.
double f1_frames(const std::vector<int>& pred, const std::vector<int>& ref);

F1Pair f1_multi(const std::vector<int>& pred, const std::vector<std::vector<int>>& refs);

struct RankCorr {
    double kendall_tau = 0.0;
    double spearman_rho = 0.0;
    // References where either side was constant; scored as 0.
    int degenerate = 0;
};

// Tie-corrected Kendall tau-b and Spearman rho (average ranks for ties)
// between scores and each binary reference, averaged over references.
RankCorr rank_correlations(const Eigen::VectorXd& scores,
                           const std::vector<std::vector<int>>& refs);

double kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y);
double spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

// Score each annotator against the remaining ones; average of per-annotator
// f1_multi means and maxes.
F1Pair leave_one_out(const std::vector<std::vector<int>>& refs);

// Single-reference BLEU@4 with brevity penalty. Zero higher-order matches
// are add-one smoothed; unigram precision is left unsmoothed.
double bleu4(const std::vector<std::string>& candidate,
             const std::vector<std::string>& reference);

// LCS F-measure, beta = 1.2 (set beta <= 0 for pure recall).
double rouge_l(const std::vector<std::string>& candidate,
               const std::vector<std::string>& reference, double beta = 1.2);

// Corpus-level CIDEr: TF-IDF n-gram cosine (n = 1..4) with a sigma = 6
// length gaussian, averaged over n and scaled by 10.
class CiderScorer {
public:
    // One reference per video; IDF comes from the reference corpus.
    explicit CiderScorer(const std::vector<std::vector<std::string>>& references);

    double score(const std::vector<std::string>& candidate,
                 const std::vector<std::string>& reference) const;

private:
    struct Impl;
    std::shared_ptr<const Impl> impl_;
};

struct DualEncoderConfig {
    int d_vis = 32;
    int d_txt = 32;  // text token embedding width
    int d_emb = 32;
    int hidden = 64;
    std::uint64_t seed = 0;
    int vocab_size = 0;
};

// CLIP-style dual encoder: frame and text towers projecting into a shared
// space, L2-normalized, with a learnable temperature.
class DualEncoder {
public:
    explicit DualEncoder(const DualEncoderConfig& cfg);

    // One embedding row per frame.
    ad::Var embed_frames(const ad::Var& frames) const;
    // One embedding row for a token sequence (mean-pooled token plus
    // position embeddings, so word order matters).
    ad::Var embed_text(const std::vector<int>& token_ids) const;

    ad::Var logit_scale() const;

    const DualEncoderConfig& config() const { return cfg_; }
    ad::ParamStore& params() { return params_; }
    const ad::ParamStore& params() const { return params_; }

private:
    DualEncoderConfig cfg_;
    ad::ParamStore params_;
    nn::Linear v1_, v2_;
    ad::Var token_table_;
    ad::Var pos_table_;
    nn::Linear t1_, t2_;
    ad::Var log_temp_;
};

// Mean cosine between each selected frame's embedding and the text
// embedding, in [-1, 1].
double vt_clipscore(const Eigen::MatrixXd& selected_frames,
                    const std::vector<int>& text_tokens, const DualEncoder& dual);

struct ContrastiveConfig {
    double lr = 1e-2;
    int steps = 200;
    int batch_size = 8;
    std::uint64_t seed = 0;
};

struct ContrastivePair {
    Eigen::MatrixXd frames;       // summary frames x d_vis
    std::vector<int> text_tokens;
};

// Symmetric in-batch contrastive finetuning. Returns final mean loss.
double finetune_dual_encoder(DualEncoder& dual, const std::vector<ContrastivePair>& pairs,
                             const ContrastiveConfig& cfg);

// One symmetric InfoNCE loss over a batch (exposed for tests).
ad::Var contrastive_loss(const DualEncoder& dual,
                         const std::vector<ContrastivePair>& batch);

// Binary container: magic "XSUMDE01", u64 JSON header length, JSON header
// (config + block table), raw float64 blocks.
void save_dual_encoder(const std::filesystem::path& path, const DualEncoder& dual);
DualEncoder load_dual_encoder(const std::filesystem::path& path);

struct EvalReport {
    double f1_avg = 0.0, f1_max = 0.0;       // percent
    double kendall_tau = 0.0, spearman_rho = 0.0;
    double bleu4 = 0.0, rouge_l = 0.0, cider = 0.0;  // percent
    std::optional<double> vt_clipscore;      // percent
    int degenerate_rank_cases = 0;
    struct PerVideo {
        std::string video_id;
        double f1_avg = 0.0, f1_max = 0.0, tau = 0.0, rho = 0.0;
        double bleu4 = 0.0, rouge_l = 0.0, cider = 0.0;
    };
    std::vector<PerVideo> per_video;
};

}  // namespace xsum::metrics
