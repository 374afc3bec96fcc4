#pragma once

#include "xsum/layers.hpp"

#include <vector>

namespace xsum {

inline constexpr double kDefaultBudgetRatio = 0.15;
inline constexpr int kDefaultWindow = 5;

// Band matrix M[i][j] = 1 iff |i-j| <= (eps-1)/2, clipped at the
// boundaries. eps must be odd.
Eigen::MatrixXd build_local_mask(int t, int eps);

// Summary budget: max(1, round(ratio * T)), round-half-up.
int summary_budget(int t, double budget_ratio = kDefaultBudgetRatio);

// Keep the budget highest-scoring frames; ties go to the earlier index.
std::vector<int> select_topk(const Eigen::VectorXd& scores,
                             double budget_ratio = kDefaultBudgetRatio);

// Averaged binary cross-entropy over unmasked frames, probabilities clamped
// to [1e-7, 1-1e-7]. mask may be empty (all frames counted).
double vsum_loss(const Eigen::VectorXd& p, const std::vector<int>& labels,
                 const std::vector<int>& mask = {});

struct VsumConfig {
    int d_vis = 32;
    int window = kDefaultWindow;
    // Eq-literal masking multiplies the binary map into softmaxed weights
    // without renormalizing; the pre-softmax additive variant is an ablation.
    bool presoftmax_mask = false;
    std::uint64_t seed = 0;
};

// Context Aggregation over temporally aware features plus a per-frame linear
// classifier.
class VsumDecoder {
public:
    explicit VsumDecoder(const VsumConfig& cfg);

    // A_loc = (softmax(QK^T/sqrt(d)) .* M) V
    ad::Var context_aggregate(const ad::Var& z) const;

    // p_i = sigmoid(w . A_loc[i] + b), shape T x 1.
    ad::Var score_frames(const ad::Var& a_loc) const;

    ad::Var forward(const ad::Var& z) const { return score_frames(context_aggregate(z)); }

    // Training loss as an autodiff node.
    ad::Var loss(const ad::Var& p, const std::vector<int>& labels,
                 const std::vector<int>& mask = {}) const;

    const VsumConfig& config() const { return cfg_; }
    ad::ParamStore& params() { return params_; }
    const ad::ParamStore& params() const { return params_; }

private:
    VsumConfig cfg_;
    ad::ParamStore params_;
    nn::Linear q_, k_, v_;
    nn::Linear classifier_;  // d_vis -> 1
};

}  // namespace xsum
