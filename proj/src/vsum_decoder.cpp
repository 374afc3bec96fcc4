#include "xsum/vsum_decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace xsum {

Eigen::MatrixXd build_local_mask(int t, int eps) {
    if (t < 1) throw std::invalid_argument("build_local_mask: T must be >= 1");
    if (eps < 1 || eps % 2 == 0)
        throw std::invalid_argument("build_local_mask: window must be odd and >= 1");
    const int half = (eps - 1) / 2;
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(t, t);
    for (int i = 0; i < t; ++i)
        for (int j = std::max(0, i - half); j <= std::min(t - 1, i + half); ++j)
            m(i, j) = 1.0;
    return m;
}

int summary_budget(int t, double budget_ratio) {
    if (t < 1) throw std::invalid_argument("summary_budget: T must be >= 1");
    return std::max(1, static_cast<int>(std::floor(budget_ratio * t + 0.5)));
}

std::vector<int> select_topk(const Eigen::VectorXd& scores, double budget_ratio) {
    const int t = static_cast<int>(scores.size());
    const int budget = summary_budget(t, budget_ratio);
    std::vector<int> order(static_cast<size_t>(t));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores(a) > scores(b); });
    std::vector<int> keep(order.begin(), order.begin() + budget);
    std::sort(keep.begin(), keep.end());
    return keep;
}

double vsum_loss(const Eigen::VectorXd& p, const std::vector<int>& labels,
                 const std::vector<int>& mask) {
    const size_t t = static_cast<size_t>(p.size());
    if (labels.size() != t)
        throw std::invalid_argument("vsum_loss: length mismatch");
    if (!mask.empty() && mask.size() != t)
        throw std::invalid_argument("vsum_loss: mask length mismatch");
    constexpr double eps_c = 1e-7;
    double acc = 0.0;
    long n = 0;
    for (size_t i = 0; i < t; ++i) {
        if (!mask.empty() && mask[i] == 0) continue;
        double pi = std::clamp(p(static_cast<Eigen::Index>(i)), eps_c, 1.0 - eps_c);
        double yi = static_cast<double>(labels[i]);
        acc -= yi * std::log(pi) + (1.0 - yi) * std::log(1.0 - pi);
        ++n;
    }
    if (n == 0) throw std::invalid_argument("vsum_loss: all frames masked");
    return acc / static_cast<double>(n);
}

VsumDecoder::VsumDecoder(const VsumConfig& cfg) : cfg_(cfg) {
    Rng rng(cfg.seed);
    q_ = nn::Linear::create(params_, "ca.q", cfg.d_vis, cfg.d_vis, rng);
    k_ = nn::Linear::create(params_, "ca.k", cfg.d_vis, cfg.d_vis, rng);
    v_ = nn::Linear::create(params_, "ca.v", cfg.d_vis, cfg.d_vis, rng);
    classifier_ = nn::Linear::create(params_, "classifier", cfg.d_vis, 1, rng);
}

ad::Var VsumDecoder::context_aggregate(const ad::Var& z) const {
    if (z->value.cols() != cfg_.d_vis)
        throw std::invalid_argument("context_aggregate: feature dimension mismatch");
    const int t = static_cast<int>(z->value.rows());
    Eigen::MatrixXd band = build_local_mask(t, cfg_.window);
    ad::Var q = nn::linear(z, q_);
    ad::Var k = nn::linear(z, k_);
    ad::Var v = nn::linear(z, v_);
    ad::Var scores =
        ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(double(cfg_.d_vis)));
    ad::Var weights;
    if (cfg_.presoftmax_mask) {
        Eigen::MatrixXd additive =
            ((1.0 - band.array()) * nn::kMaskedLogit).matrix();
        weights = ad::softmax_rows(ad::add_const(scores, additive));
    } else {
        // Softmax over the full row first, then the binary map; rows are not
        // renormalized afterwards.
        weights = ad::cmul_const(ad::softmax_rows(scores), band);
    }
    return ad::matmul(weights, v);
}

ad::Var VsumDecoder::score_frames(const ad::Var& a_loc) const {
    return ad::sigmoid(nn::linear(a_loc, classifier_));
}

ad::Var VsumDecoder::loss(const ad::Var& p, const std::vector<int>& labels,
                          const std::vector<int>& mask) const {
    std::vector<double> targets(labels.begin(), labels.end());
    std::vector<double> weights(labels.size(), 1.0);
    if (!mask.empty()) {
        if (mask.size() != labels.size())
            throw std::invalid_argument("vsum loss: mask length mismatch");
        for (size_t i = 0; i < mask.size(); ++i)
            weights[i] = mask[i] != 0 ? 1.0 : 0.0;
    }
    return ad::bce_from_probs(p, targets, weights);
}

}  // namespace xsum
