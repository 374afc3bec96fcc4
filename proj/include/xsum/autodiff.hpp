#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace xsum::ad {

using Mat = Eigen::MatrixXd;

// Reverse-mode tape node. Values are dense 2-D matrices; scalars are 1x1.
struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    void ensure_grad() {
        if (grad.rows() != value.rows() || grad.cols() != value.cols())
            grad = Mat::Zero(value.rows(), value.cols());
    }
};

using Var = std::shared_ptr<Node>;

Var constant(Mat v);
Var param(Mat v);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var cmul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// y = s(0,0) * a, with gradient into both operands.
Var scale_var(const Var& a, const Var& s);
Var add_const(const Var& a, const Mat& c);
Var cmul_const(const Var& a, const Mat& c);
// Broadcast a 1 x n row (bias) over every row of a.
Var add_rowvec(const Var& a, const Var& bias);
Var softmax_rows(const Var& a);
Var layernorm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var exp_(const Var& a);
// Gather rows of a table (embedding lookup).
Var rows(const Var& table, const std::vector<int>& idx);
Var slice_cols(const Var& a, int start, int n);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var sum_all(const Var& a);
Var mean_rows(const Var& a);
// Row-wise L2 normalization.
Var normalize_rows(const Var& a, double eps = 1e-12);

// Mean binary cross-entropy over positions with weight[i] != 0.
// Probabilities are clamped to [clamp, 1-clamp]; gradient is zero in the
// clamped region.
Var bce_from_probs(const Var& p, const std::vector<double>& targets,
                   const std::vector<double>& weights, double clamp = 1e-7);

// Sum over rows of weight[i] * (logsumexp(logits[i]) - logits[i][target[i]]).
Var cross_entropy_sum(const Var& logits, const std::vector<int>& targets,
                      const std::vector<double>& weights);

// Backpropagate from a 1x1 root. Accumulates into .grad of every
// requires_grad node reachable from the root.
void backward(const Var& root);

// Named trainable parameters of a model.
struct ParamStore {
    std::vector<std::pair<std::string, Var>> items;

    Var create(const std::string& name, const Mat& init);
    Var* find(const std::string& name);
    void zero_grad();
};

}  // namespace xsum::ad
