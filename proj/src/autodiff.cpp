#include "xsum/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace xsum::ad {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

Var make_node(Mat value, std::vector<Var> parents,
              std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->id = g_next_id.fetch_add(1);
    bool any_grad = false;
    for (const auto& p : parents) any_grad = any_grad || p->requires_grad;
    n->requires_grad = any_grad;
    if (any_grad) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

Var constant(Mat v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->id = g_next_id.fetch_add(1);
    return n;
}

Var param(Mat v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->id = g_next_id.fetch_add(1);
    n->requires_grad = true;
    n->ensure_grad();
    return n;
}

Var matmul(const Var& a, const Var& b) {
    if (a->value.cols() != b->value.rows())
        throw std::invalid_argument("matmul: inner dimension mismatch");
    return make_node(a->value * b->value, {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad.noalias() += n.grad * b->value.transpose();
        }
        if (b->requires_grad) {
            b->ensure_grad();
            b->grad.noalias() += a->value.transpose() * n.grad;
        }
    });
}

Var transpose(const Var& a) {
    return make_node(a->value.transpose(), {a}, [a](Node& n) {
        a->ensure_grad();
        a->grad += n.grad.transpose();
    });
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    return make_node(a->value + b->value, {a, b}, [a, b](Node& n) {
        if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad; }
        if (b->requires_grad) { b->ensure_grad(); b->grad += n.grad; }
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    return make_node(a->value - b->value, {a, b}, [a, b](Node& n) {
        if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad; }
        if (b->requires_grad) { b->ensure_grad(); b->grad -= n.grad; }
    });
}

Var cmul(const Var& a, const Var& b) {
    check_same_shape(a, b, "cmul");
    return make_node(a->value.cwiseProduct(b->value), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad += n.grad.cwiseProduct(b->value);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            b->grad += n.grad.cwiseProduct(a->value);
        }
    });
}

Var scale(const Var& a, double s) {
    return make_node(a->value * s, {a}, [a, s](Node& n) {
        a->ensure_grad();
        a->grad += n.grad * s;
    });
}

Var scale_var(const Var& a, const Var& s) {
    if (s->value.size() != 1)
        throw std::invalid_argument("scale_var: scale must be 1x1");
    double sv = s->value(0, 0);
    return make_node(a->value * sv, {a, s}, [a, s, sv](Node& n) {
        if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad * sv; }
        if (s->requires_grad) {
            s->ensure_grad();
            s->grad(0, 0) += n.grad.cwiseProduct(a->value).sum();
        }
    });
}

Var add_const(const Var& a, const Mat& c) {
    if (a->value.rows() != c.rows() || a->value.cols() != c.cols())
        throw std::invalid_argument("add_const: shape mismatch");
    return make_node(a->value + c, {a}, [a](Node& n) {
        a->ensure_grad();
        a->grad += n.grad;
    });
}

Var cmul_const(const Var& a, const Mat& c) {
    if (a->value.rows() != c.rows() || a->value.cols() != c.cols())
        throw std::invalid_argument("cmul_const: shape mismatch");
    Mat cc = c;
    return make_node(a->value.cwiseProduct(c), {a}, [a, cc](Node& n) {
        a->ensure_grad();
        a->grad += n.grad.cwiseProduct(cc);
    });
}

Var add_rowvec(const Var& a, const Var& bias) {
    if (bias->value.rows() != 1 || bias->value.cols() != a->value.cols())
        throw std::invalid_argument("add_rowvec: bias must be 1 x cols(a)");
    Mat out = a->value;
    out.rowwise() += bias->value.row(0);
    return make_node(std::move(out), {a, bias}, [a, bias](Node& n) {
        if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad; }
        if (bias->requires_grad) {
            bias->ensure_grad();
            bias->grad.row(0) += n.grad.colwise().sum();
        }
    });
}

Var softmax_rows(const Var& a) {
    Mat y(a->value.rows(), a->value.cols());
    for (Eigen::Index i = 0; i < a->value.rows(); ++i) {
        double m = a->value.row(i).maxCoeff();
        Eigen::RowVectorXd e = (a->value.row(i).array() - m).exp();
        y.row(i) = e / e.sum();
    }
    Mat yc = y;
    return make_node(std::move(y), {a}, [a, yc](Node& n) {
        a->ensure_grad();
        for (Eigen::Index i = 0; i < yc.rows(); ++i) {
            double dot = n.grad.row(i).cwiseProduct(yc.row(i)).sum();
            a->grad.row(i) +=
                yc.row(i).cwiseProduct((n.grad.row(i).array() - dot).matrix());
        }
    });
}

Var layernorm_rows(const Var& x, const Var& gain, const Var& bias, double eps) {
    const Eigen::Index rows = x->value.rows(), cols = x->value.cols();
    if (gain->value.rows() != 1 || gain->value.cols() != cols ||
        bias->value.rows() != 1 || bias->value.cols() != cols)
        throw std::invalid_argument("layernorm_rows: gain/bias must be 1 x cols");
    Mat xhat(rows, cols);
    Eigen::VectorXd inv_sigma(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        double mu = x->value.row(i).mean();
        Eigen::RowVectorXd c = x->value.row(i).array() - mu;
        double var = c.squaredNorm() / static_cast<double>(cols);
        double is = 1.0 / std::sqrt(var + eps);
        inv_sigma(i) = is;
        xhat.row(i) = c * is;
    }
    Mat out = xhat;
    for (Eigen::Index i = 0; i < rows; ++i)
        out.row(i) = out.row(i).cwiseProduct(gain->value.row(0)) + bias->value.row(0);
    Mat xhat_c = xhat;
    return make_node(std::move(out), {x, gain, bias},
                     [x, gain, bias, xhat_c, inv_sigma, cols](Node& n) {
        if (bias->requires_grad) {
            bias->ensure_grad();
            bias->grad.row(0) += n.grad.colwise().sum();
        }
        if (gain->requires_grad) {
            gain->ensure_grad();
            gain->grad.row(0) += n.grad.cwiseProduct(xhat_c).colwise().sum();
        }
        if (x->requires_grad) {
            x->ensure_grad();
            const double inv_n = 1.0 / static_cast<double>(cols);
            for (Eigen::Index i = 0; i < n.grad.rows(); ++i) {
                Eigen::RowVectorXd gg = n.grad.row(i).cwiseProduct(gain->value.row(0));
                double m1 = gg.sum() * inv_n;
                double m2 = gg.cwiseProduct(xhat_c.row(i)).sum() * inv_n;
                x->grad.row(i) += inv_sigma(i) *
                    (gg.array() - m1 - xhat_c.row(i).array() * m2).matrix();
            }
        }
    });
}

Var gelu(const Var& a) {
    const double inv_sqrt2 = 0.7071067811865475244;
    const double inv_sqrt2pi = 0.3989422804014326779;
    Mat out = a->value.unaryExpr([&](double v) {
        return v * 0.5 * (1.0 + std::erf(v * inv_sqrt2));
    });
    return make_node(std::move(out), {a}, [a, inv_sqrt2, inv_sqrt2pi](Node& n) {
        a->ensure_grad();
        Mat d = a->value.unaryExpr([&](double v) {
            double phi = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            return phi + v * pdf;
        });
        a->grad += n.grad.cwiseProduct(d);
    });
}

Var sigmoid(const Var& a) {
    Mat y = a->value.unaryExpr([](double v) {
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                      : std::exp(v) / (1.0 + std::exp(v));
    });
    Mat yc = y;
    return make_node(std::move(y), {a}, [a, yc](Node& n) {
        a->ensure_grad();
        a->grad += n.grad.cwiseProduct(
            yc.cwiseProduct((1.0 - yc.array()).matrix()));
    });
}

Var exp_(const Var& a) {
    Mat y = a->value.array().exp();
    Mat yc = y;
    return make_node(std::move(y), {a}, [a, yc](Node& n) {
        a->ensure_grad();
        a->grad += n.grad.cwiseProduct(yc);
    });
}

Var rows(const Var& table, const std::vector<int>& idx) {
    Mat out(static_cast<Eigen::Index>(idx.size()), table->value.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= table->value.rows())
            throw std::out_of_range("rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = table->value.row(idx[i]);
    }
    return make_node(std::move(out), {table}, [table, idx](Node& n) {
        table->ensure_grad();
        for (size_t i = 0; i < idx.size(); ++i)
            table->grad.row(idx[i]) += n.grad.row(static_cast<Eigen::Index>(i));
    });
}

Var slice_cols(const Var& a, int start, int n_cols) {
    if (start < 0 || n_cols <= 0 || start + n_cols > a->value.cols())
        throw std::out_of_range("slice_cols: range out of bounds");
    return make_node(a->value.middleCols(start, n_cols), {a},
                     [a, start, n_cols](Node& n) {
        a->ensure_grad();
        a->grad.middleCols(start, n_cols) += n.grad;
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    Eigen::Index r = parts[0]->value.rows(), total = 0;
    for (const auto& p : parts) {
        if (p->value.rows() != r)
            throw std::invalid_argument("concat_cols: row mismatch");
        total += p->value.cols();
    }
    Mat out(r, total);
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        out.middleCols(off, p->value.cols()) = p->value;
        off += p->value.cols();
    }
    std::vector<Var> parents = parts;
    return make_node(std::move(out), parents, [parents](Node& n) {
        Eigen::Index off = 0;
        for (const auto& p : parents) {
            if (p->requires_grad) {
                p->ensure_grad();
                p->grad += n.grad.middleCols(off, p->value.cols());
            }
            off += p->value.cols();
        }
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    Eigen::Index c = parts[0]->value.cols(), total = 0;
    for (const auto& p : parts) {
        if (p->value.cols() != c)
            throw std::invalid_argument("concat_rows: column mismatch");
        total += p->value.rows();
    }
    Mat out(total, c);
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        out.middleRows(off, p->value.rows()) = p->value;
        off += p->value.rows();
    }
    std::vector<Var> parents = parts;
    return make_node(std::move(out), parents, [parents](Node& n) {
        Eigen::Index off = 0;
        for (const auto& p : parents) {
            if (p->requires_grad) {
                p->ensure_grad();
                p->grad += n.grad.middleRows(off, p->value.rows());
            }
            off += p->value.rows();
        }
    });
}

Var sum_all(const Var& a) {
    Mat out(1, 1);
    out(0, 0) = a->value.sum();
    return make_node(std::move(out), {a}, [a](Node& n) {
        a->ensure_grad();
        a->grad.array() += n.grad(0, 0);
    });
}

Var mean_rows(const Var& a) {
    if (a->value.rows() == 0) throw std::invalid_argument("mean_rows: empty");
    Mat out = a->value.colwise().mean();
    const double inv_r = 1.0 / static_cast<double>(a->value.rows());
    return make_node(std::move(out), {a}, [a, inv_r](Node& n) {
        a->ensure_grad();
        for (Eigen::Index i = 0; i < a->grad.rows(); ++i)
            a->grad.row(i) += n.grad.row(0) * inv_r;
    });
}

Var normalize_rows(const Var& a, double eps) {
    const Eigen::Index rows_n = a->value.rows();
    Eigen::VectorXd norms(rows_n);
    Mat y(rows_n, a->value.cols());
    for (Eigen::Index i = 0; i < rows_n; ++i) {
        double nn = std::max(a->value.row(i).norm(), eps);
        norms(i) = nn;
        y.row(i) = a->value.row(i) / nn;
    }
    Mat yc = y;
    return make_node(std::move(y), {a}, [a, yc, norms](Node& n) {
        a->ensure_grad();
        for (Eigen::Index i = 0; i < yc.rows(); ++i) {
            double dot = n.grad.row(i).cwiseProduct(yc.row(i)).sum();
            a->grad.row(i) +=
                (n.grad.row(i) - yc.row(i) * dot) / norms(i);
        }
    });
}

Var bce_from_probs(const Var& p, const std::vector<double>& targets,
                   const std::vector<double>& weights, double clamp) {
    const Eigen::Index t = p->value.rows();
    if (p->value.cols() != 1) throw std::invalid_argument("bce_from_probs: p must be T x 1");
    if (static_cast<size_t>(t) != targets.size() || targets.size() != weights.size())
        throw std::invalid_argument("bce_from_probs: length mismatch");
    double wsum = 0.0;
    for (double w : weights) wsum += (w != 0.0) ? 1.0 : 0.0;
    if (wsum == 0.0) throw std::invalid_argument("bce_from_probs: all positions excluded");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < t; ++i) {
        if (weights[static_cast<size_t>(i)] == 0.0) continue;
        double pi = std::clamp(p->value(i, 0), clamp, 1.0 - clamp);
        double yi = targets[static_cast<size_t>(i)];
        acc -= yi * std::log(pi) + (1.0 - yi) * std::log(1.0 - pi);
    }
    Mat out(1, 1);
    out(0, 0) = acc / wsum;
    return make_node(std::move(out), {p}, [p, targets, weights, clamp, wsum](Node& n) {
        p->ensure_grad();
        const double g = n.grad(0, 0) / wsum;
        for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
            if (weights[static_cast<size_t>(i)] == 0.0) continue;
            double raw = p->value(i, 0);
            if (raw <= clamp || raw >= 1.0 - clamp) continue;  // clamped: flat
            double yi = targets[static_cast<size_t>(i)];
            p->grad(i, 0) += g * (raw - yi) / (raw * (1.0 - raw));
        }
    });
}

Var cross_entropy_sum(const Var& logits, const std::vector<int>& targets,
                      const std::vector<double>& weights) {
    const Eigen::Index rows_n = logits->value.rows();
    if (static_cast<size_t>(rows_n) != targets.size() || targets.size() != weights.size())
        throw std::invalid_argument("cross_entropy_sum: length mismatch");
    bool any = false;
    for (double w : weights) any = any || w != 0.0;
    if (!any) throw std::invalid_argument("cross_entropy_sum: all positions excluded");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < rows_n; ++i) {
        double w = weights[static_cast<size_t>(i)];
        if (w == 0.0) continue;
        int t = targets[static_cast<size_t>(i)];
        if (t < 0 || t >= logits->value.cols())
            throw std::out_of_range("cross_entropy_sum: target id out of range");
        double m = logits->value.row(i).maxCoeff();
        double lse = m + std::log((logits->value.row(i).array() - m).exp().sum());
        acc += w * (lse - logits->value(i, t));
    }
    Mat out(1, 1);
    out(0, 0) = acc;
    return make_node(std::move(out), {logits}, [logits, targets, weights](Node& n) {
        logits->ensure_grad();
        const double g = n.grad(0, 0);
        for (Eigen::Index i = 0; i < logits->value.rows(); ++i) {
            double w = weights[static_cast<size_t>(i)];
            if (w == 0.0) continue;
            double m = logits->value.row(i).maxCoeff();
            Eigen::RowVectorXd e = (logits->value.row(i).array() - m).exp();
            Eigen::RowVectorXd sm = e / e.sum();
            sm(targets[static_cast<size_t>(i)]) -= 1.0;
            logits->grad.row(i) += g * w * sm;
        }
    });
}

void backward(const Var& root) {
    if (root->value.size() != 1)
        throw std::invalid_argument("backward: root must be scalar");
    root->ensure_grad();
    root->grad(0, 0) = 1.0;

    std::vector<Var> order;
    std::unordered_set<Node*> seen;
    std::vector<Var> stack{root};
    while (!stack.empty()) {
        Var v = stack.back();
        stack.pop_back();
        if (!v->requires_grad || seen.count(v.get())) continue;
        seen.insert(v.get());
        order.push_back(v);
        for (const auto& p : v->parents) stack.push_back(p);
    }
    // Node ids are issued monotonically, so descending id is a valid
    // reverse-topological order.
    std::sort(order.begin(), order.end(),
              [](const Var& a, const Var& b) { return a->id > b->id; });
    for (const auto& v : order) {
        if (v->backprop) {
            v->ensure_grad();
            v->backprop(*v);
        }
    }
}

Var ParamStore::create(const std::string& name, const Mat& init) {
    for (const auto& [n, _] : items)
        if (n == name) throw std::invalid_argument("duplicate parameter: " + name);
    Var v = param(init);
    items.emplace_back(name, v);
    return v;
}

Var* ParamStore::find(const std::string& name) {
    for (auto& [n, v] : items)
        if (n == name) return &v;
    return nullptr;
}

void ParamStore::zero_grad() {
    for (auto& [n, v] : items) {
        v->ensure_grad();
        v->grad.setZero();
    }
}

}  // namespace xsum::ad
