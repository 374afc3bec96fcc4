#pragma once

#include "xsum/autodiff.hpp"
#include "xsum/rng.hpp"

#include <optional>
#include <string>
#include <vector>

namespace xsum::nn {

using ad::Mat;
using ad::Var;

struct Linear {
    Var weight;  // in x out
    Var bias;    // 1 x out

    static Linear create(ad::ParamStore& ps, const std::string& name, int in, int out,
                         Rng& rng) {
        Linear l;
        l.weight = ps.create(name + ".weight",
                             rng.gaussian_matrix(in, out, 1.0 / std::sqrt(double(in))));
        l.bias = ps.create(name + ".bias", Mat::Zero(1, out));
        return l;
    }
};

inline Var linear(const Var& x, const Linear& l) {
    return ad::add_rowvec(ad::matmul(x, l.weight), l.bias);
}

struct LayerNorm {
    Var gain;
    Var bias;

    static LayerNorm create(ad::ParamStore& ps, const std::string& name, int dim) {
        LayerNorm ln;
        ln.gain = ps.create(name + ".gain", Mat::Ones(1, dim));
        ln.bias = ps.create(name + ".bias", Mat::Zero(1, dim));
        return ln;
    }
};

inline Var layernorm(const Var& x, const LayerNorm& ln) {
    return ad::layernorm_rows(x, ln.gain, ln.bias);
}

struct Attention {
    Linear q, k, v, o;
    int heads = 1;

    static Attention create(ad::ParamStore& ps, const std::string& name, int dim_q,
                            int dim_kv, int dim, int heads, Rng& rng) {
        Attention a;
        a.q = Linear::create(ps, name + ".q", dim_q, dim, rng);
        a.k = Linear::create(ps, name + ".k", dim_kv, dim, rng);
        a.v = Linear::create(ps, name + ".v", dim_kv, dim, rng);
        a.o = Linear::create(ps, name + ".o", dim, dim_q, rng);
        a.heads = heads;
        return a;
    }
};

// Scaled dot-product attention with an optional additive pre-softmax mask
// (rows = query positions, cols = key positions).
Var attention(const Var& q_in, const Var& kv_in, const Attention& p,
              const Mat* additive_mask);

struct FeedForward {
    Linear fc1, fc2;

    static FeedForward create(ad::ParamStore& ps, const std::string& name, int dim,
                              int hidden, Rng& rng) {
        FeedForward f;
        f.fc1 = Linear::create(ps, name + ".fc1", dim, hidden, rng);
        f.fc2 = Linear::create(ps, name + ".fc2", hidden, dim, rng);
        return f;
    }
};

inline Var feed_forward(const Var& x, const FeedForward& f) {
    return linear(ad::gelu(linear(x, f.fc1)), f.fc2);
}

// Additive mask that blocks attention to padded key positions.
Mat pad_attention_mask(int t_query, const std::vector<int>& key_mask);

// Lower-triangular causal mask for decoder self-attention.
Mat causal_attention_mask(int t);

inline constexpr double kMaskedLogit = -1e9;

}  // namespace xsum::nn
