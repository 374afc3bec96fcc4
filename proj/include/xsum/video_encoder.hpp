#pragma once

#include "xsum/dataset.hpp"
#include "xsum/layers.hpp"

#include <memory>

namespace xsum {

// Per-frame encoder contract: one d_vis vector per frame, deterministic, and
// (when frozen) excluded from gradient updates.
class FrameEncoder {
public:
    virtual ~FrameEncoder() = default;
    virtual Eigen::MatrixXd encode(const VideoRecord& video) const = 0;
    virtual int d_vis() const = 0;
    virtual bool frozen() const { return true; }
};

// Desk-scale stand-in for a pretrained image encoder: a fixed random
// projection with tanh nonlinearity over raw frame vectors, frozen after
// construction. Records with precomputed features pass through unchanged.
class RandomProjectionEncoder : public FrameEncoder {
public:
    RandomProjectionEncoder(int raw_dim, int d_vis, std::uint64_t seed);

    Eigen::MatrixXd encode(const VideoRecord& video) const override;
    int d_vis() const override { return static_cast<int>(proj_.cols()); }

    // Raw parameter bytes, for frozen-parameter checks.
    const Eigen::MatrixXd& projection() const { return proj_; }

private:
    Eigen::MatrixXd proj_;  // raw_dim x d_vis
    Eigen::RowVectorXd bias_;
};

struct EncoderConfig {
    int d_vis = 32;
    int n_tem = 1;
    int max_len = kMaxVideoLen;
    int ffn_mult = 4;
    bool sinusoidal_temporal = false;  // learned embeddings by default
    std::uint64_t seed = 0;

    int heads() const { return std::max(1, d_vis / 64); }
};

// Temporal half of the hierarchical encoder: learned temporal position
// embeddings plus a stack of pre-norm self-attention blocks.
class TemporalEncoder {
public:
    explicit TemporalEncoder(const EncoderConfig& cfg);

    // Z0[i] = Z[i] + E_temp[i]. Throws if T exceeds max_len.
    ad::Var apply_temporal_embedding(const ad::Var& z) const;

    // mask[i] == 0 marks a padded frame; padded keys get zero attention
    // weight. With n_tem == 0 this is the identity.
    ad::Var forward(const ad::Var& z0, const std::vector<int>& mask) const;

    ad::Var encode(const ad::Var& z, const std::vector<int>& mask) const {
        return forward(apply_temporal_embedding(z), mask);
    }

    const EncoderConfig& config() const { return cfg_; }
    ad::ParamStore& params() { return params_; }
    const ad::ParamStore& params() const { return params_; }

private:
    struct Block {
        nn::LayerNorm ln1, ln2;
        nn::Attention attn;
        nn::FeedForward ffn;
    };

    EncoderConfig cfg_;
    ad::ParamStore params_;
    ad::Var temporal_table_;  // max_len x d_vis
    std::vector<Block> blocks_;
};

}  // namespace xsum
