#pragma once

#include "xsum/layers.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace xsum {

inline constexpr int kMaxGenLen = 128;
inline const std::string kPrompt = "[DEC] a video of";

// Word-level vocabulary with dense ids. Specials occupy the first ids.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kDec = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    Vocabulary();

    // Build from training texts; prompt words are always included.
    static Vocabulary build(const std::vector<std::string>& texts);

    // Lowercase, strip surrounding punctuation, split on whitespace.
    static std::vector<std::string> normalize(const std::string& text);

    std::vector<int> tokenize(const std::string& text) const;
    std::string detokenize(const std::vector<int>& ids) const;

    int id(const std::string& word) const;
    const std::string& word(int id) const;
    int size() const { return static_cast<int>(words_.size()); }
    int add(const std::string& word);

    const std::vector<std::string>& words() const { return words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> ids_;
};

struct TsumConfig {
    int d_txt = 64;
    int d_vis = 32;
    int n_tex = 2;
    int heads = 1;
    int ffn_mult = 4;
    int max_len = kMaxGenLen + 8;  // prompt + generation + EOS
    std::uint64_t seed = 0;
};

enum class DecodeMode { Greedy, Beam };

struct GenerateOptions {
    DecodeMode mode = DecodeMode::Greedy;
    int beam_width = 4;
    int max_len = kMaxGenLen;  // generated tokens past the prompt
};

// Causal transformer decoder with cross-attention over video features.
class TsumDecoder {
public:
    TsumDecoder(const TsumConfig& cfg, Vocabulary vocab);

    // logits for every position of `tokens`; video_mask marks padded frames
    // of the memory (empty = none padded).
    ad::Var forward(const ad::Var& memory, const std::vector<int>& tokens,
                    const std::vector<int>& video_mask = {}) const;

    // Sum of per-token NLL over supervised positions. supervised[i] pairs
    // with logits row i predicting tokens[i+1]; prompt and pad positions
    // carry weight 0.
    ad::Var loss(const ad::Var& logits, const std::vector<int>& tokens,
                 const std::vector<double>& supervised) const;

    // Supervision weights for a full target sequence that starts with the
    // prompt: only the words after the prompt (and the EOS) are scored.
    std::vector<double> supervision_weights(const std::vector<int>& tokens) const;

    std::vector<int> prompt_ids() const;

    // Autoregressive generation from the prompt. Greedy is deterministic;
    // beam returns the best completed sequence under length-normalized
    // cumulative log-probability (alpha = 1).
    std::vector<int> generate(const ad::Var& memory, const GenerateOptions& opts = {},
                              const std::vector<int>& video_mask = {}) const;

    const Vocabulary& vocab() const { return vocab_; }
    const TsumConfig& config() const { return cfg_; }
    ad::ParamStore& params() { return params_; }
    const ad::ParamStore& params() const { return params_; }

private:
    struct Block {
        nn::LayerNorm ln1, ln2, ln3;
        nn::Attention self_attn;
        nn::Attention cross_attn;
        nn::FeedForward ffn;
    };

    Eigen::RowVectorXd next_token_logits(const ad::Var& memory,
                                         const std::vector<int>& tokens,
                                         const std::vector<int>& video_mask) const;

    TsumConfig cfg_;
    Vocabulary vocab_;
    ad::ParamStore params_;
    ad::Var token_table_;     // |V| x d_txt
    ad::Var position_table_;  // max_len x d_txt
    std::vector<Block> blocks_;
    nn::LayerNorm final_ln_;
    nn::Linear output_proj_;  // d_txt -> |V|
};

}  // namespace xsum
