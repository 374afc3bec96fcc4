#include "xsum/tsum_decoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace xsum {

namespace {

const std::vector<std::string> kSpecials = {"[PAD]", "[DEC]", "[EOS]", "[UNK]"};

bool is_special(const std::string& w) {
    return std::find(kSpecials.begin(), kSpecials.end(), w) != kSpecials.end();
}

}  // namespace

Vocabulary::Vocabulary() {
    for (const auto& s : kSpecials) add(s);
}

int Vocabulary::add(const std::string& word) {
    auto it = ids_.find(word);
    if (it != ids_.end()) return it->second;
    int id = static_cast<int>(words_.size());
    words_.push_back(word);
    ids_[word] = id;
    return id;
}

std::vector<std::string> Vocabulary::normalize(const std::string& text) {
    std::istringstream iss(text);
    std::string raw;
    std::vector<std::string> out;
    while (iss >> raw) {
        if (is_special(raw)) {
            out.push_back(raw);
            continue;
        }
        size_t b = 0, e = raw.size();
        while (b < e && std::ispunct(static_cast<unsigned char>(raw[b]))) ++b;
        while (e > b && std::ispunct(static_cast<unsigned char>(raw[e - 1]))) --e;
        if (b == e) continue;
        std::string w = raw.substr(b, e - b);
        std::transform(w.begin(), w.end(), w.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        out.push_back(w);
    }
    return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
    Vocabulary v;
    for (const std::string& w : normalize(kPrompt)) v.add(w);
    for (const std::string& t : texts)
        for (const std::string& w : normalize(t)) v.add(w);
    return v;
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
    std::vector<int> ids;
    for (const std::string& w : normalize(text)) {
        auto it = ids_.find(w);
        ids.push_back(it == ids_.end() ? kUnk : it->second);
    }
    return ids;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (!out.empty()) out += ' ';
        out += word(id);
    }
    return out;
}

int Vocabulary::id(const std::string& w) const {
    auto it = ids_.find(w);
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("Vocabulary: id out of range");
    return words_[static_cast<size_t>(id)];
}

TsumDecoder::TsumDecoder(const TsumConfig& cfg, Vocabulary vocab)
    : cfg_(cfg), vocab_(std::move(vocab)) {
    Rng rng(cfg.seed + 1);
    token_table_ = params_.create("token_embedding",
                                  rng.gaussian_matrix(vocab_.size(), cfg.d_txt, 0.02));
    position_table_ = params_.create(
        "position_embedding", rng.gaussian_matrix(cfg.max_len, cfg.d_txt, 0.02));
    for (int l = 0; l < cfg.n_tex; ++l) {
        std::string base = "dec." + std::to_string(l);
        Block b;
        b.ln1 = nn::LayerNorm::create(params_, base + ".ln1", cfg.d_txt);
        b.self_attn = nn::Attention::create(params_, base + ".self", cfg.d_txt,
                                            cfg.d_txt, cfg.d_txt, cfg.heads, rng);
        b.ln2 = nn::LayerNorm::create(params_, base + ".ln2", cfg.d_txt);
        b.cross_attn = nn::Attention::create(params_, base + ".cross", cfg.d_txt,
                                             cfg.d_vis, cfg.d_txt, cfg.heads, rng);
        b.ln3 = nn::LayerNorm::create(params_, base + ".ln3", cfg.d_txt);
        b.ffn = nn::FeedForward::create(params_, base + ".ffn", cfg.d_txt,
                                        cfg.ffn_mult * cfg.d_txt, rng);
        blocks_.push_back(std::move(b));
    }
    final_ln_ = nn::LayerNorm::create(params_, "final_ln", cfg.d_txt);
    output_proj_ = nn::Linear::create(params_, "output_proj", cfg.d_txt,
                                      vocab_.size(), rng);
}

std::vector<int> TsumDecoder::prompt_ids() const { return vocab_.tokenize(kPrompt); }

ad::Var TsumDecoder::forward(const ad::Var& memory, const std::vector<int>& tokens,
                             const std::vector<int>& video_mask) const {
    const int l = static_cast<int>(tokens.size());
    if (l == 0) throw std::invalid_argument("decoder_forward: empty token sequence");
    if (l > cfg_.max_len)
        throw std::invalid_argument("decoder_forward: sequence length " +
                                    std::to_string(l) + " exceeds max_len " +
                                    std::to_string(cfg_.max_len));
    if (memory->value.cols() != cfg_.d_vis)
        throw std::invalid_argument("decoder_forward: memory dimension mismatch");
    if (!video_mask.empty() &&
        static_cast<int>(video_mask.size()) != memory->value.rows())
        throw std::invalid_argument("decoder_forward: video mask length mismatch");

    std::vector<int> pos(static_cast<size_t>(l));
    for (int i = 0; i < l; ++i) pos[static_cast<size_t>(i)] = i;
    ad::Var x = ad::add(ad::rows(token_table_, tokens), ad::rows(position_table_, pos));

    ad::Mat causal = nn::causal_attention_mask(l);
    bool any_pad = false;
    for (int m : video_mask) any_pad = any_pad || m == 0;
    ad::Mat cross_mask;
    if (any_pad) cross_mask = nn::pad_attention_mask(l, video_mask);

    for (const Block& b : blocks_) {
        ad::Var n1 = nn::layernorm(x, b.ln1);
        x = ad::add(x, nn::attention(n1, n1, b.self_attn, &causal));
        ad::Var n2 = nn::layernorm(x, b.ln2);
        x = ad::add(x, nn::attention(n2, memory, b.cross_attn,
                                     any_pad ? &cross_mask : nullptr));
        x = ad::add(x, nn::feed_forward(nn::layernorm(x, b.ln3), b.ffn));
    }
    return nn::linear(nn::layernorm(x, final_ln_), output_proj_);
}

std::vector<double> TsumDecoder::supervision_weights(const std::vector<int>& tokens) const {
    const size_t prompt_len = prompt_ids().size();
    // logits row i predicts tokens[i+1]; the last row predicts nothing.
    std::vector<double> w(tokens.size(), 0.0);
    for (size_t i = 0; i + 1 < tokens.size(); ++i) {
        int next = tokens[i + 1];
        if (i + 1 >= prompt_len && next != Vocabulary::kPad) w[i] = 1.0;
    }
    return w;
}

ad::Var TsumDecoder::loss(const ad::Var& logits, const std::vector<int>& tokens,
                          const std::vector<double>& supervised) const {
    if (tokens.size() != supervised.size() ||
        static_cast<size_t>(logits->value.rows()) != tokens.size())
        throw std::invalid_argument("tsum_loss: length mismatch");
    // Shift: row i is scored against tokens[i+1].
    std::vector<int> targets(tokens.size(), 0);
    for (size_t i = 0; i + 1 < tokens.size(); ++i) targets[i] = tokens[i + 1];
    return ad::cross_entropy_sum(logits, targets, supervised);
}

Eigen::RowVectorXd TsumDecoder::next_token_logits(const ad::Var& memory,
                                                  const std::vector<int>& tokens,
                                                  const std::vector<int>& video_mask) const {
    ad::Var logits = forward(memory, tokens, video_mask);
    return logits->value.row(logits->value.rows() - 1);
}

namespace {

Eigen::RowVectorXd log_softmax(const Eigen::RowVectorXd& logits) {
    double m = logits.maxCoeff();
    double lse = m + std::log((logits.array() - m).exp().sum());
    return (logits.array() - lse).matrix();
}

}  // namespace

std::vector<int> TsumDecoder::generate(const ad::Var& memory, const GenerateOptions& opts,
                                       const std::vector<int>& video_mask) const {
    const std::vector<int> prompt = prompt_ids();
    const int limit = std::min(opts.max_len, cfg_.max_len - static_cast<int>(prompt.size()));

    if (opts.mode == DecodeMode::Greedy) {
        std::vector<int> tokens = prompt;
        for (int step = 0; step < limit; ++step) {
            Eigen::RowVectorXd logits = next_token_logits(memory, tokens, video_mask);
            logits(Vocabulary::kPad) = -1e30;  // never emit padding
            int best = 0;
            logits.maxCoeff(&best);
            tokens.push_back(best);
            if (best == Vocabulary::kEos) break;
        }
        return tokens;
    }

    struct Beam {
        std::vector<int> tokens;
        double logprob = 0.0;
        bool done = false;
        double score(size_t prompt_len) const {
            size_t gen = tokens.size() - prompt_len;
            return gen == 0 ? 0.0 : logprob / static_cast<double>(gen);
        }
    };
    std::vector<Beam> beams{{prompt, 0.0, false}};
    for (int step = 0; step < limit; ++step) {
        bool all_done = true;
        std::vector<Beam> candidates;
        for (const Beam& b : beams) {
            if (b.done) {
                candidates.push_back(b);
                continue;
            }
            all_done = false;
            Eigen::RowVectorXd lp =
                log_softmax(next_token_logits(memory, b.tokens, video_mask));
            lp(Vocabulary::kPad) = -1e30;
            std::vector<int> order(static_cast<size_t>(lp.size()));
            std::iota(order.begin(), order.end(), 0);
            std::partial_sort(order.begin(),
                              order.begin() + std::min<size_t>(order.size(),
                                                               static_cast<size_t>(opts.beam_width)),
                              order.end(),
                              [&](int a, int c) { return lp(a) > lp(c); });
            for (int k = 0; k < opts.beam_width && k < lp.size(); ++k) {
                Beam nb = b;
                nb.tokens.push_back(order[static_cast<size_t>(k)]);
                nb.logprob += lp(order[static_cast<size_t>(k)]);
                nb.done = order[static_cast<size_t>(k)] == Vocabulary::kEos;
                candidates.push_back(std::move(nb));
            }
        }
        if (all_done) break;
        std::stable_sort(candidates.begin(), candidates.end(),
                         [&](const Beam& a, const Beam& b) {
                             return a.score(prompt.size()) > b.score(prompt.size());
                         });
        if (candidates.size() > static_cast<size_t>(opts.beam_width))
            candidates.resize(static_cast<size_t>(opts.beam_width));
        beams = std::move(candidates);
    }
    const Beam* best = nullptr;
    for (const Beam& b : beams)
        if (b.done && (!best || b.score(prompt.size()) > best->score(prompt.size())))
            best = &b;
    if (!best) best = &beams.front();
    return best->tokens;
}

}  // namespace xsum
