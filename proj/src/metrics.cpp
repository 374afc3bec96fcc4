#include "xsum/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace xsum::metrics {

double f1_frames(const std::vector<int>& pred, const std::vector<int>& ref) {
    if (pred.size() != ref.size())
        throw std::invalid_argument("f1_frames: length mismatch");
    long np = 0, nr = 0, overlap = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i]) ++np;
        if (ref[i]) ++nr;
        if (pred[i] && ref[i]) ++overlap;
    }
    if (np == 0 && nr == 0) return 1.0;
    if (np == 0 || nr == 0) return 0.0;
    double p = static_cast<double>(overlap) / static_cast<double>(np);
    double r = static_cast<double>(overlap) / static_cast<double>(nr);
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

F1Pair f1_multi(const std::vector<int>& pred, const std::vector<std::vector<int>>& refs) {
    if (refs.empty()) throw std::invalid_argument("f1_multi: no references");
    F1Pair out;
    for (const auto& ref : refs) {
        double f = f1_frames(pred, ref);
        out.avg += f;
        out.max = std::max(out.max, f);
    }
    out.avg /= static_cast<double>(refs.size());
    return out;
}

namespace {

// Inversion count by mergesort; used by Knight's tau-b.
long long count_inversions(std::vector<double>& v, std::vector<double>& tmp,
                           size_t lo, size_t hi) {
    if (hi - lo < 2) return 0;
    size_t mid = lo + (hi - lo) / 2;
    long long inv = count_inversions(v, tmp, lo, mid) + count_inversions(v, tmp, mid, hi);
    size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            inv += static_cast<long long>(mid - i);
            tmp[k++] = v[j++];
        } else {
            tmp[k++] = v[i++];
        }
    }
    while (i < mid) tmp[k++] = v[i++];
    while (j < hi) tmp[k++] = v[j++];
    std::copy(tmp.begin() + static_cast<long>(lo), tmp.begin() + static_cast<long>(hi),
              v.begin() + static_cast<long>(lo));
    return inv;
}

template <typename Key>
long long tie_pairs(std::vector<Key> keys) {
    std::sort(keys.begin(), keys.end());
    long long total = 0, run = 1;
    for (size_t i = 1; i <= keys.size(); ++i) {
        if (i < keys.size() && keys[i] == keys[i - 1]) {
            ++run;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    return total;
}

std::vector<double> average_ranks(const std::vector<double>& x) {
    const size_t n = x.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        double r = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y) {
    const size_t n = x.size();
    if (n != y.size()) throw std::invalid_argument("kendall_tau_b: length mismatch");
    if (n < 2) throw std::invalid_argument("kendall_tau_b: need at least 2 points");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
    });
    std::vector<double> ys(n);
    for (size_t i = 0; i < n; ++i) ys[i] = y[order[i]];

    const long long tot = static_cast<long long>(n) * (static_cast<long long>(n) - 1) / 2;
    long long xtie = tie_pairs(x);
    long long ytie = tie_pairs(y);
    std::vector<std::pair<double, double>> xy(n);
    for (size_t i = 0; i < n; ++i) xy[i] = {x[i], y[i]};
    long long xytie = tie_pairs(xy);

    std::vector<double> tmp(n);
    long long dis = count_inversions(ys, tmp, 0, n);

    long long num = tot - xtie - ytie + xytie - 2 * dis;
    double den = std::sqrt(static_cast<double>(tot - xtie)) *
                 std::sqrt(static_cast<double>(tot - ytie));
    if (den == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return static_cast<double>(num) / den;
}

double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
    const size_t n = x.size();
    if (n != y.size()) throw std::invalid_argument("spearman_rho: length mismatch");
    if (n < 2) throw std::invalid_argument("spearman_rho: need at least 2 points");
    std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
    double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(n);
    double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double dx = rx[i] - mx, dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sxy / std::sqrt(sxx * syy);
}

RankCorr rank_correlations(const Eigen::VectorXd& scores,
                           const std::vector<std::vector<int>>& refs) {
    if (scores.size() < 2)
        throw std::invalid_argument("rank_correlations: need T >= 2");
    if (refs.empty()) throw std::invalid_argument("rank_correlations: no references");
    std::vector<double> x(scores.data(), scores.data() + scores.size());
    RankCorr out;
    for (const auto& ref : refs) {
        if (ref.size() != x.size())
            throw std::invalid_argument("rank_correlations: reference length mismatch");
        std::vector<double> y(ref.begin(), ref.end());
        double tau = kendall_tau_b(x, y);
        double rho = spearman_rho(x, y);
        if (std::isnan(tau) || std::isnan(rho)) {
            ++out.degenerate;
            tau = std::isnan(tau) ? 0.0 : tau;
            rho = std::isnan(rho) ? 0.0 : rho;
        }
        out.kendall_tau += tau;
        out.spearman_rho += rho;
    }
    out.kendall_tau /= static_cast<double>(refs.size());
    out.spearman_rho /= static_cast<double>(refs.size());
    return out;
}

F1Pair leave_one_out(const std::vector<std::vector<int>>& refs) {
    if (refs.size() < 2)
        throw std::invalid_argument("leave_one_out: need at least 2 references");
    F1Pair out;
    for (size_t a = 0; a < refs.size(); ++a) {
        std::vector<std::vector<int>> others;
        for (size_t b = 0; b < refs.size(); ++b)
            if (b != a) others.push_back(refs[b]);
        F1Pair p = f1_multi(refs[a], others);
        out.avg += p.avg;
        out.max += p.max;
    }
    out.avg /= static_cast<double>(refs.size());
    out.max /= static_cast<double>(refs.size());
    return out;
}

namespace {

using NgramCounts = std::unordered_map<std::string, long>;

NgramCounts ngram_counts(const std::vector<std::string>& tokens, int n) {
    NgramCounts counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (size_t i = 0; i + static_cast<size_t>(n) <= tokens.size(); ++i) {
        std::string key;
        for (int k = 0; k < n; ++k) {
            if (k) key += '\x1f';
            key += tokens[i + static_cast<size_t>(k)];
        }
        counts[key]++;
    }
    return counts;
}

}  // namespace

double bleu4(const std::vector<std::string>& candidate,
             const std::vector<std::string>& reference) {
    if (reference.empty()) throw std::invalid_argument("bleu4: empty reference");
    if (candidate.empty()) return 0.0;
    double log_p_sum = 0.0;
    for (int n = 1; n <= 4; ++n) {
        long c_n = std::max<long>(0, static_cast<long>(candidate.size()) - n + 1);
        NgramCounts cand = ngram_counts(candidate, n);
        NgramCounts ref = ngram_counts(reference, n);
        long matched = 0;
        for (const auto& [key, count] : cand) {
            auto it = ref.find(key);
            if (it != ref.end()) matched += std::min(count, it->second);
        }
        double p;
        if (n == 1) {
            if (c_n == 0 || matched == 0) return 0.0;
            p = static_cast<double>(matched) / static_cast<double>(c_n);
        } else if (matched == 0) {
            // add-one smoothing on zero higher-order counts
            p = 1.0 / static_cast<double>(c_n + 1);
        } else {
            p = static_cast<double>(matched) / static_cast<double>(c_n);
        }
        log_p_sum += std::log(p);
    }
    double bp = candidate.size() >= reference.size()
                    ? 1.0
                    : std::exp(1.0 - static_cast<double>(reference.size()) /
                                         static_cast<double>(candidate.size()));
    return bp * std::exp(log_p_sum / 4.0);
}

namespace {

long lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<long> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

double rouge_l(const std::vector<std::string>& candidate,
               const std::vector<std::string>& reference, double beta) {
    if (candidate.empty() || reference.empty())
        throw std::invalid_argument("rouge_l: empty input");
    double lcs = static_cast<double>(lcs_length(candidate, reference));
    double r = lcs / static_cast<double>(reference.size());
    if (beta <= 0.0) return r;
    double p = lcs / static_cast<double>(candidate.size());
    if (p == 0.0 && r == 0.0) return 0.0;
    double b2 = beta * beta;
    return (1.0 + b2) * r * p / (r + b2 * p);
}

struct CiderScorer::Impl {
    std::unordered_map<std::string, double> idf[5];  // index 1..4
    double log_n = 0.0;
    size_t corpus_size = 0;
};

CiderScorer::CiderScorer(const std::vector<std::vector<std::string>>& references) {
    if (references.size() < 2)
        throw std::invalid_argument("cider: corpus must contain at least 2 videos");
    auto impl = std::make_shared<Impl>();
    impl->corpus_size = references.size();
    impl->log_n = std::log(static_cast<double>(references.size()));
    for (int n = 1; n <= 4; ++n) {
        std::unordered_map<std::string, long> df;
        for (const auto& ref : references)
            for (const auto& [key, _] : ngram_counts(ref, n)) df[key]++;
        for (const auto& [key, d] : df)
            impl->idf[n][key] = impl->log_n - std::log(static_cast<double>(std::max<long>(1, d)));
    }
    impl_ = impl;
}

double CiderScorer::score(const std::vector<std::string>& candidate,
                          const std::vector<std::string>& reference) const {
    const double sigma = 6.0;
    double delta = static_cast<double>(candidate.size()) -
                   static_cast<double>(reference.size());
    double gauss = std::exp(-delta * delta / (2.0 * sigma * sigma));
    double total = 0.0;
    for (int n = 1; n <= 4; ++n) {
        NgramCounts cand = ngram_counts(candidate, n);
        NgramCounts ref = ngram_counts(reference, n);
        auto idf_of = [&](const std::string& key) {
            auto it = impl_->idf[n].find(key);
            // n-grams unseen in the reference corpus get df = 1
            return it == impl_->idf[n].end() ? impl_->log_n : it->second;
        };
        double dot = 0.0, nc = 0.0, nr = 0.0;
        for (const auto& [key, count] : cand) {
            double w = static_cast<double>(count) * idf_of(key);
            nc += w * w;
            auto it = ref.find(key);
            if (it != ref.end())
                dot += w * static_cast<double>(it->second) * idf_of(key);
        }
        for (const auto& [key, count] : ref) {
            double w = static_cast<double>(count) * idf_of(key);
            nr += w * w;
        }
        if (nc > 0.0 && nr > 0.0) total += gauss * dot / std::sqrt(nc * nr);
    }
    return 10.0 * total / 4.0;
}

DualEncoder::DualEncoder(const DualEncoderConfig& cfg) : cfg_(cfg) {
    if (cfg.vocab_size <= 0)
        throw std::invalid_argument("DualEncoder: vocab_size must be positive");
    Rng rng(cfg.seed + 7);
    v1_ = nn::Linear::create(params_, "video.fc1", cfg.d_vis, cfg.hidden, rng);
    v2_ = nn::Linear::create(params_, "video.fc2", cfg.hidden, cfg.d_emb, rng);
    token_table_ = params_.create("text.embedding",
                                  rng.gaussian_matrix(cfg.vocab_size, cfg.d_txt, 0.05));
    pos_table_ = params_.create("text.position",
                                rng.gaussian_matrix(64, cfg.d_txt, 0.05));
    t1_ = nn::Linear::create(params_, "text.fc1", cfg.d_txt, cfg.hidden, rng);
    t2_ = nn::Linear::create(params_, "text.fc2", cfg.hidden, cfg.d_emb, rng);
    ad::Mat lt(1, 1);
    lt(0, 0) = std::log(1.0 / 0.07);
    log_temp_ = params_.create("logit_scale", lt);
}

ad::Var DualEncoder::embed_frames(const ad::Var& frames) const {
    return ad::normalize_rows(nn::linear(ad::gelu(nn::linear(frames, v1_)), v2_));
}

ad::Var DualEncoder::embed_text(const std::vector<int>& token_ids) const {
    if (token_ids.empty()) throw std::invalid_argument("embed_text: empty token sequence");
    std::vector<int> positions(token_ids.size());
    const int max_pos = static_cast<int>(pos_table_->value.rows()) - 1;
    for (size_t i = 0; i < positions.size(); ++i)
        positions[i] = std::min(static_cast<int>(i), max_pos);
    ad::Var tok = ad::rows(token_table_, token_ids);
    // positional gating: tok * (1 + pos). Additive positions would cancel
    // under mean pooling, leaving the embedding order-invariant.
    ad::Var pos = ad::rows(pos_table_, positions);
    ad::Var pooled = ad::mean_rows(ad::add(tok, ad::cmul(tok, pos)));
    return ad::normalize_rows(nn::linear(ad::gelu(nn::linear(pooled, t1_)), t2_));
}

ad::Var DualEncoder::logit_scale() const { return ad::exp_(log_temp_); }

double vt_clipscore(const Eigen::MatrixXd& selected_frames,
                    const std::vector<int>& text_tokens, const DualEncoder& dual) {
    if (selected_frames.rows() == 0)
        throw std::invalid_argument("vt_clipscore: empty selection");
    ad::Var fe = dual.embed_frames(ad::constant(selected_frames));
    ad::Var te = dual.embed_text(text_tokens);
    Eigen::VectorXd cos = fe->value * te->value.row(0).transpose();
    return cos.mean();
}

ad::Var contrastive_loss(const DualEncoder& dual,
                         const std::vector<ContrastivePair>& batch) {
    if (batch.size() < 2)
        throw std::invalid_argument("contrastive_loss: batch must contain at least 2 pairs");
    std::vector<ad::Var> vrows, trows;
    for (const auto& pair : batch) {
        ad::Var fe = dual.embed_frames(ad::constant(pair.frames));
        // video summary embedding: mean of frame embeddings, renormalized
        vrows.push_back(ad::normalize_rows(ad::mean_rows(fe)));
        trows.push_back(dual.embed_text(pair.text_tokens));
    }
    ad::Var v = ad::concat_rows(vrows);
    ad::Var t = ad::concat_rows(trows);
    ad::Var logits = ad::scale_var(ad::matmul(v, ad::transpose(t)), dual.logit_scale());
    std::vector<int> targets(batch.size());
    std::iota(targets.begin(), targets.end(), 0);
    std::vector<double> w(batch.size(), 1.0 / static_cast<double>(batch.size()));
    ad::Var l_v2t = ad::cross_entropy_sum(logits, targets, w);
    ad::Var l_t2v = ad::cross_entropy_sum(ad::transpose(logits), targets, w);
    return ad::scale(ad::add(l_v2t, l_t2v), 0.5);
}

double finetune_dual_encoder(DualEncoder& dual, const std::vector<ContrastivePair>& pairs,
                             const ContrastiveConfig& cfg) {
    if (cfg.batch_size < 2)
        throw std::invalid_argument("finetune_dual_encoder: batch size must be >= 2");
    if (pairs.size() < 2)
        throw std::invalid_argument("finetune_dual_encoder: need at least 2 pairs");
    Rng rng(cfg.seed);
    // Adam moments, local to the finetune
    std::vector<ad::Mat> m, v;
    for (const auto& [name, p] : dual.params().items) {
        m.push_back(ad::Mat::Zero(p->value.rows(), p->value.cols()));
        v.push_back(ad::Mat::Zero(p->value.rows(), p->value.cols()));
    }
    double last = 0.0;
    std::vector<size_t> idx(pairs.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (int step = 1; step <= cfg.steps; ++step) {
        rng.shuffle(idx);
        std::vector<ContrastivePair> batch;
        for (size_t i = 0; i < std::min<size_t>(static_cast<size_t>(cfg.batch_size),
                                                idx.size());
             ++i)
            batch.push_back(pairs[idx[i]]);
        dual.params().zero_grad();
        ad::Var loss = contrastive_loss(dual, batch);
        ad::backward(loss);
        last = loss->value(0, 0);
        double bc1 = 1.0 - std::pow(0.9, step), bc2 = 1.0 - std::pow(0.999, step);
        size_t k = 0;
        for (auto& [name, p] : dual.params().items) {
            m[k] = 0.9 * m[k] + 0.1 * p->grad;
            v[k] = 0.999 * v[k] + 0.001 * p->grad.cwiseProduct(p->grad);
            ad::Mat mh = m[k] / bc1;
            ad::Mat vh = v[k] / bc2;
            p->value -= cfg.lr * (mh.array() / (vh.array().sqrt() + 1e-8)).matrix();
            ++k;
        }
    }
    return last;
}

void save_dual_encoder(const std::filesystem::path& path, const DualEncoder& dual) {
    nlohmann::json header;
    const auto& cfg = dual.config();
    header["version"] = 1;
    header["cfg"] = {{"d_vis", cfg.d_vis},   {"d_txt", cfg.d_txt},
                     {"d_emb", cfg.d_emb},   {"hidden", cfg.hidden},
                     {"seed", cfg.seed},     {"vocab_size", cfg.vocab_size}};
    nlohmann::json blocks = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, p] : dual.params().items) {
        blocks.push_back({{"name", name},
                          {"rows", p->value.rows()},
                          {"cols", p->value.cols()},
                          {"offset", offset}});
        offset += static_cast<std::uint64_t>(p->value.size()) * sizeof(double);
    }
    header["blocks"] = blocks;
    std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_dual_encoder: cannot open " + path.string());
    out.write("XSUMDE01", 8);
    std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, p] : dual.params().items)
        for (Eigen::Index i = 0; i < p->value.rows(); ++i)
            for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
                double v = p->value(i, j);
                out.write(reinterpret_cast<const char*>(&v), sizeof(double));
            }
}

DualEncoder load_dual_encoder(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_dual_encoder: cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (std::string(magic, 8) != "XSUMDE01")
        throw std::runtime_error("load_dual_encoder: bad magic");
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    nlohmann::json header = nlohmann::json::parse(hs);
    DualEncoderConfig cfg;
    cfg.d_vis = header["cfg"]["d_vis"];
    cfg.d_txt = header["cfg"]["d_txt"];
    cfg.d_emb = header["cfg"]["d_emb"];
    cfg.hidden = header["cfg"]["hidden"];
    cfg.seed = header["cfg"]["seed"];
    cfg.vocab_size = header["cfg"]["vocab_size"];
    DualEncoder dual(cfg);
    for (const auto& b : header["blocks"]) {
        std::string name = b["name"];
        ad::Var* p = dual.params().find(name);
        if (!p) throw std::runtime_error("load_dual_encoder: unknown block " + name);
        Eigen::Index rows = b["rows"], cols = b["cols"];
        ad::Mat m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) {
                double v;
                in.read(reinterpret_cast<char*>(&v), sizeof(double));
                m(i, j) = v;
            }
        if (!in) throw std::runtime_error("load_dual_encoder: truncated block " + name);
        (*p)->value = m;
    }
    return dual;
}

}  // namespace xsum::metrics
