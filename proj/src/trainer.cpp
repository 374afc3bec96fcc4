#include "xsum/trainer.hpp"

#include "xsum/metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace xsum {

using nlohmann::json;

namespace {
constexpr int kFrameRawDim = 768;
constexpr char kCheckpointMagic[9] = "XSUMCK01";
}  // namespace

void TrainConfig::validate() const {
    if (lambda_v < 0.0 || lambda_t < 0.0 || (lambda_v == 0.0 && lambda_t == 0.0))
        throw std::invalid_argument("TrainConfig: lambda_v, lambda_t must be >= 0 and not both zero");
    if (base_lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be positive");
    if (epochs < 0 || batch_size < 1)
        throw std::invalid_argument("TrainConfig: bad epochs/batch_size");
}

double lr_at(long step, long total_steps, const TrainConfig& cfg) {
    if (step < 0 || step > total_steps)
        throw std::invalid_argument("lr_at: step out of range");
    if (total_steps == 0) return cfg.base_lr;
    return cfg.base_lr * 0.5 *
           (1.0 + std::cos(M_PI * static_cast<double>(step) /
                           static_cast<double>(total_steps)));
}

double total_loss(double loss_v, double loss_t, const TrainConfig& cfg) {
    if (!std::isfinite(loss_v) || !std::isfinite(loss_t))
        throw std::runtime_error("total_loss: non-finite loss (training aborted): L_v=" +
                                 std::to_string(loss_v) + " L_t=" + std::to_string(loss_t));
    return cfg.lambda_v * loss_v + cfg.lambda_t * loss_t;
}

Model Model::create(const EncoderConfig& enc, const VsumConfig& vs, const TsumConfig& ts,
                    Vocabulary vocab, std::shared_ptr<FrameEncoder> frame_enc) {
    Model m;
    m.enc_cfg = enc;
    m.vsum_cfg = vs;
    m.tsum_cfg = ts;
    m.frame_encoder = frame_enc
                          ? std::move(frame_enc)
                          : std::make_shared<RandomProjectionEncoder>(kFrameRawDim,
                                                                      enc.d_vis, enc.seed);
    m.temporal = std::make_unique<TemporalEncoder>(enc);
    m.vsum = std::make_unique<VsumDecoder>(vs);
    m.tsum = std::make_unique<TsumDecoder>(ts, std::move(vocab));
    return m;
}

std::vector<std::pair<std::string, ad::Var>> Model::parameters() const {
    std::vector<std::pair<std::string, ad::Var>> all;
    for (const auto& [n, v] : temporal->params().items) all.emplace_back("enc." + n, v);
    for (const auto& [n, v] : vsum->params().items) all.emplace_back("vsum." + n, v);
    for (const auto& [n, v] : tsum->params().items) all.emplace_back("tsum." + n, v);
    return all;
}

void Model::zero_grad() {
    temporal->params().zero_grad();
    vsum->params().zero_grad();
    tsum->params().zero_grad();
}

ad::Var Model::encode(const VideoRecord& video, const std::vector<int>& mask) const {
    Eigen::MatrixXd z = frame_encoder->encode(video);
    std::vector<int> m = mask;
    if (m.empty()) m.assign(static_cast<size_t>(z.rows()), 1);
    return temporal->encode(ad::constant(std::move(z)), m);
}

Eigen::VectorXd Model::score_frames_inference(const VideoRecord& video) const {
    ad::Var p = vsum->forward(encode(video));
    return p->value.col(0);
}

std::vector<int> Model::summarize_video(const VideoRecord& video, double budget_ratio) const {
    return select_topk(score_frames_inference(video), budget_ratio);
}

std::string Model::summarize_text(const VideoRecord& video,
                                  const GenerateOptions& opts) const {
    std::vector<int> ids = tsum->generate(encode(video), opts);
    const size_t skip = tsum->prompt_ids().size();
    std::vector<int> body;
    for (size_t i = skip; i < ids.size(); ++i)
        if (ids[i] != Vocabulary::kEos) body.push_back(ids[i]);
    return tsum->vocab().detokenize(body);
}

AdamW::AdamW(const TrainConfig& cfg,
             const std::vector<std::pair<std::string, ad::Var>>& params)
    : cfg_(cfg), params_(params) {
    for (const auto& [name, p] : params_)
        moments_[name] = {ad::Mat::Zero(p->value.rows(), p->value.cols()),
                          ad::Mat::Zero(p->value.rows(), p->value.cols())};
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params_) {
        p->ensure_grad();
        auto& [m, v] = moments_[name];
        // Parameters with no gradient path and no history are left untouched
        // (single-task modes must not drift the unused decoder).
        if (p->grad.isZero(0.0) && m.isZero(0.0) && v.isZero(0.0)) continue;
        if (!p->grad.allFinite())
            throw std::runtime_error("train_step: non-finite gradient in parameter " + name);
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * p->grad;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * p->grad.cwiseProduct(p->grad);
        ad::Mat mh = m / bc1;
        ad::Mat vh = v / bc2;
        p->value -= lr * (mh.array() / (vh.array().sqrt() + cfg_.adam_eps)).matrix();
        p->value *= 1.0 - lr * cfg_.weight_decay;  // decoupled decay
    }
}

namespace {

// Target token sequence for one record: prompt + caption words + EOS.
std::vector<int> target_tokens(const TsumDecoder& dec, const std::string& text) {
    std::vector<int> toks = dec.prompt_ids();
    for (int id : dec.vocab().tokenize(text)) toks.push_back(id);
    toks.push_back(Vocabulary::kEos);
    const int cap = dec.config().max_len;
    if (static_cast<int>(toks.size()) > cap) {
        toks.resize(static_cast<size_t>(cap));
        toks.back() = Vocabulary::kEos;
    }
    return toks;
}

std::vector<int> reference_union_labels(const ReferenceSet& refs, int t) {
    // Majority vote over the ten annotators gives the per-frame key label.
    std::vector<int> votes(static_cast<size_t>(t), 0);
    for (const auto& ann : refs.video_refs) {
        std::vector<int> lab = spans_to_labels(ann, t);
        for (int i = 0; i < t; ++i) votes[static_cast<size_t>(i)] += lab[static_cast<size_t>(i)];
    }
    std::vector<int> out(static_cast<size_t>(t), 0);
    for (int i = 0; i < t; ++i)
        out[static_cast<size_t>(i)] =
            votes[static_cast<size_t>(i)] * 2 >= static_cast<int>(refs.video_refs.size())
                ? 1
                : 0;
    return out;
}

}  // namespace

StepLosses train_step(const std::vector<const CorpusRecord*>& batch, Model& model,
                      AdamW& optimizer, const TrainConfig& cfg, double lr) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    cfg.validate();
    model.zero_grad();

    ad::Var acc_v, acc_t;
    for (const CorpusRecord* rec : batch) {
        ad::Var z = model.encode(rec->video);
        if (cfg.lambda_v > 0.0) {
            std::vector<int> labels =
                reference_union_labels(rec->refs, rec->video.frame_count);
            ad::Var lv = model.vsum->loss(model.vsum->forward(z), labels);
            acc_v = acc_v ? ad::add(acc_v, lv) : lv;
        }
        if (cfg.lambda_t > 0.0) {
            std::vector<int> toks = target_tokens(*model.tsum, rec->refs.text_summary);
            ad::Var logits = model.tsum->forward(z, toks);
            ad::Var lt =
                model.tsum->loss(logits, toks, model.tsum->supervision_weights(toks));
            acc_t = acc_t ? ad::add(acc_t, lt) : lt;
        }
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    StepLosses losses;
    ad::Var total;
    if (acc_v) {
        acc_v = ad::scale(acc_v, inv_b);
        losses.loss_v = acc_v->value(0, 0);
        total = ad::scale(acc_v, cfg.lambda_v);
    }
    if (acc_t) {
        acc_t = ad::scale(acc_t, inv_b);
        losses.loss_t = acc_t->value(0, 0);
        ad::Var weighted = ad::scale(acc_t, cfg.lambda_t);
        total = total ? ad::add(total, weighted) : weighted;
    }
    losses.total = total_loss(losses.loss_v, losses.loss_t, cfg);
    ad::backward(total);
    optimizer.step(lr);
    return losses;
}

namespace {

double val_f1(const std::vector<CorpusRecord>& val_set, const Model& model,
              const TrainConfig& cfg) {
    if (val_set.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& rec : val_set) {
        std::vector<int> keep_idx = model.summarize_video(rec.video, cfg.budget_ratio);
        std::vector<int> keep(static_cast<size_t>(rec.video.frame_count), 0);
        for (int i : keep_idx) keep[static_cast<size_t>(i)] = 1;
        std::vector<std::vector<int>> refs;
        for (const auto& ann : rec.refs.video_refs)
            refs.push_back(spans_to_labels(ann, rec.video.frame_count));
        acc += metrics::f1_multi(keep, refs).avg;
    }
    return acc / static_cast<double>(val_set.size());
}

double val_nll(const std::vector<CorpusRecord>& val_set, const Model& model) {
    if (val_set.empty()) return 0.0;
    double total = 0.0;
    long count = 0;
    for (const auto& rec : val_set) {
        std::vector<int> toks = target_tokens(*model.tsum, rec.refs.text_summary);
        ad::Var z = model.encode(rec.video);
        ad::Var logits = model.tsum->forward(z, toks);
        std::vector<double> w = model.tsum->supervision_weights(toks);
        ad::Var loss = model.tsum->loss(logits, toks, w);
        total += loss->value(0, 0);
        for (double x : w) count += x != 0.0 ? 1 : 0;
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace

FitResult fit(const std::vector<CorpusRecord>& train_set,
              const std::vector<CorpusRecord>& val_set, Model& model,
              const TrainConfig& cfg, const FitOptions& opts) {
    cfg.validate();
    if (train_set.empty()) throw std::invalid_argument("fit: empty training set");

    AdamW optimizer(cfg, model.parameters());
    int start_epoch = 0;
    if (opts.resume_from) {
        LoadedCheckpoint loaded = load_checkpoint(*opts.resume_from);
        auto params = model.parameters();
        auto src_params = loaded.model.parameters();
        for (auto& [name, p] : params)
            for (auto& [sname, sp] : src_params)
                if (sname == name) p->value = sp->value;
        for (auto& [name, mv] : loaded.moments)
            if (optimizer.moments().count(name)) optimizer.moments()[name] = mv;
        optimizer.set_step_count(loaded.extra.opt_step);
        start_epoch = loaded.extra.epoch;
    }

    const long steps_per_epoch =
        (static_cast<long>(train_set.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const long total_steps = steps_per_epoch * cfg.epochs;

    FitResult result;
    double best_objective = std::numeric_limits<double>::infinity();

    auto evaluate_and_log = [&](int epoch, double tl, double tlv, double tlt) {
        EpochLog log;
        log.epoch = epoch;
        log.train_loss = tl;
        log.train_loss_v = tlv;
        log.train_loss_t = tlt;
        log.val_f1_avg = cfg.lambda_v > 0.0 ? val_f1(val_set, model, cfg) : 0.0;
        log.val_nll_per_token = cfg.lambda_t > 0.0 ? val_nll(val_set, model) : 0.0;
        result.history.push_back(log);
        if (opts.on_epoch) opts.on_epoch(log);
        double objective = (cfg.lambda_v > 0.0 ? 1.0 - log.val_f1_avg : 0.0) +
                           (cfg.lambda_t > 0.0 ? log.val_nll_per_token : 0.0);
        if (objective < best_objective) {
            best_objective = objective;
            result.best_epoch = epoch;
            if (opts.checkpoint_path) {
                CheckpointExtra extra;
                extra.epoch = epoch + 1;
                extra.opt_step = optimizer.step_count();
                extra.metrics = {{"val_f1_avg", log.val_f1_avg},
                                 {"val_nll_per_token", log.val_nll_per_token}};
                save_checkpoint(*opts.checkpoint_path, model, &optimizer, extra);
            }
        }
    };

    if (cfg.epochs == 0) {
        if (opts.checkpoint_path) save_checkpoint(*opts.checkpoint_path, model, &optimizer, {});
        if (opts.last_checkpoint_path)
            save_checkpoint(*opts.last_checkpoint_path, model, &optimizer, {});
    }

    const int end_epoch =
        opts.epoch_limit ? std::min(cfg.epochs, *opts.epoch_limit) : cfg.epochs;
    for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
        // Epoch-local RNG keeps resumed runs on the same data order.
        Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(epoch) + 1);
        std::vector<size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        double sum_l = 0.0, sum_lv = 0.0, sum_lt = 0.0;
        long nb = 0;
        for (long b = 0; b < steps_per_epoch; ++b) {
            std::vector<const CorpusRecord*> batch;
            for (long i = b * cfg.batch_size;
                 i < std::min<long>((b + 1) * cfg.batch_size,
                                    static_cast<long>(train_set.size()));
                 ++i)
                batch.push_back(&train_set[order[static_cast<size_t>(i)]]);
            long global_step = static_cast<long>(epoch) * steps_per_epoch + b;
            double lr = lr_at(global_step, total_steps, cfg);
            StepLosses l = train_step(batch, model, optimizer, cfg, lr);
            sum_l += l.total;
            sum_lv += l.loss_v;
            sum_lt += l.loss_t;
            ++nb;
        }
        evaluate_and_log(epoch, sum_l / nb, sum_lv / nb, sum_lt / nb);
        if (opts.last_checkpoint_path) {
            CheckpointExtra extra;
            extra.epoch = epoch + 1;
            extra.opt_step = optimizer.step_count();
            save_checkpoint(*opts.last_checkpoint_path, model, &optimizer, extra);
        }
    }
    return result;
}

namespace {

void append_blocks(json& blocks, std::vector<const ad::Mat*>& mats, std::uint64_t& offset,
                   const std::string& prefix,
                   const std::vector<std::pair<std::string, ad::Var>>& items) {
    for (const auto& [name, p] : items) {
        json b;
        b["name"] = prefix + name;
        b["rows"] = p->value.rows();
        b["cols"] = p->value.cols();
        b["offset"] = offset;
        offset += static_cast<std::uint64_t>(p->value.size()) * sizeof(double);
        blocks.push_back(b);
        mats.push_back(&p->value);
    }
}

void write_mat(std::ofstream& out, const ad::Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double v = m(i, j);
            out.write(reinterpret_cast<const char*>(&v), sizeof(double));
        }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const AdamW* optimizer, const CheckpointExtra& extra) {
    json header;
    header["version"] = 1;
    header["enc"] = {{"d_vis", model.enc_cfg.d_vis},
                     {"n_tem", model.enc_cfg.n_tem},
                     {"max_len", model.enc_cfg.max_len},
                     {"ffn_mult", model.enc_cfg.ffn_mult},
                     {"sinusoidal", model.enc_cfg.sinusoidal_temporal},
                     {"seed", model.enc_cfg.seed}};
    header["vsum"] = {{"d_vis", model.vsum_cfg.d_vis},
                      {"window", model.vsum_cfg.window},
                      {"presoftmax_mask", model.vsum_cfg.presoftmax_mask},
                      {"seed", model.vsum_cfg.seed}};
    header["tsum"] = {{"d_txt", model.tsum_cfg.d_txt},
                      {"d_vis", model.tsum_cfg.d_vis},
                      {"n_tex", model.tsum_cfg.n_tex},
                      {"heads", model.tsum_cfg.heads},
                      {"ffn_mult", model.tsum_cfg.ffn_mult},
                      {"max_len", model.tsum_cfg.max_len},
                      {"seed", model.tsum_cfg.seed}};
    header["vocab"] = model.tsum->vocab().words();
    header["extra"] = {{"epoch", extra.epoch},
                       {"opt_step", extra.opt_step},
                       {"metrics", extra.metrics}};

    json blocks = json::array();
    std::vector<const ad::Mat*> mats;
    std::uint64_t offset = 0;
    append_blocks(blocks, mats, offset, "enc.", model.temporal->params().items);
    append_blocks(blocks, mats, offset, "vsum.", model.vsum->params().items);
    append_blocks(blocks, mats, offset, "tsum.", model.tsum->params().items);
    if (optimizer) {
        for (const auto& [name, mv] : const_cast<AdamW*>(optimizer)->moments()) {
            for (int which = 0; which < 2; ++which) {
                const ad::Mat& m = which == 0 ? mv.first : mv.second;
                json b;
                b["name"] = std::string(which == 0 ? "opt.m." : "opt.v.") + name;
                b["rows"] = m.rows();
                b["cols"] = m.cols();
                b["offset"] = offset;
                offset += static_cast<std::uint64_t>(m.size()) * sizeof(double);
                blocks.push_back(b);
                mats.push_back(&m);
            }
        }
    }
    header["blocks"] = blocks;

    std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
    out.write(kCheckpointMagic, 8);
    std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const ad::Mat* m : mats) write_mat(out, *m);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("load_checkpoint: bad magic");
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    json header = json::parse(hs);

    EncoderConfig enc;
    enc.d_vis = header["enc"]["d_vis"];
    enc.n_tem = header["enc"]["n_tem"];
    enc.max_len = header["enc"]["max_len"];
    enc.ffn_mult = header["enc"]["ffn_mult"];
    enc.sinusoidal_temporal = header["enc"]["sinusoidal"];
    enc.seed = header["enc"]["seed"];
    VsumConfig vs;
    vs.d_vis = header["vsum"]["d_vis"];
    vs.window = header["vsum"]["window"];
    vs.presoftmax_mask = header["vsum"]["presoftmax_mask"];
    vs.seed = header["vsum"]["seed"];
    TsumConfig ts;
    ts.d_txt = header["tsum"]["d_txt"];
    ts.d_vis = header["tsum"]["d_vis"];
    ts.n_tex = header["tsum"]["n_tex"];
    ts.heads = header["tsum"]["heads"];
    ts.ffn_mult = header["tsum"]["ffn_mult"];
    ts.max_len = header["tsum"]["max_len"];
    ts.seed = header["tsum"]["seed"];

    Vocabulary vocab;
    for (const auto& w : header["vocab"]) vocab.add(w.get<std::string>());

    LoadedCheckpoint loaded;
    loaded.model = Model::create(enc, vs, ts, std::move(vocab));
    loaded.extra.epoch = header["extra"]["epoch"];
    loaded.extra.opt_step = header["extra"]["opt_step"];
    for (const auto& [k, v] : header["extra"]["metrics"].items())
        loaded.extra.metrics[k] = v.get<double>();

    auto params = loaded.model.parameters();
    const std::uint64_t data_start = 8 + sizeof(std::uint64_t) + hlen;
    for (const auto& b : header["blocks"]) {
        std::string name = b["name"];
        Eigen::Index rows = b["rows"], cols = b["cols"];
        std::uint64_t offset = b["offset"];
        in.seekg(static_cast<std::streamoff>(data_start + offset));
        ad::Mat m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) {
                double v;
                in.read(reinterpret_cast<char*>(&v), sizeof(double));
                m(i, j) = v;
            }
        if (!in) throw std::runtime_error("load_checkpoint: truncated block " + name);
        if (name.rfind("opt.m.", 0) == 0) {
            loaded.moments[name.substr(6)].first = m;
        } else if (name.rfind("opt.v.", 0) == 0) {
            loaded.moments[name.substr(6)].second = m;
        } else {
            bool found = false;
            for (auto& [pname, p] : params)
                if (pname == name) {
                    p->value = m;
                    found = true;
                    break;
                }
            if (!found)
                throw std::runtime_error("load_checkpoint: unknown parameter block " + name);
        }
    }
    return loaded;
}

}  // namespace xsum
