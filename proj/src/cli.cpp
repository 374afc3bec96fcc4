#include "xsum/cli.hpp"

#include "xsum/dataset.hpp"
#include "xsum/metrics.hpp"
#include "xsum/synthetic.hpp"
#include "xsum/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace xsum::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void write_manifest(const fs::path& outdir, const std::vector<std::string>& args,
                    std::uint64_t seed, const std::string& config_text) {
    fs::create_directories(outdir);
    std::string joined;
    for (const auto& a : args) joined += a + '\x1f';
    joined += config_text;
    json m;
    m["command"] = args.empty() ? "" : args[0];
    m["argv"] = args;
    m["seed"] = seed;
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(fnv1a(joined)));
    m["config_hash"] = std::string(hex);
    m["version"] = kVersion;
    std::ofstream out(outdir / "manifest.json");
    out << m.dump(2) << "\n";
}

std::map<std::string, std::string> parse_config_file(const fs::path& path,
                                                     std::string& raw_text) {
    std::map<std::string, std::string> kv;
    std::ifstream in(path);
    if (!in) throw CLI::ValidationError("--config", "cannot open " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        raw_text += line + "\n";
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            size_t b = s.find_first_not_of(" \t\r");
            size_t e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
        if (!key.empty()) kv[key] = val;
    }
    return kv;
}

struct CommonOpts {
    std::string data;
    std::string features;
    std::string config;
    std::string checkpoint;
    std::string out = "runs/latest";
    std::uint64_t seed = 0;
    bool strict_spans = false;
};

LoadReport load_data(const CommonOpts& c) {
    LoadOptions opts;
    opts.strict_spans = c.strict_spans;
    if (!c.features.empty()) {
        opts.feature_dir = fs::path(c.features);
    } else if (const char* cache = std::getenv("XSUM_CACHE")) {
        fs::path root = fs::path(cache);
        if (fs::exists(root / "manifest.json")) opts.feature_dir = root;
    }
    return load_corpus(c.data, opts);
}

json histogram_json(const Histogram& h) {
    return {{"bin_edges", h.bin_edges},
            {"counts", h.counts},
            {"mean", h.mean},
            {"median", h.median}};
}

json stats_json(const CorpusStats& s) {
    return {{"num_records", s.num_records},
            {"video_length", histogram_json(s.video_length)},
            {"ratio", histogram_json(s.ratio)},
            {"text_length", histogram_json(s.text_length)},
            {"span_center", histogram_json(s.span_center)}};
}

void write_svg_histogram(const fs::path& file, const Histogram& h,
                         const std::string& title) {
    const int width = 640, height = 400, margin = 50;
    long max_count = 1;
    for (long c : h.counts) max_count = std::max(max_count, c);
    std::ofstream out(file);
    if (!out) throw std::runtime_error("emit_plots: cannot write " + file.string());
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='"
        << height << "'>\n";
    out << "<text x='" << width / 2 << "' y='24' text-anchor='middle' font-size='16'>"
        << title << "</text>\n";
    const double plot_w = width - 2.0 * margin, plot_h = height - 2.0 * margin;
    const size_t n = h.counts.size();
    for (size_t i = 0; i < n; ++i) {
        double x = margin + plot_w * static_cast<double>(i) / static_cast<double>(n);
        double bw = plot_w / static_cast<double>(n);
        double bh = plot_h * static_cast<double>(h.counts[i]) /
                    static_cast<double>(max_count);
        out << "<rect x='" << x << "' y='" << (margin + plot_h - bh) << "' width='"
            << bw * 0.9 << "' height='" << bh << "' fill='steelblue'/>\n";
    }
    out << "<line x1='" << margin << "' y1='" << margin + plot_h << "' x2='"
        << margin + plot_w << "' y2='" << margin + plot_h << "' stroke='black'/>\n";
    out << "<text x='" << margin << "' y='" << height - 12 << "' font-size='12'>"
        << h.bin_edges.front() << "</text>\n";
    out << "<text x='" << margin + plot_w << "' y='" << height - 12
        << "' text-anchor='end' font-size='12'>" << h.bin_edges.back() << "</text>\n";
    out << "</svg>\n";
}

TrainConfig config_from_map(const std::map<std::string, std::string>& kv) {
    TrainConfig cfg;
    auto get_d = [&](const char* k, double& dst) {
        auto it = kv.find(k);
        if (it != kv.end()) dst = std::stod(it->second);
    };
    auto get_i = [&](const char* k, int& dst) {
        auto it = kv.find(k);
        if (it != kv.end()) dst = std::stoi(it->second);
    };
    get_d("lambda_v", cfg.lambda_v);
    get_d("lambda_t", cfg.lambda_t);
    get_d("base_lr", cfg.base_lr);
    get_d("weight_decay", cfg.weight_decay);
    get_d("budget_ratio", cfg.budget_ratio);
    get_i("epochs", cfg.epochs);
    get_i("batch_size", cfg.batch_size);
    auto it = kv.find("seed");
    if (it != kv.end()) cfg.seed = std::stoull(it->second);
    return cfg;
}

int infer_d_vis(const std::vector<CorpusRecord>& records) {
    for (const auto& rec : records)
        if (rec.video.features) return static_cast<int>(rec.video.features->cols());
    throw std::runtime_error("no precomputed features found; pass --features or set XSUM_CACHE");
}

std::vector<int> keep_vector(const std::vector<int>& keep_idx, int t) {
    std::vector<int> keep(static_cast<size_t>(t), 0);
    for (int i : keep_idx) keep[static_cast<size_t>(i)] = 1;
    return keep;
}

GenerateOptions parse_decode(const std::string& decode, int max_gen_len) {
    GenerateOptions g;
    g.max_len = max_gen_len;
    if (decode == "greedy" || decode.empty()) {
        g.mode = DecodeMode::Greedy;
    } else if (decode.rfind("beam:", 0) == 0) {
        g.mode = DecodeMode::Beam;
        g.beam_width = std::stoi(decode.substr(5));
        if (g.beam_width < 1) throw CLI::ValidationError("--decode", "beam width must be >= 1");
    } else {
        throw CLI::ValidationError("--decode", "expected greedy or beam:k");
    }
    return g;
}

std::vector<const CorpusRecord*> pick_split(const std::vector<CorpusRecord>& records,
                                            const std::string& split) {
    std::vector<const CorpusRecord*> out;
    for (const auto& rec : records)
        if (split == "all" || rec.video.split == split) out.push_back(&rec);
    if (out.empty())
        for (const auto& rec : records) out.push_back(&rec);
    return out;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"VTSUM cross-modal video summarization toolkit"};
    app.require_subcommand(1);

    CommonOpts c;
    SplitSizes sizes;
    std::string sizes_str;
    double budget_ratio = kDefaultBudgetRatio;
    int window = kDefaultWindow;
    double lambda_v = -1.0, lambda_t = -1.0;
    int max_video_len = kMaxVideoLen;
    int max_gen_len = kMaxGenLen;
    int epochs_override = -1;
    std::string decode = "greedy";
    std::string split_name = "test";
    std::string dual_checkpoint;
    int ft_steps = 300;

    auto add_common = [&](CLI::App* cmd, bool need_data = true) {
        auto* d = cmd->add_option("--data", c.data, "Annotation JSONL file or corpus directory");
        if (need_data) d->required();
        cmd->add_option("--features", c.features,
                        "Feature store directory (default: $XSUM_CACHE)");
        cmd->add_option("--seed", c.seed, "Random seed");
        cmd->add_option("--out", c.out, "Output/run directory");
        cmd->add_option("--config", c.config, "key=value config file");
    };

    auto* validate = app.add_subcommand("validate", "Validate an annotation corpus");
    add_common(validate);
    validate->add_flag("--strict-spans", c.strict_spans,
                       "Reject overlapping annotator spans instead of merging");

    auto* stats = app.add_subcommand("stats", "Corpus statistics");
    add_common(stats);

    auto* split = app.add_subcommand("split", "Stratified train/val/test split");
    add_common(split);
    split->add_option("--sizes", sizes_str, "train,val,test sizes")->required();

    auto* train = app.add_subcommand("train", "Joint training of both decoders");
    add_common(train);
    train->add_option("--checkpoint", c.checkpoint, "Resume from checkpoint");
    train->add_option("--lambda-v", lambda_v, "Video-sum loss weight");
    train->add_option("--lambda-t", lambda_t, "Text-sum loss weight");
    train->add_option("--epochs", epochs_override, "Override epochs");
    train->add_option("--max-video-len", max_video_len, "Maximum video length");
    train->add_option("--window", window, "Local attention window");

    auto* summarize = app.add_subcommand("summarize", "Emit video + text summaries");
    add_common(summarize);
    summarize->add_option("--checkpoint", c.checkpoint, "Model checkpoint")->required();
    summarize->add_option("--budget-ratio", budget_ratio, "Summary budget ratio");
    summarize->add_option("--decode", decode, "greedy or beam:k");
    summarize->add_option("--max-gen-len", max_gen_len, "Maximum generation length");
    summarize->add_option("--split", split_name, "Split to summarize (train/val/test/all)");

    auto* evaluate = app.add_subcommand("evaluate", "Full evaluation report");
    add_common(evaluate);
    evaluate->add_option("--checkpoint", c.checkpoint, "Model checkpoint")->required();
    evaluate->add_option("--budget-ratio", budget_ratio, "Summary budget ratio");
    evaluate->add_option("--decode", decode, "greedy or beam:k");
    evaluate->add_option("--max-gen-len", max_gen_len, "Maximum generation length");
    evaluate->add_option("--split", split_name, "Split to evaluate");
    evaluate->add_option("--dual-checkpoint", dual_checkpoint,
                         "Dual encoder for VT-CLIPScore");

    auto* finetune = app.add_subcommand("finetune-score",
                                        "Contrastive dual-encoder finetuning");
    add_common(finetune);
    finetune->add_option("--steps", ft_steps, "Optimization steps");

    auto* plot = app.add_subcommand("plot", "Histogram images for corpus stats");
    add_common(plot);

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << e.what() << "\n\n" << app.help() << std::endl;
        return 2;
    }

    try {
        std::string config_text;
        std::map<std::string, std::string> config_kv;
        if (!c.config.empty()) config_kv = parse_config_file(c.config, config_text);

        if (*validate) {
            LoadReport rep = load_data(c);
            for (const auto& w : rep.warnings) std::cout << "warning: " << w << "\n";
            for (const auto& e : rep.errors) std::cout << "error: " << e << "\n";
            std::cout << rep.records.size() << " valid records, " << rep.errors.size()
                      << " errors, " << rep.warnings.size() << " warnings\n";
            if (!c.out.empty()) write_manifest(c.out, args, c.seed, config_text);
            return rep.errors.empty() ? 0 : 1;
        }

        if (*stats || *plot) {
            LoadReport rep = load_data(c);
            if (rep.records.empty()) throw std::runtime_error("no valid records");
            CorpusStats s = compute_stats(rep.records);
            fs::create_directories(c.out);
            write_manifest(c.out, args, c.seed, config_text);
            std::ofstream out(fs::path(c.out) / "stats.json");
            out << stats_json(s).dump(2) << "\n";
            if (*plot) {
                write_svg_histogram(fs::path(c.out) / "video_length.svg", s.video_length,
                                    "Video length (s)");
                write_svg_histogram(fs::path(c.out) / "ratio.svg", s.ratio,
                                    "Compression ratio");
                write_svg_histogram(fs::path(c.out) / "text_length.svg", s.text_length,
                                    "Text summary length (words)");
                write_svg_histogram(fs::path(c.out) / "span_center.svg", s.span_center,
                                    "Normalized span centers");
            }
            return 0;
        }

        if (*split) {
            LoadReport rep = load_data(c);
            std::istringstream iss(sizes_str);
            std::string tok;
            std::vector<size_t> nums;
            while (std::getline(iss, tok, ',')) nums.push_back(std::stoul(tok));
            if (nums.size() != 3)
                throw CLI::ValidationError("--sizes", "expected train,val,test");
            sizes = {nums[0], nums[1], nums[2]};
            SplitResult sr = split_corpus(rep.records, sizes, c.seed);
            fs::create_directories(c.out);
            write_manifest(c.out, args, c.seed, config_text);
            auto dump_ids = [&](const char* name, const std::vector<CorpusRecord>& rs) {
                std::ofstream out(fs::path(c.out) / (std::string(name) + ".txt"));
                for (const auto& r : rs) out << r.video.video_id << "\n";
            };
            dump_ids("train", sr.train);
            dump_ids("val", sr.val);
            dump_ids("test", sr.test);
            json summary = {{"train", sr.train.size()},
                            {"val", sr.val.size()},
                            {"test", sr.test.size()}};
            std::ofstream out(fs::path(c.out) / "split.json");
            out << summary.dump(2) << "\n";
            return 0;
        }

        if (*train) {
            LoadReport rep = load_data(c);
            if (rep.records.empty()) throw std::runtime_error("no valid records");
            TrainConfig cfg = config_from_map(config_kv);
            if (train->count("--seed")) cfg.seed = c.seed;
            if (lambda_v >= 0.0) cfg.lambda_v = lambda_v;
            if (lambda_t >= 0.0) cfg.lambda_t = lambda_t;
            if (epochs_override >= 0) cfg.epochs = epochs_override;
            cfg.validate();

            std::vector<CorpusRecord> train_set, val_set;
            for (auto& rec : rep.records) {
                if (rec.video.split == "val")
                    val_set.push_back(rec);
                else if (rec.video.split == "train")
                    train_set.push_back(rec);
            }
            if (train_set.empty()) train_set = rep.records;

            EncoderConfig enc;
            enc.d_vis = infer_d_vis(train_set);
            enc.max_len = max_video_len;
            enc.seed = cfg.seed;
            if (config_kv.count("n_tem")) enc.n_tem = std::stoi(config_kv["n_tem"]);
            VsumConfig vs;
            vs.d_vis = enc.d_vis;
            vs.window = window;
            vs.seed = cfg.seed;
            TsumConfig ts;
            ts.d_vis = enc.d_vis;
            ts.seed = cfg.seed;
            if (config_kv.count("d_txt")) ts.d_txt = std::stoi(config_kv["d_txt"]);
            if (config_kv.count("n_tex")) ts.n_tex = std::stoi(config_kv["n_tex"]);

            std::vector<std::string> texts;
            for (const auto& rec : train_set) texts.push_back(rec.refs.text_summary);
            Model model = Model::create(enc, vs, ts, Vocabulary::build(texts));

            fs::create_directories(c.out);
            write_manifest(c.out, args, cfg.seed, config_text);
            std::ofstream log(fs::path(c.out) / "metrics.jsonl");
            FitOptions fopts;
            fopts.checkpoint_path = fs::path(c.out) / "checkpoint.bin";
            fopts.last_checkpoint_path = fs::path(c.out) / "last.bin";
            if (!c.checkpoint.empty()) fopts.resume_from = fs::path(c.checkpoint);
            fopts.on_epoch = [&](const EpochLog& e) {
                json j = {{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"train_loss_v", e.train_loss_v},
                          {"train_loss_t", e.train_loss_t},
                          {"val_f1_avg", e.val_f1_avg},
                          {"val_nll_per_token", e.val_nll_per_token}};
                log << j.dump() << "\n";
                log.flush();
                std::cout << j.dump() << std::endl;
            };
            fit(train_set, val_set, model, cfg, fopts);
            return 0;
        }

        if (*summarize || *evaluate) {
            LoadReport rep = load_data(c);
            LoadedCheckpoint loaded = load_checkpoint(c.checkpoint);
            const Model& model = loaded.model;
            GenerateOptions gen = parse_decode(decode, max_gen_len);
            std::vector<const CorpusRecord*> subset = pick_split(rep.records, split_name);
            fs::create_directories(c.out);
            write_manifest(c.out, args, c.seed, config_text);

            if (*summarize) {
                std::ofstream sel(fs::path(c.out) / "selections.jsonl");
                std::ofstream txt(fs::path(c.out) / "summaries.jsonl");
                for (const CorpusRecord* rec : subset) {
                    Eigen::VectorXd p = model.score_frames_inference(rec->video);
                    std::vector<int> keep = select_topk(p, budget_ratio);
                    json js = {{"video_id", rec->video.video_id},
                               {"keep", keep},
                               {"scores", std::vector<double>(p.data(), p.data() + p.size())}};
                    sel << js.dump() << "\n";
                    std::string summary = model.summarize_text(rec->video, gen);
                    json jt = {{"video_id", rec->video.video_id},
                               {"summary", summary},
                               {"token_count", Vocabulary::normalize(summary).size()}};
                    txt << jt.dump() << "\n";
                }
                return 0;
            }

            // evaluate
            std::optional<metrics::DualEncoder> dual;
            std::optional<Vocabulary> dual_vocab;
            if (!dual_checkpoint.empty()) {
                dual = metrics::load_dual_encoder(dual_checkpoint);
                // Same construction as finetune-score: vocabulary over the
                // whole corpus, so token ids line up with the token table.
                std::vector<std::string> all_texts;
                for (const auto& rec : rep.records)
                    all_texts.push_back(rec.refs.text_summary);
                dual_vocab = Vocabulary::build(all_texts);
            }

            std::vector<std::vector<std::string>> ref_texts;
            for (const CorpusRecord* rec : subset)
                ref_texts.push_back(Vocabulary::normalize(rec->refs.text_summary));
            std::optional<metrics::CiderScorer> cider;
            if (ref_texts.size() >= 2) cider.emplace(ref_texts);

            metrics::EvalReport report;
            double vt_sum = 0.0;
            long vt_n = 0;
            for (size_t i = 0; i < subset.size(); ++i) {
                const CorpusRecord* rec = subset[i];
                const int t = rec->video.frame_count;
                Eigen::VectorXd p = model.score_frames_inference(rec->video);
                std::vector<int> keep_idx = select_topk(p, budget_ratio);
                std::vector<int> keep = keep_vector(keep_idx, t);
                std::vector<std::vector<int>> refs;
                for (const auto& ann : rec->refs.video_refs)
                    refs.push_back(spans_to_labels(ann, t));
                metrics::F1Pair f1 = metrics::f1_multi(keep, refs);
                metrics::RankCorr rc = metrics::rank_correlations(p, refs);

                std::string summary = model.summarize_text(rec->video, gen);
                std::vector<std::string> cand = Vocabulary::normalize(summary);
                double b4 = metrics::bleu4(cand, ref_texts[i]);
                double rl = metrics::rouge_l(cand, ref_texts[i]);
                double cd = cider ? cider->score(cand, ref_texts[i]) : 0.0;

                metrics::EvalReport::PerVideo pv;
                pv.video_id = rec->video.video_id;
                pv.f1_avg = f1.avg;
                pv.f1_max = f1.max;
                pv.tau = rc.kendall_tau;
                pv.rho = rc.spearman_rho;
                pv.bleu4 = b4;
                pv.rouge_l = rl;
                pv.cider = cd;
                report.per_video.push_back(pv);
                report.f1_avg += f1.avg;
                report.f1_max += f1.max;
                report.kendall_tau += rc.kendall_tau;
                report.spearman_rho += rc.spearman_rho;
                report.degenerate_rank_cases += rc.degenerate;
                report.bleu4 += b4;
                report.rouge_l += rl;
                report.cider += cd;

                if (dual && rec->video.features && !keep_idx.empty()) {
                    Eigen::MatrixXd sel_frames(static_cast<Eigen::Index>(keep_idx.size()),
                                               rec->video.features->cols());
                    for (size_t k = 0; k < keep_idx.size(); ++k)
                        sel_frames.row(static_cast<Eigen::Index>(k)) =
                            rec->video.features->row(keep_idx[k]);
                    std::vector<int> toks = dual_vocab->tokenize(summary);
                    for (int& id : toks)
                        if (id >= dual->config().vocab_size) id = Vocabulary::kUnk;
                    if (!toks.empty()) {
                        vt_sum += metrics::vt_clipscore(sel_frames, toks, *dual);
                        ++vt_n;
                    }
                }
            }
            const double n = static_cast<double>(subset.size());
            report.f1_avg = 100.0 * report.f1_avg / n;
            report.f1_max = 100.0 * report.f1_max / n;
            report.kendall_tau /= n;
            report.spearman_rho /= n;
            report.bleu4 = 100.0 * report.bleu4 / n;
            report.rouge_l = 100.0 * report.rouge_l / n;
            report.cider = 100.0 * report.cider / n;
            if (vt_n > 0) report.vt_clipscore = 100.0 * vt_sum / static_cast<double>(vt_n);

            json jr = {{"f1_avg", report.f1_avg},
                       {"f1_max", report.f1_max},
                       {"kendall_tau", report.kendall_tau},
                       {"spearman_rho", report.spearman_rho},
                       {"bleu4", report.bleu4},
                       {"rouge_l", report.rouge_l},
                       {"cider", report.cider},
                       {"degenerate_rank_cases", report.degenerate_rank_cases},
                       {"num_videos", subset.size()}};
            jr["vt_clipscore"] = report.vt_clipscore ? json(*report.vt_clipscore) : json();
            std::ofstream out(fs::path(c.out) / "report.json");
            out << jr.dump(2) << "\n";
            std::ofstream csv(fs::path(c.out) / "per_video.csv");
            csv << "video_id,f1_avg,f1_max,kendall_tau,spearman_rho,bleu4,rouge_l,cider\n";
            for (const auto& pv : report.per_video)
                csv << pv.video_id << ',' << pv.f1_avg << ',' << pv.f1_max << ',' << pv.tau
                    << ',' << pv.rho << ',' << pv.bleu4 << ',' << pv.rouge_l << ','
                    << pv.cider << "\n";
            std::cout << jr.dump(2) << std::endl;
            return 0;
        }

        if (*finetune) {
            LoadReport rep = load_data(c);
            if (rep.records.size() < 2)
                throw std::runtime_error("finetune-score: need at least 2 records");
            std::vector<std::string> texts;
            for (const auto& rec : rep.records) texts.push_back(rec.refs.text_summary);
            Vocabulary vocab = Vocabulary::build(texts);

            std::vector<metrics::ContrastivePair> pairs;
            int d_vis = infer_d_vis(rep.records);
            for (const auto& rec : rep.records) {
                if (!rec.video.features) continue;
                // reference summary frames: union over annotators
                std::vector<int> votes(static_cast<size_t>(rec.video.frame_count), 0);
                for (const auto& ann : rec.refs.video_refs) {
                    std::vector<int> lab = spans_to_labels(ann, rec.video.frame_count);
                    for (size_t i = 0; i < lab.size(); ++i) votes[i] += lab[i];
                }
                std::vector<int> keep_idx;
                for (size_t i = 0; i < votes.size(); ++i)
                    if (votes[i] * 2 >= kNumAnnotators) keep_idx.push_back(static_cast<int>(i));
                if (keep_idx.empty()) continue;
                metrics::ContrastivePair pair;
                pair.frames.resize(static_cast<Eigen::Index>(keep_idx.size()), d_vis);
                for (size_t k = 0; k < keep_idx.size(); ++k)
                    pair.frames.row(static_cast<Eigen::Index>(k)) =
                        rec.video.features->row(keep_idx[k]);
                pair.text_tokens = vocab.tokenize(rec.refs.text_summary);
                if (!pair.text_tokens.empty()) pairs.push_back(std::move(pair));
            }
            if (pairs.size() < 2)
                throw std::runtime_error("finetune-score: fewer than 2 usable pairs");

            metrics::DualEncoderConfig dcfg;
            dcfg.d_vis = d_vis;
            dcfg.seed = c.seed;
            dcfg.vocab_size = vocab.size();
            metrics::DualEncoder dual(dcfg);
            metrics::ContrastiveConfig ccfg;
            ccfg.steps = ft_steps;
            ccfg.seed = c.seed;
            ccfg.batch_size = std::min<int>(8, static_cast<int>(pairs.size()));
            double final_loss = metrics::finetune_dual_encoder(dual, pairs, ccfg);
            fs::create_directories(c.out);
            write_manifest(c.out, args, c.seed, config_text);
            metrics::save_dual_encoder(fs::path(c.out) / "dual_encoder.bin", dual);
            json j = {{"final_loss", final_loss}, {"pairs", pairs.size()}};
            std::ofstream out(fs::path(c.out) / "finetune.json");
            out << j.dump(2) << "\n";
            std::cout << j.dump() << std::endl;
            return 0;
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << std::endl;
        return 2;
    } catch (const std::exception& e) {
        json err = {{"error", e.what()}};
        std::cerr << err.dump() << std::endl;
        return 1;
    }
    return 2;
}

}  // namespace xsum::cli
