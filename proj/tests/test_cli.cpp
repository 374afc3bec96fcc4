#include "xsum/cli.hpp"
#include "xsum/dataset.hpp"
#include "xsum/synthetic.hpp"

#include <json.hpp>

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace xsum;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CorpusFixture {
    fs::path dir;
    CorpusFixture() {
        dir = fs::temp_directory_path() / "xsum_test_cli_corpus";
        if (!fs::exists(dir / "annotations.jsonl")) {
            SyntheticConfig cfg;
            cfg.n_videos = 20;
            cfg.seed = 77;
            write_synthetic_corpus(dir, cfg);
        }
    }
};

json read_json(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    return json::parse(in);
}

fs::path out_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("xsum_test_cli_" + tag);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("unknown flags and missing arguments exit with usage code 2") {
    CHECK(cli::run({"validate"}) == 2);                       // missing --data
    CHECK(cli::run({"validate", "--bogus", "x"}) == 2);       // unknown flag
    CHECK(cli::run({"frobnicate"}) == 2);                     // unknown command
    CHECK(cli::run({"evaluate", "--data", "x"}) == 2);        // missing --checkpoint
    CHECK(cli::run({}) == 2);
}

TEST_CASE("validate on a well-formed corpus exits 0 and writes a manifest") {
    CorpusFixture fx;
    fs::path out = out_dir("validate");
    CHECK(cli::run({"validate", "--data", fx.dir.string(), "--out", out.string()}) == 0);
    json manifest = read_json(out / "manifest.json");
    CHECK(manifest["command"] == "validate");
    CHECK(manifest.contains("config_hash"));
    CHECK(manifest.contains("seed"));
    CHECK(manifest.contains("version"));
}

TEST_CASE("validate on missing data exits 1") {
    CHECK(cli::run({"validate", "--data", "/nonexistent/path.jsonl"}) == 1);
}

TEST_CASE("stats and plot write sidecar plus histogram files") {
    CorpusFixture fx;
    fs::path out = out_dir("plot");
    CHECK(cli::run({"plot", "--data", fx.dir.string(), "--out", out.string()}) == 0);
    json stats = read_json(out / "stats.json");
    CHECK(stats["num_records"] == 20);
    for (const char* name :
         {"video_length.svg", "ratio.svg", "text_length.svg", "span_center.svg"})
        CHECK(fs::exists(out / name));
    // sidecar medians equal compute_stats medians
    LoadReport rep = load_corpus(fx.dir);
    CorpusStats s = compute_stats(rep.records);
    CHECK(stats["video_length"]["median"].get<double>() ==
          doctest::Approx(s.video_length.median));
    CHECK(stats["ratio"]["median"].get<double>() == doctest::Approx(s.ratio.median));
}

TEST_CASE("train with epochs 0 writes an initial checkpoint") {
    CorpusFixture fx;
    fs::path out = out_dir("train0");
    CHECK(cli::run({"train", "--data", fx.dir.string(), "--out", out.string(),
                    "--epochs", "0"}) == 0);
    CHECK(fs::exists(out / "checkpoint.bin"));
    CHECK(fs::exists(out / "manifest.json"));
}

TEST_CASE("full pipeline: train, summarize, evaluate") {
    CorpusFixture fx;
    fs::path tr = out_dir("train");
    CHECK(cli::run({"train", "--data", fx.dir.string(), "--out", tr.string(),
                    "--epochs", "1", "--seed", "5"}) == 0);
    REQUIRE(fs::exists(tr / "checkpoint.bin"));

    fs::path sum = out_dir("summarize");
    CHECK(cli::run({"summarize", "--data", fx.dir.string(), "--checkpoint",
                    (tr / "checkpoint.bin").string(), "--out", sum.string(),
                    "--split", "val", "--decode", "greedy"}) == 0);
    // selections parse and respect the budget law
    std::ifstream sel(sum / "selections.jsonl");
    std::string line;
    int rows = 0;
    while (std::getline(sel, line)) {
        json j = json::parse(line);
        size_t t = j["scores"].size();
        size_t want = std::max<size_t>(1, static_cast<size_t>(0.15 * t + 0.5));
        CHECK(j["keep"].size() == want);
        ++rows;
    }
    CHECK(rows == 2);  // 20 videos, 10% val

    fs::path ev = out_dir("evaluate");
    CHECK(cli::run({"evaluate", "--data", fx.dir.string(), "--checkpoint",
                    (tr / "checkpoint.bin").string(), "--out", ev.string(),
                    "--split", "val"}) == 0);
    json report = read_json(ev / "report.json");
    for (const char* key : {"f1_avg", "f1_max", "kendall_tau", "spearman_rho", "bleu4",
                            "rouge_l", "cider", "num_videos"})
        CHECK(report.contains(key));
    CHECK(fs::exists(ev / "per_video.csv"));

    // byte-identical JSON outputs on identical argv + seed + data
    fs::path ev2 = out_dir("evaluate2");
    CHECK(cli::run({"evaluate", "--data", fx.dir.string(), "--checkpoint",
                    (tr / "checkpoint.bin").string(), "--out", ev2.string(),
                    "--split", "val"}) == 0);
    std::ifstream a(ev / "report.json"), b(ev2 / "report.json");
    std::string sa((std::istreambuf_iterator<char>(a)), {});
    std::string sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
}

TEST_CASE("decode flag accepts beam:k and rejects junk") {
    CorpusFixture fx;
    fs::path tr = out_dir("trainbeam");
    REQUIRE(cli::run({"train", "--data", fx.dir.string(), "--out", tr.string(),
                      "--epochs", "0"}) == 0);
    fs::path out = out_dir("beam");
    CHECK(cli::run({"summarize", "--data", fx.dir.string(), "--checkpoint",
                    (tr / "checkpoint.bin").string(), "--out", out.string(),
                    "--split", "val", "--decode", "beam:2"}) == 0);
    CHECK(cli::run({"summarize", "--data", fx.dir.string(), "--checkpoint",
                    (tr / "checkpoint.bin").string(), "--out", out.string(),
                    "--split", "val", "--decode", "sideways"}) == 2);
}

TEST_CASE("split command partitions and reports sizes") {
    CorpusFixture fx;
    fs::path out = out_dir("split");
    CHECK(cli::run({"split", "--data", fx.dir.string(), "--out", out.string(),
                    "--sizes", "14,3,3", "--seed", "4"}) == 0);
    json j = read_json(out / "split.json");
    CHECK(j["train"] == 14);
    CHECK(j["val"] == 3);
    CHECK(j["test"] == 3);
    CHECK(fs::exists(out / "train.txt"));
    // bad sizes -> runtime failure, exit 1
    CHECK(cli::run({"split", "--data", fx.dir.string(), "--out", out.string(),
                    "--sizes", "1,1,1"}) == 1);
}

TEST_CASE("finetune-score saves a scorer usable by evaluate") {
    CorpusFixture fx;
    fs::path ft = out_dir("ft");
    CHECK(cli::run({"finetune-score", "--data", fx.dir.string(), "--out", ft.string(),
                    "--steps", "20", "--seed", "3"}) == 0);
    REQUIRE(fs::exists(ft / "dual_encoder.bin"));

    fs::path tr = out_dir("trainft");
    REQUIRE(cli::run({"train", "--data", fx.dir.string(), "--out", tr.string(),
                      "--epochs", "0"}) == 0);
    fs::path ev = out_dir("evalft");
    CHECK(cli::run({"evaluate", "--data", fx.dir.string(), "--checkpoint",
                    (tr / "checkpoint.bin").string(), "--out", ev.string(),
                    "--split", "val", "--dual-checkpoint",
                    (ft / "dual_encoder.bin").string()}) == 0);
    json report = read_json(ev / "report.json");
    CHECK(report["vt_clipscore"].is_number());
}
