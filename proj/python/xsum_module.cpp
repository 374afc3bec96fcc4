#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "xsum/cli.hpp"
#include "xsum/dataset.hpp"
#include "xsum/metrics.hpp"
#include "xsum/synthetic.hpp"
#include "xsum/trainer.hpp"

namespace py = pybind11;
using namespace xsum;

PYBIND11_MODULE(_xsum, m) {
    m.doc() = "Cross-modal video summarization core";

    py::class_<Span>(m, "Span")
        .def(py::init<>())
        .def(py::init([](int s, int e) { return Span{s, e}; }))
        .def_readwrite("start", &Span::start)
        .def_readwrite("end", &Span::end)
        .def("__eq__", [](const Span& a, const Span& b) { return a == b; })
        .def("__repr__", [](const Span& s) {
            return "Span(" + std::to_string(s.start) + ", " + std::to_string(s.end) + ")";
        });

    m.def("normalize_spans", &normalize_spans, py::arg("spans"));
    m.def("labels_to_spans", &labels_to_spans, py::arg("labels"));
    m.def(
        "spans_to_labels",
        [](const std::vector<Span>& spans, int t) {
            SpanAnnotation ann;
            ann.spans = spans;
            return spans_to_labels(ann, t);
        },
        py::arg("spans"), py::arg("t"));
    m.def("compression_ratio", &compression_ratio, py::arg("summary_frames"),
          py::arg("video_frames"));

    m.def(
        "validate_corpus",
        [](const std::string& path, bool strict_spans) {
            LoadOptions opts;
            opts.strict_spans = strict_spans;
            LoadReport rep = load_corpus(path, opts);
            py::dict out;
            out["num_records"] = rep.records.size();
            out["errors"] = rep.errors;
            out["warnings"] = rep.warnings;
            return out;
        },
        py::arg("path"), py::arg("strict_spans") = false);

    m.def(
        "write_synthetic_corpus",
        [](const std::string& dir, int n_videos, int d_vis, std::uint64_t seed) {
            SyntheticConfig cfg;
            cfg.n_videos = n_videos;
            cfg.d_vis = d_vis;
            cfg.seed = seed;
            write_synthetic_corpus(dir, cfg);
        },
        py::arg("dir"), py::arg("n_videos") = 32, py::arg("d_vis") = 16,
        py::arg("seed") = 0);

    m.def("build_local_mask", &build_local_mask, py::arg("t"), py::arg("eps"));
    m.def("summary_budget", &summary_budget, py::arg("t"),
          py::arg("budget_ratio") = kDefaultBudgetRatio);
    m.def("select_topk", &select_topk, py::arg("scores"),
          py::arg("budget_ratio") = kDefaultBudgetRatio);
    m.def("vsum_loss", &vsum_loss, py::arg("p"), py::arg("labels"),
          py::arg("mask") = std::vector<int>{});

    m.def("f1_frames", &metrics::f1_frames, py::arg("pred"), py::arg("ref"));
    m.def(
        "f1_multi",
        [](const std::vector<int>& pred, const std::vector<std::vector<int>>& refs) {
            metrics::F1Pair p = metrics::f1_multi(pred, refs);
            return py::make_tuple(p.avg, p.max);
        },
        py::arg("pred"), py::arg("refs"));
    m.def(
        "leave_one_out",
        [](const std::vector<std::vector<int>>& refs) {
            metrics::F1Pair p = metrics::leave_one_out(refs);
            return py::make_tuple(p.avg, p.max);
        },
        py::arg("refs"));
    m.def("kendall_tau_b", &metrics::kendall_tau_b, py::arg("x"), py::arg("y"));
    m.def("spearman_rho", &metrics::spearman_rho, py::arg("x"), py::arg("y"));
    m.def("bleu4", &metrics::bleu4, py::arg("candidate"), py::arg("reference"));
    m.def("rouge_l", &metrics::rouge_l, py::arg("candidate"), py::arg("reference"),
          py::arg("beta") = 1.2);

    py::class_<metrics::CiderScorer>(m, "CiderScorer")
        .def(py::init<const std::vector<std::vector<std::string>>&>(),
             py::arg("references"))
        .def("score", &metrics::CiderScorer::score, py::arg("candidate"),
             py::arg("reference"));

    m.def("normalize_text", &Vocabulary::normalize, py::arg("text"));

    m.def(
        "lr_at",
        [](long step, long total_steps, double base_lr) {
            TrainConfig cfg;
            cfg.base_lr = base_lr;
            return lr_at(step, total_steps, cfg);
        },
        py::arg("step"), py::arg("total_steps"), py::arg("base_lr") = 2e-5);

    m.def("run_cli", &cli::run, py::arg("args"),
          "Run the command-line interface; returns the exit code.");

    m.attr("NUM_ANNOTATORS") = kNumAnnotators;
    m.attr("RATIO_THRESHOLD") = kRatioThreshold;
    m.attr("MAX_VIDEO_LEN") = kMaxVideoLen;
    m.attr("MAX_GEN_LEN") = kMaxGenLen;
    m.attr("DEFAULT_BUDGET_RATIO") = kDefaultBudgetRatio;
    m.attr("DEFAULT_WINDOW") = kDefaultWindow;
    m.attr("PROMPT") = kPrompt;
}
