#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "mgan/attention.hpp"
#include "mgan/checkpoint.hpp"
#include "mgan/cli.hpp"
#include "mgan/eval.hpp"
#include "mgan/gradcheck_suite.hpp"
#include "mgan/losses.hpp"

namespace py = pybind11;
using namespace mgan;

namespace {

std::vector<double> to_list(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::vector<Sentiment> to_labels(const std::vector<int>& xs) {
  std::vector<Sentiment> out;
  out.reserve(xs.size());
  for (int x : xs) {
    if (x < 0 || x > 2) throw py::value_error("sentiment labels are 0, 1 or 2, got " + std::to_string(x));
    out.push_back(static_cast<Sentiment>(x));
  }
  return out;
}

Tensor to_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw py::value_error("empty matrix");
  Tensor t({rows.size(), rows.front().size()});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != t.cols()) throw py::value_error("ragged matrix");
    for (std::size_t c = 0; c < t.cols(); ++c) t.at(r, c) = rows[r][c];
  }
  return t;
}

py::dict source_dict(const SourceExample& e) {
  py::dict d;
  d["context"] = e.context;
  d["aspect"] = e.aspect;
  d["category"] = e.category;
  d["sentiment"] = std::string(to_string(e.sentiment));
  return d;
}

py::dict target_dict(const TargetExample& e) {
  py::dict d;
  d["context"] = e.context;
  d["span_start"] = e.span_start;
  d["span_len"] = e.span_len;
  d["sentiment"] = std::string(to_string(e.sentiment));
  return d;
}

// A checkpointed network plus its vocabulary.
class Model {
 public:
  explicit Model(const std::filesystem::path& path) : ckpt_(load_checkpoint(path)) {}

  std::string kind() const { return std::string(to_string(ckpt_.network.kind())); }
  std::size_t vocab_size() const { return ckpt_.vocab.size(); }
  std::vector<std::string> categories() const { return ckpt_.categories; }

  std::vector<std::string> predict_target(const std::vector<Tokens>& contexts,
                                          const std::vector<std::pair<std::size_t, std::size_t>>& spans) {
    if (contexts.size() != spans.size()) throw py::value_error("one span per sentence");
    std::vector<TargetExample> ex(contexts.size());
    for (std::size_t i = 0; i < ex.size(); ++i) {
      ex[i].context = contexts[i];
      ex[i].span_start = spans[i].first;
      ex[i].span_len = spans[i].second;
      validate(ex[i]);
    }
    return names(predict(ckpt_.network, std::span<const TargetExample>(ex), ckpt_.vocab));
  }

  py::dict trace(const Tokens& context, std::size_t span_start, std::size_t span_len) {
    TargetExample ex{context, span_start, span_len, Sentiment::neutral};
    validate(ex);
    const AttentionTrace t = extract_trace(ckpt_.network, ckpt_.vocab, ex);
    py::dict d;
    d["alpha"] = t.alpha;
    d["gamma"] = t.gamma;
    d["p"] = t.p;
    d["prediction"] = std::string(to_string(t.prediction));
    d["probabilities"] = t.probabilities;
    return d;
  }

 private:
  static std::vector<std::string> names(const std::vector<Sentiment>& s) {
    std::vector<std::string> out;
    for (Sentiment x : s) out.emplace_back(to_string(x));
    return out;
  }

  Checkpoint ckpt_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-granularity alignment network core";

  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<LoadError>(m, "LoadError", PyExc_OSError);

  m.def(
      "position_relevance_target",
      [](std::size_t n, std::size_t m0, std::size_t len, bool literal) {
        return to_list(position_relevance_target(n, m0, len, literal));
      },
      py::arg("n"), py::arg("m0"), py::arg("m"), py::arg("literal") = true,
      "Proximity weights for a sentence of length n with the term at [m0, m0+m).");
  m.def(
      "position_relevance_source",
      [](const std::vector<double>& beta) { return to_list(position_relevance_source(beta)); }, py::arg("beta"));
  m.def(
      "contrastive_omega",
      [](const std::vector<double>& u, const std::vector<double>& v, bool same, double margin) {
        return contrastive_omega(u, v, same, margin);
      },
      py::arg("u"), py::arg("v"), py::arg("same_label"), py::arg("margin") = 1.0);
  m.def(
      "cfa_loss",
      [](const std::vector<std::vector<double>>& s, const std::vector<int>& ls,
         const std::vector<std::vector<double>>& t, const std::vector<int>& lt, double margin) {
        return cfa_loss_value(to_matrix(s), to_labels(ls), to_matrix(t), to_labels(lt), margin);
      },
      py::arg("source_reps"), py::arg("source_labels"), py::arg("target_reps"), py::arg("target_labels"),
      py::arg("margin") = 1.0);
  m.def(
      "cross_entropy",
      [](const std::vector<double>& logits, std::size_t label) { return cross_entropy_value(logits, label); },
      py::arg("logits"), py::arg("label"));
  m.def(
      "macro_f1",
      [](const std::vector<int>& gold, const std::vector<int>& pred) {
        return macro_f1(make_confusion(to_labels(gold), to_labels(pred)));
      },
      py::arg("gold"), py::arg("predicted"), "Labels: 0 positive, 1 neutral, 2 negative.");
  m.def(
      "accuracy",
      [](const std::vector<int>& gold, const std::vector<int>& pred) {
        return accuracy(make_confusion(to_labels(gold), to_labels(pred)));
      },
      py::arg("gold"), py::arg("predicted"));

  m.def(
      "gen_synthetic",
      [](std::size_t source_size, std::size_t target_size, std::uint64_t seed) {
        SynthConfig sc = default_synth_config();
        sc.source_size = source_size;
        sc.target_size = target_size;
        const SynthCorpora c = gen_synthetic(sc, seed);
        py::dict out;
        py::list src, tgt, man;
        for (const auto& e : c.source.examples) src.append(source_dict(e));
        for (const auto& e : c.target.examples) tgt.append(target_dict(e));
        for (const auto& s : c.source_manifest) man.append(py::make_tuple(s.start, s.length));
        out["categories"] = c.source.categories;
        out["source"] = src;
        out["target"] = tgt;
        out["source_manifest"] = man;
        return out;
      },
      py::arg("source_size") = 1000, py::arg("target_size") = 200, py::arg("seed") = 1);

  m.def(
      "gradcheck",
      [](std::uint64_t seed, bool full) {
        GradCheckSuiteOptions opt;
        opt.seed = seed;
        opt.full = full;
        py::list out;
        for (const auto& c : run_gradcheck_suite(opt)) {
          py::dict d;
          d["case"] = c.name;
          d["max_rel_error"] = c.report.max_resolved_rel_error;
          d["raw_max_rel_error"] = c.report.max_rel_error;
          d["entries"] = c.report.entries_checked;
          d["passed"] = c.report.passed();
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 7, py::arg("full") = false);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line front end; returns (exit_code, stdout, stderr).");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::filesystem::path&>(), py::arg("path"))
      .def_property_readonly("kind", &Model::kind)
      .def_property_readonly("vocab_size", &Model::vocab_size)
      .def_property_readonly("categories", &Model::categories)
      .def("predict_target", &Model::predict_target, py::arg("contexts"), py::arg("spans"))
      .def("trace", &Model::trace, py::arg("context"), py::arg("span_start"), py::arg("span_len"));
}
