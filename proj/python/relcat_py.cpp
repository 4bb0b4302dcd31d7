#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "relcat/config.hpp"
#include "relcat/pipeline.hpp"
#include "relcat/synthetic.hpp"

namespace py = pybind11;
using namespace relcat;

namespace {

// JSON text to Python objects through the stdlib json module, so nested
// records keep the exact shape documented for the JSONL files.
py::object from_json_text(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

py::list instance_list(const std::vector<RelationInstance>& instances) {
  py::list out;
  const std::string jl = instances_to_jsonl(instances);
  std::size_t start = 0;
  while (start < jl.size()) {
    const std::size_t nl = jl.find('\n', start);
    out.append(from_json_text(jl.substr(start, nl - start)));
    start = nl + 1;
  }
  return out;
}

py::dict stats_dict(const std::vector<RelationInstance>& instances) {
  py::dict out;
  for (const auto& [label, s] : dataset_stats(instances)) out[py::str(label)] = s.count;
  return out;
}

struct Dataset {
  PreparedData data;
  TextIndex texts;
};

struct TrainOutput {
  TrainedRun run;
  TextIndex texts;
};

py::dict prediction_dict(const RelModel& model, const Prediction& p) {
  py::dict probs;
  for (std::size_t k = 0; k < model.labels.size(); ++k) probs[py::str(model.labels.label(k))] = p.probabilities[k];
  py::dict out;
  out["label"] = model.labels.label(static_cast<std::size_t>(p.label_id));
  out["probabilities"] = probs;
  return out;
}

py::object evaluate_on(const RelModel& model, const std::vector<RelationInstance>& instances, const TextIndex& texts) {
  const auto encoded = encode_all(instances, texts, model.vocab, model.encoder, model.labels);
  return from_json_text(render_report(evaluate(model, encoded), ReportFormat::Json));
}

}  // namespace

PYBIND11_MODULE(_relcat, m) {
  m.doc() = "Relation classification between annotated entity pairs";

  auto base = py::register_exception<Error>(m, "RelcatError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  py::class_<RunConfig>(m, "Config")
      .def_property_readonly("run_dir", &RunConfig::run_dir)
      .def("dump", &dump_run_config, "Every key with its resolved value, as INI text")
      .def("__repr__", [](const RunConfig& c) { return "<relcat.Config run_dir='" + c.run_dir() + "'>"; });

  m.def(
      "load_config",
      [](const std::optional<std::string>& path, const std::vector<std::string>& overrides) {
        return path ? load_run_config_file(*path, overrides) : load_run_config("", overrides);
      },
      py::arg("path") = py::none(), py::arg("overrides") = std::vector<std::string>{},
      "Load an INI config (or the defaults) and apply section.key=value overrides");
  m.def("config_help", &config_help);

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("instances", [](const Dataset& d) { return instance_list(d.data.instances); })
      .def_property_readonly("n_documents", [](const Dataset& d) { return d.data.documents.size(); })
      .def_property_readonly("n_nonrelations", [](const Dataset& d) { return d.data.nonrelations; })
      .def("stats", [](const Dataset& d) { return stats_dict(d.data.instances); })
      .def("stats_text", [](const Dataset& d) { return render_stats(dataset_stats(d.data.instances)); })
      .def("instances_jsonl", [](const Dataset& d) { return instances_to_jsonl(d.data.instances); })
      .def("documents_jsonl", [](const Dataset& d) { return documents_to_jsonl(d.data.documents); })
      .def("__len__", [](const Dataset& d) { return d.data.instances.size(); });

  m.def(
      "prepare",
      [](const RunConfig& cfg) {
        py::gil_scoped_release release;
        Dataset d{prepare_dataset(cfg), {}};
        d.texts = index_texts(d.data.documents);
        return d;
      },
      py::arg("config"), "Parse the configured corpus and build gold and synthesized instances");

  py::class_<RelModel>(m, "Model")
      .def_property_readonly("labels", [](const RelModel& r) { return r.labels.labels(); })
      .def_property_readonly("vocab_size", [](const RelModel& r) { return r.vocab.size(); })
      .def(
          "predict",
          [](const RelModel& model, const std::string& text, std::pair<std::size_t, std::size_t> entity1,
             std::pair<std::size_t, std::size_t> entity2) {
            const Entity l = entity_at(text, entity1.first, entity1.second, "entity1");
            const Entity r = entity_at(text, entity2.first, entity2.second, "entity2");
            return prediction_dict(model, classify_pair(model, text, l, r));
          },
          py::arg("text"), py::arg("entity1"), py::arg("entity2"),
          "Classify the directed pair entity1 -> entity2, given as (start, end) scalar offsets")
      .def(
          "evaluate",
          [](const RelModel& model, const Dataset& d) { return evaluate_on(model, d.data.instances, d.texts); },
          py::arg("dataset"), "Score the model on every instance of a dataset; returns the JSON report")
      .def("save", [](const RelModel& model, const std::string& path) { save_model(model, path); }, py::arg("path"));

  m.def(
      "load_model", [](const std::string& path) { return load_model(path).model; }, py::arg("path"));

  py::class_<TrainOutput>(m, "TrainOutput")
      .def_property_readonly("model", [](const TrainOutput& t) { return t.run.result.model; })
      .def_property_readonly("best_epoch", [](const TrainOutput& t) { return t.run.result.best_epoch; })
      .def_property_readonly("log",
                             [](const TrainOutput& t) {
                               py::list out;
                               const std::string jl = training_log_jsonl(t.run.result.log);
                               std::size_t start = 0;
                               while (start < jl.size()) {
                                 const std::size_t nl = jl.find('\n', start);
                                 out.append(from_json_text(jl.substr(start, nl - start)));
                                 start = nl + 1;
                               }
                               return out;
                             })
      .def_property_readonly("test_instances", [](const TrainOutput& t) { return instance_list(t.run.test_set); })
      .def("evaluate_test", [](const TrainOutput& t) {
        return evaluate_on(t.run.result.model, t.run.test_set, t.texts);
      });

  m.def(
      "train",
      [](const RunConfig& cfg, const Dataset& d) {
        py::gil_scoped_release release;
        return TrainOutput{train_run(cfg, d.data.instances, d.texts), d.texts};
      },
      py::arg("config"), py::arg("dataset"), "Split, build the vocabulary and train as configured");

  m.def(
      "synth_corpus",
      [](const std::string& out_dir, std::size_t per_label, std::uint64_t seed, bool unicode) {
        SyntheticCorpusSpec spec;
        for (const auto& l : synthetic_labels()) spec.relations_per_label[l] = per_label;
        spec.seed = seed;
        spec.unicode_filler = unicode;
        const auto docs = generate_synthetic_corpus(spec);
        write_standoff_corpus(docs, out_dir);
        return docs.size();
      },
      py::arg("out_dir"), py::arg("per_label") = 50, py::arg("seed") = 7, py::arg("unicode") = false,
      "Write a seeded synthetic brat corpus; returns the number of documents");

  m.def(
      "tokenize",
      [](const std::string& text, bool lowercase) {
        std::vector<std::tuple<std::string, std::size_t, std::size_t>> out;
        for (auto& t : tokenize(text, lowercase)) out.emplace_back(t.text, t.start, t.end);
        return out;
      },
      py::arg("text"), py::arg("lowercase") = true);

  m.def("categories", &n2c2_categories, "Category order used by the built-in prompt templates");
  m.def(
      "render_prompt",
      [](const std::string& style, const std::string& tokens, const std::string& entity1, const std::string& entity2,
         const std::vector<std::tuple<std::string, std::string, std::string, std::size_t>>& shots) {
        std::vector<FewShotExample> fs;
        for (const auto& [t, a, b, idx] : shots) fs.push_back({t, a, b, idx});
        return render_prompt(PromptTemplate::builtin(parse_template_style(style)), tokens, entity1, entity2, fs);
      },
      py::arg("style"), py::arg("tokens"), py::arg("entity1"), py::arg("entity2"),
      py::arg("shots") = std::vector<std::tuple<std::string, std::string, std::string, std::size_t>>{});
  m.def(
      "parse_label",
      [](const std::string& response, const std::optional<std::vector<std::string>>& categories) {
        return parse_label(response, categories ? *categories : n2c2_categories());
      },
      py::arg("response"), py::arg("categories") = py::none());
  m.def("mock_llm_reply", &mock_llm_reply, py::arg("prompt"));

  m.def(
      "compute_report",
      [](const std::vector<std::string>& labels, const std::vector<int>& gold, const std::vector<int>& pred,
         const std::string& format) -> py::object {
        const auto fmt = parse_report_format(format);
        const std::string out = render_report(compute_report(labels, gold, pred), fmt);
        if (fmt == ReportFormat::Json) return from_json_text(out);
        return py::str(out);
      },
      py::arg("labels"), py::arg("gold"), py::arg("pred"), py::arg("format") = "json",
      "Per-class and macro metrics; a negative prediction counts as a reject");
}
