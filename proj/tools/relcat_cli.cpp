#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "relcat/pipeline.hpp"
#include "relcat/synthetic.hpp"

namespace fs = std::filesystem;
using namespace relcat;
using nlohmann::ordered_json;

namespace {

struct Args {
  std::string config;
  std::vector<std::string> sets;
  std::string model;
  std::string instances;
  std::string documents;
  std::string input;
  std::string format = "text";
  std::string shots_from;
  bool zero_shot = false;
  std::string synth_out;
  std::size_t synth_per_label = 250;
  std::uint64_t synth_seed = 7;
  bool synth_unicode = false;
};

RunConfig load_config(const Args& a) {
  if (a.config.empty()) return load_run_config("", a.sets);
  return load_run_config_file(a.config, a.sets);
}

std::string in_run(const RunConfig& cfg, const std::string& given, const std::string& name) {
  return given.empty() ? (fs::path(cfg.run_dir()) / name).string() : given;
}

void write_run_file(const RunConfig& cfg, const std::string& name, const std::string& content) {
  fs::create_directories(cfg.run_dir());
  write_file_atomic((fs::path(cfg.run_dir()) / name).string(), content);
}

int cmd_prepare(const Args& a) {
  const RunConfig cfg = load_config(a);
  const PreparedData data = prepare_dataset(cfg);
  const std::string stats = render_stats(dataset_stats(data.instances));
  write_run_file(cfg, "documents.jsonl", documents_to_jsonl(data.documents));
  write_run_file(cfg, "instances.jsonl", instances_to_jsonl(data.instances));
  write_run_file(cfg, "stats.txt", stats);
  std::cout << stats;
  std::cerr << data.documents.size() << " documents, " << data.instances.size() << " instances ("
            << data.nonrelations << " synthesized non-relations); dropped: " << data.dropped.unvalidated
            << " unvalidated, " << data.dropped.discontinuous << " discontinuous, " << data.dropped.distance
            << " distance, " << data.dropped.type_pair << " type pair\n"
            << "wrote " << cfg.run_dir() << "\n";
  return 0;
}

int cmd_stats(const Args& a) {
  const RunConfig cfg = load_config(a);
  const auto inst = instances_from_jsonl(read_file(in_run(cfg, a.instances, "instances.jsonl")));
  std::cout << render_stats(dataset_stats(inst));
  return 0;
}

int cmd_train(const Args& a) {
  const RunConfig cfg = load_config(a);
  const auto all = instances_from_jsonl(read_file(in_run(cfg, a.instances, "instances.jsonl")));
  const TextIndex texts = index_texts(documents_from_jsonl(read_file(in_run(cfg, a.documents, "documents.jsonl"))));
  const TrainedRun run = train_run(cfg, all, texts);
  const TrainResult& result = run.result;
  if (run.skipped) std::cerr << "skipped " << run.skipped << " instances that do not fit max_seq_len\n";
  write_run_file(cfg, "train_instances.jsonl", instances_to_jsonl(run.train_set));
  write_run_file(cfg, "test_instances.jsonl", instances_to_jsonl(run.test_set));
  write_run_file(cfg, "vocab.txt", run.vocab.serialize());
  write_run_file(cfg, "train_log.jsonl", training_log_jsonl(result.log));
  write_run_file(cfg, "config.ini", dump_run_config(cfg));
  fs::create_directories(cfg.run_dir());
  save_model(result.model, in_run(cfg, a.model, "model.bin"));
  for (const auto& e : result.log)
    std::cerr << "epoch " << e.epoch << " loss " << e.train_loss << " dev_macro_f1 " << e.dev_macro_f1 << "\n";
  std::cerr << "best epoch " << result.best_epoch << "; wrote " << in_run(cfg, a.model, "model.bin") << "\n";
  return 0;
}

int cmd_evaluate(const Args& a) {
  const RunConfig cfg = load_config(a);
  const ReportFormat fmt = parse_report_format(a.format);
  const std::string model_path = in_run(cfg, a.model, "model.bin");
  if (!fs::exists(model_path)) throw Error("model file not found: " + model_path);
  const RelModel model = load_model(model_path).model;
  const auto inst = instances_from_jsonl(read_file(in_run(cfg, a.instances, "test_instances.jsonl")));
  const TextIndex texts = index_texts(documents_from_jsonl(read_file(in_run(cfg, a.documents, "documents.jsonl"))));
  for (const auto& i : inst)
    if (model.labels.id(i.label) < 0) throw Error("label '" + i.label + "' is not in the model's label space");
  std::size_t skipped = 0;
  const auto encoded = encode_all(inst, texts, model.vocab, model.encoder, model.labels, &skipped);
  if (skipped) std::cerr << "skipped " << skipped << " instances that do not fit max_seq_len\n";
  const std::string report = render_report(evaluate(model, encoded), fmt);
  write_run_file(cfg, std::string("report.") + (fmt == ReportFormat::Text ? "txt" : fmt == ReportFormat::Json ? "json" : "csv"),
                 report);
  std::cout << report;
  return 0;
}

Entity entity_from_json(const nlohmann::json& j, const std::string& text, const std::string& name) {
  if (!j.is_object()) throw Error("predict input: '" + name + "' must be an object with start/end");
  Entity e = entity_at(text, j.at("start").get<std::size_t>(), j.at("end").get<std::size_t>(), j.value("id", name));
  e.cui = j.value("cui", "");
  e.tui = j.value("tui", "");
  return e;
}

// Input: one JSON object per line, {"text": ..., "entity1": {"start", "end"}, "entity2": {...}}.
int cmd_predict(const Args& a) {
  const RunConfig cfg = load_config(a);
  if (a.input.empty()) throw Error("predict needs --input");
  const RelModel model = load_model(in_run(cfg, a.model, "model.bin")).model;
  const std::string content = read_file(a.input);
  std::size_t line_no = 0, start = 0;
  std::string out;
  while (start < content.size()) {
    std::size_t nl = content.find('\n', start);
    if (nl == std::string::npos) nl = content.size();
    const std::string line = content.substr(start, nl - start);
    start = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
    }
    RelationInstance inst;
    std::string text;
    try {
      text = j.at("text").get<std::string>();
      inst.left = entity_from_json(j.at("entity1"), text, "entity1");
      inst.right = entity_from_json(j.at("entity2"), text, "entity2");
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("predict input: ") + e.what(), line_no);
    }
    inst.doc_id = j.value("doc_id", "input");
    const Prediction p = classify_pair(model, text, inst.left, inst.right);
    ordered_json r;
    r["doc_id"] = inst.doc_id;
    r["label"] = model.labels.label(static_cast<std::size_t>(p.label_id));
    ordered_json probs = ordered_json::object();
    for (std::size_t k = 0; k < model.labels.size(); ++k) probs[model.labels.label(k)] = p.probabilities[k];
    r["probabilities"] = probs;
    out += r.dump() + "\n";
  }
  std::cout << out;
  return 0;
}

int cmd_icl_eval(const Args& a) {
  RunConfig cfg = load_config(a);
  if (a.zero_shot) cfg.icl.settings.shots_per_class = 0;
  const TextIndex texts = index_texts(documents_from_jsonl(read_file(in_run(cfg, a.documents, "documents.jsonl"))));
  const auto& cats = n2c2_categories();
  auto keep = [&](std::vector<RelationInstance> v) {
    std::vector<RelationInstance> out;
    for (auto& i : v)
      if (std::find(cats.begin(), cats.end(), i.label) != cats.end()) out.push_back(std::move(i));
    return out;
  };
  const auto all = instances_from_jsonl(read_file(in_run(cfg, a.instances, "test_instances.jsonl")));
  const auto inst = keep(all);
  if (inst.size() != all.size())
    std::cerr << "ignoring " << all.size() - inst.size() << " instances outside the prompt categories\n";
  std::vector<RelationInstance> pool;
  if (cfg.icl.settings.shots_per_class > 0)
    pool = keep(instances_from_jsonl(read_file(in_run(cfg, a.shots_from, "train_instances.jsonl"))));

  HttpInferenceClient client(cfg.icl.endpoint, std::chrono::milliseconds(cfg.icl.timeout_ms));
  const PromptTemplate tmpl = PromptTemplate::builtin(cfg.icl.template_style);
  IclResult result;
  try {
    result = icl_evaluate(icl_examples(inst, texts, cfg.encoder), icl_examples(pool, texts, cfg.encoder), tmpl, client,
                          cfg.icl.settings);
  } catch (const IclRunFailed& e) {
    write_run_file(cfg, "icl_records.jsonl", icl_records_jsonl(e.result.records));
    throw;
  }
  const std::string run_name = cfg.icl.settings.shots_per_class == 0 ? "Zero-shot" : "Few-shot";
  std::string report = render_report(result.report, parse_report_format(a.format));
  if (parse_report_format(a.format) == ReportFormat::Text)
    report += "\n" + render_recall_table({{run_name, result.report}}) + "unparseable: " +
              std::to_string(result.unparseable) + "\nfailed: " + std::to_string(result.failed) + "\n";
  write_run_file(cfg, "icl_records.jsonl", icl_records_jsonl(result.records));
  write_run_file(cfg, "icl_report.txt", report);
  std::cout << report;
  return 0;
}

int cmd_synth(const Args& a) {
  if (a.synth_out.empty()) throw Error("synth needs --out");
  SyntheticCorpusSpec spec;
  for (const auto& l : synthetic_labels()) spec.relations_per_label[l] = a.synth_per_label;
  spec.seed = a.synth_seed;
  spec.unicode_filler = a.synth_unicode;
  const auto docs = generate_synthetic_corpus(spec);
  write_standoff_corpus(docs, a.synth_out);
  std::cerr << "wrote " << docs.size() << " documents to " << a.synth_out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relation classification toolkit"};
  app.footer("\n" + config_help() + "\nExit codes: 0 success, 1 user error, 2 internal error.");
  app.require_subcommand(1);
  Args a;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", a.config, "INI config file");
    sub->add_option("--set", a.sets, "override, section.key=value (repeatable)");
  };
  auto io = [&](CLI::App* sub, const char* inst_default) {
    sub->add_option("--instances", a.instances, std::string("instances JSONL (default: <run>/") + inst_default + ")");
    sub->add_option("--documents", a.documents, "documents JSONL (default: <run>/documents.jsonl)");
  };

  auto* prepare = app.add_subcommand("prepare", "parse the corpus and write instances, documents and stats");
  common(prepare);
  auto* stats = app.add_subcommand("stats", "print label and type-pair counts of an instance file");
  common(stats);
  stats->add_option("--instances", a.instances, "instances JSONL (default: <run>/instances.jsonl)");
  auto* train_cmd = app.add_subcommand("train", "split, build the vocabulary and train a model");
  common(train_cmd);
  io(train_cmd, "instances.jsonl");
  train_cmd->add_option("--model", a.model, "output model (default: <run>/model.bin)");
  auto* eval = app.add_subcommand("evaluate", "score a model on an instance file");
  common(eval);
  io(eval, "test_instances.jsonl");
  eval->add_option("--model", a.model, "model file (default: <run>/model.bin)");
  eval->add_option("--format", a.format, "text | json | csv");
  auto* pred = app.add_subcommand("predict", "classify entity pairs given as JSON lines");
  common(pred);
  pred->add_option("--model", a.model, "model file (default: <run>/model.bin)");
  pred->add_option("--input", a.input, "JSONL of {text, entity1:{start,end}, entity2:{start,end}}")->required();
  auto* icl = app.add_subcommand("icl-eval", "prompt a text-generation endpoint and score its answers");
  common(icl);
  io(icl, "test_instances.jsonl");
  icl->add_option("--shots-from", a.shots_from, "few-shot pool (default: <run>/train_instances.jsonl)");
  icl->add_flag("--zero-shot", a.zero_shot, "no examples in the prompt");
  icl->add_option("--format", a.format, "text | json | csv");
  auto* synth = app.add_subcommand("synth", "write a seeded synthetic brat corpus");
  synth->add_option("--out", a.synth_out, "output directory")->required();
  synth->add_option("--per-label", a.synth_per_label, "relations per label");
  synth->add_option("--seed", a.synth_seed, "generator seed");
  synth->add_flag("--unicode", a.synth_unicode, "mix multi-byte filler words");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  try {
    if (*prepare) return cmd_prepare(a);
    if (*stats) return cmd_stats(a);
    if (*train_cmd) return cmd_train(a);
    if (*eval) return cmd_evaluate(a);
    if (*pred) return cmd_predict(a);
    if (*icl) return cmd_icl_eval(a);
    if (*synth) return cmd_synth(a);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON input: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
