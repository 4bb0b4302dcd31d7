#include "relcat/config.hpp"

#include <charconv>
#include <filesystem>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace relcat {

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"paths", "corpus_dir", "", "directory of brat .txt/.ann pairs or trainer .json exports"},
      {"paths", "type_map", "", "optional cui<TAB>tui table used for trainer exports"},
      {"paths", "output_dir", "runs", "root directory for run artifacts"},
      {"paths", "run_id", "default", "subdirectory of output_dir for this run"},
      {"paths", "corpus_format", "auto", "auto | brat | trainer"},
      {"generation", "relation_tui_pairs", "*", "allowed gold type pairs, 'a|b; c|*' or '*'"},
      {"generation", "nonrelation_tui_pairs", "*", "type pairs eligible for synthesized non-relations"},
      {"generation", "relation_cui_pairs", "", "exact cui pairs admitted in addition to relation_tui_pairs"},
      {"generation", "nonrelation_cui_pairs", "", "exact cui pairs admitted in addition to nonrelation_tui_pairs"},
      {"generation", "max_nonrelations_per_project", "70", "cap on synthesized non-relations per project"},
      {"generation", "max_entity_distance", "1000", "max character gap between a pair's nearer edges"},
      {"generation", "require_validated", "true", "only use entities marked validated"},
      {"generation", "exclude_discontinuous", "false", "drop entities collapsed from discontinuous spans"},
      {"generation", "split_other_by_tui_pair", "false", "label non-relations Other:<tui1>-<tui2>"},
      {"generation", "synthesize_nonrelations", "true", "add synthesized non-relation instances"},
      {"generation", "seed", "13", "seed for the per-project non-relation draw"},
      {"encoder", "max_seq_len", "128", "max tokens per encoded instance (>= 16)"},
      {"encoder", "context_window", "16", "tokens kept on each side of each marked entity (>= 1)"},
      {"encoder", "marker_mode", "markers", "markers | index_only"},
      {"encoder", "lowercase", "true", "ASCII-lowercase tokens"},
      {"encoder", "vocab_max_size", "20000", "vocabulary size including the 8 special tokens"},
      {"encoder", "vocab_min_freq", "1", "minimum token frequency for the vocabulary"},
      {"model", "d_model", "64", "hidden width (divisible by n_heads)"},
      {"model", "n_layers", "2", "transformer blocks"},
      {"model", "n_heads", "4", "attention heads"},
      {"model", "d_ff", "128", "feed-forward width"},
      {"model", "head_hidden", "128", "width of the first classification layer"},
      {"model", "use_marker_states", "true", "append [s1]/[s2] hidden states to the feature (markers only)"},
      {"model", "use_pooled_output", "true", "append tanh-pooled [CLS] state to the feature"},
      {"model", "dropout_rate", "0.1", "dropout probability during training"},
      {"model", "init_std", "0.02", "std of the normal weight initialisation"},
      {"train", "epochs", "20", "training epochs"},
      {"train", "lr", "0.001", "Adam learning rate"},
      {"train", "batch_size", "32", "instances per batch (>= number of labels when stratified)"},
      {"train", "freeze", "all_unfrozen", "all_frozen | all_unfrozen | last_layer_unfrozen"},
      {"train", "use_class_weights", "true", "inverse-frequency class weights in the loss"},
      {"train", "use_stratified_batching", "true", "per-class batch quotas instead of random batches"},
      {"train", "seed", "42", "seed for initialisation, splits, batching and dropout"},
      {"train", "early_stop_patience", "5", "epochs without dev improvement before stopping (0 = off)"},
      {"train", "eval_split_fraction", "0.1", "fraction of training data held out for checkpoint selection"},
      {"train", "test_split_fraction", "0.2", "fraction of prepared instances reserved for evaluation"},
      {"icl", "template", "llama_style", "llama_style | mistral_style"},
      {"icl", "endpoint", "http://127.0.0.1:8089/generate", "text-generation endpoint URL"},
      {"icl", "shots_per_class", "1", "few-shot examples per category (0 = zero-shot)"},
      {"icl", "seed", "42", "seed for few-shot selection"},
      {"icl", "concurrency", "4", "parallel requests"},
      {"icl", "max_retries", "3", "retries per request"},
      {"icl", "backoff_ms", "50", "initial retry backoff, doubled per retry"},
      {"icl", "timeout_ms", "10000", "per-request timeout"},
      {"icl", "max_failure_rate", "0.1", "fail the run when more requests than this fraction fail"},
      {"icl", "max_tokens", "16", "generation length requested from the endpoint"},
  };
  return keys;
}

std::string config_help() {
  std::ostringstream out;
  out << "Config keys (INI sections; override with --set section.key=value):\n";
  std::string section;
  for (const auto& k : config_keys()) {
    if (k.section != section) {
      section = k.section;
      out << "  [" << section << "]\n";
    }
    out << "    " << k.key << " = " << (k.default_value.empty() ? "\"\"" : k.default_value) << "\n      "
        << k.description << "\n";
  }
  return out.str();
}

namespace {

using Flat = std::map<std::string, std::string>;

bool known_key(const std::string& full) {
  for (const auto& k : config_keys())
    if (k.section + "." + k.key == full) return true;
  return false;
}

const std::string& get(const Flat& f, const std::string& key) {
  auto it = f.find(key);
  if (it == f.end()) throw InternalError("config key missing default: " + key);
  return it->second;
}

bool to_bool(const Flat& f, const std::string& key) {
  const std::string& v = get(f, key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::size_t to_size(const Flat& f, const std::string& key) {
  const std::string& v = get(f, key);
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return std::stoull(v);
}

double to_double(const Flat& f, const std::string& key) {
  const std::string& v = get(f, key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

std::set<std::pair<std::string, std::string>> cui_pairs(const std::string& text) {
  std::set<std::pair<std::string, std::string>> out;
  if (text.empty()) return out;
  const TypePairRules rules = TypePairRules::parse(text);
  if (rules.is_wildcard()) throw ConfigError("cui pair lists do not accept '*'");
  std::istringstream in(rules.to_string());
  std::string item;
  while (std::getline(in, item, ';')) {
    const auto bar = item.find('|');
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(' '));
      s.erase(s.find_last_not_of(' ') + 1);
      return s;
    };
    out.emplace(trim(item.substr(0, bar)), trim(item.substr(bar + 1)));
  }
  return out;
}

}  // namespace

std::string RunConfig::run_dir() const { return (std::filesystem::path(output_dir) / run_id).string(); }

RunConfig load_run_config(const std::string& ini_text, const std::vector<std::string>& overrides, bool check_paths) {
  namespace pt = boost::property_tree;
  Flat flat;
  for (const auto& k : config_keys()) flat[k.section + "." + k.key] = k.default_value;

  pt::ptree tree;
  std::istringstream in(ini_text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("config key '" + section + "' must be inside a [section]");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      if (!known_key(full)) throw ConfigError("unknown config key '" + full + "'");
      flat[full] = value.data();
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' must be section.key=value");
    const std::string full = o.substr(0, eq);
    if (!known_key(full)) throw ConfigError("unknown config key '" + full + "'");
    flat[full] = o.substr(eq + 1);
  }

  RunConfig c;
  c.corpus_dir = get(flat, "paths.corpus_dir");
  c.type_map = get(flat, "paths.type_map");
  c.output_dir = get(flat, "paths.output_dir");
  c.run_id = get(flat, "paths.run_id");
  if (c.run_id.empty() || c.run_id.find('/') != std::string::npos || c.run_id == "..")
    throw ConfigError("paths.run_id must be a plain directory name");
  c.corpus_format = parse_corpus_format(get(flat, "paths.corpus_format"));

  GenerationPolicy& g = c.generation;
  g.allowed_relation_tui_pairs = TypePairRules::parse(get(flat, "generation.relation_tui_pairs"));
  g.nonrelation_tui_pairs = TypePairRules::parse(get(flat, "generation.nonrelation_tui_pairs"));
  g.relation_cui_pairs = cui_pairs(get(flat, "generation.relation_cui_pairs"));
  g.nonrelation_cui_pairs = cui_pairs(get(flat, "generation.nonrelation_cui_pairs"));
  g.max_nonrelations_per_project = to_size(flat, "generation.max_nonrelations_per_project");
  g.max_entity_distance = to_size(flat, "generation.max_entity_distance");
  g.require_validated = to_bool(flat, "generation.require_validated");
  g.exclude_discontinuous = to_bool(flat, "generation.exclude_discontinuous");
  g.split_other_by_tui_pair = to_bool(flat, "generation.split_other_by_tui_pair");
  g.rng_seed = to_size(flat, "generation.seed");
  g.validate();
  c.synthesize_nonrelations = to_bool(flat, "generation.synthesize_nonrelations");

  c.encoder.max_seq_len = to_size(flat, "encoder.max_seq_len");
  c.encoder.context_window = to_size(flat, "encoder.context_window");
  c.encoder.marker_mode = parse_marker_mode(get(flat, "encoder.marker_mode"));
  c.encoder.lowercase = to_bool(flat, "encoder.lowercase");
  c.encoder.validate();
  c.vocab_max_size = to_size(flat, "encoder.vocab_max_size");
  c.vocab_min_freq = to_size(flat, "encoder.vocab_min_freq");
  if (c.vocab_max_size <= 8) throw ConfigError("encoder.vocab_max_size must exceed 8");

  ModelConfig& m = c.model;
  m.d_model = to_size(flat, "model.d_model");
  m.n_layers = to_size(flat, "model.n_layers");
  m.n_heads = to_size(flat, "model.n_heads");
  m.d_ff = to_size(flat, "model.d_ff");
  m.head_hidden = to_size(flat, "model.head_hidden");
  m.use_marker_states = to_bool(flat, "model.use_marker_states");
  m.use_pooled_output = to_bool(flat, "model.use_pooled_output");
  m.dropout_rate = to_double(flat, "model.dropout_rate");
  m.init_std = to_double(flat, "model.init_std");
  m.max_seq_len = c.encoder.max_seq_len;
  if (m.use_marker_states && c.encoder.marker_mode != MarkerMode::Markers)
    throw ConfigError("model.use_marker_states requires encoder.marker_mode = markers");
  if (m.d_model == 0 || m.n_heads == 0 || m.d_model % m.n_heads != 0)
    throw ConfigError("model.d_model must be divisible by model.n_heads");
  if (m.dropout_rate < 0.0 || m.dropout_rate >= 1.0) throw ConfigError("model.dropout_rate must be in [0, 1)");

  TrainConfig& t = c.train;
  t.epochs = to_size(flat, "train.epochs");
  t.lr = to_double(flat, "train.lr");
  t.batch_size = to_size(flat, "train.batch_size");
  t.freeze = parse_freeze_mode(get(flat, "train.freeze"));
  t.use_class_weights = to_bool(flat, "train.use_class_weights");
  t.use_stratified_batching = to_bool(flat, "train.use_stratified_batching");
  t.seed = to_size(flat, "train.seed");
  t.early_stop_patience = to_size(flat, "train.early_stop_patience");
  t.eval_split_fraction = to_double(flat, "train.eval_split_fraction");
  t.validate();
  c.test_split_fraction = to_double(flat, "train.test_split_fraction");
  if (!(c.test_split_fraction > 0.0 && c.test_split_fraction < 1.0))
    throw ConfigError("train.test_split_fraction must be in (0, 1)");

  c.icl.template_style = parse_template_style(get(flat, "icl.template"));
  c.icl.endpoint = get(flat, "icl.endpoint");
  c.icl.timeout_ms = to_size(flat, "icl.timeout_ms");
  IclSettings& s = c.icl.settings;
  s.shots_per_class = to_size(flat, "icl.shots_per_class");
  s.seed = to_size(flat, "icl.seed");
  s.concurrency = std::max<std::size_t>(1, to_size(flat, "icl.concurrency"));
  s.max_retries = to_size(flat, "icl.max_retries");
  s.backoff = std::chrono::milliseconds(to_size(flat, "icl.backoff_ms"));
  s.max_failure_rate = to_double(flat, "icl.max_failure_rate");
  s.generation.max_tokens = static_cast<int>(to_size(flat, "icl.max_tokens"));

  if (check_paths) {
    namespace fs = std::filesystem;
    if (!c.corpus_dir.empty() && !fs::is_directory(c.corpus_dir))
      throw ConfigError("paths.corpus_dir does not exist: " + c.corpus_dir);
    if (!c.type_map.empty() && !fs::is_regular_file(c.type_map))
      throw ConfigError("paths.type_map does not exist: " + c.type_map);
  }
  return c;
}

RunConfig load_run_config_file(const std::string& path, const std::vector<std::string>& overrides) {
  namespace fs = std::filesystem;
  RunConfig c = load_run_config(read_file(path), overrides, false);
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(c.corpus_dir);
  resolve(c.type_map);
  resolve(c.output_dir);
  if (!c.corpus_dir.empty() && !fs::is_directory(c.corpus_dir))
    throw ConfigError("paths.corpus_dir does not exist: " + c.corpus_dir);
  if (!c.type_map.empty() && !fs::is_regular_file(c.type_map))
    throw ConfigError("paths.type_map does not exist: " + c.type_map);
  return c;
}

namespace {

std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string flag(bool v) { return v ? "true" : "false"; }

std::string pair_list(const std::set<std::pair<std::string, std::string>>& pairs) {
  std::string out;
  for (const auto& [a, b] : pairs) out += (out.empty() ? "" : "; ") + a + "|" + b;
  return out;
}

std::string format_name(CorpusFormat f) {
  switch (f) {
    case CorpusFormat::Brat:
      return "brat";
    case CorpusFormat::Trainer:
      return "trainer";
    case CorpusFormat::Auto:
      break;
  }
  return "auto";
}

}  // namespace

std::string dump_run_config(const RunConfig& c) {
  const GenerationPolicy& g = c.generation;
  const ModelConfig& m = c.model;
  const TrainConfig& t = c.train;
  const IclSettings& s = c.icl.settings;
  const Flat values = {
      {"paths.corpus_dir", c.corpus_dir},
      {"paths.type_map", c.type_map},
      {"paths.output_dir", c.output_dir},
      {"paths.run_id", c.run_id},
      {"paths.corpus_format", format_name(c.corpus_format)},
      {"generation.relation_tui_pairs", g.allowed_relation_tui_pairs.to_string()},
      {"generation.nonrelation_tui_pairs", g.nonrelation_tui_pairs.to_string()},
      {"generation.relation_cui_pairs", pair_list(g.relation_cui_pairs)},
      {"generation.nonrelation_cui_pairs", pair_list(g.nonrelation_cui_pairs)},
      {"generation.max_nonrelations_per_project", std::to_string(g.max_nonrelations_per_project)},
      {"generation.max_entity_distance", std::to_string(g.max_entity_distance)},
      {"generation.require_validated", flag(g.require_validated)},
      {"generation.exclude_discontinuous", flag(g.exclude_discontinuous)},
      {"generation.split_other_by_tui_pair", flag(g.split_other_by_tui_pair)},
      {"generation.synthesize_nonrelations", flag(c.synthesize_nonrelations)},
      {"generation.seed", std::to_string(g.rng_seed)},
      {"encoder.max_seq_len", std::to_string(c.encoder.max_seq_len)},
      {"encoder.context_window", std::to_string(c.encoder.context_window)},
      {"encoder.marker_mode", to_string(c.encoder.marker_mode)},
      {"encoder.lowercase", flag(c.encoder.lowercase)},
      {"encoder.vocab_max_size", std::to_string(c.vocab_max_size)},
      {"encoder.vocab_min_freq", std::to_string(c.vocab_min_freq)},
      {"model.d_model", std::to_string(m.d_model)},
      {"model.n_layers", std::to_string(m.n_layers)},
      {"model.n_heads", std::to_string(m.n_heads)},
      {"model.d_ff", std::to_string(m.d_ff)},
      {"model.head_hidden", std::to_string(m.head_hidden)},
      {"model.use_marker_states", flag(m.use_marker_states)},
      {"model.use_pooled_output", flag(m.use_pooled_output)},
      {"model.dropout_rate", num(m.dropout_rate)},
      {"model.init_std", num(m.init_std)},
      {"train.epochs", std::to_string(t.epochs)},
      {"train.lr", num(t.lr)},
      {"train.batch_size", std::to_string(t.batch_size)},
      {"train.freeze", to_string(t.freeze)},
      {"train.use_class_weights", flag(t.use_class_weights)},
      {"train.use_stratified_batching", flag(t.use_stratified_batching)},
      {"train.seed", std::to_string(t.seed)},
      {"train.early_stop_patience", std::to_string(t.early_stop_patience)},
      {"train.eval_split_fraction", num(t.eval_split_fraction)},
      {"train.test_split_fraction", num(c.test_split_fraction)},
      {"icl.template", to_string(c.icl.template_style)},
      {"icl.endpoint", c.icl.endpoint},
      {"icl.shots_per_class", std::to_string(s.shots_per_class)},
      {"icl.seed", std::to_string(s.seed)},
      {"icl.concurrency", std::to_string(s.concurrency)},
      {"icl.max_retries", std::to_string(s.max_retries)},
      {"icl.backoff_ms", std::to_string(s.backoff.count())},
      {"icl.timeout_ms", std::to_string(c.icl.timeout_ms)},
      {"icl.max_failure_rate", num(s.max_failure_rate)},
      {"icl.max_tokens", std::to_string(s.generation.max_tokens)},
  };
  std::ostringstream o;
  std::string section;
  for (const auto& k : config_keys()) {
    if (k.section != section) {
      o << (section.empty() ? "" : "\n") << "[" << k.section << "]\n";
      section = k.section;
    }
    o << k.key << " = " << get(values, k.section + "." + k.key) << "\n";
  }
  return o.str();
}

}  // namespace relcat
