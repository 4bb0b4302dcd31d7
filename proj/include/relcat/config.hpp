#pragma once

#include <map>
#include <string>
#include <vector>

#include "relcat/candidates.hpp"
#include "relcat/corpus.hpp"
#include "relcat/encoding.hpp"
#include "relcat/incontext.hpp"
#include "relcat/model.hpp"
#include "relcat/train_eval.hpp"

namespace relcat {

struct ConfigKey {
  std::string section;
  std::string key;
  std::string default_value;
  std::string description;
};

// Every accepted key; anything else in a config file is rejected.
const std::vector<ConfigKey>& config_keys();
std::string config_help();

struct IclConfig {
  TemplateStyle template_style = TemplateStyle::Llama;
  std::string endpoint = "http://127.0.0.1:8089/generate";
  std::size_t timeout_ms = 10000;
  IclSettings settings;
};

struct RunConfig {
  std::string corpus_dir;
  std::string type_map;
  std::string output_dir = "runs";
  std::string run_id = "default";
  CorpusFormat corpus_format = CorpusFormat::Auto;

  GenerationPolicy generation;
  bool synthesize_nonrelations = true;

  EncoderSettings encoder;
  std::size_t vocab_max_size = 20000;
  std::size_t vocab_min_freq = 1;

  ModelConfig model;
  TrainConfig train;
  double test_split_fraction = 0.2;

  IclConfig icl;

  std::string run_dir() const;
};

// INI syntax: `[section]` headers and `key = value` lines; `#`/`;` comments.
// Overrides are `section.key=value` strings applied after the file.
RunConfig load_run_config(const std::string& ini_text, const std::vector<std::string>& overrides = {},
                          bool check_paths = true);
RunConfig load_run_config_file(const std::string& path, const std::vector<std::string>& overrides = {});

// Canonical `key = value` dump of the resolved configuration.
std::string dump_run_config(const RunConfig& cfg);

}  // namespace relcat
