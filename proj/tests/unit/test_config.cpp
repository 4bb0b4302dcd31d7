#include <doctest.h>

#include "helpers.hpp"
#include "relcat/common.hpp"
#include "relcat/config.hpp"

using namespace relcat;

TEST_CASE("defaults load from an empty file") {
  const RunConfig c = load_run_config("", {}, false);
  CHECK(c.output_dir == "runs");
  CHECK(c.generation.max_nonrelations_per_project == 70);
  CHECK(c.test_split_fraction == 0.2);
  CHECK(c.model.d_model % c.model.n_heads == 0);
}

TEST_CASE("sections, comments and overrides") {
  const std::string ini =
      "# run settings\n"
      "[train]\n"
      "epochs = 3\n"
      "freeze = last_layer_unfrozen\n"
      "; another comment\n"
      "[encoder]\n"
      "marker_mode = index_only\n"
      "[model]\n"
      "use_marker_states = false\n";
  const RunConfig c = load_run_config(ini, {"train.epochs=7", "generation.relation_tui_pairs=Drug|ADE"}, false);
  CHECK(c.train.epochs == 7);
  CHECK(c.train.freeze == FreezeMode::LastLayerUnfrozen);
  CHECK(c.encoder.marker_mode == MarkerMode::IndexOnly);
  CHECK(c.generation.allowed_relation_tui_pairs.matches("Drug", "ADE"));
  CHECK_FALSE(c.generation.allowed_relation_tui_pairs.matches("ADE", "Drug"));
  // the resolved dump reloads to the same settings
  const RunConfig again = load_run_config(dump_run_config(c), {}, false);
  CHECK(dump_run_config(again) == dump_run_config(c));
}

TEST_CASE("bad configurations are rejected with a useful message") {
  CHECK_THROWS_WITH_AS(load_run_config("[train]\nepochz = 3\n", {}, false), doctest::Contains("epochz"), ConfigError);
  CHECK_THROWS_WITH_AS(load_run_config("[bogus]\nx = 1\n", {}, false), doctest::Contains("bogus"), ConfigError);
  CHECK_THROWS_WITH_AS(load_run_config("[train]\nfreeze = half\n", {}, false),
                       doctest::Contains("all_frozen, all_unfrozen, last_layer_unfrozen"), ConfigError);
  CHECK_THROWS_AS(load_run_config("[train]\nepochs = many\n", {}, false), ConfigError);
  CHECK_THROWS_AS(load_run_config("[train]\nuse_class_weights = maybe\n", {}, false), ConfigError);
  CHECK_THROWS_AS(load_run_config("", {"train.epochs"}, false), ConfigError);
  CHECK_THROWS_AS(load_run_config("", {"nosuch.key=1"}, false), ConfigError);
  CHECK_THROWS_AS(load_run_config("[model]\nd_model = 10\nn_heads = 4\n", {}, false), ConfigError);
  CHECK_THROWS_AS(load_run_config("[encoder]\nmarker_mode = index_only\n", {}, false), ConfigError);
  CHECK_THROWS_AS(load_run_config("[paths]\ncorpus_dir = /definitely/not/here\n", {}, true), ConfigError);
}

TEST_CASE("relative paths resolve against the config file") {
  const auto dir = scratch_dir("config_paths");
  write_file_atomic((dir / "run.ini").string(), "[paths]\ncorpus_dir = " + data_path("brat") + "\noutput_dir = out\n");
  const RunConfig c = load_run_config_file((dir / "run.ini").string());
  CHECK(c.output_dir == (dir / "out").string());
  CHECK(c.run_dir() == (dir / "out" / "default").string());
  CHECK_THROWS(load_run_config_file((dir / "missing.ini").string()));
}

TEST_CASE("every configuration key is documented") {
  const std::string doc = read_file(std::string(RELCAT_SOURCE_DIR) + "/docs/config.md");
  const std::string help = config_help();
  for (const auto& k : config_keys()) {
    CHECK_MESSAGE(doc.find("`" + k.key + "`") != std::string::npos, std::string(k.section + "." + k.key));
    CHECK_MESSAGE(help.find(k.key) != std::string::npos, k.key);
    CHECK_NOTHROW(load_run_config("", {k.section + "." + k.key + "=" + k.default_value}, false));
  }
}
