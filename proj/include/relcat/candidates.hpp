#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "relcat/corpus.hpp"

namespace relcat {

// Set of directional (tui, tui) pairs. "*" matches any type on that side;
// a rule set constructed with wildcard() admits every pair.
class TypePairRules {
 public:
  static TypePairRules wildcard();
  // Text form: `a|b; c|*` (pairs separated by ';', sides by '|'), or `*`.
  static TypePairRules parse(const std::string& text);

  void add(std::string left, std::string right);
  bool matches(const std::string& left, const std::string& right) const;
  bool is_wildcard() const { return wildcard_; }
  std::string to_string() const;

 private:
  bool wildcard_ = false;
  std::set<std::pair<std::string, std::string>> pairs_;
};

struct GenerationPolicy {
  TypePairRules allowed_relation_tui_pairs = TypePairRules::wildcard();
  TypePairRules nonrelation_tui_pairs = TypePairRules::wildcard();
  // Exact CUI pairs admitted in addition to the TUI rules (empty = none).
  std::set<std::pair<std::string, std::string>> relation_cui_pairs;
  std::set<std::pair<std::string, std::string>> nonrelation_cui_pairs;
  std::size_t max_nonrelations_per_project = 70;
  std::size_t max_entity_distance = 1000;
  bool require_validated = true;
  bool exclude_discontinuous = false;
  bool split_other_by_tui_pair = false;
  std::uint64_t rng_seed = 13;

  void validate() const;
};

inline constexpr const char* kOtherLabel = "Other";

struct RelationInstance {
  std::string doc_id;
  Entity left;
  Entity right;
  std::string label;
  std::string project_id;

  bool operator==(const RelationInstance&) const = default;
};

// Character gap between the nearer edges of two spans; 0 when they overlap.
std::size_t entity_distance(const Entity& a, const Entity& b);

struct DropReport {
  std::size_t unvalidated = 0;
  std::size_t discontinuous = 0;
  std::size_t distance = 0;
  std::size_t type_pair = 0;

  std::size_t total() const { return unvalidated + discontinuous + distance + type_pair; }
};

std::vector<RelationInstance> build_gold_instances(const std::vector<Document>& docs, const GenerationPolicy& policy,
                                                   DropReport* report = nullptr);

// Candidate non-relations: ordered pairs of distinct, non-overlapping entities of one
// document that are not a gold pair, pass the distance and type rules, and survive the
// per-project seeded shuffle + cap. Output is in document/entity order.
std::vector<RelationInstance> synthesize_nonrelations(const std::vector<Document>& docs,
                                                      const GenerationPolicy& policy);

struct LabelStats {
  std::size_t count = 0;
  // "tui1-tui2" -> count, sorted by count descending then name.
  std::vector<std::pair<std::string, std::size_t>> type_pairs;
};

std::map<std::string, LabelStats> dataset_stats(const std::vector<RelationInstance>& instances);
std::string render_stats(const std::map<std::string, LabelStats>& stats);

// JSON-lines, one instance per line, stable key order.
std::string instances_to_jsonl(const std::vector<RelationInstance>& instances);
std::vector<RelationInstance> instances_from_jsonl(const std::string& content);

std::string documents_to_jsonl(const std::vector<Document>& docs);
std::vector<Document> documents_from_jsonl(const std::string& content);

}  // namespace relcat
