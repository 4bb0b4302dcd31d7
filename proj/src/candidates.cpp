#include "relcat/candidates.hpp"

#include <algorithm>
#include <sstream>

#include <json.hpp>

namespace relcat {

using nlohmann::ordered_json;

namespace {

std::string trim_copy(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool pair_admitted(const TypePairRules& rules, const std::set<std::pair<std::string, std::string>>& cui_pairs,
                   const Entity& l, const Entity& r) {
  return rules.matches(l.tui, r.tui) || cui_pairs.count({l.cui, r.cui}) > 0;
}

bool overlaps(const Entity& a, const Entity& b) { return a.start < b.end && b.start < a.end; }

ordered_json entity_json(const Entity& e) {
  ordered_json j;
  j["ent_id"] = e.ent_id;
  j["start"] = e.start;
  j["end"] = e.end;
  j["surface"] = e.surface;
  j["cui"] = e.cui;
  j["tui"] = e.tui;
  j["validated"] = e.validated;
  j["discontinuous"] = e.discontinuous;
  return j;
}

Entity entity_from_json(const nlohmann::json& j) {
  Entity e;
  e.ent_id = j.at("ent_id").get<std::string>();
  e.start = j.at("start").get<std::size_t>();
  e.end = j.at("end").get<std::size_t>();
  e.surface = j.at("surface").get<std::string>();
  e.cui = j.value("cui", "");
  e.tui = j.value("tui", "");
  e.validated = j.value("validated", true);
  e.discontinuous = j.value("discontinuous", false);
  return e;
}

template <typename F>
void for_each_line(const std::string& content, F&& f) {
  std::istringstream in(content);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      f(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
}

}  // namespace

TypePairRules TypePairRules::wildcard() {
  TypePairRules r;
  r.wildcard_ = true;
  return r;
}

TypePairRules TypePairRules::parse(const std::string& text) {
  const std::string t = trim_copy(text);
  if (t == "*") return wildcard();
  TypePairRules rules;
  std::istringstream in(t);
  std::string item;
  while (std::getline(in, item, ';')) {
    item = trim_copy(item);
    if (item.empty()) continue;
    const auto bar = item.find('|');
    if (bar == std::string::npos) throw ConfigError("type pair '" + item + "' must be written as 'left|right'");
    const std::string l = trim_copy(item.substr(0, bar)), r = trim_copy(item.substr(bar + 1));
    if (l.empty() || r.empty()) throw ConfigError("type pair '" + item + "' has an empty side");
    rules.add(l, r);
  }
  return rules;
}

void TypePairRules::add(std::string left, std::string right) { pairs_.emplace(std::move(left), std::move(right)); }

bool TypePairRules::matches(const std::string& left, const std::string& right) const {
  if (wildcard_) return true;
  return pairs_.count({left, right}) || pairs_.count({left, "*"}) || pairs_.count({"*", right}) ||
         pairs_.count({"*", "*"});
}

std::string TypePairRules::to_string() const {
  if (wildcard_) return "*";
  std::string out;
  for (const auto& [l, r] : pairs_) {
    if (!out.empty()) out += "; ";
    out += l + "|" + r;
  }
  return out;
}

void GenerationPolicy::validate() const {
  if (max_entity_distance == 0) throw ConfigError("max_entity_distance must be > 0");
}

std::size_t entity_distance(const Entity& a, const Entity& b) {
  if (a.end <= b.start) return b.start - a.end;
  if (b.end <= a.start) return a.start - b.end;
  return 0;
}

std::vector<RelationInstance> build_gold_instances(const std::vector<Document>& docs, const GenerationPolicy& policy,
                                                   DropReport* report) {
  policy.validate();
  DropReport local;
  std::vector<RelationInstance> out;
  for (const auto& doc : docs) {
    for (const auto& rel : doc.relations) {
      const Entity* l = doc.find_entity(rel.left_ent);
      const Entity* r = doc.find_entity(rel.right_ent);
      if (!l || !r) throw InternalError("relation references unknown entity in " + doc.doc_id);
      if (policy.require_validated && (!l->validated || !r->validated)) {
        ++local.unvalidated;
        continue;
      }
      if (policy.exclude_discontinuous && (l->discontinuous || r->discontinuous)) {
        ++local.discontinuous;
        continue;
      }
      if (entity_distance(*l, *r) > policy.max_entity_distance) {
        ++local.distance;
        continue;
      }
      if (!pair_admitted(policy.allowed_relation_tui_pairs, policy.relation_cui_pairs, *l, *r)) {
        ++local.type_pair;
        continue;
      }
      out.push_back({doc.doc_id, *l, *r, rel.label, doc.project_id});
    }
  }
  if (report) *report = local;
  return out;
}

std::vector<RelationInstance> synthesize_nonrelations(const std::vector<Document>& docs,
                                                      const GenerationPolicy& policy) {
  policy.validate();
  // project -> candidate pool in enumeration order
  std::map<std::string, std::vector<RelationInstance>> pools;
  for (const auto& doc : docs) {
    std::set<std::pair<std::string, std::string>> gold;
    for (const auto& rel : doc.relations) gold.emplace(rel.left_ent, rel.right_ent);
    auto& pool = pools[doc.project_id];
    const auto& ents = doc.entities;
    for (std::size_t i = 0; i < ents.size(); ++i) {
      const Entity& l = ents[i];
      if (policy.require_validated && !l.validated) continue;
      if (policy.exclude_discontinuous && l.discontinuous) continue;
      for (std::size_t j = 0; j < ents.size(); ++j) {
        if (i == j) continue;
        const Entity& r = ents[j];
        if (policy.require_validated && !r.validated) continue;
        if (policy.exclude_discontinuous && r.discontinuous) continue;
        if (overlaps(l, r)) continue;
        if (gold.count({l.ent_id, r.ent_id})) continue;
        if (entity_distance(l, r) > policy.max_entity_distance) continue;
        if (!pair_admitted(policy.nonrelation_tui_pairs, policy.nonrelation_cui_pairs, l, r)) continue;
        std::string label = kOtherLabel;
        if (policy.split_other_by_tui_pair) label += ":" + l.tui + "-" + r.tui;
        pool.push_back({doc.doc_id, l, r, std::move(label), doc.project_id});
      }
    }
  }

  std::vector<RelationInstance> out;
  for (auto& [project, pool] : pools) {
    std::vector<std::size_t> order(pool.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    Rng rng(derive_seed(policy.rng_seed, project));
    rng.shuffle(order);
    if (order.size() > policy.max_nonrelations_per_project) order.resize(policy.max_nonrelations_per_project);
    std::sort(order.begin(), order.end());
    for (std::size_t k : order) out.push_back(std::move(pool[k]));
  }
  return out;
}

std::map<std::string, LabelStats> dataset_stats(const std::vector<RelationInstance>& instances) {
  std::map<std::string, std::map<std::string, std::size_t>> pairs;
  std::map<std::string, LabelStats> stats;
  for (const auto& inst : instances) {
    ++stats[inst.label].count;
    ++pairs[inst.label][inst.left.tui + "-" + inst.right.tui];
  }
  for (auto& [label, s] : stats) {
    s.type_pairs.assign(pairs[label].begin(), pairs[label].end());
    std::stable_sort(s.type_pairs.begin(), s.type_pairs.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
  }
  return stats;
}

std::string render_stats(const std::map<std::string, LabelStats>& stats) {
  std::ostringstream out;
  std::size_t total = 0;
  out << "label\tcount\n";
  for (const auto& [label, s] : stats) {
    out << label << '\t' << s.count << '\n';
    total += s.count;
  }
  out << "total\t" << total << "\n\n";
  out << "label\ttype_pair\tcount\n";
  for (const auto& [label, s] : stats)
    for (const auto& [pair, n] : s.type_pairs) out << label << '\t' << pair << '\t' << n << '\n';
  return out.str();
}

std::string instances_to_jsonl(const std::vector<RelationInstance>& instances) {
  std::string out;
  for (const auto& inst : instances) {
    ordered_json j;
    j["doc_id"] = inst.doc_id;
    j["label"] = inst.label;
    j["project_id"] = inst.project_id;
    j["left"] = entity_json(inst.left);
    j["right"] = entity_json(inst.right);
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<RelationInstance> instances_from_jsonl(const std::string& content) {
  std::vector<RelationInstance> out;
  for_each_line(content, [&](const nlohmann::json& j) {
    RelationInstance inst;
    inst.doc_id = j.at("doc_id").get<std::string>();
    inst.label = j.at("label").get<std::string>();
    inst.project_id = j.value("project_id", "default");
    inst.left = entity_from_json(j.at("left"));
    inst.right = entity_from_json(j.at("right"));
    out.push_back(std::move(inst));
  });
  return out;
}

std::string documents_to_jsonl(const std::vector<Document>& docs) {
  std::string out;
  for (const auto& d : docs) {
    ordered_json j;
    j["doc_id"] = d.doc_id;
    j["project_id"] = d.project_id;
    j["text"] = d.text;
    j["entities"] = ordered_json::array();
    for (const auto& e : d.entities) j["entities"].push_back(entity_json(e));
    j["relations"] = ordered_json::array();
    for (const auto& r : d.relations)
      j["relations"].push_back(ordered_json{{"left_ent", r.left_ent}, {"right_ent", r.right_ent}, {"label", r.label}});
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<Document> documents_from_jsonl(const std::string& content) {
  std::vector<Document> out;
  for_each_line(content, [&](const nlohmann::json& j) {
    Document d;
    d.doc_id = j.at("doc_id").get<std::string>();
    d.project_id = j.value("project_id", "default");
    d.text = j.at("text").get<std::string>();
    for (const auto& e : j.value("entities", nlohmann::json::array())) d.entities.push_back(entity_from_json(e));
    for (const auto& r : j.value("relations", nlohmann::json::array()))
      d.relations.push_back({r.at("left_ent").get<std::string>(), r.at("right_ent").get<std::string>(),
                             r.at("label").get<std::string>()});
    out.push_back(std::move(d));
  });
  return out;
}

}  // namespace relcat
