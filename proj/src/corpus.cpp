#include "relcat/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include <json.hpp>

namespace relcat {

namespace {

std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t nl = s.find('\n', pos);
    if (nl == std::string_view::npos) nl = s.size();
    std::string_view line = s.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = nl + 1;
  }
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = s.find(sep, pos);
    parts.push_back(s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return parts;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool parse_offset(std::string_view s, std::size_t& out) {
  if (s.empty() || s.size() > 18) return false;
  std::size_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    v = v * 10 + static_cast<std::size_t>(c - '0');
  }
  out = v;
  return true;
}

std::string collapse_ws(std::string_view s) {
  std::string out;
  bool in_ws = false;
  for (char c : s) {
    if (c == ' ' || c == '\n' || c == '\t' || c == '\r') {
      in_ws = true;
    } else {
      if (in_ws && !out.empty()) out.push_back(' ');
      in_ws = false;
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace

const Entity* Document::find_entity(std::string_view id) const {
  for (const auto& e : entities)
    if (e.ent_id == id) return &e;
  return nullptr;
}

std::string slice_scalars(std::string_view text, std::size_t start, std::size_t end) {
  const auto b = utf8::boundaries(text);
  if (start > end || end >= b.size()) throw ParseError("offset out of bounds");
  return std::string(text.substr(b[start], b[end] - b[start]));
}

void validate_document(const Document& doc) {
  const auto b = utf8::boundaries(doc.text);
  const std::size_t n = b.size() - 1;
  std::set<std::string> ids;
  for (const auto& e : doc.entities) {
    if (!ids.insert(e.ent_id).second) throw ParseError("duplicate entity id " + e.ent_id + " in " + doc.doc_id);
    if (e.start >= e.end || e.end > n)
      throw ParseError("entity " + e.ent_id + " offset out of bounds in " + doc.doc_id);
    if (doc.text.substr(b[e.start], b[e.end] - b[e.start]) != e.surface)
      throw ParseError("entity " + e.ent_id + " surface does not match text in " + doc.doc_id);
  }
  for (const auto& r : doc.relations) {
    if (!ids.count(r.left_ent) || !ids.count(r.right_ent))
      throw ParseError("relation references unknown entity in " + doc.doc_id);
  }
}

void TypeMap::add(const std::string& cui, const std::string& tui, std::size_t line) {
  auto [it, inserted] = map_.emplace(cui, tui);
  if (!inserted && it->second != tui)
    throw ParseError("conflicting type for cui " + cui + ": '" + it->second + "' vs '" + tui + "'", line);
}

std::string TypeMap::lookup(const std::string& cui) const {
  auto it = map_.find(cui);
  return it == map_.end() ? std::string(kUnknown) : it->second;
}

TypeMap load_type_map(std::string_view tsv_content) {
  TypeMap map;
  const auto lines = split_lines(tsv_content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string_view line = lines[i];
    if (trim(line).empty()) continue;
    const auto cols = split(line, '\t');
    if (cols.size() != 2 || trim(cols[0]).empty() || trim(cols[1]).empty())
      throw ParseError("expected 'cui<TAB>tui'", i + 1);
    const std::string cui(trim(cols[0]));
    const std::string tui(trim(cols[1]));
    if (i == 0 && cui == "cui" && tui == "tui") continue;
    map.add(cui, tui, i + 1);
  }
  return map;
}

Document parse_standoff(std::string_view txt_content, std::string_view ann_content, const std::string& doc_id,
                        const std::string& project_id) {
  Document doc;
  doc.doc_id = doc_id;
  doc.project_id = project_id;
  doc.text = std::string(txt_content);
  const auto bounds = utf8::boundaries(doc.text);
  const std::size_t n_scalars = bounds.size() - 1;

  struct PendingRelation {
    RelationAnnotation rel;
    std::size_t line;
  };
  std::vector<PendingRelation> pending;
  std::set<std::string> ids;

  const auto lines = split_lines(ann_content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t lineno = i + 1;
    const std::string_view line = lines[i];
    if (trim(line).empty() || line.front() == '#') continue;
    const auto cols = split(line, '\t');
    if (line.front() == 'T') {
      if (cols.size() < 2) throw ParseError("malformed entity line", lineno);
      Entity e;
      e.ent_id = std::string(cols[0]);
      const std::string_view desc = cols[1];
      const std::size_t sp = desc.find(' ');
      if (sp == std::string_view::npos || sp == 0) throw ParseError("malformed entity line", lineno);
      e.tui = std::string(desc.substr(0, sp));
      std::size_t lo = std::string::npos, hi = 0;
      const auto fragments = split(desc.substr(sp + 1), ';');
      for (auto frag : fragments) {
        const auto nums = split(trim(frag), ' ');
        std::size_t a, b;
        if (nums.size() != 2 || !parse_offset(nums[0], a) || !parse_offset(nums[1], b))
          throw ParseError("malformed entity offsets", lineno);
        if (a >= b) throw ParseError("empty or inverted entity span", lineno);
        if (b > n_scalars) throw ParseError("offset out of bounds", lineno);
        lo = std::min(lo, a);
        hi = std::max(hi, b);
      }
      e.start = lo;
      e.end = hi;
      e.discontinuous = fragments.size() > 1;
      e.surface = doc.text.substr(bounds[lo], bounds[hi] - bounds[lo]);
      if (!e.discontinuous && cols.size() >= 3 && collapse_ws(cols[2]) != collapse_ws(e.surface))
        throw ParseError("entity surface '" + std::string(cols[2]) + "' does not match text '" + e.surface + "'",
                         lineno);
      if (!ids.insert(e.ent_id).second) throw ParseError("duplicate entity id " + e.ent_id, lineno);
      doc.entities.push_back(std::move(e));
    } else if (line.front() == 'R') {
      if (cols.size() < 2) throw ParseError("malformed relation line", lineno);
      const auto parts = split(trim(cols[1]), ' ');
      if (parts.size() != 3 || parts[0].empty() || parts[1].substr(0, 5) != "Arg1:" ||
          parts[2].substr(0, 5) != "Arg2:")
        throw ParseError("malformed relation line", lineno);
      RelationAnnotation r{std::string(parts[1].substr(5)), std::string(parts[2].substr(5)), std::string(parts[0])};
      pending.push_back({std::move(r), lineno});
    } else {
      throw ParseError("unrecognised annotation line", lineno);
    }
  }
  for (auto& p : pending) {
    if (!ids.count(p.rel.left_ent)) throw ParseError("relation references unknown entity " + p.rel.left_ent, p.line);
    if (!ids.count(p.rel.right_ent))
      throw ParseError("relation references unknown entity " + p.rel.right_ent, p.line);
    doc.relations.push_back(std::move(p.rel));
  }
  return doc;
}

namespace {

using nlohmann::json;

const json& require(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) throw ParseError("missing required field " + path + "." + key);
  return obj.at(key);
}

std::string id_string(const json& v, const std::string& path) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw ParseError("field " + path + " must be a string or integer");
}

std::size_t offset_value(const json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<long long>() < 0) throw ParseError("field " + path + " must be a non-negative integer");
  return v.get<std::size_t>();
}

}  // namespace

std::vector<Document> parse_trainer_export(std::string_view json_content, const TypeMap& types) {
  json root;
  try {
    root = json::parse(json_content);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  std::vector<Document> docs;
  const json& projects = require(root, "projects", "$");
  if (!projects.is_array()) throw ParseError("field $.projects must be an array");
  for (std::size_t p = 0; p < projects.size(); ++p) {
    const std::string ppath = "$.projects[" + std::to_string(p) + "]";
    const json& project = projects[p];
    const std::string project_name = id_string(require(project, "name", ppath), ppath + ".name");
    const json& documents = require(project, "documents", ppath);
    if (!documents.is_array()) throw ParseError("field " + ppath + ".documents must be an array");
    for (std::size_t d = 0; d < documents.size(); ++d) {
      const std::string dpath = ppath + ".documents[" + std::to_string(d) + "]";
      const json& jd = documents[d];
      Document doc;
      doc.project_id = project_name;
      doc.doc_id = id_string(require(jd, "id", dpath), dpath + ".id");
      const json& text = require(jd, "text", dpath);
      if (!text.is_string()) throw ParseError("field " + dpath + ".text must be a string");
      doc.text = text.get<std::string>();
      const auto bounds = utf8::boundaries(doc.text);
      const std::size_t n_scalars = bounds.size() - 1;

      const json& anns = require(jd, "annotations", dpath);
      if (!anns.is_array()) throw ParseError("field " + dpath + ".annotations must be an array");
      std::set<std::string> ids;
      for (std::size_t a = 0; a < anns.size(); ++a) {
        const std::string apath = dpath + ".annotations[" + std::to_string(a) + "]";
        const json& ja = anns[a];
        Entity e;
        e.ent_id = id_string(require(ja, "id", apath), apath + ".id");
        e.start = offset_value(require(ja, "start", apath), apath + ".start");
        e.end = offset_value(require(ja, "end", apath), apath + ".end");
        e.cui = id_string(require(ja, "cui", apath), apath + ".cui");
        const json& validated = require(ja, "validated", apath);
        if (!validated.is_boolean()) throw ParseError("field " + apath + ".validated must be a boolean");
        e.validated = validated.get<bool>();
        if (e.start >= e.end || e.end > n_scalars) throw ParseError("offset out of bounds at " + apath);
        e.surface = doc.text.substr(bounds[e.start], bounds[e.end] - bounds[e.start]);
        e.tui = types.lookup(e.cui);
        if (!ids.insert(e.ent_id).second) throw ParseError("duplicate annotation id at " + apath);
        doc.entities.push_back(std::move(e));
      }
      if (jd.contains("relations")) {
        const json& rels = jd.at("relations");
        if (!rels.is_array()) throw ParseError("field " + dpath + ".relations must be an array");
        for (std::size_t r = 0; r < rels.size(); ++r) {
          const std::string rpath = dpath + ".relations[" + std::to_string(r) + "]";
          RelationAnnotation rel;
          rel.left_ent = id_string(require(rels[r], "start_entity", rpath), rpath + ".start_entity");
          rel.right_ent = id_string(require(rels[r], "end_entity", rpath), rpath + ".end_entity");
          const json& label = require(rels[r], "relation_label", rpath);
          if (!label.is_string()) throw ParseError("field " + rpath + ".relation_label must be a string");
          rel.label = label.get<std::string>();
          if (!ids.count(rel.left_ent) || !ids.count(rel.right_ent))
            throw ParseError("relation at " + rpath + " references missing annotation id");
          doc.relations.push_back(std::move(rel));
        }
      }
      docs.push_back(std::move(doc));
    }
  }
  return docs;
}

CorpusFormat parse_corpus_format(const std::string& s) {
  if (s == "auto") return CorpusFormat::Auto;
  if (s == "brat") return CorpusFormat::Brat;
  if (s == "trainer") return CorpusFormat::Trainer;
  throw ConfigError("unknown corpus format '" + s + "' (valid: auto, brat, trainer)");
}

std::vector<Document> load_corpus_dir(const std::string& dir, CorpusFormat format, const TypeMap& types) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error("corpus directory does not exist: " + dir);
  std::vector<fs::path> ann_files, json_files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().extension() == ".ann") ann_files.push_back(entry.path());
    if (entry.path().extension() == ".json") json_files.push_back(entry.path());
  }
  std::sort(ann_files.begin(), ann_files.end());
  std::sort(json_files.begin(), json_files.end());
  if (format == CorpusFormat::Auto) format = ann_files.empty() ? CorpusFormat::Trainer : CorpusFormat::Brat;

  std::vector<Document> docs;
  if (format == CorpusFormat::Brat) {
    for (const auto& ann : ann_files) {
      fs::path txt = ann;
      txt.replace_extension(".txt");
      if (!fs::exists(txt)) throw Error("missing text file for " + ann.string());
      const fs::path rel = fs::relative(ann, dir);
      const std::string project = rel.has_parent_path() ? rel.begin()->string() : "default";
      fs::path id = rel;
      id.replace_extension();
      try {
        docs.push_back(parse_standoff(read_file(txt.string()), read_file(ann.string()), id.generic_string(), project));
      } catch (const ParseError& e) {
        throw ParseError(ann.string() + ": " + e.what());
      }
    }
  } else {
    for (const auto& js : json_files) {
      try {
        auto part = parse_trainer_export(read_file(js.string()), types);
        docs.insert(docs.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
      } catch (const ParseError& e) {
        throw ParseError(js.string() + ": " + e.what());
      }
    }
  }
  if (docs.empty()) throw Error("no documents found in corpus directory: " + dir);
  return docs;
}

}  // namespace relcat
