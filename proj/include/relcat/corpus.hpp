#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "relcat/common.hpp"

namespace relcat {

// Offsets are Unicode scalar-value indices into Document::text, half-open.
struct Entity {
  std::string ent_id;
  std::size_t start = 0;
  std::size_t end = 0;
  std::string surface;
  std::string cui;
  std::string tui;
  bool validated = true;
  // Set when a discontinuous brat span was collapsed to its covering interval.
  bool discontinuous = false;

  bool operator==(const Entity&) const = default;
};

// Directional: left_ent -> right_ent.
struct RelationAnnotation {
  std::string left_ent;
  std::string right_ent;
  std::string label;

  bool operator==(const RelationAnnotation&) const = default;
};

struct Document {
  std::string doc_id;
  std::string project_id = "default";
  std::string text;  // UTF-8
  std::vector<Entity> entities;
  std::vector<RelationAnnotation> relations;

  const Entity* find_entity(std::string_view id) const;
  bool operator==(const Document&) const = default;
};

// Checks every Document invariant; throws ParseError describing the first violation.
void validate_document(const Document& doc);

// Slice of a UTF-8 string by scalar-value indices.
std::string slice_scalars(std::string_view text, std::size_t start, std::size_t end);

class TypeMap {
 public:
  static constexpr std::string_view kUnknown = "unknown";

  void add(const std::string& cui, const std::string& tui, std::size_t line = 0);
  std::string lookup(const std::string& cui) const;
  std::size_t size() const { return map_.size(); }
  const std::map<std::string, std::string>& entries() const { return map_; }

 private:
  std::map<std::string, std::string> map_;
};

// brat standoff: T-lines for entities, R-lines for relations. The entity type
// is stored in Entity::tui; cui stays empty.
Document parse_standoff(std::string_view txt_content, std::string_view ann_content,
                        const std::string& doc_id, const std::string& project_id = "default");

// Annotation-trainer JSON export. See docs/formats.md for the schema.
std::vector<Document> parse_trainer_export(std::string_view json_content, const TypeMap& types);

// `cui<TAB>tui` rows; an optional `cui<TAB>tui` header row is skipped.
TypeMap load_type_map(std::string_view tsv_content);

enum class CorpusFormat { Auto, Brat, Trainer };
CorpusFormat parse_corpus_format(const std::string& s);

// Loads every document under `dir`, sorted by path. For brat corpora the
// project id is the first directory component below `dir` ("default" for
// files at the top level); trainer exports carry their own project names.
std::vector<Document> load_corpus_dir(const std::string& dir, CorpusFormat format, const TypeMap& types);

}  // namespace relcat
