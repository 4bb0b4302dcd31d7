#include "relcat/synthetic.hpp"

#include <filesystem>

namespace relcat {

namespace {

struct ClassLexicon {
  std::string label;
  std::string tui;
  std::vector<std::string> attributes;
  // {A} = attribute mention, {D} = drug mention
  std::vector<std::string> patterns;
};

const std::vector<ClassLexicon>& lexicons() {
  static const std::vector<ClassLexicon> lex = {
      {"Reason-Drug", "Reason", {"hypertension", "pain", "infection", "nausea", "afib"},
       {"{D} prescribed because of {A}", "{A} managed using {D}", "{D} indicated for {A}"}},
      {"Duration-Drug", "Duration", {"7 days", "2 weeks", "one month", "10 days"},
       {"{D} course lasting {A}", "{A} course of {D}", "{D} continued over {A}"}},
      {"ADE-Drug", "ADE", {"rash", "hives", "bleeding", "dizziness"},
       {"{A} caused by {D}", "{D} induced {A}", "developed {A} after starting {D}"}},
      {"Dosage-Drug", "Dosage", {"two tablets", "1 tab", "3 puffs"},
       {"{D} take {A} each dose", "dose of {A} of {D}", "{D} dosage {A}"}},
      {"Strength-Drug", "Strength", {"81 mg", "500 mg", "20 mg", "250 mcg"},
       {"{D} {A} strength", "{A} strength {D}", "{D} concentration {A}"}},
      {"Route-Drug", "Route", {"po", "iv", "oral", "topical"},
       {"{D} given via {A} route", "{A} route for {D}", "{D} administered by {A}"}},
      {"Frequency-Drug", "Frequency", {"daily", "bid", "tid", "q6h", "weekly"},
       {"{D} repeated {A}", "{A} schedule for {D}", "{D} taken on a {A} schedule"}},
      {"Form-Drug", "Form", {"tablet", "capsule", "cream", "inhaler", "patch"},
       {"{D} supplied in {A} form", "{A} formulation of {D}", "{D} dispensed as {A}"}},
  };
  return lex;
}

const std::vector<std::string> kSharedAttributes = {"xylo", "brem", "tanzo", "quib", "morv", "plen"};
const std::vector<std::string> kDrugs = {"aspirin",    "warfarin",   "metformin", "lisinopril", "heparin",
                                         "amoxicillin", "ibuprofen", "insulin",   "furosemide", "digoxin",
                                         "prednisone", "morphine",   "atenolol",  "omeprazole", "sertraline"};
const std::vector<std::string> kFiller = {"patient", "was", "noted", "to", "have", "stable", "vitals", "and",
                                          "no", "acute", "distress", "today", "history", "of", "the", "clinic",
                                          "review", "plan", "follow", "up", "with", "team", "overnight", "seen"};
const std::vector<std::string> kUnicodeFiller = {"café", "naïve", "résumé", "37°C", "Ærø", "β-blocker", "µg", "±"};

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[rng.below(v.size())];
}

class DocBuilder {
 public:
  void word(const std::string& w) {
    if (!text_.empty()) append(" ");
    append(w);
  }
  // Appends a mention and returns its scalar span.
  std::pair<std::size_t, std::size_t> mention(const std::string& w) {
    if (!text_.empty()) append(" ");
    const std::size_t start = len_;
    append(w);
    return {start, len_};
  }
  void append(const std::string& s) {
    text_ += s;
    len_ += utf8::length(s);
  }
  std::string text_;
  std::size_t len_ = 0;
};

}  // namespace

const std::vector<std::string>& synthetic_labels() {
  static const std::vector<std::string> labels = [] {
    std::vector<std::string> v;
    for (const auto& l : lexicons()) v.push_back(l.label);
    return v;
  }();
  return labels;
}

std::vector<Document> generate_synthetic_corpus(const SyntheticCorpusSpec& spec) {
  Rng rng(spec.seed);
  std::vector<std::size_t> queue;
  for (const auto& [label, n] : spec.relations_per_label) {
    std::size_t idx = lexicons().size();
    for (std::size_t i = 0; i < lexicons().size(); ++i)
      if (lexicons()[i].label == label) idx = i;
    if (idx == lexicons().size()) throw Error("unknown synthetic label '" + label + "'");
    queue.insert(queue.end(), n, idx);
  }
  rng.shuffle(queue);

  std::vector<Document> docs;
  const std::size_t per_doc = std::max<std::size_t>(1, spec.relations_per_doc);
  for (std::size_t q = 0; q < queue.size(); q += per_doc) {
    Document doc;
    doc.doc_id = "syn" + std::to_string(docs.size());
    doc.project_id = spec.project_id;
    DocBuilder b;
    auto filler = [&] {
      const std::size_t n = 1 + rng.below(std::max<std::size_t>(1, spec.filler_words));
      for (std::size_t k = 0; k < n; ++k)
        b.word(spec.unicode_filler && rng.below(3) == 0 ? pick(kUnicodeFiller, rng) : pick(kFiller, rng));
      b.append(" .");
    };
    filler();
    for (std::size_t k = q; k < std::min(queue.size(), q + per_doc); ++k) {
      const ClassLexicon& lex = lexicons()[queue[k]];
      const std::string attr = rng.below(2) ? pick(lex.attributes, rng) : pick(kSharedAttributes, rng);
      const std::string drug = pick(kDrugs, rng);
      const std::string& pattern = pick(lex.patterns, rng);
      Entity a, d;
      a.ent_id = "T" + std::to_string(doc.entities.size() + 1);
      d.ent_id = "T" + std::to_string(doc.entities.size() + 2);
      a.tui = lex.tui;
      d.tui = "Drug";
      std::size_t pos = 0;
      while (pos < pattern.size()) {
        std::size_t sp = pattern.find(' ', pos);
        if (sp == std::string::npos) sp = pattern.size();
        const std::string piece = pattern.substr(pos, sp - pos);
        if (piece == "{A}") {
          std::tie(a.start, a.end) = b.mention(attr);
          a.surface = attr;
        } else if (piece == "{D}") {
          std::tie(d.start, d.end) = b.mention(drug);
          d.surface = drug;
        } else {
          b.word(piece);
        }
        pos = sp + 1;
      }
      b.append(" .");
      doc.entities.push_back(a);
      doc.entities.push_back(d);
      doc.relations.push_back({a.ent_id, d.ent_id, lex.label});
      filler();
    }
    doc.text = b.text_;
    validate_document(doc);
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::pair<std::string, std::string> to_standoff(const Document& doc) {
  std::string ann;
  for (const auto& e : doc.entities)
    ann += e.ent_id + "\t" + e.tui + " " + std::to_string(e.start) + " " + std::to_string(e.end) + "\t" + e.surface +
           "\n";
  std::size_t r = 0;
  for (const auto& rel : doc.relations)
    ann += "R" + std::to_string(++r) + "\t" + rel.label + " Arg1:" + rel.left_ent + " Arg2:" + rel.right_ent + "\n";
  return {doc.text, ann};
}

void write_standoff_corpus(const std::vector<Document>& docs, const std::string& dir) {
  namespace fs = std::filesystem;
  for (const auto& doc : docs) {
    const auto [txt, ann] = to_standoff(doc);
    const fs::path base = fs::path(dir) / doc.project_id / doc.doc_id;
    write_file_atomic(base.string() + ".txt", txt);
    write_file_atomic(base.string() + ".ann", ann);
  }
}

}  // namespace relcat
