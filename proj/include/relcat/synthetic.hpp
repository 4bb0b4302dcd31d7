#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "relcat/corpus.hpp"

namespace relcat {

// Seeded generator of medication-style documents. Each relation sentence links an
// attribute mention to a drug mention through a class-specific cue phrase; half of
// the attribute surfaces come from a pool shared by every class, so the cue around
// the marked pair is what identifies the label. Two relation sentences per document
// (plus filler) make the pair identity matter.
struct SyntheticCorpusSpec {
  std::map<std::string, std::size_t> relations_per_label;  // labels from synthetic_labels()
  std::uint64_t seed = 7;
  std::size_t relations_per_doc = 2;
  std::size_t filler_words = 6;
  bool unicode_filler = false;
  std::string project_id = "synthetic";
};

const std::vector<std::string>& synthetic_labels();

std::vector<Document> generate_synthetic_corpus(const SyntheticCorpusSpec& spec);

// brat .txt/.ann contents for a document.
std::pair<std::string, std::string> to_standoff(const Document& doc);

void write_standoff_corpus(const std::vector<Document>& docs, const std::string& dir);

}  // namespace relcat
