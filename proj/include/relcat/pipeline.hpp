#pragma once

#include <map>
#include <string>
#include <vector>

#include "relcat/config.hpp"

namespace relcat {

struct PreparedData {
  std::vector<Document> documents;
  std::vector<RelationInstance> instances;  // gold first, then synthesized non-relations
  DropReport dropped;
  std::size_t nonrelations = 0;
};

PreparedData prepare_dataset(const RunConfig& cfg);
PreparedData prepare_dataset(std::vector<Document> docs, const GenerationPolicy& policy, bool synthesize);

// (project_id, doc_id) -> document text
using TextIndex = std::map<std::pair<std::string, std::string>, std::string>;
TextIndex index_texts(const std::vector<Document>& docs);
const std::string& text_for(const TextIndex& texts, const RelationInstance& inst);

// Vocabulary over the documents referenced by `instances`.
Vocab vocab_for(const std::vector<RelationInstance>& instances, const TextIndex& texts, std::size_t max_size,
                std::size_t min_freq, bool lowercase);

// Instances that do not fit max_seq_len are skipped and counted.
std::vector<EncodedInstance> encode_all(const std::vector<RelationInstance>& instances, const TextIndex& texts,
                                        const Vocab& vocab, const EncoderSettings& settings, const LabelSpace& labels,
                                        std::size_t* skipped = nullptr);

std::vector<IclExample> icl_examples(const std::vector<RelationInstance>& instances, const TextIndex& texts,
                                     const EncoderSettings& settings);

std::string instance_id(const RelationInstance& inst);

struct TrainedRun {
  std::vector<RelationInstance> train_set, test_set;
  LabelSpace labels;  // over all instances, so test-only labels still have an id
  Vocab vocab;        // built from the training split only
  TrainResult result;
  std::size_t skipped = 0;  // training instances that do not fit max_seq_len
};

// Stratified test split, vocabulary, encoding and training as configured.
TrainedRun train_run(const RunConfig& cfg, const std::vector<RelationInstance>& instances, const TextIndex& texts);

// Entity over scalar offsets [start, end) of `text`; throws when out of bounds.
Entity entity_at(const std::string& text, std::size_t start, std::size_t end, const std::string& id);

// Classifies one directed pair in a free-standing text.
Prediction classify_pair(const RelModel& model, const std::string& text, const Entity& left, const Entity& right);

}  // namespace relcat
