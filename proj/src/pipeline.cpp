#include "relcat/pipeline.hpp"

#include <set>

namespace relcat {

PreparedData prepare_dataset(std::vector<Document> docs, const GenerationPolicy& policy, bool synthesize) {
  PreparedData out;
  out.instances = build_gold_instances(docs, policy, &out.dropped);
  if (synthesize) {
    auto other = synthesize_nonrelations(docs, policy);
    out.nonrelations = other.size();
    out.instances.insert(out.instances.end(), other.begin(), other.end());
  }
  out.documents = std::move(docs);
  return out;
}

PreparedData prepare_dataset(const RunConfig& cfg) {
  if (cfg.corpus_dir.empty()) throw ConfigError("paths.corpus_dir is not set");
  TypeMap types;
  if (!cfg.type_map.empty()) types = load_type_map(read_file(cfg.type_map));
  auto docs = load_corpus_dir(cfg.corpus_dir, cfg.corpus_format, types);
  if (docs.empty()) throw Error("no documents found under " + cfg.corpus_dir);
  return prepare_dataset(std::move(docs), cfg.generation, cfg.synthesize_nonrelations);
}

TextIndex index_texts(const std::vector<Document>& docs) {
  TextIndex idx;
  for (const auto& d : docs) idx[{d.project_id, d.doc_id}] = d.text;
  return idx;
}

const std::string& text_for(const TextIndex& texts, const RelationInstance& inst) {
  auto it = texts.find({inst.project_id, inst.doc_id});
  if (it == texts.end()) throw Error("instance refers to unknown document " + inst.project_id + "/" + inst.doc_id);
  return it->second;
}

Vocab vocab_for(const std::vector<RelationInstance>& instances, const TextIndex& texts, std::size_t max_size,
                std::size_t min_freq, bool lowercase) {
  std::set<std::pair<std::string, std::string>> used;
  for (const auto& inst : instances) {
    text_for(texts, inst);
    used.insert({inst.project_id, inst.doc_id});
  }
  std::vector<std::string> corpus;
  for (const auto& key : used) corpus.push_back(texts.at(key));
  return build_vocab(corpus, max_size, min_freq, lowercase);
}

std::vector<EncodedInstance> encode_all(const std::vector<RelationInstance>& instances, const TextIndex& texts,
                                        const Vocab& vocab, const EncoderSettings& settings, const LabelSpace& labels,
                                        std::size_t* skipped) {
  std::vector<EncodedInstance> out;
  out.reserve(instances.size());
  std::size_t n_skipped = 0;
  for (const auto& inst : instances) {
    try {
      out.push_back(encode(inst, text_for(texts, inst), vocab, settings, labels));
    } catch (const EncodeError&) {
      ++n_skipped;
    }
  }
  if (skipped) *skipped = n_skipped;
  return out;
}

std::string instance_id(const RelationInstance& inst) {
  return inst.project_id + "/" + inst.doc_id + ":" + inst.left.ent_id + "->" + inst.right.ent_id;
}

std::vector<IclExample> icl_examples(const std::vector<RelationInstance>& instances, const TextIndex& texts,
                                     const EncoderSettings& settings) {
  std::vector<IclExample> out;
  for (const auto& inst : instances)
    out.push_back({instance_id(inst), context_text(inst, text_for(texts, inst), settings), inst.left.surface,
                   inst.right.surface, inst.label});
  return out;
}

Entity entity_at(const std::string& text, std::size_t start, std::size_t end, const std::string& id) {
  if (start >= end || end > utf8::length(text)) throw Error("entity '" + id + "' span out of bounds");
  Entity e;
  e.ent_id = id;
  e.start = start;
  e.end = end;
  e.surface = slice_scalars(text, start, end);
  return e;
}

Prediction classify_pair(const RelModel& model, const std::string& text, const Entity& left, const Entity& right) {
  RelationInstance inst;
  inst.doc_id = "input";
  inst.left = left;
  inst.right = right;
  return predict(model, {encode(inst, text, model.vocab, model.encoder, model.labels)}).front();
}

TrainedRun train_run(const RunConfig& cfg, const std::vector<RelationInstance>& instances, const TextIndex& texts) {
  if (instances.empty()) throw Error("no instances to train on");
  auto [train_set, test_set] = stratified_split(instances, cfg.test_split_fraction, cfg.train.seed);
  const LabelSpace labels = LabelSpace::from_instances(instances);
  Vocab vocab = vocab_for(train_set, texts, cfg.vocab_max_size, cfg.vocab_min_freq, cfg.encoder.lowercase);
  std::size_t skipped = 0;
  const auto encoded = encode_all(train_set, texts, vocab, cfg.encoder, labels, &skipped);
  ModelConfig mc = cfg.model;
  mc.max_seq_len = cfg.encoder.max_seq_len;
  TrainResult result = train(encoded, vocab, labels, cfg.encoder, mc, cfg.train);
  return {std::move(train_set), std::move(test_set), labels, std::move(vocab), std::move(result), skipped};
}

}  // namespace relcat
