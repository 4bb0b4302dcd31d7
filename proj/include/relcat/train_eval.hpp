#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "relcat/model.hpp"
#include "relcat/sampler.hpp"

namespace relcat {

struct ClassMetrics {
  std::string label;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t support = 0;
  double accuracy = 0.0;  // one-vs-rest: (TP + TN) / N
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_undefined = false;  // no predicted positives; reported as 0
  bool recall_undefined = false;     // no actual positives; reported as 0
};

struct EvalReport {
  std::vector<std::string> labels;
  std::vector<ClassMetrics> per_class;
  double macro_accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  // confusion[gold][pred]; predictions outside the label space (rejects) are
  // counted in rejected[gold] instead.
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<std::size_t> rejected;
  std::size_t total = 0;
};

// pred[i] < 0 marks a rejected prediction (counts as a miss for gold[i]).
EvalReport compute_report(const std::vector<std::string>& labels, const std::vector<int>& gold,
                          const std::vector<int>& pred);

enum class ReportFormat { Text, Json, Csv };
ReportFormat parse_report_format(const std::string& s);
std::string render_report(const EvalReport& report, ReportFormat format);

// Per-label proportional split: each label sends round-half-down(n * fraction)
// instances to test, clamped to [1, n - 1]. Returns ascending index lists.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split_indices(
    const std::vector<std::string>& labels, double fraction, std::uint64_t seed);

std::pair<std::vector<RelationInstance>, std::vector<RelationInstance>> stratified_split(
    const std::vector<RelationInstance>& instances, double fraction, std::uint64_t seed);

struct TrainConfig {
  std::size_t epochs = 20;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  FreezeMode freeze = FreezeMode::AllUnfrozen;
  bool use_class_weights = true;
  bool use_stratified_batching = true;
  std::uint64_t seed = 42;
  std::size_t early_stop_patience = 5;  // 0 disables early stopping
  double eval_split_fraction = 0.1;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_macro_f1 = 0.0;
  double dev_accuracy = 0.0;
  std::size_t batches = 0;
  std::vector<std::size_t> quotas;  // empty for random batching
};

struct TrainResult {
  RelModel model;  // best dev macro-F1 checkpoint
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
};

std::vector<double> class_weights_for(const std::vector<int>& label_ids, std::size_t n_labels);

// `data` must be encoded against `labels`/`vocab`; a stratified dev split of
// eval_split_fraction is held out for checkpoint selection.
TrainResult train(const std::vector<EncodedInstance>& data, const Vocab& vocab, const LabelSpace& labels,
                  const EncoderSettings& encoder, ModelConfig model_config, const TrainConfig& train_config);

std::string training_log_jsonl(const std::vector<EpochLog>& log);

struct Prediction {
  int label_id = -1;
  std::vector<double> probabilities;
};

std::vector<Prediction> predict(const RelModel& model, const std::vector<EncodedInstance>& batch);

EvalReport evaluate(const RelModel& model, const std::vector<EncodedInstance>& instances);

}  // namespace relcat
