#include "relcat/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace relcat {

EvalReport compute_report(const std::vector<std::string>& labels, const std::vector<int>& gold,
                          const std::vector<int>& pred) {
  if (gold.size() != pred.size()) throw InternalError("gold and prediction vectors differ in length");
  const std::size_t k = labels.size();
  EvalReport r;
  r.labels = labels;
  r.total = gold.size();
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  r.rejected.assign(k, 0);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < 0 || static_cast<std::size_t>(gold[i]) >= k) throw Error("gold label outside the label space");
    if (pred[i] >= static_cast<int>(k)) throw Error("prediction outside the label space");
    if (pred[i] < 0)
      ++r.rejected[static_cast<std::size_t>(gold[i])];
    else
      ++r.confusion[static_cast<std::size_t>(gold[i])][static_cast<std::size_t>(pred[i])];
  }
  const double n = static_cast<double>(r.total);
  for (std::size_t c = 0; c < k; ++c) {
    ClassMetrics m;
    m.label = labels[c];
    m.tp = r.confusion[c][c];
    for (std::size_t j = 0; j < k; ++j) {
      if (j == c) continue;
      m.fn += r.confusion[c][j];
      m.fp += r.confusion[j][c];
    }
    m.fn += r.rejected[c];
    m.support = m.tp + m.fn;
    m.tn = r.total - m.tp - m.fp - m.fn;
    m.accuracy = r.total ? static_cast<double>(m.tp + m.tn) / n : 0.0;
    m.precision_undefined = m.tp + m.fp == 0;
    m.recall_undefined = m.support == 0;
    m.precision = m.precision_undefined ? 0.0 : static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
    m.recall = m.recall_undefined ? 0.0 : static_cast<double>(m.tp) / static_cast<double>(m.support);
    m.f1 = (m.precision + m.recall) > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    r.per_class.push_back(m);
  }
  if (k) {
    for (const auto& m : r.per_class) {
      r.macro_accuracy += m.accuracy;
      r.macro_precision += m.precision;
      r.macro_recall += m.recall;
      r.macro_f1 += m.f1;
    }
    const double kk = static_cast<double>(k);
    r.macro_accuracy /= kk;
    r.macro_precision /= kk;
    r.macro_recall /= kk;
    r.macro_f1 /= kk;
  }
  return r;
}

ReportFormat parse_report_format(const std::string& s) {
  if (s == "text") return ReportFormat::Text;
  if (s == "json") return ReportFormat::Json;
  if (s == "csv") return ReportFormat::Csv;
  throw ConfigError("unknown report format '" + s + "' (valid: text, json, csv)");
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string render_text(const EvalReport& r) {
  std::size_t w = 5;
  for (const auto& l : r.labels) w = std::max(w, l.size());
  w += 2;
  std::ostringstream out;
  auto cell = [&](const std::string& s, std::size_t width, bool left) {
    if (s.size() >= width) return s;
    return left ? s + std::string(width - s.size(), ' ') : std::string(width - s.size(), ' ') + s;
  };
  out << cell("Class", w, true) << cell("Accuracy", 10, false) << cell("Precision", 11, false)
      << cell("Recall", 9, false) << cell("F1", 8, false) << cell("Support", 9, false) << '\n';
  if (r.labels.empty()) return out.str();
  bool any_flag = false;
  for (const auto& m : r.per_class) {
    std::string p = fmt("%.3f", m.precision) + (m.precision_undefined ? "*" : " ");
    std::string rc = fmt("%.3f", m.recall) + (m.recall_undefined ? "*" : " ");
    any_flag = any_flag || m.precision_undefined || m.recall_undefined;
    out << cell(m.label, w, true) << cell(fmt("%.3f", m.accuracy), 10, false) << cell(p, 12, false)
        << cell(rc, 9, false) << cell(fmt("%.3f", m.f1), 7, false) << cell(std::to_string(m.support), 9, false)
        << '\n';
  }
  out << std::string(w + 47, '-') << '\n';
  out << cell("Macro", w, true) << cell(fmt("%.3f", r.macro_accuracy), 10, false)
      << cell(fmt("%.3f", r.macro_precision) + " ", 12, false) << cell(fmt("%.3f", r.macro_recall) + " ", 9, false)
      << cell(fmt("%.3f", r.macro_f1), 7, false) << cell(std::to_string(r.total), 9, false) << '\n';
  std::size_t rejected = std::accumulate(r.rejected.begin(), r.rejected.end(), std::size_t{0});
  if (rejected) out << "Rejected (unparseable or failed): " << rejected << '\n';
  if (any_flag) out << "* undefined (no predicted or no actual positives), reported as 0\n";
  return out.str();
}

std::string render_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["labels"] = r.labels;
  j["per_class"] = nlohmann::ordered_json::array();
  for (const auto& m : r.per_class) {
    nlohmann::ordered_json c;
    c["label"] = m.label;
    c["accuracy"] = m.accuracy;
    c["precision"] = m.precision;
    c["recall"] = m.recall;
    c["f1"] = m.f1;
    c["support"] = m.support;
    c["tp"] = m.tp;
    c["fp"] = m.fp;
    c["fn"] = m.fn;
    c["tn"] = m.tn;
    c["precision_undefined"] = m.precision_undefined;
    c["recall_undefined"] = m.recall_undefined;
    j["per_class"].push_back(c);
  }
  j["macro"] = {{"accuracy", r.macro_accuracy},
                {"f1", r.macro_f1},
                {"recall", r.macro_recall},
                {"precision", r.macro_precision}};
  j["confusion"] = r.confusion;
  j["rejected"] = r.rejected;
  j["total"] = r.total;
  return j.dump(2) + "\n";
}

std::string render_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "label,accuracy,precision,recall,f1,support\n";
  for (const auto& m : r.per_class)
    out << m.label << ',' << fmt("%.6f", m.accuracy) << ',' << fmt("%.6f", m.precision) << ','
        << fmt("%.6f", m.recall) << ',' << fmt("%.6f", m.f1) << ',' << m.support << '\n';
  if (!r.labels.empty())
    out << "macro," << fmt("%.6f", r.macro_accuracy) << ',' << fmt("%.6f", r.macro_precision) << ','
        << fmt("%.6f", r.macro_recall) << ',' << fmt("%.6f", r.macro_f1) << ',' << r.total << '\n';
  return out.str();
}

}  // namespace

std::string render_report(const EvalReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::Text:
      return render_text(report);
    case ReportFormat::Json:
      return render_json(report);
    case ReportFormat::Csv:
      return render_csv(report);
  }
  return {};
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split_indices(
    const std::vector<std::string>& labels, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must be in (0, 1)");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  std::string too_small;
  for (const auto& [label, idx] : groups)
    if (idx.size() < 2) too_small += (too_small.empty() ? "" : ", ") + label;
  if (!too_small.empty()) throw Error("labels with fewer than 2 instances cannot be split: " + too_small);
  std::vector<std::size_t> train, test;
  for (auto& [label, idx] : groups) {
    Rng rng(derive_seed(seed, label));
    rng.shuffle(idx);
    const double want = static_cast<double>(idx.size()) * fraction;
    auto n_test = static_cast<std::size_t>(std::max(0.0, std::ceil(want - 0.5)));
    n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
    test.insert(test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

std::pair<std::vector<RelationInstance>, std::vector<RelationInstance>> stratified_split(
    const std::vector<RelationInstance>& instances, double fraction, std::uint64_t seed) {
  std::vector<std::string> labels;
  for (const auto& i : instances) labels.push_back(i.label);
  auto [tr, te] = stratified_split_indices(labels, fraction, seed);
  std::pair<std::vector<RelationInstance>, std::vector<RelationInstance>> out;
  for (auto i : tr) out.first.push_back(instances[i]);
  for (auto i : te) out.second.push_back(instances[i]);
  return out;
}

void TrainConfig::validate() const {
  if (!(eval_split_fraction > 0.0 && eval_split_fraction < 1.0))
    throw ConfigError("eval_split_fraction must be in (0, 1)");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
}

std::vector<double> class_weights_for(const std::vector<int>& label_ids, std::size_t n_labels) {
  std::map<std::string, std::size_t> counts;
  auto key = [](std::size_t c) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%012zu", c);
    return std::string(buf);
  };
  for (std::size_t c = 0; c < n_labels; ++c) counts[key(c)] = 0;
  for (int y : label_ids) ++counts[key(static_cast<std::size_t>(y))];
  for (std::size_t c = 0; c < n_labels; ++c)
    if (counts[key(c)] == 0)
      throw Error("label id " + std::to_string(c) + " has no training instances; drop or merge the class");
  return compute_class_weights(counts);  // zero-padded keys keep id order
}

std::vector<Prediction> predict(const RelModel& model, const std::vector<EncodedInstance>& batch) {
  std::vector<Prediction> out;
  constexpr std::size_t kChunk = 64;
  for (std::size_t i = 0; i < batch.size(); i += kChunk) {
    const std::vector<EncodedInstance> chunk(batch.begin() + static_cast<std::ptrdiff_t>(i),
                                             batch.begin() + static_cast<std::ptrdiff_t>(std::min(batch.size(), i + kChunk)));
    const Mat probs = softmax_rows(forward(model, chunk, false).logits);
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      Prediction p;
      Eigen::Index arg;
      probs.row(r).maxCoeff(&arg);
      p.label_id = static_cast<int>(arg);
      p.probabilities.assign(probs.row(r).data(), probs.row(r).data() + probs.cols());
      out.push_back(std::move(p));
    }
  }
  return out;
}

EvalReport evaluate(const RelModel& model, const std::vector<EncodedInstance>& instances) {
  std::vector<int> gold, pred;
  for (const auto& e : instances) {
    if (e.label_id < 0 || static_cast<std::size_t>(e.label_id) >= model.labels.size())
      throw Error("instance label is not in the model's label space");
    gold.push_back(e.label_id);
  }
  for (const auto& p : predict(model, instances)) pred.push_back(p.label_id);
  return compute_report(model.labels.labels(), gold, pred);
}

TrainResult train(const std::vector<EncodedInstance>& data, const Vocab& vocab, const LabelSpace& labels,
                  const EncoderSettings& encoder, ModelConfig model_config, const TrainConfig& tc) {
  tc.validate();
  model_config.vocab_size = vocab.size();
  model_config.n_labels = labels.size();
  model_config.max_seq_len = std::max(model_config.max_seq_len, encoder.max_seq_len);
  TrainResult result;
  result.model = RelModel::init(model_config, tc.freeze, vocab, labels, encoder, tc.seed);
  if (tc.epochs == 0) return result;

  std::vector<std::string> names;
  for (const auto& e : data) {
    if (e.label_id < 0 || static_cast<std::size_t>(e.label_id) >= labels.size())
      throw Error("training instance has no valid label");
    names.push_back(labels.label(static_cast<std::size_t>(e.label_id)));
  }
  const auto [train_idx, dev_idx] = stratified_split_indices(names, tc.eval_split_fraction, tc.seed);
  std::vector<EncodedInstance> train_set, dev_set;
  std::vector<int> train_labels;
  for (auto i : train_idx) {
    train_set.push_back(data[i]);
    train_labels.push_back(data[i].label_id);
  }
  for (auto i : dev_idx) dev_set.push_back(data[i]);

  const std::vector<double> weights =
      tc.use_class_weights ? class_weights_for(train_labels, labels.size()) : std::vector<double>(labels.size(), 1.0);
  std::optional<StratifiedPlan> plan;
  if (tc.use_stratified_batching) plan.emplace(train_labels, tc.batch_size, tc.seed);

  RelModel model = result.model;
  AdamState adam = AdamState::for_model(model);
  AdamSettings adam_settings;
  adam_settings.lr = tc.lr;
  Rng dropout_rng(derive_seed(tc.seed, "dropout"));
  double best_f1 = -1.0;
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const std::vector<Batch> batches = plan ? plan->epoch(epoch)
                                            : random_batches(train_set.size(), tc.batch_size,
                                                             derive_seed(tc.seed, "epoch:" + std::to_string(epoch)));
    double loss_sum = 0.0;
    for (const auto& b : batches) {
      std::vector<EncodedInstance> batch;
      batch.reserve(b.size());
      for (auto i : b) batch.push_back(train_set[i]);
      LossResult lr = loss_and_grads(model, batch, weights, true, &dropout_rng);
      adam_step(model, lr.grads, adam, adam_settings);
      if (!model.all_finite()) throw Error("parameters became non-finite at epoch " + std::to_string(epoch + 1));
      loss_sum += lr.loss;
    }
    const EvalReport dev = evaluate(model, dev_set);
    EpochLog entry;
    entry.epoch = epoch + 1;
    entry.train_loss = batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size());
    entry.dev_macro_f1 = dev.macro_f1;
    entry.dev_accuracy = dev.total ? static_cast<double>([&] {
      std::size_t c = 0;
      for (std::size_t k = 0; k < dev.confusion.size(); ++k) c += dev.confusion[k][k];
      return c;
    }()) / static_cast<double>(dev.total)
                                   : 0.0;
    entry.batches = batches.size();
    if (plan) entry.quotas = plan->quotas();
    result.log.push_back(entry);
    if (dev.macro_f1 > best_f1) {
      best_f1 = dev.macro_f1;
      result.model = model;
      result.best_epoch = epoch + 1;
      since_best = 0;
    } else if (tc.early_stop_patience && ++since_best >= tc.early_stop_patience) {
      break;
    }
  }
  return result;
}

std::string training_log_jsonl(const std::vector<EpochLog>& log) {
  std::string out;
  for (const auto& e : log) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["dev_macro_f1"] = e.dev_macro_f1;
    j["dev_accuracy"] = e.dev_accuracy;
    j["batches"] = e.batches;
    j["quotas"] = e.quotas;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace relcat
