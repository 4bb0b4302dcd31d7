#include "relcat/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "relcat/common.hpp"

namespace relcat {

std::vector<double> compute_class_weights(const std::map<std::string, std::size_t>& counts) {
  if (counts.empty()) throw Error("cannot compute class weights for an empty label set");
  std::size_t total = 0;
  for (const auto& [label, n] : counts) {
    if (n == 0)
      throw Error("class '" + label + "' has no instances; drop it or merge it into another class before training");
    total += n;
  }
  const double k = static_cast<double>(counts.size());
  std::vector<double> w;
  for (const auto& [label, n] : counts) w.push_back(static_cast<double>(total) / (k * static_cast<double>(n)));
  return w;
}

std::vector<std::size_t> apportion_quotas(const std::vector<std::size_t>& class_sizes, std::size_t batch_size) {
  const std::size_t k = class_sizes.size();
  if (k == 0) throw Error("no classes to apportion");
  if (batch_size < k) throw Error("batch_size must be >= the number of labels");
  for (auto n : class_sizes)
    if (n == 0) throw Error("every label needs at least one instance");
  const std::size_t seats = batch_size - k;
  double root_sum = 0.0;
  for (auto n : class_sizes) root_sum += std::sqrt(static_cast<double>(n));
  std::vector<std::size_t> quota(k, 1);
  std::vector<double> remainder(k, 0.0);
  std::size_t given = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double share =
        root_sum > 0 ? static_cast<double>(seats) * std::sqrt(static_cast<double>(class_sizes[c])) / root_sum : 0.0;
    const auto whole = static_cast<std::size_t>(std::floor(share));
    quota[c] += whole;
    given += whole;
    remainder[c] = share - static_cast<double>(whole);
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
    if (class_sizes[a] != class_sizes[b]) return class_sizes[a] > class_sizes[b];
    return a < b;
  });
  for (std::size_t i = 0; given < seats; ++i, ++given) ++quota[order[i % k]];
  return quota;
}

StratifiedPlan::StratifiedPlan(const std::vector<int>& labels, std::size_t batch_size, std::uint64_t seed,
                               bool allow_replacement_for_minority)
    : batch_size_(batch_size), seed_(seed), replacement_(allow_replacement_for_minority) {
  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw Error("negative label id in stratified plan");
    max_label = std::max(max_label, l);
  }
  members_.resize(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < labels.size(); ++i) members_[static_cast<std::size_t>(labels[i])].push_back(i);
  std::vector<std::size_t> sizes;
  for (std::size_t c = 0; c < members_.size(); ++c) {
    if (members_[c].empty()) throw Error("label id " + std::to_string(c) + " has no instances");
    sizes.push_back(members_[c].size());
  }
  quotas_ = apportion_quotas(sizes, batch_size);
  for (std::size_t c = 1; c < sizes.size(); ++c)
    if (sizes[c] > sizes[majority_]) majority_ = c;
}

std::size_t StratifiedPlan::batches_per_epoch() const {
  const std::size_t n = members_[majority_].size(), q = quotas_[majority_];
  return (n + q - 1) / q;
}

std::vector<Batch> StratifiedPlan::epoch(std::size_t epoch_index) const {
  Rng rng(derive_seed(seed_, "epoch:" + std::to_string(epoch_index)));
  std::vector<std::vector<std::size_t>> order = members_;
  for (auto& o : order) rng.shuffle(o);
  std::vector<std::size_t> cursor(order.size(), 0);
  const std::size_t n_batches = batches_per_epoch();
  std::vector<Batch> out(n_batches);
  for (std::size_t t = 0; t < n_batches; ++t) {
    Batch& batch = out[t];
    for (std::size_t c = 0; c < order.size(); ++c) {
      std::size_t take = quotas_[c];
      if (c == majority_) take = std::min(take, order[c].size() - cursor[c]);
      for (std::size_t k = 0; k < take; ++k) {
        if (cursor[c] == order[c].size()) {
          if (!replacement_) break;
          rng.shuffle(order[c]);
          cursor[c] = 0;
        }
        batch.push_back(order[c][cursor[c]++]);
      }
    }
  }
  return out;
}

std::vector<Batch> random_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw Error("batch_size must be positive");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  std::vector<Batch> out;
  for (std::size_t i = 0; i < n; i += batch_size)
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  return out;
}

}  // namespace relcat
