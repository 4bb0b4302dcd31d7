#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace relcat {

// w[c] = N / (K * n_c), in ascending label order of `counts`.
std::vector<double> compute_class_weights(const std::map<std::string, std::size_t>& counts);

// One seat per label, then the remaining batch_size - K seats by largest
// remainder on shares proportional to sqrt(count). Equal remainders go to the
// larger class, then to the earlier label.
std::vector<std::size_t> apportion_quotas(const std::vector<std::size_t>& class_sizes, std::size_t batch_size);

using Batch = std::vector<std::size_t>;  // indices into the instance list

class StratifiedPlan {
 public:
  // labels[i] is the class id of instance i; ids must be dense 0..K-1.
  StratifiedPlan(const std::vector<int>& labels, std::size_t batch_size, std::uint64_t seed,
                 bool allow_replacement_for_minority = true);

  std::size_t batch_size() const { return batch_size_; }
  const std::vector<std::size_t>& quotas() const { return quotas_; }
  std::size_t majority_class() const { return majority_; }
  std::size_t batches_per_epoch() const;

  // Within-class orders are shuffled per epoch; minority classes are reshuffled
  // and reused when exhausted. The epoch ends once the majority class has been
  // consumed exactly once; the last batch carries its remainder.
  std::vector<Batch> epoch(std::size_t epoch_index) const;

 private:
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::size_t> quotas_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool replacement_;
  std::size_t majority_ = 0;
};

// Seeded shuffle then consecutive chunks; the last chunk may be short.
std::vector<Batch> random_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed);

}  // namespace relcat
