// Episodic memory: reservoir sampling and sample-wise importance management.
#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "model.hpp"
#include "numerics.hpp"
#include "stream.hpp"

namespace clib {

/// Reference to a train-pool sample plus its label.
struct SampleRef {
  std::size_t index = 0;
  int label = 0;
  friend bool operator==(const SampleRef&, const SampleRef&) = default;
};

struct MemorySlot {
  SampleRef sample;
  double importance = 0.0;  // H_i: expected memory-loss decrease when trained on
  friend bool operator==(const MemorySlot&, const MemorySlot&) = default;
};

struct EpisodicMemory {
  std::size_t capacity = 0;
  std::vector<MemorySlot> slots;
  double l_prev = 0.0;         // tracked mean loss over the slots
  std::uint64_t seen_count = 0;  // samples offered so far (reservoir)

  explicit EpisodicMemory(std::size_t cap = 0) : capacity(cap) {}

  std::size_t size() const { return slots.size(); }
  bool empty() const { return slots.empty(); }
  bool full() const { return slots.size() >= capacity; }
  friend bool operator==(const EpisodicMemory&, const EpisodicMemory&) = default;
};

/// Anything that can hand out a uniform integer in [0, n).
template <typename T>
concept IndexSource = requires(T& src, std::uint64_t n) {
  { src.uniform_index(n) } -> std::convertible_to<std::uint64_t>;
};

/// Algorithm R. Under capacity the sample is appended; otherwise it replaces a
/// uniformly random slot with probability capacity / seen_count.
template <IndexSource Source>
void reservoir_update(EpisodicMemory& mem, const SampleRef& sample, Source& rng) {
  if (mem.capacity == 0) throw std::invalid_argument("reservoir_update: zero capacity");
  ++mem.seen_count;
  if (mem.slots.size() < mem.capacity) {
    mem.slots.push_back({sample, 0.0});
    return;
  }
  const auto j = static_cast<std::size_t>(rng.uniform_index(mem.seen_count));
  if (j < mem.capacity) mem.slots[j] = {sample, 0.0};
}

/// Per-slot cross-entropy under `params`, one forward pass over the memory.
inline std::vector<double> slot_losses(const EpisodicMemory& mem, const MlpParams& params, const Dataset& dataset) {
  std::vector<std::size_t> idx(mem.slots.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = mem.slots[i].sample.index;
  const Batch b = gather(dataset.train, idx, dataset.dim);
  return per_sample_loss(forward(params, b.features), b.labels);
}

/// Mean loss over all slots.
inline double memory_loss(const EpisodicMemory& mem, const MlpParams& params, const Dataset& dataset) {
  if (mem.empty()) throw std::invalid_argument("memory_loss: empty memory");
  const auto losses = slot_losses(mem, params, dataset);
  double s = 0.0;
  for (double v : losses) s += v;
  return s / static_cast<double>(losses.size());
}

/// Importance update after a training step on slots `trained`. Duplicate
/// indices count once.
inline void update_importance(EpisodicMemory& mem, double l_cur, std::vector<std::size_t> trained, double lambda) {
  if (trained.empty()) throw std::invalid_argument("update_importance: empty index set");
  if (!(lambda > 0.0)) throw std::invalid_argument("update_importance: lambda must be positive");
  std::sort(trained.begin(), trained.end());
  trained.erase(std::unique(trained.begin(), trained.end()), trained.end());
  if (trained.back() >= mem.slots.size())
    throw std::out_of_range("update_importance: slot index " + std::to_string(trained.back()) + " out of range");
  const double actual = mem.l_prev - l_cur;
  double predicted = 0.0;
  for (std::size_t i : trained) predicted += mem.slots[i].importance;
  predicted /= static_cast<double>(trained.size());
  const double step = lambda * (actual - predicted);
  for (std::size_t i : trained) mem.slots[i].importance += step;
  mem.l_prev = l_cur;
}

/// Label whose removal the importance policy targets when the memory is full:
/// most frequent over slots plus the incoming sample. Ties go to the larger
/// memory-only count, then to the smaller label.
inline int most_frequent_label(const EpisodicMemory& mem, int incoming_label) {
  std::map<int, std::size_t> in_memory;
  for (const auto& s : mem.slots) ++in_memory[s.sample.label];
  std::map<int, std::size_t> with_new = in_memory;
  ++with_new[incoming_label];
  int best = with_new.begin()->first;
  for (const auto& [label, count] : with_new) {
    const std::size_t best_count = with_new[best];
    if (count > best_count) {
      best = label;
    } else if (count == best_count) {
      const std::size_t mem_here = in_memory.count(label) ? in_memory[label] : 0;
      const std::size_t mem_best = in_memory.count(best) ? in_memory[best] : 0;
      if (mem_here > mem_best) best = label;  // label order already makes smaller ids win otherwise
    }
  }
  return best;
}

/// Importance-based admission. The new sample always enters; when full it
/// replaces the least important slot of the most frequent label. `loss_of`
/// returns the current-model loss of a sample. Returns the slot written.
template <typename LossFn>
  requires std::invocable<LossFn&, const SampleRef&>
std::size_t importance_memory_update(EpisodicMemory& mem, const SampleRef& incoming, LossFn&& loss_of) {
  if (mem.capacity == 0) throw std::invalid_argument("importance_memory_update: zero capacity");
  ++mem.seen_count;
  std::size_t target = 0;
  if (mem.slots.size() < mem.capacity) {
    mem.slots.push_back({incoming, 0.0});
    target = mem.slots.size() - 1;
  } else {
    const int y_max = most_frequent_label(mem, incoming.label);
    bool found = false;
    for (std::size_t i = 0; i < mem.slots.size(); ++i) {
      if (mem.slots[i].sample.label != y_max) continue;
      if (!found || mem.slots[i].importance < mem.slots[target].importance) {
        target = i;
        found = true;
      }
    }
    const double m = static_cast<double>(mem.capacity);
    const double evicted_loss = static_cast<double>(loss_of(mem.slots[target].sample));
    mem.l_prev = mem.capacity > 1 ? (m / (m - 1.0)) * mem.l_prev - evicted_loss / (m - 1.0) : 0.0;
    mem.slots[target] = {incoming, 0.0};
  }
  const double size = static_cast<double>(mem.slots.size());
  const double new_loss = static_cast<double>(loss_of(incoming));
  mem.l_prev = ((size - 1.0) / size) * mem.l_prev + new_loss / size;

  double same_sum = 0.0, all_sum = 0.0;
  std::size_t same_n = 0, all_n = 0;
  for (std::size_t i = 0; i < mem.slots.size(); ++i) {
    if (i == target) continue;
    all_sum += mem.slots[i].importance;
    ++all_n;
    if (mem.slots[i].sample.label == incoming.label) {
      same_sum += mem.slots[i].importance;
      ++same_n;
    }
  }
  if (same_n > 0) {
    mem.slots[target].importance = same_sum / static_cast<double>(same_n);
  } else {
    mem.slots[target].importance = all_n > 0 ? all_sum / static_cast<double>(all_n) : 0.0;
  }
  return target;
}

/// Convenience overload evaluating losses with the model on the train pool.
inline std::size_t importance_memory_update(EpisodicMemory& mem, const SampleRef& incoming, const MlpParams& params,
                                            const Dataset& dataset) {
  auto loss_of = [&](const SampleRef& s) {
    const auto logits = forward(params, dataset.train.at(s.index).features);
    const int label = s.label;
    return loss(logits, std::span<const int>(&label, 1));
  };
  return importance_memory_update(mem, incoming, loss_of);
}

/// Slot indices for one training batch: without replacement when B <= |M|,
/// with replacement otherwise.
inline std::vector<std::size_t> sample_slot_indices(const EpisodicMemory& mem, std::size_t batch_size, Rng& rng) {
  if (mem.empty()) throw std::invalid_argument("sample_batch: empty memory");
  const std::size_t n = mem.size();
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  if (batch_size <= n) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t k = 0; k < batch_size; ++k) {
      const auto j = k + static_cast<std::size_t>(rng.uniform_index(n - k));
      std::swap(pool[k], pool[j]);
      out.push_back(pool[k]);
    }
  } else {
    for (std::size_t k = 0; k < batch_size; ++k) out.push_back(static_cast<std::size_t>(rng.uniform_index(n)));
  }
  return out;
}

struct MemoryBatch {
  Batch batch;
  std::vector<std::size_t> slot_indices;
};

inline MemoryBatch sample_batch(const EpisodicMemory& mem, std::size_t batch_size, const Dataset& dataset, Rng& rng) {
  MemoryBatch out;
  out.slot_indices = sample_slot_indices(mem, batch_size, rng);
  std::vector<std::size_t> samples(out.slot_indices.size());
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = mem.slots[out.slot_indices[i]].sample.index;
  out.batch = gather(dataset.train, samples, dataset.dim);
  return out;
}

/// Brute-force loss decrease over the candidate set for one gradient step on
/// each candidate: score_i = sum_{c in C} [l(c; theta) - l(c; theta - lr * grad l(i; theta))].
inline std::vector<double> oracle_loss_decrease(const std::vector<LabeledSample>& candidates,
                                                const MlpParams& params, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("oracle_loss_decrease: lr must be positive");
  if (candidates.empty()) return {};
  const std::size_t dim = params.input_dim();
  std::vector<std::size_t> all(candidates.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Batch everyone = gather(candidates, all, dim);
  auto total_loss = [&](const MlpParams& p) {
    double s = 0.0;
    for (double v : per_sample_loss(forward(p, everyone.features), everyone.labels)) s += v;
    return s;
  };
  const double before = total_loss(params);
  std::vector<double> scores(candidates.size());
  Optimizer sgd(OptimizerKind::sgd);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const std::size_t one[] = {i};
    const auto grad = backward(params, gather(candidates, one, dim));
    MlpParams stepped = params;
    sgd.step(stepped, grad.grads, lr);
    scores[i] = before - total_loss(stepped);
  }
  return scores;
}

inline nlohmann::json memory_snapshot(const EpisodicMemory& mem) {
  nlohmann::json sample_index = nlohmann::json::array(), labels = nlohmann::json::array(),
                 importance = nlohmann::json::array();
  for (const auto& s : mem.slots) {
    sample_index.push_back(s.sample.index);
    labels.push_back(s.sample.label);
    importance.push_back(s.importance);
  }
  return {{"capacity", mem.capacity}, {"sample_index", sample_index}, {"labels", labels},
          {"importance", importance}, {"l_prev", mem.l_prev},         {"seen_count", mem.seen_count}};
}

inline EpisodicMemory memory_from_snapshot(const nlohmann::json& j) {
  EpisodicMemory mem(j.at("capacity").get<std::size_t>());
  const auto idx = j.at("sample_index").get<std::vector<std::size_t>>();
  const auto labels = j.at("labels").get<std::vector<int>>();
  const auto imp = j.at("importance").get<std::vector<double>>();
  if (idx.size() != labels.size() || idx.size() != imp.size() || idx.size() > mem.capacity)
    throw std::runtime_error("memory snapshot: inconsistent slot arrays");
  for (std::size_t i = 0; i < idx.size(); ++i) mem.slots.push_back({{idx[i], labels[i]}, imp[i]});
  mem.l_prev = j.at("l_prev").get<double>();
  mem.seen_count = j.at("seen_count").get<std::uint64_t>();
  return mem;
}

}  // namespace clib
