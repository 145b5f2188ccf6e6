// Online training loops. A Learner only ever sees one streamed sample at a
// time; task ids and boundary flags stay in the driver, which uses them for
// evaluation bookkeeping alone.
#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "memory.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "numerics.hpp"
#include "scheduler.hpp"
#include "stream.hpp"

namespace clib {

enum class MemoryPolicy { importance, reservoir };
enum class MemoryUsage { memory_only, joint_er };
enum class SchedulerKind { adaptive, exp_reset, constant };
enum class EvalPopulation { seen_classes, all_classes };

NLOHMANN_JSON_SERIALIZE_ENUM(MemoryPolicy, {{MemoryPolicy::importance, "importance"},
                                            {MemoryPolicy::reservoir, "reservoir"}})
NLOHMANN_JSON_SERIALIZE_ENUM(MemoryUsage, {{MemoryUsage::memory_only, "memory_only"},
                                           {MemoryUsage::joint_er, "joint_er"}})
NLOHMANN_JSON_SERIALIZE_ENUM(SchedulerKind, {{SchedulerKind::adaptive, "adaptive"},
                                             {SchedulerKind::exp_reset, "exp_reset"},
                                             {SchedulerKind::constant, "constant"}})
NLOHMANN_JSON_SERIALIZE_ENUM(EvalPopulation, {{EvalPopulation::seen_classes, "seen"},
                                              {EvalPopulation::all_classes, "all"}})
NLOHMANN_JSON_SERIALIZE_ENUM(OptimizerKind, {{OptimizerKind::sgd, "sgd"}, {OptimizerKind::adam, "adam"}})

struct TrainConfig {
  std::string method = "clib";
  MemoryPolicy memory_policy = MemoryPolicy::importance;
  MemoryUsage memory_usage = MemoryUsage::memory_only;
  SchedulerKind scheduler = SchedulerKind::adaptive;
  std::size_t batch_size = 16;
  std::size_t updates_per_sample = 1;
  std::size_t capacity = 500;
  double lambda = 0.1;
  std::size_t importance_every_k = 1;
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr0 = 3e-4;
  double exp_gamma = 0.9999;
  double adaptive_gamma = 0.95;
  std::size_t hist_len = 10;
  double alpha = 0.05;
  std::size_t delta_n = 100;
  EvalPopulation eval_population = EvalPopulation::seen_classes;
  std::vector<std::size_t> hidden = {64, 64};
  std::uint64_t seed = 0;

  static TrainConfig clib() { return {}; }

  static TrainConfig er_baseline() {
    TrainConfig c;
    c.method = "er_baseline";
    c.memory_policy = MemoryPolicy::reservoir;
    c.memory_usage = MemoryUsage::joint_er;
    c.scheduler = SchedulerKind::exp_reset;
    return c;
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
    if (batch_size < 1) fail("training.batch_size must be >= 1");
    if (memory_usage == MemoryUsage::joint_er && (batch_size < 2 || batch_size % 2 != 0))
      fail("training.batch_size must be even and >= 2 for joint_er");
    if (updates_per_sample < 1) fail("training.updates_per_sample must be >= 1");
    if (capacity < 1) fail("memory.capacity must be >= 1");
    if (!(lambda > 0.0)) fail("memory.lambda must be > 0");
    if (importance_every_k < 1) fail("memory.importance_every_k must be >= 1");
    if (!(lr0 > 0.0)) fail("training.lr must be > 0");
    if (!(exp_gamma > 0.0 && exp_gamma <= 1.0)) fail("scheduler.exp_gamma must be in (0, 1]");
    if (!(adaptive_gamma > 0.0 && adaptive_gamma < 1.0)) fail("scheduler.gamma must be in (0, 1)");
    if (hist_len < 2) fail("scheduler.hist_len must be >= 2");
    if (!(alpha > 0.0 && alpha < 0.5)) fail("scheduler.alpha must be in (0, 0.5)");
    if (delta_n < 1) fail("eval.delta_n must be >= 1");
    for (std::size_t h : hidden)
      if (h < 1) fail("training.hidden widths must be >= 1");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"method", c.method},
          {"memory_policy", c.memory_policy},
          {"memory_usage", c.memory_usage},
          {"scheduler", c.scheduler},
          {"batch_size", c.batch_size},
          {"updates_per_sample", c.updates_per_sample},
          {"capacity", c.capacity},
          {"lambda", c.lambda},
          {"importance_every_k", c.importance_every_k},
          {"optimizer", c.optimizer},
          {"lr0", c.lr0},
          {"exp_gamma", c.exp_gamma},
          {"adaptive_gamma", c.adaptive_gamma},
          {"hist_len", c.hist_len},
          {"alpha", c.alpha},
          {"delta_n", c.delta_n},
          {"eval_population", c.eval_population},
          {"hidden", c.hidden},
          {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.method = j.at("method").get<std::string>();
  c.memory_policy = j.at("memory_policy").get<MemoryPolicy>();
  c.memory_usage = j.at("memory_usage").get<MemoryUsage>();
  c.scheduler = j.at("scheduler").get<SchedulerKind>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.updates_per_sample = j.at("updates_per_sample").get<std::size_t>();
  c.capacity = j.at("capacity").get<std::size_t>();
  c.lambda = j.at("lambda").get<double>();
  c.importance_every_k = j.at("importance_every_k").get<std::size_t>();
  c.optimizer = j.at("optimizer").get<OptimizerKind>();
  c.lr0 = j.at("lr0").get<double>();
  c.exp_gamma = j.at("exp_gamma").get<double>();
  c.adaptive_gamma = j.at("adaptive_gamma").get<double>();
  c.hist_len = j.at("hist_len").get<std::size_t>();
  c.alpha = j.at("alpha").get<double>();
  c.delta_n = j.at("delta_n").get<std::size_t>();
  c.eval_population = j.at("eval_population").get<EvalPopulation>();
  c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

struct LrTracePoint {
  std::uint64_t update = 0;  // 1-based optimizer step
  double lr = 0.0;
  double eta_bar = 0.0;
  friend bool operator==(const LrTracePoint&, const LrTracePoint&) = default;
};

/// Model, memory, optimizer and LR schedule of one run. Training decisions are
/// driven only by the samples passed to observe().
class Learner {
 public:
  Learner(const TrainConfig& config, const Dataset& dataset, MlpParams init)
      : config_(config),
        dataset_(&dataset),
        params_(std::move(init)),
        optimizer_(config.optimizer),
        memory_(config.capacity),
        scheduler_(make_scheduler(config)),
        memory_rng_(Rng::derive(config.seed, "memory")),
        batch_rng_(Rng::derive(config.seed, "batch")) {
    config_.validate();
    check_shapes(params_);
    if (params_.input_dim() != dataset.dim || params_.num_classes() != dataset.num_classes)
      throw std::invalid_argument("Learner: model shape does not match dataset");
  }

  void observe(const SampleRef& sample) {
    if (auto* exp = std::get_if<ExpResetLr>(&scheduler_)) exp->observe_label(sample.label);
    admit(sample);
    if (config_.memory_usage == MemoryUsage::memory_only) {
      for (std::size_t u = 0; u < config_.updates_per_sample; ++u) {
        const auto slots = sample_slot_indices(memory_, config_.batch_size, batch_rng_);
        std::vector<std::size_t> rows(slots.size());
        for (std::size_t i = 0; i < slots.size(); ++i) rows[i] = memory_.slots[slots[i]].sample.index;
        train_step(rows, slots);
      }
      return;
    }
    staged_.push_back(sample);
    if (staged_.size() == config_.batch_size / 2) flush();
  }

  /// Trains on any partially filled ER staging buffer at the end of the stream.
  void finish() {
    if (!staged_.empty()) flush();
  }

  /// Called before every update with the train-pool rows of the batch and
  /// the memory slots it drew from.
  using BatchObserver = std::function<void(const std::vector<std::size_t>& rows, const std::vector<std::size_t>& slots)>;
  void set_batch_observer(BatchObserver observer) { observer_ = std::move(observer); }

  const MlpParams& params() const { return params_; }
  const EpisodicMemory& memory() const { return memory_; }
  std::uint64_t optimizer_steps() const { return steps_; }
  const std::vector<LrTracePoint>& lr_trace() const { return lr_trace_; }
  double current_lr() const {
    return std::visit([](const auto& s) { return s.lr(); }, scheduler_);
  }

 private:
  using Scheduler = std::variant<ConstantLr, ExpResetLr, AdaptiveLr>;

  static Scheduler make_scheduler(const TrainConfig& c) {
    switch (c.scheduler) {
      case SchedulerKind::constant:
        return ConstantLr(c.lr0);
      case SchedulerKind::exp_reset:
        return ExpResetLr(c.lr0, c.exp_gamma);
      case SchedulerKind::adaptive:
        return AdaptiveLr(AdaptiveLrConfig{c.lr0, c.adaptive_gamma, c.hist_len, c.alpha});
    }
    throw std::logic_error("unknown scheduler");
  }

  double sample_loss(const SampleRef& s) const {
    const int label = s.label;
    return loss(forward(params_, dataset_->train.at(s.index).features), std::span<const int>(&label, 1));
  }

  void admit(const SampleRef& sample) {
    if (config_.memory_policy == MemoryPolicy::reservoir) {
      reservoir_update(memory_, sample, memory_rng_);
    } else {
      importance_memory_update(memory_, sample, [this](const SampleRef& s) { return sample_loss(s); });
    }
  }

  // ER: each update pairs the fixed staged samples with a fresh memory draw.
  void flush() {
    const std::size_t half = config_.batch_size / 2;
    const std::size_t n_updates = staged_.size() * config_.updates_per_sample;
    for (std::size_t u = 0; u < n_updates; ++u) {
      const auto slots = sample_slot_indices(memory_, half, batch_rng_);
      std::vector<std::size_t> rows;
      rows.reserve(staged_.size() + slots.size());
      for (const auto& s : staged_) rows.push_back(s.index);
      for (std::size_t i : slots) rows.push_back(memory_.slots[i].sample.index);
      train_step(rows, slots);
    }
    staged_.clear();
  }

  void train_step(const std::vector<std::size_t>& rows, const std::vector<std::size_t>& trained_slots) {
    if (observer_) observer_(rows, trained_slots);
    const Batch batch = gather(dataset_->train, rows, dataset_->dim);
    const double lr = current_lr();
    const auto grad = backward(params_, batch);
    optimizer_.step(params_, grad.grads, lr);
    ++steps_;
    lr_trace_.push_back({steps_, lr, base_lr()});

    pending_slots_.insert(pending_slots_.end(), trained_slots.begin(), trained_slots.end());
    const bool importance = config_.memory_policy == MemoryPolicy::importance;
    auto* adaptive = std::get_if<AdaptiveLr>(&scheduler_);
    if (steps_ % config_.importance_every_k == 0) {
      if (importance || adaptive) {
        const double l_cur = memory_loss(memory_, params_, *dataset_);
        if (importance) update_importance(memory_, l_cur, pending_slots_, config_.lambda);
        if (adaptive) adaptive->step(l_cur);
      }
      pending_slots_.clear();
    }
    if (auto* exp = std::get_if<ExpResetLr>(&scheduler_)) exp->on_update();
  }

  double base_lr() const {
    if (const auto* a = std::get_if<AdaptiveLr>(&scheduler_)) return a->base_lr();
    return config_.lr0;
  }

  TrainConfig config_;
  const Dataset* dataset_;
  MlpParams params_;
  Optimizer optimizer_;
  EpisodicMemory memory_;
  Scheduler scheduler_;
  Rng memory_rng_;
  Rng batch_rng_;
  std::vector<SampleRef> staged_;
  std::vector<std::size_t> pending_slots_;
  std::uint64_t steps_ = 0;
  std::vector<LrTracePoint> lr_trace_;
  BatchObserver observer_;
};

struct RunResult {
  TrainConfig config;
  std::size_t stream_length = 0;
  AccuracyCurve curve;
  std::vector<double> task_accuracies;
  ClassAccHistory class_history;
  MetricReport metrics;
  std::vector<LrTracePoint> lr_trace;
  std::uint64_t optimizer_steps = 0;
  double wall_time_s = 0.0;
};

/// Accuracy on test samples whose label is in `seen`. Predictions range over
/// all classes, so naming an unseen class counts as wrong.
inline double evaluate_any_time(const MlpParams& params, const Dataset& dataset, const std::set<int>& seen) {
  if (seen.empty()) throw std::invalid_argument("evaluate_any_time: no seen classes");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < dataset.test.size(); ++i)
    if (seen.count(dataset.test[i].label)) rows.push_back(i);
  const Batch b = gather(dataset.test, rows, dataset.dim);
  return evaluate_accuracy(params, b.features, b.labels);
}

namespace detail {

// Predicts the whole test pool once and reduces to population and per-class accuracy.
class Evaluator {
 public:
  explicit Evaluator(const Dataset& dataset) : num_classes_(dataset.num_classes) {
    std::vector<std::size_t> all(dataset.test.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    test_ = gather(dataset.test, all, dataset.dim);
  }

  struct Snapshot {
    double accuracy = 0.0;
    std::map<int, double> per_class;
  };

  Snapshot evaluate(const MlpParams& params, const std::set<int>& seen, EvalPopulation population) const {
    const auto pred = predict(params, test_.features);
    std::vector<std::size_t> correct(num_classes_, 0), total(num_classes_, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const auto y = static_cast<std::size_t>(test_.labels[i]);
      ++total[y];
      if (pred[i] == test_.labels[i]) ++correct[y];
    }
    Snapshot snap;
    std::size_t num = 0, den = 0;
    for (std::size_t c = 0; c < num_classes_; ++c) {
      const bool is_seen = seen.count(static_cast<int>(c)) > 0;
      if (population == EvalPopulation::all_classes || is_seen) {
        num += correct[c];
        den += total[c];
      }
      if (is_seen && total[c] > 0)
        snap.per_class[static_cast<int>(c)] = static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    }
    snap.accuracy = den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
    return snap;
  }

 private:
  std::size_t num_classes_;
  Batch test_;
};

}  // namespace detail

/// Streams the schedule through a Learner, querying the model every delta_n
/// samples and at the end of each task.
inline RunResult train_stream(const TrainConfig& config, const TaskSchedule& schedule, const Dataset& dataset,
                              MlpParams init) {
  const auto started = std::chrono::steady_clock::now();
  config.validate();
  check_schedule_against(schedule, dataset);
  Learner learner(config, dataset, std::move(init));
  const detail::Evaluator evaluator(dataset);

  RunResult result;
  result.config = config;
  result.curve.delta_n = config.delta_n;
  std::set<int> seen;

  auto record_classes = [&](const detail::Evaluator::Snapshot& snap) {
    for (const auto& [cls, acc] : snap.per_class) result.class_history[cls].push_back(acc);
  };

  const auto events = stream_iter(schedule);
  for (std::size_t e = 0; e < events.size(); ++e) {
    const auto& ev = events[e];
    const int label = dataset.train.at(ev.sample_index).label;
    seen.insert(label);
    learner.observe({ev.sample_index, label});
    if (e + 1 == events.size()) learner.finish();
    if (ev.n % config.delta_n == 0) {
      const auto snap = evaluator.evaluate(learner.params(), seen, config.eval_population);
      result.curve.points.push_back(snap.accuracy);
      record_classes(snap);
    }
    if (ev.task_boundary) {
      const auto snap = evaluator.evaluate(learner.params(), seen, config.eval_population);
      result.task_accuracies.push_back(snap.accuracy);
      if (ev.n % config.delta_n != 0) record_classes(snap);
    }
  }
  if (result.curve.points.empty()) throw std::invalid_argument("train_stream: stream shorter than delta_n");

  result.stream_length = events.size();
  result.metrics = compute_metrics(result.curve, result.task_accuracies, result.class_history);
  result.lr_trace = learner.lr_trace();
  result.optimizer_steps = learner.optimizer_steps();
  result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

inline MlpParams init_model(const TrainConfig& config, const Dataset& dataset) {
  std::vector<std::size_t> dims{dataset.dim};
  dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
  dims.push_back(dataset.num_classes);
  Rng rng = Rng::derive(config.seed, "init");
  return init_mlp(dims, rng);
}

inline RunResult train_stream(const TrainConfig& config, const TaskSchedule& schedule, const Dataset& dataset) {
  return train_stream(config, schedule, dataset, init_model(config, dataset));
}

/// CLIB: importance memory, memory-only replay, adaptive LR (ablations may
/// swap any one of these through the config).
inline RunResult clib_train_stream(const TrainConfig& config, const TaskSchedule& schedule, const Dataset& dataset) {
  if (config.method != "clib") throw std::invalid_argument("clib_train_stream: config.method must be clib");
  return train_stream(config, schedule, dataset);
}

/// Baseline ER: reservoir memory, half-stream / half-memory batches, exp-reset LR.
inline RunResult er_train_stream(const TrainConfig& config, const TaskSchedule& schedule, const Dataset& dataset) {
  if (config.method != "er_baseline") throw std::invalid_argument("er_train_stream: config.method must be er_baseline");
  return train_stream(config, schedule, dataset);
}

inline nlohmann::json to_json(const RunResult& r) {
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [cls, accs] : r.class_history) classes[std::to_string(cls)] = accs;
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& p : r.lr_trace) trace.push_back({p.update, p.lr, p.eta_bar});
  return {{"config", to_json(r.config)},
          {"seed", r.config.seed},
          {"stream_length", r.stream_length},
          {"curve", {{"delta_n", r.curve.delta_n}, {"points", r.curve.points}}},
          {"task_accuracies", r.task_accuracies},
          {"class_history", classes},
          {"metrics", to_json(r.metrics)},
          {"lr_trace", trace},
          {"optimizer_steps", r.optimizer_steps},
          {"wall_time_s", r.wall_time_s}};
}

inline RunResult run_result_from_json(const nlohmann::json& j) {
  RunResult r;
  r.config = train_config_from_json(j.at("config"));
  r.stream_length = j.at("stream_length").get<std::size_t>();
  r.curve.delta_n = j.at("curve").at("delta_n").get<std::size_t>();
  r.curve.points = j.at("curve").at("points").get<std::vector<double>>();
  r.task_accuracies = j.at("task_accuracies").get<std::vector<double>>();
  for (const auto& [key, accs] : j.at("class_history").items())
    r.class_history[std::stoi(key)] = accs.get<std::vector<double>>();
  r.metrics = metrics_from_json(j.at("metrics"));
  for (const auto& p : j.at("lr_trace"))
    r.lr_trace.push_back({p.at(0).get<std::uint64_t>(), p.at(1).get<double>(), p.at(2).get<double>()});
  r.optimizer_steps = j.at("optimizer_steps").get<std::uint64_t>();
  r.wall_time_s = j.at("wall_time_s").get<double>();
  return r;
}

}  // namespace clib
