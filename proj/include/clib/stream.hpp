// Datasets, i-Blurry-N-M split construction, and the online sample stream.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "model.hpp"
#include "numerics.hpp"

namespace clib {

struct LabeledSample {
  std::vector<double> features;
  int label = 0;
  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

struct Dataset {
  std::string name;
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> test;

  /// Every class in both pools, consistent feature width.
  void validate() const {
    if (num_classes < 1) throw std::invalid_argument("dataset " + name + ": no classes");
    std::vector<int> in_train(num_classes, 0), in_test(num_classes, 0);
    auto scan = [&](const std::vector<LabeledSample>& pool, std::vector<int>& seen, const char* which) {
      for (const auto& s : pool) {
        if (s.features.size() != dim)
          throw std::invalid_argument("dataset " + name + ": " + which + " sample has wrong feature width");
        if (s.label < 0 || static_cast<std::size_t>(s.label) >= num_classes)
          throw std::invalid_argument("dataset " + name + ": label out of range");
        seen[static_cast<std::size_t>(s.label)] = 1;
      }
    };
    scan(train, in_train, "train");
    scan(test, in_test, "test");
    for (std::size_t c = 0; c < num_classes; ++c)
      if (!in_train[c] || !in_test[c])
        throw std::invalid_argument("dataset " + name + ": class " + std::to_string(c) +
                                    " missing from train or test pool");
  }
};

/// Gather rows of a sample pool into a feature matrix and label vector.
inline Batch gather(const std::vector<LabeledSample>& pool, std::span<const std::size_t> indices, std::size_t dim) {
  Batch batch{Matrix(indices.size(), dim), std::vector<int>(indices.size())};
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& s = pool.at(indices[r]);
    std::copy(s.features.begin(), s.features.end(), batch.features.row(r).begin());
    batch.labels[r] = s.label;
  }
  return batch;
}

/// Gaussian clusters with means uniform in [-1, 1]^d; 80/20 train/test per class.
inline Dataset synth_dataset(std::size_t num_classes, std::size_t dim, std::size_t per_class, double spread,
                             Rng& rng) {
  if (num_classes < 2 || dim < 2 || per_class < 2)
    throw std::invalid_argument("synth_dataset: need classes >= 2, dim >= 2, per_class >= 2");
  if (!(spread >= 0.0)) throw std::invalid_argument("synth_dataset: spread must be >= 0");
  Dataset ds;
  ds.name = "synthetic";
  ds.num_classes = num_classes;
  ds.dim = dim;
  std::size_t n_train = (per_class * 8 + 5) / 10;  // round half up of 0.8 * per_class
  n_train = std::clamp<std::size_t>(n_train, 1, per_class - 1);
  std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim));
  for (auto& m : means)
    for (auto& v : m) v = rng.uniform(-1.0, 1.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t k = 0; k < per_class; ++k) {
      LabeledSample s{std::vector<double>(dim), static_cast<int>(c)};
      for (std::size_t i = 0; i < dim; ++i) s.features[i] = means[c][i] + spread * rng.normal();
      (k < n_train ? ds.train : ds.test).push_back(std::move(s));
    }
  }
  return ds;
}

namespace detail {

inline bool parse_double(const std::string& cell, double& out) {
  const char* begin = cell.c_str();
  while (*begin == ' ' || *begin == '\t') ++begin;
  if (*begin == '\0') return false;
  char* end = nullptr;
  out = std::strtod(begin, &end);
  while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
  return *end == '\0';
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace detail

/// Rows are `label,f1,...,fd`. An optional header row is skipped when its first
/// cell is not numeric. Labels are remapped to 0..C-1 in numeric order. All
/// rows land in `train`; use holdout_split() to carve out a test pool.
inline Dataset load_csv_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read dataset file " + path);
  struct Row {
    long long label;
    std::vector<double> features;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto cells = detail::split_csv_line(line);
    double label_value = 0.0;
    if (!detail::parse_double(cells[0], label_value)) {
      if (rows.empty() && line_no == 1) continue;  // header
      throw std::runtime_error(path + ": row " + std::to_string(line_no) + ": non-numeric label");
    }
    if (label_value != std::floor(label_value))
      throw std::runtime_error(path + ": row " + std::to_string(line_no) + ": label is not an integer");
    Row row{static_cast<long long>(label_value), {}};
    for (std::size_t i = 1; i < cells.size(); ++i) {
      double v = 0.0;
      if (!detail::parse_double(cells[i], v))
        throw std::runtime_error(path + ": row " + std::to_string(line_no) + ": non-numeric cell in column " +
                                 std::to_string(i + 1));
      row.features.push_back(v);
    }
    if (row.features.empty())
      throw std::runtime_error(path + ": row " + std::to_string(line_no) + ": no feature columns");
    if (rows.empty()) {
      dim = row.features.size();
    } else if (row.features.size() != dim) {
      throw std::runtime_error(path + ": row " + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                               " features, found " + std::to_string(row.features.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error(path + ": no data rows");

  std::set<long long> labels;
  for (const auto& r : rows) labels.insert(r.label);
  std::map<long long, int> remap;
  for (long long l : labels) remap.emplace(l, static_cast<int>(remap.size()));

  Dataset ds;
  ds.name = path;
  ds.num_classes = labels.size();
  ds.dim = dim;
  for (auto& r : rows) ds.train.push_back({std::move(r.features), remap.at(r.label)});
  return ds;
}

/// Moves the last round(fraction * n_c) samples of each class (file order) to
/// the test pool, keeping at least one sample of each class on both sides.
inline Dataset holdout_split(Dataset ds, double test_fraction) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("holdout_split: test_fraction must be in (0, 1)");
  std::vector<std::vector<LabeledSample>> by_class(ds.num_classes);
  for (auto& s : ds.train) by_class[static_cast<std::size_t>(s.label)].push_back(std::move(s));
  ds.train.clear();
  ds.test.clear();
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& rows = by_class[c];
    if (rows.size() < 2)
      throw std::invalid_argument("holdout_split: class " + std::to_string(c) + " has fewer than 2 samples");
    auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(rows.size()) + 0.5));
    n_test = std::clamp<std::size_t>(n_test, 1, rows.size() - 1);
    const std::size_t n_train = rows.size() - n_test;
    for (std::size_t i = 0; i < rows.size(); ++i) (i < n_train ? ds.train : ds.test).push_back(std::move(rows[i]));
  }
  return ds;
}

// --- i-Blurry-N-M split --------------------------------------------------------

struct SplitSpec {
  int n_disjoint_pct = 50;  // N
  int blurry_level = 10;    // M
  std::size_t num_tasks = 5;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_disjoint_pct < 0 || n_disjoint_pct > 100) throw std::invalid_argument("split.N must be in [0, 100]");
    if (blurry_level < 0 || blurry_level > 100) throw std::invalid_argument("split.M must be in [0, 100]");
    if (num_tasks < 1) throw std::invalid_argument("split.T must be >= 1");
  }
  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

/// Class groups per task. disjoint[t] classes first appear in task t; blurry[t]
/// classes have task t as their dominant task.
struct ClassPartition {
  std::vector<std::vector<int>> disjoint;
  std::vector<std::vector<int>> blurry;
  friend bool operator==(const ClassPartition&, const ClassPartition&) = default;
};

struct StreamEntry {
  std::size_t sample_index = 0;  // into Dataset::train
  std::size_t task_id = 0;
  friend bool operator==(const StreamEntry&, const StreamEntry&) = default;
};

struct TaskSchedule {
  SplitSpec spec;
  ClassPartition partition;
  std::vector<StreamEntry> stream;

  std::size_t num_tasks() const { return spec.num_tasks; }
  friend bool operator==(const TaskSchedule&, const TaskSchedule&) = default;
};

/// What the learner sees is only the sample; index and boundary are for metrics.
struct StreamEvent {
  std::size_t sample_index = 0;
  std::size_t n = 0;  // 1-based count of samples observed so far
  bool task_boundary = false;
};

/// round(count * pct / 100), half up.
inline std::size_t round_pct(std::size_t count, int pct) {
  return (count * static_cast<std::size_t>(pct) * 2 + 100) / 200;
}

namespace detail {

// Even split of `items` into `groups` buckets; earlier buckets take the remainder.
inline std::vector<std::vector<int>> chunk_evenly(const std::vector<int>& items, std::size_t groups) {
  std::vector<std::vector<int>> out(groups);
  const std::size_t base = items.size() / groups;
  const std::size_t extra = items.size() % groups;
  std::size_t pos = 0;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t take = base + (g < extra ? 1 : 0);
    out[g].assign(items.begin() + static_cast<std::ptrdiff_t>(pos),
                  items.begin() + static_cast<std::ptrdiff_t>(pos + take));
    std::sort(out[g].begin(), out[g].end());
    pos += take;
  }
  return out;
}

}  // namespace detail

inline ClassPartition partition_classes(std::size_t num_classes, int n_disjoint_pct, std::size_t num_tasks,
                                        Rng& rng) {
  if (n_disjoint_pct < 0 || n_disjoint_pct > 100) throw std::invalid_argument("partition_classes: N out of range");
  if (num_tasks < 1) throw std::invalid_argument("partition_classes: T must be >= 1");
  std::vector<int> classes(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) classes[c] = static_cast<int>(c);
  rng.shuffle(classes);
  const std::size_t n_disjoint = round_pct(num_classes, n_disjoint_pct);
  const std::vector<int> disjoint(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(n_disjoint));
  const std::vector<int> blurry(classes.begin() + static_cast<std::ptrdiff_t>(n_disjoint), classes.end());
  return {detail::chunk_evenly(disjoint, num_tasks), detail::chunk_evenly(blurry, num_tasks)};
}

/// Builds the task-ordered stream. Disjoint classes are confined to their task.
/// A blurry class keeps round((100-M)% of its samples) in its dominant task and
/// spreads the rest evenly over the other tasks (largest remainder, extras
/// assigned cyclically starting after the dominant task). Each task segment is
/// shuffled.
inline TaskSchedule build_iblurry_split(const Dataset& dataset, const SplitSpec& spec) {
  spec.validate();
  Rng part_rng = Rng::derive(spec.seed, "partition");
  Rng sample_rng = Rng::derive(spec.seed, "placement");
  Rng order_rng = Rng::derive(spec.seed, "order");

  TaskSchedule schedule;
  schedule.spec = spec;
  schedule.partition = partition_classes(dataset.num_classes, spec.n_disjoint_pct, spec.num_tasks, part_rng);

  std::vector<std::vector<std::size_t>> by_class(dataset.num_classes);
  for (std::size_t i = 0; i < dataset.train.size(); ++i)
    by_class.at(static_cast<std::size_t>(dataset.train[i].label)).push_back(i);

  const std::size_t T = spec.num_tasks;
  std::vector<std::vector<std::size_t>> per_task(T);
  for (std::size_t t = 0; t < T; ++t) {
    for (int c : schedule.partition.disjoint[t]) {
      const auto& idx = by_class[static_cast<std::size_t>(c)];
      per_task[t].insert(per_task[t].end(), idx.begin(), idx.end());
    }
  }
  for (std::size_t g = 0; g < T; ++g) {
    for (int c : schedule.partition.blurry[g]) {
      auto idx = by_class[static_cast<std::size_t>(c)];
      sample_rng.shuffle(idx);
      const std::size_t n = idx.size();
      std::size_t dominant = round_pct(n, 100 - spec.blurry_level);
      if (T == 1) dominant = n;
      const std::size_t spill = n - dominant;
      std::vector<std::size_t> counts(T, 0);
      counts[g] = dominant;
      if (T > 1) {
        const std::size_t base = spill / (T - 1);
        std::size_t extra = spill % (T - 1);
        for (std::size_t k = 1; k < T; ++k) {
          const std::size_t t = (g + k) % T;
          counts[t] = base + (extra > 0 ? 1 : 0);
          if (extra > 0) --extra;
        }
      }
      std::size_t pos = 0;
      for (std::size_t t = 0; t < T; ++t) {
        per_task[t].insert(per_task[t].end(), idx.begin() + static_cast<std::ptrdiff_t>(pos),
                           idx.begin() + static_cast<std::ptrdiff_t>(pos + counts[t]));
        pos += counts[t];
      }
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    auto& seg = per_task[t];
    std::sort(seg.begin(), seg.end());
    order_rng.shuffle(seg);
    for (std::size_t i : seg) schedule.stream.push_back({i, t});
  }
  return schedule;
}

/// Events in stream order. The boundary flag marks the last event of each
/// non-empty task segment.
inline std::vector<StreamEvent> stream_iter(const TaskSchedule& schedule) {
  std::vector<StreamEvent> events;
  events.reserve(schedule.stream.size());
  for (std::size_t i = 0; i < schedule.stream.size(); ++i) {
    const bool last_of_task =
        i + 1 == schedule.stream.size() || schedule.stream[i + 1].task_id != schedule.stream[i].task_id;
    events.push_back({schedule.stream[i].sample_index, i + 1, last_of_task});
  }
  return events;
}

// --- split files -----------------------------------------------------------------

inline constexpr int kSplitFileVersion = 1;

inline nlohmann::json split_to_json(const TaskSchedule& schedule) {
  nlohmann::json stream = nlohmann::json::array();
  for (const auto& e : schedule.stream) stream.push_back({{"sample_index", e.sample_index}, {"task_id", e.task_id}});
  return {
      {"version", kSplitFileVersion},
      {"spec",
       {{"N", schedule.spec.n_disjoint_pct},
        {"M", schedule.spec.blurry_level},
        {"T", schedule.spec.num_tasks},
        {"seed", schedule.spec.seed}}},
      {"class_partition", {{"disjoint", schedule.partition.disjoint}, {"blurry", schedule.partition.blurry}}},
      {"stream", stream},
  };
}

inline TaskSchedule split_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kSplitFileVersion)
      throw std::runtime_error("split file: unsupported version " + j.at("version").dump());
    TaskSchedule s;
    const auto& spec = j.at("spec");
    s.spec.n_disjoint_pct = spec.at("N").get<int>();
    s.spec.blurry_level = spec.at("M").get<int>();
    s.spec.num_tasks = spec.at("T").get<std::size_t>();
    s.spec.seed = spec.at("seed").get<std::uint64_t>();
    s.spec.validate();
    s.partition.disjoint = j.at("class_partition").at("disjoint").get<std::vector<std::vector<int>>>();
    s.partition.blurry = j.at("class_partition").at("blurry").get<std::vector<std::vector<int>>>();
    if (s.partition.disjoint.size() != s.spec.num_tasks || s.partition.blurry.size() != s.spec.num_tasks)
      throw std::runtime_error("split file: class_partition does not have T groups");
    for (const auto& e : j.at("stream")) {
      StreamEntry entry{e.at("sample_index").get<std::size_t>(), e.at("task_id").get<std::size_t>()};
      if (entry.task_id >= s.spec.num_tasks) throw std::runtime_error("split file: task_id out of range");
      s.stream.push_back(entry);
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("split file: malformed: ") + e.what());
  }
}

inline void save_split(const TaskSchedule& schedule, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << split_to_json(schedule).dump(1) << '\n';
}

inline TaskSchedule load_split(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return split_from_json(j);
}

/// The split must reference existing train samples, each at most once.
inline void check_schedule_against(const TaskSchedule& schedule, const Dataset& dataset) {
  std::vector<char> used(dataset.train.size(), 0);
  for (const auto& e : schedule.stream) {
    if (e.sample_index >= dataset.train.size())
      throw std::invalid_argument("split references sample " + std::to_string(e.sample_index) +
                                  " beyond the train pool");
    if (used[e.sample_index]++) throw std::invalid_argument("split repeats a sample");
  }
}

}  // namespace clib
