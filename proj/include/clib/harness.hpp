// Experiment harness: JSON experiment configs, replicate runs, results files,
// comparison tables and accuracy-curve exports.
#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "metrics.hpp"
#include "stream.hpp"
#include "trainer.hpp"

namespace clib::harness {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// Bad user input; the CLI maps it to exit code 1.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DatasetSection {
  std::string kind = "synthetic";  // synthetic | csv
  std::size_t classes = 10;
  std::size_t dim = 16;
  std::size_t per_class = 200;
  double spread = 0.7;
  std::uint64_t seed = 1000;
  std::string path;
  double test_fraction = 0.2;
  friend bool operator==(const DatasetSection&, const DatasetSection&) = default;
};

struct SplitSection {
  int n = 50;
  int m = 10;
  std::size_t tasks = 5;
  std::uint64_t seed = 1;
  bool per_run_seed = true;  // each replicate seed draws its own split
  std::string path;          // load a saved split instead of generating one
  friend bool operator==(const SplitSection&, const SplitSection&) = default;
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  std::string name = "experiment";
  DatasetSection dataset;
  SplitSection split;
  TrainConfig train = TrainConfig::clib();
  std::string output_dir = "results";
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace detail {

template <typename T>
T field(const json& section, const std::string& where, const std::string& key, const T& fallback) {
  if (!section.contains(key)) return fallback;
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    const auto& v = section.at(key);
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      throw ConfigError(where + "." + key + " must be a non-negative integer");
  }
  try {
    return section.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

inline void reject_unknown(const json& section, const std::string& where, std::initializer_list<const char*> known) {
  if (!section.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : section.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown field " + where + "." + key);
  }
}

template <typename Enum>
Enum enum_field(const json& section, const std::string& where, const std::string& key, Enum fallback,
                std::initializer_list<const char*> allowed) {
  if (!section.contains(key)) return fallback;
  const auto& v = section.at(key);
  bool ok = v.is_string();
  if (ok) {
    ok = false;
    for (const char* a : allowed) ok = ok || v.get<std::string>() == a;
  }
  if (!ok) {
    std::string msg = where + "." + key + " must be one of";
    for (const char* a : allowed) msg += std::string(" ") + a;
    throw ConfigError(msg);
  }
  return v.get<Enum>();
}

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
  if (c.schema_version != kSchemaVersion)
    throw ConfigError("schema_version must be " + std::to_string(kSchemaVersion));
  if (c.name.empty()) throw ConfigError("name must not be empty");
  const auto& d = c.dataset;
  if (d.kind == "synthetic") {
    if (d.classes < 2) throw ConfigError("dataset.classes must be >= 2");
    if (d.dim < 2) throw ConfigError("dataset.dim must be >= 2");
    if (d.per_class < 2) throw ConfigError("dataset.per_class must be >= 2");
    if (!(d.spread >= 0.0)) throw ConfigError("dataset.spread must be >= 0");
  } else if (d.kind == "csv") {
    if (d.path.empty()) throw ConfigError("dataset.path is required for csv datasets");
    if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0)) throw ConfigError("dataset.test_fraction must be in (0, 1)");
  } else {
    throw ConfigError("dataset.kind must be synthetic or csv");
  }
  if (c.split.n < 0 || c.split.n > 100) throw ConfigError("split.N must be in [0, 100] (got " + std::to_string(c.split.n) + ")");
  if (c.split.m < 0 || c.split.m > 100) throw ConfigError("split.M must be in [0, 100] (got " + std::to_string(c.split.m) + ")");
  if (c.split.tasks < 1) throw ConfigError("split.T must be >= 1");
  if (c.train.method != "clib" && c.train.method != "er_baseline" && c.train.method != "custom")
    throw ConfigError("method must be clib, er_baseline or custom");
  try {
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size())
    throw ConfigError("seeds must be distinct");
}

inline json render(const ExperimentConfig& c) {
  const auto& t = c.train;
  const json dataset = {{"kind", c.dataset.kind},       {"classes", c.dataset.classes}, {"dim", c.dataset.dim},
                        {"per_class", c.dataset.per_class}, {"spread", c.dataset.spread},   {"seed", c.dataset.seed},
                        {"path", c.dataset.path},         {"test_fraction", c.dataset.test_fraction}};
  const json split = {{"N", c.split.n},       {"M", c.split.m},
                      {"T", c.split.tasks},   {"seed", c.split.seed},
                      {"per_run_seed", c.split.per_run_seed}, {"path", c.split.path}};
  return {
      {"schema_version", c.schema_version},
      {"name", c.name},
      {"dataset", dataset},
      {"split", split},
      {"method", t.method},
      {"memory",
       {{"policy", t.memory_policy},
        {"capacity", t.capacity},
        {"lambda", t.lambda},
        {"importance_every_k", t.importance_every_k}}},
      {"training",
       {{"usage", t.memory_usage},
        {"batch_size", t.batch_size},
        {"updates_per_sample", t.updates_per_sample},
        {"optimizer", t.optimizer},
        {"lr", t.lr0},
        {"hidden", t.hidden}}},
      {"scheduler",
       {{"kind", t.scheduler},
        {"gamma", t.adaptive_gamma},
        {"hist_len", t.hist_len},
        {"alpha", t.alpha},
        {"exp_gamma", t.exp_gamma}}},
      {"eval", {{"delta_n", t.delta_n}, {"population", t.eval_population}}},
      {"output_dir", c.output_dir},
      {"seeds", c.seeds},
  };
}

/// Parses and validates. `method` selects the preset that unspecified
/// memory/training/scheduler fields default to.
inline ExperimentConfig parse(const json& j) {
  using detail::enum_field;
  using detail::field;
  detail::reject_unknown(j, "config",
                         {"schema_version", "name", "dataset", "split", "method", "memory", "training", "scheduler",
                          "eval", "output_dir", "seeds"});
  ExperimentConfig c;
  c.schema_version = field(j, "config", "schema_version", kSchemaVersion);
  c.name = field<std::string>(j, "config", "name", "experiment");

  const std::string method = field<std::string>(j, "config", "method", "clib");
  if (method == "er_baseline") {
    c.train = TrainConfig::er_baseline();
  } else if (method == "clib" || method == "custom") {
    c.train = TrainConfig::clib();
    c.train.method = method;
  } else {
    throw ConfigError("method must be clib, er_baseline or custom");
  }

  const json empty = json::object();
  const json& ds = j.contains("dataset") ? j.at("dataset") : empty;
  detail::reject_unknown(ds, "dataset", {"kind", "classes", "dim", "per_class", "spread", "seed", "path", "test_fraction"});
  c.dataset.kind = field<std::string>(ds, "dataset", "kind", c.dataset.kind);
  c.dataset.classes = field(ds, "dataset", "classes", c.dataset.classes);
  c.dataset.dim = field(ds, "dataset", "dim", c.dataset.dim);
  c.dataset.per_class = field(ds, "dataset", "per_class", c.dataset.per_class);
  c.dataset.spread = field(ds, "dataset", "spread", c.dataset.spread);
  c.dataset.seed = field(ds, "dataset", "seed", c.dataset.seed);
  c.dataset.path = field<std::string>(ds, "dataset", "path", c.dataset.path);
  c.dataset.test_fraction = field(ds, "dataset", "test_fraction", c.dataset.test_fraction);

  const json& sp = j.contains("split") ? j.at("split") : empty;
  detail::reject_unknown(sp, "split", {"N", "M", "T", "seed", "per_run_seed", "path"});
  c.split.n = field(sp, "split", "N", c.split.n);
  c.split.m = field(sp, "split", "M", c.split.m);
  c.split.tasks = field(sp, "split", "T", c.split.tasks);
  c.split.seed = field(sp, "split", "seed", c.split.seed);
  c.split.per_run_seed = field(sp, "split", "per_run_seed", c.split.per_run_seed);
  c.split.path = field<std::string>(sp, "split", "path", c.split.path);

  auto& t = c.train;
  const json& mem = j.contains("memory") ? j.at("memory") : empty;
  detail::reject_unknown(mem, "memory", {"policy", "capacity", "lambda", "importance_every_k"});
  t.memory_policy = enum_field(mem, "memory", "policy", t.memory_policy, {"importance", "reservoir"});
  t.capacity = field(mem, "memory", "capacity", t.capacity);
  t.lambda = field(mem, "memory", "lambda", t.lambda);
  t.importance_every_k = field(mem, "memory", "importance_every_k", t.importance_every_k);

  const json& tr = j.contains("training") ? j.at("training") : empty;
  detail::reject_unknown(tr, "training", {"usage", "batch_size", "updates_per_sample", "optimizer", "lr", "hidden"});
  t.memory_usage = enum_field(tr, "training", "usage", t.memory_usage, {"memory_only", "joint_er"});
  t.batch_size = field(tr, "training", "batch_size", t.batch_size);
  t.updates_per_sample = field(tr, "training", "updates_per_sample", t.updates_per_sample);
  t.optimizer = enum_field(tr, "training", "optimizer", t.optimizer, {"sgd", "adam"});
  t.lr0 = field(tr, "training", "lr", t.lr0);
  t.hidden = field(tr, "training", "hidden", t.hidden);

  const json& sc = j.contains("scheduler") ? j.at("scheduler") : empty;
  detail::reject_unknown(sc, "scheduler", {"kind", "gamma", "hist_len", "alpha", "exp_gamma"});
  t.scheduler = enum_field(sc, "scheduler", "kind", t.scheduler, {"adaptive", "exp_reset", "constant"});
  t.adaptive_gamma = field(sc, "scheduler", "gamma", t.adaptive_gamma);
  t.hist_len = field(sc, "scheduler", "hist_len", t.hist_len);
  t.alpha = field(sc, "scheduler", "alpha", t.alpha);
  t.exp_gamma = field(sc, "scheduler", "exp_gamma", t.exp_gamma);

  const json& ev = j.contains("eval") ? j.at("eval") : empty;
  detail::reject_unknown(ev, "eval", {"delta_n", "population"});
  t.delta_n = field(ev, "eval", "delta_n", t.delta_n);
  t.eval_population = enum_field(ev, "eval", "population", t.eval_population, {"seen", "all"});

  c.output_dir = field<std::string>(j, "config", "output_dir", c.output_dir);
  c.seeds = field(j, "config", "seeds", c.seeds);
  validate(c);
  return c;
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse(j);
}

/// Write to a sibling temp file, then rename over the target.
inline void write_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << contents;
    if (!os) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Dataset make_dataset(const DatasetSection& d) {
  if (d.kind == "csv") return holdout_split(load_csv_dataset(d.path), d.test_fraction);
  Rng rng = Rng::derive(d.seed, "dataset");
  return synth_dataset(d.classes, d.dim, d.per_class, d.spread, rng);
}

/// Fewer disjoint classes than tasks leaves some tasks without one; legal, but
/// usually not what was intended.
inline void warn_sparse_split(const ExperimentConfig& c, const Dataset& dataset) {
  const std::size_t n_disjoint = round_pct(dataset.num_classes, c.split.n);
  if (c.split.path.empty() && n_disjoint > 0 && n_disjoint < c.split.tasks)
    std::cerr << "warning: " << n_disjoint << " disjoint classes over " << c.split.tasks
              << " tasks; some tasks get no disjoint class\n";
}

inline TaskSchedule make_schedule(const ExperimentConfig& c, const Dataset& dataset, std::uint64_t run_seed) {
  TaskSchedule s;
  if (!c.split.path.empty()) {
    s = load_split(c.split.path);
  } else {
    SplitSpec spec{c.split.n, c.split.m, c.split.tasks, c.split.per_run_seed ? run_seed : c.split.seed};
    s = build_iblurry_split(dataset, spec);
  }
  check_schedule_against(s, dataset);
  return s;
}

// --- split -------------------------------------------------------------------

/// Generates the split from the config's split section and writes `split.json`.
inline std::filesystem::path cmd_split(const ExperimentConfig& c, const std::filesystem::path& out_dir) {
  validate(c);
  const Dataset dataset = make_dataset(c.dataset);
  warn_sparse_split(c, dataset);
  const SplitSpec spec{c.split.n, c.split.m, c.split.tasks, c.split.seed};
  const auto path = out_dir / "split.json";
  write_atomic(path, split_to_json(build_iblurry_split(dataset, spec)).dump(1) + "\n");
  return path;
}

// --- run -----------------------------------------------------------------------

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Population standard deviation.
inline MeanStd mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return {mean, std::sqrt(var)};
}

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"a_auc", "a_auc_raw", "a_avg", "f_last"};
  return names;
}

inline json aggregate(const json& runs) {
  json out = json::object();
  for (const auto& name : metric_names()) {
    std::vector<double> xs;
    for (const auto& r : runs) xs.push_back(r.at("metrics").at(name).get<double>());
    const auto ms = mean_std(xs);
    out[name] = {{"mean", ms.mean}, {"std", ms.std}};
  }
  return out;
}

inline std::size_t thread_budget(std::size_t requested, std::size_t jobs) {
  std::size_t n = std::max<std::size_t>(requested, 1);
  if (const char* env = std::getenv("CLIB_BENCH_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min(n, static_cast<std::size_t>(cap));
  }
  return std::min(n, std::max<std::size_t>(jobs, 1));
}

/// One run per replicate seed (optionally in parallel); results are assembled
/// in seed order.
inline json run_experiment(const ExperimentConfig& c, std::size_t parallel = 1) {
  validate(c);
  const Dataset dataset = make_dataset(c.dataset);
  dataset.validate();
  warn_sparse_split(c, dataset);
  std::vector<RunResult> results(c.seeds.size());
  std::vector<std::exception_ptr> errors(c.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < c.seeds.size(); i = next++) {
      try {
        TrainConfig tc = c.train;
        tc.seed = c.seeds[i];
        results[i] = train_stream(tc, make_schedule(c, dataset, c.seeds[i]), dataset);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = thread_budget(parallel, c.seeds.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  json runs = json::array();
  for (const auto& r : results) runs.push_back(to_json(r));
  return {{"schema_version", kSchemaVersion}, {"config", render(c)}, {"runs", runs}, {"aggregate", aggregate(runs)}};
}

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline std::string curve_csv(const RunResult& r) {
  std::string out = "n,accuracy\n";
  for (std::size_t i = 0; i < r.curve.points.size(); ++i)
    out += std::to_string((i + 1) * r.curve.delta_n) + "," + fixed6(r.curve.points[i]) + "\n";
  return out;
}

inline std::string lr_trace_csv(const RunResult& r) {
  std::string out = "update,lr,eta_bar\n";
  char buf[128];
  for (const auto& p : r.lr_trace) {
    std::snprintf(buf, sizeof(buf), "%llu,%.10g,%.10g\n", static_cast<unsigned long long>(p.update), p.lr, p.eta_bar);
    out += buf;
  }
  return out;
}

/// Runs every replicate seed and writes results.json plus per-seed curve and
/// LR-trace CSVs under `out_dir`.
inline json cmd_run(const ExperimentConfig& c, const std::filesystem::path& out_dir, std::size_t parallel = 1) {
  json results = run_experiment(c, parallel);
  for (const auto& jr : results.at("runs")) {
    const RunResult r = run_result_from_json(jr);
    const std::string seed = std::to_string(r.config.seed);
    write_atomic(out_dir / ("curve_seed" + seed + ".csv"), curve_csv(r));
    write_atomic(out_dir / ("lr_trace_seed" + seed + ".csv"), lr_trace_csv(r));
  }
  write_atomic(out_dir / "results.json", results.dump(1) + "\n");
  return results;
}

// --- compare / curve ----------------------------------------------------------

inline json load_results(const std::string& path) {
  json j = read_json_file(path);
  if (!j.is_object() || !j.contains("schema_version") || j.at("schema_version") != kSchemaVersion)
    throw std::runtime_error(path + ": not a results file with schema_version " + std::to_string(kSchemaVersion));
  for (const char* key : {"config", "runs", "aggregate"})
    if (!j.contains(key)) throw std::runtime_error(path + ": results file missing '" + key + "'");
  if (!j.at("runs").is_array() || j.at("runs").empty()) throw std::runtime_error(path + ": results file has no runs");
  return j;
}

struct CompareRow {
  std::string name;
  MeanStd a_auc, a_avg, f_last;
  std::size_t runs = 0;
};

struct CompareTable {
  std::vector<CompareRow> rows;
  std::string text;
  std::string csv;
};

inline CompareTable cmd_compare(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ConfigError("compare needs at least one results file");
  CompareTable table;
  for (const auto& p : paths) {
    const json j = load_results(p);
    CompareRow row;
    row.name = j.at("config").value("name", p);
    std::vector<double> auc, avg, fl;
    for (const auto& r : j.at("runs")) {
      auc.push_back(r.at("metrics").at("a_auc").get<double>());
      avg.push_back(r.at("metrics").at("a_avg").get<double>());
      fl.push_back(r.at("metrics").at("f_last").get<double>());
    }
    row.a_auc = mean_std(auc);
    row.a_avg = mean_std(avg);
    row.f_last = mean_std(fl);
    row.runs = auc.size();
    table.rows.push_back(row);
  }

  std::size_t width = 6;
  for (const auto& r : table.rows) width = std::max(width, r.name.size());
  auto pct = [](const MeanStd& m) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%6.2f +/- %5.2f", 100.0 * m.mean, 100.0 * m.std);
    return std::string(buf);
  };
  std::ostringstream text;
  text << std::left << std::setw(static_cast<int>(width)) << "config"
       << "  runs  A_AUC (%)          A_avg (%)          F_last (%)\n";
  for (const auto& r : table.rows)
    text << std::left << std::setw(static_cast<int>(width)) << r.name << "  " << std::setw(4) << r.runs << "  "
         << pct(r.a_auc) << "    " << pct(r.a_avg) << "    " << pct(r.f_last) << "\n";
  table.text = text.str();

  std::ostringstream csv;
  csv << "config,runs,a_auc_mean,a_auc_std,a_avg_mean,a_avg_std,f_last_mean,f_last_std\n";
  char buf[512];
  for (const auto& r : table.rows) {
    std::snprintf(buf, sizeof(buf), ",%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.runs, r.a_auc.mean, r.a_auc.std,
                  r.a_avg.mean, r.a_avg.std, r.f_last.mean, r.f_last.std);
    csv << r.name << buf;
  }
  table.csv = csv.str();
  return table;
}

struct CurveSeries {
  std::string name;
  std::size_t delta_n = 0;
  std::vector<double> mean;
  std::vector<double> std;
};

inline CurveSeries curve_series(const json& results, const std::string& fallback_name) {
  CurveSeries s;
  s.name = results.at("config").value("name", fallback_name);
  std::vector<std::vector<double>> per_run;
  for (const auto& r : results.at("runs")) {
    const auto& curve = r.at("curve");
    const auto points = curve.at("points").get<std::vector<double>>();
    const auto dn = curve.at("delta_n").get<std::size_t>();
    if (points.empty()) throw std::runtime_error("results file has an empty accuracy curve");
    if (!per_run.empty() && (points.size() != per_run.front().size() || dn != s.delta_n))
      throw std::runtime_error("runs have mismatched accuracy curves");
    s.delta_n = dn;
    per_run.push_back(points);
  }
  for (std::size_t i = 0; i < per_run.front().size(); ++i) {
    std::vector<double> xs;
    for (const auto& r : per_run) xs.push_back(r[i]);
    const auto ms = mean_std(xs);
    s.mean.push_back(ms.mean);
    s.std.push_back(ms.std);
  }
  return s;
}

inline std::string curve_series_csv(const CurveSeries& s) {
  std::string out = "n,mean_acc,std_acc\n";
  for (std::size_t i = 0; i < s.mean.size(); ++i)
    out += std::to_string((i + 1) * s.delta_n) + "," + fixed6(s.mean[i]) + "," + fixed6(s.std[i]) + "\n";
  return out;
}

inline std::string xml_escape(const std::string& in) {
  std::string out;
  for (char ch : in) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

/// Line chart with one polyline per series; x = samples seen, y = accuracy in [0, 1].
inline std::string curve_svg(const std::vector<CurveSeries>& series) {
  constexpr double kW = 640, kH = 400, kPad = 50;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  double max_n = 1.0;
  for (const auto& s : series) max_n = std::max(max_n, static_cast<double>(s.mean.size() * s.delta_n));
  auto px = [&](double n) { return kPad + (kW - 2 * kPad) * n / max_n; };
  auto py = [&](double acc) { return kH - kPad - (kH - 2 * kPad) * acc; };
  std::ostringstream svg;
  svg << std::fixed << std::setprecision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << kPad << "\" y1=\"" << py(0) << "\" x2=\"" << kW - kPad << "\" y2=\"" << py(0)
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << kPad << "\" y1=\"" << py(0) << "\" x2=\"" << kPad << "\" y2=\"" << py(1)
      << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\"># of samples</text>\n";
  svg << "<text x=\"15\" y=\"" << kH / 2 << "\" transform=\"rotate(-90 15 " << kH / 2
      << ")\" text-anchor=\"middle\">accuracy</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = colors[k % std::size(colors)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.mean.size(); ++i) {
      if (i) svg << ' ';
      svg << px(static_cast<double>((i + 1) * s.delta_n)) << ',' << py(s.mean[i]);
    }
    svg << "\"/>\n";
    svg << "<text x=\"" << kW - kPad - 120 << "\" y=\"" << kPad + 18.0 * static_cast<double>(k) << "\" fill=\""
        << color << "\">" << xml_escape(s.name) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

/// Writes `<name>_curve.csv` per results file and one `curve.svg`.
inline std::vector<std::filesystem::path> cmd_curve(const std::vector<std::string>& paths,
                                                    const std::filesystem::path& out_dir) {
  if (paths.empty()) throw ConfigError("curve needs at least one results file");
  std::vector<CurveSeries> series;
  std::vector<std::filesystem::path> written;
  std::map<std::string, int> used;
  for (const auto& p : paths) {
    auto s = curve_series(load_results(p), p);
    std::string stem = s.name;
    for (auto& ch : stem)
      if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_')) ch = '_';
    if (const int n = used[stem]++; n > 0) stem += "_" + std::to_string(n + 1);
    const auto csv_path = out_dir / (stem + "_curve.csv");
    write_atomic(csv_path, curve_series_csv(s));
    written.push_back(csv_path);
    series.push_back(std::move(s));
  }
  const auto svg_path = out_dir / "curve.svg";
  write_atomic(svg_path, curve_svg(series));
  written.push_back(svg_path);
  return written;
}

}  // namespace clib::harness
