#pragma once

// Back-solving model parameters from baseline step times, and checking
// model output against reference anchors.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "cdi/composition.hpp"
#include "cdi/data.hpp"
#include "cdi/error.hpp"
#include "cdi/perf.hpp"

namespace cdi {

// Communication and load terms of a configuration with compute zeroed.
struct CommFloor {
  double comm_s;
  double load_s;
  double crossing_bytes;
};

inline CommFloor comm_floor(const WorkloadSpec& w, const Composition& c, const Strategy& s,
                            const ModelOptions& opt = {}) {
  WorkloadSpec probe = w;
  probe.compute_s[s.precision] = 0.0;
  probe.compute_batch = w.per_gpu_batch;
  auto step = step_time(probe, c, s, opt);
  return {step.comm_s, step.load_s, step.crossing_bytes};
}

// Per-step compute that reproduces `baseline_step_s` on `local`.
inline double calibrate_compute(const WorkloadSpec& w, const Composition& local, const Strategy& s,
                                double baseline_step_s, const ModelOptions& opt = {}) {
  auto f = comm_floor(w, local, s, opt);
  double compute = opt.pipeline == Pipeline::overlapped ? baseline_step_s - f.comm_s
                                                        : baseline_step_s - f.comm_s - f.load_s;
  if (!(compute > 0.0))
    fail(Errc::uncalibratable, w.name + ": baseline " + format_number(baseline_step_s) +
                                   " s is below the communication floor " + format_number(f.comm_s) + " s");
  if (opt.pipeline == Pipeline::overlapped && !(baseline_step_s > f.load_s))
    fail(Errc::uncalibratable, w.name + ": baseline " + format_number(baseline_step_s) +
                                   " s does not exceed the load time " + format_number(f.load_s) + " s");
  return compute;
}

struct Baseline {
  std::string workload;
  Precision precision = Precision::fp16_mixed;
  double step_s = 0;
  json target;  // how the synthetic value was produced
};

struct CalibrationResult {
  std::string workload;
  std::map<Precision, double> compute_s;
  double activation_bytes_per_sample = 0;
  double memory_reserve_bytes = 0;
  std::map<std::string, double> residuals;  // anchor id -> relative error
};

inline CalibrationResult calibrate(const WorkloadSpec& w, const std::vector<Baseline>& baselines,
                                   const Composition& local, const ModelOptions& opt = {}) {
  CalibrationResult r;
  r.workload = w.name;
  r.activation_bytes_per_sample = w.activation_bytes_per_sample;
  r.memory_reserve_bytes = w.memory_reserve_bytes;
  for (const auto& b : baselines) {
    if (b.workload != w.name) continue;
    Strategy s;
    s.precision = b.precision;
    r.compute_s[b.precision] = calibrate_compute(w, local, s, b.step_s, opt);
  }
  return r;
}

inline WorkloadSpec apply(WorkloadSpec w, const CalibrationResult& r) {
  for (const auto& [p, c] : r.compute_s) w.compute_s[p] = c;
  w.compute_batch = w.per_gpu_batch;
  w.activation_bytes_per_sample = r.activation_bytes_per_sample;
  w.memory_reserve_bytes = r.memory_reserve_bytes;
  return w;
}

struct MemoryFit {
  double activation_bytes_per_sample;
  double reserve_bytes;
};

// Two batch-size observations (plain and sharded) pin both the per-sample
// activation footprint and the fixed reserve. The fit puts each observed
// batch at the middle of its feasible interval.
inline MemoryFit fit_memory(const WorkloadSpec& w, double gpu_memory_gib, int n_gpus, Precision p, int batch_plain,
                            int batch_sharded) {
  Strategy plain{Parallelism::ddp, p, false};
  Strategy sharded{Parallelism::ddp, p, true};
  double s_plain = model_state_footprint(w, plain, n_gpus);
  double s_sharded = model_state_footprint(w, sharded, n_gpus);
  if (batch_sharded <= batch_plain || !(s_plain > s_sharded))
    fail(Errc::uncalibratable, w.name + ": sharding must free memory and admit a larger batch");
  double act = (s_plain - s_sharded) / (batch_sharded - batch_plain);
  double reserve = gpu_memory_gib * kGiB - s_plain - (batch_plain + 0.5) * act;
  if (!(reserve >= 0)) fail(Errc::uncalibratable, w.name + ": observed batches exceed GPU memory");
  return {act, reserve};
}

// ---------------------------------------------------------------------------
// Synthetic baselines

// Configurations used by synthesis and anchor evaluation.
struct ReferenceConfigs {
  std::shared_ptr<const Topology> topology;
  std::map<std::string, Composition> by_label;

  explicit ReferenceConfigs(std::shared_ptr<const Topology> t) : topology(std::move(t)) {
    for (const auto* label : kNamedConfigurations)
      by_label.emplace(label, apply_named_configuration(topology, label));
  }
  const Composition& at(const std::string& label) const {
    auto it = by_label.find(label);
    if (it == by_label.end()) fail(Errc::unknown_label, "unknown configuration '" + label + "'");
    return it->second;
  }
};

// Local (localGPUs, DDP) step time at which the model meets `target`:
//   {"kind": "falcon_local_ratio", "value": r}
//   {"kind": "falcon_slowdown_pct", "value": p}
//   {"kind": "falcon_traffic_GBps", "value": x}
//   {"kind": "traffic_ratio", "reference": name, "value": q}   (reference traffic / q)
//   {"kind": "compute_factor", "of": "FP16", "value": f}      (compute = f x compute[of])
// `calibrated` supplies already-calibrated workloads the target refers to.
inline double synthesize_baseline(const WorkloadSpec& w, Precision p, const json& target,
                                  const ReferenceConfigs& cfg, const std::vector<WorkloadSpec>& calibrated) {
  Strategy s;
  s.precision = p;
  const auto& local = cfg.at("localGPUs");
  const auto& falcon = cfg.at("falconGPUs");
  auto fl = comm_floor(w, local, s);
  auto ff = comm_floor(w, falcon, s);
  auto kind = target.at("kind").get<std::string>();
  double value = target.at("value").get<double>();

  double compute = 0;
  if (kind == "falcon_local_ratio" || kind == "falcon_slowdown_pct") {
    double r = kind == "falcon_local_ratio" ? value : 1.0 + value / 100.0;
    if (!(r > 1.0)) fail(Errc::uncalibratable, "ratio target must exceed 1");
    compute = (ff.comm_s - r * fl.comm_s) / (r - 1.0);
  } else if (kind == "falcon_traffic_GBps" || kind == "traffic_ratio") {
    double traffic = value;
    if (kind == "traffic_ratio") {
      const auto& ref = find_workload(calibrated, target.at("reference").get<std::string>());
      traffic = training_time(ref, falcon, s).pcie_traffic_gbps / value;
    }
    compute = ff.crossing_bytes / (traffic * 1e9) - ff.comm_s;
  } else if (kind == "compute_factor") {
    const auto& self = find_workload(calibrated, w.name);
    auto of = parse_precision(target.at("of").get<std::string>());
    auto it = self.compute_s.find(of);
    if (it == self.compute_s.end()) fail(Errc::not_calibrated, w.name + ": no compute time to scale");
    compute = value * it->second;
  } else {
    fail(Errc::schema_error, "unknown baseline target kind '" + kind + "'");
  }

  if (!(compute > 0.0)) fail(Errc::uncalibratable, w.name + ": target needs non-positive compute");
  if (!(compute + fl.comm_s > fl.load_s) || !(compute + ff.comm_s > ff.load_s))
    fail(Errc::uncalibratable, w.name + ": target would make the step load-bound");
  return compute + fl.comm_s;
}

// Regenerates step_s for every row, in order. Later rows may refer to
// workloads calibrated by earlier ones.
inline std::vector<Baseline> synthesize_baselines(const std::vector<Baseline>& rows, const ReferenceConfigs& cfg,
                                                  const std::vector<WorkloadSpec>& workloads) {
  std::vector<WorkloadSpec> done;
  std::vector<Baseline> out;
  for (auto b : rows) {
    auto it = std::find_if(done.begin(), done.end(), [&](const auto& w) { return w.name == b.workload; });
    WorkloadSpec w = it != done.end() ? *it : find_workload(workloads, b.workload);
    b.step_s = synthesize_baseline(w, b.precision, b.target, cfg, done);
    Strategy s;
    s.precision = b.precision;
    w.compute_s[b.precision] = calibrate_compute(w, cfg.at("localGPUs"), s, b.step_s);
    w.compute_batch = w.per_gpu_batch;
    if (it != done.end()) *it = w;
    else done.push_back(w);
    out.push_back(std::move(b));
  }
  return out;
}

inline json baselines_to_json(const std::vector<Baseline>& rows) {
  json arr = json::array();
  for (const auto& b : rows)
    arr.push_back({{"workload", b.workload},
                   {"precision", std::string(to_string(b.precision))},
                   {"step_s", b.step_s},
                   {"target", b.target}});
  return {{"schema", 1},
          {"origin", "synthetic-back-solved"},
          {"note",
           "No hardware measurements. Each step_s is the localGPUs DDP step time at which the model meets the "
           "listed target; regenerate with: cdi calibrate --synthesize"},
          {"config", "localGPUs"},
          {"parallelism", "DDP"},
          {"baselines", arr}};
}

inline std::vector<Baseline> baselines_from_json(const json& doc) {
  std::vector<Baseline> out;
  try {
    for (const auto& b : doc.at("baselines"))
      out.push_back({b.at("workload").get<std::string>(), parse_precision(b.at("precision").get<std::string>()),
                     b.at("step_s").get<double>(), b.value("target", json::object())});
  } catch (const json::exception& e) {
    fail(Errc::schema_error, std::string("baselines: ") + e.what());
  }
  return out;
}

inline std::vector<Baseline> load_baselines(const std::filesystem::path& p = data_dir() / "baselines.json") {
  return baselines_from_json(load_json_file(p));
}

// Workload fixtures with the shipped baselines applied.
inline std::vector<WorkloadSpec> calibrated_workloads(const ReferenceConfigs& cfg,
                                                      std::vector<WorkloadSpec> workloads = load_workloads(),
                                                      const std::vector<Baseline>& baselines = load_baselines()) {
  for (auto& w : workloads) w = apply(w, calibrate(w, baselines, cfg.at("localGPUs")));
  return workloads;
}

// ---------------------------------------------------------------------------
// Reference anchors

enum class AnchorKind { ratio, bound, absolute };

struct MetricRef {
  std::string metric;  // total_s | traffic_GBps | feasible_batch
  std::string workload;
  std::string config;
  Strategy strategy;
};

struct ReferenceAnchor {
  std::string id;
  std::string description;
  AnchorKind kind = AnchorKind::ratio;
  double expected = 0;
  double tolerance = 0;    // relative for ratio/absolute, additive for bound
  bool upper = true;       // bound direction
  bool percent_change = false;  // value = 100 (num/den - 1)
  std::string source;
  MetricRef numerator;
  std::optional<MetricRef> denominator;
};

inline std::string estimate_key(const MetricRef& m) {
  return m.metric + "|" + m.workload + "|" + m.config + "|" + m.strategy.label();
}

inline Strategy strategy_from_json(const json& j) {
  Strategy s;
  s.parallelism = parse_parallelism(j.value("parallelism", std::string("DDP")));
  s.precision = parse_precision(j.value("precision", std::string("FP16")));
  s.sharded = j.value("sharded", false);
  return s;
}

inline MetricRef metric_from_json(const json& j) {
  return {j.at("metric").get<std::string>(), j.at("workload").get<std::string>(),
          j.value("config", std::string("localGPUs")), strategy_from_json(j.value("strategy", json::object()))};
}

inline std::vector<ReferenceAnchor> anchors_from_json(const json& doc) {
  std::vector<ReferenceAnchor> out;
  try {
    for (const auto& a : doc.at("anchors")) {
      ReferenceAnchor r;
      r.id = a.at("id").get<std::string>();
      r.description = a.at("description").get<std::string>();
      auto kind = a.at("kind").get<std::string>();
      if (kind == "ratio") r.kind = AnchorKind::ratio;
      else if (kind == "bound") r.kind = AnchorKind::bound;
      else if (kind == "absolute") r.kind = AnchorKind::absolute;
      else fail(Errc::schema_error, r.id + ": unknown anchor kind '" + kind + "'");
      r.expected = a.at("expected").get<double>();
      r.tolerance = a.at("tolerance").get<double>();
      if (!(r.tolerance > 0)) fail(Errc::schema_error, r.id + ": tolerance must be positive");
      r.upper = a.value("bound", std::string("upper")) == "upper";
      r.percent_change = a.value("percent_change", false);
      r.source = a.at("source").get<std::string>();
      if (r.source.empty()) fail(Errc::schema_error, r.id + ": anchors must name their source");
      r.numerator = metric_from_json(a.at("numerator"));
      if (a.contains("denominator")) r.denominator = metric_from_json(a.at("denominator"));
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    fail(Errc::schema_error, std::string("anchors: ") + e.what());
  }
  return out;
}

inline std::vector<ReferenceAnchor> load_anchors(const std::filesystem::path& p = data_dir() / "anchors.json") {
  return anchors_from_json(load_json_file(p));
}

struct AnchorResult {
  std::string id;
  std::string description;
  double value = 0;
  double expected = 0;
  double relative_error = 0;
  bool pass = false;
};

struct ValidationReport {
  std::vector<AnchorResult> results;
  bool pass = true;
};

using EstimateTable = std::map<std::string, double>;

inline ValidationReport validate_against_reference(const std::vector<ReferenceAnchor>& anchors,
                                                   const EstimateTable& estimates) {
  auto lookup = [&](const MetricRef& m) {
    auto it = estimates.find(estimate_key(m));
    if (it == estimates.end()) fail(Errc::missing_estimate, "no estimate for " + estimate_key(m));
    return it->second;
  };
  ValidationReport report;
  for (const auto& a : anchors) {
    double v = lookup(a.numerator);
    if (a.denominator) v /= lookup(*a.denominator);
    if (a.percent_change) v = 100.0 * (v - 1.0);
    AnchorResult r{a.id, a.description, v, a.expected, (v - a.expected) / a.expected, false};
    switch (a.kind) {
      case AnchorKind::ratio:
      case AnchorKind::absolute: r.pass = std::abs(r.relative_error) <= a.tolerance; break;
      case AnchorKind::bound: r.pass = a.upper ? v < a.expected + a.tolerance : v > a.expected - a.tolerance; break;
    }
    report.pass = report.pass && r.pass;
    report.results.push_back(std::move(r));
  }
  return report;
}

// Evaluates every metric the anchors refer to.
inline EstimateTable collect_estimates(const std::vector<ReferenceAnchor>& anchors,
                                       const std::vector<WorkloadSpec>& workloads, const ReferenceConfigs& cfg) {
  EstimateTable table;
  auto eval = [&](const MetricRef& m) {
    auto key = estimate_key(m);
    if (table.count(key)) return;
    const auto& w = find_workload(workloads, m.workload);
    const auto& c = cfg.at(m.config);
    if (m.metric == "total_s") {
      table[key] = training_time(w, c, m.strategy).total_s;
    } else if (m.metric == "traffic_GBps") {
      table[key] = training_time(w, c, m.strategy).pcie_traffic_gbps;
    } else if (m.metric == "feasible_batch") {
      auto gpus = c.job_gpus(job_host(c, {}));
      double mem = std::get<Gpu>(c.topology().device(gpus.front()).kind).memory_gib;
      table[key] = feasible_batch(w, mem, m.strategy, static_cast<int>(gpus.size()));
    } else {
      fail(Errc::schema_error, "unknown metric '" + m.metric + "'");
    }
  };
  for (const auto& a : anchors) {
    eval(a.numerator);
    if (a.denominator) eval(*a.denominator);
  }
  return table;
}

inline std::string report_text(const ValidationReport& r) {
  std::ostringstream out;
  for (const auto& a : r.results)
    out << (a.pass ? "PASS " : "FAIL ") << a.id << "  value=" << format_number(a.value)
        << " expected=" << format_number(a.expected) << " rel_err=" << format_number(a.relative_error) << "  "
        << a.description << "\n";
  out << (r.pass ? "all anchors pass" : "anchor validation FAILED") << " (" << r.results.size() << " anchors)\n";
  return out.str();
}

inline std::string report_csv(const ValidationReport& r) {
  std::ostringstream out;
  out << "id,value,expected,relative_error,pass\n";
  for (const auto& a : r.results)
    out << a.id << ',' << format_number(a.value) << ',' << format_number(a.expected) << ','
        << format_number(a.relative_error) << ',' << (a.pass ? "true" : "false") << '\n';
  return out.str();
}

}  // namespace cdi
