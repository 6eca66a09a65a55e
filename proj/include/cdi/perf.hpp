#pragma once

// Analytical cost model for data-parallel training on a composition:
// per-step load / compute / communication, epoch and run totals, traffic
// through the chassis host ports, and per-GPU memory feasibility.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <future>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cdi/composition.hpp"
#include "cdi/data.hpp"
#include "cdi/error.hpp"
#include "cdi/fabric.hpp"

namespace cdi {

enum class Parallelism { dp, ddp };
enum class Precision { fp32, fp16_mixed };
enum class Pipeline { overlapped, sequential };

constexpr std::string_view to_string(Precision p) { return p == Precision::fp32 ? "FP32" : "FP16"; }
constexpr std::string_view to_string(Parallelism p) { return p == Parallelism::dp ? "DP" : "DDP"; }

inline Precision parse_precision(std::string_view s) {
  if (s == "FP32" || s == "fp32") return Precision::fp32;
  if (s == "FP16" || s == "fp16") return Precision::fp16_mixed;
  fail(Errc::schema_error, "unknown precision '" + std::string(s) + "'");
}

inline Parallelism parse_parallelism(std::string_view s) {
  if (s == "DP" || s == "dp") return Parallelism::dp;
  if (s == "DDP" || s == "ddp") return Parallelism::ddp;
  fail(Errc::schema_error, "unknown parallelism '" + std::string(s) + "'");
}

struct Strategy {
  Parallelism parallelism = Parallelism::ddp;
  Precision precision = Precision::fp16_mixed;
  bool sharded = false;

  std::string label() const {
    std::string s = std::string(to_string(parallelism)) + "+" + std::string(to_string(precision));
    if (sharded) s += "+sharded";
    return s;
  }
  bool operator==(const Strategy&) const = default;
};

inline constexpr std::size_t precision_bytes(Precision p) { return p == Precision::fp32 ? 4 : 2; }

// ---------------------------------------------------------------------------
// Workloads

struct Dataset {
  std::string name;
  std::uint64_t sample_count = 0;
  double bytes_per_sample = 0;
};

struct WorkloadSpec {
  std::string name;
  std::string domain;  // "vision" | "nlp"
  double parameter_count = 0;
  int depth = 0;
  Dataset dataset;
  int per_gpu_batch = 1;
  int epochs = 1;
  std::optional<int> sequence_length;
  double preprocess_cpu_us_per_sample = 0;
  double activation_bytes_per_sample = 0;
  double memory_reserve_bytes = 0;
  // Calibrated per-step compute seconds at `compute_batch` samples per GPU.
  std::map<Precision, double> compute_s;
  int compute_batch = 1;

  void check() const {
    if (!(parameter_count > 0)) fail(Errc::schema_error, name + ": parameter count must be positive");
    if (per_gpu_batch < 1) fail(Errc::schema_error, name + ": batch must be at least 1");
    if (epochs < 1) fail(Errc::schema_error, name + ": epochs must be at least 1");
  }

  WorkloadSpec with_batch(int b) const {
    WorkloadSpec w = *this;
    w.per_gpu_batch = b;
    w.check();
    return w;
  }
};

inline WorkloadSpec workload_from_json(const json& j) {
  try {
    WorkloadSpec w;
    w.name = j.at("name").get<std::string>();
    w.domain = j.at("domain").get<std::string>();
    w.parameter_count = j.at("parameters").get<double>();
    w.depth = j.at("depth").get<int>();
    const auto& d = j.at("dataset");
    w.dataset = {d.at("name").get<std::string>(), d.at("samples").get<std::uint64_t>(),
                 d.at("bytes_per_sample").get<double>()};
    w.epochs = j.at("epochs").get<int>();
    w.per_gpu_batch = j.at("per_gpu_batch").get<int>();
    w.compute_batch = w.per_gpu_batch;
    if (j.contains("sequence_length")) w.sequence_length = j.at("sequence_length").get<int>();
    w.preprocess_cpu_us_per_sample = j.value("preprocess_cpu_us_per_sample", 0.0);
    const auto& m = j.at("memory");
    w.activation_bytes_per_sample = m.at("activation_bytes_per_sample").get<double>();
    w.memory_reserve_bytes = m.at("reserve_bytes").get<double>();
    w.check();
    return w;
  } catch (const json::exception& e) {
    fail(Errc::schema_error, std::string("workload: ") + e.what());
  }
}

inline json to_json(const WorkloadSpec& w) {
  json j{{"name", w.name},
         {"domain", w.domain},
         {"parameters", w.parameter_count},
         {"depth", w.depth},
         {"dataset",
          {{"name", w.dataset.name}, {"samples", w.dataset.sample_count}, {"bytes_per_sample", w.dataset.bytes_per_sample}}},
         {"epochs", w.epochs},
         {"per_gpu_batch", w.per_gpu_batch},
         {"preprocess_cpu_us_per_sample", w.preprocess_cpu_us_per_sample},
         {"memory",
          {{"activation_bytes_per_sample", w.activation_bytes_per_sample}, {"reserve_bytes", w.memory_reserve_bytes}}}};
  if (w.sequence_length) j["sequence_length"] = *w.sequence_length;
  if (!w.compute_s.empty()) {
    json c = json::object();
    for (const auto& [p, s] : w.compute_s) c[std::string(to_string(p))] = s;
    j["compute_s"] = c;
  }
  return j;
}

// All workload fixtures in a directory, smallest model first.
inline std::vector<WorkloadSpec> load_workloads(const std::filesystem::path& dir = data_dir() / "workloads") {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<WorkloadSpec> out;
  for (const auto& f : files) out.push_back(workload_from_json(load_json_file(f)));
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.parameter_count < b.parameter_count; });
  return out;
}

inline const WorkloadSpec& find_workload(const std::vector<WorkloadSpec>& ws, std::string_view name) {
  for (const auto& w : ws)
    if (w.name == name) return w;
  fail(Errc::unknown_workload, "unknown workload '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Closed-form collective costs

inline double gradient_bytes(const WorkloadSpec& w, Precision p) {
  return w.parameter_count * static_cast<double>(precision_bytes(p));
}

// Ring allreduce: reduce-scatter plus allgather, 2(n-1) steps of bytes/n.
inline double allreduce_time(int n, double bytes, double bottleneck_gbps, double hop_latency_us) {
  if (n <= 1) return 0.0;
  double steps = 2.0 * (n - 1);
  return steps / n * bytes / (bottleneck_gbps * 1e9) + steps * hop_latency_us * 1e-6;
}

// Single-process data parallel: the master GPU broadcasts parameters and
// gathers gradients, one full copy per peer, serialized through its links.
inline double dp_sync_time(int n, double bytes, double master_link_gbps, double master_latency_us = 0.0) {
  if (n <= 1) return 0.0;
  return 2.0 * (n - 1) * (bytes / (master_link_gbps * 1e9) + master_latency_us * 1e-6);
}

// ---------------------------------------------------------------------------
// Memory

struct ModelStateBytes {
  double weights, gradients, optimizer;  // per parameter
};

inline constexpr ModelStateBytes model_state_bytes(Precision p) {
  // Mixed precision keeps fp32 master weights and Adam moments in the
  // optimizer state; both layouts total 16 bytes per parameter.
  return p == Precision::fp16_mixed ? ModelStateBytes{2, 2, 12} : ModelStateBytes{4, 4, 8};
}

inline double model_state_footprint(const WorkloadSpec& w, const Strategy& s, int n_gpus) {
  auto b = model_state_bytes(s.precision);
  double shard = s.sharded ? static_cast<double>(std::max(n_gpus, 1)) : 1.0;
  return w.parameter_count * (b.weights + (b.gradients + b.optimizer) / shard);
}

inline constexpr double kGiB = 1024.0 * 1024.0 * 1024.0;

inline int feasible_batch(const WorkloadSpec& w, double gpu_memory_gib, const Strategy& s, int n_gpus = 1) {
  if (!(w.activation_bytes_per_sample > 0)) fail(Errc::not_calibrated, w.name + ": no activation footprint");
  double free = gpu_memory_gib * kGiB - w.memory_reserve_bytes - model_state_footprint(w, s, n_gpus);
  double b = std::floor(free / w.activation_bytes_per_sample);
  if (!(b >= 1)) fail(Errc::no_feasible_batch, w.name + ": even one sample does not fit");
  return static_cast<int>(b);
}

// ---------------------------------------------------------------------------
// Step model

struct ModelOptions {
  std::optional<std::string> host;  // default: first host of the topology
  Pipeline pipeline = Pipeline::overlapped;
  double base_storage_gbps = 0.5;
  // Overrides of the NVMe link-class read bandwidths, GB/s.
  std::optional<double> local_nvme_gbps;
  std::optional<double> falcon_nvme_gbps;
};

struct PortTraffic {
  std::string port;
  std::string drawer;
  std::string device;
  Direction direction;
  double bytes;
};

struct StepBreakdown {
  double load_s = 0;
  double compute_s = 0;
  double comm_s = 0;
  double total_s = 0;
  double crossing_bytes = 0;          // through chassis host ports, per step
  std::vector<PortTraffic> port_traffic;  // the same bytes, apportioned
  int n_gpus = 0;
};

struct PerfEstimate {
  StepBreakdown step;
  std::uint64_t steps_per_epoch = 0;
  double epoch_s = 0;
  double total_s = 0;
  double pcie_traffic_gbps = 0;
  double gpu_util_proxy = 0;
};

inline std::string job_host(const Composition& c, const ModelOptions& opt) {
  if (opt.host) return *opt.host;
  if (c.topology().hosts().empty()) fail(Errc::insufficient_resources, "topology has no hosts");
  return c.topology().hosts().front().id;
}

struct Flow {
  LinkPath path;
  double bytes;
};

namespace detail {

inline void add_crossings(const Topology& t, const Flow& f, StepBreakdown& step) {
  for (auto& c : t.port_crossings(f.path)) {
    step.crossing_bytes += f.bytes;
    step.port_traffic.push_back({std::move(c.port), std::move(c.drawer), std::move(c.device), c.direction, f.bytes});
  }
}

}  // namespace detail

// Communication flows of one synchronization step, in ring order for DDP
// and master-first for DP.
inline std::vector<Flow> sync_flows(const Topology& t, const std::vector<std::string>& gpus, const Strategy& s,
                                    double bytes) {
  std::vector<Flow> flows;
  auto n = gpus.size();
  if (n < 2) return flows;
  if (s.parallelism == Parallelism::ddp) {
    // Each ring step ships one whole-byte chunk of bytes/n.
    double per_hop = 2.0 * static_cast<double>(n - 1) * std::ceil(bytes / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) flows.push_back({t.route(gpus[i], gpus[(i + 1) % n]), per_hop});
  } else {
    for (std::size_t i = 1; i < n; ++i) {
      flows.push_back({t.route(gpus[0], gpus[i]), bytes});
      flows.push_back({t.route(gpus[i], gpus[0]), bytes});
    }
  }
  return flows;
}

inline double load_time(const WorkloadSpec& w, const Composition& c, const std::string& host, int n_gpus,
                        const ModelOptions& opt) {
  const auto& t = c.topology();
  double samples = static_cast<double>(w.per_gpu_batch) * n_gpus;
  double bytes = samples * w.dataset.bytes_per_sample;
  double preprocess = samples * w.preprocess_cpu_us_per_sample * 1e-6 / std::max(t.host(host).cores(), 1);
  auto storage = c.job_storage(host);
  if (storage.source == Composition::StorageSource::base) return bytes / (opt.base_storage_gbps * 1e9) + preprocess;
  auto m = t.metrics(host, *storage.device);
  double bw = m.bandwidth_gbps;
  if (storage.source == Composition::StorageSource::local_nvme && opt.local_nvme_gbps) bw = *opt.local_nvme_gbps;
  if (storage.source == Composition::StorageSource::falcon_nvme && opt.falcon_nvme_gbps) bw = *opt.falcon_nvme_gbps;
  return bytes / (bw * 1e9) + samples * m.latency_us * 1e-6 + preprocess;
}

inline StepBreakdown step_time(const WorkloadSpec& w, const Composition& c, const Strategy& s,
                               const ModelOptions& opt = {}) {
  const auto& t = c.topology();
  auto host = job_host(c, opt);
  auto gpus = c.job_gpus(host);
  if (gpus.empty()) fail(Errc::insufficient_resources, host + " has no GPUs in this composition");
  int n = static_cast<int>(gpus.size());

  auto compute = w.compute_s.find(s.precision);
  if (compute == w.compute_s.end())
    fail(Errc::not_calibrated, w.name + " has no " + std::string(to_string(s.precision)) + " compute time");

  double min_mem = std::numeric_limits<double>::infinity();
  for (const auto& g : gpus) min_mem = std::min(min_mem, std::get<Gpu>(t.device(g).kind).memory_gib);
  int max_batch = 0;
  try {
    max_batch = feasible_batch(w, min_mem, s, n);
  } catch (const Error& e) {
    if (e.code() != Errc::no_feasible_batch) throw;
  }
  if (w.per_gpu_batch > max_batch)
    fail(Errc::infeasible_batch, w.name + ": batch " + std::to_string(w.per_gpu_batch) + " exceeds " +
                                     std::to_string(max_batch) + " per GPU");

  StepBreakdown step;
  step.n_gpus = n;
  step.compute_s = compute->second * w.per_gpu_batch / w.compute_batch;

  double bytes = gradient_bytes(w, s.precision);
  auto flows = sync_flows(t, gpus, s, bytes);
  if (n > 1) {
    if (s.parallelism == Parallelism::ddp) {
      double bw = std::numeric_limits<double>::infinity(), lat = 0;
      for (const auto& f : flows) {
        auto m = path_metrics(f.path, t.link_classes());
        bw = std::min(bw, m.bandwidth_gbps);
        lat = std::max(lat, m.latency_us);
      }
      step.comm_s = allreduce_time(n, bytes, bw, lat);
    } else {
      double bw = std::numeric_limits<double>::infinity(), lat = 0;
      for (const auto& f : flows) {
        auto m = path_metrics(f.path, t.link_classes());
        bw = std::min(bw, m.bandwidth_gbps);
        lat = std::max(lat, m.latency_us);
      }
      step.comm_s = dp_sync_time(n, bytes, bw, lat);
    }
  }
  for (const auto& f : flows) detail::add_crossings(t, f, step);

  step.load_s = load_time(w, c, host, n, opt);
  step.total_s = opt.pipeline == Pipeline::overlapped ? std::max(step.load_s, step.compute_s + step.comm_s)
                                                      : step.load_s + step.compute_s + step.comm_s;
  return step;
}

inline PerfEstimate training_time(const WorkloadSpec& w, const Composition& c, const Strategy& s,
                                  const ModelOptions& opt = {}) {
  PerfEstimate e;
  e.step = step_time(w, c, s, opt);
  auto global_batch = static_cast<std::uint64_t>(w.per_gpu_batch) * static_cast<std::uint64_t>(e.step.n_gpus);
  e.steps_per_epoch = (w.dataset.sample_count + global_batch - 1) / global_batch;
  e.epoch_s = static_cast<double>(e.steps_per_epoch) * e.step.total_s;
  e.total_s = e.epoch_s * w.epochs;
  e.pcie_traffic_gbps = e.step.total_s > 0 ? e.step.crossing_bytes / e.step.total_s / 1e9 : 0.0;
  e.gpu_util_proxy = e.step.total_s > 0 ? e.step.compute_s / e.step.total_s : 0.0;
  return e;
}

// Percent change of A's training time relative to B.
inline double relative_change(const PerfEstimate& a, const PerfEstimate& b) {
  return 100.0 * (a.total_s - b.total_s) / b.total_s;
}

struct StorageEffect {
  StepBreakdown step;
  double load_delta_s;   // vs the localGPUs (base storage) configuration
  double total_delta_s;
};

// Step change caused by the storage choice alone. `c` must be one of the
// localGPUs / localNVMe / falconNVMe configurations.
inline StorageEffect storage_effect(const WorkloadSpec& w, const Composition& c, const Strategy& s = {},
                                    const ModelOptions& opt = {}) {
  auto host = job_host(c, opt);
  std::set<std::string> local;
  if (auto it = c.local_selection().find(host); it != c.local_selection().end()) local = it->second;
  if (const auto& nvme = c.topology().host(host).local_nvme) local.erase(*nvme);
  auto base = select_local(c, host, local);
  for (const auto& dev : base.owned_by(host))
    if (base.topology().device(dev).is_nvme()) base = detach(base, dev, Principal::admin());
  auto ref = step_time(w, base, s, opt);
  auto step = step_time(w, c, s, opt);
  return {step, step.load_s - ref.load_s, step.total_s - ref.total_s};
}

inline json to_json(const StepBreakdown& s) {
  json traffic = json::array();
  for (const auto& p : s.port_traffic)
    traffic.push_back({{"port", p.port},
                       {"drawer", p.drawer},
                       {"device", p.device},
                       {"direction", p.direction == Direction::ingress ? "ingress" : "egress"},
                       {"bytes", p.bytes}});
  return {{"load_s", s.load_s},   {"compute_s", s.compute_s},           {"comm_s", s.comm_s},
          {"total_s", s.total_s}, {"crossing_bytes", s.crossing_bytes}, {"n_gpus", s.n_gpus},
          {"port_traffic", traffic}};
}

inline json to_json(const PerfEstimate& e) {
  return {{"step", to_json(e.step)},          {"steps_per_epoch", e.steps_per_epoch},
          {"epoch_s", e.epoch_s},             {"total_s", e.total_s},
          {"pcie_traffic_GBps", e.pcie_traffic_gbps}, {"gpu_util_proxy", e.gpu_util_proxy}};
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepRow {
  std::string workload;
  std::string config;
  Strategy strategy;
  PerfEstimate estimate;
};

// Evaluates every workload x configuration x strategy. Cells run
// concurrently; row order is fixed by the argument order.
inline std::vector<SweepRow> sweep(const std::vector<WorkloadSpec>& workloads,
                                   const std::vector<std::pair<std::string, Composition>>& configs,
                                   const std::vector<Strategy>& strategies, const ModelOptions& opt = {}) {
  std::vector<std::future<SweepRow>> jobs;
  for (const auto& w : workloads)
    for (const auto& [label, comp] : configs)
      for (const auto& s : strategies)
        jobs.push_back(std::async(std::launch::async, [&w, &label, &comp, s, &opt] {
          return SweepRow{w.name, label, s, training_time(w, comp, s, opt)};
        }));
  std::vector<SweepRow> rows;
  rows.reserve(jobs.size());
  for (auto& j : jobs) rows.push_back(j.get());
  return rows;
}

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "workload,config,strategy,load_s,compute_s,comm_s,total_s,epoch_s,traffic_GBps\n";
  for (const auto& r : rows) {
    const auto& s = r.estimate.step;
    out << r.workload << ',' << r.config << ',' << r.strategy.label() << ',' << format_number(s.load_s) << ','
        << format_number(s.compute_s) << ',' << format_number(s.comm_s) << ',' << format_number(s.total_s) << ','
        << format_number(r.estimate.epoch_s) << ',' << format_number(r.estimate.pcie_traffic_gbps) << '\n';
  }
  return out.str();
}

}  // namespace cdi
