// Acceptance runner: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails. Thresholds are written here, not read from the anchor
// file, so editing data cannot loosen them.

#include <chrono>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "cdi/calibration.hpp"
#include "cdi/service.hpp"
#include "cdi/telemetry.hpp"
#include "support/oracles.hpp"

using namespace cdi;

namespace {

// Collects failed expectations for one criterion.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  void note(const std::string& s) { notes_ += (notes_.empty() ? "" : "; ") + s; }
  bool pass() const { return failed_ == 0; }
  std::string summary() const {
    std::ostringstream out;
    out << checks_ << " checks";
    if (!notes_.empty()) out << "; " << notes_;
    for (const auto& f : failures_) out << "\n    " << f;
    if (failed_ > failures_.size()) out << "\n    ... " << failed_ - failures_.size() << " more";
    return out.str();
  }

 private:
  std::size_t checks_ = 0, failed_ = 0;
  std::vector<std::string> failures_;
  std::string notes_;
};

std::string num(double v) { return format_number(v); }

struct Fixture {
  std::shared_ptr<const Topology> topo = std::make_shared<const Topology>(build_reference_topology());
  ReferenceConfigs cfg{topo};
  std::vector<WorkloadSpec> ws = calibrated_workloads(cfg);

  PerfEstimate est(const std::string& w, const std::string& c, Strategy s = {}) const {
    return training_time(find_workload(ws, w), cfg.at(c), s);
  }
};

const Strategy kFp32{Parallelism::ddp, Precision::fp32, false};
const Strategy kDp{Parallelism::dp, Precision::fp16_mixed, false};
const char* const kVision[] = {"MobileNetV2", "ResNet-50", "YOLOv5-L"};

void a1(Check& c) {
  auto t0 = std::chrono::steady_clock::now();
  Fixture f;
  double ratio = f.est("BERT-L", "falconGPUs").total_s / f.est("BERT-L", "localGPUs").total_s;
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.note("ratio " + num(ratio) + ", " + num(secs) + " s");
  c.expect(ratio >= 1.5 && ratio <= 2.5, "BERT-L falcon/local ratio " + num(ratio) + " outside [1.5, 2.5]");
  c.expect(secs < 1.0, "took " + num(secs) + " s");
}

void a2(const Fixture& f, Check& c) {
  for (const auto* w : kVision)
    for (const auto* cfg : {"hybridGPUs", "falconGPUs"}) {
      double pct = relative_change(f.est(w, cfg), f.est(w, "localGPUs"));
      c.note(std::string(w) + "/" + cfg + " " + num(pct) + "%");
      c.expect(pct < 10.0, std::string(w) + " on " + cfg + " slowdown " + num(pct) + "%");
    }
}

void a3(const Fixture& f, Check& c) {
  auto traffic = [&](const char* w) { return f.est(w, "falconGPUs").pcie_traffic_gbps; };
  double bl = traffic("BERT-L"), mb = traffic("MobileNetV2"), rn = traffic("ResNet-50");
  auto within = [&](double v, double expect, double tol, const std::string& what) {
    c.note(what + " " + num(v));
    c.expect(std::abs(v - expect) <= tol * expect, what + " " + num(v) + " vs " + num(expect));
  };
  within(bl / mb, 19, 0.30, "BERT-L/MobileNetV2");
  within(bl / rn, 7, 0.30, "BERT-L/ResNet-50");
  within(bl, 76.43, 0.35, "BERT-L GB/s");
  within(rn, 11.31, 0.35, "ResNet-50 GB/s");
  within(mb, 4.0, 0.35, "MobileNetV2 GB/s");
}

void a4(const Fixture& f, Check& c) {
  const auto& bl = find_workload(f.ws, "BERT-L");
  int plain = feasible_batch(bl, 16, {}, 8);
  int sharded = feasible_batch(bl, 16, {Parallelism::ddp, Precision::fp16_mixed, true}, 8);
  c.note("plain " + std::to_string(plain) + ", sharded " + std::to_string(sharded));
  c.expect(plain == 6, "plain batch " + std::to_string(plain));
  c.expect(sharded == 10, "sharded batch " + std::to_string(sharded));
}

void a5(const Fixture& f, Check& c) {
  for (const auto* cfg : {"localGPUs", "hybridGPUs", "falconGPUs"}) {
    double speedup = 100.0 * (f.est("BERT-L", cfg, kFp32).total_s / f.est("BERT-L", cfg).total_s - 1.0);
    c.note(std::string("FP16 ") + cfg + " " + num(speedup) + "%");
    c.expect(speedup > 50.0, std::string("FP16 speedup on ") + cfg + " " + num(speedup) + "%");
    if (std::string(cfg) == "falconGPUs") c.expect(speedup > 70.0, "FP16 speedup on falconGPUs " + num(speedup) + "%");
  }
  double ddp = 100.0 * (f.est("BERT-L", "localGPUs", kDp).total_s / f.est("BERT-L", "localGPUs").total_s - 1.0);
  c.note("DDP vs DP " + num(ddp) + "%");
  c.expect(ddp > 80.0, "DDP vs DP " + num(ddp) + "%");
}

std::string mode_name(DrawerMode m) { return std::string(to_string(m)); }

// Every owner assignment, every mode, several cablings: validate() must
// accept exactly the oracle's legal set, and single attaches from any legal
// state must succeed exactly when they land on a legal state.
void p1(Check& c) {
  std::size_t states = 0;
  for (auto mode : {DrawerMode::standard_1host, DrawerMode::standard_2host, DrawerMode::advanced})
    for (auto cabled : std::vector<std::vector<int>>{{0, 1, 2}, {1, 0}, {2}, {}}) {
      auto t = std::make_shared<const Topology>(build_topology(oracle::small_topology(cabled)));
      for (std::uint32_t s = 0; s < oracle::kStates; ++s) {
        if (!oracle::valid_encoding(s)) continue;
        ++states;
        auto comp = import_config(t, oracle::state_document(mode, s));
        bool legal = oracle::legal(mode, s, cabled);
        bool accepted = validate(comp).empty();
        c.expect(accepted == legal, accepted == legal ? "" : mode_name(mode) + " state " + std::to_string(s));
        if (!legal || cabled.size() != 3) continue;
        for (int slot = 0; slot < oracle::kSlots; ++slot) {
          if (oracle::owner_of(s, slot) >= 0) continue;
          for (int h = 0; h < oracle::kHosts; ++h) {
            bool ok = true;
            try {
              attach(comp, oracle::kHostIds[h], oracle::gpu_id(slot), Principal::admin());
            } catch (const Error&) {
              ok = false;
            }
            bool agree = ok == oracle::legal(mode, oracle::with_owner(s, slot, h), cabled);
            c.expect(agree, agree ? "" : mode_name(mode) + " attach slot " + std::to_string(slot) + " from " + std::to_string(s));
          }
        }
      }
    }
  c.note(std::to_string(states) + " states");
}

void p2(Check& c) {
  std::mt19937_64 rng(1234);
  std::uniform_int_distribution<int> n_dist(1, 64);
  std::uniform_real_distribution<double> bytes_dist(1.0, 4e9), bw_dist(0.5, 300.0), lat_dist(0.0, 20.0),
      k_dist(0.1, 10.0);
  auto close = [](double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b)); };
  c.expect(allreduce_time(1, 1e9, 10, 5) == 0.0, "n=1 allreduce is not zero");
  c.expect(dp_sync_time(1, 1e9, 10, 5) == 0.0, "n=1 DP sync is not zero");
  c.expect(close(allreduce_time(2, 1e9, 10, 5), 1e9 / 10e9 + 2 * 5e-6, 1e-15), "n=2 closed form");
  const int draws = 2000;
  for (int i = 0; i < draws; ++i) {
    int n = n_dist(rng);
    double b = bytes_dist(rng), bw = bw_dist(rng), lat = lat_dist(rng), k = k_dist(rng);
    double t = allreduce_time(n, b, bw, lat);
    double lat_term = n > 1 ? 2.0 * (n - 1) * lat * 1e-6 : 0.0;
    std::string at = " at n=" + std::to_string(n) + " B=" + num(b);
    c.expect(close(t, oracle::ring_allreduce_stepwise(n, b, bw, lat), 1e-12), "stepwise ring" + at);
    c.expect(close(allreduce_time(n, k * b, bw, lat) - lat_term, k * (t - lat_term), 1e-9), "linearity" + at);
    c.expect(close(allreduce_time(n, b, k * bw, lat) - lat_term, (t - lat_term) / k, 1e-9), "inverse bw" + at);
    c.expect(dp_sync_time(n, b, bw, lat) >= t, "DP < DDP" + at);
    c.expect(close(dp_sync_time(n, b, bw, lat), oracle::master_sync_stepwise(n, b, bw, lat), 1e-12), "stepwise DP" + at);
  }
  c.note(std::to_string(draws) + " draws");
}

// Telemetry totals against model crossing bytes for every workload, GPU
// layout and strategy; slot sums against drawer totals.
void p3(const Fixture& f, Check& c) {
  Telemetry tel(f.topo);
  std::size_t runs = 0;
  for (const auto& w : f.ws)
    for (const auto* label : {"localGPUs", "hybridGPUs", "falconGPUs"})
      for (const auto& s : {Strategy{}, kDp, kFp32}) {
        const auto& comp = f.cfg.at(label);
        auto e = training_time(w, comp, s);
        auto steps = e.steps_per_epoch * static_cast<std::uint64_t>(w.epochs);
        std::string run = w.name + "/" + label + "/" + s.label();
        tel.register_run(run);
        tel.record_step(run, e.step, comp, steps);
        ++runs;
        double expect = oracle::crossing_bytes(*f.topo, comp.job_gpus("host0"), s.parallelism == Parallelism::ddp,
                                               gradient_bytes(w, s.precision));
        c.expect(e.step.crossing_bytes == expect, run + " model crossing bytes " + num(e.step.crossing_bytes) +
                                                      " vs placement oracle " + num(expect));
        double total = 0;
        for (const auto& p : tel.port_counters(run)) total += p.ingress_bytes + p.egress_bytes;
        c.expect(total == expect * static_cast<double>(steps), run + " port total " + num(total));
        for (const auto& d : f.topo->drawers()) {
          double slots = 0;
          for (const auto& id : tel.slots_of(run, d.id)) slots += tel.query(run, parse_scope("slot:" + id)).total_bytes;
          double drawer = tel.query(run, {ScopeKind::drawer, d.id}).total_bytes;
          c.expect(slots == drawer, run + " " + d.id + " slots " + num(slots) + " vs drawer " + num(drawer));
        }
      }
  c.note(std::to_string(runs) + " runs");
}

void p4(const Fixture& f, Check& c) {
  // Configuration documents.
  for (const auto* label : kNamedConfigurations) {
    const auto& comp = f.cfg.at(label);
    auto text = export_config_text(comp);
    auto back = import_config(f.topo, json::parse(text));
    c.expect(export_config_text(back) == text && back.ownership() == comp.ownership() &&
                 back.local_selection() == comp.local_selection() && back.modes() == comp.modes(),
             std::string("export/import of ") + label);
  }

  // Model inversion: generate a baseline from known compute, recover it.
  double worst = 0;
  for (const auto& w : f.ws)
    for (auto p : {Precision::fp16_mixed, Precision::fp32})
      for (double truth : {0.05, 0.2, 1.0}) {
        auto gen = w;
        gen.compute_s[p] = truth;
        gen.compute_batch = gen.per_gpu_batch;
        Strategy s;
        s.precision = p;
        double baseline = step_time(gen, f.cfg.at("localGPUs"), s).total_s;
        auto r = calibrate(w, {{w.name, p, baseline, {}}}, f.cfg.at("localGPUs"));
        double err = std::abs(r.compute_s.at(p) - truth) / truth;
        worst = std::max(worst, err);
        c.expect(err <= 1e-9, w.name + " recovered " + num(r.compute_s.at(p)) + " vs " + num(truth));
      }
  c.note("worst inversion error " + num(worst));

  // Service restart from persisted state.
  auto dir = std::filesystem::temp_directory_path() / ("cdi-acceptance-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  ServiceConfig cfg;
  cfg.state_path = dir;
  cfg.tokens["admin"] = {Principal::admin(), {}};
  cfg.tokens["user"] = {Principal{"alice", Role::user}, {"host0"}};
  auto req = [](std::string m, std::string path, std::string token, json body = nullptr) {
    return Request{std::move(m), std::move(path), {}, body.is_null() ? "" : body.dump(), std::move(token)};
  };
  std::uint64_t rev;
  json config, ports, events;
  {
    ControlService s(cfg);
    s.handle(req("POST", "/v1/composition", "admin", {{"op", "apply"}, {"label", "hybridGPUs"}}));
    s.handle(req("POST", "/v1/composition", "user", {{"op", "attach"}, {"host", "host0"}, {"device", "falcon0/d2/gpu2"}}));
    s.handle(req("POST", "/v1/composition", "user", {{"op", "detach"}, {"device", "falcon0/d1/gpu0"}}));
    s.handle(req("POST", "/v1/simulate", "user", {{"workload", "BERT-L"}, {"config", "current"}}));
    s.handle(req("POST", "/v1/simulate", "user", {{"workload", "ResNet-50"}, {"config", "falconGPUs"}}));
    rev = s.revision();
    config = s.handle(req("GET", "/v1/composition/export", "user")).body;
    ports = s.handle(req("GET", "/v1/telemetry/runs/run-4/ports", "user")).body;
    ports["other"] = s.handle(req("GET", "/v1/telemetry/runs/run-5/ports", "user")).body;
    events = s.handle(req("GET", "/v1/events", "admin")).body;
  }
  {
    ControlService s(cfg);
    c.expect(s.revision() == rev, "revision " + std::to_string(s.revision()) + " vs " + std::to_string(rev));
    c.expect(s.handle(req("GET", "/v1/composition/export", "user")).body == config, "composition after restart");
    auto again = s.handle(req("GET", "/v1/telemetry/runs/run-4/ports", "user")).body;
    again["other"] = s.handle(req("GET", "/v1/telemetry/runs/run-5/ports", "user")).body;
    c.expect(again == ports, "port counters after restart");
    auto ev = s.handle(req("GET", "/v1/events", "admin")).body.at("events");
    ev.erase(ev.size() - 1);  // the export just made
    c.expect(ev == events.at("events"), "event log after restart");
  }
  std::filesystem::remove_all(dir);
}

// Benchmark and link-class rows, typed in by hand, must come back
// unchanged through the service listings.
void table_fidelity(Check& c) {
  ServiceConfig cfg;
  cfg.tokens["t"] = {Principal{"viewer", Role::user}, {}};
  ControlService s(cfg);
  auto topo = s.handle({"GET", "/v1/topology", {}, "", std::string("t")}).body;
  struct LinkRow {
    const char* cls;
    const char* protocol;
    double bw, lat;
  };
  const LinkRow links[] = {{"L-L", "NVLINK", 72.37, 1.85}, {"F-L", "PCIE-GEN4", 19.64, 2.66},
                           {"F-F", "PCIE-GEN4", 24.47, 2.08}};
  for (const auto& row : links) {
    bool found = false;
    for (const auto& lc : topo.at("link_classes"))
      if (lc.at("class") == row.cls) {
        found = true;
        c.expect(lc.at("protocol") == row.protocol && lc.at("bandwidth_GBps").get<double>() == row.bw &&
                     lc.at("latency_us").get<double>() == row.lat,
                 std::string("link class ") + row.cls + " " + lc.dump());
      }
    c.expect(found, std::string("link class ") + row.cls + " missing");
  }

  auto listing = s.handle({"GET", "/v1/workloads", {}, "", std::string("t")}).body.at("workloads");
  struct BenchRow {
    const char* name;
    const char* domain;
    const char* dataset;
    double params;
    int depth;
  };
  const BenchRow rows[] = {{"MobileNetV2", "vision", "ImageNet", 3.4e6, 53},
                           {"ResNet-50", "vision", "ImageNet", 25.6e6, 50},
                           {"YOLOv5-L", "vision", "COCO", 47e6, 392},
                           {"BERT", "nlp", "SQuAD v1.1", 110e6, 12},
                           {"BERT-L", "nlp", "SQuAD v1.1", 340e6, 24}};
  c.expect(listing.size() == 5, "workload count " + std::to_string(listing.size()));
  for (const auto& row : rows) {
    bool found = false;
    for (const auto& w : listing)
      if (w.at("name") == row.name) {
        found = true;
        c.expect(w.at("domain") == row.domain && w.at("dataset").at("name") == row.dataset &&
                     w.at("parameters").get<double>() == row.params && w.at("depth").get<int>() == row.depth,
                 std::string("workload ") + row.name + " " + w.dump());
      }
    c.expect(found, std::string("workload ") + row.name + " missing");
  }
}

}  // namespace

int main() {
  int failed = 0;
  std::unique_ptr<Fixture> fixture;
  auto run = [&](const std::string& id, const std::string& what, const std::function<void(Check&)>& body) {
    Check c;
    try {
      body(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    if (!c.pass()) ++failed;
    std::cout << (c.pass() ? "PASS " : "FAIL ") << id << "  " << what << "  (" << c.summary() << ")" << std::endl;
  };
  auto fx = [&]() -> const Fixture& {
    if (!fixture) fixture = std::make_unique<Fixture>();
    return *fixture;
  };

  run("A1", "BERT-L falconGPUs/localGPUs time ratio in [1.5, 2.5], under 1 s", a1);
  run("A2", "vision slowdown on hybridGPUs and falconGPUs below 10%", [&](Check& c) { a2(fx(), c); });
  run("A3", "falconGPUs traffic ratios 19x and 7x within 30%, absolutes within 35%", [&](Check& c) { a3(fx(), c); });
  run("A4", "BERT-L feasible batch 6 plain, 10 sharded on 8 x 16 GiB", [&](Check& c) { a4(fx(), c); });
  run("A5", "BERT-L FP16 speedup > 50% everywhere, > 70% on falconGPUs; DDP over DP > 80%",
      [&](Check& c) { a5(fx(), c); });
  run("P1", "composition engine accepts exactly the legal ownership states", p1);
  run("P2", "allreduce and DP sync closed forms over random draws", p2);
  run("P3", "telemetry totals equal crossing bytes x steps; slots sum to drawers", [&](Check& c) { p3(fx(), c); });
  run("P4", "config, calibration and persisted-state round trips", [&](Check& c) { p4(fx(), c); });
  run("TABLES", "benchmark and link-class rows surface unchanged through the API", table_fidelity);

  std::cout << (failed ? std::to_string(failed) + " criteria FAILED" : std::string("all criteria PASS")) << std::endl;
  return failed ? 1 : 0;
}
