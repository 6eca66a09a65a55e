#pragma once

// Simulated management-plane counters and the event log.
//
// Every run has its own simulated clock: a recorded step advances it by the
// step's modeled duration, so queries are deterministic and a window over
// the whole run reproduces the model's mean traffic.

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include "cdi/composition.hpp"
#include "cdi/error.hpp"
#include "cdi/fabric.hpp"
#include "cdi/perf.hpp"

namespace cdi {

struct PortCounters {
  std::string port;
  double ingress_bytes = 0;
  double egress_bytes = 0;
  std::uint64_t error_count = 0;
  double window_start_s = 0;
  double window_end_s = 0;
};

enum class ScopeKind { port, drawer, slot };

struct Scope {
  ScopeKind kind;
  std::string id;  // port id, drawer id, or "<drawer>#<slot>"
};

// "port:falcon0/H1", "drawer:falcon0/d1", "slot:falcon0/d1#3"
inline Scope parse_scope(std::string_view s) {
  auto colon = s.find(':');
  if (colon == std::string_view::npos) fail(Errc::unknown_scope, "scope must be kind:id, got '" + std::string(s) + "'");
  auto kind = s.substr(0, colon);
  std::string id(s.substr(colon + 1));
  if (kind == "port") return {ScopeKind::port, id};
  if (kind == "drawer") return {ScopeKind::drawer, id};
  if (kind == "slot") return {ScopeKind::slot, id};
  fail(Errc::unknown_scope, "unknown scope kind '" + std::string(kind) + "'");
}

inline std::string slot_scope_id(const SlotRef& s) { return s.drawer + "#" + std::to_string(s.slot); }

struct Window {
  double start_s;
  double end_s;
};

struct ScopeAggregate {
  std::string scope;
  Window window{0, 0};
  double ingress_bytes = 0;
  double egress_bytes = 0;
  double total_bytes = 0;
  double mean_gbps = 0;
  std::uint64_t error_count = 0;
};

class Telemetry {
 public:
  explicit Telemetry(std::shared_ptr<const Topology> topology) : topology_(std::move(topology)) {}

  const Topology& topology() const { return *topology_; }

  void register_run(const std::string& run_id) {
    std::unique_lock lock(mu_);
    runs_.try_emplace(run_id, std::make_unique<Run>());
  }

  bool has_run(const std::string& run_id) const {
    std::shared_lock lock(mu_);
    return runs_.count(run_id) > 0;
  }

  std::vector<std::string> runs() const {
    std::shared_lock lock(mu_);
    std::vector<std::string> out;
    for (const auto& [id, r] : runs_) out.push_back(id);
    return out;
  }

  // Books `repeat` identical steps. The composition is the one the step was
  // modeled on; every crossing must name a port and a pooled device in it.
  void record_step(const std::string& run_id, const StepBreakdown& step, const Composition& c,
                   std::uint64_t repeat = 1) {
    auto& run = at(run_id);
    Sample sample;
    for (const auto& pt : step.port_traffic) {
      const auto& dev = c.topology().device(pt.device);
      if (!dev.location || !c.topology().find_port(pt.port))
        fail(Errc::unknown_scope, "crossing at " + pt.port + " does not resolve to a drawer slot");
      Bytes& port = sample.ports[pt.port];
      Bytes& drawer = sample.drawers[pt.drawer];
      Bytes& slot = sample.slots[slot_scope_id(*dev.location)];
      for (Bytes* b : {&port, &drawer, &slot}) (pt.direction == Direction::ingress ? b->in : b->out) += pt.bytes;
    }
    std::lock_guard lock(run.mu);
    sample.start_s = run.clock_s;
    for (std::uint64_t i = 0; i < repeat; ++i) run.clock_s += step.total_s;
    sample.end_s = run.clock_s;
    sample.repeat = repeat;
    run.samples.push_back(std::move(sample));
  }

  // Error counts are fixtures: nothing in the model produces them.
  void inject_errors(const std::string& run_id, const std::string& port, std::uint64_t count) {
    if (!topology_->find_port(port)) fail(Errc::unknown_scope, "unknown port '" + port + "'");
    auto& run = at(run_id);
    std::lock_guard lock(run.mu);
    run.errors[port] += count;
  }

  double clock_s(const std::string& run_id) const {
    auto& run = at(run_id);
    std::lock_guard lock(run.mu);
    return run.clock_s;
  }

  // Steps wholly inside the window count in full; a step straddling an edge
  // contributes the overlapped fraction of its bytes.
  ScopeAggregate query(const std::string& run_id, const Scope& scope, std::optional<Window> window = {}) const {
    check_scope(scope);
    auto& run = at(run_id);
    std::lock_guard lock(run.mu);
    Window w = window.value_or(Window{0, run.clock_s});
    ScopeAggregate agg;
    agg.scope = scope_name(scope);
    agg.window = w;
    for (const auto& s : run.samples) {
      double len = s.end_s - s.start_s;
      double lo = std::max(s.start_s, w.start_s), hi = std::min(s.end_s, w.end_s);
      double frac;
      if (s.start_s >= w.start_s && s.end_s <= w.end_s) frac = 1.0;
      else if (hi > lo && len > 0) frac = (hi - lo) / len;
      else continue;
      const auto& bucket = scope.kind == ScopeKind::port     ? s.ports
                           : scope.kind == ScopeKind::drawer ? s.drawers
                                                             : s.slots;
      auto it = bucket.find(scope.id);
      if (it == bucket.end()) continue;
      agg.ingress_bytes += it->second.in * static_cast<double>(s.repeat) * frac;
      agg.egress_bytes += it->second.out * static_cast<double>(s.repeat) * frac;
    }
    agg.total_bytes = agg.ingress_bytes + agg.egress_bytes;
    double len = w.end_s - w.start_s;
    agg.mean_gbps = len > 0 ? agg.total_bytes / len / 1e9 : 0.0;
    if (scope.kind == ScopeKind::port)
      if (auto it = run.errors.find(scope.id); it != run.errors.end()) agg.error_count = it->second;
    return agg;
  }

  // Whole-run counters for every chassis port, in topology order.
  std::vector<PortCounters> port_counters(const std::string& run_id) const {
    std::vector<PortCounters> out;
    for (const auto& p : topology_->ports()) {
      auto a = query(run_id, {ScopeKind::port, p.id});
      out.push_back({p.id, a.ingress_bytes, a.egress_bytes, a.error_count, a.window.start_s, a.window.end_s});
    }
    return out;
  }

  // Slot scopes with any recorded traffic in a drawer.
  std::vector<std::string> slots_of(const std::string& run_id, const std::string& drawer) const {
    auto& run = at(run_id);
    std::lock_guard lock(run.mu);
    std::set<std::string> ids;
    for (const auto& s : run.samples)
      for (const auto& [id, b] : s.slots)
        if (id.rfind(drawer + "#", 0) == 0) ids.insert(id);
    return {ids.begin(), ids.end()};
  }

 private:
  struct Bytes {
    double in = 0, out = 0;
  };
  struct Sample {
    double start_s = 0, end_s = 0;
    std::uint64_t repeat = 1;
    std::map<std::string, Bytes> ports, drawers, slots;
  };
  struct Run {
    mutable std::mutex mu;
    double clock_s = 0;
    std::vector<Sample> samples;
    std::map<std::string, std::uint64_t> errors;
  };

  Run& at(const std::string& run_id) const {
    std::shared_lock lock(mu_);
    auto it = runs_.find(run_id);
    if (it == runs_.end()) fail(Errc::unknown_run, "unknown run '" + run_id + "'");
    return *it->second;
  }

  void check_scope(const Scope& s) const {
    bool ok = false;
    switch (s.kind) {
      case ScopeKind::port: ok = topology_->find_port(s.id) != nullptr; break;
      case ScopeKind::drawer: ok = topology_->find_drawer(s.id) != nullptr; break;
      case ScopeKind::slot: {
        auto hash = s.id.rfind('#');
        if (hash == std::string::npos || !topology_->find_drawer(s.id.substr(0, hash))) break;
        try {
          std::size_t used = 0;
          auto idx = std::stoul(s.id.substr(hash + 1), &used);
          ok = used == s.id.size() - hash - 1 && idx < kSlotsPerDrawer;
        } catch (const std::exception&) {
        }
        break;
      }
    }
    if (!ok) fail(Errc::unknown_scope, "unknown scope '" + scope_name(s) + "'");
  }

  static std::string scope_name(const Scope& s) {
    switch (s.kind) {
      case ScopeKind::port: return "port:" + s.id;
      case ScopeKind::drawer: return "drawer:" + s.id;
      case ScopeKind::slot: return "slot:" + s.id;
    }
    return s.id;
  }

  std::shared_ptr<const Topology> topology_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::unique_ptr<Run>> runs_;
};

inline std::string port_counters_csv(const std::vector<PortCounters>& rows) {
  std::ostringstream out;
  out << "port,window_start_s,window_end_s,ingress_bytes,egress_bytes,errors\n";
  for (const auto& r : rows)
    out << r.port << ',' << format_number(r.window_start_s) << ',' << format_number(r.window_end_s) << ','
        << format_number(r.ingress_bytes) << ',' << format_number(r.egress_bytes) << ',' << r.error_count << '\n';
  return out.str();
}

inline json to_json(const ScopeAggregate& a) {
  return {{"scope", a.scope},
          {"window_start_s", a.window.start_s},
          {"window_end_s", a.window.end_s},
          {"ingress_bytes", a.ingress_bytes},
          {"egress_bytes", a.egress_bytes},
          {"total_bytes", a.total_bytes},
          {"mean_GBps", a.mean_gbps},
          {"error_count", a.error_count}};
}

// ---------------------------------------------------------------------------
// Event log

struct EventRecord {
  std::uint64_t seq = 0;
  std::string timestamp;  // ISO-8601 UTC, supplied by the caller
  std::string actor;
  std::string action;     // attach | detach | mode-change | apply | import | select-local | simulate | export
  std::vector<std::string> subjects;
  std::string outcome;    // "ok" or an error code name
  json detail = json::object();
};

struct EventFilter {
  std::optional<std::string> action;
  std::optional<std::string> actor;
  std::uint64_t after_seq = 0;
};

inline json to_json(const EventRecord& e) {
  return {{"seq", e.seq},         {"timestamp", e.timestamp}, {"actor", e.actor},  {"action", e.action},
          {"subjects", e.subjects}, {"outcome", e.outcome},     {"detail", e.detail}};
}

inline EventRecord event_from_json(const json& j) {
  try {
    return {j.at("seq").get<std::uint64_t>(),
            j.at("timestamp").get<std::string>(),
            j.at("actor").get<std::string>(),
            j.at("action").get<std::string>(),
            j.at("subjects").get<std::vector<std::string>>(),
            j.at("outcome").get<std::string>(),
            j.value("detail", json::object())};
  } catch (const json::exception& e) {
    fail(Errc::state_corrupt, std::string("event record: ") + e.what());
  }
}

class EventLog {
 public:
  // Assigns the next sequence number and returns the stored record.
  EventRecord append(EventRecord e) {
    std::lock_guard lock(mu_);
    e.seq = records_.size() + 1;
    records_.push_back(e);
    return e;
  }

  // Restores a persisted record; sequence numbers must continue the log.
  void restore(const EventRecord& e) {
    std::lock_guard lock(mu_);
    if (e.seq != records_.size() + 1)
      fail(Errc::state_corrupt, "event " + std::to_string(e.seq) + " does not follow " +
                                    std::to_string(records_.size()));
    records_.push_back(e);
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return records_.size();
  }

  std::vector<EventRecord> select(const EventFilter& f) const {
    std::lock_guard lock(mu_);
    std::vector<EventRecord> out;
    for (const auto& e : records_) {
      if (e.seq <= f.after_seq) continue;
      if (f.action && e.action != *f.action) continue;
      if (f.actor && e.actor != *f.actor) continue;
      out.push_back(e);
    }
    return out;
  }

 private:
  mutable std::mutex mu_;
  std::vector<EventRecord> records_;
};

// Event export is an administrator feature.
inline std::vector<EventRecord> export_events(const EventLog& log, const EventFilter& f, const Principal& actor) {
  if (!actor.is_admin()) fail(Errc::forbidden, actor.user + " may not export events");
  return log.select(f);
}

inline std::string events_csv(const std::vector<EventRecord>& events) {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) {
      if (ch == '"') q += '"';
      q += ch;
    }
    return q + "\"";
  };
  std::ostringstream out;
  out << "seq,timestamp,actor,action,subjects,outcome\n";
  for (const auto& e : events) {
    std::string subjects;
    for (const auto& s : e.subjects) subjects += (subjects.empty() ? "" : " ") + s;
    out << e.seq << ',' << quote(e.timestamp) << ',' << quote(e.actor) << ',' << quote(e.action) << ','
        << quote(subjects) << ',' << quote(e.outcome) << '\n';
  }
  return out.str();
}

}  // namespace cdi
