#pragma once

// Multi-user control service. Request handling is independent of the HTTP
// transport so it can be driven directly; serve() binds it to httplib.
//
// Persistence: <state>/events.jsonl holds every event, in order, with enough
// detail to re-execute successful mutations; <state>/snapshot.json holds the
// composition as of some event. Startup restores the snapshot, replays the
// later mutations, and re-runs every logged simulation to rebuild counters.

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"

#include "cdi/calibration.hpp"
#include "cdi/composition.hpp"
#include "cdi/data.hpp"
#include "cdi/error.hpp"
#include "cdi/fabric.hpp"
#include "cdi/perf.hpp"
#include "cdi/telemetry.hpp"

namespace cdi {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Authorization

enum class Action { read, attach, detach, mode_change, apply_label, select_local, import, export_config, simulate,
                    export_events };

constexpr std::string_view to_string(Action a) {
  switch (a) {
    case Action::read: return "read";
    case Action::attach: return "attach";
    case Action::detach: return "detach";
    case Action::mode_change: return "mode-change";
    case Action::apply_label: return "apply";
    case Action::select_local: return "select-local";
    case Action::import: return "import";
    case Action::export_config: return "export";
    case Action::simulate: return "simulate";
    case Action::export_events: return "export";
  }
  return "?";
}

// A principal plus the hosts it may compose for. Empty means any host.
struct Identity {
  Principal principal;
  std::set<std::string> hosts;

  bool may_use(const std::string& host) const { return hosts.empty() || hosts.count(host) > 0; }
};

struct Subject {
  std::optional<std::string> host;        // host the action acts for
  std::optional<std::string> owner_user;  // current owner of the device, if any
};

enum class Decision { allow, deny };

// ADMIN may do anything. USER may read shared state, simulate, and change
// only what is or becomes theirs: attach a pooled device to a host in their
// scope, detach a device they own, pick local devices of their hosts.
// Changes that touch every tenant (drawer modes, named layouts, imports)
// and the event export stay with ADMIN.
inline Decision authorize(const Identity& who, Action action, const Subject& subject = {}) {
  if (who.principal.is_admin()) return Decision::allow;
  auto host_ok = [&] { return subject.host && who.may_use(*subject.host); };
  switch (action) {
    case Action::read:
    case Action::export_config:
    case Action::simulate: return Decision::allow;
    case Action::attach: return host_ok() && !subject.owner_user ? Decision::allow : Decision::deny;
    case Action::detach:
      return subject.owner_user && *subject.owner_user == who.principal.user ? Decision::allow : Decision::deny;
    case Action::select_local: return host_ok() ? Decision::allow : Decision::deny;
    case Action::mode_change:
    case Action::apply_label:
    case Action::import:
    case Action::export_events: return Decision::deny;
  }
  return Decision::deny;
}

// ---------------------------------------------------------------------------
// Configuration

struct ServiceConfig {
  std::string listen_host = "127.0.0.1";
  int listen_port = 8080;
  std::filesystem::path state_path;        // empty: keep state in memory only
  std::optional<std::filesystem::path> topology_path;  // default: shipped reference plant
  std::map<std::string, Identity> tokens;
};

inline void parse_listen(const std::string& s, ServiceConfig& cfg) {
  auto colon = s.rfind(':');
  if (colon == std::string::npos) fail(Errc::schema_error, "listen address must be host:port, got '" + s + "'");
  cfg.listen_host = s.substr(0, colon);
  try {
    cfg.listen_port = std::stoi(s.substr(colon + 1));
  } catch (const std::exception&) {
    fail(Errc::schema_error, "bad port in '" + s + "'");
  }
}

inline ServiceConfig service_config_from_json(const json& j) {
  ServiceConfig cfg;
  try {
    if (j.contains("listen")) parse_listen(j.at("listen").get<std::string>(), cfg);
    if (j.contains("state_path")) cfg.state_path = j.at("state_path").get<std::string>();
    if (j.contains("topology")) cfg.topology_path = j.at("topology").get<std::string>();
    const json tokens = j.value("tokens", json::object());
    for (const auto& [token, p] : tokens.items()) {
      Identity id;
      id.principal.user = p.at("user").get<std::string>();
      auto role = p.value("role", std::string("USER"));
      if (role != "ADMIN" && role != "USER") fail(Errc::schema_error, "unknown role '" + role + "'");
      id.principal.role = role == "ADMIN" ? Role::admin : Role::user;
      for (const auto& h : p.value("hosts", json::array())) id.hosts.insert(h.get<std::string>());
      cfg.tokens.emplace(token, std::move(id));
    }
  } catch (const json::exception& e) {
    fail(Errc::schema_error, std::string("service config: ") + e.what());
  }
  return cfg;
}

// CDI_LISTEN (host:port) and CDI_STATE_PATH override the file.
inline void apply_env_overrides(ServiceConfig& cfg) {
  if (const char* v = std::getenv("CDI_LISTEN"); v && *v) parse_listen(v, cfg);
  if (const char* v = std::getenv("CDI_STATE_PATH"); v && *v) cfg.state_path = v;
}

// ---------------------------------------------------------------------------
// Requests

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
  std::optional<std::string> token;
};

struct Response {
  int status = 200;
  json body = json::object();
  std::optional<std::string> text;  // set for CSV responses
};

inline int http_status(Errc e) {
  switch (e) {
    case Errc::schema_error:
    case Errc::capacity_exceeded:
    case Errc::duplicate_id:
    case Errc::dangling_reference: return 400;
    case Errc::forbidden: return 403;
    case Errc::unknown_label:
    case Errc::unknown_device:
    case Errc::unknown_run:
    case Errc::unknown_scope:
    case Errc::unknown_workload: return 404;
    case Errc::already_owned:
    case Errc::mode_conflict:
    case Errc::mode_capacity:
    case Errc::host_limit:
    case Errc::not_connected:
    case Errc::not_owned: return 409;
    default: return 422;
  }
}

inline Response error_response(int status, std::string_view code, const std::string& message) {
  return {status, {{"error", {{"code", code}, {"message", message}}}}, std::nullopt};
}

inline std::string utc_now() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class ControlService {
 public:
  explicit ControlService(ServiceConfig cfg, std::function<std::string()> clock = utc_now)
      : cfg_(std::move(cfg)), clock_(std::move(clock)) {
    auto reference = std::make_shared<const Topology>(build_reference_topology());
    workloads_ = calibrated_workloads(ReferenceConfigs(reference));
    json tdoc = cfg_.topology_path ? load_json_file(*cfg_.topology_path)
                                   : load_json_file(data_dir() / "topology" / "reference.json");
    load_state(tdoc);
  }

  std::uint64_t revision() const {
    std::shared_lock lock(mu_);
    return revision_;
  }
  std::shared_ptr<const Composition> composition() const {
    std::shared_lock lock(mu_);
    return composition_;
  }
  const Telemetry& telemetry() const { return *telemetry_; }
  const EventLog& events() const { return events_; }
  const std::vector<WorkloadSpec>& workloads() const { return workloads_; }
  const ServiceConfig& config() const { return cfg_; }

  Response handle(const Request& req) {
    try {
      return route(req);
    } catch (const Error& e) {
      return error_response(http_status(e.code()), to_string(e.code()), e.what());
    } catch (const json::exception& e) {
      return error_response(400, "SCHEMA_ERROR", e.what());
    }
  }

 private:
  // -- routing --------------------------------------------------------------

  Response route(const Request& req) {
    const auto& p = req.path;
    if (req.method == "GET" && p == "/v1/health")
      return {200, {{"status", "ok"}, {"version", kVersion}, {"revision", revision()}}, std::nullopt};

    const Identity* who = identify(req);
    if (!who) return error_response(401, "UNAUTHENTICATED", "missing or unknown bearer token");

    if (req.method == "GET") {
      if (p == "/v1/topology") return {200, topology_->to_document(), std::nullopt};
      if (p == "/v1/workloads") return get_workloads();
      if (p == "/v1/composition") return get_composition();
      if (p == "/v1/composition/export") return {200, export_config(*composition()), std::nullopt};
      if (p == "/v1/events") return get_events(req, *who);
      if (p == "/v1/telemetry/runs") return get_runs();
      const std::string prefix = "/v1/telemetry/runs/";
      if (p.rfind(prefix, 0) == 0) return get_run(req, p.substr(prefix.size()));
    } else if (req.method == "POST") {
      if (p == "/v1/composition") return mutate(req, *who);
      if (p == "/v1/composition/import") return import(req, *who);
      if (p == "/v1/simulate") return simulate(req, *who);
    }
    return error_response(404, "NOT_FOUND", req.method + " " + p);
  }

  const Identity* identify(const Request& req) const {
    if (!req.token) return nullptr;
    auto it = cfg_.tokens.find(*req.token);
    return it == cfg_.tokens.end() ? nullptr : &it->second;
  }

  // -- reads ----------------------------------------------------------------

  Response get_workloads() const {
    json arr = json::array();
    for (const auto& w : workloads_) arr.push_back(to_json(w));
    return {200, {{"workloads", arr}}, std::nullopt};
  }

  Response get_composition() const {
    std::shared_ptr<const Composition> c;
    std::uint64_t rev;
    {
      std::shared_lock lock(mu_);
      c = composition_;
      rev = revision_;
    }
    json v = json::array();
    for (const auto& x : validate(*c)) v.push_back({{"drawer", x.drawer}, {"rule", x.rule}, {"detail", x.detail}});
    json jobs = json::object();
    for (const auto& h : topology_->hosts()) jobs[h.id] = c->job_gpus(h.id);
    return {200, {{"revision", rev}, {"config", export_config(*c)}, {"violations", v}, {"job_gpus", jobs}},
            std::nullopt};
  }

  Response get_runs() const {
    json arr = json::array();
    for (const auto& id : telemetry_->runs()) arr.push_back({{"run", id}, {"clock_s", telemetry_->clock_s(id)}});
    return {200, {{"runs", arr}}, std::nullopt};
  }

  // /v1/telemetry/runs/<id>/ports  or  /v1/telemetry/runs/<id>?scope=...
  Response get_run(const Request& req, const std::string& rest) const {
    auto slash = rest.find('/');
    std::string run = rest.substr(0, slash);
    if (slash != std::string::npos) {
      if (rest.substr(slash) != "/ports") return error_response(404, "NOT_FOUND", req.path);
      auto rows = telemetry_->port_counters(run);
      if (want_csv(req)) return {200, json(), port_counters_csv(rows)};
      json arr = json::array();
      for (const auto& r : rows)
        arr.push_back({{"port", r.port},
                       {"ingress_bytes", r.ingress_bytes},
                       {"egress_bytes", r.egress_bytes},
                       {"error_count", r.error_count},
                       {"window_start_s", r.window_start_s},
                       {"window_end_s", r.window_end_s}});
      return {200, {{"run", run}, {"ports", arr}}, std::nullopt};
    }
    auto scope = req.query.find("scope");
    if (scope == req.query.end()) fail(Errc::unknown_scope, "query needs scope=port:<id>|drawer:<id>|slot:<drawer>#<n>");
    std::optional<Window> window;
    if (req.query.count("start") || req.query.count("end")) {
      double end = req.query.count("end") ? std::stod(req.query.at("end")) : telemetry_->clock_s(run);
      double start = req.query.count("start") ? std::stod(req.query.at("start")) : 0.0;
      window = Window{start, end};
    }
    return {200, to_json(telemetry_->query(run, parse_scope(scope->second), window)), std::nullopt};
  }

  static bool want_csv(const Request& req) {
    auto f = req.query.find("format");
    return f != req.query.end() && f->second == "csv";
  }

  // -- mutations ------------------------------------------------------------

  struct Outcome {
    std::vector<std::string> subjects;
    json detail = json::object();
  };

  // Runs `body` under the writer lock and logs exactly one event for it,
  // whatever the outcome.
  template <class F>
  Response logged(const Identity& who, std::string action, F&& body) {
    std::unique_lock lock(write_mu_);
    EventRecord e;
    e.actor = who.principal.user;
    e.action = std::move(action);
    e.timestamp = clock_();
    Response r;
    try {
      Outcome o;
      r = body(e.action, o, events_.size() + 1);
      e.subjects = std::move(o.subjects);
      e.detail = std::move(o.detail);
      e.outcome = r.status < 300 ? "ok" : r.body["error"]["code"].get<std::string>();
    } catch (const Error& err) {
      e.outcome = std::string(to_string(err.code()));
      r = error_response(http_status(err.code()), to_string(err.code()), err.what());
    } catch (const json::exception& err) {
      e.outcome = "SCHEMA_ERROR";
      r = error_response(400, "SCHEMA_ERROR", err.what());
    }
    auto stored = events_.append(std::move(e));
    persist(stored);
    if (r.status < 300) r.body["event"] = stored.seq;
    return r;
  }

  static Response denied(const Identity& who, std::string_view action) {
    return error_response(403, "FORBIDDEN", who.principal.user + " may not " + std::string(action) + " here");
  }

  Response mutate(const Request& req, const Identity& who) {
    json body = json::parse(req.body, nullptr, false);
    std::string op = body.is_object() ? body.value("op", std::string("invalid")) : std::string("invalid");
    std::string action = op == "mode" ? "mode-change" : op;
    return logged(who, action, [&](const std::string&, Outcome& o, std::uint64_t) -> Response {
      if (!body.is_object()) fail(Errc::schema_error, "body must be a JSON object");
      auto c = composition();
      Composition next = *c;
      const auto& p = who.principal;
      if (op == "attach") {
        auto host = body.at("host").get<std::string>(), device = body.at("device").get<std::string>();
        o.subjects = {host, device};
        auto owner = c->owner(device);
        if (authorize(who, Action::attach, {host, owner ? std::optional(owner->user) : std::nullopt}) ==
            Decision::deny)
          return denied(who, action);
        next = attach(*c, host, device, p);
        o.detail = {{"host", host}, {"device", device}, {"user", p.user}, {"role", to_string(p.role)}};
      } else if (op == "detach") {
        auto device = body.at("device").get<std::string>();
        o.subjects = {device};
        auto owner = c->owner(device);
        if (authorize(who, Action::detach, {std::nullopt, owner ? std::optional(owner->user) : std::nullopt}) ==
            Decision::deny)
          return denied(who, action);
        next = detach(*c, device, p);
        o.detail = {{"device", device}, {"user", p.user}, {"role", to_string(p.role)}};
      } else if (op == "mode") {
        auto drawer = body.at("drawer").get<std::string>();
        auto mode = parse_drawer_mode(body.at("mode").get<std::string>());
        o.subjects = {drawer};
        if (authorize(who, Action::mode_change) == Decision::deny) return denied(who, action);
        next = set_drawer_mode(*c, drawer, mode);
        o.detail = {{"drawer", drawer}, {"mode", to_string(mode)}};
      } else if (op == "apply") {
        auto label = body.at("label").get<std::string>();
        std::optional<std::string> host;
        if (body.contains("host")) host = body.at("host").get<std::string>();
        o.subjects = {label};
        if (authorize(who, Action::apply_label) == Decision::deny) return denied(who, action);
        next = apply_named_configuration(topology_, label, host, p);
        o.detail = {{"label", label}, {"user", p.user}};
        if (host) o.detail["host"] = *host;
      } else if (op == "select-local") {
        auto host = body.at("host").get<std::string>();
        auto devices = body.at("devices").get<std::set<std::string>>();
        o.subjects = {host};
        if (authorize(who, Action::select_local, {host, std::nullopt}) == Decision::deny)
          return denied(who, action);
        next = select_local(*c, host, devices);
        o.detail = {{"host", host}, {"devices", devices}};
      } else {
        fail(Errc::schema_error, "op must be attach, detach, mode, apply, or select-local");
      }
      return commit(std::move(next));
    });
  }

  Response import(const Request& req, const Identity& who) {
    return logged(who, "import", [&](const std::string& action, Outcome& o, std::uint64_t) -> Response {
      if (authorize(who, Action::import) == Decision::deny) return denied(who, action);
      auto doc = json::parse(req.body);
      auto next = import_config(topology_, doc);
      auto violations = validate(next);
      if (!violations.empty())
        fail(detail::rule_errc(violations.front().rule), "imported state is invalid: " + violations.front().detail);
      o.detail = {{"config", doc}};
      return commit(std::move(next));
    });
  }

  Response commit(Composition next) {
    std::unique_lock lock(mu_);
    composition_ = std::make_shared<const Composition>(std::move(next));
    ++revision_;
    return {200, {{"revision", revision_}, {"config", export_config(*composition_)}}, std::nullopt};
  }

  Response simulate(const Request& req, const Identity& who) {
    return logged(who, "simulate", [&](const std::string&, Outcome& o, std::uint64_t seq) -> Response {
      auto body = json::parse(req.body);
      json detail = body;
      if (!body.contains("composition") && body.value("config", std::string()) == "current") {
        detail.erase("config");
        detail["composition"] = export_config(*composition());
      }
      std::string run = "run-" + std::to_string(seq);
      detail["run"] = run;
      auto result = run_simulation(detail);
      o.subjects = {detail.at("workload").get<std::string>(), run};
      o.detail = detail;
      return {200, result, std::nullopt};
    });
  }

  // Shared by live requests and replay; `sim` must be fully resolved.
  json run_simulation(const json& sim) {
    const auto& w = find_workload(workloads_, sim.at("workload").get<std::string>());
    auto strategy = strategy_from_json(sim.value("strategy", json::object()));
    ModelOptions opt;
    if (sim.contains("host")) opt.host = sim.at("host").get<std::string>();
    if (sim.value("pipeline", std::string("overlapped")) == "sequential") opt.pipeline = Pipeline::sequential;
    std::optional<Composition> comp;
    std::string label;
    if (sim.contains("composition")) {
      comp = import_config(topology_, sim.at("composition"));
      label = "custom";
    } else {
      label = sim.at("config").get<std::string>();
      comp = apply_named_configuration(topology_, label, opt.host);
    }
    auto est = training_time(w, *comp, strategy, opt);
    auto run = sim.at("run").get<std::string>();
    telemetry_->register_run(run);
    telemetry_->record_step(run, est.step, *comp, est.steps_per_epoch * static_cast<std::uint64_t>(w.epochs));
    json out{{"run", run},
             {"workload", w.name},
             {"config", label},
             {"strategy", strategy.label()},
             {"estimate", to_json(est)}};
    try {
      auto local = apply_named_configuration(topology_, "localGPUs", opt.host);
      out["change_vs_localGPUs_pct"] = relative_change(est, training_time(w, local, strategy, opt));
    } catch (const Error&) {
      out["change_vs_localGPUs_pct"] = nullptr;
    }
    return out;
  }

  Response get_events(const Request& req, const Identity& who) {
    return logged(who, "export", [&](const std::string&, Outcome& o, std::uint64_t) -> Response {
      EventFilter f;
      if (auto it = req.query.find("action"); it != req.query.end()) f.action = it->second;
      if (auto it = req.query.find("actor"); it != req.query.end()) f.actor = it->second;
      if (auto it = req.query.find("after"); it != req.query.end()) f.after_seq = std::stoull(it->second);
      o.subjects = {"events"};
      if (authorize(who, Action::export_events) == Decision::deny) fail(Errc::forbidden, "event export is ADMIN-only");
      auto list = export_events(events_, f, who.principal);
      if (want_csv(req)) return {200, json(), events_csv(list)};
      json arr = json::array();
      for (const auto& e : list) arr.push_back(to_json(e));
      return {200, {{"events", arr}}, std::nullopt};
    });
  }

  // -- persistence ----------------------------------------------------------

  std::filesystem::path log_path() const { return cfg_.state_path / "events.jsonl"; }
  std::filesystem::path snapshot_path() const { return cfg_.state_path / "snapshot.json"; }

  void persist(const EventRecord& e) {
    if (cfg_.state_path.empty()) return;
    std::filesystem::create_directories(cfg_.state_path);
    {
      std::ofstream log(log_path(), std::ios::app | std::ios::binary);
      log << to_json(e).dump() << '\n';
      log.flush();
      if (!log) fail(Errc::state_corrupt, "cannot append to " + log_path().string());
    }
    json snap{{"schema", 1},
              {"revision", revision()},
              {"last_seq", e.seq},
              {"topology", topology_->to_document()},
              {"composition", export_config(*composition())}};
    auto tmp = snapshot_path();
    tmp += ".tmp";
    write_text_file(tmp, snap.dump(2) + "\n");
    std::filesystem::rename(tmp, snapshot_path());
  }

  void load_state(const json& seed_topology) {
    json snap;
    bool have_snapshot = !cfg_.state_path.empty() && std::filesystem::exists(snapshot_path());
    if (have_snapshot) {
      try {
        snap = json::parse(read_text_file(snapshot_path()));
      } catch (const json::exception& e) {
        fail(Errc::state_corrupt, snapshot_path().string() + ": " + e.what());
      }
    }
    try {
      topology_ = std::make_shared<const Topology>(build_topology(have_snapshot ? snap.at("topology") : seed_topology));
    } catch (const json::exception& e) {
      fail(Errc::state_corrupt, std::string("snapshot topology: ") + e.what());
    }
    telemetry_ = std::make_unique<Telemetry>(topology_);
    composition_ = std::make_shared<const Composition>(topology_);
    std::uint64_t last_seq = 0;
    if (have_snapshot) {
      try {
        composition_ = std::make_shared<const Composition>(import_config(topology_, snap.at("composition")));
        revision_ = snap.at("revision").get<std::uint64_t>();
        last_seq = snap.at("last_seq").get<std::uint64_t>();
      } catch (const json::exception& e) {
        fail(Errc::state_corrupt, std::string("snapshot: ") + e.what());
      } catch (const Error& e) {
        fail(Errc::state_corrupt, std::string("snapshot: ") + e.what());
      }
    }
    if (cfg_.state_path.empty() || !std::filesystem::exists(log_path())) {
      if (last_seq != 0) fail(Errc::state_corrupt, "snapshot refers to events but the log is missing");
      return;
    }
    std::ifstream in(log_path(), std::ios::binary);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        fail(Errc::state_corrupt, log_path().string() + ": " + e.what());
      }
      auto e = event_from_json(j);
      events_.restore(e);
      if (e.outcome != "ok") continue;
      try {
        if (e.action == "simulate") run_simulation(e.detail);
        else if (e.seq > last_seq) replay(e);
      } catch (const Error& err) {
        fail(Errc::state_corrupt, "event " + std::to_string(e.seq) + " does not replay: " + err.what());
      }
    }
    if (events_.size() < last_seq) fail(Errc::state_corrupt, "log is shorter than the snapshot");
  }

  void replay(const EventRecord& e) {
    const auto& d = e.detail;
    auto principal = [&] {
      return Principal{d.at("user").get<std::string>(),
                       d.value("role", std::string("USER")) == "ADMIN" ? Role::admin : Role::user};
    };
    const auto& c = *composition_;
    if (e.action == "attach")
      commit(attach(c, d.at("host").get<std::string>(), d.at("device").get<std::string>(), principal()));
    else if (e.action == "detach")
      commit(detach(c, d.at("device").get<std::string>(), principal()));
    else if (e.action == "mode-change")
      commit(set_drawer_mode(c, d.at("drawer").get<std::string>(), parse_drawer_mode(d.at("mode").get<std::string>())));
    else if (e.action == "apply")
      commit(apply_named_configuration(
          topology_, d.at("label").get<std::string>(),
          d.contains("host") ? std::optional(d.at("host").get<std::string>()) : std::nullopt,
          Principal{d.at("user").get<std::string>(), Role::admin}));
    else if (e.action == "select-local")
      commit(select_local(c, d.at("host").get<std::string>(), d.at("devices").get<std::set<std::string>>()));
    else if (e.action == "import")
      commit(import_config(topology_, d.at("config")));
  }

  ServiceConfig cfg_;
  std::function<std::string()> clock_;
  std::shared_ptr<const Topology> topology_;
  std::vector<WorkloadSpec> workloads_;
  std::unique_ptr<Telemetry> telemetry_;
  EventLog events_;

  mutable std::shared_mutex mu_;  // guards composition_ and revision_
  std::mutex write_mu_;           // one mutation at a time
  std::shared_ptr<const Composition> composition_;
  std::uint64_t revision_ = 0;
};

// ---------------------------------------------------------------------------
// HTTP binding

inline Request from_httplib(const httplib::Request& r) {
  Request req{r.method, r.path, {}, r.body, std::nullopt};
  for (const auto& [k, v] : r.params) req.query[k] = v;
  auto auth = r.get_header_value("Authorization");
  const std::string bearer = "Bearer ";
  if (auth.rfind(bearer, 0) == 0) req.token = auth.substr(bearer.size());
  return req;
}

class HttpServer {
 public:
  explicit HttpServer(ControlService& svc) : svc_(svc) {
    auto handler = [this](const httplib::Request& r, httplib::Response& res) {
      auto out = svc_.handle(from_httplib(r));
      res.status = out.status;
      if (out.text) res.set_content(*out.text, "text/csv");
      else res.set_content(out.body.dump(), "application/json");
    };
    // SO_REUSEADDR only: a second instance on the same port must fail to bind.
    server_.set_socket_options([](auto sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
    server_.Get(R"(/v1/.*)", handler);
    server_.Post(R"(/v1/.*)", handler);
  }

  // Binds without serving yet. Port 0 picks a free port.
  int bind(const std::string& host, int port) {
    int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) fail(Errc::bind_failure, "cannot listen on " + host + ":" + std::to_string(port));
    return bound;
  }

  void serve() { server_.listen_after_bind(); }

  void start() {
    thread_ = std::thread([this] { serve(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  ~HttpServer() { stop(); }

 private:
  ControlService& svc_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace cdi
