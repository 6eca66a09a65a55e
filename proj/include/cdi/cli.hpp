#pragma once

// Operator command line. run_cli() is the whole program; tools/cdi.cpp
// only forwards argv and the standard streams.
//
// Exit codes: 0 success, 1 usage, 2 validation or model error,
// 3 anchor validation failed.

#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cdi/calibration.hpp"
#include "cdi/composition.hpp"
#include "cdi/data.hpp"
#include "cdi/error.hpp"
#include "cdi/fabric.hpp"
#include "cdi/perf.hpp"
#include "cdi/service.hpp"

namespace cdi {

namespace cli {

struct Options {
  std::string topology;
  std::string config = "composition.json";
  std::string label;
  std::string host;
  std::string device;
  std::string drawer;
  std::string mode;
  std::string user = "admin";
  std::string workload;
  std::string workloads = "all";
  std::string configs = "localGPUs,hybridGPUs,falconGPUs";
  std::string strategy = "ddp";
  std::string precision = "fp16";
  bool sharded = false;
  std::string pipeline = "overlapped";
  std::string out;
  std::string anchors;
  std::string baselines;
  std::string input;
  bool synthesize = false;
  std::string service_config;
  std::string listen;
  std::string state;
};

inline std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

class Runner {
 public:
  Runner(Options o, std::ostream& out, std::ostream& err) : o_(std::move(o)), out_(out), err_(err) {}

  std::shared_ptr<const Topology> topology() const {
    if (o_.topology.empty()) return std::make_shared<const Topology>(build_topology(load_json_file(data_dir() / "topology" / "reference.json")));
    return std::make_shared<const Topology>(build_topology(load_json_file(o_.topology)));
  }

  Strategy strategy() const {
    Strategy s;
    s.parallelism = parse_parallelism(o_.strategy);
    s.precision = parse_precision(o_.precision);
    s.sharded = o_.sharded;
    return s;
  }

  ModelOptions model_options() const {
    ModelOptions m;
    if (!o_.host.empty()) m.host = o_.host;
    if (o_.pipeline == "sequential") m.pipeline = Pipeline::sequential;
    else if (o_.pipeline != "overlapped") fail(Errc::schema_error, "pipeline must be overlapped or sequential");
    return m;
  }

  std::vector<WorkloadSpec> workloads() const {
    auto reference = std::make_shared<const Topology>(build_reference_topology());
    auto baselines = o_.baselines.empty() ? load_baselines() : load_baselines(o_.baselines);
    return calibrated_workloads(ReferenceConfigs(reference), load_workloads(), baselines);
  }

  // Writes to --out when given, else stdout.
  void emit(const std::string& text) const {
    if (o_.out.empty()) out_ << text;
    else write_text_file(o_.out, text);
  }

  Composition load_state(const std::shared_ptr<const Topology>& t) const {
    if (!std::filesystem::exists(o_.config)) return Composition(t);
    return import_config(t, load_json_file(o_.config));
  }

  void save_state(const Composition& c) const { write_text_file(o_.config, export_config_text(c)); }

  // -- topology ---------------------------------------------------------------

  int topology_build() const {
    auto t = topology();
    emit(t->to_document().dump(2) + "\n");
    return 0;
  }

  int topology_show() const {
    auto t = topology();
    std::ostringstream s;
    for (const auto& h : t->hosts()) {
      s << "host " << h.id << "  cores=" << h.cores() << "  local GPUs=" << h.local_gpus.size();
      if (h.local_nvme) s << "  local NVMe=" << *h.local_nvme;
      s << "\n";
    }
    for (const auto& d : t->drawers()) {
      s << "drawer " << d.id << "  ports:";
      for (const auto& p : d.attachments) s << ' ' << p;
      s << "\n";
      for (std::size_t i = 0; i < d.slots.size(); ++i)
        if (d.slots[i]) s << "  slot " << i << "  " << *d.slots[i] << "\n";
    }
    for (auto id : kAllLinkClasses) {
      const auto& lc = t->link_classes().at(id);
      s << "link " << to_string(id) << "  " << to_string(lc.protocol) << "  " << format_number(lc.bandwidth_gbps)
        << " GB/s  " << format_number(lc.latency_us) << " us\n";
    }
    emit(s.str());
    return 0;
  }

  // -- compose ----------------------------------------------------------------

  int compose_apply() const {
    auto t = topology();
    std::optional<std::string> host;
    if (!o_.host.empty()) host = o_.host;
    auto c = apply_named_configuration(t, o_.label, host, {o_.user, Role::admin});
    save_state(c);
    out_ << o_.label << ": " << describe_configuration(o_.label) << " -> " << o_.config << "\n";
    return 0;
  }

  int compose_attach() const {
    auto t = topology();
    save_state(attach(load_state(t), o_.host, o_.device, {o_.user, Role::admin}));
    out_ << o_.device << " attached to " << o_.host << "\n";
    return 0;
  }

  int compose_detach() const {
    auto t = topology();
    save_state(detach(load_state(t), o_.device, Principal::admin(o_.user)));
    out_ << o_.device << " returned to the pool\n";
    return 0;
  }

  int compose_mode() const {
    auto t = topology();
    save_state(set_drawer_mode(load_state(t), o_.drawer, parse_drawer_mode(o_.mode)));
    out_ << o_.drawer << " now " << o_.mode << "\n";
    return 0;
  }

  int compose_validate() const {
    auto t = topology();
    auto v = validate(load_state(t));
    for (const auto& x : v) out_ << x.rule << "  " << (x.drawer.empty() ? "-" : x.drawer) << "  " << x.detail << "\n";
    if (!v.empty()) return 2;
    out_ << "valid\n";
    return 0;
  }

  int compose_export() const {
    auto t = topology();
    emit(export_config_text(load_state(t)));
    return 0;
  }

  int compose_import() const {
    auto t = topology();
    auto c = import_config(t, load_json_file(o_.input));
    auto v = validate(c);
    for (const auto& x : v) err_ << x.rule << "  " << x.detail << "\n";
    if (!v.empty()) return 2;
    save_state(c);
    out_ << "imported " << o_.input << " -> " << o_.config << "\n";
    return 0;
  }

  // -- model ------------------------------------------------------------------

  int simulate() const {
    auto t = topology();
    auto ws = workloads();
    const auto& w = find_workload(ws, o_.workload);
    auto opt = model_options();
    auto c = o_.label.empty() ? load_state(t) : apply_named_configuration(t, o_.label, opt.host);
    auto est = training_time(w, c, strategy(), opt);
    json j{{"workload", w.name},
           {"config", o_.label.empty() ? o_.config : o_.label},
           {"strategy", strategy().label()},
           {"estimate", to_json(est)}};
    emit(j.dump(2) + "\n");
    return 0;
  }

  int sweep() const {
    auto t = topology();
    auto all = workloads();
    std::vector<WorkloadSpec> ws;
    if (o_.workloads == "all") ws = all;
    else
      for (const auto& n : split(o_.workloads)) ws.push_back(find_workload(all, n));
    auto opt = model_options();
    std::vector<std::pair<std::string, Composition>> configs;
    for (const auto& label : split(o_.configs))
      configs.emplace_back(label, apply_named_configuration(t, label, opt.host));
    emit(sweep_csv(cdi::sweep(ws, configs, {strategy()}, opt)));
    return 0;
  }

  int calibrate() const {
    auto reference = std::make_shared<const Topology>(build_reference_topology());
    ReferenceConfigs cfg(reference);
    auto baselines = o_.baselines.empty() ? load_baselines() : load_baselines(o_.baselines);
    if (o_.synthesize) {
      emit(baselines_to_json(synthesize_baselines(baselines, cfg, load_workloads())).dump(2) + "\n");
      return 0;
    }
    json arr = json::array();
    for (const auto& w : load_workloads()) {
      auto r = cdi::calibrate(w, baselines, cfg.at("localGPUs"));
      json c = json::object();
      for (const auto& [p, s] : r.compute_s) c[std::string(to_string(p))] = s;
      arr.push_back({{"workload", r.workload},
                     {"compute_s", c},
                     {"activation_bytes_per_sample", r.activation_bytes_per_sample},
                     {"reserve_bytes", r.memory_reserve_bytes}});
    }
    emit(json{{"calibration", arr}}.dump(2) + "\n");
    return 0;
  }

  int validate_anchors() const {
    auto reference = std::make_shared<const Topology>(build_reference_topology());
    ReferenceConfigs cfg(reference);
    auto anchors = o_.anchors.empty() ? load_anchors() : load_anchors(o_.anchors);
    auto report = validate_against_reference(anchors, collect_estimates(anchors, workloads(), cfg));
    out_ << report_text(report);
    if (!o_.out.empty()) write_text_file(o_.out, report_csv(report));
    return report.pass ? 0 : 3;
  }

  int serve() const {
    ServiceConfig cfg = o_.service_config.empty() ? ServiceConfig{} : service_config_from_json(load_json_file(o_.service_config));
    if (!o_.topology.empty()) cfg.topology_path = o_.topology;
    apply_env_overrides(cfg);
    if (!o_.listen.empty()) parse_listen(o_.listen, cfg);
    if (!o_.state.empty()) cfg.state_path = o_.state;
    ControlService svc(cfg);
    HttpServer http(svc);
    int port = http.bind(cfg.listen_host, cfg.listen_port);
    out_ << "listening on " << cfg.listen_host << ":" << port << std::endl;
    http.serve();
    return 0;
  }

 private:
  Options o_;
  std::ostream& out_;
  std::ostream& err_;
};

}  // namespace cli

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  cli::Options o;
  CLI::App app{"Composable infrastructure twin: topology, composition, performance model, telemetry"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--topology", o.topology, "topology document (default: shipped reference plant)");
  app.add_option("--config", o.config, "composition state file")->capture_default_str();
  app.add_option("--out", o.out, "write output here instead of stdout");

  auto model_flags = [&](CLI::App* s) {
    s->add_option("--strategy", o.strategy, "dp | ddp")->capture_default_str();
    s->add_option("--precision", o.precision, "fp32 | fp16")->capture_default_str();
    s->add_flag("--sharded", o.sharded, "shard gradients and optimizer state");
    s->add_option("--pipeline", o.pipeline, "overlapped | sequential")->capture_default_str();
    s->add_option("--host", o.host, "host running the job");
    s->add_option("--baselines", o.baselines, "baseline file used to calibrate workloads");
  };

  std::function<int(const cli::Runner&)> action;
  auto on = [&](CLI::App* s, int (cli::Runner::*fn)() const) {
    s->callback([&action, fn] { action = [fn](const cli::Runner& r) { return (r.*fn)(); }; });
  };

  auto* topo = app.add_subcommand("topology", "build or inspect a topology")->require_subcommand(1);
  on(topo->add_subcommand("build", "validate a topology and print its normalized document"), &cli::Runner::topology_build);
  on(topo->add_subcommand("show", "summarize hosts, drawers, slots, and link classes"), &cli::Runner::topology_show);

  auto* compose = app.add_subcommand("compose", "edit the composition state file")->require_subcommand(1);
  auto* apply = compose->add_subcommand("apply", "replace the state with a named configuration");
  apply->add_option("--label", o.label, "localGPUs | hybridGPUs | falconGPUs | localNVMe | falconNVMe")->required();
  apply->add_option("--host", o.host, "host to configure (default: first host)");
  apply->add_option("--user", o.user, "recorded owner")->capture_default_str();
  on(apply, &cli::Runner::compose_apply);
  auto* att = compose->add_subcommand("attach", "attach a pooled device to a host");
  att->add_option("--host", o.host)->required();
  att->add_option("--device", o.device)->required();
  att->add_option("--user", o.user, "recorded owner")->capture_default_str();
  on(att, &cli::Runner::compose_attach);
  auto* det = compose->add_subcommand("detach", "return a device to the pool");
  det->add_option("--device", o.device)->required();
  det->add_option("--user", o.user)->capture_default_str();
  on(det, &cli::Runner::compose_detach);
  auto* mode = compose->add_subcommand("mode", "set a drawer's sharing mode");
  mode->add_option("--drawer", o.drawer)->required();
  mode->add_option("--mode", o.mode, "STANDARD_1HOST | STANDARD_2HOST | ADVANCED")->required();
  on(mode, &cli::Runner::compose_mode);
  on(compose->add_subcommand("validate", "check the state against drawer mode rules"), &cli::Runner::compose_validate);
  on(compose->add_subcommand("export", "print the canonical state document"), &cli::Runner::compose_export);
  auto* imp = compose->add_subcommand("import", "validate a config document and make it the state");
  imp->add_option("file", o.input)->required();
  on(imp, &cli::Runner::compose_import);

  auto* sim = app.add_subcommand("simulate", "estimate training time for one workload");
  sim->add_option("--workload", o.workload)->required();
  sim->add_option("--label", o.label, "named configuration (default: the state file)");
  model_flags(sim);
  on(sim, &cli::Runner::simulate);

  auto* sw = app.add_subcommand("sweep", "CSV of workloads x configurations");
  sw->add_option("--workloads", o.workloads, "comma list or all")->capture_default_str();
  sw->add_option("--configs", o.configs, "comma list of configuration labels")->capture_default_str();
  model_flags(sw);
  on(sw, &cli::Runner::sweep);

  auto* cal = app.add_subcommand("calibrate", "fit compute times from baselines");
  cal->add_option("--baselines", o.baselines, "baseline file");
  cal->add_flag("--synthesize", o.synthesize, "regenerate the synthetic baselines from their targets");
  on(cal, &cli::Runner::calibrate);

  auto* va = app.add_subcommand("validate-anchors", "compare the model with the reference anchors");
  va->add_option("--anchors", o.anchors, "anchor file");
  va->add_option("--baselines", o.baselines, "baseline file");
  on(va, &cli::Runner::validate_anchors);

  auto* srv = app.add_subcommand("serve", "run the HTTP control service");
  srv->add_option("--service-config", o.service_config, "service config (listen, state_path, tokens)");
  srv->add_option("--listen", o.listen, "host:port");
  srv->add_option("--state", o.state, "state directory");
  on(srv, &cli::Runner::serve);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }
  if (!action) {
    err << app.help();
    return 1;
  }
  try {
    return action(cli::Runner(o, out, err));
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace cdi
