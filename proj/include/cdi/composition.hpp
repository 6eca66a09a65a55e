#pragma once

// Device ownership state machine. A Composition is a value: every operation
// returns a new state and leaves its input untouched, so a rejected
// mutation can never leave a half-applied change behind.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cdi/error.hpp"
#include "cdi/fabric.hpp"

namespace cdi {

enum class DrawerMode { standard_1host, standard_2host, advanced };

constexpr std::string_view to_string(DrawerMode m) {
  switch (m) {
    case DrawerMode::standard_1host: return "STANDARD_1HOST";
    case DrawerMode::standard_2host: return "STANDARD_2HOST";
    case DrawerMode::advanced: return "ADVANCED";
  }
  return "?";
}

inline DrawerMode parse_drawer_mode(std::string_view s) {
  for (auto m : {DrawerMode::standard_1host, DrawerMode::standard_2host, DrawerMode::advanced})
    if (to_string(m) == s) return m;
  fail(Errc::schema_error, "unknown drawer mode '" + std::string(s) + "'");
}

enum class Role { admin, user };

constexpr std::string_view to_string(Role r) { return r == Role::admin ? "ADMIN" : "USER"; }

struct Principal {
  std::string user;
  Role role = Role::user;

  bool is_admin() const { return role == Role::admin; }
  static Principal admin(std::string name = "admin") { return {std::move(name), Role::admin}; }
};

struct Ownership {
  std::string host;
  std::string user;
  bool operator==(const Ownership&) const = default;
};

struct Violation {
  std::string drawer;  // empty for violations not tied to a drawer
  std::string rule;    // error-code name of the broken rule
  std::string detail;
};

inline constexpr std::size_t kAdvancedHostLimit = 3;
inline constexpr std::size_t kHalfDrawer = kSlotsPerDrawer / 2;

class Composition {
 public:
  // Fresh state: every drawer ADVANCED, nothing owned, every host using its
  // local GPUs and reading from base storage.
  explicit Composition(std::shared_ptr<const Topology> topology) : topology_(std::move(topology)) {
    for (const auto& d : topology_->drawers()) modes_[d.id] = DrawerMode::advanced;
    for (const auto& h : topology_->hosts())
      local_[h.id] = std::set<std::string>(h.local_gpus.begin(), h.local_gpus.end());
  }

  const Topology& topology() const { return *topology_; }
  const std::shared_ptr<const Topology>& topology_ptr() const { return topology_; }

  DrawerMode mode(std::string_view drawer) const {
    auto it = modes_.find(std::string(drawer));
    if (it == modes_.end()) fail(Errc::dangling_reference, "unknown drawer '" + std::string(drawer) + "'");
    return it->second;
  }
  const std::map<std::string, DrawerMode>& modes() const { return modes_; }
  const std::map<std::string, Ownership>& ownership() const { return ownership_; }
  const std::map<std::string, std::set<std::string>>& local_selection() const { return local_; }
  const std::optional<LinkClassTable>& link_override() const { return link_override_; }
  std::uint64_t revision() const { return revision_; }

  std::optional<Ownership> owner(std::string_view device) const {
    auto it = ownership_.find(std::string(device));
    if (it == ownership_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<std::string> owned_by(std::string_view host) const {
    std::vector<std::string> out;
    for (const auto& [dev, o] : ownership_)
      if (o.host == host) out.push_back(dev);
    return out;
  }

  // GPUs a training job on `host` sees, ordered local-first then by drawer
  // and slot. This is also the collective ring order.
  std::vector<std::string> job_gpus(std::string_view host) const {
    std::vector<std::string> out;
    const auto& h = topology_->host(host);
    auto sel = local_.find(h.id);
    for (const auto& g : h.local_gpus)
      if (sel != local_.end() && sel->second.count(g)) out.push_back(g);
    for (const auto& d : topology_->drawers())
      for (const auto& s : d.slots)
        if (s && topology_->device(*s).is_gpu()) {
          auto o = owner(*s);
          if (o && o->host == h.id) out.push_back(*s);
        }
    return out;
  }

  // Where a job on `host` reads its dataset from.
  enum class StorageSource { base, local_nvme, falcon_nvme };
  struct Storage {
    StorageSource source = StorageSource::base;
    std::optional<std::string> device;
  };

  Storage job_storage(std::string_view host) const {
    for (const auto& [dev, o] : ownership_)
      if (o.host == host && topology_->device(dev).is_nvme()) return {StorageSource::falcon_nvme, dev};
    const auto& h = topology_->host(host);
    auto sel = local_.find(h.id);
    if (h.local_nvme && sel != local_.end() && sel->second.count(*h.local_nvme))
      return {StorageSource::local_nvme, *h.local_nvme};
    return {};
  }

  bool operator==(const Composition& o) const {
    return topology_ == o.topology_ && modes_ == o.modes_ && ownership_ == o.ownership_ &&
           local_ == o.local_ && link_override_ == o.link_override_ && revision_ == o.revision_;
  }

 private:
  friend Composition set_drawer_mode(const Composition&, std::string_view, DrawerMode);
  friend Composition attach(const Composition&, std::string_view, std::string_view, const Principal&);
  friend Composition detach(const Composition&, std::string_view, const Principal&);
  friend Composition select_local(const Composition&, std::string_view, const std::set<std::string>&);
  friend Composition import_config(std::shared_ptr<const Topology>, const json&);

  std::shared_ptr<const Topology> topology_;
  std::map<std::string, DrawerMode> modes_;
  std::map<std::string, Ownership> ownership_;
  std::map<std::string, std::set<std::string>> local_;
  std::optional<LinkClassTable> link_override_;
  std::uint64_t revision_ = 0;
};

namespace detail {

// Owners of each device in a drawer, by slot.
inline std::array<std::optional<std::string>, kSlotsPerDrawer> slot_owners(const Composition& c,
                                                                           const Drawer& d) {
  std::array<std::optional<std::string>, kSlotsPerDrawer> out;
  for (std::size_t s = 0; s < kSlotsPerDrawer; ++s)
    if (d.slots[s])
      if (auto o = c.owner(*d.slots[s])) out[s] = o->host;
  return out;
}

// Mode rules for one drawer given its per-slot owners.
inline std::vector<Violation> drawer_violations(const Topology& t, const Drawer& d, DrawerMode mode,
                                                const std::array<std::optional<std::string>, kSlotsPerDrawer>& owners) {
  std::vector<Violation> out;
  auto connections = t.drawer_connections(d.id);
  std::set<std::string> hosts;
  for (std::size_t s = 0; s < kSlotsPerDrawer; ++s) {
    if (!owners[s]) continue;
    hosts.insert(*owners[s]);
    if (std::find(connections.begin(), connections.end(), *owners[s]) == connections.end())
      out.push_back({d.id, "NOT_CONNECTED", *d.slots[s] + " owned by unconnected host " + *owners[s]});
  }

  switch (mode) {
    case DrawerMode::standard_1host:
      if (connections.empty()) out.push_back({d.id, "MODE_CONFLICT", "STANDARD_1HOST needs a host connection"});
      if (hosts.size() > 1) out.push_back({d.id, "HOST_LIMIT", "STANDARD_1HOST drawer owned by several hosts"});
      break;
    case DrawerMode::standard_2host:
      if (connections.size() < 2) {
        out.push_back({d.id, "MODE_CONFLICT", "STANDARD_2HOST needs two host connections"});
        break;
      }
      for (std::size_t s = 0; s < kSlotsPerDrawer; ++s) {
        const auto& half_host = connections[s < kHalfDrawer ? 0 : 1];
        if (owners[s] && *owners[s] != half_host)
          out.push_back({d.id, "MODE_CAPACITY",
                         *d.slots[s] + " is in the half served by " + half_host + ", owned by " + *owners[s]});
      }
      break;
    case DrawerMode::advanced:
      if (hosts.size() > kAdvancedHostLimit)
        out.push_back({d.id, "HOST_LIMIT", std::to_string(hosts.size()) + " hosts share an ADVANCED drawer"});
      break;
  }
  return out;
}

inline Errc rule_errc(const std::string& rule) {
  if (rule == "NOT_CONNECTED") return Errc::not_connected;
  if (rule == "HOST_LIMIT") return Errc::host_limit;
  if (rule == "MODE_CAPACITY") return Errc::mode_capacity;
  return Errc::mode_conflict;
}

inline const Device& pooled_device(const Topology& t, std::string_view id) {
  const auto* d = t.find_device(id);
  if (!d) fail(Errc::unknown_device, "unknown device '" + std::string(id) + "'");
  if (!d->pooled()) fail(Errc::unknown_device, "'" + std::string(id) + "' is host-local, not a pooled device");
  return *d;
}

}  // namespace detail

inline std::vector<Violation> validate(const Composition& c) {
  std::vector<Violation> out;
  const auto& t = c.topology();
  for (const auto& [dev, o] : c.ownership()) {
    const auto* d = t.find_device(dev);
    if (!d || !d->pooled()) out.push_back({"", "UNKNOWN_DEVICE", dev + " is not a pooled device"});
    if (!t.find_host(o.host)) out.push_back({"", "DANGLING_REFERENCE", dev + " owned by unknown host " + o.host});
  }
  for (const auto& d : t.drawers()) {
    auto v = detail::drawer_violations(t, d, c.mode(d.id), detail::slot_owners(c, d));
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

inline Composition set_drawer_mode(const Composition& c, std::string_view drawer, DrawerMode mode) {
  const auto& d = c.topology().drawer(drawer);
  auto v = detail::drawer_violations(c.topology(), d, mode, detail::slot_owners(c, d));
  if (!v.empty()) fail(Errc::mode_conflict, std::string(to_string(mode)) + " on " + d.id + ": " + v.front().detail);
  Composition next = c;
  next.modes_[d.id] = mode;
  ++next.revision_;
  return next;
}

inline Composition attach(const Composition& c, std::string_view host, std::string_view device,
                          const Principal& actor) {
  const auto& t = c.topology();
  const auto& dev = detail::pooled_device(t, device);
  const auto& h = t.host(host);
  if (auto o = c.owner(dev.id))
    fail(Errc::already_owned, dev.id + " is owned by " + o->host + (o->host == h.id ? " already" : ""));
  const auto& d = t.drawer(dev.location->drawer);
  if (!t.host_connected_to(h.id, d.id)) fail(Errc::not_connected, h.id + " is not cabled to " + d.id);

  auto owners = detail::slot_owners(c, d);
  owners[dev.location->slot] = h.id;
  auto v = detail::drawer_violations(t, d, c.mode(d.id), owners);
  if (!v.empty()) fail(detail::rule_errc(v.front().rule), v.front().detail);

  Composition next = c;
  next.ownership_[dev.id] = {h.id, actor.user};
  ++next.revision_;
  return next;
}

inline Composition detach(const Composition& c, std::string_view device, const Principal& actor) {
  const auto& dev = detail::pooled_device(c.topology(), device);
  auto o = c.owner(dev.id);
  if (!o) fail(Errc::not_owned, dev.id + " is in the pool");
  if (!actor.is_admin() && o->user != actor.user)
    fail(Errc::forbidden, actor.user + " does not own " + dev.id);
  Composition next = c;
  next.ownership_.erase(dev.id);
  ++next.revision_;
  return next;
}

// Chooses which host-local devices (GPUs, local NVMe) a host's jobs use.
inline Composition select_local(const Composition& c, std::string_view host, const std::set<std::string>& devices) {
  const auto& h = c.topology().host(host);
  for (const auto& id : devices) {
    const auto* d = c.topology().find_device(id);
    if (!d || d->host != h.id) fail(Errc::unknown_device, id + " is not local to " + h.id);
  }
  Composition next = c;
  next.local_[h.id] = devices;
  ++next.revision_;
  return next;
}

// ---------------------------------------------------------------------------
// Named configurations

inline constexpr std::array kNamedConfigurations = {"localGPUs", "hybridGPUs", "falconGPUs", "localNVMe",
                                                    "falconNVMe"};

inline std::string_view describe_configuration(std::string_view label) {
  if (label == "localGPUs") return "8 local GPUs and local storage";
  if (label == "hybridGPUs") return "4 local GPUs, 4 falcon GPUs, and local storage";
  if (label == "falconGPUs") return "8 falcon-attached GPUs";
  if (label == "localNVMe") return "8 local GPUs and local NVMe";
  if (label == "falconNVMe") return "8 local GPUs and falcon-attached NVMe";
  fail(Errc::unknown_label, "unknown configuration '" + std::string(label) + "'");
}

// Builds one of the five host configurations on `host` (default: first
// host). Every drawer runs ADVANCED; pooled devices are taken drawer by
// drawer in slot order so hybrid GPUs share one switch.
inline Composition apply_named_configuration(std::shared_ptr<const Topology> topology, std::string_view label,
                                             std::optional<std::string> host = std::nullopt,
                                             const Principal& actor = Principal::admin()) {
  describe_configuration(label);
  if (topology->hosts().empty()) fail(Errc::insufficient_resources, "topology has no hosts");
  const auto& h = host ? topology->host(*host) : topology->hosts().front();

  int local_gpus = 0, pooled_gpus = 0;
  bool local_nvme = false, pooled_nvme = false;
  if (label == "localGPUs") local_gpus = 8;
  if (label == "hybridGPUs") local_gpus = 4, pooled_gpus = 4;
  if (label == "falconGPUs") pooled_gpus = 8;
  if (label == "localNVMe") local_gpus = 8, local_nvme = true;
  if (label == "falconNVMe") local_gpus = 8, pooled_nvme = true;

  Composition c(topology);
  for (const auto& d : topology->drawers()) c = set_drawer_mode(c, d.id, DrawerMode::advanced);

  if (static_cast<int>(h.local_gpus.size()) < local_gpus)
    fail(Errc::insufficient_resources, h.id + " has fewer than " + std::to_string(local_gpus) + " local GPUs");
  if (local_nvme && !h.local_nvme) fail(Errc::insufficient_resources, h.id + " has no local NVMe");
  std::set<std::string> local(h.local_gpus.begin(), h.local_gpus.begin() + local_gpus);
  if (local_nvme) local.insert(*h.local_nvme);
  c = select_local(c, h.id, local);

  for (const auto& d : topology->drawers()) {
    if (!topology->host_connected_to(h.id, d.id)) continue;
    for (const auto& s : d.slots) {
      if (!s) continue;
      const auto& dev = topology->device(*s);
      if (dev.is_gpu() && pooled_gpus > 0) {
        c = attach(c, h.id, dev.id, actor);
        --pooled_gpus;
      } else if (dev.is_nvme() && pooled_nvme) {
        c = attach(c, h.id, dev.id, actor);
        pooled_nvme = false;
      }
    }
  }
  if (pooled_gpus > 0 || pooled_nvme)
    fail(Errc::insufficient_resources, "not enough pooled devices cabled to " + h.id + " for " + std::string(label));
  return c;
}

// ---------------------------------------------------------------------------
// Configuration documents

inline json export_config(const Composition& c) {
  json drawers = json::object();
  for (const auto& [id, m] : c.modes()) drawers[id] = to_string(m);
  json ownership = json::array();
  for (const auto& [dev, o] : c.ownership())
    ownership.push_back({{"device", dev}, {"host", o.host}, {"user", o.user}});
  json local = json::object();
  for (const auto& [host, devs] : c.local_selection()) local[host] = devs;
  json doc{{"schema", 1}, {"drawers", drawers}, {"ownership", ownership}, {"local", local}};
  if (c.link_override()) doc["link_classes"] = to_json(*c.link_override());
  return doc;
}

// Canonical text: sorted keys and device ids, two-space indent.
inline std::string export_config_text(const Composition& c) { return export_config(c).dump(2) + "\n"; }

// Loads allocation state. Mode rules are not enforced here; run validate()
// on the result. Revision restarts at 0.
inline Composition import_config(std::shared_ptr<const Topology> topology, const json& doc) {
  if (!doc.is_object()) fail(Errc::schema_error, "config document must be an object");
  try {
    if (doc.at("schema").get<int>() != 1) fail(Errc::schema_error, "unsupported config schema");
    if (doc.contains("link_classes")) {
      auto table = link_classes_from_json(doc.at("link_classes"), topology->link_classes());
      auto tdoc = topology->to_document();
      tdoc["link_classes"] = to_json(table);
      topology = std::make_shared<const Topology>(build_topology(tdoc));
    }
    Composition c(topology);
    if (doc.contains("link_classes")) c.link_override_ = topology->link_classes();
    const json drawers = doc.value("drawers", json::object());
    for (const auto& [id, m] : drawers.items()) {
      if (!topology->find_drawer(id)) fail(Errc::unknown_device, "unknown drawer '" + id + "'");
      c.modes_[id] = parse_drawer_mode(m.get<std::string>());
    }
    for (const auto& o : doc.value("ownership", json::array())) {
      auto dev = o.at("device").get<std::string>();
      detail::pooled_device(*topology, dev);
      auto host = o.at("host").get<std::string>();
      if (!topology->find_host(host)) fail(Errc::unknown_device, "unknown host '" + host + "'");
      if (!c.ownership_.emplace(dev, Ownership{host, o.value("user", std::string("admin"))}).second)
        fail(Errc::schema_error, dev + " listed twice");
    }
    if (doc.contains("local")) {
      for (auto& [host, set] : c.local_) set.clear();
      for (const auto& [host, devs] : doc.at("local").items()) {
        const auto* h = topology->find_host(host);
        if (!h) fail(Errc::unknown_device, "unknown host '" + host + "'");
        for (const auto& id : devs.get<std::vector<std::string>>()) {
          const auto* d = topology->find_device(id);
          if (!d || d->host != host) fail(Errc::unknown_device, id + " is not local to " + host);
          c.local_[host].insert(id);
        }
      }
    }
    return c;
  } catch (const json::exception& e) {
    fail(Errc::schema_error, e.what());
  }
}

}  // namespace cdi
