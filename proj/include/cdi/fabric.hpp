#pragma once

// Physical plant model: hosts, PCIe-switch chassis, drawers, slots, devices
// and the typed links between them. A Topology is immutable once built;
// composition state lives elsewhere and only refers to ids defined here.

#include <algorithm>
#include <array>
#include <cstddef>
#include <deque>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "json.hpp"

#include "cdi/error.hpp"

namespace cdi {

using json = nlohmann::json;

inline constexpr std::size_t kSlotsPerDrawer = 8;
inline constexpr std::size_t kDrawersPerChassis = 2;
inline constexpr std::size_t kPortsPerChassis = 4;
inline constexpr std::size_t kMaxDrawerAttachments = 3;

// ---------------------------------------------------------------------------
// Link classes

enum class LinkClassId { local_local, falcon_local, falcon_falcon, host_nvme_local, host_nvme_falcon };
enum class Protocol { nvlink, pcie_gen4, pcie_gen3 };

inline constexpr std::array kAllLinkClasses = {
    LinkClassId::local_local, LinkClassId::falcon_local, LinkClassId::falcon_falcon,
    LinkClassId::host_nvme_local, LinkClassId::host_nvme_falcon};

constexpr std::string_view to_string(LinkClassId id) {
  switch (id) {
    case LinkClassId::local_local: return "L-L";
    case LinkClassId::falcon_local: return "F-L";
    case LinkClassId::falcon_falcon: return "F-F";
    case LinkClassId::host_nvme_local: return "HOST-NVME-LOCAL";
    case LinkClassId::host_nvme_falcon: return "HOST-NVME-FALCON";
  }
  return "?";
}

constexpr std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::nvlink: return "NVLINK";
    case Protocol::pcie_gen4: return "PCIE-GEN4";
    case Protocol::pcie_gen3: return "PCIE-GEN3";
  }
  return "?";
}

inline LinkClassId parse_link_class(std::string_view s) {
  for (auto id : kAllLinkClasses)
    if (to_string(id) == s) return id;
  fail(Errc::schema_error, "unknown link class '" + std::string(s) + "'");
}

inline Protocol parse_protocol(std::string_view s) {
  for (auto p : {Protocol::nvlink, Protocol::pcie_gen4, Protocol::pcie_gen3})
    if (to_string(p) == s) return p;
  fail(Errc::schema_error, "unknown protocol '" + std::string(s) + "'");
}

struct LinkClass {
  LinkClassId id;
  Protocol protocol;
  double bandwidth_gbps;  // bidirectional, GB/s
  double latency_us;      // point-to-point write latency

  bool operator==(const LinkClass&) const = default;
};

class LinkClassTable {
 public:
  // Measured GPU-GPU figures for the three GPU classes. The storage rows are
  // nominal: 3.0 GB/s NVMe reads on both paths, the falcon path paying the
  // extra switch traversal (F-L minus L-L latency).
  static LinkClassTable defaults() {
    LinkClassTable t;
    t.set({LinkClassId::local_local, Protocol::nvlink, 72.37, 1.85});
    t.set({LinkClassId::falcon_local, Protocol::pcie_gen4, 19.64, 2.66});
    t.set({LinkClassId::falcon_falcon, Protocol::pcie_gen4, 24.47, 2.08});
    t.set({LinkClassId::host_nvme_local, Protocol::pcie_gen3, 3.0, 1.0});
    t.set({LinkClassId::host_nvme_falcon, Protocol::pcie_gen4, 3.0, 1.81});
    return t;
  }

  void set(const LinkClass& lc) {
    if (!(lc.bandwidth_gbps > 0.0) || !(lc.latency_us > 0.0))
      fail(Errc::schema_error, "link class " + std::string(to_string(lc.id)) +
                                   " needs positive bandwidth and latency");
    rows_[static_cast<std::size_t>(lc.id)] = lc;
  }

  const LinkClass& at(LinkClassId id) const {
    const auto& row = rows_[static_cast<std::size_t>(id)];
    if (!row) fail(Errc::schema_error, "link class " + std::string(to_string(id)) + " missing");
    return *row;
  }

  bool complete() const {
    return std::all_of(rows_.begin(), rows_.end(), [](const auto& r) { return r.has_value(); });
  }

  bool operator==(const LinkClassTable&) const = default;

 private:
  std::array<std::optional<LinkClass>, kAllLinkClasses.size()> rows_;
};

inline json to_json(const LinkClassTable& table) {
  json rows = json::array();
  for (auto id : kAllLinkClasses) {
    const auto& lc = table.at(id);
    rows.push_back({{"class", to_string(id)},
                    {"protocol", to_string(lc.protocol)},
                    {"bandwidth_GBps", lc.bandwidth_gbps},
                    {"latency_us", lc.latency_us}});
  }
  return rows;
}

// Rows override `base`; classes not mentioned keep their base value.
inline LinkClassTable link_classes_from_json(const json& rows,
                                             LinkClassTable base = LinkClassTable::defaults()) {
  if (!rows.is_array()) fail(Errc::schema_error, "link_classes must be an array");
  try {
    for (const auto& r : rows) {
      base.set({parse_link_class(r.at("class").get<std::string>()),
                parse_protocol(r.at("protocol").get<std::string>()),
                r.at("bandwidth_GBps").get<double>(), r.at("latency_us").get<double>()});
    }
  } catch (const json::exception& e) {
    fail(Errc::schema_error, std::string("link_classes: ") + e.what());
  }
  return base;
}

// ---------------------------------------------------------------------------
// Inventory

struct Gpu {
  std::string model;
  double memory_gib = 0;
  bool hbm = false;
  bool operator==(const Gpu&) const = default;
};
struct Nvme {
  double capacity_tb = 0;
  bool operator==(const Nvme&) const = default;
};
struct Nic {
  double rate_gbps = 0;
  bool operator==(const Nic&) const = default;
};
using DeviceKind = std::variant<Gpu, Nvme, Nic>;

struct SlotRef {
  std::string drawer;
  std::size_t slot = 0;
  bool operator==(const SlotRef&) const = default;
};

struct Device {
  std::string id;
  DeviceKind kind;
  // Exactly one of these is set: a host-local device or a pooled one.
  std::optional<std::string> host;
  std::optional<SlotRef> location;

  bool is_gpu() const { return std::holds_alternative<Gpu>(kind); }
  bool is_nvme() const { return std::holds_alternative<Nvme>(kind); }
  bool pooled() const { return location.has_value(); }
};

struct Drawer {
  std::string id;
  std::string chassis;
  std::array<std::optional<std::string>, kSlotsPerDrawer> slots;
  std::vector<std::string> attachments;  // host-port ids, in cabling order

  std::size_t device_count() const {
    return static_cast<std::size_t>(
        std::count_if(slots.begin(), slots.end(), [](const auto& s) { return s.has_value(); }));
  }
};

struct HostPort {
  std::string id;
  std::string chassis;
  std::optional<std::string> host;
  std::optional<std::string> drawer;
};

struct Chassis {
  std::string id;
  std::array<std::string, kDrawersPerChassis> drawers;
  std::array<std::string, kPortsPerChassis> ports;
  double port_rate_gbps = 400;
};

struct Host {
  std::string id;
  int cpu_sockets = 0;
  int cores_per_socket = 0;
  double memory_gib = 0;
  std::vector<std::string> local_gpus;
  std::optional<std::string> local_nvme;
  std::vector<std::string> adapters;  // host-port ids

  int cores() const { return cpu_sockets * cores_per_socket; }
};

// ---------------------------------------------------------------------------
// Paths

enum class NodeKind { device, drawer_switch, host_port, root_complex };

struct Hop {
  std::string from;
  std::string to;
  NodeKind from_kind;
  NodeKind to_kind;
  LinkClassId link_class;  // class of the measured segment this hop belongs to
  std::size_t segment = 0;
};

struct LinkPath {
  std::vector<Hop> hops;
  LinkClassId summary = LinkClassId::local_local;

  std::size_t segment_count() const { return hops.empty() ? 0 : hops.back().segment + 1; }

  std::vector<LinkClassId> segment_classes() const {
    std::vector<LinkClassId> out;
    for (const auto& h : hops)
      if (h.segment == out.size()) out.push_back(h.link_class);
    return out;
  }
};

struct PathMetrics {
  double bandwidth_gbps;
  double latency_us;
};

// Bandwidth is the slowest segment; latency adds up per measured segment.
// A single-segment path therefore reports its class row unchanged.
inline PathMetrics path_metrics(const LinkPath& path, const LinkClassTable& table) {
  if (path.hops.empty()) throw std::invalid_argument("path_metrics: empty path");
  PathMetrics m{std::numeric_limits<double>::infinity(), 0.0};
  for (auto cls : path.segment_classes()) {
    const auto& row = table.at(cls);
    m.bandwidth_gbps = std::min(m.bandwidth_gbps, row.bandwidth_gbps);
    m.latency_us += row.latency_us;
  }
  return m;
}

enum class Direction { ingress, egress };  // relative to the chassis

struct PortCrossing {
  std::string port;
  std::string drawer;
  std::string device;  // pooled device on the drawer side of the crossing
  Direction direction;
};

// ---------------------------------------------------------------------------
// Topology

class Topology;
Topology build_topology(const json& doc);

class Topology {
 public:
  const LinkClassTable& link_classes() const { return classes_; }
  const std::vector<Host>& hosts() const { return hosts_; }
  const std::vector<Chassis>& chassis() const { return chassis_; }
  const std::vector<Drawer>& drawers() const { return drawers_; }
  const std::vector<Device>& devices() const { return devices_; }
  const std::vector<HostPort>& ports() const { return ports_; }

  const Host* find_host(std::string_view id) const { return find(hosts_, host_index_, id); }
  const Drawer* find_drawer(std::string_view id) const { return find(drawers_, drawer_index_, id); }
  const Device* find_device(std::string_view id) const { return find(devices_, device_index_, id); }
  const HostPort* find_port(std::string_view id) const { return find(ports_, port_index_, id); }

  const Host& host(std::string_view id) const { return must(find_host(id), "host", id); }
  const Drawer& drawer(std::string_view id) const { return must(find_drawer(id), "drawer", id); }
  const Device& device(std::string_view id) const { return must(find_device(id), "device", id); }
  const HostPort& port(std::string_view id) const { return must(find_port(id), "port", id); }

  // Hosts cabled to a drawer, one entry per attachment (a host with two
  // connections to the same drawer appears twice).
  std::vector<std::string> drawer_connections(std::string_view drawer_id) const {
    std::vector<std::string> out;
    for (const auto& p : drawer(drawer_id).attachments) {
      const auto& hp = port(p);
      if (hp.host) out.push_back(*hp.host);
    }
    return out;
  }

  bool host_connected_to(std::string_view host_id, std::string_view drawer_id) const {
    auto c = drawer_connections(drawer_id);
    return std::find(c.begin(), c.end(), host_id) != c.end();
  }

  std::size_t pooled_gpu_count() const {
    return static_cast<std::size_t>(std::count_if(
        devices_.begin(), devices_.end(), [](const Device& d) { return d.pooled() && d.is_gpu(); }));
  }

  // Minimal-hop route between two endpoints (device or host ids). Devices
  // never forward traffic; switches, host ports and root complexes do.
  LinkPath route(std::string_view a, std::string_view b) const {
    auto src = endpoint_node(a);
    auto dst = endpoint_node(b);
    if (src == dst) throw std::invalid_argument("route: endpoints must differ");

    std::vector<std::size_t> prev(nodes_.size(), kNone);
    std::deque<std::size_t> queue{src};
    prev[src] = src;
    while (!queue.empty() && prev[dst] == kNone) {
      auto n = queue.front();
      queue.pop_front();
      if (n != src && nodes_[n].kind == NodeKind::device) continue;
      for (const auto& e : adjacency_[n]) {
        if (prev[e.to] != kNone) continue;
        prev[e.to] = n;
        queue.push_back(e.to);
      }
    }
    if (prev[dst] == kNone)
      fail(Errc::no_path, "no route between " + std::string(a) + " and " + std::string(b));

    std::vector<std::size_t> nodes{dst};
    while (nodes.back() != src) nodes.push_back(prev[nodes.back()]);
    std::reverse(nodes.begin(), nodes.end());
    return classify(nodes);
  }

  PathMetrics metrics(std::string_view a, std::string_view b) const {
    return path_metrics(route(a, b), classes_);
  }

  // Host-port traversals along a path, with the pooled device each one
  // serves and the direction of travel relative to the chassis.
  std::vector<PortCrossing> port_crossings(const LinkPath& path) const {
    std::vector<PortCrossing> out;
    for (std::size_t i = 0; i < path.hops.size(); ++i) {
      const auto& h = path.hops[i];
      bool egress = h.from_kind == NodeKind::drawer_switch && h.to_kind == NodeKind::host_port;
      bool ingress = h.from_kind == NodeKind::host_port && h.to_kind == NodeKind::drawer_switch;
      if (!egress && !ingress) continue;
      PortCrossing c;
      c.direction = egress ? Direction::egress : Direction::ingress;
      c.port = egress ? h.to : h.from;
      c.drawer = egress ? h.from : h.to;
      // The pooled device sits one hop beyond the switch, within the segment.
      if (egress && i > 0 && path.hops[i - 1].from_kind == NodeKind::device)
        c.device = path.hops[i - 1].from;
      else if (ingress && i + 1 < path.hops.size() && path.hops[i + 1].to_kind == NodeKind::device)
        c.device = path.hops[i + 1].to;
      out.push_back(std::move(c));
    }
    return out;
  }

  json to_document() const;

  bool operator==(const Topology& other) const { return to_document() == other.to_document(); }

 private:
  friend Topology build_topology(const json& doc);

  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  struct Node {
    std::string id;
    NodeKind kind;
  };
  struct Edge {
    std::size_t to;
    LinkClassId link_class;
  };

  template <class T>
  static const T* find(const std::vector<T>& v, const std::unordered_map<std::string, std::size_t>& idx,
                       std::string_view id) {
    auto it = idx.find(std::string(id));
    return it == idx.end() ? nullptr : &v[it->second];
  }

  template <class T>
  static const T& must(const T* p, std::string_view what, std::string_view id) {
    if (!p) fail(Errc::dangling_reference, "unknown " + std::string(what) + " '" + std::string(id) + "'");
    return *p;
  }

  std::size_t endpoint_node(std::string_view id) const {
    auto it = node_index_.find(std::string(id));
    if (it == node_index_.end() || (nodes_[it->second].kind != NodeKind::device &&
                                    nodes_[it->second].kind != NodeKind::root_complex))
      throw std::invalid_argument("route: '" + std::string(id) + "' is not a device or host");
    return it->second;
  }

  std::size_t add_node(std::string id, NodeKind kind) {
    node_index_.emplace(id, nodes_.size());
    nodes_.push_back({std::move(id), kind});
    adjacency_.emplace_back();
    return nodes_.size() - 1;
  }

  void add_edge(std::size_t a, std::size_t b, LinkClassId cls) {
    adjacency_[a].push_back({b, cls});
    adjacency_[b].push_back({a, cls});
  }

  LinkClassId edge_class(std::size_t a, std::size_t b) const {
    for (const auto& e : adjacency_[a])
      if (e.to == b) return e.link_class;
    throw std::logic_error("edge_class: nodes not adjacent");
  }

  // Splits a node sequence into measured segments. A root complex entered
  // and left through host ports (drawer-to-drawer through the host) ends
  // one segment and starts the next. Each segment takes its slowest
  // physical link class, storage classes dominating.
  LinkPath classify(const std::vector<std::size_t>& nodes) const {
    LinkPath path;
    std::vector<std::vector<LinkClassId>> seg_edges(1);
    std::vector<std::size_t> seg_of_hop;
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
      if (i > 0 && nodes_[nodes[i]].kind == NodeKind::root_complex &&
          nodes_[nodes[i - 1]].kind == NodeKind::host_port &&
          nodes_[nodes[i + 1]].kind == NodeKind::host_port)
        seg_edges.emplace_back();
      seg_edges.back().push_back(edge_class(nodes[i], nodes[i + 1]));
      seg_of_hop.push_back(seg_edges.size() - 1);
    }

    std::vector<LinkClassId> seg_class;
    for (const auto& edges : seg_edges) {
      auto has = [&](LinkClassId c) { return std::find(edges.begin(), edges.end(), c) != edges.end(); };
      if (has(LinkClassId::host_nvme_falcon)) seg_class.push_back(LinkClassId::host_nvme_falcon);
      else if (has(LinkClassId::host_nvme_local)) seg_class.push_back(LinkClassId::host_nvme_local);
      else if (has(LinkClassId::falcon_local)) seg_class.push_back(LinkClassId::falcon_local);
      else if (has(LinkClassId::falcon_falcon)) seg_class.push_back(LinkClassId::falcon_falcon);
      else seg_class.push_back(LinkClassId::local_local);
    }

    for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
      const auto& a = nodes_[nodes[i]];
      const auto& b = nodes_[nodes[i + 1]];
      path.hops.push_back({a.id, b.id, a.kind, b.kind, seg_class[seg_of_hop[i]], seg_of_hop[i]});
    }

    // Dominant class: the slowest segment, first one on ties.
    path.summary = seg_class.front();
    for (auto c : seg_class)
      if (classes_.at(c).bandwidth_gbps < classes_.at(path.summary).bandwidth_gbps) path.summary = c;
    return path;
  }

  LinkClassTable classes_;
  std::vector<Host> hosts_;
  std::vector<Chassis> chassis_;
  std::vector<Drawer> drawers_;
  std::vector<Device> devices_;
  std::vector<HostPort> ports_;
  std::unordered_map<std::string, std::size_t> host_index_, drawer_index_, device_index_, port_index_;

  std::vector<Node> nodes_;
  std::vector<std::vector<Edge>> adjacency_;
  std::unordered_map<std::string, std::size_t> node_index_;
};

// ---------------------------------------------------------------------------
// Documents

namespace detail {

inline json device_to_json(const Device& d) {
  json j{{"id", d.id}};
  std::visit(
      [&](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Gpu>) {
          j["type"] = "GPU";
          j["model"] = k.model;
          j["memory_GiB"] = k.memory_gib;
          j["hbm"] = k.hbm;
        } else if constexpr (std::is_same_v<K, Nvme>) {
          j["type"] = "NVME";
          j["capacity_TB"] = k.capacity_tb;
        } else {
          j["type"] = "NIC";
          j["rate_Gbps"] = k.rate_gbps;
        }
      },
      d.kind);
  return j;
}

inline Device device_from_json(const json& j) {
  Device d;
  d.id = j.at("id").get<std::string>();
  auto type = j.at("type").get<std::string>();
  if (type == "GPU") {
    Gpu g{j.at("model").get<std::string>(), j.at("memory_GiB").get<double>(), j.value("hbm", false)};
    if (!(g.memory_gib > 0)) fail(Errc::schema_error, d.id + ": GPU memory must be positive");
    d.kind = g;
  } else if (type == "NVME") {
    Nvme n{j.at("capacity_TB").get<double>()};
    if (!(n.capacity_tb > 0)) fail(Errc::schema_error, d.id + ": NVMe capacity must be positive");
    d.kind = n;
  } else if (type == "NIC") {
    Nic n{j.at("rate_Gbps").get<double>()};
    if (!(n.rate_gbps > 0)) fail(Errc::schema_error, d.id + ": NIC rate must be positive");
    d.kind = n;
  } else {
    fail(Errc::schema_error, d.id + ": unknown device type '" + type + "'");
  }
  return d;
}

}  // namespace detail

inline json Topology::to_document() const {
  json doc{{"schema", 1}, {"link_classes", to_json(classes_)}};
  json hosts = json::array();
  for (const auto& h : hosts_) {
    json devs = json::array();
    for (const auto& g : h.local_gpus) devs.push_back(detail::device_to_json(device(g)));
    if (h.local_nvme) devs.push_back(detail::device_to_json(device(*h.local_nvme)));
    hosts.push_back({{"id", h.id},
                     {"cpu_sockets", h.cpu_sockets},
                     {"cores_per_socket", h.cores_per_socket},
                     {"memory_GiB", h.memory_gib},
                     {"adapters", h.adapters},
                     {"devices", devs}});
  }
  doc["hosts"] = hosts;
  json chassis = json::array();
  for (const auto& c : chassis_) {
    json drawers = json::array();
    for (const auto& did : c.drawers) {
      const auto& d = drawer(did);
      json slots = json::array();
      for (std::size_t s = 0; s < kSlotsPerDrawer; ++s)
        if (d.slots[s]) slots.push_back({{"slot", s}, {"device", detail::device_to_json(device(*d.slots[s]))}});
      drawers.push_back({{"id", d.id}, {"attachments", d.attachments}, {"slots", slots}});
    }
    chassis.push_back({{"id", c.id},
                       {"port_rate_Gbps", c.port_rate_gbps},
                       {"ports", c.ports},
                       {"drawers", drawers}});
  }
  doc["chassis"] = chassis;
  return doc;
}

// Validates a topology document and builds the immutable plant graph.
inline Topology build_topology(const json& doc) {
  Topology t;
  std::set<std::string> ids;
  auto claim = [&](const std::string& id) {
    if (id.empty()) fail(Errc::schema_error, "empty id");
    if (!ids.insert(id).second) fail(Errc::duplicate_id, "duplicate id '" + id + "'");
  };

  try {
    if (doc.value("schema", 1) != 1) fail(Errc::schema_error, "unsupported topology schema");
    t.classes_ = doc.contains("link_classes") ? link_classes_from_json(doc.at("link_classes"))
                                              : LinkClassTable::defaults();

    // Chassis first so host adapters can be checked against known ports.
    for (const auto& cj : doc.at("chassis")) {
      Chassis c;
      c.id = cj.at("id").get<std::string>();
      claim(c.id);
      c.port_rate_gbps = cj.value("port_rate_Gbps", 400.0);
      auto ports = cj.at("ports").get<std::vector<std::string>>();
      if (ports.size() > kPortsPerChassis)
        fail(Errc::capacity_exceeded, c.id + ": more than 4 host ports");
      if (ports.size() < kPortsPerChassis) fail(Errc::schema_error, c.id + ": chassis needs 4 host ports");
      for (std::size_t i = 0; i < ports.size(); ++i) {
        claim(ports[i]);
        c.ports[i] = ports[i];
        t.port_index_.emplace(ports[i], t.ports_.size());
        t.ports_.push_back({ports[i], c.id, std::nullopt, std::nullopt});
      }

      const auto& drawers = cj.at("drawers");
      if (drawers.size() > kDrawersPerChassis) fail(Errc::capacity_exceeded, c.id + ": more than 2 drawers");
      if (drawers.size() < kDrawersPerChassis) fail(Errc::schema_error, c.id + ": chassis needs 2 drawers");
      for (std::size_t di = 0; di < drawers.size(); ++di) {
        const auto& dj = drawers[di];
        Drawer d;
        d.id = dj.at("id").get<std::string>();
        d.chassis = c.id;
        claim(d.id);
        const auto& slots = dj.at("slots");
        if (slots.size() > kSlotsPerDrawer)
          fail(Errc::capacity_exceeded, d.id + ": " + std::to_string(slots.size()) + " devices in 8 slots");
        for (const auto& sj : slots) {
          auto s = sj.at("slot").get<long long>();
          if (s < 0 || s >= static_cast<long long>(kSlotsPerDrawer))
            fail(Errc::dangling_reference, d.id + ": no slot " + std::to_string(s));
          auto idx = static_cast<std::size_t>(s);
          if (d.slots[idx]) fail(Errc::duplicate_id, d.id + ": slot " + std::to_string(s) + " occupied twice");
          auto dev = detail::device_from_json(sj.at("device"));
          claim(dev.id);
          dev.location = SlotRef{d.id, idx};
          d.slots[idx] = dev.id;
          t.device_index_.emplace(dev.id, t.devices_.size());
          t.devices_.push_back(std::move(dev));
        }
        d.attachments = dj.value("attachments", std::vector<std::string>{});
        if (d.attachments.size() > kMaxDrawerAttachments)
          fail(Errc::capacity_exceeded, d.id + ": more than 3 host attachments");
        for (const auto& p : d.attachments) {
          auto it = t.port_index_.find(p);
          if (it == t.port_index_.end() || t.ports_[it->second].chassis != c.id)
            fail(Errc::dangling_reference, d.id + ": attachment to unknown port '" + p + "'");
          auto& hp = t.ports_[it->second];
          if (hp.drawer) fail(Errc::duplicate_id, "port '" + p + "' cabled to two drawers");
          hp.drawer = d.id;
        }
        c.drawers[di] = d.id;
        t.drawer_index_.emplace(d.id, t.drawers_.size());
        t.drawers_.push_back(std::move(d));
      }
      t.chassis_.push_back(std::move(c));
    }

    for (const auto& hj : doc.at("hosts")) {
      Host h;
      h.id = hj.at("id").get<std::string>();
      claim(h.id);
      h.cpu_sockets = hj.value("cpu_sockets", 1);
      h.cores_per_socket = hj.value("cores_per_socket", 1);
      h.memory_gib = hj.value("memory_GiB", 0.0);
      if (h.cpu_sockets < 1 || h.cores_per_socket < 1)
        fail(Errc::schema_error, h.id + ": needs at least one core");
      for (const auto& dj : hj.value("devices", json::array())) {
        auto dev = detail::device_from_json(dj);
        claim(dev.id);
        dev.host = h.id;
        if (dev.is_gpu()) {
          h.local_gpus.push_back(dev.id);
        } else if (dev.is_nvme()) {
          if (h.local_nvme) fail(Errc::capacity_exceeded, h.id + ": more than one local NVMe");
          h.local_nvme = dev.id;
        } else {
          fail(Errc::schema_error, h.id + ": host-local devices must be GPU or NVME");
        }
        t.device_index_.emplace(dev.id, t.devices_.size());
        t.devices_.push_back(std::move(dev));
      }
      h.adapters = hj.value("adapters", std::vector<std::string>{});
      for (const auto& p : h.adapters) {
        auto it = t.port_index_.find(p);
        if (it == t.port_index_.end()) fail(Errc::dangling_reference, h.id + ": adapter to unknown port '" + p + "'");
        auto& hp = t.ports_[it->second];
        if (hp.host) fail(Errc::duplicate_id, "port '" + p + "' cabled to two hosts");
        hp.host = h.id;
      }
      t.host_index_.emplace(h.id, t.hosts_.size());
      t.hosts_.push_back(std::move(h));
    }
  } catch (const json::exception& e) {
    fail(Errc::schema_error, e.what());
  }

  // Physical graph.
  for (const auto& d : t.devices_) t.add_node(d.id, NodeKind::device);
  for (const auto& h : t.hosts_) {
    auto rc = t.add_node(h.id, NodeKind::root_complex);
    for (std::size_t i = 0; i < h.local_gpus.size(); ++i) {
      t.add_edge(rc, t.node_index_.at(h.local_gpus[i]), LinkClassId::falcon_local);
      for (std::size_t j = i + 1; j < h.local_gpus.size(); ++j)
        t.add_edge(t.node_index_.at(h.local_gpus[i]), t.node_index_.at(h.local_gpus[j]),
                   LinkClassId::local_local);
    }
    if (h.local_nvme) t.add_edge(rc, t.node_index_.at(*h.local_nvme), LinkClassId::host_nvme_local);
  }
  for (const auto& d : t.drawers_) {
    auto sw = t.add_node(d.id, NodeKind::drawer_switch);
    for (const auto& s : d.slots) {
      if (!s) continue;
      auto cls = t.device(*s).is_nvme() ? LinkClassId::host_nvme_falcon : LinkClassId::falcon_falcon;
      t.add_edge(sw, t.node_index_.at(*s), cls);
    }
  }
  for (const auto& p : t.ports_) {
    auto pn = t.add_node(p.id, NodeKind::host_port);
    if (p.drawer) t.add_edge(pn, t.node_index_.at(*p.drawer), LinkClassId::falcon_local);
    if (p.host) t.add_edge(pn, t.node_index_.at(*p.host), LinkClassId::falcon_local);
  }
  return t;
}

// One host with 8 NVLink GPUs and a local NVMe, cabled through H1/H2 to
// both drawers of a chassis holding 4 GPUs per drawer and a 4 TB NVMe in
// drawer 2.
inline json reference_topology_document() {
  auto gpu = [](const std::string& id, const std::string& model) {
    return json{{"id", id}, {"type", "GPU"}, {"model", model}, {"memory_GiB", 16.0}, {"hbm", true}};
  };
  json host_devices = json::array();
  for (int i = 0; i < 8; ++i) host_devices.push_back(gpu("host0/gpu" + std::to_string(i), "Tesla V100-SXM2-16GB"));
  host_devices.push_back({{"id", "host0/nvme0"}, {"type", "NVME"}, {"capacity_TB", 4.0}});

  auto drawer = [&](int n, bool with_nvme) {
    std::string id = "falcon0/d" + std::to_string(n);
    json slots = json::array();
    for (int s = 0; s < 4; ++s)
      slots.push_back({{"slot", s}, {"device", gpu(id + "/gpu" + std::to_string(s), "Tesla V100-PCIE-16GB")}});
    if (with_nvme)
      slots.push_back({{"slot", 4}, {"device", {{"id", id + "/nvme0"}, {"type", "NVME"}, {"capacity_TB", 4.0}}}});
    return json{{"id", id}, {"attachments", {"falcon0/H" + std::to_string(n)}}, {"slots", slots}};
  };

  return json{{"schema", 1},
              {"link_classes", to_json(LinkClassTable::defaults())},
              {"hosts",
               {{{"id", "host0"},
                 {"cpu_sockets", 2},
                 {"cores_per_socket", 20},
                 {"memory_GiB", 756.0},
                 {"adapters", {"falcon0/H1", "falcon0/H2"}},
                 {"devices", host_devices}}}},
              {"chassis",
               {{{"id", "falcon0"},
                 {"port_rate_Gbps", 400.0},
                 {"ports", {"falcon0/H1", "falcon0/H2", "falcon0/H3", "falcon0/H4"}},
                 {"drawers", {drawer(1, false), drawer(2, true)}}}}}};
}

inline Topology build_reference_topology() { return build_topology(reference_topology_document()); }

}  // namespace cdi
