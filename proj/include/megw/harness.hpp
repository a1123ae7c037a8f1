#pragma once

// In-process virtual fabric. Nodes exchange raw frames over links with a fixed
// latency in logical ticks; a single event queue ordered by (tick, sequence)
// drives everything, so a run is a pure function of topology and script.
//
// Frame paths:
//   UE  -radio->  eNB  -ran->  MEGW  -core->  SGW/MME stub
//                              MEGW  -peer->  MEGW
//                              MEGW  -cluster-> DIP echo server
//   eNB -x2-> eNB (never through a gateway)
//
// Core traffic towards an eNB always enters that eNB's MEGW as FromCore.
// Routed packets addressed to a UE go to the gateway the UE is attached to,
// or to the core when that gateway is the sender itself.

#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "megw/control_plane.hpp"
#include "megw/errors.hpp"
#include "megw/gtp.hpp"
#include "megw/s1ap_lite.hpp"
#include "megw/steering.hpp"

namespace megw::harness {

enum class NodeKind { Ue, Enb, Core, Megw, Dip };

inline const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Ue: return "ue";
    case NodeKind::Enb: return "enb";
    case NodeKind::Core: return "core";
    case NodeKind::Megw: return "megw";
    case NodeKind::Dip: return "dip";
  }
  return "?";
}

struct NodeInfo {
  std::string id;
  NodeKind kind = NodeKind::Ue;
  Ipv4Address address;
};

struct Link {
  std::string a;
  std::string b;
  std::string port;  // radio, x2, ran, core, peer, cluster
  std::uint64_t latency = 1;
};

struct BearerSpec {
  std::uint8_t id = 0;
  std::uint32_t upstream_teid = 0;
  std::uint32_t downstream_teid = 0;
};

struct UeSpec {
  std::string id;
  Ipv4Address ip;
  std::string enb;  // initial attachment
  std::vector<BearerSpec> bearers;
};

struct Topology {
  std::map<std::string, NodeInfo> nodes;
  std::map<std::pair<std::string, std::string>, Link> links;  // both orientations
  std::map<std::string, std::string> enb_to_megw;
  std::map<std::string, std::string> megw_to_region;
  std::map<std::string, double> megw_weight;
  std::vector<Ipv4Address> vips;
  std::map<std::string, std::vector<WeightedCandidate<Ipv4Address>>> dips;  // per MEGW
  std::map<std::string, std::string> dip_owner;                              // DIP node -> MEGW
  std::string core;
  std::vector<UeSpec> ues;

  const NodeInfo& node(const std::string& id) const {
    auto it = nodes.find(id);
    if (it == nodes.end()) throw TopologyError("unknown node '" + id + "'");
    return it->second;
  }

  const Link& link(const std::string& a, const std::string& b) const {
    auto it = links.find({a, b});
    if (it == links.end()) throw TopologyError("no link " + a + " <-> " + b);
    return it->second;
  }

  std::optional<std::string> node_at(Ipv4Address addr) const {
    for (const auto& [id, n] : nodes)
      if (n.kind != NodeKind::Ue && n.address == addr) return id;
    return std::nullopt;
  }

  const UeSpec& ue(const std::string& id) const {
    for (const auto& u : ues)
      if (u.id == id) return u;
    throw ConfigError("unknown UE '" + id + "'");
  }

  std::vector<RegionPeer> region_peers(const std::string& region) const {
    std::vector<RegionPeer> out;
    for (const auto& [m, r] : megw_to_region)
      if (r == region) out.push_back({m, node(m).address, megw_weight.at(m)});
    return out;
  }

  SteeringConfig steering_config(const std::string& megw) const {
    SteeringConfig cfg;
    cfg.megw_id = megw;
    cfg.vips = vips;
    cfg.region_peers = region_peers(megw_to_region.at(megw));
    cfg.dips = dips.at(megw);
    cfg.local_sgw = node(core).address;
    cfg.validate();
    return cfg;
  }

  ControlTopology control_topology() const {
    ControlTopology t;
    for (const auto& [enb, m] : enb_to_megw) t.enb_to_megw[node(enb).address] = m;
    t.megw_to_region = megw_to_region;
    for (const auto& [m, r] : megw_to_region) t.region_peers[r] = region_peers(r);
    return t;
  }
};

namespace detail {

inline Ipv4Address parse_addr(const nlohmann::json& j, const char* key) {
  try {
    return Ipv4Address::parse(j.at(key).get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

inline void add_node(Topology& t, std::string id, NodeKind kind, Ipv4Address addr) {
  if (id.empty()) throw ConfigError("node id is empty");
  if (t.nodes.count(id)) throw ConfigError("duplicate node id '" + id + "'");
  if (kind != NodeKind::Ue && t.node_at(addr))
    throw ConfigError("address " + addr.to_string() + " used twice");
  t.nodes.emplace(id, NodeInfo{id, kind, addr});
}

inline void add_link(Topology& t, const std::string& a, const std::string& b, const std::string& port,
                     std::uint64_t latency) {
  t.links[{a, b}] = Link{a, b, port, latency};
  t.links[{b, a}] = Link{b, a, port, latency};
}

}  // namespace detail

/// Builds and validates a topology document. Every reference must resolve:
/// eNB -> MEGW, MEGW -> region, UE -> eNB.
inline Topology build_topology(const nlohmann::json& doc) {
  Topology t;
  try {
    std::map<std::string, std::uint64_t> lat{{"radio", 1}, {"x2", 1}, {"ran", 1},
                                             {"core", 1},  {"peer", 1}, {"cluster", 1}};
    if (doc.contains("latency"))
      for (auto& [k, v] : doc.at("latency").items()) {
        if (!lat.count(k)) throw ConfigError("unknown link kind '" + k + "'");
        lat[k] = v.get<std::uint64_t>();
      }

    const auto& core = doc.at("core");
    t.core = core.at("id").get<std::string>();
    detail::add_node(t, t.core, NodeKind::Core, detail::parse_addr(core, "address"));

    for (const auto& v : doc.at("vips")) t.vips.push_back(Ipv4Address::parse(v.get<std::string>()));

    for (const auto& m : doc.at("megws")) {
      const auto id = m.at("id").get<std::string>();
      detail::add_node(t, id, NodeKind::Megw, detail::parse_addr(m, "address"));
      const auto region = m.at("region").get<std::string>();
      if (region.empty()) throw ConfigError("MEGW '" + id + "' has an empty region");
      t.megw_to_region[id] = region;
      t.megw_weight[id] = m.value("weight", 1.0);
      if (!(t.megw_weight[id] > 0)) throw ConfigError("MEGW '" + id + "' weight must be positive");
      detail::add_link(t, id, t.core, "core", lat["core"]);
      auto& pool = t.dips[id];
      int n = 0;
      for (const auto& d : m.value("dips", nlohmann::json::array())) {
        const auto addr = detail::parse_addr(d, "address");
        const auto dip_id = d.value("id", id + "-dip" + std::to_string(++n));
        detail::add_node(t, dip_id, NodeKind::Dip, addr);
        pool.push_back({addr, d.value("weight", 1.0)});
        t.dip_owner[dip_id] = id;
        detail::add_link(t, id, dip_id, "cluster", lat["cluster"]);
      }
    }
    for (const auto& [a, ra] : t.megw_to_region)
      for (const auto& [b, rb] : t.megw_to_region)
        if (a < b) detail::add_link(t, a, b, "peer", lat["peer"]);

    for (const auto& e : doc.at("enbs")) {
      const auto id = e.at("id").get<std::string>();
      detail::add_node(t, id, NodeKind::Enb, detail::parse_addr(e, "address"));
      const auto megw = e.at("megw").get<std::string>();
      if (!t.megw_to_region.count(megw))
        throw ConfigError("eNB '" + id + "' references unknown MEGW '" + megw + "'");
      t.enb_to_megw[id] = megw;
      detail::add_link(t, id, megw, "ran", lat["ran"]);
    }
    for (const auto& [a, ma] : t.enb_to_megw)
      for (const auto& [b, mb] : t.enb_to_megw)
        if (a < b) detail::add_link(t, a, b, "x2", lat["x2"]);

    for (const auto& u : doc.value("ues", nlohmann::json::array())) {
      UeSpec ue;
      ue.id = u.at("id").get<std::string>();
      ue.ip = detail::parse_addr(u, "ip");
      ue.enb = u.at("enb").get<std::string>();
      if (!t.enb_to_megw.count(ue.enb))
        throw ConfigError("UE '" + ue.id + "' references unknown eNB '" + ue.enb + "'");
      std::set<int> seen;
      for (const auto& b : u.at("bearers")) {
        BearerSpec bs{b.at("id").get<std::uint8_t>(), b.at("upstream_teid").get<std::uint32_t>(),
                      b.at("downstream_teid").get<std::uint32_t>()};
        if (!seen.insert(bs.id).second) throw ConfigError("UE '" + ue.id + "' repeats bearer id");
        ue.bearers.push_back(bs);
      }
      if (ue.bearers.empty()) throw ConfigError("UE '" + ue.id + "' has no bearers");
      detail::add_node(t, ue.id, NodeKind::Ue, ue.ip);
      for (const auto& [enb, m] : t.enb_to_megw) detail::add_link(t, ue.id, enb, "radio", lat["radio"]);
      t.ues.push_back(std::move(ue));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("topology: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("topology: ") + e.what());
  }
  for (const auto& [m, r] : t.megw_to_region) t.steering_config(m);
  return t;
}

/// Two regions: r1 = {megw1: enb1, enb2; megw2: enb3}, r2 = {megw3: enb4}.
inline nlohmann::json default_topology_json() {
  using nlohmann::json;
  auto megw = [](int n, const char* region) {
    const std::string base = "10.1." + std::to_string(n) + ".";
    return json{{"id", "megw" + std::to_string(n)},
                {"address", "10.0.0." + std::to_string(n)},
                {"region", region},
                {"weight", 1.0},
                {"dips", json::array({json{{"address", base + "10"}, {"weight", 1.0}},
                                      json{{"address", base + "11"}, {"weight", 1.0}}})}};
  };
  auto enb = [](int n, int m) {
    return json{{"id", "enb" + std::to_string(n)},
                {"address", "192.168.10." + std::to_string(n)},
                {"megw", "megw" + std::to_string(m)}};
  };
  return json{
      {"core", {{"id", "sgw"}, {"address", "192.168.0.1"}}},
      {"vips", {"10.100.1.1"}},
      {"megws", {megw(1, "r1"), megw(2, "r1"), megw(3, "r2")}},
      {"enbs", {enb(1, 1), enb(2, 1), enb(3, 2), enb(4, 3)}},
      {"ues",
       {{{"id", "ue1"},
         {"ip", "172.16.0.2"},
         {"enb", "enb1"},
         {"bearers",
          {{{"id", 5}, {"upstream_teid", 100}, {"downstream_teid", 200}},
           {{"id", 6}, {"upstream_teid", 101}, {"downstream_teid", 201}}}}}}},
      {"latency", {{"radio", 1}, {"x2", 1}, {"ran", 1}, {"core", 1}, {"peer", 1}, {"cluster", 1}}}};
}

// ---------------------------------------------------------------------------
// Trace

enum class TraceAction { Sent, Received, Dropped, Cloned, RuleInstalled, Silenced, Reactivated, MigrationNotified };

inline const char* to_string(TraceAction a) {
  static constexpr const char* kNames[] = {"Sent",          "Received", "Dropped",     "Cloned",
                                           "RuleInstalled", "Silenced", "Reactivated", "MigrationNotified"};
  return kNames[static_cast<int>(a)];
}

struct TraceEvent {
  std::uint64_t step = 0;  // position in the total order
  std::uint64_t tick = 0;  // logical time
  std::string node;
  TraceAction action = TraceAction::Sent;
  nlohmann::json detail;
};

using Trace = std::vector<TraceEvent>;

inline nlohmann::json to_json(const TraceEvent& e) {
  return {{"step", e.step}, {"tick", e.tick}, {"node", e.node}, {"action", to_string(e.action)}, {"detail", e.detail}};
}

inline std::string to_jsonl(const Trace& trace) {
  std::string out;
  for (const auto& e : trace) out += to_json(e).dump() + '\n';
  return out;
}

inline std::size_t count(const Trace& trace, TraceAction a, const std::string& node = {}) {
  return static_cast<std::size_t>(std::count_if(trace.begin(), trace.end(), [&](const TraceEvent& e) {
    return e.action == a && (node.empty() || e.node == node);
  }));
}

inline const TraceEvent* first(const Trace& trace, TraceAction a) {
  for (const auto& e : trace)
    if (e.action == a) return &e;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Frame helpers

/// Transport payload of an IPv4 packet (empty when there is none).
inline std::string l4_payload(ByteView packet) {
  const auto ip = parse_ipv4(packet);
  auto l4 = packet.subspan(ip.header_len, ip.total_len - ip.header_len);
  std::size_t skip = 0;
  if (ip.protocol == ipproto::kUdp || ip.protocol == ipproto::kIcmp) skip = 8;
  if (ip.protocol == ipproto::kTcp && l4.size() >= kTcpHeaderLen) skip = std::size_t{static_cast<std::uint8_t>(l4[12] >> 4)} * 4;
  if (l4.size() < skip) return {};
  return {l4.begin() + static_cast<std::ptrdiff_t>(skip), l4.end()};
}

inline Bytes build_flow_packet(const FiveTuple& ft, ByteView payload) {
  if (ft.proto == ipproto::kTcp) return build_tcp(ft.src_ip, ft.dst_ip, ft.src_port, ft.dst_port, payload);
  if (ft.proto == ipproto::kUdp) return build_udp(ft.src_ip, ft.dst_ip, ft.src_port, ft.dst_port, payload);
  throw StateError("flows must be TCP or UDP");
}

inline Bytes to_bytes(const std::string& s) { return Bytes(s.begin(), s.end()); }

/// Short description of a frame for trace details.
inline nlohmann::json describe(ByteView frame) {
  nlohmann::json j;
  Ipv4Header ip;
  try {
    ip = parse_ipv4(frame);
  } catch (const DecodeError& e) {
    return {{"malformed", e.what()}, {"len", frame.size()}};
  }
  j["src"] = ip.src.to_string();
  j["dst"] = ip.dst.to_string();
  j["len"] = ip.total_len;
  if (ip.protocol == ipproto::kSctp) {
    try {
      j["s1ap"] = to_string(decode_s1ap_frame(frame).kind);
    } catch (const DecodeError&) {
      j["s1ap"] = "undecodable";
    }
    return j;
  }
  try {
    const auto pkt = decode_gtpu(frame);
    j["gtp"] = to_string(pkt.message_type);
    j["teid"] = pkt.teid;
    if (!pkt.inner.empty() && pkt.message_type == GtpMessageType::GPdu) j["flow"] = inner_five_tuple(pkt.inner).to_string();
    return j;
  } catch (const DecodeError&) {
  }
  try {
    j["flow"] = inner_five_tuple(frame).to_string();
  } catch (const DecodeError&) {
  }
  return j;
}

// ---------------------------------------------------------------------------

struct EdgeResult {
  FiveTuple flow;                      // upstream orientation
  std::optional<std::string> dip_node;  // server that answered
  std::optional<std::uint32_t> echo_teid;
  std::string echo_payload;
  Trace trace;
};

struct PushResult {
  bool delivered = false;
  std::optional<std::uint32_t> teid;
  Trace trace;
};

struct HandoverReport {
  HandoverScenario scenario = HandoverScenario::SameMegw;
  std::string old_megw;
  std::string new_megw;
  std::vector<std::string> serving_before;  // per flow
  std::vector<std::string> serving_after;
  std::vector<std::optional<std::string>> dip_before;
  std::vector<std::optional<std::string>> dip_after;
  std::vector<PushResult> silence_pushes;
  std::vector<EdgeResult> post_requests;
  std::vector<PushResult> post_pushes;
  Trace trace;
};

class Harness {
 public:
  explicit Harness(Topology topo) : topo_(std::move(topo)) {
    for (const auto& [m, region] : topo_.megw_to_region)
      megws_.try_emplace(m, topo_.steering_config(m), S1apProcessor(m, topo_.control_topology()));
    for (const auto& u : topo_.ues) {
      UeState s;
      s.spec = u;
      for (const auto& b : u.bearers) s.bearers[b.id] = b;
      ues_.emplace(u.id, std::move(s));
    }
    for (const auto& [id, n] : topo_.nodes)
      if (n.kind == NodeKind::Enb) enbs_[id];
  }

  const Topology& topology() const { return topo_; }
  const Trace& trace() const { return trace_; }
  std::uint64_t now() const { return now_; }

  const RuleStore& rules(const std::string& megw) const { return gw(megw).rules; }
  const DipAffinityTable& affinity(const std::string& megw) const { return gw(megw).affinity; }
  const S1apProcessor& processor(const std::string& megw) const { return gw(megw).processor; }

  bool attached(const std::string& ue) const { return state(ue).attached; }
  const std::string& attached_enb(const std::string& ue) const { return state(ue).enb; }
  const std::string& attached_megw(const std::string& ue) const { return topo_.enb_to_megw.at(state(ue).enb); }
  const std::vector<FiveTuple>& flows(const std::string& ue) const { return state(ue).flows; }
  std::uint32_t downstream_teid(const std::string& ue, std::uint8_t bearer) const {
    return state(ue).bearers.at(bearer).downstream_teid;
  }

  /// Stage I choice for the UE as seen from its current gateway.
  std::string serving_megw(const std::string& ue) const {
    return stage1_select(state(ue).spec.ip, gw(attached_megw(ue)).cfg);
  }

  /// DIP node bound to a flow at its serving gateway, if any.
  std::optional<std::string> dip_for(const std::string& ue, const FiveTuple& flow) const {
    auto dip = gw(serving_megw(ue)).affinity.lookup(flow);
    if (!dip) return std::nullopt;
    return topo_.node_at(*dip);
  }

  /// Initial context setup between the MME stub and the eNB, through the
  /// eNB's gateway.
  Trace run_attach(const std::string& ue_id, const std::string& enb_id) {
    const auto mark = trace_.size();
    auto& ue = state(ue_id);
    const auto& enb = topo_.node(enb_id);
    if (enb.kind != NodeKind::Enb) throw ConfigError("'" + enb_id + "' is not an eNB");
    if (ue.attached && ue.enb != enb_id) enbs_[ue.enb].by_teid.clear();
    const auto core_addr = topo_.node(topo_.core).address;

    S1apLiteMessage req{S1apKind::InitialContextSetupRequest, mme_ue_id(ue_id), enb_ue_id(ue_id), ue.spec.ip, {},
                        enb.address, core_addr};
    for (const auto& [id, b] : ue.bearers) req.bearers.push_back({id, b.upstream_teid, core_addr, 0});
    send_s1ap_from_core(enb_id, req);
    run();

    S1apLiteMessage resp = req;
    resp.kind = S1apKind::InitialContextSetupResponse;
    resp.bearers.clear();
    for (const auto& [id, b] : ue.bearers) {
      resp.bearers.push_back({id, b.downstream_teid, enb.address, 0});
      enbs_[enb_id].by_teid[b.downstream_teid] = {ue_id, id};
    }
    send_s1ap_from_enb(enb_id, resp);
    run();

    ue.enb = enb_id;
    ue.attached = true;
    ue.core_silent = false;
    return slice(mark);
  }

  /// One request from the UE to a VIP on a bearer; the DIP echoes it back.
  /// `bearer` 0 picks the UE's first bearer, `src_port` 0 allocates a port.
  EdgeResult run_edge_request(const std::string& ue_id, Ipv4Address vip, const std::string& payload,
                              std::uint8_t bearer = 0, std::uint16_t src_port = 0, std::uint16_t dst_port = 8080,
                              std::uint8_t proto = ipproto::kUdp) {
    auto& ue = state(ue_id);
    if (!ue.attached) throw StateError("UE '" + ue_id + "' is not attached");
    if (bearer == 0) bearer = ue.bearers.begin()->first;
    if (!ue.bearers.count(bearer)) throw StateError("UE '" + ue_id + "' has no bearer " + std::to_string(bearer));
    if (src_port == 0) src_port = static_cast<std::uint16_t>(40000 + ue.flows.size());
    const FiveTuple flow{ue.spec.ip, vip, proto, src_port, dst_port};
    if (std::find(ue.flows.begin(), ue.flows.end(), flow) == ue.flows.end()) {
      ue.flows.push_back(flow);
      ue.flow_bearer[flow] = bearer;
    }
    const auto mark = trace_.size();
    schedule(ue_id, ue.enb, Direction::FromRan, build_flow_packet(flow, to_bytes(payload)), bearer);
    run();
    EdgeResult r;
    r.flow = flow;
    r.trace = slice(mark);
    for (const auto& e : r.trace) {
      if (e.action != TraceAction::Received) continue;
      const auto& n = topo_.node(e.node);
      if (n.kind == NodeKind::Dip && e.detail.value("payload", "") == payload) r.dip_node = e.node;
      if (n.kind == NodeKind::Ue && e.node == ue_id) {
        r.echo_teid = e.detail.at("teid").get<std::uint32_t>();
        r.echo_payload = e.detail.value("payload", "");
      }
    }
    return r;
  }

  /// Server-initiated packet on an existing flow, sent by the DIP that owns
  /// the flow at its serving gateway.
  PushResult run_downstream_push(const std::string& ue_id, const FiveTuple& flow, const std::string& payload) {
    const auto serving = serving_megw(ue_id);
    auto dip = gw(serving).affinity.lookup(flow);
    if (!dip) throw StateError("flow " + flow.to_string() + " has no DIP at " + serving);
    auto reply = flow.reversed();
    reply.src_ip = *dip;
    const auto dip_node = *topo_.node_at(*dip);
    const auto mark = trace_.size();
    schedule(dip_node, topo_.dip_owner.at(dip_node), Direction::FromCluster, build_flow_packet(reply, to_bytes(payload)));
    run();
    PushResult r;
    r.trace = slice(mark);
    for (const auto& e : r.trace)
      if (e.action == TraceAction::Received && e.node == ue_id && e.detail.value("payload", "") == payload) {
        r.delivered = true;
        r.teid = e.detail.at("teid").get<std::uint32_t>();
      }
    return r;
  }

  /// X2 handover. Replays the request/ack over X2, the path switch request
  /// seen by the old gateway, one end marker per bearer on the old path, a
  /// server push inside the silent period, the path switch acknowledge seen by
  /// the new gateway, then a fresh request and push on every known flow.
  HandoverReport run_x2_handover(const std::string& ue_id, const std::string& old_enb, const std::string& new_enb) {
    auto& ue = state(ue_id);
    if (!ue.attached) throw StateError("UE '" + ue_id + "' is not attached");
    if (ue.enb != old_enb) throw StateError("UE '" + ue_id + "' is attached at " + ue.enb + ", not " + old_enb);
    if (topo_.node(new_enb).kind != NodeKind::Enb) throw ConfigError("'" + new_enb + "' is not an eNB");
    if (new_enb == old_enb) throw StateError("handover to the serving eNB");

    const auto mark = trace_.size();
    HandoverReport rep;
    rep.old_megw = topo_.enb_to_megw.at(old_enb);
    rep.new_megw = topo_.enb_to_megw.at(new_enb);
    rep.scenario = classify_handover(topo_.node(old_enb).address, topo_.node(new_enb).address, topo_.control_topology());
    for (const auto& f : ue.flows) {
      rep.serving_before.push_back(serving_megw(ue_id));
      rep.dip_before.push_back(dip_for(ue_id, f));
    }

    const auto core_addr = topo_.node(topo_.core).address;
    const auto new_addr = topo_.node(new_enb).address;

    // Steps 1-2: X2 request and acknowledge; the target allocates TEIDs.
    std::map<std::uint8_t, std::uint32_t> new_teids;
    for (const auto& [id, b] : ue.bearers) new_teids[id] = enbs_[new_enb].allocate();
    schedule_x2(old_enb, new_enb, "HandoverRequest");
    run();
    for (const auto& [id, t] : new_teids) enbs_[new_enb].by_teid[t] = {ue_id, id};
    schedule_x2(new_enb, old_enb, "HandoverRequestAcknowledge");
    run();

    // Step 3: path switch request, seen by the old gateway.
    S1apLiteMessage psr{S1apKind::PathSwitchRequest, mme_ue_id(ue_id), enb_ue_id(ue_id), ue.spec.ip, {}, new_addr,
                        core_addr};
    for (const auto& [id, t] : new_teids) psr.bearers.push_back({id, t, new_addr, ue.bearers.at(id).upstream_teid});
    send_s1ap_from_enb(old_enb, psr);
    run();

    // Steps 5-6: end markers close the old path; the silent period starts.
    ue.core_silent = true;
    for (const auto& [id, b] : ue.bearers) {
      GtpuPacket em{core_addr, topo_.node(old_enb).address, b.downstream_teid, GtpMessageType::EndMarker, {}};
      schedule(topo_.core, rep.old_megw, Direction::FromCore, encode_gtpu(em));
    }
    run();

    int probe = 0;
    for (const auto& f : ue.flows)
      rep.silence_pushes.push_back(run_downstream_push(ue_id, f, "silent-push-" + std::to_string(++probe)));

    // Step 8: path switch acknowledge, seen by the new gateway.
    S1apLiteMessage ack = psr;
    ack.kind = S1apKind::PathSwitchAcknowledge;
    send_s1ap_from_core(new_enb, ack);
    run();
    for (auto& [id, b] : ue.bearers) b.downstream_teid = new_teids.at(id);
    ue.enb = new_enb;
    ue.core_silent = false;

    const auto flows = ue.flows;
    for (const auto& f : flows) {
      rep.post_requests.push_back(run_edge_request(ue_id, f.dst_ip, "after-handover-" + std::to_string(f.src_port),
                                                   ue.flow_bearer.at(f), f.src_port, f.dst_port, f.proto));
      rep.serving_after.push_back(serving_megw(ue_id));
      rep.dip_after.push_back(dip_for(ue_id, f));
    }
    probe = 0;
    for (const auto& f : flows)
      rep.post_pushes.push_back(run_downstream_push(ue_id, f, "silent-push-" + std::to_string(++probe)));
    rep.trace = slice(mark);
    return rep;
  }

 private:
  struct Gateway {
    Gateway(SteeringConfig c, S1apProcessor p) : cfg(std::move(c)), processor(std::move(p)) {}
    SteeringConfig cfg;
    RuleStore rules;
    DipAffinityTable affinity;
    S1apProcessor processor;
  };

  struct EnbState {
    std::map<std::uint32_t, std::pair<std::string, std::uint8_t>> by_teid;  // downstream TEID -> (UE, bearer)
    std::uint32_t next = 0;
    std::uint32_t allocate() { return 0x10000 + (++next); }
  };

  struct UeState {
    UeSpec spec;
    std::map<std::uint8_t, BearerSpec> bearers;
    std::string enb;
    bool attached = false;
    bool core_silent = false;
    std::vector<FiveTuple> flows;
    std::map<FiveTuple, std::uint8_t> flow_bearer;
  };

  struct Delivery {
    std::uint64_t tick = 0;
    std::uint64_t seq = 0;
    std::string from;
    std::string to;
    Direction ingress = Direction::FromCore;
    Bytes frame;
    std::uint8_t bearer = 0;       // radio only
    std::uint32_t teid = 0;        // radio only
    std::string label;             // x2 only

    bool operator>(const Delivery& o) const { return std::tie(tick, seq) > std::tie(o.tick, o.seq); }
  };

  Gateway& gw(const std::string& m) {
    auto it = megws_.find(m);
    if (it == megws_.end()) throw TopologyError("unknown MEGW '" + m + "'");
    return it->second;
  }
  const Gateway& gw(const std::string& m) const { return const_cast<Harness*>(this)->gw(m); }

  UeState& state(const std::string& id) {
    auto it = ues_.find(id);
    if (it == ues_.end()) throw ConfigError("unknown UE '" + id + "'");
    return it->second;
  }
  const UeState& state(const std::string& id) const { return const_cast<Harness*>(this)->state(id); }

  std::uint32_t mme_ue_id(const std::string& ue) const {
    return static_cast<std::uint32_t>(std::distance(ues_.begin(), ues_.find(ue)) + 1);
  }
  std::uint32_t enb_ue_id(const std::string& ue) const { return 1000 + mme_ue_id(ue); }

  Trace slice(std::size_t mark) const { return Trace(trace_.begin() + static_cast<std::ptrdiff_t>(mark), trace_.end()); }

  void record(const std::string& node, TraceAction a, nlohmann::json detail) {
    trace_.push_back({trace_.size(), now_, node, a, std::move(detail)});
  }

  void schedule(const std::string& from, const std::string& to, Direction ingress, Bytes frame,
                std::uint8_t bearer = 0, std::uint32_t teid = 0) {
    const auto& l = topo_.link(from, to);
    auto d = describe(frame);
    d["to"] = to;
    d["port"] = l.port;
    record(from, TraceAction::Sent, std::move(d));
    queue_.push(Delivery{now_ + l.latency, seq_++, from, to, ingress, std::move(frame), bearer, teid, {}});
  }

  void schedule_x2(const std::string& from, const std::string& to, const std::string& label) {
    const auto& l = topo_.link(from, to);
    record(from, TraceAction::Sent, {{"to", to}, {"port", l.port}, {"x2", label}});
    queue_.push(Delivery{now_ + l.latency, seq_++, from, to, Direction::FromRan, {}, 0, 0, label});
  }

  void send_s1ap_from_core(const std::string& enb, const S1apLiteMessage& msg) {
    schedule(topo_.core, topo_.enb_to_megw.at(enb), Direction::FromCore,
             encode_s1ap_frame(topo_.node(topo_.core).address, topo_.node(enb).address, msg));
  }

  void send_s1ap_from_enb(const std::string& enb, const S1apLiteMessage& msg) {
    schedule(enb, topo_.enb_to_megw.at(enb), Direction::FromRan,
             encode_s1ap_frame(topo_.node(enb).address, topo_.node(topo_.core).address, msg));
  }

  void run() {
    while (!queue_.empty()) {
      Delivery d = queue_.top();
      queue_.pop();
      now_ = d.tick;
      switch (topo_.node(d.to).kind) {
        case NodeKind::Megw: on_megw(d); break;
        case NodeKind::Enb: on_enb(d); break;
        case NodeKind::Core: on_core(d); break;
        case NodeKind::Dip: on_dip(d); break;
        case NodeKind::Ue: on_ue(d); break;
      }
    }
  }

  const UeState* ue_with_ip(Ipv4Address ip) const {
    for (const auto& [id, s] : ues_)
      if (s.spec.ip == ip) return &s;
    return nullptr;
  }

  // Next hop for a routed packet leaving `from`.
  void route(const std::string& from, Ipv4Address dst, Bytes frame) {
    if (const auto* ue = ue_with_ip(dst); ue && ue->attached) {
      const auto& m = topo_.enb_to_megw.at(ue->enb);
      if (m != from) return schedule(from, m, Direction::FromCore, std::move(frame));
      return schedule(from, topo_.core, Direction::FromCore, std::move(frame));
    }
    const auto node = topo_.node_at(dst);
    if (!node) return record(from, TraceAction::Dropped, {{"reason", "no route to " + dst.to_string()}});
    switch (topo_.node(*node).kind) {
      case NodeKind::Enb: {
        const auto& m = topo_.enb_to_megw.at(*node);
        if (m == from) return schedule(from, *node, Direction::FromCore, std::move(frame));
        return schedule(from, m, Direction::FromCore, std::move(frame));
      }
      case NodeKind::Megw:
        if (*node == from) break;
        return schedule(from, *node, Direction::FromCore, std::move(frame));
      case NodeKind::Core:
      case NodeKind::Dip:
        if (topo_.links.count({from, *node})) return schedule(from, *node, Direction::FromCore, std::move(frame));
        break;
      case NodeKind::Ue: break;
    }
    record(from, TraceAction::Dropped, {{"reason", "no route to " + dst.to_string()}});
  }

  void on_megw(const Delivery& d) {
    auto& g = gw(d.to);
    for (auto& act : flatten(process_packet(d.frame, d.ingress, g.cfg, g.rules, g.affinity))) {
      if (auto* e = std::get_if<Emit>(&act)) {
        switch (e->port) {
          case EgressPort::Router: route(d.to, e->next_hop, std::move(e->frame)); break;
          case EgressPort::Peer: schedule(d.to, e->peer, Direction::FromCore, std::move(e->frame)); break;
          case EgressPort::Cluster:
          case EgressPort::Ran: {
            const auto node = topo_.node_at(e->next_hop);
            if (!node || !topo_.links.count({d.to, *node})) {
              record(d.to, TraceAction::Dropped, {{"reason", "no link to " + e->next_hop.to_string()}});
              break;
            }
            schedule(d.to, *node, Direction::FromCore, std::move(e->frame));
            break;
          }
        }
      } else if (auto* c = std::get_if<CloneToController>(&act)) {
        on_clone(d.to, g, c->event);
      } else {
        auto detail = describe(d.frame);
        detail["reason"] = std::get<Drop>(act).reason;
        record(d.to, TraceAction::Dropped, std::move(detail));
      }
    }
  }

  void on_clone(const std::string& megw, Gateway& g, const ControllerEvent& ev) {
    static constexpr const char* kEvents[] = {"S1apClone", "EndMarkerSeen", "FlowMiss"};
    const auto effects = g.processor.on_event(ev);
    nlohmann::json names = nlohmann::json::array();
    for (const auto& te : effects) names.push_back(effect_name(te.effect));
    record(megw, TraceAction::Cloned, {{"event", kEvents[ev.index()]}, {"effects", names}});
    for (const auto& te : effects) {
      std::vector<TimedEffect> one{te};
      const auto applied = apply_effects(one, g.rules);
      auto j = to_json(te);
      if (std::holds_alternative<InstallRuleEffect>(te.effect)) {
        record(megw, TraceAction::RuleInstalled, j);
      } else if (std::holds_alternative<SetUeSilentEffect>(te.effect)) {
        j["rules"] = applied.silenced;
        record(megw, TraceAction::Silenced, j);
      } else if (std::holds_alternative<ReactivateUeEffect>(te.effect)) {
        j["rules"] = applied.reactivated;
        record(megw, TraceAction::Reactivated, j);
      } else if (std::holds_alternative<MigrationNotice>(te.effect)) {
        record(megw, TraceAction::MigrationNotified, j);
      }
    }
  }

  void on_enb(const Delivery& d) {
    auto& enb = enbs_[d.to];
    const auto from_kind = topo_.node(d.from).kind;
    if (from_kind == NodeKind::Enb) return record(d.to, TraceAction::Received, {{"from", d.from}, {"x2", d.label}});
    if (from_kind == NodeKind::Ue) {
      const auto& ue = state(d.from);
      GtpuPacket pkt{topo_.node(d.to).address, topo_.node(topo_.core).address,
                     ue.bearers.at(d.bearer).upstream_teid, GtpMessageType::GPdu, d.frame};
      return schedule(d.to, topo_.enb_to_megw.at(d.to), Direction::FromRan, encode_gtpu(pkt));
    }
    auto detail = describe(d.frame);
    if (detail.contains("s1ap")) return record(d.to, TraceAction::Received, detail);
    GtpuPacket pkt;
    try {
      pkt = decode_gtpu(d.frame);
    } catch (const DecodeError& e) {
      detail["reason"] = std::string("not GTP-U: ") + e.what();
      return record(d.to, TraceAction::Dropped, detail);
    }
    if (pkt.message_type == GtpMessageType::EndMarker) {
      enb.by_teid.erase(pkt.teid);
      return record(d.to, TraceAction::Received, detail);
    }
    auto it = enb.by_teid.find(pkt.teid);
    if (it == enb.by_teid.end()) {
      detail["reason"] = "unknown TEID";
      return record(d.to, TraceAction::Dropped, detail);
    }
    const auto& [ue, bearer] = it->second;
    schedule(d.to, ue, Direction::FromCore, std::move(pkt.inner), bearer, pkt.teid);
  }

  void on_ue(const Delivery& d) {
    auto detail = describe(d.frame);
    detail["teid"] = d.teid;
    detail["bearer"] = d.bearer;
    detail["payload"] = l4_payload(d.frame);
    record(d.to, TraceAction::Received, std::move(detail));
  }

  void on_dip(const Delivery& d) {
    auto detail = describe(d.frame);
    FiveTuple ft;
    std::string payload;
    try {
      ft = inner_five_tuple(d.frame);
      payload = l4_payload(d.frame);
    } catch (const DecodeError& e) {
      detail["reason"] = e.what();
      return record(d.to, TraceAction::Dropped, detail);
    }
    detail["payload"] = payload;
    record(d.to, TraceAction::Received, detail);
    if (ft.proto != ipproto::kUdp && ft.proto != ipproto::kTcp) return;
    schedule(d.to, d.from, Direction::FromCluster, build_flow_packet(ft.reversed(), to_bytes(payload)));
  }

  void on_core(const Delivery& d) {
    auto detail = describe(d.frame);
    if (detail.contains("s1ap") || detail.contains("gtp")) return record(d.to, TraceAction::Received, detail);
    Ipv4Header ip;
    try {
      ip = parse_ipv4(d.frame);
    } catch (const DecodeError&) {
      detail["reason"] = "malformed";
      return record(d.to, TraceAction::Dropped, detail);
    }
    const auto* ue = ue_with_ip(ip.dst);
    if (!ue || !ue->attached) return record(d.to, TraceAction::Received, detail);
    if (ue->core_silent) {
      detail["reason"] = "silent period";
      return record(d.to, TraceAction::Dropped, detail);
    }
    // Ordinary downlink over the UE's first bearer.
    const auto& b = ue->bearers.begin()->second;
    GtpuPacket pkt{topo_.node(d.to).address, topo_.node(ue->enb).address, b.downstream_teid, GtpMessageType::GPdu,
                   d.frame};
    schedule(d.to, topo_.enb_to_megw.at(ue->enb), Direction::FromCore, encode_gtpu(pkt));
  }

  Topology topo_;
  std::map<std::string, Gateway> megws_;
  std::map<std::string, UeState> ues_;
  std::map<std::string, EnbState> enbs_;
  std::priority_queue<Delivery, std::vector<Delivery>, std::greater<>> queue_;
  std::uint64_t now_ = 0;
  std::uint64_t seq_ = 0;
  Trace trace_;
};

// ---------------------------------------------------------------------------
// Handover checks

struct Check {
  std::string name;
  bool ok = false;
  std::string detail;
};

/// Expected effects of a handover for its scenario.
inline std::vector<Check> check_handover(const HandoverReport& rep) {
  std::vector<Check> out;
  const auto* silenced = first(rep.trace, TraceAction::Silenced);
  const auto* reactivated = first(rep.trace, TraceAction::Reactivated);
  out.push_back({"silenced precedes reactivated", silenced && reactivated && silenced->step < reactivated->step,
                 silenced && reactivated ? std::to_string(silenced->step) + " < " + std::to_string(reactivated->step)
                                         : "missing event"});

  bool all_dropped = !rep.silence_pushes.empty();
  for (const auto& p : rep.silence_pushes)
    all_dropped = all_dropped && !p.delivered && count(p.trace, TraceAction::Dropped) > 0;
  out.push_back({"silent-period pushes dropped", all_dropped, std::to_string(rep.silence_pushes.size()) + " pushes"});

  bool all_received = !rep.post_pushes.empty();
  for (const auto& p : rep.post_pushes) all_received = all_received && p.delivered;
  out.push_back({"pushes after acknowledge delivered", all_received, std::to_string(rep.post_pushes.size()) + " pushes"});

  if (rep.scenario != HandoverScenario::CrossRegion) {
    const bool same = rep.serving_before == rep.serving_after && rep.dip_before == rep.dip_after &&
                      std::all_of(rep.dip_after.begin(), rep.dip_after.end(), [](const auto& d) { return d.has_value(); });
    out.push_back({"serving MEC and DIP preserved", same,
                   rep.serving_before.empty() ? "no flows" : rep.serving_before.front() + " -> " + rep.serving_after.front()});
  }

  const auto notices = count(rep.trace, TraceAction::MigrationNotified);
  const std::size_t want = rep.scenario == HandoverScenario::CrossRegion ? 1 : 0;
  bool at_start = true;
  for (const auto& e : rep.trace)
    if (e.action == TraceAction::MigrationNotified)
      at_start = at_start && silenced && e.tick == silenced->tick && e.node == silenced->node &&
                 e.detail.at("at") == silenced->detail.at("at");
  out.push_back({"migration notices", notices == want && at_start,
                 std::to_string(notices) + " issued, " + std::to_string(want) + " expected"});
  return out;
}

// ---------------------------------------------------------------------------
// Scripts

inline const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names{"attach",        "edge-request",   "multi-bearer",
                                              "x2-same-megw",  "x2-same-region", "x2-cross-region"};
  return names;
}

/// Built-in scripts against the default topology.
inline nlohmann::json builtin_scenario(const std::string& name) {
  using nlohmann::json;
  const json attach{{"op", "attach"}, {"ue", "ue1"}, {"enb", "enb1"}};
  const json request{{"op", "edge_request"}, {"ue", "ue1"}, {"vip", "10.100.1.1"}, {"bearer", 5}, {"payload", "hello"}};
  const json request6{{"op", "edge_request"}, {"ue", "ue1"}, {"vip", "10.100.1.1"}, {"bearer", 6}, {"payload", "hello-6"}};
  auto handover = [&](const char* to) {
    return json{{"name", name},
                {"steps", {attach, request, request6, {{"op", "x2_handover"}, {"ue", "ue1"}, {"from", "enb1"}, {"to", to}}}}};
  };
  if (name == "attach") return {{"name", name}, {"steps", {attach}}};
  if (name == "edge-request") return {{"name", name}, {"steps", {attach, request}}};
  if (name == "multi-bearer") return {{"name", name}, {"steps", {attach, request, request6}}};
  if (name == "x2-same-megw") return handover("enb2");
  if (name == "x2-same-region") return handover("enb3");
  if (name == "x2-cross-region") return handover("enb4");
  throw ConfigError("unknown scenario '" + name + "'");
}

struct ScriptResult {
  std::vector<Check> checks;
  bool ok() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.ok; });
  }
};

/// Runs a script document: {"steps": [{"op": ...}, ...]}.
/// Ops: attach{ue, enb}, edge_request{ue, vip, payload, bearer?, src_port?, dst_port?},
/// x2_handover{ue, from, to}, push{ue, flow (index), payload}.
inline ScriptResult run_script(Harness& h, const nlohmann::json& script) {
  ScriptResult res;
  try {
    for (const auto& s : script.at("steps")) {
      auto str = [&](const char* key) { return s.at(key).get<std::string>(); };
      const auto op = str("op");
      if (op == "attach") {
        auto t = h.run_attach(str("ue"), str("enb"));
        res.checks.push_back({"attach " + str("ue") + ": 2 clones, 0 rules",
                              count(t, TraceAction::Cloned) == 2 && count(t, TraceAction::RuleInstalled) == 0, ""});
      } else if (op == "edge_request") {
        const auto r = h.run_edge_request(str("ue"), Ipv4Address::parse(str("vip")),
                                          s.value("payload", "ping"), s.value("bearer", std::uint8_t{0}),
                                          s.value("src_port", std::uint16_t{0}), s.value("dst_port", std::uint16_t{8080}));
        const auto bearer = s.value("bearer", std::uint8_t{0});
        bool ok = r.dip_node.has_value() && r.echo_teid.has_value();
        if (ok && bearer) ok = *r.echo_teid == h.downstream_teid(str("ue"), bearer);
        res.checks.push_back({"edge request " + r.flow.to_string(), ok,
                              r.dip_node ? "dip " + *r.dip_node + ", teid " + (r.echo_teid ? std::to_string(*r.echo_teid) : "-")
                                         : "no DIP reached"});
      } else if (op == "x2_handover") {
        const auto rep = h.run_x2_handover(str("ue"), str("from"), str("to"));
        for (auto c : check_handover(rep)) {
          c.name = std::string(to_string(rep.scenario)) + ": " + c.name;
          res.checks.push_back(std::move(c));
        }
      } else if (op == "push") {
        const auto& flows = h.flows(str("ue"));
        const auto idx = s.value("flow", std::size_t{0});
        if (idx >= flows.size()) throw ConfigError("push: no flow " + std::to_string(idx));
        const auto r = h.run_downstream_push(str("ue"), flows[idx], s.value("payload", "push"));
        res.checks.push_back({"push on " + flows[idx].to_string(), r.delivered, ""});
      } else {
        throw ConfigError("unknown op '" + op + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("script: ") + e.what());
  }
  return res;
}

}  // namespace megw::harness
