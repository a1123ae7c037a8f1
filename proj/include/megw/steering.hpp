#pragma once

// Gateway data plane: service offloader, load balancer I (stateless
// rendezvous over the region's gateways) and load balancer II (rendezvous
// seeded connection table over the local service instances).

#include <algorithm>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "json.hpp"
#include "megw/errors.hpp"
#include "megw/gtp.hpp"
#include "megw/ipv4.hpp"
#include "megw/rendezvous.hpp"

namespace megw {

struct RegionPeer {
  std::string megw_id;
  Ipv4Address address;
  double weight = 1.0;
};

struct SteeringConfig {
  std::string megw_id;
  std::vector<Ipv4Address> vips;
  std::vector<RegionPeer> region_peers;
  std::vector<WeightedCandidate<Ipv4Address>> dips;
  Ipv4Address local_sgw;

  bool is_vip(Ipv4Address a) const { return std::find(vips.begin(), vips.end(), a) != vips.end(); }

  const RegionPeer& peer(const std::string& id) const {
    for (const auto& p : region_peers)
      if (p.megw_id == id) return p;
    throw ConfigError("unknown region peer '" + id + "'");
  }

  std::vector<WeightedCandidate<std::string>> stage1_candidates() const {
    std::vector<WeightedCandidate<std::string>> out;
    out.reserve(region_peers.size());
    for (const auto& p : region_peers) out.push_back({p.megw_id, p.weight});
    return out;
  }

  void validate() const {
    if (megw_id.empty()) throw ConfigError("megw_id is empty");
    std::size_t self = 0;
    for (const auto& p : region_peers) {
      if (!(p.weight > 0)) throw ConfigError("region peer '" + p.megw_id + "' has non-positive weight");
      if (p.megw_id == megw_id) ++self;
    }
    if (self != 1) throw ConfigError("megw_id must appear exactly once in region_peers");
    for (const auto& d : dips)
      if (!(d.weight > 0)) throw ConfigError("DIP " + d.id.to_string() + " has non-positive weight");
  }
};

inline SteeringConfig steering_config_from_json(const nlohmann::json& j) {
  SteeringConfig cfg;
  try {
    cfg.megw_id = j.at("megw_id").get<std::string>();
    for (const auto& v : j.at("vips")) cfg.vips.push_back(Ipv4Address::parse(v.get<std::string>()));
    for (const auto& p : j.at("region_peers"))
      cfg.region_peers.push_back({p.at("megw_id").get<std::string>(),
                                  Ipv4Address::parse(p.at("address").get<std::string>()),
                                  p.value("weight", 1.0)});
    for (const auto& d : j.at("dips"))
      cfg.dips.push_back({Ipv4Address::parse(d.at("address").get<std::string>()), d.value("weight", 1.0)});
    cfg.local_sgw = Ipv4Address::parse(j.at("local_sgw").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("steering config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("steering config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

inline nlohmann::json to_json(const SteeringConfig& cfg) {
  nlohmann::json j;
  j["megw_id"] = cfg.megw_id;
  j["vips"] = nlohmann::json::array();
  for (auto v : cfg.vips) j["vips"].push_back(v.to_string());
  j["region_peers"] = nlohmann::json::array();
  for (const auto& p : cfg.region_peers)
    j["region_peers"].push_back({{"megw_id", p.megw_id}, {"address", p.address.to_string()}, {"weight", p.weight}});
  j["dips"] = nlohmann::json::array();
  for (const auto& d : cfg.dips) j["dips"].push_back({{"address", d.id.to_string()}, {"weight", d.weight}});
  j["local_sgw"] = cfg.local_sgw.to_string();
  return j;
}

enum class RuleState { Active, Silent };

struct FlowRule {
  FiveTuple key;  // upstream orientation: UE -> VIP
  std::uint32_t downstream_teid = 0;
  Ipv4Address enb_addr;
  Ipv4Address sgw_addr;
  std::uint8_t bearer_id = 0;
  RuleState state = RuleState::Active;

  friend bool operator==(const FlowRule&, const FlowRule&) = default;
};

/// 5-tuple rule table. One writer (the controller) and any number of packet
/// contexts; every operation is atomic per call.
class RuleStore {
 public:
  void install(const FlowRule& rule) {
    std::unique_lock lock(mu_);
    auto [it, inserted] = rules_.try_emplace(rule.key, rule);
    if (inserted) return;
    if (it->second.downstream_teid != rule.downstream_teid)
      throw ConflictError("rule for " + rule.key.to_string() + " already maps to TEID " +
                          std::to_string(it->second.downstream_teid) + ", not " +
                          std::to_string(rule.downstream_teid));
  }

  std::optional<FlowRule> lookup(const FiveTuple& key) const {
    std::shared_lock lock(mu_);
    auto it = rules_.find(key);
    if (it == rules_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t set_ue_silent(Ipv4Address ue_ip) {
    std::unique_lock lock(mu_);
    std::size_t n = 0;
    for (auto& [key, rule] : rules_)
      if (key.src_ip == ue_ip) {
        rule.state = RuleState::Silent;
        ++n;
      }
    return n;
  }

  // Rebinds each of the UE's rules to the new downstream TEID of its bearer.
  // Rules whose bearer is absent from the map are left as they are.
  std::size_t reactivate_ue(Ipv4Address ue_ip, const std::map<std::uint8_t, std::uint32_t>& teid_by_bearer,
                            Ipv4Address enb_addr) {
    std::unique_lock lock(mu_);
    std::size_t n = 0;
    for (auto& [key, rule] : rules_) {
      if (key.src_ip != ue_ip) continue;
      auto b = teid_by_bearer.find(rule.bearer_id);
      if (b == teid_by_bearer.end()) continue;
      rule.downstream_teid = b->second;
      rule.enb_addr = enb_addr;
      rule.state = RuleState::Active;
      ++n;
    }
    return n;
  }

  std::size_t reactivate_ue(Ipv4Address ue_ip, std::uint32_t downstream_teid, Ipv4Address enb_addr) {
    std::unique_lock lock(mu_);
    std::size_t n = 0;
    for (auto& [key, rule] : rules_)
      if (key.src_ip == ue_ip) {
        rule.downstream_teid = downstream_teid;
        rule.enb_addr = enb_addr;
        rule.state = RuleState::Active;
        ++n;
      }
    return n;
  }

  std::size_t remove_ue(Ipv4Address ue_ip) {
    std::unique_lock lock(mu_);
    return std::erase_if(rules_, [&](const auto& kv) { return kv.first.src_ip == ue_ip; });
  }

  std::size_t count_for(Ipv4Address ue_ip) const {
    std::shared_lock lock(mu_);
    return static_cast<std::size_t>(
        std::count_if(rules_.begin(), rules_.end(), [&](const auto& kv) { return kv.first.src_ip == ue_ip; }));
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return rules_.size();
  }

  std::vector<FlowRule> snapshot() const {
    std::shared_lock lock(mu_);
    std::vector<FlowRule> out;
    out.reserve(rules_.size());
    for (const auto& kv : rules_) out.push_back(kv.second);
    std::sort(out.begin(), out.end(), [](const FlowRule& a, const FlowRule& b) { return a.key < b.key; });
    return out;
  }

 private:
  mutable std::shared_mutex mu_;
  std::unordered_map<FiveTuple, FlowRule> rules_;
};

inline void install_rule(RuleStore& rules, const FlowRule& rule) { rules.install(rule); }
inline std::size_t set_ue_silent(RuleStore& rules, Ipv4Address ue_ip) { return rules.set_ue_silent(ue_ip); }
inline std::size_t reactivate_ue(RuleStore& rules, Ipv4Address ue_ip, std::uint32_t downstream_teid,
                                 Ipv4Address enb_addr) {
  return rules.reactivate_ue(ue_ip, downstream_teid, enb_addr);
}

/// Connection-to-DIP table of load balancer II. An entry never changes once
/// created. Also remembers which VIP a DIP stands in for, so replies can be
/// restored to the VIP source address.
class DipAffinityTable {
 public:
  template <class Choose>
  Ipv4Address get_or_insert(const FiveTuple& flow, Choose&& choose) {
    {
      std::shared_lock lock(mu_);
      if (auto it = forward_.find(flow); it != forward_.end()) return it->second;
    }
    std::unique_lock lock(mu_);
    if (auto it = forward_.find(flow); it != forward_.end()) return it->second;
    const Ipv4Address dip = choose();
    forward_.emplace(flow, dip);
    FiveTuple reply = flow.reversed();
    reply.src_ip = dip;
    reverse_.emplace(reply, flow.dst_ip);
    return dip;
  }

  std::optional<Ipv4Address> lookup(const FiveTuple& flow) const {
    std::shared_lock lock(mu_);
    auto it = forward_.find(flow);
    if (it == forward_.end()) return std::nullopt;
    return it->second;
  }

  // VIP behind a reply packet's (DIP) source, if the reply belongs to a known flow.
  std::optional<Ipv4Address> vip_for_reply(const FiveTuple& reply) const {
    std::shared_lock lock(mu_);
    auto it = reverse_.find(reply);
    if (it == reverse_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return forward_.size();
  }

 private:
  mutable std::shared_mutex mu_;
  std::unordered_map<FiveTuple, Ipv4Address> forward_;
  std::unordered_map<FiveTuple, Ipv4Address> reverse_;
};

inline const std::string& stage1_select(Ipv4Address ue_ip, const SteeringConfig& cfg) {
  const auto key = key_bytes(ue_ip);
  // Hashed on the peer id, not its position, so every gateway agrees.
  const auto cands = cfg.stage1_candidates();
  return cfg.region_peers[rendezvous_index(key, std::span<const WeightedCandidate<std::string>>(cands))].megw_id;
}

inline Bytes five_tuple_key(const FiveTuple& t) {
  Bytes k;
  put_u32(k, t.src_ip.value());
  put_u32(k, t.dst_ip.value());
  put_u8(k, t.proto);
  put_u16(k, t.src_port);
  put_u16(k, t.dst_port);
  return k;
}

inline Ipv4Address stage2_select(const FiveTuple& flow, DipAffinityTable& table, const SteeringConfig& cfg) {
  return table.get_or_insert(flow, [&] {
    if (cfg.dips.empty()) throw SelectError("empty DIP pool at " + cfg.megw_id);
    return rendezvous_select(five_tuple_key(flow), cfg.dips);
  });
}

// ---------------------------------------------------------------------------
// Forwarding decisions

enum class EgressPort { Router, Peer, Cluster, Ran };

inline const char* to_string(EgressPort p) {
  switch (p) {
    case EgressPort::Router: return "router";
    case EgressPort::Peer: return "peer";
    case EgressPort::Cluster: return "cluster";
    case EgressPort::Ran: return "ran";
  }
  return "?";
}

struct Emit {
  EgressPort port = EgressPort::Router;
  std::string peer;        // megw_id, set for EgressPort::Peer
  Ipv4Address next_hop;    // routed destination, DIP, eNB or peer address
  Bytes frame;
};

struct S1apClone {
  Bytes frame;
};

struct EndMarkerSeen {
  std::uint32_t teid = 0;
  Ipv4Address enb_addr;
};

struct FlowMiss {
  FiveTuple five_tuple;
  std::uint32_t upstream_teid = 0;
  Ipv4Address enb_addr;
  Ipv4Address sgw_addr;
};

using ControllerEvent = std::variant<S1apClone, EndMarkerSeen, FlowMiss>;

struct CloneToController {
  ControllerEvent event;
};

struct Drop {
  std::string reason;
};

using SimpleAction = std::variant<Emit, CloneToController, Drop>;

struct Multiple {
  std::vector<SimpleAction> actions;
};

using ForwardAction = std::variant<Emit, CloneToController, Drop, Multiple>;

inline std::vector<SimpleAction> flatten(ForwardAction action) {
  return std::visit(
      [](auto&& a) -> std::vector<SimpleAction> {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, Multiple>)
          return std::move(a.actions);
        else
          return {std::move(a)};
      },
      std::move(action));
}

namespace detail {

inline ForwardAction multiple(SimpleAction a, SimpleAction b) {
  Multiple m;
  m.actions.push_back(std::move(a));
  m.actions.push_back(std::move(b));
  return m;
}

inline SimpleAction to_simple(ForwardAction a) {
  auto v = flatten(std::move(a));
  return std::move(v.front());
}

inline Emit route(ByteView bytes, Ipv4Address dst) { return Emit{EgressPort::Router, {}, dst, Bytes(bytes.begin(), bytes.end())}; }

// Load balancer I then, for local selections, load balancer II.
inline ForwardAction steer_to_service(Bytes inner, const FiveTuple& ft, const SteeringConfig& cfg,
                                      DipAffinityTable& affinity) {
  const auto& serving = stage1_select(ft.src_ip, cfg);
  if (serving != cfg.megw_id) {
    const auto& p = cfg.peer(serving);
    return Emit{EgressPort::Peer, p.megw_id, p.address, std::move(inner)};
  }
  const auto dip = stage2_select(ft, affinity, cfg);
  rewrite_ipv4_dst(inner, dip);
  return Emit{EgressPort::Cluster, {}, dip, std::move(inner)};
}

}  // namespace detail

/// Per-packet forwarding decision. Never throws on malformed input.
inline ForwardAction process_packet(ByteView bytes, Direction ingress, const SteeringConfig& cfg,
                                    RuleStore& rules, DipAffinityTable& affinity) {
  try {
    switch (classify(bytes, ingress)) {
      case PacketClass::ControlPlane: {
        const auto ip = parse_ipv4(bytes);
        return detail::multiple(detail::route(bytes, ip.dst),
                                CloneToController{S1apClone{Bytes(bytes.begin(), bytes.end())}});
      }
      case PacketClass::EndMarker: {
        const auto pkt = decode_gtpu(bytes);
        return detail::multiple(Emit{EgressPort::Ran, {}, pkt.outer_dst, Bytes(bytes.begin(), bytes.end())},
                                CloneToController{EndMarkerSeen{pkt.teid, pkt.outer_dst}});
      }
      case PacketClass::DownstreamGtp: return detail::route(bytes, parse_ipv4(bytes).dst);
      case PacketClass::UpstreamGtp: {
        auto pkt = decode_gtpu(bytes);
        FiveTuple ft;
        try {
          ft = inner_five_tuple(pkt.inner);
        } catch (const DecodeError&) {
          return detail::route(bytes, pkt.outer_dst);
        }
        if (!cfg.is_vip(ft.dst_ip)) return detail::route(bytes, pkt.outer_dst);
        const auto rule = rules.lookup(ft);
        const FlowMiss miss{ft, pkt.teid, pkt.outer_src, pkt.outer_dst};
        if (rule && rule->state == RuleState::Silent) return CloneToController{miss};
        auto fwd = detail::steer_to_service(std::move(pkt.inner), ft, cfg, affinity);
        if (rule) return fwd;
        return detail::multiple(CloneToController{miss}, detail::to_simple(std::move(fwd)));
      }
      case PacketClass::PlainIp: break;
    }

    Ipv4Header ip;
    FiveTuple ft;
    try {
      ip = parse_ipv4(bytes);
      ft = inner_five_tuple(bytes);
    } catch (const DecodeError& e) {
      return Drop{std::string("malformed: ") + e.what()};
    }
    Bytes pkt(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(ip.total_len));

    // Hand-off from a source gateway's load balancer I.
    if (cfg.is_vip(ft.dst_ip) && ingress != Direction::FromCluster) {
      const auto dip = stage2_select(ft, affinity, cfg);
      rewrite_ipv4_dst(pkt, dip);
      return Emit{EgressPort::Cluster, {}, dip, std::move(pkt)};
    }

    if (ingress == Direction::FromCluster || ingress == Direction::FromCore) {
      if (ingress == Direction::FromCluster) {
        if (auto vip = affinity.vip_for_reply(ft)) {
          rewrite_ipv4_src(pkt, *vip);
          ft.src_ip = *vip;
        }
      }
      if (const auto rule = rules.lookup(ft.reversed())) {
        if (rule->state == RuleState::Silent) return Drop{"silent period"};
        GtpuPacket out;
        out.outer_src = rule->sgw_addr.value() != 0 ? rule->sgw_addr : cfg.local_sgw;
        out.outer_dst = rule->enb_addr;
        out.teid = rule->downstream_teid;
        out.message_type = GtpMessageType::GPdu;
        out.inner = std::move(pkt);
        return Emit{EgressPort::Ran, {}, rule->enb_addr, encode_gtpu(out)};
      }
    }
    return Emit{EgressPort::Router, {}, ft.dst_ip, std::move(pkt)};
  } catch (const std::exception& e) {
    return Drop{std::string("unprocessable: ") + e.what()};
  }
}

}  // namespace megw
