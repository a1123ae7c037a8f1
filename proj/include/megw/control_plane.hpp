#pragma once

// S1AP processor: rebuilds per-bearer TEID pairs from cloned control
// messages and turns data-plane events into rule operations. It never touches
// the data plane itself; every decision is returned as an effect value.

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "megw/errors.hpp"
#include "megw/gtp.hpp"
#include "megw/rendezvous.hpp"
#include "megw/s1ap_lite.hpp"
#include "megw/steering.hpp"

namespace megw {

struct BearerContext {
  std::uint32_t upstream_teid = 0;    // eNB -> SGW
  std::uint32_t downstream_teid = 0;  // SGW -> eNB
  Ipv4Address sgw_addr;
  bool has_upstream = false;
  bool has_downstream = false;

  bool paired() const { return has_upstream && has_downstream; }
};

enum class HandoverScenario { SameMegw, SameRegionDifferentMegw, CrossRegion };

inline const char* to_string(HandoverScenario s) {
  switch (s) {
    case HandoverScenario::SameMegw: return "SameMegw";
    case HandoverScenario::SameRegionDifferentMegw: return "SameRegionDifferentMegw";
    case HandoverScenario::CrossRegion: return "CrossRegion";
  }
  return "?";
}

enum class UePhase { Attaching, Attached, HandoverInProgress, SilentPeriod };

inline const char* to_string(UePhase p) {
  switch (p) {
    case UePhase::Attaching: return "Attaching";
    case UePhase::Attached: return "Attached";
    case UePhase::HandoverInProgress: return "HandoverInProgress";
    case UePhase::SilentPeriod: return "SilentPeriod";
  }
  return "?";
}

struct HandoverInfo {
  Ipv4Address old_enb;
  Ipv4Address new_enb;
  HandoverScenario scenario = HandoverScenario::SameMegw;
};

struct UeContext {
  Ipv4Address ue_ip;
  Ipv4Address enb_addr;
  std::map<std::uint8_t, BearerContext> bearers;
  UePhase phase = UePhase::Attaching;
  std::optional<HandoverInfo> handover;
};

/// What a processor knows about the network around it.
struct ControlTopology {
  std::map<Ipv4Address, std::string> enb_to_megw;
  std::map<std::string, std::string> megw_to_region;
  std::map<std::string, std::vector<RegionPeer>> region_peers;

  const std::string& megw_of(Ipv4Address enb) const {
    auto it = enb_to_megw.find(enb);
    if (it == enb_to_megw.end()) throw TopologyError("unknown eNB " + enb.to_string());
    return it->second;
  }

  const std::string& region_of(const std::string& megw) const {
    auto it = megw_to_region.find(megw);
    if (it == megw_to_region.end()) throw TopologyError("MEGW '" + megw + "' has no region");
    return it->second;
  }
};

inline HandoverScenario classify_handover(Ipv4Address old_enb, Ipv4Address new_enb, const ControlTopology& topo) {
  const auto& old_megw = topo.megw_of(old_enb);
  const auto& new_megw = topo.megw_of(new_enb);
  if (old_megw == new_megw) return HandoverScenario::SameMegw;
  if (topo.region_of(old_megw) == topo.region_of(new_megw)) return HandoverScenario::SameRegionDifferentMegw;
  return HandoverScenario::CrossRegion;
}

// ---------------------------------------------------------------------------
// Effects

struct InstallRuleEffect {
  FlowRule rule;
};
struct SetUeSilentEffect {
  Ipv4Address ue_ip;
};
struct ReactivateUeEffect {
  Ipv4Address ue_ip;
  std::map<std::uint8_t, std::uint32_t> teid_by_bearer;
  Ipv4Address enb_addr;
};
struct ReleasePairsEffect {
  Ipv4Address ue_ip;
  std::size_t bearers = 0;
  bool remove_rules = false;  // the UE is leaving this gateway
};
struct HandoverDetected {
  Ipv4Address ue_ip;
  Ipv4Address old_enb;
  Ipv4Address new_enb;
  HandoverScenario scenario = HandoverScenario::SameMegw;
  bool migration_scheduled = false;
};
struct MigrationNotice {
  Ipv4Address ue_ip;
  std::string old_mec;
  std::string new_mec;
  std::uint64_t issued_at = 0;
};
struct ContextUpdated {
  Ipv4Address ue_ip;
  UePhase phase = UePhase::Attaching;
};
struct OrphanMessage {
  S1apKind kind = S1apKind::InitialContextSetupResponse;
  Ipv4Address ue_ip;
};
struct NoContext {
  FiveTuple five_tuple;
  std::uint32_t upstream_teid = 0;
};
struct IgnoredMessage {
  std::string reason;
};

using Effect = std::variant<InstallRuleEffect, SetUeSilentEffect, ReactivateUeEffect, ReleasePairsEffect,
                            HandoverDetected, MigrationNotice, ContextUpdated, OrphanMessage, NoContext,
                            IgnoredMessage>;

struct TimedEffect {
  std::uint64_t at = 0;
  Effect effect;
};

inline const char* effect_name(const Effect& e) {
  static constexpr const char* kNames[] = {"InstallRule",      "SetUeSilent",     "ReactivateUe",
                                           "ReleasePairs",     "HandoverDetected", "MigrationNotice",
                                           "ContextUpdated",   "OrphanMessage",   "NoContext",
                                           "IgnoredMessage"};
  return kNames[e.index()];
}

inline nlohmann::json to_json(const FiveTuple& t) {
  return {{"src_ip", t.src_ip.to_string()}, {"dst_ip", t.dst_ip.to_string()}, {"proto", t.proto},
          {"src_port", t.src_port},         {"dst_port", t.dst_port}};
}

inline nlohmann::json to_json(const FlowRule& r) {
  return {{"key", to_json(r.key)},
          {"downstream_teid", r.downstream_teid},
          {"enb_addr", r.enb_addr.to_string()},
          {"sgw_addr", r.sgw_addr.to_string()},
          {"bearer_id", r.bearer_id},
          {"state", r.state == RuleState::Active ? "Active" : "Silent"}};
}

inline nlohmann::json to_json(const TimedEffect& te) {
  nlohmann::json j{{"at", te.at}, {"effect", effect_name(te.effect)}};
  std::visit(
      [&](const auto& e) {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, InstallRuleEffect>) {
          j["rule"] = to_json(e.rule);
        } else if constexpr (std::is_same_v<T, SetUeSilentEffect>) {
          j["ue_ip"] = e.ue_ip.to_string();
        } else if constexpr (std::is_same_v<T, ReactivateUeEffect>) {
          j["ue_ip"] = e.ue_ip.to_string();
          j["enb_addr"] = e.enb_addr.to_string();
          auto& m = j["teid_by_bearer"] = nlohmann::json::object();
          for (auto [b, t] : e.teid_by_bearer) m[std::to_string(b)] = t;
        } else if constexpr (std::is_same_v<T, ReleasePairsEffect>) {
          j["ue_ip"] = e.ue_ip.to_string();
          j["bearers"] = e.bearers;
          j["remove_rules"] = e.remove_rules;
        } else if constexpr (std::is_same_v<T, HandoverDetected>) {
          j["ue_ip"] = e.ue_ip.to_string();
          j["old_enb"] = e.old_enb.to_string();
          j["new_enb"] = e.new_enb.to_string();
          j["scenario"] = to_string(e.scenario);
          j["migration_scheduled"] = e.migration_scheduled;
        } else if constexpr (std::is_same_v<T, MigrationNotice>) {
          j["ue_ip"] = e.ue_ip.to_string();
          j["old_mec"] = e.old_mec;
          j["new_mec"] = e.new_mec;
          j["issued_at"] = e.issued_at;
        } else if constexpr (std::is_same_v<T, ContextUpdated>) {
          j["ue_ip"] = e.ue_ip.to_string();
          j["phase"] = to_string(e.phase);
        } else if constexpr (std::is_same_v<T, OrphanMessage>) {
          j["kind"] = to_string(e.kind);
          j["ue_ip"] = e.ue_ip.to_string();
        } else if constexpr (std::is_same_v<T, NoContext>) {
          j["five_tuple"] = to_json(e.five_tuple);
          j["upstream_teid"] = e.upstream_teid;
        } else if constexpr (std::is_same_v<T, IgnoredMessage>) {
          j["reason"] = e.reason;
        }
      },
      te.effect);
  return j;
}

inline nlohmann::json to_json(const ControllerEvent& ev, std::uint64_t at) {
  nlohmann::json j{{"at", at}};
  std::visit(
      [&](const auto& e) {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, S1apClone>) {
          j["event"] = "S1apClone";
          j["bytes"] = e.frame.size();
        } else if constexpr (std::is_same_v<T, EndMarkerSeen>) {
          j["event"] = "EndMarkerSeen";
          j["teid"] = e.teid;
        } else {
          j["event"] = "FlowMiss";
          j["five_tuple"] = to_json(e.five_tuple);
          j["upstream_teid"] = e.upstream_teid;
        }
      },
      ev);
  return j;
}

// ---------------------------------------------------------------------------

class S1apProcessor {
 public:
  S1apProcessor(std::string megw_id, ControlTopology topology)
      : megw_id_(std::move(megw_id)), topo_(std::move(topology)) {}

  const std::string& megw_id() const { return megw_id_; }
  std::uint64_t clock() const { return clock_; }

  const UeContext* context(Ipv4Address ue_ip) const {
    auto it = contexts_.find(ue_ip);
    return it == contexts_.end() ? nullptr : &it->second;
  }

  /// Line-delimited JSON of every consumed event and produced effect.
  const std::vector<std::string>& log() const { return log_; }

  std::vector<TimedEffect> on_event(const ControllerEvent& ev) {
    return std::visit(
        [&](const auto& e) -> std::vector<TimedEffect> {
          using T = std::decay_t<decltype(e)>;
          if constexpr (std::is_same_v<T, S1apClone>) {
            S1apLiteMessage msg;
            try {
              msg = decode_s1ap_frame(e.frame);
            } catch (const DecodeError& err) {
              begin(ev);
              return finish({IgnoredMessage{std::string("undecodable S1AP: ") + err.what()}});
            }
            return on_control_message(msg);
          } else if constexpr (std::is_same_v<T, EndMarkerSeen>) {
            return on_end_marker(e.teid);
          } else {
            return on_flow_miss(e);
          }
        },
        ev);
  }

  std::vector<TimedEffect> on_control_message(const S1apLiteMessage& msg) {
    begin(msg);
    switch (msg.kind) {
      case S1apKind::InitialContextSetupRequest: return finish(initial_request(msg));
      case S1apKind::InitialContextSetupResponse: return finish(initial_response(msg));
      case S1apKind::PathSwitchRequest: return finish(path_switch_request(msg));
      case S1apKind::PathSwitchAcknowledge: return finish(path_switch_ack(msg));
    }
    return finish({IgnoredMessage{"unknown kind"}});
  }

  std::vector<TimedEffect> on_flow_miss(const FlowMiss& miss) {
    begin(miss);
    auto found = find_bearer(miss.five_tuple.src_ip, miss.upstream_teid);
    if (!found) return finish({NoContext{miss.five_tuple, miss.upstream_teid}});
    auto& [ctx, bearer_id, bearer] = *found;
    FlowRule rule;
    rule.key = miss.five_tuple;
    rule.downstream_teid = bearer->downstream_teid;
    rule.enb_addr = ctx->enb_addr;
    rule.sgw_addr = bearer->sgw_addr;
    rule.bearer_id = bearer_id;
    return finish({InstallRuleEffect{rule}});
  }

  std::vector<TimedEffect> on_end_marker(std::uint32_t teid) {
    begin(EndMarkerSeen{teid, {}});
    for (auto& [ip, ctx] : contexts_) {
      if (ctx.phase != UePhase::HandoverInProgress || !ctx.handover) continue;
      bool match = false;
      for (const auto& [id, b] : ctx.bearers) match |= b.has_downstream && b.downstream_teid == teid;
      if (!match) continue;
      std::vector<Effect> out;
      out.push_back(SetUeSilentEffect{ip});
      out.push_back(ReleasePairsEffect{ip, ctx.bearers.size(), ctx.handover->scenario != HandoverScenario::SameMegw});
      if (ctx.handover->scenario == HandoverScenario::CrossRegion) out.push_back(migration_notice(ctx));
      ctx.bearers.clear();
      ctx.phase = UePhase::SilentPeriod;
      out.push_back(ContextUpdated{ip, ctx.phase});
      return finish(std::move(out));
    }
    return finish({});
  }

 private:
  using BearerRef = std::tuple<UeContext*, std::uint8_t, BearerContext*>;

  void begin(const ControllerEvent& ev) {
    ++clock_;
    log_.push_back(to_json(ev, clock_).dump());
  }

  void begin(const S1apLiteMessage& msg) {
    ++clock_;
    log_.push_back(nlohmann::json{{"at", clock_},
                                  {"event", "S1ap"},
                                  {"kind", to_string(msg.kind)},
                                  {"ue_ip", msg.ue_ip.to_string()},
                                  {"enb_addr", msg.enb_addr.to_string()}}
                       .dump());
  }

  std::vector<TimedEffect> finish(std::vector<Effect> effects) {
    std::vector<TimedEffect> out;
    out.reserve(effects.size());
    for (auto& e : effects) {
      out.push_back({clock_, std::move(e)});
      log_.push_back(to_json(out.back()).dump());
    }
    return out;
  }

  std::optional<BearerRef> find_bearer(Ipv4Address ue_ip, std::uint32_t upstream_teid) {
    auto scan = [&](UeContext& ctx) -> std::optional<BearerRef> {
      if (ctx.phase == UePhase::SilentPeriod) return std::nullopt;
      for (auto& [id, b] : ctx.bearers)
        if (b.paired() && b.upstream_teid == upstream_teid) return BearerRef{&ctx, id, &b};
      return std::nullopt;
    };
    if (auto it = contexts_.find(ue_ip); it != contexts_.end())
      if (auto r = scan(it->second)) return r;
    return std::nullopt;
  }

  bool owns_enb(Ipv4Address enb) const {
    auto it = topo_.enb_to_megw.find(enb);
    return it != topo_.enb_to_megw.end() && it->second == megw_id_;
  }

  std::string serving_mec(Ipv4Address ue_ip, Ipv4Address enb) const {
    const auto& megw = topo_.megw_of(enb);
    auto peers = topo_.region_peers.find(topo_.region_of(megw));
    if (peers == topo_.region_peers.end() || peers->second.empty()) return megw;
    std::vector<WeightedCandidate<std::string>> cands;
    for (const auto& p : peers->second) cands.push_back({p.megw_id, p.weight});
    return rendezvous_select(key_bytes(ue_ip), cands);
  }

  MigrationNotice migration_notice(const UeContext& ctx) const {
    return MigrationNotice{ctx.ue_ip, serving_mec(ctx.ue_ip, ctx.handover->old_enb),
                           serving_mec(ctx.ue_ip, ctx.handover->new_enb), clock_};
  }

  std::vector<Effect> initial_request(const S1apLiteMessage& msg) {
    auto [it, created] = contexts_.try_emplace(msg.ue_ip);
    auto& ctx = it->second;
    ctx.ue_ip = msg.ue_ip;
    ctx.enb_addr = msg.enb_addr;
    ctx.handover.reset();
    std::map<std::uint8_t, BearerContext> next;
    for (const auto& item : msg.bearers) {
      BearerContext b;
      if (auto old = ctx.bearers.find(item.bearer_id);
          old != ctx.bearers.end() && old->second.upstream_teid == item.teid)
        b = old->second;
      b.upstream_teid = item.teid;
      b.has_upstream = true;
      b.sgw_addr = item.transport_addr.value() != 0 ? item.transport_addr : msg.sgw_addr;
      next.emplace(item.bearer_id, b);
    }
    ctx.bearers = std::move(next);
    ctx.phase = all_paired(ctx) ? UePhase::Attached : UePhase::Attaching;
    return {ContextUpdated{ctx.ue_ip, ctx.phase}};
  }

  std::vector<Effect> initial_response(const S1apLiteMessage& msg) {
    auto it = contexts_.find(msg.ue_ip);
    if (it == contexts_.end()) return {OrphanMessage{msg.kind, msg.ue_ip}};
    auto& ctx = it->second;
    for (const auto& item : msg.bearers) {
      auto& b = ctx.bearers[item.bearer_id];
      b.downstream_teid = item.teid;
      b.has_downstream = true;
    }
    ctx.enb_addr = msg.enb_addr;
    ctx.phase = all_paired(ctx) ? UePhase::Attached : UePhase::Attaching;
    return {ContextUpdated{ctx.ue_ip, ctx.phase}};
  }

  std::vector<Effect> path_switch_request(const S1apLiteMessage& msg) {
    auto it = contexts_.find(msg.ue_ip);
    if (it == contexts_.end()) return {OrphanMessage{msg.kind, msg.ue_ip}};
    auto& ctx = it->second;
    HandoverInfo info{ctx.enb_addr, msg.enb_addr, HandoverScenario::SameMegw};
    try {
      info.scenario = classify_handover(info.old_enb, info.new_enb, topo_);
    } catch (const TopologyError& e) {
      return {IgnoredMessage{std::string("path switch: ") + e.what()}};
    }
    ctx.handover = info;
    ctx.phase = UePhase::HandoverInProgress;
    return {HandoverDetected{ctx.ue_ip, info.old_enb, info.new_enb, info.scenario,
                             info.scenario == HandoverScenario::CrossRegion},
            ContextUpdated{ctx.ue_ip, ctx.phase}};
  }

  std::vector<Effect> path_switch_ack(const S1apLiteMessage& msg) {
    auto it = contexts_.find(msg.ue_ip);
    if (it == contexts_.end()) {
      // The new gateway of an inter-gateway handover sees only this message.
      if (!owns_enb(msg.enb_addr)) return {OrphanMessage{msg.kind, msg.ue_ip}};
      it = contexts_.try_emplace(msg.ue_ip).first;
      it->second.ue_ip = msg.ue_ip;
    }
    auto& ctx = it->second;
    ReactivateUeEffect react{ctx.ue_ip, {}, msg.enb_addr};
    for (const auto& item : msg.bearers) {
      auto& b = ctx.bearers[item.bearer_id];
      b.downstream_teid = item.teid;
      b.has_downstream = true;
      if (item.paired_teid != 0) {
        b.upstream_teid = item.paired_teid;
        b.has_upstream = true;
      }
      if (msg.sgw_addr.value() != 0) b.sgw_addr = msg.sgw_addr;
      react.teid_by_bearer[item.bearer_id] = item.teid;
    }
    ctx.enb_addr = msg.enb_addr;
    ctx.handover.reset();
    ctx.phase = UePhase::Attached;
    return {std::move(react), ContextUpdated{ctx.ue_ip, ctx.phase}};
  }

  static bool all_paired(const UeContext& ctx) {
    if (ctx.bearers.empty()) return false;
    for (const auto& [id, b] : ctx.bearers)
      if (!b.paired()) return false;
    return true;
  }

  std::string megw_id_;
  ControlTopology topo_;
  std::map<Ipv4Address, UeContext> contexts_;
  std::uint64_t clock_ = 0;
  std::vector<std::string> log_;
};

struct ApplyResult {
  std::size_t installed = 0;
  std::size_t silenced = 0;
  std::size_t reactivated = 0;
  std::size_t removed = 0;
};

/// Applies the data-plane effects in order. Conflicting installs propagate
/// ConflictError.
inline ApplyResult apply_effects(const std::vector<TimedEffect>& effects, RuleStore& rules) {
  ApplyResult r;
  for (const auto& te : effects) {
    if (auto* e = std::get_if<InstallRuleEffect>(&te.effect)) {
      rules.install(e->rule);
      ++r.installed;
    } else if (auto* s = std::get_if<SetUeSilentEffect>(&te.effect)) {
      r.silenced += rules.set_ue_silent(s->ue_ip);
    } else if (auto* a = std::get_if<ReactivateUeEffect>(&te.effect)) {
      r.reactivated += rules.reactivate_ue(a->ue_ip, a->teid_by_bearer, a->enb_addr);
    } else if (auto* rel = std::get_if<ReleasePairsEffect>(&te.effect); rel && rel->remove_rules) {
      r.removed += rules.remove_ue(rel->ue_ip);
    }
  }
  return r;
}

}  // namespace megw
