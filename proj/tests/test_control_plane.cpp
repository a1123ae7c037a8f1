#include <gtest/gtest.h>

#include "megw/control_plane.hpp"

using namespace megw;

namespace {

const Ipv4Address kUe = Ipv4Address::parse("172.16.0.2");
const Ipv4Address kVip = Ipv4Address::parse("10.100.1.1");
const Ipv4Address kEnb1 = Ipv4Address::parse("192.168.10.1");
const Ipv4Address kEnb2 = Ipv4Address::parse("192.168.10.2");
const Ipv4Address kEnb3 = Ipv4Address::parse("192.168.10.3");
const Ipv4Address kEnb4 = Ipv4Address::parse("192.168.10.4");
const Ipv4Address kSgw = Ipv4Address::parse("192.168.0.1");

ControlTopology topo() {
  ControlTopology t;
  t.enb_to_megw = {{kEnb1, "megw1"}, {kEnb2, "megw1"}, {kEnb3, "megw2"}, {kEnb4, "megw3"}};
  t.megw_to_region = {{"megw1", "r1"}, {"megw2", "r1"}, {"megw3", "r2"}};
  t.region_peers["r1"] = {{"megw1", Ipv4Address::parse("10.0.0.1"), 1}, {"megw2", Ipv4Address::parse("10.0.0.2"), 1}};
  t.region_peers["r2"] = {{"megw3", Ipv4Address::parse("10.0.0.3"), 1}};
  return t;
}

S1apLiteMessage msg(S1apKind kind, Ipv4Address enb, std::vector<BearerItem> bearers) {
  S1apLiteMessage m;
  m.kind = kind;
  m.mme_ue_id = 1;
  m.enb_ue_id = 1001;
  m.ue_ip = kUe;
  m.enb_addr = enb;
  m.sgw_addr = kSgw;
  m.bearers = std::move(bearers);
  return m;
}

template <class T>
std::vector<T> of(const std::vector<TimedEffect>& effects) {
  std::vector<T> out;
  for (const auto& te : effects)
    if (auto* e = std::get_if<T>(&te.effect)) out.push_back(*e);
  return out;
}

FlowMiss miss(std::uint32_t teid, std::uint16_t sport = 5000) {
  return {{kUe, kVip, ipproto::kTcp, sport, 80}, teid, kEnb1, kSgw};
}

// Processor with ue1 attached at enb1 on bearers 5 (100/200) and 6 (101/201).
S1apProcessor attached(const std::string& megw = "megw1") {
  S1apProcessor p(megw, topo());
  p.on_control_message(msg(S1apKind::InitialContextSetupRequest, kEnb1, {{5, 100, kSgw, 0}, {6, 101, kSgw, 0}}));
  p.on_control_message(msg(S1apKind::InitialContextSetupResponse, kEnb1, {{5, 200, kEnb1, 0}, {6, 201, kEnb1, 0}}));
  return p;
}

}  // namespace

TEST(ClassifyHandover, ThreeScenarios) {
  const auto t = topo();
  EXPECT_EQ(classify_handover(kEnb1, kEnb2, t), HandoverScenario::SameMegw);
  EXPECT_EQ(classify_handover(kEnb1, kEnb3, t), HandoverScenario::SameRegionDifferentMegw);
  EXPECT_EQ(classify_handover(kEnb1, kEnb4, t), HandoverScenario::CrossRegion);
  EXPECT_THROW(classify_handover(kEnb1, Ipv4Address::parse("9.9.9.9"), t), TopologyError);
}

TEST(S1apProcessor, InitialSetupPairsWithoutInstallingRules) {
  S1apProcessor p("megw1", topo());
  auto e1 = p.on_control_message(msg(S1apKind::InitialContextSetupRequest, kEnb1, {{5, 100, kSgw, 0}}));
  ASSERT_NE(p.context(kUe), nullptr);
  EXPECT_EQ(p.context(kUe)->phase, UePhase::Attaching);
  auto e2 = p.on_control_message(msg(S1apKind::InitialContextSetupResponse, kEnb1, {{5, 200, kEnb1, 0}}));
  EXPECT_TRUE(of<InstallRuleEffect>(e1).empty());
  EXPECT_TRUE(of<InstallRuleEffect>(e2).empty());
  const auto* ctx = p.context(kUe);
  EXPECT_EQ(ctx->phase, UePhase::Attached);
  const auto& b = ctx->bearers.at(5);
  EXPECT_EQ(b.upstream_teid, 100u);
  EXPECT_EQ(b.downstream_teid, 200u);
  EXPECT_EQ(b.sgw_addr, kSgw);
  EXPECT_EQ(ctx->enb_addr, kEnb1);
}

TEST(S1apProcessor, ResponseWithoutRequestIsOrphan) {
  S1apProcessor p("megw1", topo());
  auto e = p.on_control_message(msg(S1apKind::InitialContextSetupResponse, kEnb1, {{5, 200, kEnb1, 0}}));
  ASSERT_EQ(of<OrphanMessage>(e).size(), 1u);
  EXPECT_EQ(p.context(kUe), nullptr);
}

TEST(S1apProcessor, RepeatedRequestIsIdempotent) {
  auto p = attached();
  p.on_control_message(msg(S1apKind::InitialContextSetupRequest, kEnb1, {{5, 100, kSgw, 0}, {6, 101, kSgw, 0}}));
  EXPECT_EQ(p.context(kUe)->phase, UePhase::Attached);
  EXPECT_EQ(p.context(kUe)->bearers.at(6).downstream_teid, 201u);
}

TEST(S1apProcessor, FlowMissInstallsPerBearerRule) {
  auto p = attached();
  auto e5 = of<InstallRuleEffect>(p.on_flow_miss(miss(100, 1)));
  auto e6 = of<InstallRuleEffect>(p.on_flow_miss(miss(101, 2)));
  ASSERT_EQ(e5.size(), 1u);
  ASSERT_EQ(e6.size(), 1u);
  EXPECT_EQ(e5[0].rule.downstream_teid, 200u);
  EXPECT_EQ(e5[0].rule.bearer_id, 5);
  EXPECT_EQ(e6[0].rule.downstream_teid, 201u);
  EXPECT_EQ(e5[0].rule.enb_addr, kEnb1);
  EXPECT_EQ(e5[0].rule.key, miss(100, 1).five_tuple);

  auto none = p.on_flow_miss(miss(999));
  ASSERT_EQ(of<NoContext>(none).size(), 1u);
  EXPECT_TRUE(of<InstallRuleEffect>(none).empty());
}

TEST(S1apProcessor, HandoverSequenceSameRegion) {
  auto p = attached();
  RuleStore rules;
  apply_effects(p.on_flow_miss(miss(100)), rules);

  auto req = p.on_control_message(msg(S1apKind::PathSwitchRequest, kEnb3, {{5, 100, kSgw, 0}, {6, 101, kSgw, 0}}));
  auto det = of<HandoverDetected>(req);
  ASSERT_EQ(det.size(), 1u);
  EXPECT_EQ(det[0].scenario, HandoverScenario::SameRegionDifferentMegw);
  EXPECT_FALSE(det[0].migration_scheduled);
  EXPECT_EQ(p.context(kUe)->phase, UePhase::HandoverInProgress);

  EXPECT_TRUE(p.on_end_marker(0xDEAD).empty());

  auto em = p.on_end_marker(200);
  EXPECT_EQ(of<SetUeSilentEffect>(em).size(), 1u);
  ASSERT_EQ(of<ReleasePairsEffect>(em).size(), 1u);
  EXPECT_TRUE(of<ReleasePairsEffect>(em)[0].remove_rules);
  EXPECT_TRUE(of<MigrationNotice>(em).empty());
  EXPECT_EQ(p.context(kUe)->phase, UePhase::SilentPeriod);
  const auto applied = apply_effects(em, rules);
  EXPECT_EQ(applied.silenced, 1u);
  EXPECT_EQ(applied.removed, 1u);

  // A second end marker for the same handover changes nothing.
  EXPECT_TRUE(p.on_end_marker(201).empty());
  // Flow misses during silence have no context.
  EXPECT_EQ(of<NoContext>(p.on_flow_miss(miss(100))).size(), 1u);
}

TEST(S1apProcessor, SameMegwHandoverSilencesThenReactivates) {
  auto p = attached();
  RuleStore rules;
  apply_effects(p.on_flow_miss(miss(100)), rules);
  p.on_control_message(msg(S1apKind::PathSwitchRequest, kEnb2, {{5, 100, kSgw, 0}, {6, 101, kSgw, 0}}));
  auto em = p.on_end_marker(201);
  EXPECT_FALSE(of<ReleasePairsEffect>(em).at(0).remove_rules);
  apply_effects(em, rules);
  EXPECT_EQ(rules.lookup(miss(100).five_tuple)->state, RuleState::Silent);

  auto ack = p.on_control_message(
      msg(S1apKind::PathSwitchAcknowledge, kEnb2, {{5, 0x10001, kEnb2, 100}, {6, 0x10002, kEnb2, 101}}));
  auto react = of<ReactivateUeEffect>(ack);
  ASSERT_EQ(react.size(), 1u);
  EXPECT_EQ(react[0].teid_by_bearer.at(5), 0x10001u);
  EXPECT_EQ(react[0].enb_addr, kEnb2);
  EXPECT_EQ(apply_effects(ack, rules).reactivated, 1u);
  const auto r = rules.lookup(miss(100).five_tuple);
  EXPECT_EQ(r->state, RuleState::Active);
  EXPECT_EQ(r->downstream_teid, 0x10001u);
  EXPECT_EQ(r->enb_addr, kEnb2);
  EXPECT_EQ(p.context(kUe)->phase, UePhase::Attached);

  // New flows after the ack pick up the new pairing.
  auto again = of<InstallRuleEffect>(p.on_flow_miss(miss(101, 7)));
  ASSERT_EQ(again.size(), 1u);
  EXPECT_EQ(again[0].rule.downstream_teid, 0x10002u);
}

TEST(S1apProcessor, CrossRegionEmitsOneMigrationNotice) {
  auto p = attached();
  p.on_control_message(msg(S1apKind::PathSwitchRequest, kEnb4, {{5, 100, kSgw, 0}, {6, 101, kSgw, 0}}));
  auto em = p.on_end_marker(200);
  auto notices = of<MigrationNotice>(em);
  ASSERT_EQ(notices.size(), 1u);
  EXPECT_EQ(notices[0].new_mec, "megw3");
  EXPECT_TRUE(notices[0].old_mec == "megw1" || notices[0].old_mec == "megw2");
  EXPECT_EQ(notices[0].issued_at, em.front().at);
  for (const auto& te : em) EXPECT_EQ(te.at, em.front().at);
}

TEST(S1apProcessor, AckCreatesContextAtTargetGateway) {
  S1apProcessor target("megw3", topo());
  auto ack = target.on_control_message(msg(S1apKind::PathSwitchAcknowledge, kEnb4, {{5, 0x10001, kEnb4, 100}}));
  ASSERT_EQ(of<ReactivateUeEffect>(ack).size(), 1u);
  auto rule = of<InstallRuleEffect>(target.on_flow_miss(miss(100)));
  ASSERT_EQ(rule.size(), 1u);
  EXPECT_EQ(rule[0].rule.downstream_teid, 0x10001u);
  EXPECT_EQ(rule[0].rule.enb_addr, kEnb4);

  S1apProcessor bystander("megw2", topo());
  EXPECT_EQ(of<OrphanMessage>(bystander.on_control_message(
                                  msg(S1apKind::PathSwitchAcknowledge, kEnb4, {{5, 0x10001, kEnb4, 100}})))
                .size(),
            1u);
}

TEST(S1apProcessor, UndecodableCloneIsIgnored) {
  S1apProcessor p("megw1", topo());
  auto e = p.on_event(S1apClone{build_ipv4(kEnb1, kSgw, ipproto::kSctp, Bytes(5, 0))});
  ASSERT_EQ(e.size(), 1u);
  EXPECT_TRUE(std::holds_alternative<IgnoredMessage>(e[0].effect));
}

TEST(S1apProcessor, EventsViaClonedFrames) {
  S1apProcessor p("megw1", topo());
  p.on_event(S1apClone{encode_s1ap_frame(kSgw, kEnb1,
                                         msg(S1apKind::InitialContextSetupRequest, kEnb1, {{5, 100, kSgw, 0}}))});
  p.on_event(S1apClone{
      encode_s1ap_frame(kEnb1, kSgw, msg(S1apKind::InitialContextSetupResponse, kEnb1, {{5, 200, kEnb1, 0}}))});
  auto e = p.on_event(miss(100));
  ASSERT_EQ(of<InstallRuleEffect>(e).size(), 1u);
  EXPECT_EQ(p.clock(), 3u);
  EXPECT_FALSE(p.log().empty());
}

TEST(S1apProcessor, DeterministicLog) {
  auto run = [] {
    auto p = attached();
    p.on_flow_miss(miss(100));
    p.on_control_message(msg(S1apKind::PathSwitchRequest, kEnb4, {{5, 100, kSgw, 0}, {6, 101, kSgw, 0}}));
    p.on_end_marker(200);
    return p.log();
  };
  EXPECT_EQ(run(), run());
}

TEST(ApplyEffects, ConflictPropagates) {
  RuleStore rules;
  FlowRule r{miss(100).five_tuple, 200, kEnb1, kSgw, 5, RuleState::Active};
  apply_effects({{1, InstallRuleEffect{r}}}, rules);
  r.downstream_teid = 300;
  EXPECT_THROW(apply_effects({{2, InstallRuleEffect{r}}}, rules), ConflictError);
}
