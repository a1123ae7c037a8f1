#include <gtest/gtest.h>

#include "megw/harness.hpp"

using namespace megw;
using namespace megw::harness;
using nlohmann::json;

namespace {

const Ipv4Address kVip = Ipv4Address::parse("10.100.1.1");

Harness default_harness() { return Harness(build_topology(default_topology_json())); }

bool all_ok(const std::vector<Check>& checks) {
  for (const auto& c : checks)
    if (!c.ok) {
      ADD_FAILURE() << c.name << ": " << c.detail;
      return false;
    }
  return true;
}

}  // namespace

TEST(Topology, DefaultBuilds) {
  const auto t = build_topology(default_topology_json());
  EXPECT_EQ(t.megw_to_region.size(), 3u);
  EXPECT_EQ(t.enb_to_megw.at("enb3"), "megw2");
  EXPECT_EQ(t.dips.at("megw1").size(), 2u);
  EXPECT_EQ(t.dip_owner.at("megw3-dip2"), "megw3");
  EXPECT_EQ(t.region_peers("r1").size(), 2u);
  EXPECT_EQ(t.link("megw1", "megw2").port, "peer");
  EXPECT_EQ(t.link("enb2", "enb1").port, "x2");
  EXPECT_EQ(*t.node_at(Ipv4Address::parse("10.1.2.11")), "megw2-dip2");
  EXPECT_THROW(t.node("nope"), TopologyError);
}

TEST(Topology, Rejections) {
  auto bad = [](auto mutate) {
    auto j = default_topology_json();
    mutate(j);
    EXPECT_THROW(build_topology(j), ConfigError) << j.dump();
  };
  bad([](json& j) { j["enbs"][0]["megw"] = "megw9"; });
  bad([](json& j) { j["ues"][0]["enb"] = "enb9"; });
  bad([](json& j) { j["megws"][0]["region"] = ""; });
  bad([](json& j) { j["megws"][1]["id"] = "megw1"; });
  bad([](json& j) { j["enbs"][1]["address"] = "192.168.10.1"; });
  bad([](json& j) { j["latency"]["warp"] = 3; });
  bad([](json& j) { j["ues"][0]["bearers"] = json::array(); });
  bad([](json& j) { j["ues"][0]["bearers"][1]["id"] = 5; });
  bad([](json& j) { j["megws"][0]["weight"] = 0; });
  bad([](json& j) { j.erase("core"); });
  bad([](json& j) { j["vips"][0] = "not-an-ip"; });
}

TEST(Topology, MinimalDocument) {
  const json doc{{"core", {{"id", "sgw"}, {"address", "192.168.0.1"}}},
                 {"vips", {"10.100.1.1"}},
                 {"megws", {{{"id", "m"}, {"address", "10.0.0.1"}, {"region", "r"},
                             {"dips", {{{"address", "10.1.1.10"}}}}}}},
                 {"enbs", {{{"id", "e"}, {"address", "192.168.10.1"}, {"megw", "m"}}}},
                 {"ues", {{{"id", "u"}, {"ip", "172.16.0.9"}, {"enb", "e"},
                           {"bearers", {{{"id", 5}, {"upstream_teid", 1}, {"downstream_teid", 2}}}}}}}};
  Harness h(build_topology(doc));
  h.run_attach("u", "e");
  const auto r = h.run_edge_request("u", kVip, "x");
  EXPECT_EQ(r.dip_node, "m-dip1");
  EXPECT_EQ(r.echo_teid, 2u);
}

TEST(Harness, AttachClonesTwiceAndInstallsNothing) {
  auto h = default_harness();
  const auto t = h.run_attach("ue1", "enb1");
  EXPECT_EQ(count(t, TraceAction::Cloned), 2u);
  EXPECT_EQ(count(t, TraceAction::Cloned, "megw1"), 2u);
  EXPECT_EQ(count(t, TraceAction::RuleInstalled), 0u);
  EXPECT_TRUE(h.attached("ue1"));
  EXPECT_EQ(h.attached_megw("ue1"), "megw1");
  const auto* ctx = h.processor("megw1").context(Ipv4Address::parse("172.16.0.2"));
  ASSERT_NE(ctx, nullptr);
  EXPECT_EQ(ctx->bearers.at(5).downstream_teid, 200u);

  const auto again = h.run_attach("ue1", "enb1");
  EXPECT_EQ(count(again, TraceAction::RuleInstalled), 0u);
  EXPECT_EQ(h.processor("megw1").context(Ipv4Address::parse("172.16.0.2"))->phase, UePhase::Attached);
}

TEST(Harness, FirstPacketMissesThenRuleIsUsed) {
  auto h = default_harness();
  h.run_attach("ue1", "enb1");
  const auto r = h.run_edge_request("ue1", kVip, "hello", 5);
  EXPECT_EQ(count(r.trace, TraceAction::Cloned), 1u);
  EXPECT_EQ(count(r.trace, TraceAction::RuleInstalled), 1u);
  ASSERT_TRUE(r.dip_node);
  EXPECT_EQ(h.topology().dip_owner.at(*r.dip_node), h.serving_megw("ue1"));
  EXPECT_EQ(r.echo_teid, 200u);
  EXPECT_EQ(r.echo_payload, "hello");

  const auto r2 = h.run_edge_request("ue1", kVip, "again", 5, r.flow.src_port);
  EXPECT_EQ(count(r2.trace, TraceAction::Cloned), 0u);
  EXPECT_EQ(r2.dip_node, r.dip_node);
  EXPECT_EQ(h.rules(h.attached_megw("ue1")).size(), 1u);
}

TEST(Harness, ReplyCarriesVipSource) {
  auto h = default_harness();
  h.run_attach("ue1", "enb1");
  const auto r = h.run_edge_request("ue1", kVip, "hello", 5);
  bool seen = false;
  for (const auto& e : r.trace)
    if (e.action == TraceAction::Received && e.node == "ue1") {
      EXPECT_EQ(e.detail.at("src").get<std::string>(), "10.100.1.1");
      seen = true;
    }
  EXPECT_TRUE(seen);
}

TEST(Harness, MultiBearerDistinctTeids) {
  auto h = default_harness();
  h.run_attach("ue1", "enb1");
  const auto a = h.run_edge_request("ue1", kVip, "a", 5);
  const auto b = h.run_edge_request("ue1", kVip, "b", 6);
  EXPECT_EQ(a.echo_teid, 200u);
  EXPECT_EQ(b.echo_teid, 201u);
  EXPECT_NE(a.flow, b.flow);
  EXPECT_THROW(h.run_edge_request("ue1", kVip, "c", 9), StateError);
}

TEST(Harness, StateErrors) {
  auto h = default_harness();
  EXPECT_THROW(h.run_edge_request("ue1", kVip, "x"), StateError);
  EXPECT_THROW(h.run_x2_handover("ue1", "enb1", "enb2"), StateError);
  h.run_attach("ue1", "enb1");
  EXPECT_THROW(h.run_x2_handover("ue1", "enb3", "enb2"), StateError);
  EXPECT_THROW(h.run_attach("ue1", "megw1"), ConfigError);
  EXPECT_THROW(h.run_attach("ue9", "enb1"), ConfigError);
}

TEST(Harness, HandoverScenarios) {
  for (const auto& [to, scenario] : std::vector<std::pair<std::string, HandoverScenario>>{
           {"enb2", HandoverScenario::SameMegw},
           {"enb3", HandoverScenario::SameRegionDifferentMegw},
           {"enb4", HandoverScenario::CrossRegion}}) {
    SCOPED_TRACE(to);
    auto h = default_harness();
    h.run_attach("ue1", "enb1");
    h.run_edge_request("ue1", kVip, "a", 5);
    h.run_edge_request("ue1", kVip, "b", 6);
    const auto rep = h.run_x2_handover("ue1", "enb1", to);
    EXPECT_EQ(rep.scenario, scenario);
    EXPECT_TRUE(all_ok(check_handover(rep)));
    EXPECT_EQ(h.attached_enb("ue1"), to);
    EXPECT_EQ(count(rep.trace, TraceAction::MigrationNotified),
              scenario == HandoverScenario::CrossRegion ? 1u : 0u);
    // Post-handover echoes use the TEIDs allocated by the target eNB.
    for (const auto& r : rep.post_requests) {
      ASSERT_TRUE(r.echo_teid);
      EXPECT_GE(*r.echo_teid, 0x10001u);
    }
    if (scenario == HandoverScenario::CrossRegion) {
      EXPECT_EQ(h.serving_megw("ue1"), "megw3");
      const auto* notice = first(rep.trace, TraceAction::MigrationNotified);
      EXPECT_EQ(notice->detail.at("new_mec"), "megw3");
    }
  }
}

TEST(Harness, ServingGatewayDiffersFromIngress) {
  // Pick a UE address that region r1 serves from megw2 while the UE attaches at megw1.
  auto doc = default_topology_json();
  const auto cfg = build_topology(doc).steering_config("megw1");
  std::string ip;
  for (int n = 3; n < 250 && ip.empty(); ++n) {
    const auto cand = Ipv4Address::parse("172.16.0." + std::to_string(n));
    if (stage1_select(cand, cfg) == "megw2") ip = cand.to_string();
  }
  ASSERT_FALSE(ip.empty());
  doc["ues"][0]["ip"] = ip;
  Harness h(build_topology(doc));
  h.run_attach("ue1", "enb1");
  EXPECT_EQ(h.serving_megw("ue1"), "megw2");
  const auto r = h.run_edge_request("ue1", kVip, "far", 5);
  ASSERT_TRUE(r.dip_node);
  EXPECT_EQ(h.topology().dip_owner.at(*r.dip_node), "megw2");
  EXPECT_EQ(r.echo_teid, 200u);
  bool handed_off = false;
  for (const auto& e : r.trace)
    handed_off |= e.action == TraceAction::Sent && e.node == "megw1" && e.detail.value("port", "") == "peer";
  EXPECT_TRUE(handed_off);

  const auto rep = h.run_x2_handover("ue1", "enb1", "enb3");
  EXPECT_TRUE(all_ok(check_handover(rep)));
}

TEST(Harness, BuiltinScriptsPass) {
  for (const auto& name : scenario_names()) {
    SCOPED_TRACE(name);
    auto h = default_harness();
    const auto res = run_script(h, builtin_scenario(name));
    EXPECT_FALSE(res.checks.empty());
    EXPECT_TRUE(all_ok(res.checks));
  }
  EXPECT_THROW(builtin_scenario("teleport"), ConfigError);
  auto h = default_harness();
  EXPECT_THROW(run_script(h, json{{"steps", {{{"op", "dance"}}}}}), ConfigError);
  EXPECT_THROW(run_script(h, json{{"nosteps", 1}}), ConfigError);
}

TEST(Harness, PushOp) {
  auto h = default_harness();
  const auto res = run_script(h, json{{"steps",
                                       {{{"op", "attach"}, {"ue", "ue1"}, {"enb", "enb1"}},
                                        {{"op", "edge_request"}, {"ue", "ue1"}, {"vip", "10.100.1.1"}},
                                        {{"op", "push"}, {"ue", "ue1"}, {"flow", 0}, {"payload", "srv"}}}}});
  EXPECT_TRUE(res.ok());
  EXPECT_EQ(res.checks.size(), 3u);
}

TEST(Harness, TraceIsDeterministic) {
  auto run = [] {
    auto h = default_harness();
    run_script(h, builtin_scenario("x2-cross-region"));
    return to_jsonl(h.trace());
  };
  const auto a = run();
  EXPECT_EQ(a, run());
  EXPECT_NE(a.find("MigrationNotified"), std::string::npos);
}

TEST(Harness, TraceOrderedByStepAndTick) {
  auto h = default_harness();
  run_script(h, builtin_scenario("x2-same-region"));
  const auto& t = h.trace();
  for (std::size_t i = 1; i < t.size(); ++i) {
    EXPECT_EQ(t[i].step, i);
    EXPECT_GE(t[i].tick, t[i - 1].tick);
  }
}
