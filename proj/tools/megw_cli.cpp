// megw: codec inspection, harness scenarios and mobility simulations.
//
// Exit status: 0 success, 1 usage error, 2 runtime error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "megw/megw.hpp"

namespace {

using nlohmann::json;

struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw RuntimeFailure(path + ": " + e.what());
  }
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw RuntimeFailure("cannot write " + path);
}

std::string sibling(const std::string& path, const std::string& suffix) {
  std::filesystem::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

int codec_decode(const std::string& hex) {
  const auto bytes = megw::from_hex(hex);
  const auto ip = megw::parse_ipv4(bytes);
  if (ip.protocol == megw::ipproto::kSctp) {
    const auto msg = megw::decode_s1ap_frame(bytes);
    std::cout << "s1ap_kind=" << megw::to_string(msg.kind) << "\n"
              << "ue_ip=" << msg.ue_ip.to_string() << "\n"
              << "enb_addr=" << msg.enb_addr.to_string() << "\n"
              << "sgw_addr=" << msg.sgw_addr.to_string() << "\n";
    for (const auto& b : msg.bearers)
      std::cout << "bearer=" << int(b.bearer_id) << " teid=" << b.teid << " transport=" << b.transport_addr.to_string()
                << " paired_teid=" << b.paired_teid << "\n";
    return 0;
  }
  const auto pkt = megw::decode_gtpu(bytes);
  std::cout << "message_type=" << megw::to_string(pkt.message_type) << "\n"
            << "type_byte=" << static_cast<int>(pkt.message_type) << "\n"
            << "teid=" << pkt.teid << "\n"
            << "outer_src=" << pkt.outer_src.to_string() << "\n"
            << "outer_dst=" << pkt.outer_dst.to_string() << "\n"
            << "inner_len=" << pkt.inner.size() << "\n";
  if (!pkt.inner.empty()) {
    std::string flow = "-";  // inner bytes need not be IPv4
    try {
      flow = megw::inner_five_tuple(pkt.inner).to_string();
    } catch (const megw::DecodeError&) {
    }
    std::cout << "inner_flow=" << flow << "\n";
  }
  return 0;
}

int codec_encode(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw RuntimeFailure(std::string("packet JSON: ") + e.what());
  }
  megw::GtpuPacket pkt;
  try {
    pkt.outer_src = megw::Ipv4Address::parse(j.at("outer_src").get<std::string>());
    pkt.outer_dst = megw::Ipv4Address::parse(j.at("outer_dst").get<std::string>());
    pkt.teid = j.at("teid").get<std::uint32_t>();
    const auto type = j.value("message_type", std::string("GPdu"));
    if (type == "GPdu")
      pkt.message_type = megw::GtpMessageType::GPdu;
    else if (type == "EndMarker")
      pkt.message_type = megw::GtpMessageType::EndMarker;
    else
      throw RuntimeFailure("unknown message_type '" + type + "'");
    pkt.inner = megw::from_hex(j.value("inner_hex", std::string()));
  } catch (const json::exception& e) {
    throw RuntimeFailure(std::string("packet JSON: ") + e.what());
  }
  std::cout << megw::to_hex(megw::encode_gtpu(pkt)) << "\n";
  return 0;
}

int run_harness(const std::string& scenario, const std::string& topology_path, const std::string& trace_path) {
  const auto topo_doc = topology_path.empty() ? megw::harness::default_topology_json() : read_json(topology_path);
  const auto script = std::filesystem::exists(scenario) ? read_json(scenario) : megw::harness::builtin_scenario(scenario);
  megw::harness::Harness h(megw::harness::build_topology(topo_doc));
  const auto result = megw::harness::run_script(h, script);
  const auto jsonl = megw::harness::to_jsonl(h.trace());
  if (trace_path.empty() || trace_path == "-")
    std::cout << jsonl;
  else
    write_file(trace_path, jsonl);
  for (const auto& c : result.checks)
    std::cerr << (c.ok ? "ok   " : "FAIL ") << c.name << (c.detail.empty() ? "" : " (" + c.detail + ")") << "\n";
  if (!result.ok()) throw RuntimeFailure("scenario checks failed");
  return 0;
}

void print_sweep(const megw::sim::ExperimentResult& res, const megw::sim::SimConfig& cfg) {
  using megw::sim::Policy;
  std::cout << "rate,mean_migrations_with,mean_migrations_without,migration_ratio,min_mean_ratio_with,"
               "min_mean_ratio_without\n";
  for (double rate : cfg.rates) {
    const auto& w = res.at(Policy::WithRegions, rate, cfg.steps);
    const auto& o = res.at(Policy::WithoutRegions, rate, cfg.steps);
    double min_w = 1, min_o = 1;
    for (int s = 0; s <= cfg.steps; ++s) {
      min_w = std::min(min_w, res.at(Policy::WithRegions, rate, s).mean_ratio);
      min_o = std::min(min_o, res.at(Policy::WithoutRegions, rate, s).mean_ratio);
    }
    const double ratio = o.mean_cumulative > 0 ? w.mean_cumulative / o.mean_cumulative : 0.0;
    std::cout << megw::sim::format_double(rate) << ',' << megw::sim::format_double(w.mean_cumulative) << ','
              << megw::sim::format_double(o.mean_cumulative) << ',' << megw::sim::format_double(ratio) << ','
              << megw::sim::format_double(min_w) << ',' << megw::sim::format_double(min_o) << "\n";
  }
}

int run_sim(megw::sim::SimConfig cfg, const std::string& out) {
  cfg.validate();
  const auto res = megw::sim::run_experiment(cfg);
  write_file(out, megw::sim::to_csv(res));
  write_file(sibling(out, ".summary.csv"), megw::sim::summary_csv(res));
  write_file(sibling(out, ".meta.json"), megw::sim::metadata(cfg).dump(2) + "\n");
  print_sweep(res, cfg);
  return 0;
}

std::vector<double> parse_rates(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw RuntimeFailure("bad rate '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw RuntimeFailure("no rates given");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mobile edge gateway toolkit"};
  app.require_subcommand(1, 1);

  auto* codec = app.add_subcommand("codec", "Encode or decode GTP-U / S1AP frames");
  codec->require_subcommand(1, 1);
  std::string hex, packet_json;
  auto* decode = codec->add_subcommand("decode", "Decode a hex frame");
  decode->add_option("hex", hex, "Frame bytes as hex")->required();
  auto* encode = codec->add_subcommand("encode", "Encode a GTP-U packet given as JSON");
  encode->add_option("json", packet_json, R"(e.g. {"outer_src":..,"outer_dst":..,"teid":..,"message_type":"GPdu","inner_hex":..})")
      ->required();

  auto* harness = app.add_subcommand("harness", "Run a harness scenario");
  std::string scenario, topology, trace;
  harness->add_option("--scenario", scenario, "Built-in scenario name or script path")->required();
  harness->add_option("--topology", topology, "Topology JSON (default: built-in)");
  harness->add_option("--trace", trace, "Trace output (JSON lines; '-' for stdout)");

  std::string config, out, rates;
  std::optional<std::uint64_t> seed;
  std::optional<int> replications, steps;
  std::optional<unsigned> threads;
  auto add_sim_flags = [&](CLI::App* c) {
    c->add_option("--config", config, "Simulation config JSON")->required();
    c->add_option("--out", out, "CSV output path")->required();
    c->add_option("--seed", seed, "Override the config seed");
    c->add_option("--replications", replications, "Override replications");
    c->add_option("--steps", steps, "Override steps");
    c->add_option("--threads", threads, "Worker threads (0 = all cores)");
  };
  auto* sim = app.add_subcommand("sim", "Run both policies at the config's migration rate");
  add_sim_flags(sim);
  auto* sweep = app.add_subcommand("sim-sweep", "Run both policies over a list of migration rates");
  add_sim_flags(sweep);
  sweep->add_option("--rates", rates, "Comma-separated fractions of the population per step (default: config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*decode) return codec_decode(hex);
    if (*encode) return codec_encode(packet_json);
    if (*harness) return run_harness(scenario, topology, trace);
    if (*sim || *sweep) {
      auto cfg = megw::sim::sim_config_from_json(read_json(config));
      if (seed) cfg.seed = *seed;
      if (replications) cfg.replications = *replications;
      if (steps) cfg.steps = *steps;
      if (threads) cfg.threads = *threads;
      if (*sim) cfg.rates = {cfg.migration_rate};
      if (*sweep && !rates.empty()) cfg.rates = parse_rates(rates);
      return run_sim(cfg, out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
