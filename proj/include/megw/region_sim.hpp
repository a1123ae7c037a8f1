#pragma once

// Flow-level regional mobility simulator.
//
// Cells are hexagons in axial coordinates. Every MEC sits on a cell and covers
// that cell plus its six neighbours; MEC centres lie on the index-7 sublattice
// spanned by (2,1) and (-1,3), so the 7-cell neighbourhoods tile the plane.
// A region is a block of MECs laid out `rows` x `cols` on that sublattice and
// regions are placed side by side.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "megw/errors.hpp"
#include "megw/rendezvous.hpp"

namespace megw::sim {

struct Axial {
  int q = 0;
  int r = 0;
  friend auto operator<=>(const Axial&, const Axial&) = default;
  Axial operator+(const Axial& o) const { return {q + o.q, r + o.r}; }
};

inline constexpr std::array<Axial, 6> kHexDirections{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, -1}, {-1, 1}}};
inline constexpr Axial kLatticeA{2, 1};
inline constexpr Axial kLatticeB{-1, 3};

inline int hex_distance(Axial a, Axial b) {
  const int dq = a.q - b.q, dr = a.r - b.r;
  return (std::abs(dq) + std::abs(dr) + std::abs(dq + dr)) / 2;
}

enum class Policy { WithRegions, WithoutRegions };

inline const char* to_string(Policy p) { return p == Policy::WithRegions ? "with_regions" : "without_regions"; }

inline Policy policy_from_string(const std::string& s) {
  if (s == "with_regions" || s == "WithRegions") return Policy::WithRegions;
  if (s == "without_regions" || s == "WithoutRegions") return Policy::WithoutRegions;
  throw ConfigError("unknown policy '" + s + "'");
}

struct SimConfig {
  int regions_count = 3;
  int mecs_per_region = 4;
  // Either one entry per MEC of a region (repeated for every region) or one
  // entry per MEC overall.
  std::vector<int> capacities{1, 1, 2, 2};
  int users_per_capacity = 500;
  int steps = 60;
  // Fraction of the population moved to a neighbour cell per step (minute).
  double migration_rate = 0.01;
  std::vector<double> rates{0.01, 0.02, 0.05, 0.10, 0.20};
  int replications = 20;
  Policy policy = Policy::WithRegions;
  std::uint64_t seed = 2019;
  unsigned threads = 0;  // 0 = hardware concurrency

  int mec_count() const { return regions_count * mecs_per_region; }

  std::vector<int> per_mec_capacities() const {
    const auto total = static_cast<std::size_t>(mec_count());
    if (capacities.size() == total) return capacities;
    if (capacities.size() == static_cast<std::size_t>(mecs_per_region)) {
      std::vector<int> out;
      for (int g = 0; g < regions_count; ++g) out.insert(out.end(), capacities.begin(), capacities.end());
      return out;
    }
    throw ConfigError("capacities must list " + std::to_string(mecs_per_region) + " or " +
                      std::to_string(total) + " entries");
  }

  void validate() const {
    if (regions_count <= 0 || mecs_per_region <= 0) throw ConfigError("region and MEC counts must be positive");
    if (users_per_capacity <= 0) throw ConfigError("users_per_capacity must be positive");
    if (steps < 0) throw ConfigError("steps must be non-negative");
    if (replications <= 0) throw ConfigError("replications must be positive");
    for (int c : per_mec_capacities())
      if (c <= 0) throw ConfigError("capacities must be positive");
    auto check_rate = [](double r) {
      if (!(r >= 0.0) || r > 1.0)
        throw ConfigError("migration rate " + std::to_string(r) + " is outside [0, 1] of the population");
    };
    check_rate(migration_rate);
    for (double r : rates) check_rate(r);
  }
};

inline SimConfig sim_config_from_json(const nlohmann::json& j) {
  SimConfig c;
  try {
    c.regions_count = j.value("regions_count", c.regions_count);
    c.mecs_per_region = j.value("mecs_per_region", c.mecs_per_region);
    if (j.contains("capacities")) c.capacities = j.at("capacities").get<std::vector<int>>();
    c.users_per_capacity = j.value("users_per_capacity", c.users_per_capacity);
    c.steps = j.value("steps", c.steps);
    c.migration_rate = j.value("migration_rate", c.migration_rate);
    if (j.contains("rates")) c.rates = j.at("rates").get<std::vector<double>>();
    c.replications = j.value("replications", c.replications);
    if (j.contains("policy")) c.policy = policy_from_string(j.at("policy").get<std::string>());
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sim config: ") + e.what());
  }
  c.validate();
  return c;
}

struct MecSite {
  int id = 0;
  int region = 0;
  int capacity = 1;
  Axial center;
  std::vector<int> cells;  // indices into HexGrid::cells, centre first
};

struct HexGrid {
  std::vector<Axial> cells;                // sorted
  std::vector<int> cell_mec;               // covering MEC per cell
  std::vector<std::vector<int>> neighbors; // in-grid neighbour cells
  std::vector<MecSite> mecs;
  std::vector<std::vector<int>> regions;   // MEC ids per region
  int block_rows = 1;
  int block_cols = 1;

  int index_of(Axial a) const {
    auto it = std::lower_bound(cells.begin(), cells.end(), a);
    return (it != cells.end() && *it == a) ? static_cast<int>(it - cells.begin()) : -1;
  }
  int region_of_cell(int cell) const { return mecs[static_cast<std::size_t>(cell_mec[static_cast<std::size_t>(cell)])].region; }
};

inline HexGrid build_grid(const SimConfig& cfg) {
  cfg.validate();
  const auto caps = cfg.per_mec_capacities();
  HexGrid g;
  g.block_rows = (cfg.mecs_per_region % 2 == 0) ? 2 : 1;
  g.block_cols = cfg.mecs_per_region / g.block_rows;
  std::map<Axial, int> owner;
  g.regions.resize(static_cast<std::size_t>(cfg.regions_count));
  for (int region = 0; region < cfg.regions_count; ++region) {
    for (int k = 0; k < cfg.mecs_per_region; ++k) {
      const int a = region * g.block_cols + k / g.block_rows;
      const int b = k % g.block_rows;
      MecSite m;
      m.id = static_cast<int>(g.mecs.size());
      m.region = region;
      m.capacity = caps[static_cast<std::size_t>(m.id)];
      m.center = {a * kLatticeA.q + b * kLatticeB.q, a * kLatticeA.r + b * kLatticeB.r};
      std::vector<Axial> flower{m.center};
      for (auto d : kHexDirections) flower.push_back(m.center + d);
      for (auto c : flower)
        if (!owner.emplace(c, m.id).second) throw ConfigError("MEC neighbourhoods overlap");
      g.regions[static_cast<std::size_t>(region)].push_back(m.id);
      g.mecs.push_back(std::move(m));
    }
  }
  for (const auto& [cell, mec] : owner) {
    g.cells.push_back(cell);
    g.cell_mec.push_back(mec);
  }
  g.neighbors.resize(g.cells.size());
  for (std::size_t i = 0; i < g.cells.size(); ++i)
    for (auto d : kHexDirections)
      if (int j = g.index_of(g.cells[i] + d); j >= 0) g.neighbors[i].push_back(j);
  for (auto& m : g.mecs) {
    m.cells.push_back(g.index_of(m.center));
    for (auto d : kHexDirections) m.cells.push_back(g.index_of(m.center + d));
  }
  return g;
}

struct User {
  std::uint64_t id = 0;
  int cell = 0;
  int serving_mec = 0;
};

struct StepMetrics {
  int t = 0;
  std::int64_t migrations = 0;
  std::int64_t cumulative_migrations = 0;
  double min_max_ratio = 0.0;
};

struct Move {
  std::uint32_t user = 0;
  int to_cell = 0;
};

using Rng = std::mt19937_64;

class SimWorld {
 public:
  SimWorld(HexGrid grid, Policy policy) : grid_(std::move(grid)), policy_(policy) {
    candidates_.resize(grid_.regions.size());
    for (std::size_t g = 0; g < grid_.regions.size(); ++g)
      for (int m : grid_.regions[g])
        candidates_[g].push_back({m, static_cast<double>(grid_.mecs[static_cast<std::size_t>(m)].capacity)});
    load_.assign(grid_.mecs.size(), 0);
  }

  const HexGrid& grid() const { return grid_; }
  Policy policy() const { return policy_; }
  void set_policy(Policy p) { policy_ = p; }
  const std::vector<User>& users() const { return users_; }
  const std::vector<std::int64_t>& load() const { return load_; }
  std::int64_t cumulative_migrations() const { return cumulative_; }
  int t() const { return t_; }

  /// Serving MEC of a user standing in `cell` under the active policy.
  int assign(std::uint64_t user_id, int cell) const {
    if (policy_ == Policy::WithoutRegions) return grid_.cell_mec[static_cast<std::size_t>(cell)];
    return region_hash(user_id, grid_.region_of_cell(cell));
  }

  int region_hash(std::uint64_t user_id, int region) const {
    const auto key = key_bytes(user_id);
    return rendezvous_select(key, candidates_[static_cast<std::size_t>(region)]);
  }

  void add_user(User u) {
    ++load_[static_cast<std::size_t>(u.serving_mec)];
    users_.push_back(u);
  }

  double min_max_ratio() const {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (std::size_t m = 0; m < load_.size(); ++m) {
      if (load_[m] == 0) return 0.0;
      const double u = static_cast<double>(load_[m]) / grid_.mecs[m].capacity;
      lo = std::min(lo, u);
      hi = std::max(hi, u);
    }
    return hi > 0 ? lo / hi : 0.0;
  }

  StepMetrics metrics(std::int64_t migrations) const { return {t_, migrations, cumulative_, min_max_ratio()}; }

  /// Picks `count` distinct users uniformly and a uniformly chosen in-grid
  /// neighbour cell for each. Does not modify the population.
  std::vector<Move> draw_moves(Rng& rng, std::size_t count) {
    if (count > users_.size())
      throw ConfigError("cannot move " + std::to_string(count) + " of " + std::to_string(users_.size()) + " users");
    if (order_.size() != users_.size()) {
      order_.resize(users_.size());
      for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::uint32_t>(i);
    }
    std::vector<Move> moves;
    moves.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, order_.size() - 1);
      std::swap(order_[i], order_[pick(rng)]);
      const auto uid = order_[i];
      const auto& nbrs = grid_.neighbors[static_cast<std::size_t>(users_[uid].cell)];
      std::uniform_int_distribution<std::size_t> dir(0, nbrs.size() - 1);
      moves.push_back({uid, nbrs[dir(rng)]});
    }
    return moves;
  }

  StepMetrics apply_moves(std::span<const Move> moves) {
    std::int64_t migrations = 0;
    for (const auto& mv : moves) {
      auto& u = users_[mv.user];
      const int before_region = grid_.region_of_cell(u.cell);
      u.cell = mv.to_cell;
      int next = u.serving_mec;
      if (policy_ == Policy::WithoutRegions) {
        next = grid_.cell_mec[static_cast<std::size_t>(u.cell)];
      } else if (grid_.region_of_cell(u.cell) != before_region) {
        // Within a region the hash is unchanged, so only region crossings
        // need recomputation.
        next = assign(u.id, u.cell);
      }
      if (next != u.serving_mec) {
        --load_[static_cast<std::size_t>(u.serving_mec)];
        ++load_[static_cast<std::size_t>(next)];
        u.serving_mec = next;
        ++migrations;
      }
    }
    ++t_;
    cumulative_ += migrations;
    return metrics(migrations);
  }

 private:
  HexGrid grid_;
  Policy policy_;
  std::vector<std::vector<WeightedCandidate<int>>> candidates_;
  std::vector<User> users_;
  std::vector<std::int64_t> load_;
  std::vector<std::uint32_t> order_;
  std::int64_t cumulative_ = 0;
  int t_ = 0;
};

inline Rng replication_rng(std::uint64_t seed, std::uint64_t replication) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replication), static_cast<std::uint32_t>(replication >> 32)};
  return Rng(seq);
}

/// Places users_per_capacity x capacity users on each MEC neighbourhood,
/// uniformly over its seven cells, served by that MEC. User ids are drawn so
/// that the region hash of every user agrees with its initial MEC; serving
/// state is therefore consistent with both policies from the start.
inline SimWorld build_world(const SimConfig& cfg, Rng& rng) {
  SimWorld world(build_grid(cfg), cfg.policy);
  const auto& grid = world.grid();
  std::uniform_int_distribution<std::uint64_t> any_id;
  std::uniform_int_distribution<std::size_t> petal(0, 6);
  for (std::size_t region = 0; region < grid.regions.size(); ++region) {
    std::map<int, std::int64_t> quota;
    std::int64_t remaining = 0;
    for (int m : grid.regions[region]) {
      quota[m] = std::int64_t{cfg.users_per_capacity} * grid.mecs[static_cast<std::size_t>(m)].capacity;
      remaining += quota[m];
    }
    while (remaining > 0) {
      const std::uint64_t id = any_id(rng);
      const int m = world.region_hash(id, static_cast<int>(region));
      auto& q = quota[m];
      if (q == 0) continue;
      --q;
      --remaining;
      const auto& site = grid.mecs[static_cast<std::size_t>(m)];
      world.add_user({id, site.cells[petal(rng)], m});
    }
  }
  return world;
}

inline std::size_t moves_per_step(double rate, std::size_t population) {
  return static_cast<std::size_t>(std::llround(rate * static_cast<double>(population)));
}

inline StepMetrics step(SimWorld& world, Rng& rng, double rate) {
  auto moves = world.draw_moves(rng, moves_per_step(rate, world.users().size()));
  return world.apply_moves(moves);
}

using MovementTrace = std::vector<std::vector<Move>>;

/// One replication; returns metrics for t = 0..steps.
inline std::vector<StepMetrics> run_replication(const SimConfig& cfg, Policy policy, double rate,
                                                std::uint64_t replication, MovementTrace* record = nullptr) {
  auto rng = replication_rng(cfg.seed, replication);
  SimConfig c = cfg;
  c.policy = policy;
  auto world = build_world(c, rng);
  std::vector<StepMetrics> out{world.metrics(0)};
  for (int t = 0; t < cfg.steps; ++t) {
    auto moves = world.draw_moves(rng, moves_per_step(rate, world.users().size()));
    out.push_back(world.apply_moves(moves));
    if (record) record->push_back(std::move(moves));
  }
  return out;
}

/// Rebuilds the replication's initial world and applies a recorded trace.
inline std::vector<StepMetrics> replay(const SimConfig& cfg, Policy policy, std::uint64_t replication,
                                       const MovementTrace& trace) {
  auto rng = replication_rng(cfg.seed, replication);
  SimConfig c = cfg;
  c.policy = policy;
  auto world = build_world(c, rng);
  std::vector<StepMetrics> out{world.metrics(0)};
  for (const auto& moves : trace) out.push_back(world.apply_moves(moves));
  return out;
}

struct ResultRow {
  Policy policy = Policy::WithRegions;
  double rate = 0;
  int replication = 0;
  StepMetrics m;
};

struct SummaryRow {
  Policy policy = Policy::WithRegions;
  double rate = 0;
  int step = 0;
  double mean_cumulative = 0, sd_cumulative = 0;
  double mean_ratio = 0, sd_ratio = 0;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;  // ordered by rate, policy, replication, step
  std::vector<SummaryRow> summary;

  const SummaryRow& at(Policy p, double rate, int step) const {
    for (const auto& s : summary)
      if (s.policy == p && s.rate == rate && s.step == step) return s;
    throw std::out_of_range("no summary row");
  }
};

inline void summarize(ExperimentResult& res, const SimConfig& cfg) {
  const auto reps = static_cast<double>(cfg.replications);
  for (double rate : cfg.rates)
    for (Policy p : {Policy::WithRegions, Policy::WithoutRegions})
      for (int s = 0; s <= cfg.steps; ++s) {
        double sc = 0, sc2 = 0, sr = 0, sr2 = 0;
        for (const auto& row : res.rows)
          if (row.policy == p && row.rate == rate && row.m.t == s) {
            const double c = static_cast<double>(row.m.cumulative_migrations);
            sc += c;
            sc2 += c * c;
            sr += row.m.min_max_ratio;
            sr2 += row.m.min_max_ratio * row.m.min_max_ratio;
          }
        SummaryRow out{p, rate, s, sc / reps, 0, sr / reps, 0};
        if (cfg.replications > 1) {
          out.sd_cumulative = std::sqrt(std::max(0.0, (sc2 - sc * sc / reps) / (reps - 1)));
          out.sd_ratio = std::sqrt(std::max(0.0, (sr2 - sr * sr / reps) / (reps - 1)));
        }
        res.summary.push_back(out);
      }
}

/// Every (rate, policy, replication) run. Replication r of both policies and
/// every rate starts from the same seeded world.
inline ExperimentResult run_experiment(const SimConfig& cfg) {
  cfg.validate();
  struct Job {
    double rate;
    Policy policy;
    int rep;
    std::vector<StepMetrics> out;
  };
  std::vector<Job> jobs;
  for (double rate : cfg.rates)
    for (Policy p : {Policy::WithRegions, Policy::WithoutRegions})
      for (int r = 0; r < cfg.replications; ++r) jobs.push_back({rate, p, r, {}});

  unsigned workers = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(jobs.size()));
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < jobs.size(); i += workers)
          jobs[i].out = run_replication(cfg, jobs[i].policy, jobs[i].rate, static_cast<std::uint64_t>(jobs[i].rep));
      });
  }

  ExperimentResult res;
  for (const auto& j : jobs)
    for (const auto& m : j.out) res.rows.push_back({j.policy, j.rate, j.rep, m});
  summarize(res, cfg);
  return res;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(10);
  os << v;
  return os.str();
}

inline std::string to_csv(const ExperimentResult& res) {
  std::string out = "policy,rate,replication,step,migrations,cumulative_migrations,min_max_ratio\n";
  for (const auto& r : res.rows) {
    out += to_string(r.policy);
    out += ',' + format_double(r.rate) + ',' + std::to_string(r.replication) + ',' + std::to_string(r.m.t) + ',' +
           std::to_string(r.m.migrations) + ',' + std::to_string(r.m.cumulative_migrations) + ',' +
           format_double(r.m.min_max_ratio) + '\n';
  }
  return out;
}

inline std::string summary_csv(const ExperimentResult& res) {
  std::string out = "policy,rate,step,mean_cumulative_migrations,sd_cumulative_migrations,mean_min_max_ratio,sd_min_max_ratio\n";
  for (const auto& s : res.summary)
    out += std::string(to_string(s.policy)) + ',' + format_double(s.rate) + ',' + std::to_string(s.step) + ',' +
           format_double(s.mean_cumulative) + ',' + format_double(s.sd_cumulative) + ',' +
           format_double(s.mean_ratio) + ',' + format_double(s.sd_ratio) + '\n';
  return out;
}

inline nlohmann::json metadata(const SimConfig& cfg) {
  const auto grid = build_grid(cfg);
  nlohmann::json mecs = nlohmann::json::array();
  std::size_t population = 0;
  for (const auto& m : grid.mecs) {
    mecs.push_back({{"id", m.id}, {"region", m.region}, {"capacity", m.capacity}, {"center", {m.center.q, m.center.r}}});
    population += static_cast<std::size_t>(cfg.users_per_capacity * m.capacity);
  }
  return {{"seed", cfg.seed},
          {"regions_count", cfg.regions_count},
          {"mecs_per_region", cfg.mecs_per_region},
          {"capacities", cfg.per_mec_capacities()},
          {"users_per_capacity", cfg.users_per_capacity},
          {"population", population},
          {"steps", cfg.steps},
          {"replications", cfg.replications},
          {"rates", cfg.rates},
          {"rate_unit", "fraction of population moved per step"},
          {"step_unit", "minute"},
          {"grid", {{"cells", grid.cells.size()},
                    {"coordinates", "axial"},
                    {"region_block", {{"rows", grid.block_rows}, {"cols", grid.block_cols}}},
                    {"mecs", mecs}}}};
}

}  // namespace megw::sim
