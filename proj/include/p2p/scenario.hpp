#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "p2p/engine.hpp"
#include "p2p/market.hpp"

namespace p2p {

inline constexpr int kScenarioSchemaVersion = 1;

struct Scenario {
  std::string name;
  std::vector<ProsumerSpec> prosumers;
  TradingGraph graph;             // explicit edges; the file may say "full-bipartite"
  double grid_sell_price = 5.0;   // cents/kWh paid by the grid for exports
  double grid_buy_price = 15.0;   // cents/kWh charged by the grid for imports
  SolverConfig solver;

  /// Validated directed-edge view. Throws ValidationError.
  Market market() const;
};

bool operator==(const Scenario& a, const Scenario& b);

/// Parses and validates scenario JSON. Throws ParseError (with line and
/// field) or ValidationError.
Scenario parse_scenario(std::string_view text);
Scenario load_scenario(const std::filesystem::path& path);

std::string dump_scenario(const Scenario& scenario);
/// Throws IoError.
void save_scenario(const Scenario& scenario, const std::filesystem::path& path);

/// The six-prosumer benchmark: odd ids produce, even ids consume, every
/// producer trades with every consumer; kappa 0.5, rho 0.25, tol 1e-2.
Scenario paper_scenario();

struct RandomScenarioOptions {
  std::size_t max_producers = 6;
  std::size_t max_consumers = 6;
  bool full_bipartite = true;
  /// Bounds wide enough that no box binds; single pair when both counts are 1.
  bool wide_bounds = false;
};

/// Random instance whose boxes are jointly feasible over its graph.
Scenario random_scenario(std::uint64_t seed, const RandomScenarioOptions& options = {});

/// One producer and one consumer with wide bounds.
Scenario random_pair_scenario(std::uint64_t seed);

}  // namespace p2p
