#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "p2p/market.hpp"

namespace p2p {

enum class OracleMethod { projected_gradient, grid_search };

std::string_view to_string(OracleMethod m) noexcept;

/// Centralised optimum over one non-negative flow per trading pair
/// (producer -> consumer). Reciprocity holds by construction.
struct OracleSolution {
  std::vector<std::pair<AgentId, AgentId>> pairs;  // (producer, consumer), sorted
  std::vector<double> flows;                       // aligned with pairs
  std::vector<AgentId> agent_ids;
  std::vector<double> setpoints;                   // aligned with agent_ids
  double objective = 0.0;                          // sum of prosumer costs
  double kkt_residual = 0.0;
  OracleMethod method = OracleMethod::projected_gradient;
  std::size_t iterations = 0;

  /// Directed trade n -> m: +flow seen from the producer, -flow from the consumer.
  double trade(AgentId from, AgentId to) const;
};

/// Set points implied by per-pair flows, ordered like Market::agents().
std::vector<double> setpoints_from_flows(const Market& market, std::span<const double> flows);

/// sum_n c_n(p_hat_n) for the given flows.
double centralized_objective(const Market& market, std::span<const double> flows);

/// d objective / d flow for each trading pair.
std::vector<double> objective_gradient(const Market& market, std::span<const double> flows);

/// Exact feasibility of the node boxes under the trading graph (a circulation
/// with lower bounds). Throws Infeasible naming the shortfall.
void check_feasible(const Market& market);

/// Augmented-Lagrangian method over the node boxes with an accelerated
/// projected-gradient inner solver on flows >= 0. Returns once the KKT
/// residual is <= tolerance. Throws Infeasible or MaxIterations.
OracleSolution solve_centralized(const Market& market, double tolerance = 1e-9,
                                 std::size_t max_iterations = 2'000'000);

/// Largest pair count grid_search accepts.
inline constexpr std::size_t kGridMaxEdges = 3;
/// Largest number of grid points grid_search evaluates.
inline constexpr std::size_t kGridMaxPoints = 400'000'000;

/// Exhaustive search over flows k * resolution in [0, min(producer max,
/// consumer max magnitude)] per pair; best feasible point wins, ties to the
/// lowest flat index. OpenMP-parallel. Throws TooLarge or Infeasible.
OracleSolution grid_search(const Market& market, double resolution);

/// Single-threaded reference for grid_search; identical results.
OracleSolution grid_search_serial(const Market& market, double resolution);

/// Upper bound on objective(grid best) - objective(optimum) for a grid of
/// the given resolution, assuming a feasible grid point lies in the cell of
/// the optimum.
double grid_gap_bound(const Market& market, double resolution);

}  // namespace p2p
