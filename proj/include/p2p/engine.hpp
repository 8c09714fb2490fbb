#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "p2p/market.hpp"

namespace p2p {

/// How the local power subproblem differentiates the prosumer cost.
///  per_trade: 2 alpha p_nm + beta for each trade (closed form per edge).
///  aggregate: 2 alpha p_hat + beta, the exact gradient (coupled per agent).
enum class Coupling { per_trade, aggregate };

/// Which price feeds the sigma update and travels on the wire.
enum class ExchangedPrice { raw, accelerated };

std::string_view to_string(Coupling c) noexcept;
Coupling parse_coupling(std::string_view s);

struct SolverConfig {
  double kappa = 0.5;
  double rho = 0.25;
  double tol = 1e-2;
  std::size_t max_iter = 1000;
  bool acceleration = true;
  bool restart = false;
  Coupling coupling = Coupling::per_trade;
  ExchangedPrice exchanged_price = ExchangedPrice::raw;
  bool record_snapshots = false;
};

/// Throws ValidationError when a parameter is out of range.
void validate(const SolverConfig& cfg);

/// Iterate for one directed trade record n -> m.
struct TradeState {
  AgentId from = 0;
  AgentId to = 0;
  double p = 0.0;         // traded power proposed by `from`
  double pi = 0.0;        // latest raw price
  double pi_accel = 0.0;  // momentum-extrapolated price used by the power update
  double pi_prev = 0.0;   // raw price of the iteration before `pi`
  double sigma = 0.0;     // consensus copy of p
};

/// Per-agent iterate.
struct AgentState {
  double tau = 0.0;  // upper-bound multiplier
  double phi = 0.0;  // lower-bound multiplier
  double mu = 1.0;   // momentum sequence
  double p_hat = 0.0;
};

struct IterationRecord {
  std::size_t iteration = 0;
  double delta = std::numeric_limits<double>::infinity();
  double delta_p = std::numeric_limits<double>::infinity();
  double delta_pi = std::numeric_limits<double>::infinity();
  double mismatch = 0.0;
  std::vector<TradeState> snapshot;  // filled when SolverConfig::record_snapshots
};

struct SettlementReport {
  std::vector<AgentId> agent_ids;  // ascending
  std::vector<TradeState> trades;  // sorted by (from, to)
  std::vector<double> setpoints;   // p_hat, aligned with agent_ids
  std::size_t iterations = 0;
  bool converged = false;
  double final_delta = std::numeric_limits<double>::infinity();
  double final_mismatch = 0.0;
  double wall_seconds = 0.0;
  std::vector<IterationRecord> trace;

  const TradeState& trade(AgentId from, AgentId to) const;
};

/// True when every numeric field agrees bit for bit. Wall time is ignored.
bool bitwise_equal(const SettlementReport& a, const SettlementReport& b);

// ---------------------------------------------------------------------------
// Closed-form kernels. Pure functions over scalars so that the sequential
// engine and the agent harness share one arithmetic path.

/// Local power update for one trade: the unconstrained stationary point
/// (pi_accel - tau + phi - beta + kappa sigma) / (2 alpha + kappa), projected
/// onto the role's half line. Throws NonFiniteInput.
double p1_power_update(const TradeState& edge, const UtilityCoeffs& coeffs, Role role,
                       const AgentState& agent, double kappa);

/// Exact-gradient variant: solves the agent's sign-constrained subproblem
/// jointly over all its trades. `edges` are the agent's records in ascending
/// partner order; the result is aligned with them.
std::vector<double> p1_aggregate_update(std::span<const TradeState> edges,
                                        const UtilityCoeffs& coeffs, Role role,
                                        const AgentState& agent, double kappa);

struct Multipliers {
  double tau = 0.0;
  double phi = 0.0;
};

Multipliers multiplier_update(const AgentState& agent, double p_hat, const PowerBounds& bounds,
                              double rho) noexcept;

/// sigma(n->m). Swapping the argument pairs negates the result exactly.
double p2_sigma_update(double p_nm, double p_mn, double pi_nm, double pi_mn,
                       double kappa) noexcept;

double next_momentum(double mu) noexcept;

struct DualUpdate {
  double pi = 0.0;
  double pi_accel = 0.0;
  double mu = 1.0;
};

/// Dual ascent from the accelerated price followed by momentum extrapolation
/// against `pi_prev` (the previous raw price). With acceleration off the
/// momentum coefficient is zero and pi_accel == pi.
DualUpdate p3_dual_update(double sigma, double p, double pi_accel, double pi_prev, double mu,
                          double kappa, bool acceleration = true) noexcept;

/// Sums of squared changes over a set of records, accumulated in order.
struct ChangeNorms {
  double power_sq = 0.0;
  double price_sq = 0.0;
};

/// Squared power/price changes of matching records. Throws EdgeSetMismatch.
ChangeNorms edge_changes(std::span<const TradeState> current, std::span<const TradeState> previous);

struct ConvergenceError {
  double delta = 0.0;
  double delta_p = 0.0;
  double delta_pi = 0.0;
};

/// Folds per-agent partial norms (ascending agent id) into the global error.
ConvergenceError combine_change_norms(std::span<const ChangeNorms> per_agent) noexcept;

/// sqrt(||dp||^2 + ||dpi||^2) over all directed records. Records must be
/// sorted by (from, to); partial sums are taken per source agent and then
/// folded in ascending id. Throws EdgeSetMismatch.
ConvergenceError convergence_error_parts(std::span<const TradeState> current,
                                         std::span<const TradeState> previous);
double convergence_error(std::span<const TradeState> current, std::span<const TradeState> previous);

/// Sum of all set points: per-agent aggregate in ascending partner order,
/// folded in ascending agent id. Records must be sorted by (from, to).
double global_mismatch(std::span<const TradeState> trades) noexcept;

// ---------------------------------------------------------------------------
// Per-agent round phases. A round is: power phase at every agent, exchange of
// (p, price) with each partner, dual phase at every agent. The engine and the
// agent harness both run these, which is what makes them bit-identical.

/// Price an agent sends to its partner for the sigma update.
double exchanged_price(const TradeState& edge, const SolverConfig& cfg) noexcept;

/// New traded power for each of the agent's records (ascending partner).
std::vector<double> agent_power_phase(std::span<const TradeState> edges, const ProsumerSpec& spec,
                                      const AgentState& agent, const SolverConfig& cfg);

/// What an agent learns from partner m in one round: p(m->n) and its price.
struct PartnerView {
  double p = 0.0;
  double price = 0.0;
};

/// Applies the sigma, dual and multiplier updates in place and returns the
/// agent's contribution to the convergence error. `new_p` and `partners`
/// are aligned with `edges`.
ChangeNorms agent_dual_phase(std::span<TradeState> edges, std::span<const double> new_p,
                             std::span<const PartnerView> partners, const ProsumerSpec& spec,
                             AgentState& agent, const SolverConfig& cfg);

/// Momentum restart: mu back to one and pi_accel back to the raw price.
void apply_restart(std::span<TradeState> edges, AgentState& agent) noexcept;

/// Restart fires when the error grew since the previous round.
bool restart_triggered(const SolverConfig& cfg, double previous_delta, double delta) noexcept;

// ---------------------------------------------------------------------------

/// Sequential fast-ADMM driver. All variables start at zero, mu at one.
class ClearingEngine {
 public:
  ClearingEngine(Market market, SolverConfig cfg);

  const Market& market() const noexcept { return market_; }
  const SolverConfig& config() const noexcept { return cfg_; }
  std::span<const TradeState> trades() const noexcept { return trades_; }
  std::span<const AgentState> agents() const noexcept { return agents_; }
  std::size_t iteration() const noexcept { return iteration_; }

  /// Replaces the iterate. Sizes must match the market.
  void set_state(std::vector<TradeState> trades, std::vector<AgentState> agents);

  /// One full round: power, sigma, dual, multiplier updates, then the
  /// convergence metrics. The first round reports delta = +inf.
  IterationRecord step();

 private:
  Market market_;
  SolverConfig cfg_;
  std::vector<TradeState> trades_;
  std::vector<AgentState> agents_;
  std::size_t iteration_ = 0;
  double last_delta_ = std::numeric_limits<double>::infinity();
};

/// Iterates until delta <= tol (checked from the second round) or max_iter.
/// A run that hits the cap is returned with converged = false.
SettlementReport run_clearing(const Market& market, const SolverConfig& cfg);

/// Clears many independent markets. The OpenMP version and the serial
/// reference produce identical reports apart from wall time.
std::vector<SettlementReport> run_clearing_batch(std::span<const Market> markets,
                                                 const SolverConfig& cfg);
std::vector<SettlementReport> run_clearing_batch_serial(std::span<const Market> markets,
                                                        const SolverConfig& cfg);

}  // namespace p2p
