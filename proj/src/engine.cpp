#include "p2p/engine.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include <fmt/format.h>

#include "p2p/errors.hpp"

namespace p2p {

std::string_view to_string(Coupling c) noexcept {
  return c == Coupling::per_trade ? "per-trade" : "aggregate";
}

Coupling parse_coupling(std::string_view s) {
  if (s == "per-trade") return Coupling::per_trade;
  if (s == "aggregate") return Coupling::aggregate;
  throw ValidationError(fmt::format("unknown coupling '{}' (expected per-trade|aggregate)", s));
}

void validate(const SolverConfig& cfg) {
  if (!(cfg.kappa > 0.0) || !std::isfinite(cfg.kappa)) {
    throw ValidationError(fmt::format("kappa must be > 0 (got {})", cfg.kappa));
  }
  if (!(cfg.rho > 0.0) || !std::isfinite(cfg.rho)) {
    throw ValidationError(fmt::format("rho must be > 0 (got {})", cfg.rho));
  }
  if (!(cfg.tol > 0.0)) throw ValidationError(fmt::format("tol must be > 0 (got {})", cfg.tol));
  if (cfg.max_iter < 1) throw ValidationError("max_iter must be >= 1");
}

const TradeState& SettlementReport::trade(AgentId from, AgentId to) const {
  auto it = std::lower_bound(trades.begin(), trades.end(), std::pair(from, to),
                             [](const TradeState& t, const std::pair<AgentId, AgentId>& key) {
                               return std::pair(t.from, t.to) < key;
                             });
  if (it == trades.end() || it->from != from || it->to != to) {
    throw UnknownNode(fmt::format("no trade record {} -> {}", from, to));
  }
  return *it;
}

namespace {

bool same_bits(double a, double b) noexcept {
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

bool same_trades(const std::vector<TradeState>& a, const std::vector<TradeState>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const auto& x = a[k];
    const auto& y = b[k];
    if (x.from != y.from || x.to != y.to || !same_bits(x.p, y.p) || !same_bits(x.pi, y.pi) ||
        !same_bits(x.pi_accel, y.pi_accel) || !same_bits(x.pi_prev, y.pi_prev) ||
        !same_bits(x.sigma, y.sigma)) {
      return false;
    }
  }
  return true;
}

}  // namespace

bool bitwise_equal(const SettlementReport& a, const SettlementReport& b) {
  if (a.agent_ids != b.agent_ids || a.iterations != b.iterations || a.converged != b.converged ||
      !same_bits(a.final_delta, b.final_delta) || !same_bits(a.final_mismatch, b.final_mismatch) ||
      !same_trades(a.trades, b.trades) || a.setpoints.size() != b.setpoints.size() ||
      a.trace.size() != b.trace.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.setpoints.size(); ++i) {
    if (!same_bits(a.setpoints[i], b.setpoints[i])) return false;
  }
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    const auto& x = a.trace[i];
    const auto& y = b.trace[i];
    if (x.iteration != y.iteration || !same_bits(x.delta, y.delta) ||
        !same_bits(x.delta_p, y.delta_p) || !same_bits(x.delta_pi, y.delta_pi) ||
        !same_bits(x.mismatch, y.mismatch) || !same_trades(x.snapshot, y.snapshot)) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------

double p1_power_update(const TradeState& edge, const UtilityCoeffs& coeffs, Role role,
                       const AgentState& agent, double kappa) {
  if (!std::isfinite(edge.pi_accel) || !std::isfinite(edge.sigma) || !std::isfinite(agent.tau) ||
      !std::isfinite(agent.phi) || !std::isfinite(coeffs.alpha) || !std::isfinite(coeffs.beta)) {
    throw NonFiniteInput(fmt::format("non-finite input to power update on {} -> {}", edge.from,
                                     edge.to));
  }
  const double raw = (edge.pi_accel - agent.tau + agent.phi - coeffs.beta + kappa * edge.sigma) /
                     (2.0 * coeffs.alpha + kappa);
  return role == Role::producer ? std::max(0.0, raw) : std::min(0.0, raw);
}

std::vector<double> p1_aggregate_update(std::span<const TradeState> edges,
                                        const UtilityCoeffs& coeffs, Role role,
                                        const AgentState& agent, double kappa) {
  // With s = sum_m p_m, stationarity per trade is p_m = (c_m - 2 alpha s) / kappa
  // on the active set. Consumers are handled in the mirrored variable -p.
  const double sign = role == Role::producer ? 1.0 : -1.0;
  std::vector<double> c(edges.size());
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto& e = edges[k];
    if (!std::isfinite(e.pi_accel) || !std::isfinite(e.sigma) || !std::isfinite(agent.tau) ||
        !std::isfinite(agent.phi)) {
      throw NonFiniteInput(fmt::format("non-finite input to power update on {} -> {}", e.from,
                                       e.to));
    }
    c[k] = sign * (e.pi_accel - agent.tau + agent.phi - coeffs.beta + kappa * e.sigma);
  }
  std::vector<std::size_t> order(edges.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return c[a] > c[b]; });

  const double two_alpha = 2.0 * coeffs.alpha;
  double s = 0.0;
  double partial = 0.0;
  for (std::size_t k = 0; k <= order.size(); ++k) {
    const double candidate = partial / (kappa + two_alpha * static_cast<double>(k));
    const bool next_inactive = k == order.size() || c[order[k]] - two_alpha * candidate <= 0.0;
    if (next_inactive) {
      s = candidate;
      break;
    }
    partial += c[order[k]];
  }
  std::vector<double> p(edges.size());
  for (std::size_t k = 0; k < edges.size(); ++k) {
    p[k] = sign * std::max(0.0, (c[k] - two_alpha * s) / kappa);
  }
  return p;
}

Multipliers multiplier_update(const AgentState& agent, double p_hat, const PowerBounds& bounds,
                              double rho) noexcept {
  return {std::max(0.0, agent.tau + rho * (p_hat - bounds.p_max)),
          std::max(0.0, agent.phi + rho * (bounds.p_min - p_hat))};
}

double p2_sigma_update(double p_nm, double p_mn, double pi_nm, double pi_mn,
                       double kappa) noexcept {
  return (kappa * (p_nm - p_mn) - (pi_nm - pi_mn)) / (2.0 * kappa);
}

double next_momentum(double mu) noexcept {
  return (1.0 + std::sqrt(1.0 + 4.0 * mu * mu)) / 2.0;
}

DualUpdate p3_dual_update(double sigma, double p, double pi_accel, double pi_prev, double mu,
                          double kappa, bool acceleration) noexcept {
  DualUpdate out;
  out.pi = pi_accel + kappa * (sigma - p);
  out.mu = next_momentum(mu);
  const double momentum = acceleration ? (mu - 1.0) / out.mu : 0.0;
  out.pi_accel = out.pi + momentum * (out.pi - pi_prev);
  return out;
}

ChangeNorms edge_changes(std::span<const TradeState> current, std::span<const TradeState> previous) {
  if (current.size() != previous.size()) {
    throw EdgeSetMismatch(fmt::format("snapshot sizes differ ({} vs {})", current.size(),
                                      previous.size()));
  }
  ChangeNorms n;
  for (std::size_t k = 0; k < current.size(); ++k) {
    const auto& c = current[k];
    const auto& p = previous[k];
    if (c.from != p.from || c.to != p.to) {
      throw EdgeSetMismatch(fmt::format("record {} is {} -> {} now but {} -> {} before", k, c.from,
                                        c.to, p.from, p.to));
    }
    const double dp = c.p - p.p;
    const double dpi = c.pi - p.pi;
    n.power_sq += dp * dp;
    n.price_sq += dpi * dpi;
  }
  return n;
}

ConvergenceError combine_change_norms(std::span<const ChangeNorms> per_agent) noexcept {
  double power_sq = 0.0;
  double price_sq = 0.0;
  for (const auto& n : per_agent) {
    power_sq += n.power_sq;
    price_sq += n.price_sq;
  }
  return {std::sqrt(power_sq + price_sq), std::sqrt(power_sq), std::sqrt(price_sq)};
}

namespace {

// Calls fn(first, last) for each maximal run of records sharing `from`.
template <class Fn>
void for_each_source_run(std::size_t n, std::span<const TradeState> trades, Fn&& fn) {
  std::size_t first = 0;
  while (first < n) {
    std::size_t last = first + 1;
    while (last < n && trades[last].from == trades[first].from) ++last;
    fn(first, last);
    first = last;
  }
}

}  // namespace

ConvergenceError convergence_error_parts(std::span<const TradeState> current,
                                         std::span<const TradeState> previous) {
  if (current.size() != previous.size()) {
    throw EdgeSetMismatch(fmt::format("snapshot sizes differ ({} vs {})", current.size(),
                                      previous.size()));
  }
  std::vector<ChangeNorms> partials;
  for_each_source_run(current.size(), current, [&](std::size_t first, std::size_t last) {
    partials.push_back(edge_changes(current.subspan(first, last - first),
                                    previous.subspan(first, last - first)));
  });
  return combine_change_norms(partials);
}

double convergence_error(std::span<const TradeState> current, std::span<const TradeState> previous) {
  return convergence_error_parts(current, previous).delta;
}

double global_mismatch(std::span<const TradeState> trades) noexcept {
  double total = 0.0;
  std::vector<double> run;
  for_each_source_run(trades.size(), trades, [&](std::size_t first, std::size_t last) {
    run.clear();
    for (std::size_t k = first; k < last; ++k) run.push_back(trades[k].p);
    total += aggregate_setpoint(run);
  });
  return total;
}

// ---------------------------------------------------------------------------

double exchanged_price(const TradeState& edge, const SolverConfig& cfg) noexcept {
  return cfg.exchanged_price == ExchangedPrice::raw ? edge.pi : edge.pi_accel;
}

std::vector<double> agent_power_phase(std::span<const TradeState> edges, const ProsumerSpec& spec,
                                      const AgentState& agent, const SolverConfig& cfg) {
  if (cfg.coupling == Coupling::aggregate) {
    return p1_aggregate_update(edges, spec.coeffs, spec.role, agent, cfg.kappa);
  }
  std::vector<double> p(edges.size());
  for (std::size_t k = 0; k < edges.size(); ++k) {
    p[k] = p1_power_update(edges[k], spec.coeffs, spec.role, agent, cfg.kappa);
  }
  return p;
}

ChangeNorms agent_dual_phase(std::span<TradeState> edges, std::span<const double> new_p,
                             std::span<const PartnerView> partners, const ProsumerSpec& spec,
                             AgentState& agent, const SolverConfig& cfg) {
  ChangeNorms norms;
  const double mu = agent.mu;
  for (std::size_t k = 0; k < edges.size(); ++k) {
    auto& e = edges[k];
    const double sigma =
        p2_sigma_update(new_p[k], partners[k].p, exchanged_price(e, cfg), partners[k].price, cfg.kappa);
    const auto dual = p3_dual_update(sigma, new_p[k], e.pi_accel, e.pi, mu, cfg.kappa, cfg.acceleration);
    const double dp = new_p[k] - e.p;
    const double dpi = dual.pi - e.pi;
    norms.power_sq += dp * dp;
    norms.price_sq += dpi * dpi;
    e.p = new_p[k];
    e.sigma = sigma;
    e.pi_prev = e.pi;
    e.pi = dual.pi;
    e.pi_accel = dual.pi_accel;
  }
  agent.mu = next_momentum(mu);
  agent.p_hat = aggregate_setpoint(new_p);
  const auto m = multiplier_update(agent, agent.p_hat, spec.bounds, cfg.rho);
  agent.tau = m.tau;
  agent.phi = m.phi;
  return norms;
}

void apply_restart(std::span<TradeState> edges, AgentState& agent) noexcept {
  agent.mu = 1.0;
  for (auto& e : edges) e.pi_accel = e.pi;
}

bool restart_triggered(const SolverConfig& cfg, double previous_delta, double delta) noexcept {
  return cfg.restart && std::isfinite(previous_delta) && delta > previous_delta;
}

// ---------------------------------------------------------------------------

ClearingEngine::ClearingEngine(Market market, SolverConfig cfg)
    : market_(std::move(market)), cfg_(cfg) {
  validate(cfg_);
  trades_.reserve(market_.edges().size());
  for (const auto& e : market_.edges()) trades_.push_back({e.from, e.to});
  agents_.assign(market_.agents().size(), AgentState{});
}

void ClearingEngine::set_state(std::vector<TradeState> trades, std::vector<AgentState> agents) {
  if (trades.size() != trades_.size() || agents.size() != agents_.size()) {
    throw EdgeSetMismatch("state does not match the market shape");
  }
  for (std::size_t k = 0; k < trades.size(); ++k) {
    if (trades[k].from != trades_[k].from || trades[k].to != trades_[k].to) {
      throw EdgeSetMismatch(fmt::format("record {} is not {} -> {}", k, trades_[k].from,
                                        trades_[k].to));
    }
  }
  trades_ = std::move(trades);
  agents_ = std::move(agents);
}

IterationRecord ClearingEngine::step() {
  ++iteration_;
  const auto specs = market_.agents();
  const auto edges = market_.edges();

  std::vector<double> new_p(trades_.size());
  for (std::size_t a = 0; a < specs.size(); ++a) {
    const auto out = market_.outgoing(a);
    if (out.empty()) continue;
    const auto first = out.front();
    const auto p = agent_power_phase(std::span(trades_).subspan(first, out.size()), specs[a],
                                     agents_[a], cfg_);
    std::copy(p.begin(), p.end(), new_p.begin() + static_cast<std::ptrdiff_t>(first));
  }

  // Everything a partner would have sent this round, captured before any
  // agent touches its prices.
  std::vector<PartnerView> views(trades_.size());
  for (std::size_t k = 0; k < trades_.size(); ++k) {
    const auto rev = edges[k].reverse;
    views[k] = {new_p[rev], exchanged_price(trades_[rev], cfg_)};
  }

  std::vector<ChangeNorms> partials(specs.size());
  for (std::size_t a = 0; a < specs.size(); ++a) {
    const auto out = market_.outgoing(a);
    const auto first = out.empty() ? std::size_t{0} : out.front();
    partials[a] = agent_dual_phase(std::span(trades_).subspan(first, out.size()),
                                   std::span<const double>(new_p).subspan(first, out.size()),
                                   std::span<const PartnerView>(views).subspan(first, out.size()),
                                   specs[a], agents_[a], cfg_);
  }

  IterationRecord rec;
  rec.iteration = iteration_;
  if (iteration_ > 1) {
    const auto err = combine_change_norms(partials);
    rec.delta = err.delta;
    rec.delta_p = err.delta_p;
    rec.delta_pi = err.delta_pi;
  }
  rec.mismatch = global_mismatch(trades_);
  if (cfg_.record_snapshots) rec.snapshot = trades_;

  if (restart_triggered(cfg_, last_delta_, rec.delta)) {
    for (std::size_t a = 0; a < specs.size(); ++a) {
      const auto out = market_.outgoing(a);
      const auto first = out.empty() ? std::size_t{0} : out.front();
      apply_restart(std::span(trades_).subspan(first, out.size()), agents_[a]);
    }
  }
  last_delta_ = rec.delta;
  return rec;
}

SettlementReport run_clearing(const Market& market, const SolverConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  ClearingEngine engine(market, cfg);
  SettlementReport report;
  for (std::size_t i = 0; i < cfg.max_iter; ++i) {
    auto rec = engine.step();
    report.final_delta = rec.delta;
    report.final_mismatch = rec.mismatch;
    report.iterations = rec.iteration;
    report.trace.push_back(std::move(rec));
    if (report.iterations >= 2 && report.final_delta <= cfg.tol) {
      report.converged = true;
      break;
    }
  }
  for (const auto& a : market.agents()) report.agent_ids.push_back(a.id);
  report.trades.assign(engine.trades().begin(), engine.trades().end());
  for (const auto& s : engine.agents()) report.setpoints.push_back(s.p_hat);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace p2p
