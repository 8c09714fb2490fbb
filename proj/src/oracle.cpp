#include "p2p/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "p2p/errors.hpp"

namespace p2p {

std::string_view to_string(OracleMethod m) noexcept {
  return m == OracleMethod::projected_gradient ? "projected-gradient" : "grid-search";
}

double OracleSolution::trade(AgentId from, AgentId to) const {
  for (std::size_t e = 0; e < pairs.size(); ++e) {
    if (pairs[e].first == from && pairs[e].second == to) return flows[e];
    if (pairs[e].first == to && pairs[e].second == from) return -flows[e];
  }
  throw UnknownNode(fmt::format("no trading pair ({}, {})", from, to));
}

namespace {

struct Node {
  double alpha, beta, gamma, lo, hi, sign;
  std::vector<std::size_t> pairs;  // ascending
};

struct Problem {
  std::vector<Node> nodes;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (producer idx, consumer idx)
  std::vector<std::pair<AgentId, AgentId>> pair_ids;
  std::vector<AgentId> ids;
};

Problem make_problem(const Market& market) {
  Problem pb;
  for (const auto& a : market.agents()) {
    pb.nodes.push_back({a.coeffs.alpha, a.coeffs.beta, a.coeffs.gamma, a.bounds.p_min,
                        a.bounds.p_max, a.role == Role::producer ? 1.0 : -1.0, {}});
    pb.ids.push_back(a.id);
  }
  pb.pair_ids = market.trade_pairs();
  for (std::size_t e = 0; e < pb.pair_ids.size(); ++e) {
    const auto ip = market.agent_index(pb.pair_ids[e].first);
    const auto ic = market.agent_index(pb.pair_ids[e].second);
    pb.pairs.emplace_back(ip, ic);
    pb.nodes[ip].pairs.push_back(e);
    pb.nodes[ic].pairs.push_back(e);
  }
  return pb;
}

void setpoints(const Problem& pb, std::span<const double> q, std::span<double> out) {
  for (std::size_t n = 0; n < pb.nodes.size(); ++n) {
    double s = 0.0;
    for (auto e : pb.nodes[n].pairs) s += q[e];
    out[n] = pb.nodes[n].sign * s;
  }
}

double objective(const Problem& pb, std::span<const double> p_hat) {
  double total = 0.0;
  for (std::size_t n = 0; n < pb.nodes.size(); ++n) {
    const auto& nd = pb.nodes[n];
    total += utility_cost({nd.alpha, nd.beta, nd.gamma}, p_hat[n]);
  }
  return total;
}

// Chain rule from node gradients to pair gradients.
void pair_gradient(const Problem& pb, std::span<const double> node_grad, std::span<double> out) {
  for (std::size_t e = 0; e < pb.pairs.size(); ++e) {
    out[e] = node_grad[pb.pairs[e].first] - node_grad[pb.pairs[e].second];
  }
}

double box_excess(const Node& nd, double p) { return p - std::clamp(p, nd.lo, nd.hi); }

// KKT residual of the flow problem for multipliers nu (positive on an
// active upper bound, negative on an active lower bound).
double kkt_residual(const Problem& pb, std::span<const double> q, std::span<const double> p_hat,
                    std::span<const double> nu) {
  const auto n_nodes = pb.nodes.size();
  std::vector<double> node_grad(n_nodes);
  double worst = 0.0;
  for (std::size_t n = 0; n < n_nodes; ++n) {
    const auto& nd = pb.nodes[n];
    node_grad[n] = 2.0 * nd.alpha * p_hat[n] + nd.beta + nu[n];
    worst = std::max(worst, std::abs(box_excess(nd, p_hat[n])));
    const double slack = nu[n] >= 0.0 ? nd.hi - p_hat[n] : p_hat[n] - nd.lo;
    worst = std::max(worst, std::abs(nu[n]) * std::max(0.0, slack));
  }
  std::vector<double> g(q.size());
  pair_gradient(pb, node_grad, g);
  for (std::size_t e = 0; e < q.size(); ++e) {
    worst = std::max(worst, std::abs(q[e] - std::max(0.0, q[e] - g[e])));
  }
  return worst;
}

// Dense Edmonds-Karp; the graphs here have a handful of nodes.
class MaxFlow {
 public:
  explicit MaxFlow(std::size_t n) : n_(n), cap_(n * n, 0.0) {}

  void add(std::size_t u, std::size_t v, double c) { cap_[u * n_ + v] += c; }

  double run(std::size_t s, std::size_t t, double eps) {
    double total = 0.0;
    std::vector<std::size_t> parent(n_);
    for (;;) {
      std::fill(parent.begin(), parent.end(), n_);
      parent[s] = s;
      std::deque<std::size_t> queue{s};
      while (!queue.empty() && parent[t] == n_) {
        const auto u = queue.front();
        queue.pop_front();
        for (std::size_t v = 0; v < n_; ++v) {
          if (parent[v] == n_ && cap_[u * n_ + v] > eps) {
            parent[v] = u;
            queue.push_back(v);
          }
        }
      }
      if (parent[t] == n_) return total;
      double push = std::numeric_limits<double>::infinity();
      for (auto v = t; v != s; v = parent[v]) push = std::min(push, cap_[parent[v] * n_ + v]);
      for (auto v = t; v != s; v = parent[v]) {
        cap_[parent[v] * n_ + v] -= push;
        cap_[v * n_ + parent[v]] += push;
      }
      total += push;
    }
  }

 private:
  std::size_t n_;
  std::vector<double> cap_;
};

}  // namespace

std::vector<double> setpoints_from_flows(const Market& market, std::span<const double> flows) {
  const auto pb = make_problem(market);
  if (flows.size() != pb.pairs.size()) throw EdgeSetMismatch("flow count does not match pairs");
  std::vector<double> p(pb.nodes.size());
  setpoints(pb, flows, p);
  return p;
}

double centralized_objective(const Market& market, std::span<const double> flows) {
  const auto pb = make_problem(market);
  const auto p = setpoints_from_flows(market, flows);
  return objective(pb, p);
}

std::vector<double> objective_gradient(const Market& market, std::span<const double> flows) {
  const auto pb = make_problem(market);
  const auto p = setpoints_from_flows(market, flows);
  std::vector<double> node_grad(p.size());
  for (std::size_t n = 0; n < p.size(); ++n) {
    node_grad[n] = 2.0 * pb.nodes[n].alpha * p[n] + pb.nodes[n].beta;
  }
  std::vector<double> g(pb.pairs.size());
  pair_gradient(pb, node_grad, g);
  return g;
}

void check_feasible(const Market& market) {
  const auto pb = make_problem(market);
  // Circulation s -> producer [lo, hi] -> consumer [0, inf) -> t [|hi|, |lo|] -> s,
  // reduced to max-flow between a super source (0) and super sink (1).
  const std::size_t s = 2, t = 3, base = 4;
  const std::size_t n = base + pb.nodes.size();
  double scale = 1.0;
  for (const auto& nd : pb.nodes) scale += std::abs(nd.lo) + std::abs(nd.hi);
  const double big = 2.0 * scale;
  MaxFlow mf(n);
  std::vector<double> excess(n, 0.0);
  auto add_bounded = [&](std::size_t u, std::size_t v, double lower, double upper) {
    mf.add(u, v, upper - lower);
    excess[v] += lower;
    excess[u] -= lower;
  };
  for (std::size_t k = 0; k < pb.nodes.size(); ++k) {
    const auto& nd = pb.nodes[k];
    if (nd.sign > 0) {
      add_bounded(s, base + k, nd.lo, nd.hi);
    } else {
      add_bounded(base + k, t, -nd.hi, -nd.lo);
    }
  }
  for (auto [p, c] : pb.pairs) mf.add(base + p, base + c, big);
  mf.add(t, s, big);
  double required = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    if (excess[v] > 0.0) {
      mf.add(0, v, excess[v]);
      required += excess[v];
    } else if (excess[v] < 0.0) {
      mf.add(v, 1, -excess[v]);
    }
  }
  const double eps = 1e-12 * scale;
  const double achieved = mf.run(0, 1, eps);
  if (achieved < required - 1e-9 * scale) {
    throw Infeasible(fmt::format(
        "set-point boxes cannot be met over the trading graph (shortfall {:.6g} kW)",
        required - achieved));
  }
}

OracleSolution solve_centralized(const Market& market, double tolerance,
                                 std::size_t max_iterations) {
  if (!(tolerance > 0.0)) throw ValidationError("oracle tolerance must be > 0");
  check_feasible(market);
  const auto pb = make_problem(market);
  const auto m = pb.pairs.size();
  const auto n_nodes = pb.nodes.size();

  std::size_t max_degree = 0;
  double max_curv = 0.0;
  for (const auto& nd : pb.nodes) {
    max_degree = std::max(max_degree, nd.pairs.size());
    max_curv = std::max(max_curv, 2.0 * nd.alpha);
  }

  std::vector<double> q(m, 0.0), y(m, 0.0), q_next(m), grad(m);
  std::vector<double> p_hat(n_nodes), node_grad(n_nodes), nu(n_nodes, 0.0);
  double penalty = 1.0;
  double previous_violation = std::numeric_limits<double>::infinity();
  std::size_t used = 0;

  // Inner objective: f(q) + sum_n penalty/2 * dist(p_hat + nu/penalty, box)^2.
  auto inner_node_grad = [&](std::span<const double> flows) {
    setpoints(pb, flows, p_hat);
    for (std::size_t n = 0; n < n_nodes; ++n) {
      const auto& nd = pb.nodes[n];
      node_grad[n] = 2.0 * nd.alpha * p_hat[n] + nd.beta +
                     penalty * box_excess(nd, p_hat[n] + nu[n] / penalty);
    }
  };

  OracleSolution sol;
  sol.method = OracleMethod::projected_gradient;
  sol.pairs = pb.pair_ids;
  sol.agent_ids = pb.ids;

  for (;;) {
    const double lipschitz = 2.0 * static_cast<double>(std::max<std::size_t>(max_degree, 1)) *
                             (max_curv + penalty);
    const double step = 1.0 / lipschitz;
    y = q;
    double t = 1.0;
    for (;;) {
      if (used++ >= max_iterations) {
        throw MaxIterations(fmt::format("oracle did not reach tolerance {} in {} iterations",
                                        tolerance, max_iterations));
      }
      inner_node_grad(y);
      pair_gradient(pb, node_grad, grad);
      double mapping = 0.0;
      double restart_test = 0.0;
      for (std::size_t e = 0; e < m; ++e) {
        q_next[e] = std::max(0.0, y[e] - step * grad[e]);
        mapping = std::max(mapping, lipschitz * std::abs(y[e] - q_next[e]));
        restart_test += (y[e] - q_next[e]) * (q_next[e] - q[e]);
      }
      if (mapping <= 0.1 * tolerance) {
        q = q_next;
        break;
      }
      const double t_next = (1.0 + std::sqrt(1.0 + 4.0 * t * t)) / 2.0;
      if (restart_test > 0.0) {
        y = q_next;
        t = 1.0;
      } else {
        for (std::size_t e = 0; e < m; ++e) {
          y[e] = q_next[e] + ((t - 1.0) / t_next) * (q_next[e] - q[e]);
        }
        t = t_next;
      }
      q.swap(q_next);
    }

    setpoints(pb, q, p_hat);
    double violation = 0.0;
    for (std::size_t n = 0; n < n_nodes; ++n) {
      const auto& nd = pb.nodes[n];
      nu[n] = penalty * box_excess(nd, p_hat[n] + nu[n] / penalty);
      violation = std::max(violation, std::abs(box_excess(nd, p_hat[n])));
    }
    const double kkt = kkt_residual(pb, q, p_hat, nu);
    if (kkt <= tolerance) {
      sol.kkt_residual = kkt;
      break;
    }
    if (violation > 0.25 * previous_violation) penalty *= 10.0;
    previous_violation = violation;
  }

  sol.flows = q;
  sol.setpoints.assign(p_hat.begin(), p_hat.end());
  sol.objective = objective(pb, p_hat);
  sol.iterations = used;
  return sol;
}

// ---------------------------------------------------------------------------

namespace {

struct Grid {
  Problem pb;
  double resolution = 0.0;
  std::vector<std::size_t> counts;  // points per pair
  std::size_t total = 1;
};

Grid make_grid(const Market& market, double resolution) {
  if (!(resolution > 0.0)) throw ValidationError("grid resolution must be > 0");
  Grid g{make_problem(market), resolution, {}, 1};
  if (g.pb.pairs.size() > kGridMaxEdges) {
    throw TooLarge(fmt::format("grid search accepts at most {} trading pairs (got {})",
                               kGridMaxEdges, g.pb.pairs.size()));
  }
  for (auto [p, c] : g.pb.pairs) {
    const double upper = std::min(g.pb.nodes[p].hi, -g.pb.nodes[c].lo);
    const auto count = upper < 0.0 ? std::size_t{0}
                                   : static_cast<std::size_t>(std::floor(upper / resolution + 1e-9)) + 1;
    if (count == 0 || (g.total > 0 && count > kGridMaxPoints / g.total)) {
      if (count == 0) throw Infeasible("a trading pair has an empty flow range");
      throw TooLarge(fmt::format("grid of resolution {} exceeds {} points", resolution,
                                 kGridMaxPoints));
    }
    g.counts.push_back(count);
    g.total *= count;
  }
  return g;
}

struct Best {
  double objective = std::numeric_limits<double>::infinity();
  std::size_t index = std::numeric_limits<std::size_t>::max();

  void offer(double obj, std::size_t idx) {
    if (obj < objective || (obj == objective && idx < index)) {
      objective = obj;
      index = idx;
    }
  }
};

void decode(const Grid& g, std::size_t idx, std::span<double> q) {
  for (std::size_t e = g.counts.size(); e-- > 0;) {
    q[e] = static_cast<double>(idx % g.counts[e]) * g.resolution;
    idx /= g.counts[e];
  }
}

// Objective at one grid point, +inf when a box is violated.
double evaluate(const Grid& g, std::size_t idx, std::span<double> q, std::span<double> p_hat) {
  decode(g, idx, q);
  setpoints(g.pb, q, p_hat);
  for (std::size_t n = 0; n < g.pb.nodes.size(); ++n) {
    const auto& nd = g.pb.nodes[n];
    const double slack = 1e-9 * std::max({1.0, std::abs(nd.lo), std::abs(nd.hi)});
    if (p_hat[n] < nd.lo - slack || p_hat[n] > nd.hi + slack) {
      return std::numeric_limits<double>::infinity();
    }
  }
  return objective(g.pb, p_hat);
}

OracleSolution finish_grid(const Grid& g, const Best& best) {
  if (!std::isfinite(best.objective)) {
    throw Infeasible(fmt::format("no feasible point on a grid of resolution {}", g.resolution));
  }
  OracleSolution sol;
  sol.method = OracleMethod::grid_search;
  sol.pairs = g.pb.pair_ids;
  sol.agent_ids = g.pb.ids;
  sol.flows.resize(g.pb.pairs.size());
  sol.setpoints.resize(g.pb.nodes.size());
  decode(g, best.index, sol.flows);
  setpoints(g.pb, sol.flows, sol.setpoints);
  sol.objective = objective(g.pb, sol.setpoints);
  sol.iterations = g.total;
  // Stationarity on pairs whose endpoints are clear of their boxes; pairs
  // touching an active box have a multiplier this method does not estimate.
  std::vector<double> node_grad(g.pb.nodes.size());
  for (std::size_t n = 0; n < node_grad.size(); ++n) {
    node_grad[n] = 2.0 * g.pb.nodes[n].alpha * sol.setpoints[n] + g.pb.nodes[n].beta;
  }
  std::vector<double> grad(sol.flows.size());
  pair_gradient(g.pb, node_grad, grad);
  for (std::size_t e = 0; e < grad.size(); ++e) {
    auto clear = [&](std::size_t n) {
      const auto& nd = g.pb.nodes[n];
      return sol.setpoints[n] - nd.lo > g.resolution && nd.hi - sol.setpoints[n] > g.resolution;
    };
    if (clear(g.pb.pairs[e].first) && clear(g.pb.pairs[e].second)) {
      const double q = sol.flows[e];
      sol.kkt_residual = std::max(sol.kkt_residual, std::abs(q - std::max(0.0, q - grad[e])));
    }
  }
  return sol;
}

}  // namespace

OracleSolution grid_search_serial(const Market& market, double resolution) {
  const auto g = make_grid(market, resolution);
  std::vector<double> q(g.pb.pairs.size()), p_hat(g.pb.nodes.size());
  Best best;
  for (std::size_t idx = 0; idx < g.total; ++idx) best.offer(evaluate(g, idx, q, p_hat), idx);
  return finish_grid(g, best);
}

OracleSolution grid_search(const Market& market, double resolution) {
  const auto g = make_grid(market, resolution);
  Best best;
  const auto total = static_cast<long long>(g.total);
#pragma omp parallel
  {
    std::vector<double> q(g.pb.pairs.size()), p_hat(g.pb.nodes.size());
    Best local;
#pragma omp for schedule(static)
    for (long long i = 0; i < total; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      local.offer(evaluate(g, idx, q, p_hat), idx);
    }
#pragma omp critical(p2p_grid_best)
    best.offer(local.objective, local.index);
  }
  return finish_grid(g, best);
}

double grid_gap_bound(const Market& market, double resolution) {
  const auto pb = make_problem(market);
  const auto m = static_cast<double>(pb.pairs.size());
  // Gradient magnitude bound over the box and curvature bound of the objective.
  double grad_bound = 0.0;
  double max_curv = 0.0;
  std::size_t max_degree = 1;
  for (const auto& nd : pb.nodes) {
    max_curv = std::max(max_curv, 2.0 * nd.alpha);
    max_degree = std::max(max_degree, nd.pairs.size());
  }
  // Hessian of the objective in flow space is A^T diag(2 alpha) A.
  const double curvature = 2.0 * static_cast<double>(max_degree) * max_curv;
  for (auto [p, c] : pb.pairs) {
    const auto& np = pb.nodes[p];
    const auto& nc = pb.nodes[c];
    grad_bound += std::pow(2.0 * np.alpha * std::max(std::abs(np.lo), std::abs(np.hi)) + np.beta +
                               2.0 * nc.alpha * std::max(std::abs(nc.lo), std::abs(nc.hi)) + nc.beta,
                           2);
  }
  const double radius = resolution * std::sqrt(m);
  return std::sqrt(grad_bound) * radius + 0.5 * curvature * radius * radius;
}

}  // namespace p2p
