#pragma once

// Helpers shared by the unit tests. Everything here is written against the
// model equations directly and does not call into the engine, so it can serve
// as an independent reference.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "p2p/market.hpp"

namespace p2p::test {

inline Market market_of(std::vector<ProsumerSpec> specs) {
  return validate_graph(specs, full_bipartite(specs));
}

// The single-pair instance used throughout: prosumer 1 of the benchmark
// selling to prosumer 2, with boxes too wide to bind.
inline Market two_prosumer_market() {
  return market_of({{1, Role::producer, {0.455, 2.275, 0.0}, {0.0, 100.0}},
                    {2, Role::consumer, {0.975, 14.69, 0.0}, {-100.0, 0.0}}});
}

struct PairOptimum {
  double q = 0.0;
  double pi = 0.0;
};

// Stationarity of 2 a1 q + b1 = pi = b2 - 2 a2 q for an unconstrained pair.
inline PairOptimum pair_formula(double a1, double b1, double a2, double b2) {
  return {(b2 - b1) / (2.0 * (a1 + a2)), (a2 * b1 + a1 * b2) / (a1 + a2)};
}

// Brute-force minimiser of the pair cost a1 q^2 + b1 q + a2 q^2 - b2 q over
// q in [lo, hi] on a uniform grid followed by a golden-section polish.
inline double pair_brute_force(double a1, double b1, double a2, double b2, double lo, double hi) {
  auto f = [&](double q) { return a1 * q * q + b1 * q + a2 * q * q - b2 * q; };
  const int n = 200000;
  double best = lo;
  for (int k = 0; k <= n; ++k) {
    const double q = lo + (hi - lo) * k / n;
    if (f(q) < f(best)) best = q;
  }
  const double step = (hi - lo) / n;
  double a = std::max(lo, best - step), b = std::min(hi, best + step);
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 200; ++it) {
    const double c = b - g * (b - a), d = a + g * (b - a);
    if (f(c) < f(d)) {
      b = d;
    } else {
      a = c;
    }
  }
  return 0.5 * (a + b);
}

// Plain ADMM written straight from the per-edge update rules, without the
// momentum step. State is indexed by directed record k of market.edges().
struct PlainAdmm {
  const Market& m;
  double kappa, rho;
  std::vector<double> p, pi, sigma, tau, phi, p_hat;

  PlainAdmm(const Market& market, double kappa_, double rho_)
      : m(market), kappa(kappa_), rho(rho_) {
    const auto ne = m.edges().size(), na = m.agents().size();
    p.assign(ne, 0.0);
    pi.assign(ne, 0.0);
    sigma.assign(ne, 0.0);
    tau.assign(na, 0.0);
    phi.assign(na, 0.0);
    p_hat.assign(na, 0.0);
  }

  void step() {
    const auto edges = m.edges();
    const auto agents = m.agents();
    std::vector<double> np(edges.size());
    for (std::size_t k = 0; k < edges.size(); ++k) {
      const auto& e = edges[k];
      const auto& s = agents[e.from_index];
      const auto a = e.from_index;
      const double raw = (pi[k] - tau[a] + phi[a] - s.coeffs.beta + kappa * sigma[k]) /
                         (2.0 * s.coeffs.alpha + kappa);
      np[k] = s.role == Role::producer ? std::max(0.0, raw) : std::min(0.0, raw);
    }
    std::vector<double> ns(edges.size()), npi(edges.size());
    for (std::size_t k = 0; k < edges.size(); ++k) {
      const auto r = edges[k].reverse;
      ns[k] = (kappa * (np[k] - np[r]) - (pi[k] - pi[r])) / (2.0 * kappa);
    }
    for (std::size_t k = 0; k < edges.size(); ++k) npi[k] = pi[k] + kappa * (ns[k] - np[k]);
    std::fill(p_hat.begin(), p_hat.end(), 0.0);
    for (std::size_t k = 0; k < edges.size(); ++k) p_hat[edges[k].from_index] += np[k];
    for (std::size_t a = 0; a < agents.size(); ++a) {
      const auto& b = agents[a].bounds;
      tau[a] = std::max(0.0, tau[a] + rho * (p_hat[a] - b.p_max));
      phi[a] = std::max(0.0, phi[a] + rho * (b.p_min - p_hat[a]));
    }
    p = np;
    pi = npi;
    sigma = ns;
  }
};

inline bool bytes_contain(const std::vector<unsigned char>& hay, double needle) {
  unsigned char pat[sizeof(double)];
  std::memcpy(pat, &needle, sizeof pat);  // host order; the wire is little-endian and so is the host
  return std::search(hay.begin(), hay.end(), std::begin(pat), std::end(pat)) != hay.end();
}

}  // namespace p2p::test
