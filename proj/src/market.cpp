#include "p2p/market.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <fmt/format.h>

#include "p2p/errors.hpp"

namespace p2p {

std::string_view to_string(Role role) noexcept {
  return role == Role::producer ? "producer" : "consumer";
}

double utility_cost(const UtilityCoeffs& coeffs, double p_hat) noexcept {
  return coeffs.alpha * p_hat * p_hat + coeffs.beta * p_hat + coeffs.gamma;
}

double aggregate_setpoint(std::span<const double> trades) noexcept {
  double sum = 0.0;
  for (double p : trades) sum += p;
  return sum;
}

void validate_prosumer(const ProsumerSpec& spec) {
  const auto& c = spec.coeffs;
  const auto& b = spec.bounds;
  if (!std::isfinite(c.alpha) || !std::isfinite(c.beta) || !std::isfinite(c.gamma) ||
      !std::isfinite(b.p_min) || !std::isfinite(b.p_max)) {
    throw ValidationError(fmt::format("prosumer {}: non-finite coefficient or bound", spec.id));
  }
  if (!(c.alpha > 0.0)) {
    throw ValidationError(fmt::format("prosumer {}: alpha must be > 0 (got {})", spec.id, c.alpha));
  }
  if (c.beta < 0.0) {
    throw ValidationError(fmt::format("prosumer {}: beta must be >= 0 (got {})", spec.id, c.beta));
  }
  if (c.gamma < 0.0) {
    throw ValidationError(fmt::format("prosumer {}: gamma must be >= 0 (got {})", spec.id, c.gamma));
  }
  if (b.p_min > b.p_max) {
    throw ValidationError(
        fmt::format("prosumer {}: p_min {} exceeds p_max {}", spec.id, b.p_min, b.p_max));
  }
  if (spec.role == Role::producer && b.p_min < 0.0) {
    throw ValidationError(
        fmt::format("prosumer {}: producer bounds must be non-negative (p_min {})", spec.id, b.p_min));
  }
  if (spec.role == Role::consumer && b.p_max > 0.0) {
    throw ValidationError(
        fmt::format("prosumer {}: consumer bounds must be non-positive (p_max {})", spec.id, b.p_max));
  }
}

std::span<const std::size_t> Market::outgoing(std::size_t agent_index) const {
  const auto first = outgoing_offsets_.at(agent_index);
  const auto last = outgoing_offsets_.at(agent_index + 1);
  return std::span<const std::size_t>(outgoing_flat_).subspan(first, last - first);
}

std::size_t Market::agent_index(AgentId id) const {
  auto it = std::lower_bound(agents_.begin(), agents_.end(), id,
                             [](const ProsumerSpec& s, AgentId v) { return s.id < v; });
  if (it == agents_.end() || it->id != id) {
    throw UnknownNode(fmt::format("unknown prosumer id {}", id));
  }
  return static_cast<std::size_t>(it - agents_.begin());
}

std::vector<std::pair<AgentId, AgentId>> Market::trade_pairs() const {
  std::vector<std::pair<AgentId, AgentId>> pairs;
  for (const auto& e : edges_) {
    if (agents_[e.from_index].role == Role::producer) pairs.emplace_back(e.from, e.to);
  }
  return pairs;
}

std::vector<AgentId> Market::producers() const {
  std::vector<AgentId> ids;
  for (const auto& a : agents_) {
    if (a.role == Role::producer) ids.push_back(a.id);
  }
  return ids;
}

std::vector<AgentId> Market::consumers() const {
  std::vector<AgentId> ids;
  for (const auto& a : agents_) {
    if (a.role == Role::consumer) ids.push_back(a.id);
  }
  return ids;
}

TradingGraph Market::graph() const {
  TradingGraph g;
  for (const auto& a : agents_) g.nodes.push_back(a.id);
  for (const auto& e : edges_) {
    if (e.from < e.to) g.edges.emplace_back(e.from, e.to);
  }
  return g;
}

Market validate_graph(std::span<const ProsumerSpec> specs, const TradingGraph& graph) {
  Market market;
  market.agents_.assign(specs.begin(), specs.end());
  std::sort(market.agents_.begin(), market.agents_.end(),
            [](const ProsumerSpec& a, const ProsumerSpec& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < market.agents_.size(); ++i) {
    validate_prosumer(market.agents_[i]);
    if (i > 0 && market.agents_[i - 1].id == market.agents_[i].id) {
      throw ValidationError(fmt::format("duplicate prosumer id {}", market.agents_[i].id));
    }
  }
  for (AgentId node : graph.nodes) market.agent_index(node);

  std::vector<std::pair<AgentId, AgentId>> canonical;
  canonical.reserve(graph.edges.size());
  for (auto [a, b] : graph.edges) {
    if (a == b) throw SelfEdge(fmt::format("self edge ({}, {})", a, b));
    const auto ia = market.agent_index(a);
    const auto ib = market.agent_index(b);
    if (market.agents_[ia].role == market.agents_[ib].role) {
      throw RoleViolation(fmt::format("edge ({}, {}) joins two {}s", a, b,
                                      to_string(market.agents_[ia].role)));
    }
    canonical.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::sort(canonical.begin(), canonical.end());
  if (auto dup = std::adjacent_find(canonical.begin(), canonical.end()); dup != canonical.end()) {
    throw DuplicateEdge(fmt::format("duplicate edge ({}, {})", dup->first, dup->second));
  }

  auto& edges = market.edges_;
  for (auto [a, b] : canonical) {
    edges.push_back({a, b, market.agent_index(a), market.agent_index(b), 0});
    edges.push_back({b, a, market.agent_index(b), market.agent_index(a), 0});
  }
  std::sort(edges.begin(), edges.end(), [](const DirectedEdge& x, const DirectedEdge& y) {
    return std::pair(x.from, x.to) < std::pair(y.from, y.to);
  });
  for (std::size_t k = 0; k < edges.size(); ++k) {
    auto rev = std::lower_bound(edges.begin(), edges.end(), std::pair(edges[k].to, edges[k].from),
                                [](const DirectedEdge& e, const std::pair<AgentId, AgentId>& key) {
                                  return std::pair(e.from, e.to) < key;
                                });
    edges[k].reverse = static_cast<std::size_t>(rev - edges.begin());
  }

  market.outgoing_offsets_.assign(market.agents_.size() + 1, 0);
  for (const auto& e : edges) ++market.outgoing_offsets_[e.from_index + 1];
  for (std::size_t i = 1; i < market.outgoing_offsets_.size(); ++i) {
    market.outgoing_offsets_[i] += market.outgoing_offsets_[i - 1];
  }
  market.outgoing_flat_.resize(edges.size());
  for (std::size_t k = 0; k < edges.size(); ++k) market.outgoing_flat_[k] = k;
  return market;
}

TradingGraph full_bipartite(std::span<const ProsumerSpec> specs) {
  TradingGraph g;
  for (const auto& s : specs) g.nodes.push_back(s.id);
  std::sort(g.nodes.begin(), g.nodes.end());
  for (const auto& a : specs) {
    if (a.role != Role::producer) continue;
    for (const auto& b : specs) {
      if (b.role == Role::consumer) g.edges.emplace_back(a.id, b.id);
    }
  }
  return g;
}

}  // namespace p2p
