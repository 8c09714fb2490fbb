#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace p2p {

using AgentId = std::uint32_t;

enum class Role { producer, consumer };

std::string_view to_string(Role role) noexcept;

/// Quadratic cost c(p) = alpha p^2 + beta p + gamma, in cents with p in kW.
struct UtilityCoeffs {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
};

/// Set-point box. Producers live in [0, inf), consumers in (-inf, 0].
struct PowerBounds {
  double p_min = 0.0;
  double p_max = 0.0;
};

struct ProsumerSpec {
  AgentId id = 0;
  Role role = Role::producer;
  UtilityCoeffs coeffs;
  PowerBounds bounds;
};

/// Who may trade with whom. Edges are unordered pairs.
struct TradingGraph {
  std::vector<AgentId> nodes;
  std::vector<std::pair<AgentId, AgentId>> edges;
};

/// One endpoint's view of a bilateral trade: the record n -> m.
struct DirectedEdge {
  AgentId from = 0;
  AgentId to = 0;
  std::size_t from_index = 0;  // position of `from` in Market::agents()
  std::size_t to_index = 0;
  std::size_t reverse = 0;     // index of the m -> n record
};

/// A validated trading market: prosumers sorted by id, and every unordered
/// edge materialised as two directed records sorted by (from, to). Records
/// of one agent are therefore contiguous and in ascending partner order,
/// which is the order every sum and message sequence follows.
class Market {
 public:
  Market() = default;

  std::span<const ProsumerSpec> agents() const noexcept { return agents_; }
  std::span<const DirectedEdge> edges() const noexcept { return edges_; }

  /// Directed-edge indices owned by agent `agent_index`, ascending partner id.
  std::span<const std::size_t> outgoing(std::size_t agent_index) const;

  std::size_t agent_index(AgentId id) const;
  std::size_t undirected_edge_count() const noexcept { return edges_.size() / 2; }

  /// Unordered edges as (producer, consumer) pairs, sorted.
  std::vector<std::pair<AgentId, AgentId>> trade_pairs() const;

  std::vector<AgentId> producers() const;
  std::vector<AgentId> consumers() const;

  /// The graph this market was built from, with edges in canonical form.
  TradingGraph graph() const;

 private:
  friend Market validate_graph(std::span<const ProsumerSpec>, const TradingGraph&);

  std::vector<ProsumerSpec> agents_;
  std::vector<DirectedEdge> edges_;
  std::vector<std::size_t> outgoing_flat_;
  std::vector<std::size_t> outgoing_offsets_;
};

double utility_cost(const UtilityCoeffs& coeffs, double p_hat) noexcept;

/// Sum of one prosumer's trades. The caller supplies them in ascending partner
/// order; the sum runs left to right so results are bit-reproducible.
double aggregate_setpoint(std::span<const double> trades) noexcept;

/// Checks coefficient and bound invariants of a single prosumer.
/// Throws ValidationError.
void validate_prosumer(const ProsumerSpec& spec);

/// Builds the directed-edge index. Throws ValidationError for bad prosumer
/// data or duplicate ids, UnknownNode, SelfEdge, DuplicateEdge and
/// RoleViolation for graph defects.
Market validate_graph(std::span<const ProsumerSpec> specs, const TradingGraph& graph);

/// Every producer connected to every consumer.
TradingGraph full_bipartite(std::span<const ProsumerSpec> specs);

}  // namespace p2p
