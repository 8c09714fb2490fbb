#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "p2p/errors.hpp"
#include "p2p/market.hpp"
#include "p2p/scenario.hpp"

using namespace p2p;

TEST(UtilityCost, Examples) {
  EXPECT_DOUBLE_EQ(utility_cost({0.455, 2.275, 0.0}, 0.0), 0.0);
  EXPECT_NEAR(utility_cost({0.455, 2.275, 0.0}, 10.0), 68.25, 1e-12);
  EXPECT_DOUBLE_EQ(utility_cost({1.0, 0.0, 5.0}, -2.0), 9.0);
}

TEST(AggregateSetpoint, Examples) {
  EXPECT_EQ(aggregate_setpoint({}), 0.0);
  const std::vector<double> cancel{5.0, -5.0};
  EXPECT_EQ(aggregate_setpoint(cancel), 0.0);
  const std::vector<double> producer1{7.1655, 5.1042, 5.7471};
  EXPECT_NEAR(aggregate_setpoint(producer1), 18.0168, 1e-12);
}

TEST(AggregateSetpoint, FixedLeftToRightOrder) {
  const std::vector<double> v{1e16, 1.0, -1e16};
  EXPECT_EQ(aggregate_setpoint(v), (1e16 + 1.0) - 1e16);
}

TEST(ValidateGraph, PaperBenchmark) {
  const auto sc = paper_scenario();
  const auto m = validate_graph(sc.prosumers, sc.graph);
  EXPECT_EQ(m.agents().size(), 6u);
  EXPECT_EQ(m.undirected_edge_count(), 9u);
  EXPECT_EQ(m.edges().size(), 18u);
  EXPECT_EQ(m.producers(), (std::vector<AgentId>{1, 3, 5}));
  EXPECT_EQ(m.consumers(), (std::vector<AgentId>{2, 4, 6}));
  for (std::size_t k = 0; k < m.edges().size(); ++k) {
    const auto& e = m.edges()[k];
    const auto& r = m.edges()[e.reverse];
    EXPECT_EQ(r.from, e.to);
    EXPECT_EQ(r.to, e.from);
    EXPECT_EQ(r.reverse, k);
    if (k > 0) {
      const auto& prev = m.edges()[k - 1];
      EXPECT_LT(std::make_pair(prev.from, prev.to), std::make_pair(e.from, e.to));
    }
  }
  for (std::size_t a = 0; a < m.agents().size(); ++a) EXPECT_EQ(m.outgoing(a).size(), 3u);
}

TEST(ValidateGraph, Defects) {
  const auto specs = paper_scenario().prosumers;
  TradingGraph g{{1, 2, 3, 4, 5, 6}, {{1, 3}}};
  EXPECT_THROW(validate_graph(specs, g), RoleViolation);
  g.edges = {{2, 4}};
  EXPECT_THROW(validate_graph(specs, g), RoleViolation);
  g.edges = {{2, 2}};
  EXPECT_THROW(validate_graph(specs, g), SelfEdge);
  g.edges = {{1, 9}};
  EXPECT_THROW(validate_graph(specs, g), UnknownNode);
  g.edges = {{1, 2}, {2, 1}};
  EXPECT_THROW(validate_graph(specs, g), DuplicateEdge);

  auto dup = specs;
  dup[1].id = 1;
  EXPECT_THROW(validate_graph(dup, full_bipartite(dup)), ValidationError);
}

TEST(ValidateGraph, EmptyGraphIsValid) {
  const auto m = validate_graph({}, {});
  EXPECT_TRUE(m.agents().empty());
  EXPECT_TRUE(m.edges().empty());
}

TEST(ValidateProsumer, Invariants) {
  ProsumerSpec ok{1, Role::producer, {0.5, 1.0, 0.0}, {0.0, 10.0}};
  EXPECT_NO_THROW(validate_prosumer(ok));
  auto bad = ok;
  bad.coeffs.alpha = 0.0;
  EXPECT_THROW(validate_prosumer(bad), ValidationError);
  bad = ok;
  bad.coeffs.beta = -1.0;
  EXPECT_THROW(validate_prosumer(bad), ValidationError);
  bad = ok;
  bad.coeffs.gamma = -1.0;
  EXPECT_THROW(validate_prosumer(bad), ValidationError);
  bad = ok;
  bad.bounds = {5.0, 1.0};
  EXPECT_THROW(validate_prosumer(bad), ValidationError);
  bad = ok;
  bad.bounds = {-1.0, 10.0};
  EXPECT_THROW(validate_prosumer(bad), ValidationError);
  bad = {2, Role::consumer, {0.5, 1.0, 0.0}, {-10.0, 1.0}};
  EXPECT_THROW(validate_prosumer(bad), ValidationError);
  bad = ok;
  bad.coeffs.alpha = std::nan("");
  EXPECT_THROW(validate_prosumer(bad), ValidationError);
}

// validate_graph accepts exactly the graphs whose edges cross roles.
TEST(ValidateGraph, AcceptsIffRolesAlternate) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 6);
    std::vector<ProsumerSpec> specs;
    for (int i = 1; i <= n; ++i) {
      const bool prod = rng() % 2;
      specs.push_back({static_cast<AgentId>(i), prod ? Role::producer : Role::consumer,
                       {1.0, 1.0, 0.0}, prod ? PowerBounds{0.0, 5.0} : PowerBounds{-5.0, 0.0}});
    }
    TradingGraph g;
    for (const auto& s : specs) g.nodes.push_back(s.id);
    bool crossing = true;
    for (int a = 1; a <= n; ++a) {
      for (int b = a + 1; b <= n; ++b) {
        if (rng() % 3 == 0) {
          g.edges.emplace_back(a, b);
          if (specs[a - 1].role == specs[b - 1].role) crossing = false;
        }
      }
    }
    if (crossing) {
      EXPECT_NO_THROW(validate_graph(specs, g));
    } else {
      EXPECT_THROW(validate_graph(specs, g), RoleViolation);
    }
  }
}
