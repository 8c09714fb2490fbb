#include "p2p/scenario.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"
#include "p2p/errors.hpp"
#include "p2p/oracle.hpp"

namespace p2p {

using nlohmann::json;

Market Scenario::market() const { return validate_graph(prosumers, graph); }

namespace {

bool same_spec(const ProsumerSpec& a, const ProsumerSpec& b) {
  return a.id == b.id && a.role == b.role && a.coeffs.alpha == b.coeffs.alpha &&
         a.coeffs.beta == b.coeffs.beta && a.coeffs.gamma == b.coeffs.gamma &&
         a.bounds.p_min == b.bounds.p_min && a.bounds.p_max == b.bounds.p_max;
}

bool same_solver(const SolverConfig& a, const SolverConfig& b) {
  return a.kappa == b.kappa && a.rho == b.rho && a.tol == b.tol && a.max_iter == b.max_iter &&
         a.acceleration == b.acceleration && a.restart == b.restart && a.coupling == b.coupling &&
         a.exchanged_price == b.exchanged_price;
}

std::size_t line_of(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

[[noreturn]] void field_error(const std::string& field, const std::string& what) {
  throw ParseError(fmt::format("{}: {}", field, what), 0, field);
}

const json& require(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.contains(key)) field_error(path + "/" + key, "missing field");
  return obj.at(key);
}

double number(const json& obj, const std::string& key, const std::string& path) {
  const auto& v = require(obj, key, path);
  if (!v.is_number()) field_error(path + "/" + key, "expected a number");
  return v.get<double>();
}

double number_or(const json& obj, const std::string& key, const std::string& path, double fallback) {
  return obj.contains(key) ? number(obj, key, path) : fallback;
}

bool flag_or(const json& obj, const std::string& key, const std::string& path, bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_boolean()) field_error(path + "/" + key, "expected true or false");
  return obj.at(key).get<bool>();
}

AgentId agent_id(const json& v, const std::string& path) {
  if (!v.is_number_unsigned()) field_error(path, "expected a non-negative integer id");
  const auto raw = v.get<std::uint64_t>();
  if (raw > std::numeric_limits<AgentId>::max()) field_error(path, "id out of range");
  return static_cast<AgentId>(raw);
}

SolverConfig parse_solver(const json& j) {
  SolverConfig cfg;
  if (!j.is_object()) field_error("/solver", "expected an object");
  static const std::set<std::string> known{"kappa", "rho", "tol", "max_iter", "acceleration",
                                           "restart", "coupling", "exchanged_price"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) field_error("/solver/" + key, "unknown field");
  }
  cfg.kappa = number_or(j, "kappa", "/solver", cfg.kappa);
  cfg.rho = number_or(j, "rho", "/solver", cfg.rho);
  cfg.tol = number_or(j, "tol", "/solver", cfg.tol);
  if (j.contains("max_iter")) {
    if (!j["max_iter"].is_number_unsigned()) field_error("/solver/max_iter", "expected a positive integer");
    cfg.max_iter = j["max_iter"].get<std::size_t>();
  }
  cfg.acceleration = flag_or(j, "acceleration", "/solver", cfg.acceleration);
  cfg.restart = flag_or(j, "restart", "/solver", cfg.restart);
  if (j.contains("coupling")) {
    if (!j["coupling"].is_string()) field_error("/solver/coupling", "expected a string");
    try {
      cfg.coupling = parse_coupling(j["coupling"].get<std::string>());
    } catch (const ValidationError& e) {
      field_error("/solver/coupling", e.what());
    }
  }
  if (j.contains("exchanged_price")) {
    const auto& v = j["exchanged_price"];
    if (v == "raw") {
      cfg.exchanged_price = ExchangedPrice::raw;
    } else if (v == "accelerated") {
      cfg.exchanged_price = ExchangedPrice::accelerated;
    } else {
      field_error("/solver/exchanged_price", "expected \"raw\" or \"accelerated\"");
    }
  }
  return cfg;
}

nlohmann::ordered_json solver_json(const SolverConfig& cfg) {
  return {{"kappa", cfg.kappa},
          {"rho", cfg.rho},
          {"tol", cfg.tol},
          {"max_iter", cfg.max_iter},
          {"acceleration", cfg.acceleration},
          {"restart", cfg.restart},
          {"coupling", std::string(to_string(cfg.coupling))},
          {"exchanged_price", cfg.exchanged_price == ExchangedPrice::raw ? "raw" : "accelerated"}};
}

}  // namespace

bool operator==(const Scenario& a, const Scenario& b) {
  if (a.name != b.name || a.grid_sell_price != b.grid_sell_price ||
      a.grid_buy_price != b.grid_buy_price || !same_solver(a.solver, b.solver) ||
      a.prosumers.size() != b.prosumers.size() || a.graph.nodes != b.graph.nodes ||
      a.graph.edges != b.graph.edges) {
    return false;
  }
  for (std::size_t i = 0; i < a.prosumers.size(); ++i) {
    if (!same_spec(a.prosumers[i], b.prosumers[i])) return false;
  }
  return true;
}

Scenario parse_scenario(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("line {}: {}", line_of(text, e.byte), e.what()),
                     line_of(text, e.byte), "");
  }
  if (!doc.is_object()) field_error("", "top level must be an object");

  const auto& version = require(doc, "schema_version", "");
  if (!version.is_number_integer() || version.get<int>() != kScenarioSchemaVersion) {
    field_error("/schema_version", fmt::format("unsupported version (expected {})", kScenarioSchemaVersion));
  }

  Scenario sc;
  if (doc.contains("name")) {
    if (!doc["name"].is_string()) field_error("/name", "expected a string");
    sc.name = doc["name"].get<std::string>();
  }
  if (doc.contains("grid")) {
    const auto& g = doc["grid"];
    if (!g.is_object()) field_error("/grid", "expected an object");
    sc.grid_sell_price = number_or(g, "sell_price", "/grid", sc.grid_sell_price);
    sc.grid_buy_price = number_or(g, "buy_price", "/grid", sc.grid_buy_price);
  }
  if (sc.grid_sell_price > sc.grid_buy_price) {
    throw ValidationError(fmt::format("grid sell price {} exceeds buy price {}", sc.grid_sell_price,
                                      sc.grid_buy_price));
  }

  const auto& prosumers = require(doc, "prosumers", "");
  if (!prosumers.is_array()) field_error("/prosumers", "expected an array");
  for (std::size_t i = 0; i < prosumers.size(); ++i) {
    const auto path = fmt::format("/prosumers/{}", i);
    const auto& p = prosumers[i];
    if (!p.is_object()) field_error(path, "expected an object");
    ProsumerSpec spec;
    spec.id = agent_id(require(p, "id", path), path + "/id");
    const auto& role = require(p, "role", path);
    if (role == "producer") {
      spec.role = Role::producer;
    } else if (role == "consumer") {
      spec.role = Role::consumer;
    } else {
      field_error(path + "/role", "expected \"producer\" or \"consumer\"");
    }
    spec.coeffs.alpha = number(p, "alpha", path);
    spec.coeffs.beta = number(p, "beta", path);
    spec.coeffs.gamma = number_or(p, "gamma", path, 0.0);
    spec.bounds.p_min = number(p, "p_min", path);
    spec.bounds.p_max = number(p, "p_max", path);
    sc.prosumers.push_back(spec);
  }

  const auto& graph = require(doc, "graph", "");
  if (graph == "full-bipartite") {
    sc.graph = full_bipartite(sc.prosumers);
  } else if (graph.is_array()) {
    for (const auto& s : sc.prosumers) sc.graph.nodes.push_back(s.id);
    std::sort(sc.graph.nodes.begin(), sc.graph.nodes.end());
    for (std::size_t i = 0; i < graph.size(); ++i) {
      const auto path = fmt::format("/graph/{}", i);
      if (!graph[i].is_array() || graph[i].size() != 2) field_error(path, "expected [id, id]");
      sc.graph.edges.emplace_back(agent_id(graph[i][0], path + "/0"), agent_id(graph[i][1], path + "/1"));
    }
  } else {
    field_error("/graph", "expected \"full-bipartite\" or a list of [id, id] pairs");
  }

  if (doc.contains("solver")) sc.solver = parse_solver(doc["solver"]);
  validate(sc.solver);

  // Canonical edge order so that a dumped scenario reads back identically.
  const auto market = sc.market();
  sc.graph = market.graph();
  return sc;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open scenario '{}'", path.string()), 0, "");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

std::string dump_scenario(const Scenario& sc) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = kScenarioSchemaVersion;
  doc["name"] = sc.name;
  doc["grid"] = {{"sell_price", sc.grid_sell_price}, {"buy_price", sc.grid_buy_price}};
  doc["prosumers"] = nlohmann::ordered_json::array();
  for (const auto& p : sc.prosumers) {
    doc["prosumers"].push_back({{"id", p.id},
                                {"role", std::string(to_string(p.role))},
                                {"alpha", p.coeffs.alpha},
                                {"beta", p.coeffs.beta},
                                {"gamma", p.coeffs.gamma},
                                {"p_min", p.bounds.p_min},
                                {"p_max", p.bounds.p_max}});
  }
  doc["graph"] = nlohmann::ordered_json::array();
  for (auto [a, b] : sc.graph.edges) doc["graph"].push_back({a, b});
  doc["solver"] = solver_json(sc.solver);
  return doc.dump(2) + "\n";
}

void save_scenario(const Scenario& scenario, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << dump_scenario(scenario);
  if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

Scenario paper_scenario() {
  Scenario sc;
  sc.name = "paper_6prosumer";
  // id, role, alpha (c/kWh^2), beta (c/kWh), gamma (c), p_min, p_max (kW)
  sc.prosumers = {
      {1, Role::producer, {0.455, 2.275, 0.0}, {10.0, 28.0}},
      {2, Role::consumer, {0.975, 14.69, 0.0}, {-30.0, -20.0}},
      {3, Role::producer, {0.520, 2.600, 0.0}, {10.0, 30.0}},
      {4, Role::consumer, {0.884, 14.95, 0.0}, {-24.0, -14.0}},
      {5, Role::producer, {0.585, 3.770, 0.0}, {10.0, 40.0}},
      {6, Role::consumer, {0.676, 15.275, 0.0}, {-34.0, -10.0}},
  };
  sc.graph = validate_graph(sc.prosumers, full_bipartite(sc.prosumers)).graph();
  sc.grid_sell_price = 5.0;
  sc.grid_buy_price = 15.0;
  sc.solver.kappa = 0.5;
  sc.solver.rho = 0.25;
  sc.solver.tol = 1e-2;
  return sc;
}

namespace {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  // Own mapping to [lo, hi) so instances are identical across standard libraries.
  double uniform(double lo, double hi) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace

Scenario random_scenario(std::uint64_t seed, const RandomScenarioOptions& options) {
  Rng rng(seed);
  for (;;) {
    Scenario sc;
    sc.name = fmt::format("random_{}", seed);
    const auto n_prod = 1 + rng.index(std::max<std::size_t>(options.max_producers, 1));
    const auto n_cons = 1 + rng.index(std::max<std::size_t>(options.max_consumers, 1));
    AgentId next = 1;
    for (std::size_t i = 0; i < n_prod; ++i) {
      ProsumerSpec p{next++, Role::producer, {rng.uniform(0.3, 1.0), rng.uniform(1.0, 5.0), 0.0}, {}};
      if (options.wide_bounds) {
        p.bounds = {0.0, 100.0};
      } else {
        const double lo = rng.uniform(0.0, 10.0);
        p.bounds = {lo, lo + rng.uniform(5.0, 30.0)};
      }
      sc.prosumers.push_back(p);
    }
    for (std::size_t i = 0; i < n_cons; ++i) {
      ProsumerSpec c{next++, Role::consumer, {rng.uniform(0.5, 1.2), rng.uniform(12.0, 18.0), 0.0}, {}};
      if (options.wide_bounds) {
        c.bounds = {-100.0, 0.0};
      } else {
        const double least = rng.uniform(0.0, 10.0);
        c.bounds = {-(least + rng.uniform(5.0, 30.0)), -least};
      }
      sc.prosumers.push_back(c);
    }
    if (options.full_bipartite) {
      sc.graph = full_bipartite(sc.prosumers);
    } else {
      for (const auto& s : sc.prosumers) sc.graph.nodes.push_back(s.id);
      std::set<std::pair<AgentId, AgentId>> edges;
      // Each prosumer gets at least one partner, plus a few extra links.
      for (AgentId p = 1; p <= n_prod; ++p) {
        edges.emplace(p, static_cast<AgentId>(n_prod + 1 + rng.index(n_cons)));
      }
      for (AgentId c = static_cast<AgentId>(n_prod + 1); c <= n_prod + n_cons; ++c) {
        edges.emplace(static_cast<AgentId>(1 + rng.index(n_prod)), c);
      }
      const auto extra = rng.index(n_prod * n_cons + 1);
      for (std::size_t k = 0; k < extra; ++k) {
        edges.emplace(static_cast<AgentId>(1 + rng.index(n_prod)),
                      static_cast<AgentId>(n_prod + 1 + rng.index(n_cons)));
      }
      sc.graph.edges.assign(edges.begin(), edges.end());
    }
    try {
      check_feasible(sc.market());
    } catch (const Infeasible&) {
      continue;
    }
    sc.graph = sc.market().graph();
    return sc;
  }
}

Scenario random_pair_scenario(std::uint64_t seed) {
  RandomScenarioOptions o;
  o.max_producers = 1;
  o.max_consumers = 1;
  o.wide_bounds = true;
  auto sc = random_scenario(seed, o);
  sc.name = fmt::format("random_pair_{}", seed);
  return sc;
}

}  // namespace p2p
