// Command-line front end: clear a scenario sequentially or over the agent
// harness, solve it centrally, compare the two, or rerun the six-prosumer
// benchmark.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "p2p/errors.hpp"
#include "p2p/harness.hpp"
#include "p2p/oracle.hpp"
#include "p2p/report.hpp"
#include "p2p/scenario.hpp"

namespace {

using namespace p2p;

enum Exit : int {
  ok = 0,
  failure = 1,
  not_converged = 3,
  invalid = 4,
  unparsable = 5,
  timed_out = 6,
  io = 7,
};

struct SolverFlags {
  std::optional<double> kappa, rho, tol;
  std::optional<std::size_t> max_iter;
  bool no_accel = false;
  bool restart = false;
  std::optional<std::string> coupling;
};

void add_solver_flags(CLI::App* cmd, SolverFlags& f) {
  cmd->add_option("--kappa", f.kappa, "ADMM penalty");
  cmd->add_option("--rho", f.rho, "bound-multiplier step");
  cmd->add_option("--tol", f.tol, "stop once the iterate change drops to this");
  cmd->add_option("--max-iter", f.max_iter, "iteration cap");
  cmd->add_flag("--no-accel", f.no_accel, "plain ADMM, no momentum");
  cmd->add_flag("--restart", f.restart, "reset momentum when the error grows");
  cmd->add_option("--coupling", f.coupling, "per-trade or aggregate")
      ->check(CLI::IsMember({"per-trade", "aggregate"}));
}

SolverConfig apply(SolverConfig cfg, const SolverFlags& f) {
  if (f.kappa) cfg.kappa = *f.kappa;
  if (f.rho) cfg.rho = *f.rho;
  if (f.tol) cfg.tol = *f.tol;
  if (f.max_iter) cfg.max_iter = *f.max_iter;
  if (f.no_accel) cfg.acceleration = false;
  if (f.restart) cfg.restart = true;
  if (f.coupling) cfg.coupling = parse_coupling(*f.coupling);
  validate(cfg);
  return cfg;
}

Scenario scenario_or_paper(const std::string& path) {
  return path.empty() ? paper_scenario() : load_scenario(path);
}

void print_settlement(const Market& market, const SettlementReport& report) {
  std::cout << summary_text(market, report) << '\n'
            << matrix_table(price_matrix(market, report), "price (cents/kWh)", false) << '\n'
            << matrix_table(power_matrix(market, report), "power (kW)", true);
}

void write_outputs(const Market& market, const SettlementReport& report, const std::string& trace,
                   const std::string& out) {
  if (!trace.empty()) write_text_file(trace, trace_csv(report));
  if (!out.empty()) emit_report(market, report, out, ReportFormat::csv);
}

int finish(const SettlementReport& report) {
  if (report.converged) return ok;
  std::cerr << fmt::format("error: no convergence after {} iterations (delta {:.3g})\n",
                           report.iterations, report.final_delta);
  return not_converged;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Peer-to-peer energy market clearing with fast ADMM"};
  app.require_subcommand(1);

  std::string scenario_path, trace_path, out_dir;
  SolverFlags flags;

  auto* run = app.add_subcommand("run", "clear a scenario with the sequential engine");
  auto* dist = app.add_subcommand("run-distributed", "clear a scenario with one thread per prosumer");
  auto* oracle = app.add_subcommand("oracle", "solve the centralised problem");
  auto* compare = app.add_subcommand("compare", "distributed settlement next to the centralised optimum");
  auto* paper = app.add_subcommand("reproduce-paper", "rerun the six-prosumer benchmark");
  auto* gen = app.add_subcommand("gen", "write a random feasible scenario");

  for (auto* cmd : {run, dist, oracle, compare}) {
    cmd->add_option("--scenario", scenario_path, "scenario JSON (default: six-prosumer benchmark)");
  }
  for (auto* cmd : {run, dist, compare, paper}) {
    add_solver_flags(cmd, flags);
    cmd->add_option("--trace", trace_path, "write the per-iteration trace as CSV");
  }
  for (auto* cmd : {run, dist, paper}) {
    cmd->add_option("--out", out_dir, "directory for power/price/trace CSV files");
  }

  std::string transport = "inproc";
  std::optional<int> port_base;
  dist->add_option("--transport", transport, "inproc or tcp")->check(CLI::IsMember({"inproc", "tcp"}));
  dist->add_option("--port-base", port_base, "first loopback port (tcp; default: ephemeral)")
      ->check(CLI::Range(1, 65535));

  std::string method = "pg";
  double resolution = 0.01;
  double oracle_tol = 1e-9;
  oracle->add_option("--method", method, "pg (projected gradient) or grid")
      ->check(CLI::IsMember({"pg", "grid"}));
  oracle->add_option("--resolution", resolution, "grid spacing in kW")->check(CLI::PositiveNumber);
  oracle->add_option("--oracle-tol", oracle_tol, "KKT residual target")->check(CLI::PositiveNumber);

  std::uint64_t seed = 1;
  std::size_t producers = 6, consumers = 6;
  bool pair = false;
  std::string gen_out;
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--producers", producers, "maximum producers")->check(CLI::Range(1, 64));
  gen->add_option("--consumers", consumers, "maximum consumers")->check(CLI::Range(1, 64));
  gen->add_flag("--pair", pair, "one producer, one consumer, wide bounds");
  gen->add_option("--out", gen_out, "output path (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed() || dist->parsed()) {
      const auto sc = scenario_or_paper(scenario_path);
      const auto market = sc.market();
      const auto cfg = apply(sc.solver, flags);
      SettlementReport report;
      if (run->parsed()) {
        report = run_clearing(market, cfg);
      } else if (transport == "tcp") {
        auto opts = TcpOptions::from_env();
        if (port_base) opts.port_base = static_cast<std::uint16_t>(*port_base);
        TcpTransport t(market, opts);
        report = run_distributed(market, cfg, t);
      } else {
        InProcTransport t(market);
        report = run_distributed(market, cfg, t);
        std::cout << fmt::format("messages: {} over {} rounds\n",
                                 message_audit(decode_capture(t.captured()), market, report.iterations).messages,
                                 report.iterations);
      }
      print_settlement(market, report);
      write_outputs(market, report, trace_path, out_dir);
      return finish(report);
    }

    if (oracle->parsed()) {
      const auto market = scenario_or_paper(scenario_path).market();
      const auto sol = method == "grid" ? grid_search(market, resolution) : solve_centralized(market, oracle_tol);
      std::cout << fmt::format("method: {}\nobjective: {:.6f}\nKKT residual: {:.3e}\niterations: {}\n",
                               to_string(sol.method), sol.objective, sol.kkt_residual, sol.iterations);
      for (std::size_t a = 0; a < sol.agent_ids.size(); ++a) {
        std::cout << fmt::format("  {:>4} {:>10.4f}\n", sol.agent_ids[a], sol.setpoints[a]);
      }
      std::cout << '\n' << matrix_table(power_matrix(market, sol), "power (kW)", true);
      return ok;
    }

    if (compare->parsed()) {
      const auto sc = scenario_or_paper(scenario_path);
      const auto market = sc.market();
      const auto cfg = apply(sc.solver, flags);
      InProcTransport t(market);
      const auto report = run_distributed(market, cfg, t);
      const auto sol = solve_centralized(market);
      std::cout << fmt::format("distributed: {} iterations, converged {}; oracle KKT residual {:.2e}\n",
                               report.iterations, report.converged ? "yes" : "no", sol.kkt_residual);
      std::cout << fmt::format("{:>8} {:>8} {:>12} {:>12} {:>10}\n", "producer", "consumer", "distributed",
                               "oracle", "delta");
      double worst = 0.0;
      for (std::size_t k = 0; k < sol.pairs.size(); ++k) {
        const auto [prod, cons] = sol.pairs[k];
        const double ours = report.trade(prod, cons).p;
        const double d = ours - sol.flows[k];
        worst = std::max(worst, std::abs(d));
        std::cout << fmt::format("{:>8} {:>8} {:>12.6f} {:>12.6f} {:>+10.2e}\n", prod, cons, ours,
                                 sol.flows[k], d);
      }
      std::cout << fmt::format("largest |delta|: {:.3e} kW\n", worst);
      // Flows need not be unique when agents have several partners; set points
      // and the objective are.
      std::cout << fmt::format("\n{:>8} {:>12} {:>12} {:>10}\n", "agent", "distributed", "oracle", "delta");
      for (std::size_t a = 0; a < sol.agent_ids.size(); ++a) {
        const double d = report.setpoints[a] - sol.setpoints[a];
        std::cout << fmt::format("{:>8} {:>12.6f} {:>12.6f} {:>+10.2e}\n", sol.agent_ids[a],
                                 report.setpoints[a], sol.setpoints[a], d);
      }
      std::vector<double> flows;
      for (const auto& [prod, cons] : sol.pairs) flows.push_back(report.trade(prod, cons).p);
      std::cout << fmt::format("objective: distributed {:.6f}, oracle {:.6f}\n",
                               centralized_objective(market, flows), sol.objective);
      if (!trace_path.empty()) write_text_file(trace_path, trace_csv(report));
      return finish(report);
    }

    if (paper->parsed()) {
      const auto sc = paper_scenario();
      const auto market = sc.market();
      const auto cfg = apply(sc.solver, flags);
      const auto report = run_clearing(market, cfg);
      print_settlement(market, report);
      std::cout << fmt::format("\nwall time: {:.6f} s\n\n", report.wall_seconds);
      const auto check = compare_with_published(market, report);
      std::optional<OracleSolution> sol;
      try {
        sol = solve_centralized(market);
      } catch (const Error& e) {
        std::cerr << "warning: centralised solve failed: " << e.what() << '\n';
      }
      std::cout << discrepancy_report(market, report, check, sol);
      write_outputs(market, report, trace_path, out_dir);
      return finish(report);
    }

    if (gen->parsed()) {
      RandomScenarioOptions opts;
      opts.max_producers = producers;
      opts.max_consumers = consumers;
      const auto sc = pair ? random_pair_scenario(seed) : random_scenario(seed, opts);
      if (gen_out.empty()) {
        std::cout << dump_scenario(sc) << '\n';
      } else {
        save_scenario(sc, gen_out);
      }
      return ok;
    }
  } catch (const TransportTimeout& e) {
    std::cerr << "error: transport timeout: " << e.what() << '\n';
    return timed_out;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return unparsable;
  } catch (const ValidationError& e) {
    std::cerr << "error: invalid input: " << e.what() << '\n';
    return invalid;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return io;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return failure;
  }
  return failure;
}
