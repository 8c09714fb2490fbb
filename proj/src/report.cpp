#include "p2p/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "p2p/errors.hpp"

namespace p2p {

std::optional<double> SettlementMatrix::at(AgentId consumer, AgentId producer) const {
  const auto r = std::find(rows.begin(), rows.end(), consumer);
  const auto c = std::find(cols.begin(), cols.end(), producer);
  if (r == rows.end() || c == cols.end()) return std::nullopt;
  return cells[static_cast<std::size_t>(r - rows.begin()) * cols.size() +
               static_cast<std::size_t>(c - cols.begin())];
}

double SettlementMatrix::row_total(std::size_t r) const {
  double s = 0.0;
  for (std::size_t c = 0; c < cols.size(); ++c) s += cells[r * cols.size() + c].value_or(0.0);
  return s;
}

double SettlementMatrix::col_total(std::size_t c) const {
  double s = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) s += cells[r * cols.size() + c].value_or(0.0);
  return s;
}

double SettlementMatrix::total() const {
  double s = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) s += row_total(r);
  return s;
}

namespace {

template <typename CellFn>
SettlementMatrix build_matrix(const Market& market, CellFn cell) {
  SettlementMatrix m;
  m.rows = market.consumers();
  m.cols = market.producers();
  m.cells.assign(m.rows.size() * m.cols.size(), std::nullopt);
  for (const auto& [producer, consumer] : market.trade_pairs()) {
    const auto r = static_cast<std::size_t>(
        std::find(m.rows.begin(), m.rows.end(), consumer) - m.rows.begin());
    const auto c = static_cast<std::size_t>(
        std::find(m.cols.begin(), m.cols.end(), producer) - m.cols.begin());
    m.cells[r * m.cols.size() + c] = cell(producer, consumer);
  }
  return m;
}

std::string fixed4(double v) {
  // Keep "-0.0000" out of the tables.
  const auto s = fmt::format("{:.4f}", v);
  return s == "-0.0000" ? "0.0000" : s;
}

}  // namespace

SettlementMatrix power_matrix(const Market& market, const SettlementReport& report) {
  return build_matrix(market, [&](AgentId producer, AgentId consumer) {
    return std::abs(report.trade(producer, consumer).p);
  });
}

SettlementMatrix price_matrix(const Market& market, const SettlementReport& report) {
  return build_matrix(market, [&](AgentId producer, AgentId consumer) {
    return report.trade(producer, consumer).pi;
  });
}

SettlementMatrix power_matrix(const Market& market, const OracleSolution& solution) {
  return build_matrix(market, [&](AgentId producer, AgentId consumer) {
    return solution.trade(producer, consumer);
  });
}

std::string matrix_csv(const SettlementMatrix& m, bool totals) {
  std::string out = "consumer";
  for (AgentId p : m.cols) out += fmt::format(",{}", p);
  if (totals) out += ",total";
  out += '\n';
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    out += fmt::format("{}", m.rows[r]);
    for (std::size_t c = 0; c < m.cols.size(); ++c) {
      const auto& v = m.cells[r * m.cols.size() + c];
      out += ',';
      if (v) out += fixed4(*v);
    }
    if (totals) out += "," + fixed4(m.row_total(r));
    out += '\n';
  }
  if (totals) {
    out += "total";
    for (std::size_t c = 0; c < m.cols.size(); ++c) out += "," + fixed4(m.col_total(c));
    out += "," + fixed4(m.total()) + '\n';
  }
  return out;
}

std::string trace_csv(const SettlementReport& report) {
  std::string out = "iteration,delta,delta_p,delta_pi,mismatch\n";
  for (const auto& rec : report.trace) {
    out += fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g}\n", rec.iteration, rec.delta, rec.delta_p,
                       rec.delta_pi, rec.mismatch);
  }
  return out;
}

std::string matrix_table(const SettlementMatrix& m, const std::string& title, bool totals) {
  constexpr int w = 10;
  std::string out = title + '\n';
  out += fmt::format("{:>{}}", "cons\\prod", w);
  for (AgentId p : m.cols) out += fmt::format("{:>{}}", p, w);
  if (totals) out += fmt::format("{:>{}}", "total", w);
  out += '\n';
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    out += fmt::format("{:>{}}", m.rows[r], w);
    for (std::size_t c = 0; c < m.cols.size(); ++c) {
      const auto& v = m.cells[r * m.cols.size() + c];
      out += fmt::format("{:>{}}", v ? fixed4(*v) : std::string("-"), w);
    }
    if (totals) out += fmt::format("{:>{}}", fixed4(m.row_total(r)), w);
    out += '\n';
  }
  if (totals) {
    out += fmt::format("{:>{}}", "total", w);
    for (std::size_t c = 0; c < m.cols.size(); ++c) out += fmt::format("{:>{}}", fixed4(m.col_total(c)), w);
    out += fmt::format("{:>{}}", fixed4(m.total()), w) + '\n';
  }
  return out;
}

std::string summary_text(const Market& market, const SettlementReport& report) {
  std::string out;
  out += fmt::format("iterations: {}\n", report.iterations);
  out += fmt::format("converged: {}\n", report.converged ? "yes" : "no");
  out += fmt::format("final delta: {:.6g}\n", report.final_delta);
  out += fmt::format("power mismatch: {:.6g} kW\n", report.final_mismatch);
  out += "set points:\n";
  const auto specs = market.agents();
  for (std::size_t a = 0; a < specs.size() && a < report.setpoints.size(); ++a) {
    out += fmt::format("  {:>4} {:<8} {:>10}\n", specs[a].id, to_string(specs[a].role),
                       fixed4(report.setpoints[a]));
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  f << text;
  f.flush();
  if (!f) throw IoError(fmt::format("write to {} failed", path.string()));
}

std::vector<std::filesystem::path> emit_report(const Market& market, const SettlementReport& report,
                                               const std::filesystem::path& dir, ReportFormat format) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));

  const auto power = power_matrix(market, report);
  const auto price = price_matrix(market, report);
  std::vector<std::filesystem::path> written;
  if (format == ReportFormat::csv) {
    written = {dir / "power.csv", dir / "price.csv", dir / "trace.csv"};
    write_text_file(written[0], matrix_csv(power, true));
    write_text_file(written[1], matrix_csv(price, false));
    write_text_file(written[2], trace_csv(report));
  } else {
    written = {dir / "settlement.txt"};
    write_text_file(written[0], summary_text(market, report) + '\n' +
                                    matrix_table(price, "price (cents/kWh)", false) + '\n' +
                                    matrix_table(power, "power (kW)", true));
  }
  return written;
}

// ---------------------------------------------------------------------------

const PublishedSettlement& published_settlement() {
  static const PublishedSettlement s{
      .consumers = {2, 4, 6},
      .producers = {1, 3, 5},
      .prices = {8.7956, 9.6151, 9.1074,  //
                 6.9198, 7.5422, 8.6181,  //
                 7.5049, 8.1109, 9.1074},
      .powers = {7.1655, 6.7453, 4.5619,  //
                 5.1042, 4.7522, 4.1436,  //
                 5.7471, 5.2989, 4.5619},
      .consumer_totals = {18.4726, 14.0000, 15.6079},
      .producer_totals = {18.0168, 16.7963, 13.2674},
      .total_power = 48.0805,
      .producer1_quoted_total = 18.1068,
      .iterations = 26,
      .runtime_seconds = 0.122,
  };
  return s;
}

bool ReproductionCheck::all_within() const {
  return total_within && iterations_within && deviations().empty();
}

std::vector<CellDeviation> ReproductionCheck::deviations() const {
  std::vector<CellDeviation> out;
  for (const auto& d : prices) {
    if (!d.within) out.push_back(d);
  }
  for (const auto& d : powers) {
    if (!d.within) out.push_back(d);
  }
  return out;
}

namespace {

std::vector<std::string> published_contradictions(const Market& market) {
  const auto& pub = published_settlement();
  const std::size_t nr = pub.consumers.size();
  const std::size_t nc = pub.producers.size();
  std::vector<std::string> out;

  // Printed totals against the printed cells.
  for (std::size_t r = 0; r < nr; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < nc; ++c) s += pub.powers[r * nc + c];
    if (std::abs(s - pub.consumer_totals[r]) > 5e-4) {
      out.push_back(fmt::format("consumer {} row cells sum to {:.4f} but the printed total is {:.4f}",
                                pub.consumers[r], s, pub.consumer_totals[r]));
    }
  }
  for (std::size_t c = 0; c < nc; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < nr; ++r) s += pub.powers[r * nc + c];
    if (std::abs(s - pub.producer_totals[c]) > 5e-4) {
      out.push_back(fmt::format("producer {} column cells sum to {:.4f} but the printed total is {:.4f}",
                                pub.producers[c], s, pub.producer_totals[c]));
    }
  }
  if (std::abs(pub.producer1_quoted_total - pub.producer_totals[0]) > 5e-4) {
    out.push_back(fmt::format("producer {} is quoted as selling {:.4f} kW, its column total is {:.4f}",
                              pub.producers[0], pub.producer1_quoted_total, pub.producer_totals[0]));
  }

  // Printed totals against the prosumer boxes of the market being compared.
  auto check_box = [&](AgentId id, double traded, const char* what) {
    std::size_t a = 0;
    try {
      a = market.agent_index(id);
    } catch (const UnknownNode&) {
      return;
    }
    const auto& b = market.agents()[a].bounds;
    const double lo = std::min(std::abs(b.p_min), std::abs(b.p_max));
    const double hi = std::max(std::abs(b.p_min), std::abs(b.p_max));
    if (traded < lo - 5e-4 || traded > hi + 5e-4) {
      out.push_back(fmt::format("{} {} trades {:.4f} kW in the published table, outside its bound "
                                "magnitude range [{:.4f}, {:.4f}]",
                                what, id, traded, lo, hi));
    }
  };
  for (std::size_t r = 0; r < nr; ++r) check_box(pub.consumers[r], pub.consumer_totals[r], "consumer");
  for (std::size_t c = 0; c < nc; ++c) check_box(pub.producers[c], pub.producer_totals[c], "producer");

  // Identical (price, power) pairs in distinct cells.
  for (std::size_t i = 0; i < nr * nc; ++i) {
    for (std::size_t j = i + 1; j < nr * nc; ++j) {
      if (pub.prices[i] == pub.prices[j] && pub.powers[i] == pub.powers[j]) {
        out.push_back(fmt::format(
            "cells (consumer {}, producer {}) and (consumer {}, producer {}) repeat the same price "
            "{:.4f} and power {:.4f}",
            pub.consumers[i / nc], pub.producers[i % nc], pub.consumers[j / nc],
            pub.producers[j % nc], pub.prices[i], pub.powers[i]));
      }
    }
  }
  return out;
}

}  // namespace

ReproductionCheck compare_with_published(const Market& market, const SettlementReport& report,
                                         const ReproductionTolerances& tol) {
  const auto& pub = published_settlement();
  const std::size_t nc = pub.producers.size();
  const auto power = power_matrix(market, report);
  const auto price = price_matrix(market, report);

  ReproductionCheck check;
  check.tol = tol;
  for (std::size_t r = 0; r < pub.consumers.size(); ++r) {
    for (std::size_t c = 0; c < nc; ++c) {
      const AgentId cons = pub.consumers[r];
      const AgentId prod = pub.producers[c];
      const double pub_price = pub.prices[r * nc + c];
      const double pub_power = pub.powers[r * nc + c];
      const auto our_price = price.at(cons, prod);
      const auto our_power = power.at(cons, prod);
      check.prices.push_back({cons, prod, our_price.value_or(std::nan("")), pub_price,
                              our_price && std::abs(*our_price - pub_price) <= tol.price});
      check.powers.push_back({cons, prod, our_power.value_or(std::nan("")), pub_power,
                              our_power && std::abs(*our_power - pub_power) <= tol.power});
    }
  }
  check.total_ours = power.total();
  check.total_published = pub.total_power;
  check.total_within = std::abs(check.total_ours - check.total_published) <= tol.total;
  check.iterations = report.iterations;
  const auto gap = check.iterations > tol.iterations_target ? check.iterations - tol.iterations_target
                                                            : tol.iterations_target - check.iterations;
  check.iterations_within = gap <= tol.iterations_slack;
  check.published_inconsistencies = published_contradictions(market);
  return check;
}

std::string discrepancy_report(const Market& market, const SettlementReport& report,
                               const ReproductionCheck& check,
                               const std::optional<OracleSolution>& oracle) {
  const auto& pub = published_settlement();
  std::string out = "discrepancy report\n";
  out += fmt::format("  iterations: {} (published {}, accepted {} +/- {}) {}\n", check.iterations,
                     pub.iterations, check.tol.iterations_target, check.tol.iterations_slack,
                     check.iterations_within ? "ok" : "OUT OF RANGE");
  out += fmt::format("  total traded power: {:.4f} kW (published {:.4f}, diff {:+.4f}, tol {:.1f}) {}\n",
                     check.total_ours, check.total_published, check.total_ours - check.total_published,
                     check.tol.total, check.total_within ? "ok" : "OUT OF RANGE");
  out += fmt::format("  power mismatch at exit: {:+.6f} kW\n", report.final_mismatch);

  auto cells = [&](const std::vector<CellDeviation>& devs, const char* what, double tol) {
    out += fmt::format("  {} per pair (tol {:.1f}):\n", what, tol);
    out += fmt::format("    {:>8} {:>8} {:>10} {:>10} {:>10}\n", "consumer", "producer", "ours",
                       "published", "diff");
    for (const auto& d : devs) {
      out += fmt::format("    {:>8} {:>8} {:>10.4f} {:>10.4f} {:>+10.4f}{}\n", d.consumer, d.producer,
                         d.ours, d.published, d.ours - d.published, d.within ? "" : "  <-- outside");
    }
  };
  cells(check.prices, "price (cents/kWh)", check.tol.price);
  cells(check.powers, "power (kW)", check.tol.power);

  const auto devs = check.deviations();
  out += fmt::format("  cells outside tolerance: {}\n", devs.size());

  // Bound activity of our own settlement.
  const auto specs = market.agents();
  out += "  set points vs bounds:\n";
  for (std::size_t a = 0; a < specs.size() && a < report.setpoints.size(); ++a) {
    const auto& b = specs[a].bounds;
    const double p = report.setpoints[a];
    const char* state = "interior";
    if (p > b.p_max + 1e-2 || p < b.p_min - 1e-2) {
      state = "VIOLATED";
    } else if (std::abs(p - b.p_max) <= 1e-2 || std::abs(p - b.p_min) <= 1e-2) {
      state = "at bound";
    }
    out += fmt::format("    {:>4} {:<8} {:>10.4f} in [{:.1f}, {:.1f}] {}\n", specs[a].id,
                       to_string(specs[a].role), p, b.p_min, b.p_max, state);
  }

  if (!check.published_inconsistencies.empty()) {
    out += "  inconsistencies inside the published tables:\n";
    for (const auto& s : check.published_inconsistencies) out += "    - " + s + '\n';
  }

  if (oracle) {
    std::vector<double> flows;
    for (const auto& [producer, consumer] : oracle->pairs) {
      flows.push_back(report.trade(producer, consumer).p);
    }
    out += fmt::format("  centralised optimum: objective {:.4f}, KKT residual {:.2e}\n",
                       oracle->objective, oracle->kkt_residual);
    out += fmt::format("  distributed objective: {:.4f}\n", centralized_objective(market, flows));
    double worst = 0.0;
    for (std::size_t k = 0; k < flows.size(); ++k) worst = std::max(worst, std::abs(flows[k] - oracle->flows[k]));
    out += fmt::format("  largest per-pair power gap to the optimum: {:.4f} kW\n", worst);
    out += fmt::format("  total traded at the optimum: {:.4f} kW\n",
                       std::accumulate(oracle->flows.begin(), oracle->flows.end(), 0.0));
  }
  return out;
}

}  // namespace p2p
