#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "p2p/engine.hpp"
#include "p2p/market.hpp"
#include "p2p/oracle.hpp"

namespace p2p {

/// Consumers as rows, producers as columns. Cells without a trading pair
/// are empty.
struct SettlementMatrix {
  std::vector<AgentId> rows;
  std::vector<AgentId> cols;
  std::vector<std::optional<double>> cells;  // row-major

  std::optional<double> at(AgentId consumer, AgentId producer) const;
  double row_total(std::size_t r) const;
  double col_total(std::size_t c) const;
  double total() const;
};

/// |p(producer -> consumer)| as proposed by the producer.
SettlementMatrix power_matrix(const Market& market, const SettlementReport& report);
/// pi(producer -> consumer) as held by the producer.
SettlementMatrix price_matrix(const Market& market, const SettlementReport& report);
SettlementMatrix power_matrix(const Market& market, const OracleSolution& solution);

/// Header row, then one row per consumer; optional totals column and row.
/// Four decimals, comma separated, LF line endings.
std::string matrix_csv(const SettlementMatrix& m, bool totals);
/// Columns: iteration, delta, delta_p, delta_pi, mismatch.
std::string trace_csv(const SettlementReport& report);
std::string matrix_table(const SettlementMatrix& m, const std::string& title, bool totals);
std::string summary_text(const Market& market, const SettlementReport& report);

enum class ReportFormat { csv, text };

/// Writes power/price matrices and the trace (csv) or one settlement.txt
/// (text) into `dir`, creating it. Returns the files written. Throws IoError.
std::vector<std::filesystem::path> emit_report(const Market& market, const SettlementReport& report,
                                               const std::filesystem::path& dir, ReportFormat format);

void write_text_file(const std::filesystem::path& path, const std::string& text);

// ---------------------------------------------------------------------------
// Comparison with the published six-prosumer settlement.

struct PublishedSettlement {
  std::vector<AgentId> consumers;  // rows
  std::vector<AgentId> producers;  // columns
  std::vector<double> prices;      // cents/kWh, row-major
  std::vector<double> powers;      // kW, row-major
  std::vector<double> consumer_totals;
  std::vector<double> producer_totals;
  double total_power = 0.0;
  double producer1_quoted_total = 0.0;  // the figure quoted in prose for producer 1
  std::size_t iterations = 0;
  double runtime_seconds = 0.0;
};

const PublishedSettlement& published_settlement();

struct CellDeviation {
  AgentId consumer = 0;
  AgentId producer = 0;
  double ours = 0.0;
  double published = 0.0;
  bool within = false;
};

struct ReproductionTolerances {
  double price = 0.2;   // cents/kWh per pair
  double power = 0.2;   // kW per pair
  double total = 0.5;   // kW on the grand total
  std::size_t iterations_target = 26;
  std::size_t iterations_slack = 4;
};

struct ReproductionCheck {
  ReproductionTolerances tol;
  std::vector<CellDeviation> prices;
  std::vector<CellDeviation> powers;
  double total_ours = 0.0;
  double total_published = 0.0;
  bool total_within = false;
  std::size_t iterations = 0;
  bool iterations_within = false;
  /// Internal contradictions found in the published tables themselves.
  std::vector<std::string> published_inconsistencies;

  bool all_within() const;
  std::vector<CellDeviation> deviations() const;  // cells outside tolerance
};

ReproductionCheck compare_with_published(const Market& market, const SettlementReport& report,
                                         const ReproductionTolerances& tol = {});

/// Human-readable account of every deviation and of the published data's
/// own inconsistencies. `oracle` adds the centralised optimum when given.
std::string discrepancy_report(const Market& market, const SettlementReport& report,
                               const ReproductionCheck& check,
                               const std::optional<OracleSolution>& oracle);

}  // namespace p2p
