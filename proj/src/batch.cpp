#include <cstddef>
#include <exception>
#include <vector>

#include "p2p/engine.hpp"

namespace p2p {

std::vector<SettlementReport> run_clearing_batch_serial(std::span<const Market> markets,
                                                        const SolverConfig& cfg) {
  std::vector<SettlementReport> reports(markets.size());
  for (std::size_t i = 0; i < markets.size(); ++i) reports[i] = run_clearing(markets[i], cfg);
  return reports;
}

std::vector<SettlementReport> run_clearing_batch(std::span<const Market> markets,
                                                 const SolverConfig& cfg) {
  validate(cfg);
  std::vector<SettlementReport> reports(markets.size());
  std::vector<std::exception_ptr> errors(markets.size());
  const auto n = static_cast<long>(markets.size());
  // Runs are independent and each is sequential internally, so the result of
  // every slot is the same as in the serial loop.
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      reports[k] = run_clearing(markets[k], cfg);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return reports;
}

}  // namespace p2p
