#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <exception>
#include <thread>

#include <fmt/format.h>

#include "p2p/harness.hpp"

namespace p2p {

ProsumerAgent::ProsumerAgent(ProsumerSpec spec, std::vector<AgentId> partners, SolverConfig cfg)
    : spec_(spec), partners_(std::move(partners)), cfg_(cfg) {
  std::sort(partners_.begin(), partners_.end());
  for (AgentId m : partners_) trades_.push_back({spec_.id, m});
}

std::vector<TradeMessage> ProsumerAgent::propose(std::uint64_t iteration) {
  pending_p_ = agent_power_phase(trades_, spec_, state_, cfg_);
  pending_iteration_ = iteration;
  std::vector<TradeMessage> out;
  out.reserve(trades_.size());
  for (std::size_t k = 0; k < trades_.size(); ++k) {
    out.push_back({spec_.id, partners_[k], iteration, pending_p_[k], exchanged_price(trades_[k], cfg_)});
  }
  return out;
}

ChangeNorms ProsumerAgent::absorb(std::span<const TradeMessage> replies) {
  if (replies.size() != partners_.size()) {
    throw Error(fmt::format("agent {} expected {} replies, got {}", spec_.id, partners_.size(),
                            replies.size()));
  }
  std::vector<PartnerView> views(replies.size());
  for (std::size_t k = 0; k < replies.size(); ++k) {
    const auto& r = replies[k];
    if (r.from != partners_[k] || r.to != spec_.id || r.iteration != pending_iteration_) {
      throw Error(fmt::format("agent {} got a stray record {} -> {} (round {})", spec_.id, r.from,
                              r.to, r.iteration));
    }
    views[k] = {r.p, r.pi};
  }
  return agent_dual_phase(trades_, pending_p_, views, spec_, state_, cfg_);
}

void ProsumerAgent::restart() { apply_restart(trades_, state_); }

namespace {

struct Verdict {
  bool stop = false;
  bool restart = false;
};

class Aborted : public std::exception {};

// End-of-round barrier. The last agent to arrive folds the per-agent error
// norms (ascending agent id, the engine's order), records the round and
// decides whether to stop or restart.
class RoundCoordinator {
 public:
  RoundCoordinator(const Market& market, const SolverConfig& cfg, std::chrono::milliseconds timeout)
      : cfg_(cfg), timeout_(timeout), norms_(market.agents().size()),
        snapshots_(market.agents().size()) {}

  Verdict submit(std::size_t agent, std::uint64_t round, ChangeNorms norms,
                 std::span<const TradeState> trades) {
    std::unique_lock lock(mutex_);
    if (aborted_) throw Aborted{};
    norms_[agent] = norms;
    snapshots_[agent].assign(trades.begin(), trades.end());
    const auto generation = generation_;
    if (++arrived_ == norms_.size()) {
      close_round(round);
      arrived_ = 0;
      ++generation_;
      changed_.notify_all();
      return verdict_;
    }
    if (!changed_.wait_for(lock, timeout_, [&] { return aborted_ || generation_ != generation; })) {
      aborted_ = true;
      changed_.notify_all();
      throw TransportTimeout(fmt::format("round {} rendezvous timed out", round));
    }
    if (generation_ == generation) throw Aborted{};
    return verdict_;
  }

  // Rounds of a market with no agents: nothing arrives, the round just closes.
  Verdict close_empty(std::uint64_t round) {
    std::lock_guard lock(mutex_);
    close_round(round);
    return verdict_;
  }

  void abort() {
    std::lock_guard lock(mutex_);
    aborted_ = true;
    changed_.notify_all();
  }

  // Only valid once every agent thread has finished.
  const std::vector<IterationRecord>& trace() const { return trace_; }
  const std::vector<TradeState>& last_trades() const { return last_trades_; }
  bool converged() const { return converged_; }

 private:
  void close_round(std::uint64_t round) {
    IterationRecord rec;
    rec.iteration = round;
    if (round > 1) {
      const auto err = combine_change_norms(norms_);
      rec.delta = err.delta;
      rec.delta_p = err.delta_p;
      rec.delta_pi = err.delta_pi;
    }
    last_trades_.clear();
    for (const auto& s : snapshots_) last_trades_.insert(last_trades_.end(), s.begin(), s.end());
    rec.mismatch = global_mismatch(last_trades_);
    if (cfg_.record_snapshots) rec.snapshot = last_trades_;

    converged_ = round >= 2 && rec.delta <= cfg_.tol;
    verdict_.stop = converged_ || round >= cfg_.max_iter;
    verdict_.restart = restart_triggered(cfg_, last_delta_, rec.delta);
    last_delta_ = rec.delta;
    trace_.push_back(std::move(rec));
  }

  SolverConfig cfg_;
  std::chrono::milliseconds timeout_;
  std::mutex mutex_;
  std::condition_variable changed_;
  std::vector<ChangeNorms> norms_;
  std::vector<std::vector<TradeState>> snapshots_;
  std::size_t arrived_ = 0;
  std::uint64_t generation_ = 0;
  bool aborted_ = false;
  Verdict verdict_;
  double last_delta_ = std::numeric_limits<double>::infinity();
  bool converged_ = false;
  std::vector<IterationRecord> trace_;
  std::vector<TradeState> last_trades_;
};

}  // namespace

SettlementReport run_distributed(const Market& market, const SolverConfig& cfg,
                                 Transport& transport, const HarnessOptions& options) {
  validate(cfg);
  for (const auto& e : market.edges()) {
    if (!transport.connected(e.from, e.to)) {
      throw GraphDisconnected(fmt::format("transport has no channel between {} and {}", e.from, e.to));
    }
  }
  const auto start = std::chrono::steady_clock::now();
  const auto specs = market.agents();

  std::vector<ProsumerAgent> agents;
  agents.reserve(specs.size());
  for (std::size_t a = 0; a < specs.size(); ++a) {
    std::vector<AgentId> partners;
    for (auto k : market.outgoing(a)) partners.push_back(market.edges()[k].to);
    agents.emplace_back(specs[a], std::move(partners), cfg);
  }

  RoundCoordinator coordinator(market, cfg, options.rendezvous_timeout);
  std::mutex error_mutex;
  std::exception_ptr first_error;

  auto body = [&](std::size_t a) {
    auto& agent = agents[a];
    try {
      for (std::uint64_t round = 1; round <= cfg.max_iter; ++round) {
        if (options.kill_agent && options.kill_agent->first == agent.id() &&
            options.kill_agent->second == round) {
          return;
        }
        for (const auto& msg : agent.propose(round)) transport.send(msg);
        std::vector<TradeMessage> replies;
        replies.reserve(agent.partners().size());
        for (AgentId m : agent.partners()) replies.push_back(transport.receive(agent.id(), m, round));
        const auto norms = agent.absorb(replies);
        const auto verdict = coordinator.submit(a, round, norms, agent.trades());
        if (verdict.restart) agent.restart();
        if (verdict.stop) return;
      }
    } catch (const Aborted&) {
    } catch (...) {
      {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
      coordinator.abort();
      transport.shutdown();
    }
  };

  if (agents.empty()) {
    for (std::uint64_t round = 1; round <= cfg.max_iter; ++round) {
      if (coordinator.close_empty(round).stop) break;
    }
  }
  {
    std::vector<std::jthread> threads;
    threads.reserve(agents.size());
    for (std::size_t a = 0; a < agents.size(); ++a) threads.emplace_back(body, a);
  }

  SettlementReport report;
  for (const auto& s : specs) report.agent_ids.push_back(s.id);
  report.trace = coordinator.trace();
  report.iterations = report.trace.size();
  if (!report.trace.empty()) {
    report.final_delta = report.trace.back().delta;
    report.final_mismatch = report.trace.back().mismatch;
  }
  report.trades = coordinator.last_trades();
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (first_error) {
    try {
      std::rethrow_exception(first_error);
    } catch (TransportTimeout& e) {
      e.set_partial(std::move(report));
      throw;
    }
  }
  report.converged = coordinator.converged();
  for (const auto& agent : agents) report.setpoints.push_back(agent.state().p_hat);
  return report;
}

}  // namespace p2p
