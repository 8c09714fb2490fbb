#include <condition_variable>
#include <deque>

#include <fmt/format.h>

#include "p2p/harness.hpp"

namespace p2p {

std::vector<Frame> Transport::captured() const {
  std::lock_guard lock(capture_mutex_);
  return capture_;
}

void Transport::clear_capture() {
  std::lock_guard lock(capture_mutex_);
  capture_.clear();
}

void Transport::record(const Frame& frame) {
  std::lock_guard lock(capture_mutex_);
  capture_.push_back(frame);
}

struct InProcTransport::Mailbox {
  std::mutex mutex;
  std::condition_variable ready;
  std::deque<Frame> queue;
  bool closed = false;
};

InProcTransport::InProcTransport(const Market& market, std::chrono::milliseconds timeout)
    : Transport(timeout) {
  for (const auto& e : market.edges()) {
    boxes_.emplace(std::pair(e.from, e.to), std::make_unique<Mailbox>());
  }
}

InProcTransport::~InProcTransport() = default;

void InProcTransport::send(const TradeMessage& msg) {
  auto it = boxes_.find({msg.from, msg.to});
  if (it == boxes_.end()) {
    throw GraphDisconnected(fmt::format("no channel {} -> {}", msg.from, msg.to));
  }
  const auto frame = encode_frame(msg);
  record(frame);
  auto& box = *it->second;
  {
    std::lock_guard lock(box.mutex);
    box.queue.push_back(frame);
  }
  box.ready.notify_one();
}

TradeMessage InProcTransport::receive(AgentId self, AgentId from, std::uint64_t iteration) {
  auto it = boxes_.find({from, self});
  if (it == boxes_.end()) throw GraphDisconnected(fmt::format("no channel {} -> {}", from, self));
  auto& box = *it->second;
  std::unique_lock lock(box.mutex);
  if (!box.ready.wait_for(lock, timeout(), [&] { return box.closed || !box.queue.empty(); })) {
    throw TransportTimeout(fmt::format("agent {} heard nothing from {} in round {} within {} ms",
                                       self, from, iteration, timeout().count()));
  }
  if (box.queue.empty()) {
    throw TransportTimeout(fmt::format("channel {} -> {} closed in round {}", from, self, iteration));
  }
  const auto frame = box.queue.front();
  box.queue.pop_front();
  lock.unlock();
  const auto msg = decode_frame(frame);
  if (msg.iteration != iteration || msg.from != from || msg.to != self) {
    throw Error(fmt::format("out-of-order record on {} -> {}: round {} while expecting {}", from,
                            self, msg.iteration, iteration));
  }
  return msg;
}

bool InProcTransport::connected(AgentId a, AgentId b) const {
  return boxes_.contains({a, b}) && boxes_.contains({b, a});
}

void InProcTransport::shutdown() {
  for (auto& [key, box] : boxes_) {
    {
      std::lock_guard lock(box->mutex);
      box->closed = true;
    }
    box->ready.notify_all();
  }
}

}  // namespace p2p
