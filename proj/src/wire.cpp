#include <algorithm>
#include <bit>
#include <set>
#include <string>

#include <fmt/format.h>

#include "p2p/harness.hpp"

namespace p2p {

namespace {

template <class T>
void put_le(std::byte* out, T value) noexcept {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out[i] = static_cast<std::byte>((value >> (8 * i)) & 0xff);
  }
}

template <class T>
T get_le(const std::byte* in) noexcept {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(std::to_integer<std::uint8_t>(in[i])) << (8 * i);
  }
  return value;
}

}  // namespace

Frame encode_frame(const TradeMessage& msg) noexcept {
  Frame f{};
  put_le<std::uint32_t>(f.data(), static_cast<std::uint32_t>(kFrameBodyBytes));
  put_le<std::uint32_t>(f.data() + 4, msg.from);
  put_le<std::uint32_t>(f.data() + 8, msg.to);
  put_le<std::uint64_t>(f.data() + 12, msg.iteration);
  put_le<std::uint64_t>(f.data() + 20, std::bit_cast<std::uint64_t>(msg.p));
  put_le<std::uint64_t>(f.data() + 28, std::bit_cast<std::uint64_t>(msg.pi));
  return f;
}

TradeMessage decode_frame(std::span<const std::byte> bytes) {
  if (bytes.size() < 4) throw PrivacyViolation("truncated frame");
  const auto length = get_le<std::uint32_t>(bytes.data());
  if (length != kFrameBodyBytes || bytes.size() != kFrameBytes) {
    throw PrivacyViolation(fmt::format(
        "frame body of {} bytes does not match the {}-byte trade record", length, kFrameBodyBytes));
  }
  const auto* b = bytes.data();
  TradeMessage m;
  m.from = get_le<std::uint32_t>(b + 4);
  m.to = get_le<std::uint32_t>(b + 8);
  m.iteration = get_le<std::uint64_t>(b + 12);
  m.p = std::bit_cast<double>(get_le<std::uint64_t>(b + 20));
  m.pi = std::bit_cast<double>(get_le<std::uint64_t>(b + 28));
  return m;
}

std::vector<nlohmann::json> decode_capture(std::span<const Frame> frames) {
  std::vector<nlohmann::json> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    const auto m = decode_frame(f);
    out.push_back({{"from", m.from}, {"to", m.to}, {"iteration", m.iteration}, {"p", m.p},
                   {"pi", m.pi}});
  }
  return out;
}

AuditResult message_audit(std::span<const nlohmann::json> records, const Market& market,
                          std::optional<std::size_t> rounds) {
  static const std::set<std::string> kFields{"from", "to", "iteration", "p", "pi"};
  std::set<std::pair<AgentId, AgentId>> edges;
  for (const auto& e : market.edges()) edges.emplace(e.from, e.to);

  std::vector<std::size_t> per_round;
  std::set<std::pair<std::uint64_t, std::pair<AgentId, AgentId>>> seen;
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& r = records[k];
    if (!r.is_object()) throw PrivacyViolation(fmt::format("message {} is not a record", k));
    for (const auto& [key, value] : r.items()) {
      if (!kFields.contains(key)) {
        throw PrivacyViolation(fmt::format("message {} carries field '{}' outside the trade schema",
                                           k, key));
      }
    }
    for (const auto& key : kFields) {
      if (!r.contains(key)) {
        throw PrivacyViolation(fmt::format("message {} lacks field '{}'", k, key));
      }
    }
    auto id_like = [](const nlohmann::json& v) {
      return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    };
    if (!id_like(r["from"]) || !id_like(r["to"]) || !id_like(r["iteration"]) || !r["p"].is_number() ||
        !r["pi"].is_number()) {
      throw PrivacyViolation(fmt::format("message {} has a mistyped field", k));
    }
    const auto from = r["from"].get<AgentId>();
    const auto to = r["to"].get<AgentId>();
    const auto it = r["iteration"].get<std::uint64_t>();
    if (!edges.contains({from, to})) {
      throw PrivacyViolation(fmt::format("message {} travels {} -> {}, which is not a trading pair",
                                         k, from, to));
    }
    if (it == 0) throw PrivacyViolation(fmt::format("message {} has iteration 0", k));
    if (!seen.insert({it, {from, to}}).second) {
      throw PrivacyViolation(fmt::format("duplicate message {} -> {} in round {}", from, to, it));
    }
    if (per_round.size() < it) per_round.resize(it, 0);
    ++per_round[it - 1];
  }

  const std::size_t expected = market.edges().size();
  for (std::size_t i = 0; i < per_round.size(); ++i) {
    if (per_round[i] != expected) {
      throw PrivacyViolation(fmt::format("round {} carried {} messages, expected {}", i + 1,
                                         per_round[i], expected));
    }
  }
  AuditResult res{records.size(), per_round.size()};
  if (rounds && expected > 0 && *rounds != res.rounds) {
    throw PrivacyViolation(fmt::format("trace covers {} rounds, run reported {}", res.rounds, *rounds));
  }
  return res;
}

AuditResult audit_wire(std::span<const Frame> frames, const Market& market,
                       std::optional<std::size_t> rounds) {
  const auto records = decode_capture(frames);
  return message_audit(records, market, rounds);
}

}  // namespace p2p
