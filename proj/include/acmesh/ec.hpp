#pragma once

// CRC-guided repair of demodulated packets.
//
// The CRC is affine in the frame bits, so flipping bit i changes the
// syndrome (recomputed CRC xor stored CRC) by a fixed 16-bit delta. A
// candidate set of flips repairs the packet exactly when the deltas cancel
// the syndrome. Only the 128 frame bits influence the syndrome; the 10
// network-header bits are not covered by the checksum.

#include <acmesh/guwal.hpp>
#include <acmesh/guwmanet.hpp>
#include <acmesh/packet.hpp>

#include <algorithm>
#include <array>
#include <numeric>
#include <optional>
#include <vector>

namespace acmesh::ec {

enum class Status { intact, corrected, ambiguous, unrecoverable };

struct Result {
  Status status = Status::unrecoverable;
  std::optional<guwmanet::NetPacket> packet;
  std::vector<std::size_t> flipped;  // bit positions changed

  bool ok() const noexcept { return packet.has_value(); }
};

namespace detail {

inline std::uint16_t syndrome(const Bits& bits) {
  const auto raw = guwmanet::frame_bytes(bits);
  const std::uint16_t stored = static_cast<std::uint16_t>(raw[14] << 8 | raw[15]);
  return static_cast<std::uint16_t>(guwal::crc16(std::span(raw).first(guwal::kCrcOffset)) ^ stored);
}

// Syndrome change caused by flipping each of the 138 packet bits.
inline const std::array<std::uint16_t, kPacketBits>& deltas() {
  static const auto table = [] {
    std::array<std::uint16_t, kPacketBits> d{};
    const Bits zero(kPacketBits, 0);
    const std::uint16_t base = syndrome(zero);
    for (std::size_t i = 0; i < kPacketBits; ++i) {
      Bits b = zero;
      b[i] = 1;
      d[i] = static_cast<std::uint16_t>(syndrome(b) ^ base);
    }
    return d;
  }();
  return table;
}

inline Result accept(const Bits& bits, Status st, std::vector<std::size_t> flips) {
  Result r;
  r.status = st;
  r.packet = guwmanet::decode_net(bits);
  r.flipped = std::move(flips);
  return r;
}

}  // namespace detail

// Repairs up to two bit errors. Candidates are visited in ascending order of
// summed reliability of the flipped positions; a repair is returned only if it
// is the single CRC-valid candidate at the smallest flip count.
inline Result correct(const SoftPacket& pkt) {
  if (pkt.bits.size() != kPacketBits || pkt.reliability.size() != kPacketBits) {
    throw LengthError("soft packet must carry 138 bits and 138 reliabilities");
  }
  const std::uint16_t s = detail::syndrome(pkt.bits);
  if (s == 0) return detail::accept(pkt.bits, Status::intact, {});

  const auto& d = detail::deltas();
  std::vector<std::size_t> order(kPacketBits);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pkt.reliability[a] < pkt.reliability[b]; });

  auto finish = [&](const std::vector<std::vector<std::size_t>>& hits) {
    Result r;
    if (hits.size() == 1) {
      Bits fixed = pkt.bits;
      for (auto i : hits.front()) fixed[i] ^= 1;
      return detail::accept(fixed, Status::corrected, hits.front());
    }
    r.status = hits.empty() ? Status::unrecoverable : Status::ambiguous;
    return r;
  };

  std::vector<std::vector<std::size_t>> hits;
  for (auto i : order) {
    if (d[i] == s) hits.push_back({i});
  }
  if (!hits.empty()) return finish(hits);

  struct Pair {
    double weight;
    std::size_t a, b;
  };
  std::vector<Pair> pairs;
  for (std::size_t x = 0; x < kPacketBits; ++x) {
    for (std::size_t y = x + 1; y < kPacketBits; ++y) {
      if ((d[x] ^ d[y]) == s) pairs.push_back({pkt.reliability[x] + pkt.reliability[y], x, y});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& p, const Pair& q) { return p.weight < q.weight; });
  for (const auto& p : pairs) hits.push_back({p.a, p.b});
  return finish(hits);
}

// Reliability-weighted per-bit vote across copies, then correct(). Exact ties
// fall back to the plain majority count and finally to 0, independent of
// copy order.
inline SoftPacket vote(const std::vector<SoftPacket>& copies) {
  if (copies.empty()) throw LengthError("merge needs at least one copy");
  SoftPacket out;
  out.bits.assign(kPacketBits, 0);
  out.reliability.assign(kPacketBits, 0.0);
  out.rx_time = copies.front().rx_time;
  for (const auto& c : copies) {
    if (c.bits.size() != kPacketBits || c.reliability.size() != kPacketBits) {
      throw LengthError("soft packet must carry 138 bits and 138 reliabilities");
    }
    out.rx_time = std::max(out.rx_time, c.rx_time);
  }
  for (std::size_t i = 0; i < kPacketBits; ++i) {
    double score = 0, total = 0;
    int count = 0;
    for (const auto& c : copies) {
      const double r = std::clamp(c.reliability[i], 0.0, 1.0);
      score += c.bits[i] ? r : -r;
      total += r;
      count += c.bits[i] ? 1 : -1;
    }
    if (score > 0 || (score == 0 && count > 0)) out.bits[i] = 1;
    out.reliability[i] = total > 0 ? std::abs(score) / total : 0.0;
  }
  return out;
}

inline Result merge(const std::vector<SoftPacket>& copies) {
  if (copies.size() < 2) throw LengthError("merge needs at least two copies");
  return correct(vote(copies));
}

}  // namespace acmesh::ec
