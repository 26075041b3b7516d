#pragma once

#include <acmesh/errors.hpp>

#include <cstddef>
#include <cstdint>
#include <vector>

namespace acmesh {

// One bit per element, values 0 or 1.
using Bits = std::vector<std::uint8_t>;

inline constexpr std::size_t kNetHeaderBits = 10;
inline constexpr std::size_t kPacketBits = 138;  // 10-bit net header + 16-byte frame
inline constexpr std::size_t kCodedBits = 2 * kPacketBits;

// Hard decisions plus per-bit confidence, as delivered by the demodulator.
struct SoftPacket {
  Bits bits;
  std::vector<double> reliability;  // [0, 1] per bit
  double rx_time = 0.0;             // seconds

  static SoftPacket from_bits(Bits b, double confidence = 1.0, double t = 0.0) {
    SoftPacket p;
    p.reliability.assign(b.size(), confidence);
    p.bits = std::move(b);
    p.rx_time = t;
    return p;
  }
};

}  // namespace acmesh
