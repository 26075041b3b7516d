#pragma once

// GUWAL application frames: 16 bytes on the wire.
//
//   byte  0..1   header, big-endian 16-bit word
//                  bits 15-14 frame type (0 data, 1 ack, 2-3 reserved)
//                  bit  13    priority
//                  bit  12    ack requested
//                  bits 11-6  source operational address
//                  bits  5-0  destination operational address
//   byte  2      payload type (0 = UTF-8 text)
//   byte  3..13  payload, zero padded
//   byte 14..15  CRC-16/CCITT-FALSE over bytes 0..13, big-endian

#include <acmesh/errors.hpp>

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace acmesh::guwal {

inline constexpr std::size_t kFrameBytes = 16;
inline constexpr std::size_t kPayloadBytes = 11;
inline constexpr std::size_t kCrcOffset = 14;
inline constexpr std::uint8_t kMaxAddress = 63;

enum class FrameType : std::uint8_t { data = 0, ack = 1, reserved2 = 2, reserved3 = 3 };

inline constexpr std::uint8_t kPayloadText = 0;

using Bytes = std::vector<std::uint8_t>;
using RawFrame = std::array<std::uint8_t, kFrameBytes>;
using Payload = std::array<std::uint8_t, kPayloadBytes>;

struct Header {
  FrameType type = FrameType::data;
  bool priority = false;
  bool ack_requested = false;
  std::uint8_t src = 0;
  std::uint8_t dst = 0;

  friend bool operator==(const Header&, const Header&) = default;
};

struct Frame {
  Header header;
  std::uint8_t payload_type = kPayloadText;
  Payload payload{};
  std::uint16_t crc = 0;

  friend bool operator==(const Frame&, const Frame&) = default;
};

// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout.
// Table driven; tests check it against a bitwise reference.
namespace detail {
constexpr std::array<std::uint16_t, 256> make_crc_table() {
  std::array<std::uint16_t, 256> table{};
  for (unsigned i = 0; i < 256; ++i) {
    std::uint16_t r = static_cast<std::uint16_t>(i << 8);
    for (int b = 0; b < 8; ++b) {
      r = (r & 0x8000) ? static_cast<std::uint16_t>((r << 1) ^ 0x1021)
                       : static_cast<std::uint16_t>(r << 1);
    }
    table[i] = r;
  }
  return table;
}
inline constexpr auto kCrcTable = make_crc_table();
}  // namespace detail

constexpr std::uint16_t crc16(std::span<const std::uint8_t> data) {
  std::uint16_t crc = 0xFFFF;
  for (std::uint8_t byte : data) {
    crc = static_cast<std::uint16_t>((crc << 8) ^ detail::kCrcTable[((crc >> 8) ^ byte) & 0xFF]);
  }
  return crc;
}

inline std::uint16_t pack_header(const Header& h) {
  if (h.src > kMaxAddress || h.dst > kMaxAddress) {
    throw AddressError("GUWAL address out of range [0, 63]");
  }
  return static_cast<std::uint16_t>((static_cast<unsigned>(h.type) & 0x3) << 14 |
                                    (h.priority ? 1u : 0u) << 13 |
                                    (h.ack_requested ? 1u : 0u) << 12 |
                                    (static_cast<unsigned>(h.src) << 6) | h.dst);
}

inline Header unpack_header(std::uint16_t word) {
  Header h;
  h.type = static_cast<FrameType>((word >> 14) & 0x3);
  h.priority = (word >> 13) & 1;
  h.ack_requested = (word >> 12) & 1;
  h.src = static_cast<std::uint8_t>((word >> 6) & 0x3F);
  h.dst = static_cast<std::uint8_t>(word & 0x3F);
  return h;
}

// Builds a frame with a valid CRC.
inline Frame make_frame(const Header& header, std::uint8_t payload_type,
                        std::span<const std::uint8_t> payload) {
  if (payload.size() > kPayloadBytes) {
    throw PayloadTooLong("GUWAL payload holds at most 11 bytes, got " +
                         std::to_string(payload.size()));
  }
  Frame f;
  f.header = header;
  f.payload_type = payload_type;
  std::copy(payload.begin(), payload.end(), f.payload.begin());
  RawFrame raw{};
  const std::uint16_t word = pack_header(header);
  raw[0] = static_cast<std::uint8_t>(word >> 8);
  raw[1] = static_cast<std::uint8_t>(word & 0xFF);
  raw[2] = payload_type;
  std::copy(f.payload.begin(), f.payload.end(), raw.begin() + 3);
  f.crc = crc16(std::span(raw).first(kCrcOffset));
  return f;
}

inline Frame make_frame(const Header& header, std::uint8_t payload_type, std::string_view text) {
  return make_frame(header, payload_type,
                    std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// Serializes the frame as stored; the CRC field is written verbatim.
inline RawFrame serialize(const Frame& f) {
  RawFrame raw{};
  const std::uint16_t word = pack_header(f.header);
  raw[0] = static_cast<std::uint8_t>(word >> 8);
  raw[1] = static_cast<std::uint8_t>(word & 0xFF);
  raw[2] = f.payload_type;
  std::copy(f.payload.begin(), f.payload.end(), raw.begin() + 3);
  raw[14] = static_cast<std::uint8_t>(f.crc >> 8);
  raw[15] = static_cast<std::uint8_t>(f.crc & 0xFF);
  return raw;
}

inline RawFrame encode_frame(const Header& header, std::uint8_t payload_type,
                             std::span<const std::uint8_t> payload) {
  return serialize(make_frame(header, payload_type, payload));
}

inline bool crc_valid(std::span<const std::uint8_t> raw) {
  if (raw.size() != kFrameBytes) return false;
  const std::uint16_t stored = static_cast<std::uint16_t>(raw[14] << 8 | raw[15]);
  return crc16(raw.first(kCrcOffset)) == stored;
}

inline Frame decode_frame(std::span<const std::uint8_t> raw) {
  if (raw.size() != kFrameBytes) {
    throw LengthError("GUWAL frame must be 16 bytes, got " + std::to_string(raw.size()));
  }
  if (!crc_valid(raw)) throw ChecksumError("GUWAL frame CRC mismatch");
  Frame f;
  f.header = unpack_header(static_cast<std::uint16_t>(raw[0] << 8 | raw[1]));
  f.payload_type = raw[2];
  std::copy(raw.begin() + 3, raw.begin() + 14, f.payload.begin());
  f.crc = static_cast<std::uint16_t>(raw[14] << 8 | raw[15]);
  return f;
}

// Payload text up to the first NUL. Bytes after the terminator may carry a
// pad nonce and are not part of the text.
inline std::string payload_text(const Frame& f) {
  std::string out;
  for (std::uint8_t b : f.payload) {
    if (b == 0) break;
    out.push_back(static_cast<char>(b));
  }
  return out;
}

// Splits UTF-8 text into chunks of at most 11 bytes without tearing a
// multibyte sequence. A non-zero `pad_nonce` is written into the last payload
// byte of the final chunk when there is room for it after the NUL terminator,
// so that re-sending identical text yields a different CRC.
inline std::vector<Frame> chunk_message(std::string_view text, const Header& header,
                                        std::uint8_t pad_nonce = 0) {
  auto is_continuation = [](unsigned char c) { return (c & 0xC0) == 0x80; };
  std::vector<Frame> frames;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = std::min(pos + kPayloadBytes, text.size());
    if (end < text.size()) {
      std::size_t cut = end;
      while (cut > pos && is_continuation(static_cast<unsigned char>(text[cut]))) --cut;
      // a lone run of >11 continuation bytes is not UTF-8; cut hard
      if (cut > pos) end = cut;
    }
    std::string_view piece = text.substr(pos, end - pos);
    Bytes bytes(piece.begin(), piece.end());
    const bool last = end == text.size();
    if (last && pad_nonce != 0 && bytes.size() + 1 < kPayloadBytes) {
      bytes.resize(kPayloadBytes, 0);
      bytes.back() = pad_nonce;
    }
    frames.push_back(make_frame(header, kPayloadText, bytes));
    pos = end;
  }
  return frames;
}

// Acknowledgement for `acked`: addresses swapped, payload bytes 0..1 carry
// the acknowledged frame's CRC.
inline Frame make_ack(const Frame& acked) {
  Header h;
  h.type = FrameType::ack;
  h.priority = acked.header.priority;
  h.ack_requested = false;
  h.src = acked.header.dst;
  h.dst = acked.header.src;
  const std::array<std::uint8_t, 2> token{static_cast<std::uint8_t>(acked.crc >> 8),
                                          static_cast<std::uint8_t>(acked.crc & 0xFF)};
  return make_frame(h, kPayloadText, std::span<const std::uint8_t>(token));
}

inline std::uint16_t ack_token(const Frame& ack) {
  return static_cast<std::uint16_t>(ack.payload[0] << 8 | ack.payload[1]);
}

}  // namespace acmesh::guwal
