#include <acmesh/ec.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace acmesh;
using namespace acmesh::ec;

namespace {

Bits packet_bits(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  guwal::Payload p;
  for (auto& b : p) b = static_cast<std::uint8_t>(rng());
  const guwal::Header h{guwal::FrameType::data, bool(rng() & 1), true, static_cast<std::uint8_t>(rng() % 64),
                        static_cast<std::uint8_t>(rng() % 64)};
  const guwmanet::NetPacket pkt{{static_cast<std::uint8_t>(rng() % 32), static_cast<std::uint8_t>(rng() % 32)},
                                guwal::make_frame(h, 0, std::span<const std::uint8_t>(p))};
  return guwmanet::encode_net(pkt);
}

bool valid(const Bits& b) { return guwmanet::crc_ok(b); }

// Brute-force oracle: every candidate within `max_flips` of `bits`, checked by
// recomputing the CRC from scratch. Returns the CRC-valid candidates at the
// smallest flip count that has any.
std::vector<Bits> oracle(const Bits& bits, int max_flips = 2) {
  if (valid(bits)) return {bits};
  std::vector<Bits> found;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    Bits c = bits;
    c[i] ^= 1;
    if (valid(c)) found.push_back(c);
  }
  if (!found.empty() || max_flips < 2) return found;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    for (std::size_t j = i + 1; j < bits.size(); ++j) {
      Bits c = bits;
      c[i] ^= 1;
      c[j] ^= 1;
      if (valid(c)) found.push_back(c);
    }
  }
  return found;
}

void check_against_oracle(const Bits& corrupted) {
  const auto want = oracle(corrupted);
  const auto got = correct(SoftPacket::from_bits(corrupted));
  if (want.size() == 1) {
    ASSERT_TRUE(got.ok());
    ASSERT_EQ(guwmanet::encode_net(*got.packet), want.front());
  } else {
    ASSERT_FALSE(got.ok()) << "claimed a unique repair, oracle found " << want.size();
    ASSERT_EQ(got.status, want.empty() ? Status::unrecoverable : Status::ambiguous);
  }
}

}  // namespace

TEST(Correct, IntactIsIdentity) {
  const auto bits = packet_bits(1);
  const auto r = correct(SoftPacket::from_bits(bits));
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.status, Status::intact);
  EXPECT_TRUE(r.flipped.empty());
  EXPECT_EQ(guwmanet::encode_net(*r.packet), bits);
}

TEST(Correct, ExhaustiveSingleFlips) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto bits = packet_bits(seed);
    for (std::size_t i = 0; i < kPacketBits; ++i) {
      Bits c = bits;
      c[i] ^= 1;
      check_against_oracle(c);
      if (i >= kNetHeaderBits) {
        // frame bits: the original is the only one-flip repair
        const auto r = correct(SoftPacket::from_bits(c));
        ASSERT_EQ(r.status, Status::corrected);
        ASSERT_EQ(guwmanet::encode_net(*r.packet), bits);
      }
    }
  }
}

TEST(Correct, KnownTwoBitVector) {
  const auto bits = packet_bits(4);
  // first pair (40, j) the oracle confirms as the unique two-flip repair
  Bits c;
  for (std::size_t j = 41; j < kPacketBits; ++j) {
    c = bits;
    c[40] ^= 1;
    c[j] ^= 1;
    if (oracle(c).size() == 1) break;
  }
  ASSERT_EQ(oracle(c).size(), 1u);
  const auto r = correct(SoftPacket::from_bits(c));
  ASSERT_EQ(r.status, Status::corrected);
  EXPECT_EQ(guwmanet::encode_net(*r.packet), bits);
  EXPECT_EQ(r.flipped.size(), 2u);
}

TEST(Correct, RandomTwoBitAgainstOracle) {
  // reliability-free: the oracle decides uniqueness, correct() must agree
  std::mt19937_64 rng(99);
  int ambiguous = 0;
  for (int n = 0; n < 10000; ++n) {
    const auto bits = packet_bits(rng());
    Bits c = bits;
    const std::size_t i = kNetHeaderBits + rng() % (kPacketBits - kNetHeaderBits);
    std::size_t j = i;
    while (j == i) j = kNetHeaderBits + rng() % (kPacketBits - kNetHeaderBits);
    c[i] ^= 1;
    c[j] ^= 1;
    const auto want = oracle(c);
    const auto got = correct(SoftPacket::from_bits(c));
    if (want.size() == 1) {
      ASSERT_TRUE(got.ok()) << n;
      ASSERT_EQ(guwmanet::encode_net(*got.packet), bits) << n;
    } else {
      ++ambiguous;
      ASSERT_FALSE(got.ok()) << n;
    }
  }
  RecordProperty("ambiguous_cases", ambiguous);
  std::printf("two-bit corruptions with several valid repairs: %d of 10000\n", ambiguous);
}

TEST(Correct, FiveFlipsNeverSilentlyWrong) {
  std::mt19937_64 rng(5);
  for (int n = 0; n < 300; ++n) {
    const auto bits = packet_bits(rng());
    Bits c = bits;
    std::set<std::size_t> pos;
    while (pos.size() < 5) pos.insert(kNetHeaderBits + rng() % (kPacketBits - kNetHeaderBits));
    for (auto p : pos) c[p] ^= 1;
    check_against_oracle(c);
    const auto r = correct(SoftPacket::from_bits(c));
    if (r.ok()) {
      EXPECT_TRUE(valid(guwmanet::encode_net(*r.packet)));
    }
  }
}

TEST(Correct, ReliabilityDoesNotChangeOutcomeOnlyOrder) {
  const auto bits = packet_bits(6);
  Bits c = bits;
  c[20] ^= 1;
  c[90] ^= 1;
  auto soft = SoftPacket::from_bits(c, 0.9);
  soft.reliability[20] = 0.05;
  soft.reliability[90] = 0.1;
  const auto r = correct(soft);
  ASSERT_EQ(r.status, Status::corrected);
  EXPECT_EQ(r.flipped, (std::vector<std::size_t>{20, 90}));
}

TEST(Correct, WrongLength) {
  EXPECT_THROW(correct(SoftPacket::from_bits(Bits(137, 0))), LengthError);
}

TEST(Merge, DisjointSingleErrors) {
  const auto bits = packet_bits(7);
  Bits a = bits, b = bits;
  a[30] ^= 1;
  b[80] ^= 1;
  auto sa = SoftPacket::from_bits(a, 0.8);
  auto sb = SoftPacket::from_bits(b, 0.8);
  sa.reliability[30] = 0.2;  // the flipped bit is the uncertain one
  sb.reliability[80] = 0.2;
  const auto voted = vote({sa, sb});
  EXPECT_TRUE(valid(voted.bits));
  const auto r = merge({sa, sb});
  ASSERT_EQ(r.status, Status::intact);
  EXPECT_EQ(guwmanet::encode_net(*r.packet), bits);
}

TEST(Merge, TwoAgainstOne) {
  const auto bits = packet_bits(8);
  Bits bad = bits;
  bad[55] ^= 1;
  const auto r = merge({SoftPacket::from_bits(bits), SoftPacket::from_bits(bad), SoftPacket::from_bits(bits)});
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(guwmanet::encode_net(*r.packet), bits);
}

TEST(Merge, HeavyOverlapUnrecoverable) {
  const auto bits = packet_bits(9);
  Bits a = bits;
  for (std::size_t i = 0; i < 10; ++i) a[kNetHeaderBits + 7 * i + 3] ^= 1;
  const std::vector<SoftPacket> copies{SoftPacket::from_bits(a), SoftPacket::from_bits(a)};
  const auto voted = vote(copies);
  EXPECT_EQ(voted.bits, a);
  const auto want = oracle(voted.bits);
  const auto r = merge(copies);
  EXPECT_FALSE(r.ok());
  EXPECT_NE(want.size(), 1u);
}

TEST(Merge, PermutationInvariant) {
  std::mt19937_64 rng(10);
  for (int n = 0; n < 200; ++n) {
    const auto bits = packet_bits(rng());
    std::vector<SoftPacket> copies;
    for (int k = 0; k < 3 + static_cast<int>(rng() % 3); ++k) {
      Bits c = bits;
      for (int e = 0; e < 4; ++e) c[rng() % kPacketBits] ^= 1;
      SoftPacket s = SoftPacket::from_bits(c);
      for (auto& r : s.reliability) r = static_cast<double>(rng() % 1000) / 1000.0;
      copies.push_back(s);
    }
    const auto ref = vote(copies);
    std::shuffle(copies.begin(), copies.end(), rng);
    const auto perm = vote(copies);
    ASSERT_EQ(perm.bits, ref.bits);
    const auto a = correct(ref), b = correct(perm);
    ASSERT_EQ(a.ok(), b.ok());
    if (a.ok()) {
      ASSERT_EQ(*a.packet, *b.packet);
    }
  }
}

TEST(Merge, NeedsTwoCopies) {
  EXPECT_THROW(merge({SoftPacket::from_bits(packet_bits(1))}), LengthError);
}
