#include <acmesh/channel.hpp>
#include <acmesh/phy.hpp>
#include <acmesh/wav.hpp>

#include <gtest/gtest.h>

#include <complex>
#include <filesystem>
#include <random>

using namespace acmesh;
using namespace acmesh::phy;

namespace {

const ModemConfig kCfg = ModemConfig::ultrasonic_21k();

Bits random_bits(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Bits b(n);
  for (auto& v : b) v = static_cast<std::uint8_t>(rng() & 1);
  return b;
}

Bits random_packet(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  guwal::Payload p;
  for (auto& b : p) b = static_cast<std::uint8_t>(rng());
  return guwmanet::encode_net({{static_cast<std::uint8_t>(rng() % 32), static_cast<std::uint8_t>(rng() % 32)},
                               guwal::make_frame({guwal::FrameType::data, false, true, 3, 4}, 0, std::span<const std::uint8_t>(p))});
}

// Plain O(N^2) DFT magnitude squared, bins 0..N/2.
std::vector<double> naive_dft_power(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<double> out(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    std::complex<double> acc = 0;
    for (std::size_t t = 0; t < n; ++t) acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * t % n) / double(n));
    out[k] = std::norm(acc);
  }
  return out;
}

// Frequency response of an FIR straight from its definition.
double fir_response_db(const std::vector<double>& h, double f, double fs) {
  std::complex<double> acc = 0;
  for (std::size_t n = 0; n < h.size(); ++n) acc += h[n] * std::polar(1.0, -2.0 * std::numbers::pi * f * double(n) / fs);
  return 20.0 * std::log10(std::abs(acc));
}

SampleBuffer with_lead(const SampleBuffer& b, std::size_t lead, std::size_t tail = 1024) {
  return channel::pad(b, lead, tail);
}

}  // namespace

TEST(Config, BinsInsidePassband) {
  EXPECT_DOUBLE_EQ(kCfg.bin_width(), 46.875);
  EXPECT_DOUBLE_EQ(448 * kCfg.bin_width(), 21000.0);
  for (const auto& c : {ModemConfig::ultrasonic_21k(), ModemConfig::near_ultrasonic_18k6()}) {
    EXPECT_GT(c.bin_freq(c.lowest_bin()), c.passband_lo) << c.name;
    EXPECT_LT(c.bin_freq(c.highest_bin()), c.passband_hi) << c.name;
  }
  EXPECT_GE(kCfg.lowest_bin(), 436u);
  EXPECT_LE(kCfg.highest_bin(), 490u);
  EXPECT_THROW(ModemConfig::by_name("fast"), RangeError);
}

TEST(Window, Values) {
  auto eq2 = [](double k) { return std::sqrt(0.54 + 0.46 * std::cos(2 * std::numbers::pi * (k - 512) / 1024)); };
  EXPECT_DOUBLE_EQ(window(512), 1.0);
  EXPECT_DOUBLE_EQ(window(0), 0.0);
  EXPECT_DOUBLE_EQ(window(1023), 0.0);
  EXPECT_NEAR(window(64), eq2(64), 1e-12);
  // direct evaluation gives 0.3391 at the plateau edge
  EXPECT_NEAR(window(64), 0.3391, 5e-5);
  EXPECT_NEAR(window(32), 0.5 * eq2(32), 1e-12);
  EXPECT_THROW(window(1024), RangeError);
}

TEST(Hop, Invariants) {
  for (auto cfg : {ModemConfig::ultrasonic_21k(), ModemConfig::near_ultrasonic_18k6()}) {
    const HopSequence hop(cfg);
    ASSERT_EQ(hop.size(), kCodedBits);
    for (std::size_t j = 0; j < hop.size(); ++j) {
      EXPECT_NE(hop.bin(j, 0), hop.bin(j, 1));
      if (j + 1 < hop.size()) {
        const std::set<unsigned> a{hop.bin(j, 0), hop.bin(j, 1)};
        EXPECT_FALSE(a.contains(hop.bin(j + 1, 0)) || a.contains(hop.bin(j + 1, 1))) << j;
      }
    }
    const HopSequence again(cfg);
    for (std::size_t j = 0; j < hop.size(); ++j) ASSERT_EQ(hop.pair(j), again.pair(j));
  }
}

TEST(ModulateBit, PeakAtHopBin) {
  const HopSequence hop(kCfg);
  for (std::size_t j : {0u, 1u, 77u, 275u}) {
    for (unsigned b : {0u, 1u}) {
      const auto block = modulate_bit(j, b, kCfg, hop);
      EXPECT_DOUBLE_EQ(block.front(), 0.0);
      EXPECT_NEAR(block.back(), 0.0, 1e-12);
      const auto p = naive_dft_power(block);
      const auto peak = static_cast<unsigned>(std::max_element(p.begin(), p.end()) - p.begin());
      EXPECT_EQ(peak, hop.bin(j, b));
      double outside = 0;
      for (std::size_t k = 0; k < p.size(); ++k) {
        if (k + 2 < peak || k > peak + 2) outside = std::max(outside, p[k]);
      }
      EXPECT_GT(10 * std::log10(p[peak] / outside), 20.0);
    }
  }
}

TEST(Fft, MatchesNaiveDft) {
  std::mt19937 rng(1);
  std::normal_distribution<double> g;
  std::vector<double> x(256);
  for (auto& v : x) v = g(rng);
  const auto ref = naive_dft_power(x);
  std::vector<dsp::cplx> a(x.begin(), x.end());
  dsp::Fft(256).forward(a);
  for (std::size_t k = 0; k <= 128; ++k) EXPECT_NEAR(std::norm(a[k]), ref[k], 1e-6 * (1 + ref[k]));
}

TEST(Packet, LengthTimingAndAmplitude) {
  const auto buf = modulate_packet(random_packet(1), kCfg);
  EXPECT_EQ(buf.size(), 284640u);
  EXPECT_EQ(kCfg.packet_samples(), 284640u);
  EXPECT_NEAR(kCfg.packet_airtime(), 5.93, 1e-9);
  EXPECT_NEAR(128.0 / kCfg.packet_airtime(), 21.6, 0.05);
  double peak = 0, step = 0;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    peak = std::max(peak, std::abs(buf.samples[i]));
    if (i) step = std::max(step, std::abs(buf.samples[i] - buf.samples[i - 1]));
  }
  EXPECT_LE(peak, kCfg.gain + 1e-12);
  // no jumps beyond what the highest tone can produce in one sample
  EXPECT_LE(step, kCfg.gain * 2 * std::numbers::pi * kCfg.bin_freq(kCfg.highest_bin()) / kCfg.sample_rate * 1.01 + 1e-9);
  for (std::size_t j = 0; j <= kCodedBits; ++j) {
    EXPECT_NEAR(buf.samples[kCfg.preamble_samples + j * 1024 - (j ? 1 : 0)], 0.0, 1e-12);
  }
  EXPECT_THROW(modulate_packet(Bits(137, 0), kCfg), LengthError);
}

TEST(Packet, SpectralConfinement) {
  for (auto cfg : {ModemConfig::ultrasonic_21k(), ModemConfig::near_ultrasonic_18k6()}) {
    const auto buf = modulate_packet(random_packet(2), cfg);
    const std::size_t n = dsp::next_pow2(buf.size());
    std::vector<dsp::cplx> a(n, 0.0);
    std::copy(buf.samples.begin(), buf.samples.end(), a.begin());
    dsp::Fft(n).forward(a);
    double in = 0, out = 0;
    const double lo = cfg.passband_lo - 400, hi = cfg.passband_hi + 500;
    for (std::size_t k = 0; k <= n / 2; ++k) {
      const double f = double(k) * cfg.sample_rate / double(n);
      (f >= lo && f <= hi ? in : out) += std::norm(a[k]);
    }
    EXPECT_LT(10 * std::log10(out / in), -40.0) << cfg.name;
  }
}

TEST(Conv, ZeroAndRoundTrip) {
  EXPECT_EQ(conv_encode(Bits(138, 0)), Bits(276, 0));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto in = random_bits(138, seed);
    const auto coded = conv_encode(in);
    ASSERT_EQ(coded.size(), 276u);
    std::vector<double> soft(coded.size());
    for (std::size_t i = 0; i < soft.size(); ++i) soft[i] = coded[i] ? 1.0 : -1.0;
    const auto d = conv_decode(soft);
    ASSERT_EQ(d.bits, in);
    for (double r : d.reliability) EXPECT_DOUBLE_EQ(r, 1.0);
  }
}

TEST(Conv, CorrectsSeparatedErrors) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto in = random_bits(138, seed);
    const auto coded = conv_encode(in);
    std::vector<double> soft(coded.size());
    for (std::size_t i = 0; i < soft.size(); ++i) soft[i] = coded[i] ? 1.0 : -1.0;
    for (std::size_t e = 0; e < 8; ++e) soft[10 + e * 32 + seed % 4] *= -1;
    ASSERT_EQ(conv_decode(soft).bits, in) << seed;
  }
}

TEST(Conv, MatchesExhaustiveMaximumLikelihood) {
  // every 10-bit input is a path; ML picks the one best correlated with the
  // soft metrics
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 0.9);
  const std::size_t L = 10;
  for (int trial = 0; trial < 200; ++trial) {
    const auto in = random_bits(L, rng());
    const auto coded = conv_encode(in);
    std::vector<double> soft(coded.size());
    for (std::size_t i = 0; i < soft.size(); ++i) soft[i] = (coded[i] ? 1.0 : -1.0) + g(rng);
    double best = -1e300;
    Bits arg;
    for (unsigned m = 0; m < (1u << L); ++m) {
      Bits cand(L);
      for (std::size_t i = 0; i < L; ++i) cand[i] = (m >> i) & 1;
      const auto c = conv_encode(cand);
      double score = 0;
      for (std::size_t i = 0; i < c.size(); ++i) score += c[i] ? soft[i] : -soft[i];
      if (score > best) {
        best = score;
        arg = cand;
      }
    }
    ASSERT_EQ(conv_decode(soft).bits, arg) << trial;
  }
}

TEST(Bandpass, Response) {
  const Bandpass bp(kCfg);
  const auto& h = bp.taps();
  EXPECT_EQ(bp.group_delay(), (h.size() - 1) / 2);
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(h[i], h[h.size() - 1 - i], 1e-15);  // linear phase
  EXPECT_NEAR(fir_response_db(h, 21000, 48000), 0.0, 1.0);
  for (double f = 20500; f <= 22900; f += 100) EXPECT_NEAR(fir_response_db(h, f, 48000), 0.0, 1.0) << f;
  EXPECT_LT(fir_response_db(h, 10000, 48000), -60.0);
  for (double f = 0; f <= 19000; f += 50) EXPECT_LT(fir_response_db(h, f, 48000), -60.0) << f;

  // time-domain check on an actual tone, after the filter settles
  SampleBuffer tone{std::vector<double>(8192), 48000};
  for (std::size_t i = 0; i < tone.size(); ++i) tone.samples[i] = std::sin(2 * std::numbers::pi * 21000 * double(i) / 48000);
  const auto y = bp.apply(tone);
  double pin = 0, pout = 0;
  for (std::size_t i = 2000; i < 8000; ++i) {
    pin += tone.samples[i] * tone.samples[i];
    pout += y.samples[i] * y.samples[i];
  }
  EXPECT_NEAR(10 * std::log10(pout / pin), 0.0, 1.0);

  const auto z = bp.apply(SampleBuffer{std::vector<double>(5000, 0.0), 48000});
  for (double v : z.samples) ASSERT_EQ(v, 0.0);
}

TEST(Preamble, Length) {
  EXPECT_EQ(make_preamble(kCfg).size(), 2016u);
}

TEST(Preamble, DetectOffsets) {
  const auto pkt = modulate_packet(random_packet(3), kCfg);
  EXPECT_NEAR(double(detect_preamble(with_lead(pkt, 0), kCfg)), 0.0, 8.0);
  EXPECT_NEAR(double(detect_preamble(with_lead(pkt, 5000), kCfg)), 5000.0, 8.0);
}

TEST(Preamble, WhiteNoiseNotDetected) {
  // 30 one-second noise buffers at several levels: no false alarm
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  for (double sigma : {1e-4, 0.01, 0.3}) {
    for (int s = 0; s < 10; ++s) {
      SampleBuffer noise{std::vector<double>(48000), 48000};
      for (auto& v : noise.samples) v = sigma * g(rng);
      EXPECT_THROW(detect_preamble(noise, kCfg), NoPreamble) << sigma;
    }
  }
}

TEST(Demod, NoiselessLoopback) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    auto cfg = seed % 2 ? ModemConfig::near_ultrasonic_18k6() : ModemConfig::ultrasonic_21k();
    cfg.hop_seed += static_cast<std::uint32_t>(seed * 7919);  // other hop seeds work too
    const auto bits = random_packet(seed);
    const auto d = Demodulator(cfg).run(with_lead(modulate_packet(bits, cfg), 300));
    ASSERT_EQ(d.packet.bits, bits);
    for (double r : d.packet.reliability) EXPECT_GE(r, 0.9);
    EXPECT_NEAR(double(d.offset), 300.0, 8.0);
  }
}

TEST(Demod, ShiftInvariant) {
  const auto bits = random_packet(4);
  const auto tx = modulate_packet(bits, kCfg);
  const Demodulator demod(kCfg);
  const auto a = demod.run(with_lead(tx, 0));
  const auto b = demod.run(with_lead(tx, 24000));
  EXPECT_EQ(a.packet.bits, b.packet.bits);
  EXPECT_EQ(a.packet.reliability, b.packet.reliability);
  EXPECT_EQ(b.offset - a.offset, 24000u);
}

TEST(Demod, ZeroDbLoopback) {
  EXPECT_GE(channel::loopback_success(kCfg, 0.0, 40, 77), 0.99);
}

TEST(Demod, SnrEstimateTracksTruth) {
  const auto tx = with_lead(modulate_packet(random_packet(5), kCfg), 2000);
  const double ps = packet_power(kCfg);
  channel::Gaussian g(3);
  for (double snr : {-3.0, 5.0, 15.0}) {
    const double sigma = std::sqrt(ps / dsp::from_db(snr) * kCfg.sample_rate / (2 * (kCfg.passband_hi - kCfg.passband_lo)));
    auto rx = tx;
    for (auto& v : rx.samples) v += sigma * g();
    EXPECT_NEAR(Demodulator(kCfg).run(rx).snr_db, snr, 1.0) << snr;
  }
}

TEST(Demod, AudibleCorpusHasNoPreamble) {
  const std::filesystem::path dir = std::filesystem::path(ACMESH_DATA_DIR) / "corpus";
  int files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() != ".wav" || e.path().filename().string().rfind("pilot", 0) == 0) continue;
    ++files;
    EXPECT_THROW(Demodulator(kCfg).run(wav::read_file(e.path().string())), NoPreamble) << e.path();
  }
  EXPECT_GE(files, 5);
}

TEST(Demod, MultiPacketScan) {
  const auto a = random_packet(6), b = random_packet(7);
  auto buf = with_lead(modulate_packet(a, kCfg), 1000, 24000);
  const auto second = modulate_packet(b, kCfg);
  buf.samples.insert(buf.samples.end(), second.samples.begin(), second.samples.end());
  const auto found = Demodulator(kCfg).scan(buf);
  ASSERT_EQ(found.size(), 2u);
  EXPECT_EQ(found[0].packet.bits, a);
  EXPECT_EQ(found[1].packet.bits, b);
}
