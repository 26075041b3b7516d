#pragma once

// Ultrasonic FHSS modem.
//
// A packet on air is a 2016-sample preamble followed by 276 coded bits, one
// 1024-sample block each. Every block carries a single windowed tone; bit
// position j selects one of 20 tone pairs (the hop) and the bit value picks
// the lower or upper tone of that pair.

#include <acmesh/dsp.hpp>
#include <acmesh/errors.hpp>
#include <acmesh/packet.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace acmesh::phy {

using dsp::SampleBuffer;

struct ModemConfig {
  std::string name = "ultrasonic-21k";
  double sample_rate = 48000.0;
  unsigned samples_per_bit = 1024;
  double center_freq = 21000.0;
  double passband_lo = 20400.0;
  double passband_hi = 23000.0;
  unsigned num_pairs = 20;
  unsigned first_bin = 443;   // lower tone of pair p is first_bin + p
  unsigned pair_offset = 20;  // upper tone of pair p is first_bin + pair_offset + p
  std::uint32_t hop_seed = 0x4A4E5553;
  std::uint32_t preamble_seed = 0x00AC5042;
  unsigned preamble_samples = 2016;  // 42 ms
  unsigned preamble_chips = 16;
  unsigned ramp_samples = 64;
  double gain = 0.5;
  unsigned bandpass_taps = 301;
  double bandpass_transition = 700.0;  // Hz between stopband edge and passband edge
  double preamble_threshold = 0.36;    // normalized cross-correlation

  double bin_width() const { return sample_rate / samples_per_bit; }
  double bin_freq(unsigned bin) const { return bin * bin_width(); }
  unsigned lowest_bin() const { return first_bin; }
  unsigned highest_bin() const { return first_bin + pair_offset + num_pairs - 1; }
  unsigned tone_bin(unsigned pair, unsigned bit) const {
    return first_bin + pair + (bit ? pair_offset : 0);
  }
  std::size_t packet_samples() const {
    return preamble_samples + kCodedBits * static_cast<std::size_t>(samples_per_bit);
  }
  double packet_airtime() const { return static_cast<double>(packet_samples()) / sample_rate; }

  static ModemConfig ultrasonic_21k() { return ModemConfig{}; }

  // Sub-ultrasonic profile centered at 18.6 kHz.
  static ModemConfig near_ultrasonic_18k6() {
    ModemConfig c;
    c.name = "near-ultrasonic-18k6";
    c.center_freq = 18600.0;
    c.passband_lo = 17600.0;
    c.passband_hi = 19600.0;
    c.first_bin = 377;
    c.hop_seed = 0x4A4E5554;
    return c;
  }

  static ModemConfig by_name(const std::string& n) {
    if (n == "ultrasonic-21k") return ultrasonic_21k();
    if (n == "near-ultrasonic-18k6") return near_ultrasonic_18k6();
    throw RangeError("unknown modem profile '" + n + "'");
  }
};

// Trapezoid ramp times the square-rooted Hamming window, for a block of n
// samples with linear ramps of `ramp` samples at either end.
inline double window(std::size_t k, std::size_t n = 1024, std::size_t ramp = 64) {
  if (k >= n) throw RangeError("window index out of range");
  const double c = std::cos(2.0 * dsp::kPi * (static_cast<double>(k) - static_cast<double>(n) / 2.0) /
                            static_cast<double>(n));
  const double hamming_root = std::sqrt(0.54 + 0.46 * c);
  const double rise = static_cast<double>(k) / static_cast<double>(ramp);
  const double fall = static_cast<double>(n - 1 - k) / static_cast<double>(ramp);
  return hamming_root * std::min({1.0, rise, fall});
}

inline std::vector<double> window_table(const ModemConfig& cfg) {
  std::vector<double> w(cfg.samples_per_bit);
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = window(k, cfg.samples_per_bit, cfg.ramp_samples);
  return w;
}

// Tone-pair index per coded-bit position. Consecutive positions never reuse a
// pair, so their tone sets are disjoint.
class HopSequence {
 public:
  HopSequence(const ModemConfig& cfg, std::size_t length = kCodedBits) : cfg_(cfg), pairs_(length) {
    std::mt19937 rng(cfg.hop_seed);
    unsigned prev = cfg.num_pairs;
    for (auto& p : pairs_) {
      unsigned pick = rng() % cfg.num_pairs;
      if (pick == prev) pick = (pick + 1 + rng() % (cfg.num_pairs - 1)) % cfg.num_pairs;
      p = pick;
      prev = pick;
    }
  }

  std::size_t size() const noexcept { return pairs_.size(); }
  unsigned pair(std::size_t j) const { return pairs_.at(j); }
  unsigned bin(std::size_t j, unsigned bit) const { return cfg_.tone_bin(pairs_.at(j), bit); }

 private:
  ModemConfig cfg_;
  std::vector<unsigned> pairs_;
};

// Real projection of a complex exponential at the hop bin, times the window.
inline std::vector<double> modulate_bit(std::size_t j, unsigned bit, const ModemConfig& cfg,
                                        const HopSequence& hop) {
  const unsigned n = cfg.samples_per_bit;
  const unsigned k0 = hop.bin(j, bit);
  std::vector<double> out(n);
  for (unsigned k = 0; k < n; ++k) {
    const double phase = 2.0 * dsp::kPi * static_cast<double>((static_cast<std::uint64_t>(k0) * k) % n) /
                         static_cast<double>(n);
    out[k] = cfg.gain * std::cos(phase) * window(k, n, cfg.ramp_samples);
  }
  return out;
}

// Phase-continuous hop pattern over the tone band with trapezoid ends.
inline SampleBuffer make_preamble(const ModemConfig& cfg) {
  const unsigned chips = cfg.preamble_chips;
  std::vector<unsigned> order(chips);
  for (unsigned i = 0; i < chips; ++i) order[i] = i;
  std::mt19937 rng(cfg.preamble_seed);
  for (unsigned i = chips - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);

  const double f_lo = cfg.bin_freq(cfg.lowest_bin());
  const double f_hi = cfg.bin_freq(cfg.highest_bin());
  const double step = (f_hi - f_lo) / (chips - 1);
  const unsigned chip_len = cfg.preamble_samples / chips;

  SampleBuffer buf;
  buf.sample_rate = cfg.sample_rate;
  buf.samples.resize(cfg.preamble_samples);
  double phase = 0.0;
  for (unsigned n = 0; n < cfg.preamble_samples; ++n) {
    const unsigned chip = std::min(n / chip_len, chips - 1);
    const double f = f_lo + step * order[chip];
    const double ramp = std::min({1.0, static_cast<double>(n) / cfg.ramp_samples,
                                  static_cast<double>(cfg.preamble_samples - 1 - n) / cfg.ramp_samples});
    buf.samples[n] = cfg.gain * std::cos(phase) * ramp;
    phase = std::fmod(phase + 2.0 * dsp::kPi * f / cfg.sample_rate, 2.0 * dsp::kPi);
  }
  return buf;
}

// ---------------------------------------------------------------------------
// Rate-1/2, K=7 convolutional code, generators 171/133 (octal). The encoder
// starts in the all-zero state; no tail is appended, so the coded length is
// exactly twice the input length.

namespace conv {
inline constexpr unsigned kStates = 64;
inline constexpr unsigned kG0 = 0171;
inline constexpr unsigned kG1 = 0133;

inline unsigned parity(unsigned v) { return static_cast<unsigned>(__builtin_popcount(v) & 1); }

// Output pair for input `bit` entering from `state` (6 previous bits, newest
// in bit 5).
inline std::array<std::uint8_t, 2> outputs(unsigned state, unsigned bit) {
  const unsigned reg = (bit << 6) | state;
  return {static_cast<std::uint8_t>(parity(reg & kG0)), static_cast<std::uint8_t>(parity(reg & kG1))};
}
inline unsigned next_state(unsigned state, unsigned bit) { return ((bit << 6) | state) >> 1; }
}  // namespace conv

inline Bits conv_encode(const Bits& in) {
  Bits out;
  out.reserve(2 * in.size());
  unsigned state = 0;
  for (std::uint8_t b : in) {
    const auto o = conv::outputs(state, b & 1);
    out.push_back(o[0]);
    out.push_back(o[1]);
    state = conv::next_state(state, b & 1);
  }
  return out;
}

struct Decoded {
  Bits bits;
  std::vector<double> reliability;
};

// Maximum-likelihood (Viterbi) decoding of soft metrics in [-1, 1], positive
// meaning coded bit 1. Reliability of each decoded bit is the mean agreement
// between the re-encoded path and the metrics over the bit's constraint span.
inline Decoded conv_decode(const std::vector<double>& soft) {
  if (soft.size() % 2 != 0) throw LengthError("coded sequence must have even length");
  const std::size_t steps = soft.size() / 2;
  constexpr double kNeg = -1e300;
  std::vector<double> metric(conv::kStates, kNeg), next(conv::kStates);
  metric[0] = 0.0;
  std::vector<std::array<std::uint8_t, conv::kStates>> from(steps);
  std::vector<std::array<std::uint8_t, conv::kStates>> input(steps);

  for (std::size_t t = 0; t < steps; ++t) {
    std::fill(next.begin(), next.end(), kNeg);
    const double m0 = soft[2 * t], m1 = soft[2 * t + 1];
    for (unsigned s = 0; s < conv::kStates; ++s) {
      if (metric[s] == kNeg) continue;
      for (unsigned b = 0; b < 2; ++b) {
        const auto o = conv::outputs(s, b);
        const double bm = (o[0] ? m0 : -m0) + (o[1] ? m1 : -m1);
        const unsigned ns = conv::next_state(s, b);
        const double cand = metric[s] + bm;
        // ties resolved toward the lower predecessor state for determinism
        if (cand > next[ns]) {
          next[ns] = cand;
          from[t][ns] = static_cast<std::uint8_t>(s);
          input[t][ns] = static_cast<std::uint8_t>(b);
        }
      }
    }
    metric.swap(next);
  }

  unsigned best = 0;
  for (unsigned s = 1; s < conv::kStates; ++s) {
    if (metric[s] > metric[best]) best = s;
  }
  Decoded d;
  d.bits.assign(steps, 0);
  for (std::size_t t = steps; t-- > 0;) {
    d.bits[t] = input[t][best];
    best = from[t][best];
  }

  const Bits recoded = conv_encode(d.bits);
  std::vector<double> agree(soft.size());
  for (std::size_t i = 0; i < soft.size(); ++i) agree[i] = recoded[i] ? soft[i] : -soft[i];
  d.reliability.assign(steps, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t end = std::min(steps, t + 7);
    double acc = 0;
    for (std::size_t u = t; u < end; ++u) acc += agree[2 * u] + agree[2 * u + 1];
    d.reliability[t] = std::clamp(acc / (2.0 * static_cast<double>(end - t)), 0.0, 1.0);
  }
  return d;
}

// ---------------------------------------------------------------------------

inline SampleBuffer modulate_packet(const Bits& packet, const ModemConfig& cfg, const HopSequence& hop) {
  if (packet.size() != kPacketBits) {
    throw LengthError("packet must be 138 bits, got " + std::to_string(packet.size()));
  }
  SampleBuffer out = make_preamble(cfg);
  const Bits coded = conv_encode(packet);
  out.samples.reserve(cfg.packet_samples());
  for (std::size_t j = 0; j < coded.size(); ++j) {
    const auto block = modulate_bit(j, coded[j], cfg, hop);
    out.samples.insert(out.samples.end(), block.begin(), block.end());
  }
  return out;
}

inline SampleBuffer modulate_packet(const Bits& packet, const ModemConfig& cfg) {
  return modulate_packet(packet, cfg, HopSequence(cfg));
}

// Receive bandpass: Blackman-Harris windowed sinc whose cutoffs sit half a
// transition band outside the passband edges.
class Bandpass {
 public:
  explicit Bandpass(const ModemConfig& cfg)
      : taps_(dsp::design_bandpass(cfg.passband_lo - cfg.bandpass_transition / 2,
                                   std::min(cfg.passband_hi + cfg.bandpass_transition / 2,
                                            cfg.sample_rate / 2 - 1.0),
                                   cfg.sample_rate, cfg.bandpass_taps)),
        conv_(taps_) {}

  const std::vector<double>& taps() const noexcept { return taps_; }
  std::size_t group_delay() const noexcept { return (taps_.size() - 1) / 2; }
  double noise_gain() const {
    double e = 0;
    for (double h : taps_) e += h * h;
    return e;
  }

  // Output is delayed by group_delay() samples relative to the input.
  SampleBuffer apply(const SampleBuffer& in) const {
    return SampleBuffer{conv_.apply(in.samples), in.sample_rate};
  }

 private:
  std::vector<double> taps_;
  dsp::OverlapSave conv_;
};

struct BandpassResult {
  SampleBuffer signal;
  std::size_t group_delay = 0;
};

inline BandpassResult bandpass(const SampleBuffer& rx, const ModemConfig& cfg) {
  Bandpass bp(cfg);
  return {bp.apply(rx), bp.group_delay()};
}

// Normalized cross-correlation of a buffer against the preamble.
class PreambleDetector {
 public:
  explicit PreambleDetector(const ModemConfig& cfg) : cfg_(cfg), preamble_(make_preamble(cfg).samples) {
    std::vector<double> rev(preamble_.rbegin(), preamble_.rend());
    conv_ = std::make_unique<dsp::OverlapSave>(rev, 8192);
    for (double v : preamble_) energy_ += v * v;
  }

  struct Peak {
    std::size_t offset = 0;
    double score = 0.0;
  };

  // Normalized correlation score for every alignment t (preamble starting at t).
  std::vector<double> scores(const std::vector<double>& x) const {
    const std::size_t len = preamble_.size();
    if (x.size() < len) return {};
    const auto corr = conv_->apply(x);
    std::vector<double> prefix(x.size() + 1, 0.0);
    double max_win = 0;
    for (std::size_t i = 0; i < x.size(); ++i) prefix[i + 1] = prefix[i] + x[i] * x[i];
    for (std::size_t t = 0; t + len <= x.size(); ++t) max_win = std::max(max_win, prefix[t + len] - prefix[t]);
    const double floor = std::max(1e-30, 1e-6 * max_win);
    std::vector<double> out(x.size() - len + 1);
    for (std::size_t t = 0; t < out.size(); ++t) {
      const double e = std::max(prefix[t + len] - prefix[t], floor);
      out[t] = corr[t + len - 1] / std::sqrt(energy_ * e);
    }
    return out;
  }

  // Best alignment in `x` (already band-limited), regardless of threshold.
  Peak best(const std::vector<double>& x) const {
    Peak peak;
    const auto sc = scores(x);
    for (std::size_t t = 0; t < sc.size(); ++t) {
      if (sc[t] > peak.score) peak = {t, sc[t]};
    }
    return peak;
  }

  double threshold() const noexcept { return cfg_.preamble_threshold; }

 private:
  ModemConfig cfg_;
  std::vector<double> preamble_;
  std::unique_ptr<dsp::OverlapSave> conv_;
  double energy_ = 0;
};

// Sample offset of the preamble in `rx` (raw, unfiltered coordinates).
inline std::size_t detect_preamble(const SampleBuffer& rx, const ModemConfig& cfg) {
  Bandpass bp(cfg);
  const auto filtered = bp.apply(rx);
  PreambleDetector det(cfg);
  const auto peak = det.best(filtered.samples);
  if (peak.score < det.threshold()) throw NoPreamble("no preamble above threshold");
  return peak.offset >= bp.group_delay() ? peak.offset - bp.group_delay() : 0;
}

struct Demodulated {
  SoftPacket packet;
  std::size_t offset = 0;      // preamble start in raw input samples
  double preamble_score = 0.0;
  double snr_db = 0.0;         // estimated signal power over noise in the passband
};

// Stateful receiver holding the filter, detector and tables for one profile.
class Demodulator {
 public:
  explicit Demodulator(const ModemConfig& cfg)
      : cfg_(cfg), hop_(cfg), bandpass_(cfg), detector_(cfg), bins_(cfg.samples_per_bit), window_(window_table(cfg)) {
    for (double w : window_) {
      w2_sum_ += w * w;
    }
  }

  const ModemConfig& config() const noexcept { return cfg_; }
  const HopSequence& hop() const noexcept { return hop_; }

  Demodulated run(const SampleBuffer& rx) const {
    const auto filtered = bandpass_.apply(rx);
    const auto peak = detector_.best(filtered.samples);
    if (peak.score < detector_.threshold()) throw NoPreamble("no preamble above threshold");
    return at(filtered.samples, peak);
  }

  // Every packet in a long recording. The input is zero-padded so a packet
  // ending at the last sample survives the filter delay. After a detection
  // the scan resumes one packet length later.
  std::vector<Demodulated> scan(const SampleBuffer& rx) const {
    SampleBuffer padded = rx;
    padded.samples.resize(rx.size() + bandpass_.taps().size(), 0.0);
    const auto x = bandpass_.apply(padded).samples;
    const auto sc = detector_.scores(x);
    const std::size_t body = kCodedBits * static_cast<std::size_t>(cfg_.samples_per_bit);
    std::vector<Demodulated> out;
    std::size_t t = 0;
    while (t < sc.size()) {
      if (sc[t] < detector_.threshold()) {
        ++t;
        continue;
      }
      PreambleDetector::Peak peak{t, sc[t]};
      for (std::size_t u = t; u < std::min(sc.size(), t + cfg_.preamble_samples); ++u) {
        if (sc[u] > peak.score) peak = {u, sc[u]};
      }
      if (peak.offset + cfg_.preamble_samples + body > x.size()) break;
      out.push_back(at(x, peak));
      t = peak.offset + cfg_.packet_samples();
    }
    return out;
  }

 private:
  Demodulated at(const std::vector<double>& x, const PreambleDetector::Peak& peak) const {
    const std::size_t n = cfg_.samples_per_bit;
    const std::size_t start = peak.offset + cfg_.preamble_samples;
    if (start + kCodedBits * n > x.size()) throw NoPreamble("packet truncated after preamble");

    std::vector<double> soft(kCodedBits);
    std::vector<double> shaped(n);
    double tone_power = 0;  // matched-filter estimate of |A|^2, summed over blocks
    for (std::size_t j = 0; j < kCodedBits; ++j) {
      const std::span<const double> block(x.data() + start + j * n, n);
      const double p0 = std::norm(bins_.bin(block, hop_.bin(j, 0)));
      const double p1 = std::norm(bins_.bin(block, hop_.bin(j, 1)));
      const double tot = p0 + p1;
      soft[j] = tot > 0 ? (p1 - p0) / tot : 0.0;
      for (std::size_t k = 0; k < n; ++k) shaped[k] = block[k] * window_[k];
      const auto c = bins_.bin(shaped, hop_.bin(j, p1 > p0 ? 1 : 0));
      tone_power += 4.0 * std::norm(c) / (w2_sum_ * w2_sum_);
    }
    tone_power /= static_cast<double>(kCodedBits);

    const double total = dsp::mean_power(std::span<const double>(x.data() + start, kCodedBits * n));
    // Signal power is A^2/2 * mean(w^2); matched-filter noise bias is
    // 4 sigma^2 / sum(w^2) where sigma^2 is the white-noise variance.
    const double w2_mean = w2_sum_ / static_cast<double>(n);
    const double noise_gain = bandpass_.noise_gain();
    double ps = tone_power / 2.0 * w2_mean;
    for (int it = 0; it < 4; ++it) {
      const double sigma2 = std::max(total - ps, 0.0) / noise_gain;
      ps = std::max(tone_power - 4.0 * sigma2 / w2_sum_, 0.0) / 2.0 * w2_mean;
    }
    const double sigma2 = std::max(total - ps, 1e-300) / noise_gain;
    const double band = cfg_.passband_hi - cfg_.passband_lo;
    const double pn_band = sigma2 * 2.0 * band / cfg_.sample_rate;

    const auto dec = conv_decode(soft);
    Demodulated out;
    out.packet.bits = dec.bits;
    out.packet.reliability = dec.reliability;
    const std::size_t gd = bandpass_.group_delay();
    out.offset = peak.offset >= gd ? peak.offset - gd : 0;
    out.packet.rx_time = static_cast<double>(out.offset) / cfg_.sample_rate;
    out.preamble_score = peak.score;
    out.snr_db = dsp::to_db(std::max(ps, 1e-300) / pn_band);
    return out;
  }

  ModemConfig cfg_;
  HopSequence hop_;
  Bandpass bandpass_;
  PreambleDetector detector_;
  dsp::BinCorrelator bins_;
  std::vector<double> window_;
  double w2_sum_ = 0;
};

inline Demodulated demodulate(const SampleBuffer& rx, const ModemConfig& cfg) {
  return Demodulator(cfg).run(rx);
}

// Mean power of the data section of a packet (preamble excluded). It is the
// same for every packet because each block carries one tone under the same
// window; this is the signal power the SNR estimate in Demodulator refers to.
inline double packet_power(const ModemConfig& cfg) {
  Bits zeros(kPacketBits, 0);
  const auto buf = modulate_packet(zeros, cfg);
  return dsp::mean_power(std::span<const double>(buf.samples).subspan(cfg.preamble_samples));
}

}  // namespace acmesh::phy
