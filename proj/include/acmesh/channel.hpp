#pragma once

// Acoustic air channel: link budget, propagation of sample buffers, and the
// receive chain shared by the simulator and the range tools.

#include <acmesh/counter.hpp>
#include <acmesh/dsp.hpp>
#include <acmesh/ec.hpp>
#include <acmesh/errors.hpp>
#include <acmesh/guwmanet.hpp>
#include <acmesh/packet.hpp>
#include <acmesh/phy.hpp>

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace acmesh::channel {

using dsp::SampleBuffer;

// Seeded normal deviates (Marsaglia polar method on raw 64-bit draws), so
// sample streams do not depend on the standard library's distributions.
class Gaussian {
 public:
  explicit Gaussian(std::uint64_t seed) : rng_(seed) {}

  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Output of `acmesh calibrate` for the default model below.
inline constexpr double kCalibratedRefLossDb = 0.1986205607;
inline constexpr double kCalibratedAbsorption = 0.005416285588;

struct ChannelModel {
  double ref_loss_db = kCalibratedRefLossDb;
  double spreading_exp = 2.0;
  double absorption_coeff = kCalibratedAbsorption;  // dB/m per kHz^2
  double noise_floor_db = -70.0;  // noise power inside the receiving passband, dB re full scale
  double decode_snr_db = -5.0;    // squelch: minimum estimated post-filter SNR
  double speed_of_sound = 343.0;
  double blocking_penalty_db = 30.0;
  double sense_margin_db = 6.0;     // carrier sense fires this far below decode_snr_db
  double audible_margin_db = 10.0;  // links this far below decode_snr_db are inaudible
  // Loudspeaker/microphone response: flat up to the knee, then a linear
  // roll-off in dB per kHz.
  double hw_knee_hz = 19000.0;
  double hw_rolloff_db_per_khz = 12.5;

  double absorption_db_per_m(double f) const {
    const double khz = f / 1000.0;
    return absorption_coeff * khz * khz;
  }

  double hardware_response_db(double f) const {
    return f <= hw_knee_hz ? 0.0 : -hw_rolloff_db_per_khz * (f - hw_knee_hz) / 1000.0;
  }
};

inline double attenuation_db(double d, double f, const ChannelModel& m) {
  if (!(d > 0)) throw RangeError("distance must be positive");
  return m.ref_loss_db + 10.0 * m.spreading_exp * std::log10(d) + m.absorption_db_per_m(f) * d;
}

struct Link {
  double distance = 1.0;
  bool blocked = false;
  double extra_loss_db = 0.0;  // additional penalty, e.g. from a timed blocker
};

// Net gain (dB) applied to the transmitted samples on a link.
inline double link_gain_db(const Link& link, double f, const ChannelModel& m) {
  return m.hardware_response_db(f) - attenuation_db(link.distance, f, m) -
         (link.blocked ? m.blocking_penalty_db : 0.0) - link.extra_loss_db;
}

// Expected in-band SNR (dB) of an unfiltered packet on a link.
inline double link_snr_db(const Link& link, const phy::ModemConfig& cfg, const ChannelModel& m) {
  static thread_local std::optional<std::pair<std::string, double>> cache;
  if (!cache || cache->first != cfg.name) cache = {cfg.name, dsp::to_db(phy::packet_power(cfg))};
  return cache->second + link_gain_db(link, cfg.center_freq, m) - m.noise_floor_db;
}

inline std::size_t propagation_delay_samples(double d, double fs, const ChannelModel& m) {
  return static_cast<std::size_t>(std::lround(d / m.speed_of_sound * fs));
}

// White-noise variance giving noise_floor_db inside the profile's passband.
inline double noise_variance(const phy::ModemConfig& cfg, const ChannelModel& m) {
  const double band = cfg.passband_hi - cfg.passband_lo;
  return dsp::from_db(m.noise_floor_db) * cfg.sample_rate / (2.0 * band);
}

// Delay by d/c, scale by the narrowband link gain at the center frequency,
// add white Gaussian noise at the model's noise floor.
inline SampleBuffer propagate(const SampleBuffer& tx, const Link& link, const ChannelModel& m,
                              const phy::ModemConfig& cfg, Gaussian& noise, bool add_noise = true) {
  const std::size_t delay = propagation_delay_samples(link.distance, tx.sample_rate, m);
  const double amp = std::pow(10.0, link_gain_db(link, cfg.center_freq, m) / 20.0);
  SampleBuffer rx;
  rx.sample_rate = tx.sample_rate;
  rx.samples.assign(delay + tx.size(), 0.0);
  for (std::size_t i = 0; i < tx.size(); ++i) rx.samples[delay + i] = amp * tx.samples[i];
  if (add_noise) {
    const double sigma = std::sqrt(noise_variance(cfg, m));
    for (double& v : rx.samples) v += sigma * noise();
  }
  return rx;
}

// ---------------------------------------------------------------------------
// Receive chain: optional guard filter, demodulation, squelch, EC / CRC.

enum class RxStatus { ok, no_preamble, squelch, crc_fail };

inline const char* to_string(RxStatus s) {
  switch (s) {
    case RxStatus::ok: return "ok";
    case RxStatus::no_preamble: return "no_preamble";
    case RxStatus::squelch: return "squelch";
    case RxStatus::crc_fail: return "crc_fail";
  }
  return "?";
}

struct RxResult {
  RxStatus status = RxStatus::no_preamble;
  std::optional<guwmanet::NetPacket> packet;
  std::optional<SoftPacket> soft;
  double snr_db = -1e9;
  std::size_t offset = 0;
  bool corrected = false;
};

class Receiver {
 public:
  Receiver(const phy::ModemConfig& cfg, const ChannelModel& m, bool ec_enabled, std::optional<double> guard_hz = {})
      : demod_(cfg), model_(m), ec_enabled_(ec_enabled), guard_hz_(guard_hz) {}

  RxResult receive(SampleBuffer rx) const {
    if (guard_hz_) rx = counter::lowpass4(rx, *guard_hz_);
    RxResult r;
    phy::Demodulated d;
    try {
      d = demod_.run(rx);
    } catch (const NoPreamble&) {
      r.status = RxStatus::no_preamble;
      return r;
    }
    r.snr_db = d.snr_db;
    r.offset = d.offset;
    if (d.snr_db < model_.decode_snr_db) {
      r.status = RxStatus::squelch;
      return r;
    }
    r.soft = d.packet;
    if (ec_enabled_) {
      auto c = ec::correct(d.packet);
      if (c.ok()) {
        r.status = RxStatus::ok;
        r.packet = c.packet;
        r.corrected = c.status == ec::Status::corrected;
        return r;
      }
    } else if (guwmanet::crc_ok(d.packet.bits)) {
      r.status = RxStatus::ok;
      r.packet = guwmanet::decode_net(d.packet.bits);
      return r;
    }
    r.status = RxStatus::crc_fail;
    return r;
  }

  const phy::ModemConfig& config() const noexcept { return demod_.config(); }

 private:
  phy::Demodulator demod_;
  ChannelModel model_;
  bool ec_enabled_;
  std::optional<double> guard_hz_;
};

// Pads a transmission with silence so the receiver window starts before the
// packet and extends past it.
inline SampleBuffer pad(const SampleBuffer& tx, std::size_t lead, std::size_t tail) {
  SampleBuffer out;
  out.sample_rate = tx.sample_rate;
  out.samples.assign(lead + tx.size() + tail, 0.0);
  std::copy(tx.samples.begin(), tx.samples.end(), out.samples.begin() + static_cast<std::ptrdiff_t>(lead));
  return out;
}

// One isolated packet over one link. The guard, if any, filters both the
// transmitter output and the receiver input.
struct TrialSetup {
  phy::ModemConfig cfg;
  ChannelModel model;
  double distance = 1.0;
  bool blocked = false;
  bool ec_enabled = true;
  std::optional<double> guard_hz;
};

inline RxResult link_trial(const TrialSetup& s, const Receiver& rx, const Bits& packet, Gaussian& g) {
  auto tx = phy::modulate_packet(packet, s.cfg);
  if (s.guard_hz) tx = counter::lowpass4(tx, *s.guard_hz);
  const auto lead = static_cast<std::size_t>(g.uniform() * 4096.0);
  const auto padded = pad(tx, lead, 1024);
  return rx.receive(propagate(padded, Link{s.distance, s.blocked, 0.0}, s.model, s.cfg, g));
}

struct SweepPoint {
  double distance = 0.0;
  int trials = 0;
  int successes = 0;
  double mean_snr_db = 0.0;  // expected link SNR from the budget

  double rate() const { return trials ? static_cast<double>(successes) / trials : 0.0; }
};

// Success rate of random packets over a link; success means the decoded
// packet equals the transmitted one.
inline SweepPoint success_rate(const TrialSetup& s, int trials, std::uint64_t seed) {
  Receiver rx(s.cfg, s.model, s.ec_enabled, s.guard_hz);
  Gaussian g(seed);
  SweepPoint pt;
  pt.distance = s.distance;
  pt.trials = trials;
  pt.mean_snr_db = link_snr_db(Link{s.distance, s.blocked, 0.0}, s.cfg, s.model);
  for (int i = 0; i < trials; ++i) {
    guwal::Header h{guwal::FrameType::data, false, true, static_cast<std::uint8_t>(g.engine()() % 64),
                    static_cast<std::uint8_t>(g.engine()() % 64)};
    std::string text;
    for (int k = 0; k < 11; ++k) text.push_back(static_cast<char>('a' + g.engine()() % 26));
    guwmanet::NetPacket p{{static_cast<std::uint8_t>(g.engine()() % 32), static_cast<std::uint8_t>(g.engine()() % 32)},
                          guwal::make_frame(h, guwal::kPayloadText, text)};
    const auto bits = guwmanet::encode_net(p);
    const auto r = link_trial(s, rx, bits, g);
    if (r.status == RxStatus::ok && *r.packet == p) ++pt.successes;
  }
  return pt;
}

// ---------------------------------------------------------------------------
// Calibration: with the squelch level known, two range observations fix
// ref_loss_db and the absorption coefficient. Each gives
//   P_tx + H(f) - ref - 10 n log10(d) - c f^2 d - N = decode_snr
// which is linear in (ref, c).

struct RangePoint {
  phy::ModemConfig cfg;
  double distance = 0.0;
};

inline ChannelModel calibrate(ChannelModel base, const RangePoint& a, const RangePoint& b) {
  auto rhs = [&](const RangePoint& p) {
    return dsp::to_db(phy::packet_power(p.cfg)) + base.hardware_response_db(p.cfg.center_freq) -
           10.0 * base.spreading_exp * std::log10(p.distance) - base.noise_floor_db - base.decode_snr_db;
  };
  auto coef = [](const RangePoint& p) {
    const double khz = p.cfg.center_freq / 1000.0;
    return khz * khz * p.distance;
  };
  // ref + coef * c = rhs for both points
  const double ra = rhs(a), rb = rhs(b), ca = coef(a), cb = coef(b);
  if (std::abs(ca - cb) < 1e-12) throw RangeError("calibration points are degenerate");
  base.absorption_coeff = (ra - rb) / (ca - cb);
  base.ref_loss_db = ra - ca * base.absorption_coeff;
  return base;
}

inline RangePoint default_range_21k() { return {phy::ModemConfig::ultrasonic_21k(), 8.25}; }
inline RangePoint default_range_18k6() { return {phy::ModemConfig::near_ultrasonic_18k6(), 19.8}; }

// Monte-Carlo success rate of the bare modem (no squelch) at a given in-band
// SNR. Used to pick decode_snr_db.
inline double loopback_success(const phy::ModemConfig& cfg, double snr_db, int trials, std::uint64_t seed,
                               bool ec_enabled = true) {
  const phy::Demodulator demod(cfg);
  Gaussian g(seed);
  const double ps = phy::packet_power(cfg);
  const double band = cfg.passband_hi - cfg.passband_lo;
  const double sigma = std::sqrt(ps / dsp::from_db(snr_db) * cfg.sample_rate / (2.0 * band));
  int ok = 0;
  for (int i = 0; i < trials; ++i) {
    auto rnd = [&] { return static_cast<std::uint8_t>(g.engine()() & 0xFF); };
    guwal::Payload payload;
    for (auto& b : payload) b = rnd();
    const auto header = guwal::unpack_header(static_cast<std::uint16_t>(rnd() << 8 | rnd()));
    const auto ptype = rnd();
    guwmanet::NetPacket p{{static_cast<std::uint8_t>(rnd() & 31), static_cast<std::uint8_t>(rnd() & 31)},
                          guwal::make_frame(header, ptype, std::span<const std::uint8_t>(payload))};
    const auto tx = pad(phy::modulate_packet(guwmanet::encode_net(p), cfg), static_cast<std::size_t>(g.uniform() * 4096), 1024);
    SampleBuffer rx = tx;
    for (double& v : rx.samples) v += sigma * g();
    try {
      const auto d = demod.run(rx);
      if (ec_enabled) {
        const auto r = ec::correct(d.packet);
        if (r.ok() && *r.packet == p) ++ok;
      } else if (guwmanet::crc_ok(d.packet.bits) && guwmanet::decode_net(d.packet.bits) == p) {
        ++ok;
      }
    } catch (const NoPreamble&) {
    }
  }
  return static_cast<double>(ok) / trials;
}

}  // namespace acmesh::channel
