#pragma once

// Countermeasures against acoustic covert channels: a 4-pole lowpass guard
// filter, a detector for hopping ultrasonic modulation, and a heterodyne
// pitch-down that makes such signals audible.

#include <acmesh/dsp.hpp>
#include <acmesh/errors.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace acmesh::counter {

using dsp::SampleBuffer;

// 4th-order Butterworth lowpass as two cascaded biquads (bilinear transform).
class Lowpass4 {
 public:
  Lowpass4(double cutoff, double sample_rate) {
    if (!(cutoff > 0 && cutoff < sample_rate / 2)) {
      throw RangeError("lowpass cutoff must lie in (0, fs/2)");
    }
    // Butterworth pole-pair Q values for order 4
    sections_[0] = dsp::Biquad::lowpass(cutoff, sample_rate, 1.0 / (2.0 * std::cos(dsp::kPi / 8.0)));
    sections_[1] = dsp::Biquad::lowpass(cutoff, sample_rate, 1.0 / (2.0 * std::cos(3.0 * dsp::kPi / 8.0)));
  }

  double step(double x) { return sections_[1].step(sections_[0].step(x)); }

  void process(std::span<double> block) {
    for (double& v : block) v = step(v);
  }

  double gain(double f, double fs) const {
    return std::abs(sections_[0].response(f, fs) * sections_[1].response(f, fs));
  }

 private:
  dsp::Biquad sections_[2];
};

inline SampleBuffer lowpass4(const SampleBuffer& audio, double cutoff) {
  Lowpass4 lp(cutoff, audio.sample_rate);
  SampleBuffer out = audio;
  lp.process(out.samples);
  return out;
}

// Magnitude in dB of the digital Butterworth response, from the closed form
// with prewarped frequencies.
inline double butterworth4_attenuation_db(double f, double cutoff, double fs) {
  const double r = std::tan(dsp::kPi * f / fs) / std::tan(dsp::kPi * cutoff / fs);
  return 10.0 * std::log10(1.0 + std::pow(r, 8));
}

// ---------------------------------------------------------------------------

enum class Verdict { clean, suspicious, covert };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::clean: return "clean";
    case Verdict::suspicious: return "suspicious";
    case Verdict::covert: return "covert";
  }
  return "?";
}

struct DetectorParams {
  double window_seconds = 0.085;
  double band_lo = 17000.0;
  double band_hi = 24000.0;
  double ratio_threshold = 0.25;   // band energy / total energy
  int consecutive = 5;             // covert windows needed to trigger
  int sub_blocks = 4;              // per window, each ~one bit long
  double prominence = 16.0;        // tone peak over median band bin power
  double silence_power = 1e-10;    // mean-square below which a window is silent
};

struct WindowReport {
  double start = 0.0;
  double end = 0.0;
  double band_energy_ratio = 0.0;
  Verdict verdict = Verdict::clean;
  int tonal_blocks = 0;
  int hops = 0;
};

struct DetectionReport {
  std::vector<WindowReport> windows;
  bool triggered = false;

  std::size_t count(Verdict v) const {
    return static_cast<std::size_t>(std::count_if(windows.begin(), windows.end(),
                                                  [&](const WindowReport& w) { return w.verdict == v; }));
  }

  // One log line per non-clean window plus a summary line.
  std::string log_lines(const std::string& source) const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    for (const auto& w : windows) {
      if (w.verdict == Verdict::clean) continue;
      os << "audio-ids source=" << source << " start=" << w.start << " end=" << w.end
         << " ratio=" << w.band_energy_ratio << " verdict=" << to_string(w.verdict) << "\n";
    }
    os << "audio-ids source=" << source << " windows=" << windows.size()
       << " covert=" << count(Verdict::covert) << " suspicious=" << count(Verdict::suspicious)
       << " triggered=" << (triggered ? "true" : "false") << "\n";
    return os.str();
  }
};

namespace detail {

struct BlockPeak {
  bool tonal = false;
  std::size_t bin = 0;
};

// Hann-windowed spectrum of one sub-block; reports whether the strongest
// in-band bin towers over the median band bin.
inline BlockPeak block_peak(std::span<const double> x, double fs, const DetectorParams& p) {
  const std::size_t n = dsp::next_pow2(x.size());
  std::vector<double> shaped(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    shaped[i] = x[i] * (0.5 - 0.5 * std::cos(2.0 * dsp::kPi * static_cast<double>(i) / static_cast<double>(x.size())));
  }
  const auto ps = dsp::power_spectrum(shaped, n);
  const double bw = fs / static_cast<double>(n);
  const auto lo = static_cast<std::size_t>(std::ceil(p.band_lo / bw));
  const auto hi = std::min(ps.size() - 1, static_cast<std::size_t>(std::floor(p.band_hi / bw)));
  if (hi <= lo + 4) return {};
  std::vector<double> band(ps.begin() + static_cast<std::ptrdiff_t>(lo), ps.begin() + static_cast<std::ptrdiff_t>(hi + 1));
  const auto peak_it = std::max_element(band.begin(), band.end());
  const double peak = *peak_it;
  std::vector<double> sorted = band;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  const double median = sorted[sorted.size() / 2];
  BlockPeak bp;
  bp.bin = lo + static_cast<std::size_t>(peak_it - band.begin());
  bp.tonal = peak > 0 && peak > p.prominence * std::max(median, 1e-300);
  return bp;
}

}  // namespace detail

// Sliding-window inspection of an audio buffer. A window is suspicious when
// the [band_lo, band_hi] share of its energy exceeds the ratio threshold, and
// covert when it additionally shows discrete tones that change frequency from
// one bit-length sub-block to the next.
inline DetectionReport detect_covert(const SampleBuffer& audio, const DetectorParams& p = {}) {
  if (audio.sample_rate < 44100) throw RangeError("detector needs a sample rate of at least 44.1 kHz");
  const double fs = audio.sample_rate;
  const auto win = static_cast<std::size_t>(std::lround(p.window_seconds * fs));
  DetectionReport rep;
  int run = 0;
  for (std::size_t start = 0; start < audio.size(); start += win) {
    const std::size_t len = std::min(win, audio.size() - start);
    const std::span<const double> x(audio.samples.data() + start, len);
    WindowReport w;
    w.start = static_cast<double>(start) / fs;
    w.end = static_cast<double>(start + len) / fs;

    if (dsp::mean_power(x) > p.silence_power && len >= 64) {
      const auto ps = dsp::power_spectrum(x, dsp::next_pow2(len));
      const double bw = fs / static_cast<double>(2 * (ps.size() - 1));
      double total = 0, band = 0;
      for (std::size_t k = 1; k < ps.size(); ++k) {
        const double f = static_cast<double>(k) * bw;
        total += ps[k];
        if (f >= p.band_lo && f <= p.band_hi) band += ps[k];
      }
      w.band_energy_ratio = total > 0 ? std::clamp(band / total, 0.0, 1.0) : 0.0;
      if (w.band_energy_ratio > p.ratio_threshold) {
        w.verdict = Verdict::suspicious;
        const std::size_t sub = len / static_cast<std::size_t>(p.sub_blocks);
        if (sub >= 256) {
          std::vector<detail::BlockPeak> peaks;
          for (int b = 0; b < p.sub_blocks; ++b) {
            peaks.push_back(detail::block_peak(x.subspan(static_cast<std::size_t>(b) * sub, sub), fs, p));
          }
          for (std::size_t b = 0; b < peaks.size(); ++b) {
            if (peaks[b].tonal) ++w.tonal_blocks;
            if (b > 0 && peaks[b].tonal && peaks[b - 1].tonal) {
              const auto diff = peaks[b].bin > peaks[b - 1].bin ? peaks[b].bin - peaks[b - 1].bin
                                                                : peaks[b - 1].bin - peaks[b].bin;
              if (diff > 1) ++w.hops;
            }
          }
          // hop rate of ~47/s means every sub-block boundary should hop
          if (w.tonal_blocks >= p.sub_blocks - 1 && w.hops >= p.sub_blocks / 2) w.verdict = Verdict::covert;
        }
      }
    }
    run = w.verdict == Verdict::covert ? run + 1 : 0;
    if (run >= p.consecutive) rep.triggered = true;
    rep.windows.push_back(w);
  }
  return rep;
}

// ---------------------------------------------------------------------------

// Heterodyne down-shift: mix with a cosine at `shift` Hz, then remove the
// upper image with a windowed-sinc lowpass.
inline SampleBuffer pitch_down(const SampleBuffer& audio, double shift, double keep_below = 5000.0) {
  if (!(shift > 0)) throw RangeError("pitch shift must be positive");
  const double fs = audio.sample_rate;
  std::vector<double> mixed(audio.size());
  for (std::size_t i = 0; i < audio.size(); ++i) {
    const double phase = 2.0 * dsp::kPi * std::fmod(shift * static_cast<double>(i) / fs, 1.0);
    mixed[i] = 2.0 * audio.samples[i] * std::cos(phase);
  }
  constexpr std::size_t taps = 401;
  const auto win = dsp::blackman_harris(taps);
  std::vector<double> h(taps);
  const double fc = keep_below / fs;
  for (std::size_t i = 0; i < taps; ++i) {
    const double t = static_cast<double>(i) - (taps - 1) / 2.0;
    h[i] = (t == 0 ? 2.0 * fc : std::sin(2.0 * dsp::kPi * fc * t) / (dsp::kPi * t)) * win[i];
  }
  dsp::OverlapSave conv(h);
  auto y = conv.apply(mixed);
  // compensate the FIR delay so the output lines up with the input
  const std::size_t delay = (taps - 1) / 2;
  std::vector<double> aligned(y.size(), 0.0);
  for (std::size_t i = delay; i < y.size(); ++i) aligned[i - delay] = y[i];
  return SampleBuffer{std::move(aligned), fs};
}

}  // namespace acmesh::counter
