#pragma once

// Signal-processing building blocks shared by the modem, the channel model and
// the countermeasure tools.

#include <acmesh/errors.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <unordered_map>
#include <vector>

namespace acmesh::dsp {

using cplx = std::complex<double>;
inline constexpr double kPi = std::numbers::pi;

// Mono audio with a declared sample rate.
struct SampleBuffer {
  std::vector<double> samples;
  double sample_rate = 48000.0;

  std::size_t size() const noexcept { return samples.size(); }
  double duration() const noexcept { return static_cast<double>(samples.size()) / sample_rate; }
};

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Iterative radix-2 FFT with precomputed twiddles and bit-reversal table.
class Fft {
 public:
  explicit Fft(std::size_t n) : n_(n), rev_(n), tw_(n / 2) {
    if (n == 0 || (n & (n - 1)) != 0) throw RangeError("FFT size must be a power of two");
    unsigned bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (unsigned b = 0; b < bits; ++b) r |= ((i >> b) & 1) << (bits - 1 - b);
      rev_[i] = r;
    }
    for (std::size_t k = 0; k < n / 2; ++k) {
      tw_[k] = std::polar(1.0, -2.0 * kPi * static_cast<double>(k) / static_cast<double>(n));
    }
  }

  std::size_t size() const noexcept { return n_; }

  void forward(std::span<cplx> a) const { transform(a, false); }

  // Unnormalized inverse; caller divides by n.
  void inverse(std::span<cplx> a) const { transform(a, true); }

  // Shared plan per size. Plans are immutable once built.
  static const Fft& plan(std::size_t n) {
    static std::mutex mu;
    static std::unordered_map<std::size_t, std::unique_ptr<Fft>> cache;
    std::lock_guard lock(mu);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<Fft>(n);
    return *slot;
  }

 private:
  void transform(std::span<cplx> a, bool inv) const {
    for (std::size_t i = 0; i < n_; ++i) {
      if (i < rev_[i]) std::swap(a[i], a[rev_[i]]);
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t step = n_ / len;
      for (std::size_t i = 0; i < n_; i += len) {
        for (std::size_t k = 0; k < half; ++k) {
          cplx w = tw_[k * step];
          if (inv) w = std::conj(w);
          const cplx u = a[i + k];
          const cplx v = a[i + k + half] * w;
          a[i + k] = u + v;
          a[i + k + half] = u - v;
        }
      }
    }
  }

  std::size_t n_;
  std::vector<std::size_t> rev_;
  std::vector<cplx> tw_;
};

// Linear convolution of a long real signal with a fixed real kernel by
// overlap-save. Two real blocks ride in one complex FFT (real and imaginary
// parts), which halves the transform count.
class OverlapSave {
 public:
  OverlapSave(std::span<const double> kernel, std::size_t fft_size = 0)
      : taps_(kernel.size()) {
    if (kernel.empty()) throw RangeError("empty convolution kernel");
    n_ = fft_size ? fft_size : std::max<std::size_t>(4096, next_pow2(4 * taps_));
    if (n_ < 2 * taps_) throw RangeError("FFT block too small for kernel");
    step_ = n_ - taps_ + 1;
    spectrum_.assign(n_, cplx{});
    for (std::size_t i = 0; i < taps_; ++i) spectrum_[i] = kernel[i];
    Fft::plan(n_).forward(spectrum_);
  }

  std::size_t taps() const noexcept { return taps_; }

  // Full convolution truncated to the input length: y[n] = sum_k h[k] x[n-k].
  std::vector<double> apply(std::span<const double> x) const {
    const Fft& fft = Fft::plan(n_);
    std::vector<double> y(x.size(), 0.0);
    std::vector<cplx> buf(n_);
    auto at = [&](std::ptrdiff_t i) -> double {
      return (i >= 0 && static_cast<std::size_t>(i) < x.size()) ? x[static_cast<std::size_t>(i)] : 0.0;
    };
    const std::ptrdiff_t lead = static_cast<std::ptrdiff_t>(taps_) - 1;
    for (std::size_t start = 0; start < x.size(); start += 2 * step_) {
      const std::size_t second = start + step_;
      for (std::size_t i = 0; i < n_; ++i) {
        const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(i) - lead;
        buf[i] = cplx(at(static_cast<std::ptrdiff_t>(start) + idx),
                      at(static_cast<std::ptrdiff_t>(second) + idx));
      }
      fft.forward(buf);
      for (std::size_t i = 0; i < n_; ++i) buf[i] *= spectrum_[i];
      fft.inverse(buf);
      const double scale = 1.0 / static_cast<double>(n_);
      for (std::size_t i = 0; i < step_; ++i) {
        const cplx v = buf[i + taps_ - 1] * scale;
        if (start + i < y.size()) y[start + i] = v.real();
        if (second + i < y.size()) y[second + i] = v.imag();
      }
    }
    return y;
  }

 private:
  std::size_t taps_;
  std::size_t n_ = 0;
  std::size_t step_ = 0;
  std::vector<cplx> spectrum_;
};

// 4-term Blackman-Harris window of length n (symmetric).
inline std::vector<double> blackman_harris(std::size_t n) {
  constexpr double a0 = 0.35875, a1 = 0.48829, a2 = 0.14128, a3 = 0.01168;
  std::vector<double> w(n);
  const double m = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = 2.0 * kPi * static_cast<double>(i) / m;
    w[i] = a0 - a1 * std::cos(x) + a2 * std::cos(2 * x) - a3 * std::cos(3 * x);
  }
  return w;
}

// Windowed-sinc bandpass with cutoffs lo..hi (Hz). Odd length, linear phase,
// group delay (taps-1)/2 samples.
inline std::vector<double> design_bandpass(double lo, double hi, double fs, std::size_t taps) {
  if (taps % 2 == 0) throw RangeError("bandpass length must be odd");
  if (!(0 < lo && lo < hi && hi <= fs / 2)) throw RangeError("bad bandpass edges");
  const auto win = blackman_harris(taps);
  std::vector<double> h(taps);
  const double mid = static_cast<double>(taps - 1) / 2.0;
  const double f1 = lo / fs, f2 = hi / fs;
  for (std::size_t i = 0; i < taps; ++i) {
    const double t = static_cast<double>(i) - mid;
    double ideal;
    if (t == 0.0) {
      ideal = 2.0 * (f2 - f1);
    } else {
      ideal = (std::sin(2 * kPi * f2 * t) - std::sin(2 * kPi * f1 * t)) / (kPi * t);
    }
    h[i] = ideal * win[i];
  }
  return h;
}

// Magnitude response of an FIR at frequency f.
inline double fir_gain(std::span<const double> h, double f, double fs) {
  cplx acc{};
  for (std::size_t i = 0; i < h.size(); ++i) {
    acc += h[i] * std::polar(1.0, -2.0 * kPi * f * static_cast<double>(i) / fs);
  }
  return std::abs(acc);
}

// Direct single-bin DFT of `block` at integer bin k of an n-point transform.
// Uses a shared cosine table so each call is n multiply-adds per component.
class BinCorrelator {
 public:
  explicit BinCorrelator(std::size_t n) : n_(n), cos_(n), sin_(n) {
    for (std::size_t i = 0; i < n; ++i) {
      const double a = 2.0 * kPi * static_cast<double>(i) / static_cast<double>(n);
      cos_[i] = std::cos(a);
      sin_[i] = std::sin(a);
    }
  }

  cplx bin(std::span<const double> block, unsigned k) const {
    double re = 0, im = 0;
    std::size_t idx = 0;
    const std::size_t mask = n_ - 1;
    for (std::size_t i = 0; i < block.size(); ++i) {
      re += block[i] * cos_[idx];
      im -= block[i] * sin_[idx];
      idx = (idx + k) & mask;
    }
    return {re, im};
  }

 private:
  std::size_t n_;
  std::vector<double> cos_;
  std::vector<double> sin_;
};

// Direct-form-I biquad section.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;

  double step(double x) {
    const double y = b0 * x + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x;
    y2 = y1;
    y1 = y;
    return y;
  }

  cplx response(double f, double fs) const {
    const cplx z1 = std::polar(1.0, -2.0 * kPi * f / fs);
    const cplx z2 = z1 * z1;
    return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
  }

  static Biquad lowpass(double fc, double fs, double q) {
    const double w0 = 2.0 * kPi * fc / fs;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double c = std::cos(w0);
    const double a0 = 1.0 + alpha;
    Biquad s;
    s.b0 = (1.0 - c) / 2.0 / a0;
    s.b1 = (1.0 - c) / a0;
    s.b2 = s.b0;
    s.a1 = -2.0 * c / a0;
    s.a2 = (1.0 - alpha) / a0;
    return s;
  }
};

inline double mean_power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

inline double to_db(double power_ratio) { return 10.0 * std::log10(power_ratio); }
inline double from_db(double db) { return std::pow(10.0, db / 10.0); }

// One-sided power spectrum of x (zero-padded to a power of two), returned per
// bin with bin width fs/n.
inline std::vector<double> power_spectrum(std::span<const double> x, std::size_t n = 0) {
  if (n == 0) n = next_pow2(x.size());
  std::vector<cplx> buf(n);
  for (std::size_t i = 0; i < std::min(n, x.size()); ++i) buf[i] = x[i];
  Fft::plan(n).forward(buf);
  std::vector<double> p(n / 2 + 1);
  for (std::size_t i = 0; i <= n / 2; ++i) p[i] = std::norm(buf[i]);
  return p;
}

}  // namespace acmesh::dsp
