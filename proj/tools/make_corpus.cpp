// Synthesizes the non-covert audio corpus used for detector false-positive
// runs: speech-like vowels, tonal music, a chord with bright harmonics and
// broadband percussion. Output is deterministic.
//
//   make_corpus <out_dir>

#include <acmesh/dsp.hpp>
#include <acmesh/wav.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>

using acmesh::dsp::SampleBuffer;
using acmesh::dsp::kPi;

namespace {

constexpr double kFs = 48000.0;

SampleBuffer blank(double seconds) {
  return SampleBuffer{std::vector<double>(static_cast<std::size_t>(seconds * kFs), 0.0), kFs};
}

void normalize(SampleBuffer& b, double peak) {
  double m = 0;
  for (double v : b.samples) m = std::max(m, std::abs(v));
  if (m > 0) {
    for (double& v : b.samples) v *= peak / m;
  }
}

// Glottal pulse train through three formant resonators, with a pitch contour
// and vowel changes every 300 ms.
SampleBuffer speech(std::uint32_t seed, double f0_base) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double formants[][3] = {{730, 1090, 2440}, {270, 2290, 3010}, {300, 870, 2240}, {530, 1840, 2480}, {640, 1190, 2390}};
  auto out = blank(6.0);
  double phase = 0;
  std::size_t vowel = 0;
  double y[3][2] = {};
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double t = static_cast<double>(i) / kFs;
    if (i % static_cast<std::size_t>(0.3 * kFs) == 0) vowel = rng() % 5;
    const double f0 = f0_base * (1.0 + 0.15 * std::sin(2 * kPi * 0.7 * t));
    phase += f0 / kFs;
    double src = 0;
    if (phase >= 1.0) {
      phase -= 1.0;
      src = 1.0;
    }
    src += 0.02 * u(rng);  // aspiration
    // syllable envelope with short pauses
    const double env = std::max(0.0, std::sin(kPi * std::fmod(t, 0.3) / 0.3)) * (std::fmod(t, 1.5) < 1.3 ? 1.0 : 0.0);
    double s = 0;
    for (int k = 0; k < 3; ++k) {
      const double f = formants[vowel][k], bw = 80.0 + 40.0 * k;
      const double r = std::exp(-kPi * bw / kFs);
      const double a1 = 2 * r * std::cos(2 * kPi * f / kFs), a2 = -r * r;
      const double v = src + a1 * y[k][0] + a2 * y[k][1];
      y[k][1] = y[k][0];
      y[k][0] = v;
      s += v / (k + 1);
    }
    out.samples[i] = env * s;
  }
  normalize(out, 0.5);
  return out;
}

// Plucked notes of a melody with exponentially decaying partials.
SampleBuffer melody(const std::vector<double>& notes, double note_len, int partials) {
  auto out = blank(note_len * static_cast<double>(notes.size()));
  for (std::size_t n = 0; n < notes.size(); ++n) {
    const auto start = static_cast<std::size_t>(static_cast<double>(n) * note_len * kFs);
    for (std::size_t i = 0; i < static_cast<std::size_t>(note_len * kFs); ++i) {
      const double t = static_cast<double>(i) / kFs;
      double s = 0;
      for (int h = 1; h <= partials; ++h) {
        const double f = notes[n] * h;
        if (f > 16000) break;
        s += std::exp(-t * (2.0 + h)) * std::sin(2 * kPi * f * t) / h;
      }
      out.samples[start + i] += s;
    }
  }
  normalize(out, 0.6);
  return out;
}

// Sustained chord of sawtooth-like voices with slow vibrato.
SampleBuffer chord() {
  auto out = blank(5.0);
  const double roots[] = {220.0, 277.18, 329.63, 440.0};
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double t = static_cast<double>(i) / kFs;
    double s = 0;
    for (double r : roots) {
      const double f = r * (1.0 + 0.003 * std::sin(2 * kPi * 5.0 * t));
      for (int h = 1; h * f < 15000; ++h) s += std::sin(2 * kPi * f * h * t) / h;
    }
    out.samples[i] = s * std::min(1.0, t * 4) * std::min(1.0, (5.0 - t) * 4);
  }
  normalize(out, 0.5);
  return out;
}

// Hi-hat and cymbal hits: decaying white noise plus a kick drum.
SampleBuffer percussion(std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  auto out = blank(6.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double t = static_cast<double>(i) / kFs;
    const double beat = std::fmod(t, 0.5);
    const double hat = std::exp(-beat * 12.0) * g(rng);
    const double kick = std::fmod(t, 1.0) < 0.25 ? std::exp(-std::fmod(t, 1.0) * 18.0) * std::sin(2 * kPi * (60.0 + 80.0 * std::exp(-std::fmod(t, 1.0) * 30)) * t) : 0.0;
    out.samples[i] = 0.4 * hat + 0.8 * kick;
  }
  normalize(out, 0.7);
  return out;
}

// Room tone: quiet pink-ish noise, the typical "nothing playing" input.
SampleBuffer room_tone(std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  auto out = blank(4.0);
  double b0 = 0, b1 = 0, b2 = 0;
  for (double& v : out.samples) {
    const double w = g(rng);
    b0 = 0.99765 * b0 + w * 0.0990460;
    b1 = 0.96300 * b1 + w * 0.2965164;
    b2 = 0.57000 * b2 + w * 1.0526913;
    v = b0 + b1 + b2 + w * 0.1848;
  }
  normalize(out, 0.01);
  return out;
}

// Music over a steady 19 kHz pilot, as left by some broadcast chains. Tonal
// in the ultrasonic band but it never hops.
SampleBuffer pilot_tone() {
  auto out = melody({392.0, 440.0, 493.88, 523.25, 587.33, 659.25}, 0.7, 10);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.samples[i] += 0.2 * std::sin(2 * kPi * 19000.0 * static_cast<double>(i) / kFs);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: make_corpus <out_dir>\n");
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  std::filesystem::create_directories(dir);
  const std::vector<std::pair<std::string, SampleBuffer>> clips{
      {"speech_low.wav", speech(1, 110.0)},
      {"speech_high.wav", speech(2, 210.0)},
      {"melody.wav", melody({523.25, 587.33, 659.25, 698.46, 783.99, 880.0, 987.77, 1046.5}, 0.6, 12)},
      {"bass_line.wav", melody({82.41, 110.0, 98.0, 73.42, 82.41, 110.0}, 0.8, 30)},
      {"chord.wav", chord()},
      {"percussion.wav", percussion(3)},
      {"room_tone.wav", room_tone(4)},
      {"pilot_tone.wav", pilot_tone()},
  };
  for (const auto& [name, buf] : clips) {
    acmesh::wav::write_file((dir / name).string(), buf);
    std::printf("%s %.2f s\n", (dir / name).string().c_str(), buf.duration());
  }
  return 0;
}
