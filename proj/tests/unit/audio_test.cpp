// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <cstring>
#include <numbers>

#include "sqe/audio.hpp"
#include "sqe/error.hpp"
#include "test_support.hpp"

namespace sqe {
namespace {

// Minimal RIFF writer used as the fixture source.
struct WavBuilder {
  std::uint16_t format_tag = 1;
  std::uint16_t channels = 1;
  std::uint32_t rate = 16000;
  std::uint16_t bits = 16;
  std::vector<std::uint8_t> payload;

  template <class T>
  static void put(std::vector<std::uint8_t>& out, T v) {
    std::uint8_t b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.insert(out.end(), b, b + sizeof(T));
  }
  static void tag(std::vector<std::uint8_t>& out, const char* t) { out.insert(out.end(), t, t + 4); }

  std::vector<std::uint8_t> bytes() const {
    std::vector<std::uint8_t> out;
    tag(out, "RIFF");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(4 + 8 + 16 + 8 + payload.size()));
    tag(out, "WAVE");
    tag(out, "fmt ");
    put<std::uint32_t>(out, 16);
    put<std::uint16_t>(out, format_tag);
    put<std::uint16_t>(out, channels);
    put<std::uint32_t>(out, rate);
    const std::uint16_t align = static_cast<std::uint16_t>(channels * bits / 8);
    put<std::uint32_t>(out, rate * align);
    put<std::uint16_t>(out, align);
    put<std::uint16_t>(out, bits);
    tag(out, "data");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(payload.size()));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
  }
};

WavBuilder pcm16(const std::vector<std::int16_t>& samples, std::uint16_t channels = 1) {
  WavBuilder w;
  w.channels = channels;
  for (auto s : samples) WavBuilder::put(w.payload, s);
  return w;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an sqe::Error";
  return ErrorKind::kContract;
}

AudioClip tone(double hz, int rate, double seconds, double amp = 0.5) {
  AudioClip c;
  c.sample_rate = rate;
  const auto n = static_cast<std::size_t>(std::llround(seconds * rate));
  c.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    c.samples[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * i / rate));
  }
  return c;
}

// Naive DFT magnitude peak over a centered window of n samples; returns the bin index.
std::size_t dft_peak_bin(const AudioClip& c, std::size_t n) {
  const std::size_t start = (c.samples.size() - n) / 2;
  std::size_t best = 0;
  double best_mag = -1.0;
  for (std::size_t k = 1; k < n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k * i) / static_cast<double>(n);
      acc += static_cast<double>(c.samples[start + i]) * std::polar(1.0, angle);
    }
    if (std::abs(acc) > best_mag) {
      best_mag = std::abs(acc);
      best = k;
    }
  }
  return best;
}

TEST(DecodeWav, OneSecondOfSilence) {
  const AudioClip clip = decode_wav(pcm16(std::vector<std::int16_t>(16000, 0)).bytes());
  EXPECT_EQ(clip.sample_rate, 16000);
  ASSERT_EQ(clip.samples.size(), 16000u);
  for (float s : clip.samples) EXPECT_EQ(s, 0.0f);
}

TEST(DecodeWav, Pcm16ScaleEndpoints) {
  const AudioClip clip = decode_wav(pcm16({-32768, 32767, 0, 16384}).bytes());
  EXPECT_EQ(clip.samples[0], -1.0f);
  EXPECT_EQ(clip.samples[1], static_cast<float>(32767.0 / 32768.0));
  EXPECT_EQ(clip.samples[2], 0.0f);
  EXPECT_EQ(clip.samples[3], 0.5f);
}

TEST(DecodeWav, StereoOppositeChannelsAverageToZero) {
  std::vector<std::int16_t> frames;
  for (int i = 0; i < 100; ++i) {
    frames.push_back(16384);
    frames.push_back(-16384);
  }
  const AudioClip clip = decode_wav(pcm16(frames, 2).bytes());
  ASSERT_EQ(clip.samples.size(), 100u);
  for (float s : clip.samples) EXPECT_EQ(s, 0.0f);
}

TEST(DecodeWav, StereoFloat32AveragesChannels) {
  WavBuilder w;
  w.format_tag = 3;
  w.bits = 32;
  w.channels = 2;
  for (int i = 0; i < 10; ++i) {
    WavBuilder::put(w.payload, 0.5f);
    WavBuilder::put(w.payload, -0.5f);
  }
  for (float s : decode_wav(w.bytes()).samples) EXPECT_EQ(s, 0.0f);
}

TEST(DecodeWav, MalformedHeaderIsFormatError) {
  auto bytes = pcm16({1, 2, 3}).bytes();
  bytes[0] = 'X';
  EXPECT_EQ(kind_of([&] { decode_wav(bytes); }), ErrorKind::kFormat);
  EXPECT_EQ(kind_of([&] { decode_wav(std::vector<std::uint8_t>{'R', 'I', 'F'}); }), ErrorKind::kFormat);
}

TEST(DecodeWav, UnsupportedCodecs) {
  WavBuilder adpcm = pcm16({1, 2, 3, 4});
  adpcm.format_tag = 2;
  EXPECT_EQ(kind_of([&] { decode_wav(adpcm.bytes()); }), ErrorKind::kUnsupportedEncoding);
  WavBuilder pcm24;
  pcm24.bits = 24;
  pcm24.payload.assign(9, 0);
  EXPECT_EQ(kind_of([&] { decode_wav(pcm24.bytes()); }), ErrorKind::kUnsupportedEncoding);
}

TEST(DecodeWav, NonFiniteFloatIsDataError) {
  WavBuilder w;
  w.format_tag = 3;
  w.bits = 32;
  WavBuilder::put(w.payload, 0.1f);
  WavBuilder::put(w.payload, std::numeric_limits<float>::quiet_NaN());
  EXPECT_EQ(kind_of([&] { decode_wav(w.bytes()); }), ErrorKind::kData);
}

TEST(DecodeWav, Float32RoundtripIsBitExact) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    AudioClip clip;
    clip.sample_rate = trial % 2 ? 48000 : 16000;
    for (double v : testing::random_vector(rng, testing::uniform_index(rng, 1, 3000))) {
      clip.samples.push_back(static_cast<float>(v));
    }
    const AudioClip once = decode_wav(encode_wav(clip, WavEncoding::kFloat32));
    const AudioClip twice = decode_wav(encode_wav(once, WavEncoding::kFloat32));
    ASSERT_EQ(once.samples.size(), clip.samples.size());
    EXPECT_EQ(0, std::memcmp(once.samples.data(), clip.samples.data(), clip.samples.size() * 4));
    EXPECT_EQ(0, std::memcmp(twice.samples.data(), once.samples.data(), once.samples.size() * 4));
    EXPECT_EQ(twice.sample_rate, clip.sample_rate);
  }
}

TEST(DecodeWav, FileRoundtrip) {
  testing::TempDir dir("wav");
  const AudioClip clip = tone(300.0, 16000, 0.1);
  const auto path = (dir / "t.wav").string();
  write_wav(clip, path, WavEncoding::kFloat32);
  EXPECT_EQ(read_wav(path).samples, clip.samples);
  EXPECT_EQ(kind_of([&] { read_wav((dir / "missing.wav").string()); }), ErrorKind::kIo);
}

TEST(Resample, SameRateIsIdentity) {
  const AudioClip clip = tone(440.0, 16000, 0.25);
  const AudioClip out = resample(clip, 16000);
  EXPECT_EQ(out.samples, clip.samples);
  EXPECT_EQ(out.sample_rate, 16000);
}

TEST(Resample, OneSecondAt48kGives16000Samples) {
  EXPECT_EQ(resample(tone(440.0, 48000, 1.0), 16000).samples.size(), 16000u);
}

TEST(Resample, LengthFormula) {
  std::mt19937_64 rng(3);
  const int rates[] = {8000, 11025, 16000, 22050, 44100, 48000};
  for (int trial = 0; trial < 30; ++trial) {
    const int src = rates[testing::uniform_index(rng, 0, 5)];
    const int dst = rates[testing::uniform_index(rng, 0, 5)];
    AudioClip clip;
    clip.sample_rate = src;
    clip.samples.assign(testing::uniform_index(rng, 1, 5000), 0.1f);
    const double expected = std::round(static_cast<double>(clip.samples.size()) * dst / src);
    EXPECT_EQ(resample(clip, dst).samples.size(), static_cast<std::size_t>(expected)) << src << "->" << dst;
  }
}

TEST(Resample, ToneAt48kKeepsDominantFrequency) {
  const AudioClip out = resample(tone(440.0, 48000, 1.0), 16000);
  // 4000-sample window at 16 kHz: 4 Hz bins, 440 Hz is bin 110.
  const std::size_t bin = dft_peak_bin(out, 4000);
  EXPECT_LE(std::abs(static_cast<long>(bin) - 110L), 1L);
}

TEST(Resample, PeakWithinOnePercentOfInput) {
  const AudioClip in = tone(1000.0, 48000, 0.5, 0.6);
  const AudioClip out = resample(in, 16000);
  float peak = 0.0f;
  for (std::size_t i = 200; i + 200 < out.samples.size(); ++i) peak = std::max(peak, std::abs(out.samples[i]));
  EXPECT_NEAR(peak, 0.6, 0.006);
}

TEST(Resample, RoundTripPreservesToneFrequency) {
  std::mt19937_64 rng(5);
  const std::pair<int, int> pairs[] = {{16000, 48000}, {48000, 16000}, {16000, 8000}, {44100, 16000}};
  for (auto [r1, r2] : pairs) {
    const double limit = 0.9 * std::min(r1, r2) / 2.0;
    const double hz = std::uniform_real_distribution<double>(100.0, limit)(rng);
    const AudioClip in = tone(hz, r1, 0.5);
    const AudioClip back = resample(resample(in, r2), r1);
    const std::size_t n = 2000;
    EXPECT_LE(std::abs(static_cast<long>(dft_peak_bin(back, n)) - static_cast<long>(dft_peak_bin(in, n))), 1L)
        << r1 << "<->" << r2 << " at " << hz << " Hz";
  }
}

TEST(Resample, RejectsNonPositiveRate) {
  EXPECT_EQ(kind_of([] { resample(tone(100.0, 16000, 0.1), 0); }), ErrorKind::kArgument);
}

TEST(ProfilingClip, DeterministicForSeed) {
  const AudioClip a = synthesize_profiling_clip(7, 6.0, 16000);
  const AudioClip b = synthesize_profiling_clip(7, 6.0, 16000);
  EXPECT_EQ(0, std::memcmp(a.samples.data(), b.samples.data(), a.samples.size() * sizeof(float)));
  EXPECT_NE(synthesize_profiling_clip(8, 6.0, 16000).samples, a.samples);
}

TEST(ProfilingClip, DurationBounds) {
  EXPECT_EQ(kind_of([] { synthesize_profiling_clip(1, 5.0, 16000); }), ErrorKind::kArgument);
  EXPECT_EQ(kind_of([] { synthesize_profiling_clip(1, 6.6, 16000); }), ErrorKind::kArgument);
  EXPECT_EQ(synthesize_profiling_clip(1, 5.5, 16000).samples.size(), 88000u);
  EXPECT_EQ(synthesize_profiling_clip(1, 6.5, 16000).samples.size(), 104000u);
}

TEST(ProfilingClip, NoiseWithinAmplitudeBound) {
  const AudioClip clip = synthesize_profiling_clip(3, 6.0, 16000);
  float lo = 1.0f, hi = -1.0f;
  for (float s : clip.samples) {
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  EXPECT_GE(lo, -0.9f);
  EXPECT_LE(hi, 0.9f);
  EXPECT_LT(lo, -0.85f);
  EXPECT_GT(hi, 0.85f);
}

}  // namespace
}  // namespace sqe
