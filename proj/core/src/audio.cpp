// SPDX-License-Identifier: Apache-2.0
#include "sqe/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <optional>
#include <random>
#include <string>

#include "sqe/error.hpp"

namespace sqe {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) |
         (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

bool tag_is(std::span<const std::uint8_t> b, std::size_t off, const char* tag) {
  return std::memcmp(b.data() + off, tag, 4) == 0;
}

struct FmtChunk {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t block_align = 0;
  std::uint16_t bits = 0;
};

double kaiser(double x, double half_width, double beta) {
  const double r = x / half_width;
  if (std::abs(r) > 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - r * r)) / std::cyl_bessel_i(0.0, beta);
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = M_PI * x;
  return std::sin(px) / px;
}

constexpr double kKaiserBeta = 8.6;
constexpr double kTapsAtNarrowRate = 64.0;

}  // namespace

AudioClip decode_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || !tag_is(bytes, 0, "RIFF") || !tag_is(bytes, 8, "WAVE")) {
    throw Error(ErrorKind::kFormat, "not a RIFF/WAVE container");
  }
  std::optional<FmtChunk> fmt;
  std::span<const std::uint8_t> data;
  bool have_data = false;

  std::size_t off = 12;
  while (off + 8 <= bytes.size()) {
    const std::uint32_t size = read_u32(bytes, off + 4);
    const std::size_t body = off + 8;
    if (size > bytes.size() - body) {
      throw Error(ErrorKind::kFormat, "chunk at offset " + std::to_string(off) +
                                          " declares " + std::to_string(size) +
                                          " bytes beyond end of file");
    }
    if (tag_is(bytes, off, "fmt ")) {
      if (size < 16) throw Error(ErrorKind::kFormat, "fmt chunk shorter than 16 bytes");
      FmtChunk f;
      f.format = read_u16(bytes, body);
      f.channels = read_u16(bytes, body + 2);
      f.sample_rate = read_u32(bytes, body + 4);
      f.block_align = read_u16(bytes, body + 12);
      f.bits = read_u16(bytes, body + 14);
      if (f.format == kFormatExtensible) {
        if (size < 40) throw Error(ErrorKind::kFormat, "WAVE_FORMAT_EXTENSIBLE fmt chunk too short");
        // First two bytes of the subformat GUID carry the actual format tag.
        f.format = read_u16(bytes, body + 24);
      }
      fmt = f;
    } else if (tag_is(bytes, off, "data")) {
      data = bytes.subspan(body, size);
      have_data = true;
    }
    off = body + size + (size & 1u);
  }

  if (!fmt) throw Error(ErrorKind::kFormat, "missing fmt chunk");
  if (!have_data) throw Error(ErrorKind::kFormat, "missing data chunk");
  if (fmt->channels == 0) throw Error(ErrorKind::kFormat, "zero channels");
  if (fmt->sample_rate == 0) throw Error(ErrorKind::kFormat, "zero sample rate");

  const bool pcm16 = fmt->format == kFormatPcm && fmt->bits == 16;
  const bool f32 = fmt->format == kFormatFloat && fmt->bits == 32;
  if (!pcm16 && !f32) {
    throw Error(ErrorKind::kUnsupportedEncoding,
                "unsupported WAV encoding: format tag " + std::to_string(fmt->format) + ", " +
                    std::to_string(fmt->bits) + " bits");
  }
  const std::size_t bytes_per_sample = fmt->bits / 8;
  const std::size_t frame_bytes = bytes_per_sample * fmt->channels;
  if (fmt->block_align != frame_bytes) {
    throw Error(ErrorKind::kFormat, "block_align " + std::to_string(fmt->block_align) +
                                        " inconsistent with channels and bit depth");
  }
  const std::size_t n_frames = data.size() / frame_bytes;
  if (n_frames == 0) throw Error(ErrorKind::kFormat, "data chunk holds no samples");

  AudioClip clip;
  clip.sample_rate = static_cast<int>(fmt->sample_rate);
  clip.samples.resize(n_frames);
  const double inv_channels = 1.0 / fmt->channels;
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < fmt->channels; ++c) {
      const std::size_t at = i * frame_bytes + c * bytes_per_sample;
      if (pcm16) {
        acc += static_cast<std::int16_t>(read_u16(data, at)) / 32768.0;
      } else {
        const std::uint32_t bits = read_u32(data, at);
        float v;
        std::memcpy(&v, &bits, sizeof v);
        if (!std::isfinite(v)) {
          throw Error(ErrorKind::kData, "non-finite float sample at frame " + std::to_string(i));
        }
        acc += v;
      }
    }
    const double mono = fmt->channels == 1 ? acc : acc * inv_channels;
    clip.samples[i] = static_cast<float>(std::clamp(mono, -1.0, 1.0));
  }
  return clip;
}

AudioClip read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_wav(const AudioClip& clip, WavEncoding encoding) {
  if (clip.sample_rate <= 0) throw Error(ErrorKind::kArgument, "sample rate must be positive");
  const bool pcm16 = encoding == WavEncoding::kPcm16;
  const std::uint16_t bits = pcm16 ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.samples.size() * (bits / 8));

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, pcm16 ? kFormatPcm : kFormatFloat);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * (bits / 8));
  put_u16(out, bits / 8);
  put_u16(out, bits);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (float s : clip.samples) {
    if (pcm16) {
      const long q = std::lround(static_cast<double>(s) * 32768.0);
      put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L))));
    } else {
      std::uint32_t v;
      std::memcpy(&v, &s, sizeof v);
      put_u32(out, v);
    }
  }
  return out;
}

void write_wav(const AudioClip& clip, const std::string& path, WavEncoding encoding) {
  const auto bytes = encode_wav(clip, encoding);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path + "'");
}

AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) throw Error(ErrorKind::kArgument, "target rate must be positive");
  if (clip.sample_rate <= 0) throw Error(ErrorKind::kArgument, "source rate must be positive");
  if (target_rate == clip.sample_rate) return clip;

  const std::int64_t src = clip.sample_rate;
  const std::int64_t dst = target_rate;
  const std::int64_t g = std::gcd(src, dst);
  const std::int64_t up = dst / g;
  const std::int64_t down = src / g;

  const std::int64_t n_in = static_cast<std::int64_t>(clip.samples.size());
  const std::int64_t n_out = (n_in * dst + src / 2) / src;

  // Cutoff relative to the input Nyquist; the kernel spans 64 taps at the narrower rate.
  const double fc = std::min(1.0, static_cast<double>(dst) / static_cast<double>(src));
  const double half_width = kTapsAtNarrowRate / 2.0 / fc;
  const std::int64_t reach = static_cast<std::int64_t>(std::ceil(half_width));
  const std::size_t taps = static_cast<std::size_t>(2 * reach);

  auto phase_weights = [&](std::int64_t phase, std::vector<double>& w) {
    const double frac = static_cast<double>(phase) / static_cast<double>(up);
    w.assign(taps, 0.0);
    double total = 0.0;
    for (std::size_t j = 0; j < taps; ++j) {
      const double x = frac - static_cast<double>(static_cast<std::int64_t>(j) - reach + 1);
      w[j] = fc * sinc(fc * x) * kaiser(x, half_width, kKaiserBeta);
      total += w[j];
    }
    for (double& v : w) v /= total;
  };

  // Tabulate the polyphase bank when it is small, otherwise compute per output sample.
  const bool tabulate = up <= 4096;
  std::vector<std::vector<double>> bank;
  if (tabulate) {
    bank.resize(static_cast<std::size_t>(up));
    for (std::int64_t p = 0; p < up; ++p) phase_weights(p, bank[static_cast<std::size_t>(p)]);
  }

  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(n_out));
  std::vector<double> scratch;
  for (std::int64_t n = 0; n < n_out; ++n) {
    const std::int64_t pos = n * down;
    const std::int64_t base = pos / up;
    const std::int64_t phase = pos % up;
    const std::vector<double>* w = nullptr;
    if (tabulate) {
      w = &bank[static_cast<std::size_t>(phase)];
    } else {
      phase_weights(phase, scratch);
      w = &scratch;
    }
    double acc = 0.0;
    for (std::size_t j = 0; j < taps; ++j) {
      const std::int64_t k = base + static_cast<std::int64_t>(j) - reach + 1;
      if (k < 0 || k >= n_in) continue;
      acc += (*w)[j] * clip.samples[static_cast<std::size_t>(k)];
    }
    out.samples[static_cast<std::size_t>(n)] = static_cast<float>(std::clamp(acc, -1.0, 1.0));
  }
  return out;
}

AudioClip synthesize_profiling_clip(std::uint64_t seed, double duration_s, int sample_rate) {
  if (!(duration_s >= 5.5 && duration_s <= 6.5)) {
    throw Error(ErrorKind::kArgument,
                "profiling clip duration " + std::to_string(duration_s) + " s outside [5.5, 6.5]");
  }
  if (sample_rate <= 0) throw Error(ErrorKind::kArgument, "sample rate must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-0.9f, 0.9f);
  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.samples.resize(static_cast<std::size_t>(std::llround(duration_s * sample_rate)));
  for (float& s : clip.samples) s = dist(rng);
  return clip;
}

}  // namespace sqe
