// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sqe {

inline constexpr int kCanonicalSampleRate = 16000;

struct AudioClip {
  std::vector<float> samples;
  int sample_rate = 0;

  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

enum class WavEncoding { kPcm16, kFloat32 };

/// Decodes a RIFF/WAVE container holding PCM16 or IEEE float32 samples.
/// Multichannel input is averaged to mono and PCM16 is scaled by 1/32768.
AudioClip decode_wav(std::span<const std::uint8_t> bytes);
AudioClip read_wav(const std::string& path);

/// Mono encoder, used by tests and the tooling to produce fixtures.
std::vector<std::uint8_t> encode_wav(const AudioClip& clip, WavEncoding encoding);
void write_wav(const AudioClip& clip, const std::string& path, WavEncoding encoding);

/// Windowed-sinc polyphase resampler: 64 taps at the narrower of the two rates,
/// Kaiser window (beta 8.6). Output length is round(len * target / source).
AudioClip resample(const AudioClip& clip, int target_rate);

/// Seeded uniform white noise in [-0.9, 0.9]; duration must lie in [5.5, 6.5] s.
AudioClip synthesize_profiling_clip(std::uint64_t seed, double duration_s, int sample_rate);

}  // namespace sqe
