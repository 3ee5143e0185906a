// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "sqe/audio.hpp"

namespace sqe {

enum class SourceTag : std::uint8_t { kMelspec = 0, kByolsCvt = 1, kXlsr = 2, kOther = 3 };

std::string_view to_string(SourceTag tag);

/// T x D row-major framewise feature matrix.
class EmbeddingSequence {
 public:
  EmbeddingSequence() = default;
  /// Validates T >= 1, D >= 1, finite entries, frame_step_ms > 0.
  EmbeddingSequence(std::size_t frames, std::size_t dim, std::vector<float> data,
                    float frame_step_ms, SourceTag tag);

  std::size_t frames() const { return frames_; }
  std::size_t dim() const { return dim_; }
  float frame_step_ms() const { return frame_step_ms_; }
  SourceTag source_tag() const { return tag_; }

  std::span<const float> data() const { return data_; }
  std::span<const float> row(std::size_t t) const {
    return std::span<const float>(data_).subspan(t * dim_, dim_);
  }
  float at(std::size_t t, std::size_t d) const { return data_[t * dim_ + d]; }

  bool operator==(const EmbeddingSequence&) const = default;

 private:
  std::size_t frames_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> data_;
  float frame_step_ms_ = 0.0f;
  SourceTag tag_ = SourceTag::kOther;
};

/// max over frames followed by mean over frames, length 2D.
struct UtteranceEmbedding {
  std::vector<double> vector;
  SourceTag source_tag = SourceTag::kOther;

  std::size_t framewise_dim() const { return vector.size() / 2; }
};

UtteranceEmbedding pool_mean_max(const EmbeddingSequence& seq);

struct MelConfig {
  int sample_rate = kCanonicalSampleRate;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  std::size_t fft_size = 512;
  std::size_t n_mels = 64;
  double fmin = 60.0;
  double fmax = 7800.0;
  double log_floor = 1e-10;

  std::size_t window_samples() const;
  std::size_t hop_samples() const;
  /// Throws ErrorKind::kArgument on an inconsistent configuration.
  void validate() const;
};

/// 1 + floor((N - win) / hop), or 0 when N < win.
std::size_t mel_frame_count(std::size_t num_samples, const MelConfig& cfg);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular HTK-mel filters, area-normalized: weights[m * n_bins + k], n_bins = fft/2 + 1.
struct MelFilterbank {
  std::size_t n_mels = 0;
  std::size_t n_bins = 0;
  std::vector<double> weights;
  std::vector<double> center_hz;

  static MelFilterbank build(const MelConfig& cfg);
};

/// Reusable log-mel front end; owns the FFT plan and filterbank for one MelConfig.
/// Instances are not shareable across threads, construct one per thread.
class LogMelExtractor {
 public:
  explicit LogMelExtractor(const MelConfig& cfg);
  ~LogMelExtractor();
  LogMelExtractor(const LogMelExtractor&) = delete;
  LogMelExtractor& operator=(const LogMelExtractor&) = delete;

  const MelConfig& config() const { return cfg_; }
  const MelFilterbank& filterbank() const { return bank_; }

  EmbeddingSequence compute(const AudioClip& clip);

 private:
  struct FftPlan;
  MelConfig cfg_;
  MelFilterbank bank_;
  std::vector<double> window_;
  std::unique_ptr<FftPlan> fft_;
};

/// ln(mel_power + log_floor) per frame, Hann-windowed periodic STFT without padding.
EmbeddingSequence log_mel_spectrogram(const AudioClip& clip, const MelConfig& cfg);

/// Optional per-utterance standardization of every column (off by default in the pipelines).
EmbeddingSequence normalize_embeddings(const EmbeddingSequence& seq);

// SQE1 binary embedding file.
std::vector<std::uint8_t> encode_embedding(const EmbeddingSequence& seq);
EmbeddingSequence decode_embedding(std::span<const std::uint8_t> bytes);
void write_embedding_file(const EmbeddingSequence& seq, const std::filesystem::path& path);
EmbeddingSequence read_embedding_file(const std::filesystem::path& path);

}  // namespace sqe
