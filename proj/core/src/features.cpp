// SPDX-License-Identifier: Apache-2.0
#include "sqe/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <mutex>
#include <string>

#include "sqe/error.hpp"

namespace sqe {
namespace {

// FFTW planning is not reentrant; execution of distinct plans is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

constexpr std::array<char, 4> kEmbeddingMagic = {'S', 'Q', 'E', '1'};
constexpr std::uint32_t kEmbeddingVersion = 1;
constexpr std::size_t kEmbeddingHeaderBytes = 24;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, sizeof v);
  put_u32(out, v);
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) |
         (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

float get_f32(std::span<const std::uint8_t> b, std::size_t off) {
  const std::uint32_t v = get_u32(b, off);
  float f;
  std::memcpy(&f, &v, sizeof f);
  return f;
}

}  // namespace

std::string_view to_string(SourceTag tag) {
  switch (tag) {
    case SourceTag::kMelspec: return "melspec";
    case SourceTag::kByolsCvt: return "byols_cvt";
    case SourceTag::kXlsr: return "xlsr";
    case SourceTag::kOther: return "other";
  }
  return "other";
}

EmbeddingSequence::EmbeddingSequence(std::size_t frames, std::size_t dim, std::vector<float> data,
                                     float frame_step_ms, SourceTag tag)
    : frames_(frames), dim_(dim), data_(std::move(data)), frame_step_ms_(frame_step_ms), tag_(tag) {
  if (frames_ == 0 || dim_ == 0) {
    throw Error(ErrorKind::kArgument, "embedding sequence needs T >= 1 and D >= 1, got " +
                                          std::to_string(frames_) + "x" + std::to_string(dim_));
  }
  if (data_.size() != frames_ * dim_) {
    throw Error(ErrorKind::kShape, "embedding data holds " + std::to_string(data_.size()) +
                                       " values, expected " + std::to_string(frames_ * dim_));
  }
  if (!(frame_step_ms_ > 0.0f) || !std::isfinite(frame_step_ms_)) {
    throw Error(ErrorKind::kArgument, "frame step must be positive");
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw Error(ErrorKind::kData, "non-finite embedding value at frame " +
                                        std::to_string(i / dim_) + ", column " +
                                        std::to_string(i % dim_));
    }
  }
}

UtteranceEmbedding pool_mean_max(const EmbeddingSequence& seq) {
  const std::size_t d = seq.dim();
  const std::size_t frames = seq.frames();
  UtteranceEmbedding out;
  out.source_tag = seq.source_tag();
  out.vector.assign(2 * d, 0.0);
  std::vector<float> column(frames);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t t = 0; t < frames; ++t) column[t] = seq.at(t, i);
    // Summing in sorted order makes the result independent of frame order.
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (float v : column) sum += v;
    const double max = column.back();
    out.vector[i] = max;
    // Rounding in the sum must not lift the mean above the max.
    out.vector[d + i] = std::min(sum / static_cast<double>(frames), max);
  }
  return out;
}

std::size_t MelConfig::window_samples() const {
  return static_cast<std::size_t>(std::llround(window_ms * sample_rate / 1000.0));
}

std::size_t MelConfig::hop_samples() const {
  return static_cast<std::size_t>(std::llround(hop_ms * sample_rate / 1000.0));
}

void MelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::kArgument, "mel config: " + msg); };
  if (sample_rate <= 0) fail("sample_rate must be positive");
  if (!(hop_ms > 0.0)) fail("hop_ms must be positive");
  if (window_ms < hop_ms) fail("window_ms must be >= hop_ms");
  if (n_mels < 1) fail("n_mels must be >= 1");
  if (!(fmin >= 0.0 && fmin < fmax)) fail("need 0 <= fmin < fmax");
  if (fmax > sample_rate / 2.0) fail("fmax exceeds Nyquist");
  if (!(log_floor > 0.0)) fail("log_floor must be positive");
  if (hop_samples() < 1) fail("hop shorter than one sample");
  if (fft_size < window_samples()) fail("fft_size smaller than the window");
}

std::size_t mel_frame_count(std::size_t num_samples, const MelConfig& cfg) {
  const std::size_t win = cfg.window_samples();
  if (num_samples < win) return 0;
  return 1 + (num_samples - win) / cfg.hop_samples();
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank MelFilterbank::build(const MelConfig& cfg) {
  cfg.validate();
  MelFilterbank bank;
  bank.n_mels = cfg.n_mels;
  bank.n_bins = cfg.fft_size / 2 + 1;
  bank.weights.assign(bank.n_mels * bank.n_bins, 0.0);
  bank.center_hz.resize(bank.n_mels);

  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(cfg.n_mels + 1));
  }
  const double bin_hz = static_cast<double>(cfg.sample_rate) / static_cast<double>(cfg.fft_size);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
    bank.center_hz[m] = center;
    const double area_norm = 2.0 / (hi - lo);
    for (std::size_t k = 0; k < bank.n_bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      const double tri = std::min((f - lo) / (center - lo), (hi - f) / (hi - center));
      if (tri > 0.0) bank.weights[m * bank.n_bins + k] = tri * area_norm;
    }
  }
  return bank;
}

struct LogMelExtractor::FftPlan {
  double* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;

  explicit FftPlan(std::size_t n) {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    in = fftw_alloc_real(n);
    out = fftw_alloc_complex(n / 2 + 1);
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  }
  ~FftPlan() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
};

LogMelExtractor::LogMelExtractor(const MelConfig& cfg)
    : cfg_(cfg), bank_(MelFilterbank::build(cfg)), fft_(std::make_unique<FftPlan>(cfg.fft_size)) {
  const std::size_t win = cfg_.window_samples();
  window_.resize(win);
  for (std::size_t j = 0; j < win; ++j) {
    window_[j] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(j) / static_cast<double>(win));
  }
}

LogMelExtractor::~LogMelExtractor() = default;

EmbeddingSequence LogMelExtractor::compute(const AudioClip& clip) {
  if (clip.sample_rate != cfg_.sample_rate) {
    throw Error(ErrorKind::kArgument, "clip sample rate " + std::to_string(clip.sample_rate) +
                                          " Hz differs from mel config rate " +
                                          std::to_string(cfg_.sample_rate) + " Hz");
  }
  const std::size_t frames = mel_frame_count(clip.samples.size(), cfg_);
  if (frames == 0) {
    throw Error(ErrorKind::kTooShort, "clip of " + std::to_string(clip.samples.size()) +
                                          " samples is shorter than one " +
                                          std::to_string(cfg_.window_samples()) + "-sample window");
  }
  const std::size_t win = cfg_.window_samples();
  const std::size_t hop = cfg_.hop_samples();
  const std::size_t n_fft = cfg_.fft_size;
  const std::size_t bins = bank_.n_bins;

  std::vector<float> out(frames * cfg_.n_mels);
  std::vector<double> power(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    const float* frame = clip.samples.data() + t * hop;
    for (std::size_t j = 0; j < win; ++j) fft_->in[j] = frame[j] * window_[j];
    std::fill(fft_->in + win, fft_->in + n_fft, 0.0);
    fftw_execute(fft_->plan);
    for (std::size_t k = 0; k < bins; ++k) {
      power[k] = fft_->out[k][0] * fft_->out[k][0] + fft_->out[k][1] * fft_->out[k][1];
    }
    for (std::size_t m = 0; m < cfg_.n_mels; ++m) {
      const double* w = bank_.weights.data() + m * bins;
      double acc = 0.0;
      for (std::size_t k = 0; k < bins; ++k) acc += w[k] * power[k];
      out[t * cfg_.n_mels + m] = static_cast<float>(std::log(acc + cfg_.log_floor));
    }
  }
  return EmbeddingSequence(frames, cfg_.n_mels, std::move(out), static_cast<float>(cfg_.hop_ms),
                           SourceTag::kMelspec);
}

EmbeddingSequence log_mel_spectrogram(const AudioClip& clip, const MelConfig& cfg) {
  LogMelExtractor extractor(cfg);
  return extractor.compute(clip);
}

EmbeddingSequence normalize_embeddings(const EmbeddingSequence& seq) {
  const std::size_t t_len = seq.frames(), d = seq.dim();
  std::vector<float> out(seq.data().begin(), seq.data().end());
  for (std::size_t i = 0; i < d; ++i) {
    double mean = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) mean += seq.at(t, i);
    mean /= static_cast<double>(t_len);
    double var = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) var += (seq.at(t, i) - mean) * (seq.at(t, i) - mean);
    const double sd = std::max(std::sqrt(var / static_cast<double>(t_len)), 1e-8);
    for (std::size_t t = 0; t < t_len; ++t) {
      out[t * d + i] = static_cast<float>((seq.at(t, i) - mean) / sd);
    }
  }
  return EmbeddingSequence(t_len, d, std::move(out), seq.frame_step_ms(), seq.source_tag());
}

std::vector<std::uint8_t> encode_embedding(const EmbeddingSequence& seq) {
  std::vector<std::uint8_t> out;
  out.reserve(kEmbeddingHeaderBytes + 4 * seq.data().size());
  out.insert(out.end(), kEmbeddingMagic.begin(), kEmbeddingMagic.end());
  put_u32(out, kEmbeddingVersion);
  put_u32(out, static_cast<std::uint32_t>(seq.frames()));
  put_u32(out, static_cast<std::uint32_t>(seq.dim()));
  put_f32(out, seq.frame_step_ms());
  out.push_back(static_cast<std::uint8_t>(seq.source_tag()));
  out.insert(out.end(), 3, 0);
  for (float v : seq.data()) put_f32(out, v);
  return out;
}

EmbeddingSequence decode_embedding(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kEmbeddingMagic.size() ||
      !std::equal(kEmbeddingMagic.begin(), kEmbeddingMagic.end(), bytes.begin())) {
    throw Error(ErrorKind::kFormat, "not an SQE1 embedding file (bad magic)");
  }
  if (bytes.size() < kEmbeddingHeaderBytes) {
    throw Error(ErrorKind::kTruncated, "SQE1 header is cut short at " + std::to_string(bytes.size()) + " bytes");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kEmbeddingVersion) {
    throw Error(ErrorKind::kVersion, "unsupported SQE1 version " + std::to_string(version));
  }
  const std::uint64_t frames = get_u32(bytes, 8);
  const std::uint64_t dim = get_u32(bytes, 12);
  const float step = get_f32(bytes, 16);
  const std::uint8_t tag = bytes[20];
  if (frames == 0 || dim == 0) throw Error(ErrorKind::kFormat, "SQE1 header declares an empty matrix");
  if (!(step > 0.0f) || !std::isfinite(step)) {
    throw Error(ErrorKind::kFormat, "SQE1 header frame step must be positive");
  }
  if (tag > static_cast<std::uint8_t>(SourceTag::kOther)) {
    throw Error(ErrorKind::kFormat, "SQE1 header has unknown source tag " + std::to_string(tag));
  }
  if (bytes[21] != 0 || bytes[22] != 0 || bytes[23] != 0) {
    throw Error(ErrorKind::kFormat, "SQE1 reserved header bytes are not zero");
  }
  const std::uint64_t payload = bytes.size() - kEmbeddingHeaderBytes;
  const std::uint64_t expected = frames * dim * 4;
  if (payload != expected) {
    throw Error(ErrorKind::kTruncated, "SQE1 header declares " + std::to_string(frames) + "x" +
                                           std::to_string(dim) + " (" + std::to_string(expected) +
                                           " bytes) but payload holds " + std::to_string(payload) +
                                           " bytes");
  }
  std::vector<float> data(frames * dim);
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = get_f32(bytes, kEmbeddingHeaderBytes + 4 * i);
    if (!std::isfinite(data[i])) {
      throw Error(ErrorKind::kData, "non-finite SQE1 payload value at index " + std::to_string(i));
    }
  }
  return EmbeddingSequence(frames, dim, std::move(data), step, static_cast<SourceTag>(tag));
}

void write_embedding_file(const EmbeddingSequence& seq, const std::filesystem::path& path) {
  const auto bytes = encode_embedding(seq);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write embedding file '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path.string() + "'");
}

EmbeddingSequence read_embedding_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open embedding file '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_embedding(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace sqe
