// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sqe/features.hpp"
#include "sqe/model.hpp"

namespace sqe {

enum class FlopsScope { kDownstreamOnly, kFeaturesPlusDownstream };

std::string_view to_string(FlopsScope scope);
FlopsScope parse_flops_scope(std::string_view text);

/// Layer kinds known to the FLOP cost model. One multiply-accumulate is 2 FLOPs and
/// every elementwise op (including transcendental ones) is 1 FLOP unless noted.
enum class LayerKind {
  kLinear,              // T * (2*in*out + out)
  kLayerNorm,           // T * (7*d + 5)
  kPositionalEncoding,  // T * d (add)
  kSelfAttention,       // 4 linear(d->d) + per head: 2*T*T*dh*2 + T*T (scale) + 5*T*T (softmax)
  kRelu,                // T * d
  kResidualAdd,         // T * d
  kLstmDirection,       // T * (4*(2*(in+h)*h + h) + 9*h)
  kAttentionPool,       // 2*T*d + T + 5*T + 2*T*d
  kHead,                // 2*d + 1 per task
  kMeanMaxPool,         // 2*T*d + d
  kLogMel,              // per frame: win + 5*n*log2(n) + 3*bins + 2*bins*mels + 2*mels
};

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view text);  // throws ErrorKind::kCostModel
std::string_view cost_formula(LayerKind kind);

struct LayerCost {
  std::string name;
  LayerKind kind = LayerKind::kLinear;
  std::uint64_t flops = 0;
};

std::uint64_t linear_flops(std::uint64_t frames, std::uint64_t in, std::uint64_t out);

/// Closed-form per-layer inference cost of the downstream model on T frames.
std::vector<LayerCost> flop_breakdown(const ModelConfig& config, std::size_t frames);
std::uint64_t count_flops(const ModelConfig& config, std::size_t frames);
/// Front-end cost for a clip of `num_samples` samples.
std::uint64_t count_log_mel_flops(const MelConfig& cfg, std::size_t num_samples);

/// FLOPs reported by the primitives while running one real inference.
std::uint64_t instrumented_flops(const DownstreamModel& model, const EmbeddingSequence& seq);

std::uint64_t count_params(const DownstreamModel& model);

struct ProfileOptions {
  std::size_t runs = 30;
  std::size_t warmup = 5;
  std::uint64_t seed = 0;
  int sample_rate = kCanonicalSampleRate;
  double min_duration_s = 5.5;
  double max_duration_s = 6.5;
  /// Step of the embeddings fed to the downstream model (160 ms for BYOL-S style input).
  double frame_step_ms = 160.0;
  /// Clip length used for the analytic FLOP and memory figures.
  double nominal_duration_s = 6.0;
  FlopsScope flops_scope = FlopsScope::kFeaturesPlusDownstream;
  MelConfig mel;
};

/// Frames produced for a clip of this length at the configured embedding step (at least 1).
std::size_t frames_for_duration(double duration_s, double frame_step_ms);

struct LatencyStats {
  std::vector<double> samples_ms;        // timed runs only
  std::vector<double> clip_durations_s;  // matching clip lengths
  double median = 0.0;
  double mean = 0.0;
  double p95 = 0.0;
  double min = 0.0;
  double max = 0.0;
  bool unreliable = false;  // timer tick coarser than 1% of the median
};

LatencyStats summarize_latency(std::vector<double> samples_ms);

/// Times `options.runs` inferences on seeded synthetic clips after `options.warmup`
/// untimed ones. kDownstreamOnly excludes the front end; kFeaturesPlusDownstream
/// includes the log-mel computation.
LatencyStats measure_latency(const DownstreamModel& model, FlopsScope scope,
                             const ProfileOptions& options);

/// Durations the latency runs will use, in order (timed runs only).
std::vector<double> profiling_clip_durations(const ProfileOptions& options);

struct MemoryReport {
  std::uint64_t model_memory_bytes = 0;  // serialized checkpoint size: float32 weights + header
  std::optional<std::uint64_t> peak_runtime_bytes;
};

/// Peak is the tensor-allocator high-water mark during one inference on a clip of
/// `duration_s` (defaults to the nominal duration).
MemoryReport measure_memory(const DownstreamModel& model, const ProfileOptions& options,
                            std::optional<double> duration_s = std::nullopt);

struct EfficiencyReport {
  std::uint64_t param_count = 0;
  std::uint64_t model_memory_bytes = 0;
  std::optional<std::uint64_t> peak_runtime_bytes;
  LatencyStats latency_downstream;
  LatencyStats latency_full;
  std::uint64_t flops_downstream = 0;
  std::uint64_t flops_features = 0;
  std::uint64_t flops_per_inference = 0;  // per flops_scope
  FlopsScope flops_scope = FlopsScope::kFeaturesPlusDownstream;
  std::size_t frames = 0;
  unsigned threads = 1;
  std::string environment;
};

std::string describe_environment();

EfficiencyReport profile(const DownstreamModel& model, const ProfileOptions& options);
EfficiencyReport profile(const ModelConfig& config, const ProfileOptions& options);

/// CSV `metric,value,unit,scope` followed by `#` environment comment lines.
void write_efficiency_csv(const EfficiencyReport& report, std::ostream& out);
void write_efficiency_table(const EfficiencyReport& report, std::ostream& out);

}  // namespace sqe
