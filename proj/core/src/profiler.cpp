// SPDX-License-Identifier: Apache-2.0
#include "sqe/profiler.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "sqe/error.hpp"
#include "sqe/flops.hpp"
#include "sqe/graph.hpp"
#include "sqe/memory.hpp"

namespace sqe {
namespace {

using u64 = std::uint64_t;

struct KindInfo {
  LayerKind kind;
  std::string_view name;
  std::string_view formula;
};

constexpr std::array<KindInfo, 11> kKinds = {{
    {LayerKind::kLinear, "linear", "T*(2*in*out + out)"},
    {LayerKind::kLayerNorm, "layer_norm", "T*(7*d + 5)"},
    {LayerKind::kPositionalEncoding, "positional_encoding", "T*d"},
    {LayerKind::kSelfAttention, "self_attention",
     "4*T*(2*d*d + d) + heads*(4*T*T*dh + 6*T*T)"},
    {LayerKind::kRelu, "relu", "T*d"},
    {LayerKind::kResidualAdd, "residual_add", "T*d"},
    {LayerKind::kLstmDirection, "lstm_direction", "T*(4*(2*(in+h)*h + h) + 9*h)"},
    {LayerKind::kAttentionPool, "attention_pool", "4*T*d + 6*T"},
    {LayerKind::kHead, "head", "2*d + 1"},
    {LayerKind::kMeanMaxPool, "mean_max_pool", "2*T*d + d"},
    {LayerKind::kLogMel, "log_mel",
     "frames*(win + 5*n*ceil(log2 n) + 3*(n/2+1) + 2*(n/2+1)*mels + 2*mels)"},
}};

u64 layer_norm_flops(u64 t, u64 d) { return t * (7 * d + 5); }

u64 attention_flops(u64 t, u64 d, u64 heads) {
  const u64 dh = d / heads;
  return 4 * linear_flops(t, d, d) + heads * (2 * t * t * dh * 2 + t * t + 5 * t * t);
}

u64 lstm_direction_flops(u64 t, u64 in, u64 h) { return t * (4 * (2 * (in + h) * h + h) + 9 * h); }

u64 attention_pool_flops(u64 t, u64 d) { return 2 * t * d + t + 5 * t + 2 * t * d; }

void push(std::vector<LayerCost>& out, std::string name, LayerKind kind, u64 flops) {
  out.push_back({std::move(name), kind, flops});
}

void push_heads(std::vector<LayerCost>& out, const ModelConfig& cfg, u64 width) {
  for (Task t : cfg.tasks) push(out, "head." + std::string(task_name(t)), LayerKind::kHead, 2 * width + 1);
}

bool feeds_mel(const ModelConfig& cfg, const ProfileOptions& o) {
  return cfg.input_dim == o.mel.n_mels && std::abs(o.frame_step_ms - o.mel.hop_ms) < 1e-9;
}

struct ClipPlan {
  double duration_s;
  u64 seed;
};

std::vector<ClipPlan> plan_clips(const ProfileOptions& o) {
  if (o.runs == 0) throw Error(ErrorKind::kArgument, "runs must be at least 1");
  if (!(o.min_duration_s <= o.max_duration_s)) {
    throw Error(ErrorKind::kArgument, "min duration exceeds max duration");
  }
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> dur(o.min_duration_s, o.max_duration_s);
  std::vector<ClipPlan> plans(o.warmup + o.runs);
  for (ClipPlan& p : plans) {
    p.duration_s = o.min_duration_s == o.max_duration_s ? o.min_duration_s : dur(rng);
    p.seed = rng();
  }
  return plans;
}

// Random embedding stand-in when the model does not consume log-mel frames directly.
EmbeddingSequence stand_in_embedding(const ModelConfig& cfg, std::size_t frames, double step_ms,
                                     u64 seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> data(frames * cfg.input_dim);
  for (float& v : data) v = dist(rng);
  return EmbeddingSequence(frames, cfg.input_dim, std::move(data), step_ms, SourceTag::kOther);
}

std::string cpu_model() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        std::string name = line.substr(colon + 1);
        name.erase(0, name.find_first_not_of(' '));
        return name;
      }
    }
  }
  return "unknown";
}

double tick_ms() {
  using period = std::chrono::steady_clock::period;
  return 1000.0 * static_cast<double>(period::num) / static_cast<double>(period::den);
}

volatile double g_sink = 0.0;

}  // namespace

std::string_view to_string(FlopsScope scope) {
  return scope == FlopsScope::kDownstreamOnly ? "downstream_only" : "features_plus_downstream";
}

FlopsScope parse_flops_scope(std::string_view text) {
  if (text == "downstream_only") return FlopsScope::kDownstreamOnly;
  if (text == "features_plus_downstream") return FlopsScope::kFeaturesPlusDownstream;
  throw Error(ErrorKind::kArgument, "unknown FLOPs scope '" + std::string(text) +
                                        "' (expected downstream_only or features_plus_downstream)");
}

std::string_view to_string(LayerKind kind) {
  for (const KindInfo& k : kKinds) {
    if (k.kind == kind) return k.name;
  }
  throw Error(ErrorKind::kCostModel, "layer kind without a cost formula");
}

LayerKind parse_layer_kind(std::string_view text) {
  for (const KindInfo& k : kKinds) {
    if (k.name == text) return k.kind;
  }
  throw Error(ErrorKind::kCostModel, "no cost formula for layer kind '" + std::string(text) + "'");
}

std::string_view cost_formula(LayerKind kind) {
  for (const KindInfo& k : kKinds) {
    if (k.kind == kind) return k.formula;
  }
  throw Error(ErrorKind::kCostModel, "layer kind without a cost formula");
}

u64 linear_flops(u64 frames, u64 in, u64 out) { return frames * (2 * in * out + out); }

std::vector<LayerCost> flop_breakdown(const ModelConfig& cfg, std::size_t frames) {
  cfg.validate();
  if (frames == 0) throw Error(ErrorKind::kTooShort, "cost model needs at least one frame");
  const u64 t = frames;
  std::vector<LayerCost> out;
  switch (cfg.variant) {
    case Variant::kFramewiseTransformer: {
      const u64 d = cfg.hidden_dim, ff = cfg.ff_dim;
      push(out, "proj", LayerKind::kLinear, linear_flops(t, cfg.input_dim, d));
      if (cfg.positional_encoding) push(out, "pe", LayerKind::kPositionalEncoding, t * d);
      for (std::size_t l = 0; l < cfg.n_transformer_layers; ++l) {
        const std::string p = "enc." + std::to_string(l) + ".";
        push(out, p + "ln1", LayerKind::kLayerNorm, layer_norm_flops(t, d));
        push(out, p + "attn", LayerKind::kSelfAttention, attention_flops(t, d, cfg.n_heads));
        push(out, p + "res1", LayerKind::kResidualAdd, t * d);
        push(out, p + "ln2", LayerKind::kLayerNorm, layer_norm_flops(t, d));
        push(out, p + "ff.1", LayerKind::kLinear, linear_flops(t, d, ff));
        push(out, p + "ff.relu", LayerKind::kRelu, t * ff);
        push(out, p + "ff.2", LayerKind::kLinear, linear_flops(t, ff, d));
        push(out, p + "res2", LayerKind::kResidualAdd, t * d);
      }
      push(out, "pool", LayerKind::kAttentionPool, attention_pool_flops(t, d));
      push_heads(out, cfg, d);
      break;
    }
    case Variant::kFramewiseBilstm: {
      const u64 units = cfg.bilstm_units_per_dir;
      u64 in = cfg.input_dim;
      for (std::size_t l = 0; l < cfg.n_bilstm_layers; ++l) {
        const std::string p = "enc." + std::to_string(l) + ".";
        push(out, p + "fwd", LayerKind::kLstmDirection, lstm_direction_flops(t, in, units));
        push(out, p + "bwd", LayerKind::kLstmDirection, lstm_direction_flops(t, in, units));
        in = 2 * units;
      }
      push(out, "pool", LayerKind::kAttentionPool, attention_pool_flops(t, 2 * units));
      push_heads(out, cfg, 2 * units);
      break;
    }
    case Variant::kUtteranceMlp: {
      const u64 d = cfg.input_dim;
      push(out, "pool", LayerKind::kMeanMaxPool, 2 * t * d + d);
      push(out, "mlp.0", LayerKind::kLinear, linear_flops(1, 2 * d, d));
      push(out, "mlp.0.relu", LayerKind::kRelu, d);
      push(out, "mlp.1", LayerKind::kLinear, linear_flops(1, d, d));
      push(out, "mlp.1.relu", LayerKind::kRelu, d);
      push_heads(out, cfg, d);
      break;
    }
  }
  return out;
}

u64 count_flops(const ModelConfig& cfg, std::size_t frames) {
  u64 total = 0;
  for (const LayerCost& c : flop_breakdown(cfg, frames)) total += c.flops;
  return total;
}

u64 count_log_mel_flops(const MelConfig& cfg, std::size_t num_samples) {
  cfg.validate();
  const u64 frames = mel_frame_count(num_samples, cfg);
  const u64 n = cfg.fft_size;
  const u64 log2n = std::bit_width(n - 1);  // ceil(log2 n)
  const u64 bins = n / 2 + 1;
  const u64 mels = cfg.n_mels;
  const u64 per_frame = cfg.window_samples() + 5 * n * log2n + 3 * bins + 2 * bins * mels + 2 * mels;
  return frames * per_frame;
}

u64 instrumented_flops(const DownstreamModel& model, const EmbeddingSequence& seq) {
  flops::Tally tally;
  ad::Graph g(false);
  BoundModel bound(g, model);
  forward(bound, seq);
  return tally.count();
}

u64 count_params(const DownstreamModel& model) { return model.parameter_count(); }

std::size_t frames_for_duration(double duration_s, double frame_step_ms) {
  if (!(frame_step_ms > 0.0)) throw Error(ErrorKind::kArgument, "frame step must be positive");
  const double frames = std::floor(duration_s * 1000.0 / frame_step_ms + 1e-9);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::max(0.0, frames)));
}

LatencyStats summarize_latency(std::vector<double> samples_ms) {
  if (samples_ms.empty()) throw Error(ErrorKind::kArgument, "no latency samples");
  LatencyStats s;
  s.samples_ms = samples_ms;
  std::sort(samples_ms.begin(), samples_ms.end());
  const std::size_t n = samples_ms.size();
  s.min = samples_ms.front();
  s.max = samples_ms.back();
  s.median = n % 2 == 1 ? samples_ms[n / 2] : 0.5 * (samples_ms[n / 2 - 1] + samples_ms[n / 2]);
  s.mean = std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) / static_cast<double>(n);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95 = samples_ms[std::max<std::size_t>(rank, 1) - 1];
  s.unreliable = tick_ms() > 0.01 * s.median;
  return s;
}

std::vector<double> profiling_clip_durations(const ProfileOptions& options) {
  std::vector<double> out;
  const auto plans = plan_clips(options);
  for (std::size_t i = options.warmup; i < plans.size(); ++i) out.push_back(plans[i].duration_s);
  return out;
}

LatencyStats measure_latency(const DownstreamModel& model, FlopsScope scope,
                             const ProfileOptions& options) {
  const ModelConfig& cfg = model.config();
  const auto plans = plan_clips(options);
  LogMelExtractor extractor(options.mel);
  const bool mel_input = feeds_mel(cfg, options);
  std::vector<double> timed;
  std::vector<double> durations;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    const ClipPlan& plan = plans[i];
    const AudioClip clip = synthesize_profiling_clip(plan.seed, plan.duration_s, options.sample_rate);
    EmbeddingSequence prepared;
    if (!mel_input) {
      prepared = stand_in_embedding(cfg, frames_for_duration(plan.duration_s, options.frame_step_ms),
                                    options.frame_step_ms, plan.seed);
    } else if (scope == FlopsScope::kDownstreamOnly) {
      prepared = extractor.compute(clip);
    }

    const auto start = std::chrono::steady_clock::now();
    double acc = 0.0;
    if (scope == FlopsScope::kFeaturesPlusDownstream) {
      EmbeddingSequence mel = extractor.compute(clip);
      acc += mel.data().empty() ? 0.0 : static_cast<double>(mel.data()[0]);
      if (mel_input) prepared = std::move(mel);
    }
    const PredictionSet preds = predict(model, prepared);
    acc += preds.values.empty() ? 0.0 : preds.values[0];
    const auto stop = std::chrono::steady_clock::now();
    g_sink = g_sink + acc;

    if (i >= options.warmup) {
      timed.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
      durations.push_back(plan.duration_s);
    }
  }
  LatencyStats stats = summarize_latency(std::move(timed));
  stats.clip_durations_s = std::move(durations);
  return stats;
}

MemoryReport measure_memory(const DownstreamModel& model, const ProfileOptions& options,
                            std::optional<double> duration_s) {
  const ModelConfig& cfg = model.config();
  MemoryReport report;
  report.model_memory_bytes = encode_checkpoint(model).size();

  const double duration = duration_s.value_or(options.nominal_duration_s);
  const std::size_t frames = feeds_mel(cfg, options)
                                 ? std::max<std::size_t>(1, mel_frame_count(static_cast<std::size_t>(std::llround(
                                                                                 duration * options.mel.sample_rate)),
                                                                             options.mel))
                                 : frames_for_duration(duration, options.frame_step_ms);
  const EmbeddingSequence seq = stand_in_embedding(cfg, frames, options.frame_step_ms, options.seed);

  // Resident weights plus the activation high-water mark above whatever was live before.
  const std::size_t baseline = memory::live_bytes();
  memory::reset_peak();
  {
    const PredictionSet preds = predict(model, seq);
    g_sink = g_sink + (preds.values.empty() ? 0.0 : preds.values[0]);
  }
  const std::size_t activations = memory::peak_bytes() - baseline;
  report.peak_runtime_bytes = model.parameter_count() * sizeof(double) + activations;
  return report;
}

std::string describe_environment() {
  std::ostringstream os;
  os << "cpu=" << cpu_model() << "; threads=1; compiler=";
#if defined(__clang__)
  os << "clang " << __clang_major__ << '.' << __clang_minor__;
#elif defined(__GNUC__)
  os << "gcc " << __GNUC__ << '.' << __GNUC_MINOR__;
#else
  os << "unknown";
#endif
#ifdef NDEBUG
  os << "; build=release";
#else
  os << "; build=debug";
#endif
  return os.str();
}

EfficiencyReport profile(const DownstreamModel& model, const ProfileOptions& options) {
  const ModelConfig& cfg = model.config();
  EfficiencyReport r;
  r.param_count = count_params(model);
  const MemoryReport mem = measure_memory(model, options);
  r.model_memory_bytes = mem.model_memory_bytes;
  r.peak_runtime_bytes = mem.peak_runtime_bytes;
  r.latency_downstream = measure_latency(model, FlopsScope::kDownstreamOnly, options);
  r.latency_full = measure_latency(model, FlopsScope::kFeaturesPlusDownstream, options);

  const auto nominal_samples =
      static_cast<std::size_t>(std::llround(options.nominal_duration_s * options.mel.sample_rate));
  r.frames = feeds_mel(cfg, options) ? std::max<std::size_t>(1, mel_frame_count(nominal_samples, options.mel))
                                     : frames_for_duration(options.nominal_duration_s, options.frame_step_ms);
  r.flops_downstream = count_flops(cfg, r.frames);
  r.flops_features = count_log_mel_flops(options.mel, nominal_samples);
  r.flops_scope = options.flops_scope;
  r.flops_per_inference = options.flops_scope == FlopsScope::kDownstreamOnly
                              ? r.flops_downstream
                              : r.flops_downstream + r.flops_features;
  r.threads = 1;
  r.environment = describe_environment();
  return r;
}

EfficiencyReport profile(const ModelConfig& config, const ProfileOptions& options) {
  return profile(init_model(config, options.seed), options);
}

void write_efficiency_csv(const EfficiencyReport& r, std::ostream& out) {
  const auto flops_scope = std::string(to_string(r.flops_scope));
  const std::string down(to_string(FlopsScope::kDownstreamOnly));
  const std::string full(to_string(FlopsScope::kFeaturesPlusDownstream));
  out << "metric,value,unit,scope\n";
  out << "params," << r.param_count << ",count,model\n";
  out << "model_memory," << r.model_memory_bytes << ",bytes,model\n";
  if (r.peak_runtime_bytes) out << "peak_runtime_memory," << *r.peak_runtime_bytes << ",bytes," << down << '\n';
  out << "flops_per_inference," << r.flops_per_inference << ",FLOPs," << flops_scope << '\n';
  out << "flops_downstream," << r.flops_downstream << ",FLOPs," << down << '\n';
  out << "flops_features," << r.flops_features << ",FLOPs,features\n";
  out << "frames," << r.frames << ",count," << down << '\n';
  const auto latency = [&](const LatencyStats& s, const std::string& scope) {
    out << std::setprecision(6);
    out << "latency_median," << s.median << ",ms," << scope << '\n';
    out << "latency_mean," << s.mean << ",ms," << scope << '\n';
    out << "latency_p95," << s.p95 << ",ms," << scope << '\n';
    out << "latency_min," << s.min << ",ms," << scope << '\n';
    out << "latency_max," << s.max << ",ms," << scope << '\n';
    out << "latency_runs," << s.samples_ms.size() << ",count," << scope << '\n';
  };
  latency(r.latency_downstream, down);
  latency(r.latency_full, full);
  out << "# environment: " << r.environment << '\n';
  out << "# threads: " << r.threads << '\n';
  if (r.latency_downstream.unreliable || r.latency_full.unreliable) {
    out << "# timer_unreliable: steady_clock resolution exceeds 1% of the median latency\n";
  }
}

void write_efficiency_table(const EfficiencyReport& r, std::ostream& out) {
  out << std::fixed << std::setprecision(3);
  out << "params              " << r.param_count << '\n';
  out << "model memory        " << r.model_memory_bytes << " bytes\n";
  if (r.peak_runtime_bytes) out << "peak runtime memory " << *r.peak_runtime_bytes << " bytes\n";
  out << "FLOPs/inference     " << r.flops_per_inference << " (" << to_string(r.flops_scope) << ")\n";
  out << "latency median      " << r.latency_downstream.median << " ms downstream, "
      << r.latency_full.median << " ms with features\n";
  out << "latency p95         " << r.latency_downstream.p95 << " ms downstream, " << r.latency_full.p95
      << " ms with features\n";
  out << "environment         " << r.environment << '\n';
  out.unsetf(std::ios::floatfield);
}

}  // namespace sqe
