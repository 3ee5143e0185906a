// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "sqe/features.hpp"
#include "sqe/graph.hpp"
#include "sqe/tasks.hpp"
#include "sqe/tensor.hpp"

namespace sqe {

enum class Variant { kFramewiseTransformer, kFramewiseBilstm, kUtteranceMlp };

std::string_view to_string(Variant variant);
Variant parse_variant(std::string_view text);

/// Affine target normalization: model space = (natural - shift) / scale.
struct Affine {
  double shift = 0.0;
  double scale = 1.0;

  double to_model(double natural) const { return (natural - shift) / scale; }
  double to_natural(double model) const { return model * scale + shift; }
  bool operator==(const Affine&) const = default;
};

/// MOS and STI unscaled, SNR/DRR/C50 divided by 10 dB, T60 by 1 s.
std::array<Affine, kNumTasks> default_target_scaling();

struct ModelConfig {
  Variant variant = Variant::kFramewiseTransformer;
  std::size_t input_dim = 64;
  std::size_t hidden_dim = 64;
  std::size_t n_transformer_layers = 2;
  std::size_t n_heads = 1;
  std::size_t ff_dim = 64;
  std::size_t n_bilstm_layers = 2;
  std::size_t bilstm_units_per_dir = 32;
  std::vector<Task> tasks = {Task::kMos};
  bool positional_encoding = true;
  double dropout_p = 0.1;
  std::array<Affine, kNumTasks> target_scaling = default_target_scaling();

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

using ParameterMap = std::map<std::string, Tensor>;

struct ParameterSpec {
  std::string name;
  Shape shape;
  std::size_t count = 0;
};

struct ParameterTable {
  std::vector<ParameterSpec> tensors;  // name order
  std::size_t total = 0;
};

/// Closed-form parameter shapes for a configuration.
ParameterTable describe_parameters(const ModelConfig& config);

class DownstreamModel {
 public:
  DownstreamModel() = default;
  /// Takes ownership of `parameters`; throws ErrorKind::kIntegrity when names or
  /// shapes disagree with describe_parameters(config).
  DownstreamModel(ModelConfig config, ParameterMap parameters);

  const ModelConfig& config() const { return config_; }
  const ParameterMap& parameters() const { return params_; }
  ParameterMap& parameters() { return params_; }
  const Tensor& parameter(const std::string& name) const;

  /// Mutable parameter pointers in name order, for optimizers and gradient checks.
  std::vector<Tensor*> parameter_list();
  std::size_t parameter_count() const;

  void set_requires_grad(bool on);
  void zero_grad();

 private:
  ModelConfig config_;
  ParameterMap params_;
};

/// Glorot-uniform weights, zero biases, LSTM forget-gate bias 1, layer-norm gain 1.
DownstreamModel init_model(const ModelConfig& config, std::uint64_t seed);

/// One value per configured task, in config task order, in model (scaled) units.
struct PredictionSet {
  std::vector<Task> tasks;
  std::vector<double> values;

  double operator[](Task task) const;
  bool has(Task task) const;
};

/// Natural units (dB, s) via the config's target scaling.
PredictionSet to_natural_units(const PredictionSet& preds, const ModelConfig& config);

struct ForwardOptions {
  bool training = false;           // enables dropout
  std::mt19937_64* rng = nullptr;  // required when training with dropout_p > 0
};

/// Model parameters attached to one graph.
class BoundModel {
 public:
  BoundModel(ad::Graph& graph, DownstreamModel& model);        // differentiable
  BoundModel(ad::Graph& graph, const DownstreamModel& model);  // read-only

  const ModelConfig& config() const { return *config_; }
  ad::Graph& graph() const { return *graph_; }
  ad::Var operator[](const std::string& name) const;

 private:
  ad::Graph* graph_;
  const ModelConfig* config_;
  std::map<std::string, ad::Var> vars_;
};

struct ForwardVars {
  ad::Var hidden;       // T x hidden_dim for framewise variants, last MLP layer (1 x D) otherwise
  ad::Var predictions;  // 1 x n_tasks
};

/// Graph-level forward of any variant. The utterance MLP pools the sequence first.
ForwardVars forward(const BoundModel& model, const EmbeddingSequence& seq,
                    const ForwardOptions& options = {});
ad::Var forward_utterance(const BoundModel& model, const UtteranceEmbedding& emb,
                          const ForwardOptions& options = {});

/// scores = hidden . v + b; alpha = softmax over frames; output = sum_t alpha_t * hidden_t.
ad::Var attention_pool(ad::Var hidden, ad::Var score_vector, ad::Var score_bias);

/// Sinusoidal table, sin on even columns and cos on odd ones.
Tensor sinusoidal_positional_encoding(std::size_t frames, std::size_t dim);

struct FramewiseOutput {
  Tensor hidden;
  PredictionSet predictions;
};

FramewiseOutput forward_framewise_transformer(const DownstreamModel& model,
                                              const EmbeddingSequence& seq);
FramewiseOutput forward_framewise_bilstm(const DownstreamModel& model,
                                         const EmbeddingSequence& seq);
PredictionSet forward_utterance_mlp(const DownstreamModel& model, const UtteranceEmbedding& emb);

/// Inference with dropout disabled, any variant; model units.
PredictionSet predict(const DownstreamModel& model, const EmbeddingSequence& seq);

// SQM1 checkpoint.
std::vector<std::uint8_t> encode_checkpoint(const DownstreamModel& model);
DownstreamModel decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const DownstreamModel& model, const std::filesystem::path& path);
DownstreamModel load_checkpoint(const std::filesystem::path& path);
/// As above, and throws ErrorKind::kTaskMismatch unless the task sets are equal.
DownstreamModel load_checkpoint(const std::filesystem::path& path,
                                const std::vector<Task>& expected_tasks);

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

}  // namespace sqe
