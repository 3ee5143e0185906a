// SPDX-License-Identifier: Apache-2.0
#include "sqe/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sqe/error.hpp"
#include "sqe/ops.hpp"

namespace sqe {
namespace {

std::string layer_prefix(std::size_t layer) { return "enc." + std::to_string(layer) + "."; }

std::string head_prefix(Task task) { return "head." + std::string(task_name(task)) + "."; }

void add_spec(ParameterTable& table, std::string name, Shape shape) {
  const std::size_t count = shape_size(shape);
  table.total += count;
  table.tensors.push_back({std::move(name), std::move(shape), count});
}

bool is_weight(const std::string& name) { return name.size() > 2 && name.ends_with(".w"); }

bool is_lstm_bias(const std::string& name) {
  return name.starts_with("enc.") && (name.ends_with(".fwd.b") || name.ends_with(".bwd.b"));
}

bool is_norm_gain(const std::string& name) {
  return name.ends_with(".ln1.g") || name.ends_with(".ln2.g");
}

ad::Var linear(const BoundModel& m, ad::Var x, const std::string& prefix) {
  return ad::add_bias(ad::matmul(x, m[prefix + "w"]), m[prefix + "b"]);
}

ad::Var dropout(ad::Var x, const ModelConfig& cfg, const ForwardOptions& opts) {
  if (!opts.training || cfg.dropout_p <= 0.0) return x;
  if (opts.rng == nullptr) throw Error(ErrorKind::kContract, "dropout in training mode needs an rng");
  const Tensor& v = x.value();
  Tensor mask = Tensor::matrix(v.rows(), v.cols());
  std::bernoulli_distribution keep(1.0 - cfg.dropout_p);
  const double inv_keep = 1.0 / (1.0 - cfg.dropout_p);
  for (double& w : mask.values()) w = keep(*opts.rng) ? inv_keep : 0.0;
  return ad::mul(x, x.graph->constant(std::move(mask)));
}

ad::Var heads(const BoundModel& m, ad::Var pooled) {
  std::vector<ad::Var> outs;
  for (Task t : m.config().tasks) outs.push_back(linear(m, pooled, head_prefix(t)));
  return outs.size() == 1 ? outs.front() : ad::concat(outs, 1);
}

Tensor sequence_tensor(const EmbeddingSequence& seq) {
  Tensor x = Tensor::matrix(seq.frames(), seq.dim());
  const auto data = seq.data();
  std::copy(data.begin(), data.end(), x.values().begin());
  return x;
}

void check_input_dim(const ModelConfig& cfg, std::size_t dim) {
  if (dim != cfg.input_dim) {
    throw Error(ErrorKind::kShape, "input dimension mismatch: model expects D=" +
                                       std::to_string(cfg.input_dim) + ", got D=" +
                                       std::to_string(dim));
  }
}

ad::Var self_attention(const BoundModel& m, ad::Var x, const std::string& prefix) {
  const ModelConfig& cfg = m.config();
  const std::size_t frames = x.value().rows();
  const std::size_t head_dim = cfg.hidden_dim / cfg.n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  ad::Var q = linear(m, x, prefix + "q.");
  ad::Var k = linear(m, x, prefix + "k.");
  ad::Var v = linear(m, x, prefix + "v.");
  std::vector<ad::Var> contexts;
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    ad::Var qh = q, kh = k, vh = v;
    if (cfg.n_heads > 1) {
      const std::size_t c0 = h * head_dim, c1 = c0 + head_dim;
      qh = ad::slice(q, 0, frames, c0, c1);
      kh = ad::slice(k, 0, frames, c0, c1);
      vh = ad::slice(v, 0, frames, c0, c1);
    }
    ad::Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
    contexts.push_back(ad::matmul(ad::softmax(scores, 1), vh));
  }
  ad::Var context = contexts.size() == 1 ? contexts.front() : ad::concat(contexts, 1);
  return linear(m, context, prefix + "o.");
}

ForwardVars forward_transformer(const BoundModel& m, const EmbeddingSequence& seq,
                                const ForwardOptions& opts) {
  const ModelConfig& cfg = m.config();
  ad::Graph& g = m.graph();
  ad::Var h = linear(m, g.constant(sequence_tensor(seq)), "proj.");
  if (cfg.positional_encoding) {
    h = ad::add(h, g.constant(sinusoidal_positional_encoding(seq.frames(), cfg.hidden_dim)));
  }
  for (std::size_t l = 0; l < cfg.n_transformer_layers; ++l) {
    const std::string p = layer_prefix(l);
    ad::Var a = ad::layer_norm(h, m[p + "ln1.g"], m[p + "ln1.b"]);
    h = ad::add(h, dropout(self_attention(m, a, p + "attn."), cfg, opts));
    ad::Var f = ad::layer_norm(h, m[p + "ln2.g"], m[p + "ln2.b"]);
    f = linear(m, ad::relu(linear(m, f, p + "ff.1.")), p + "ff.2.");
    h = ad::add(h, dropout(f, cfg, opts));
  }
  ad::Var pooled = attention_pool(h, m["pool.v"], m["pool.b"]);
  return {h, heads(m, pooled)};
}

ad::Var lstm_direction(const BoundModel& m, ad::Var input, const std::string& prefix, bool reverse) {
  const std::size_t units = m.config().bilstm_units_per_dir;
  ad::Graph& g = m.graph();
  const std::size_t frames = input.value().rows();
  const std::size_t in_dim = input.value().cols();
  ad::Var w = m[prefix + "w"];
  ad::Var b = m[prefix + "b"];
  ad::Var h = g.constant(Tensor::matrix(1, units));
  ad::Var c = g.constant(Tensor::matrix(1, units));
  std::vector<ad::Var> rows(frames);
  for (std::size_t s = 0; s < frames; ++s) {
    const std::size_t t = reverse ? frames - 1 - s : s;
    ad::Var z = ad::concat({ad::slice(input, t, t + 1, 0, in_dim), h}, 1);
    ad::Var gates = ad::add_bias(ad::matmul(z, w), b);
    // gate order: input, forget, candidate, output
    ad::Var i = ad::sigmoid(ad::slice(gates, 0, 1, 0, units));
    ad::Var f = ad::sigmoid(ad::slice(gates, 0, 1, units, 2 * units));
    ad::Var cand = ad::tanh(ad::slice(gates, 0, 1, 2 * units, 3 * units));
    ad::Var o = ad::sigmoid(ad::slice(gates, 0, 1, 3 * units, 4 * units));
    c = ad::add(ad::mul(f, c), ad::mul(i, cand));
    h = ad::mul(o, ad::tanh(c));
    rows[t] = h;
  }
  return rows.size() == 1 ? rows.front() : ad::concat(rows, 0);
}

ForwardVars forward_bilstm(const BoundModel& m, const EmbeddingSequence& seq, const ForwardOptions& opts) {
  const ModelConfig& cfg = m.config();
  ad::Var layer_in = m.graph().constant(sequence_tensor(seq));
  for (std::size_t l = 0; l < cfg.n_bilstm_layers; ++l) {
    const std::string p = layer_prefix(l);
    ad::Var fwd = lstm_direction(m, layer_in, p + "fwd.", false);
    ad::Var bwd = lstm_direction(m, layer_in, p + "bwd.", true);
    layer_in = ad::concat({fwd, bwd}, 1);
    if (l + 1 < cfg.n_bilstm_layers) layer_in = dropout(layer_in, cfg, opts);
  }
  ad::Var pooled = attention_pool(layer_in, m["pool.v"], m["pool.b"]);
  return {layer_in, heads(m, pooled)};
}

ad::Var mlp_trunk(const BoundModel& m, ad::Var input, const ForwardOptions& opts) {
  const ModelConfig& cfg = m.config();
  ad::Var h = dropout(ad::relu(linear(m, input, "mlp.0.")), cfg, opts);
  return dropout(ad::relu(linear(m, h, "mlp.1.")), cfg, opts);
}

PredictionSet to_prediction_set(const ModelConfig& cfg, const Tensor& preds) {
  PredictionSet out;
  out.tasks = cfg.tasks;
  out.values.assign(preds.values().begin(), preds.values().end());
  return out;
}

void require_variant(const DownstreamModel& model, Variant variant) {
  if (model.config().variant != variant) {
    throw Error(ErrorKind::kArgument, "model variant is " + std::string(to_string(model.config().variant)) +
                                          ", expected " + std::string(to_string(variant)));
  }
}

}  // namespace

std::string_view to_string(Variant variant) {
  switch (variant) {
    case Variant::kFramewiseTransformer: return "framewise_transformer";
    case Variant::kFramewiseBilstm: return "framewise_bilstm";
    case Variant::kUtteranceMlp: return "utterance_mlp";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  for (Variant v : {Variant::kFramewiseTransformer, Variant::kFramewiseBilstm, Variant::kUtteranceMlp}) {
    if (text == to_string(v)) return v;
  }
  if (text == "transformer") return Variant::kFramewiseTransformer;
  if (text == "bilstm") return Variant::kFramewiseBilstm;
  if (text == "mlp") return Variant::kUtteranceMlp;
  throw Error(ErrorKind::kArgument, "unknown model variant '" + std::string(text) + "'");
}

std::array<Affine, kNumTasks> default_target_scaling() {
  std::array<Affine, kNumTasks> s{};
  s[static_cast<std::size_t>(Task::kSnr)].scale = 10.0;
  s[static_cast<std::size_t>(Task::kDrr)].scale = 10.0;
  s[static_cast<std::size_t>(Task::kC50)].scale = 10.0;
  return s;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::kArgument, "model config: " + msg); };
  if (input_dim < 1) fail("input_dim must be >= 1");
  if (tasks.empty()) fail("at least one task is required");
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (std::find(tasks.begin() + static_cast<std::ptrdiff_t>(i) + 1, tasks.end(), tasks[i]) != tasks.end()) {
      fail("duplicate task " + std::string(task_name(tasks[i])));
    }
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must lie in [0, 1)");
  for (const Affine& a : target_scaling) {
    if (!(a.scale != 0.0) || !std::isfinite(a.scale) || !std::isfinite(a.shift)) fail("invalid target scaling");
  }
  switch (variant) {
    case Variant::kFramewiseTransformer:
      if (hidden_dim < 1) fail("hidden_dim must be >= 1");
      if (n_transformer_layers < 1) fail("n_transformer_layers must be >= 1");
      if (n_heads < 1 || hidden_dim % n_heads != 0) fail("n_heads must divide hidden_dim");
      if (ff_dim < 1) fail("ff_dim must be >= 1");
      break;
    case Variant::kFramewiseBilstm:
      if (n_bilstm_layers < 1) fail("n_bilstm_layers must be >= 1");
      if (bilstm_units_per_dir < 1) fail("bilstm_units_per_dir must be >= 1");
      if (hidden_dim != 2 * bilstm_units_per_dir) fail("hidden_dim must equal 2 * bilstm_units_per_dir");
      break;
    case Variant::kUtteranceMlp:
      break;
  }
}

ParameterTable describe_parameters(const ModelConfig& config) {
  config.validate();
  ParameterTable table;
  const std::size_t d = config.input_dim;
  const std::size_t hdim = config.hidden_dim;
  std::size_t head_in = hdim;
  switch (config.variant) {
    case Variant::kFramewiseTransformer: {
      add_spec(table, "proj.w", {d, hdim});
      add_spec(table, "proj.b", {hdim});
      for (std::size_t l = 0; l < config.n_transformer_layers; ++l) {
        const std::string p = layer_prefix(l);
        add_spec(table, p + "ln1.g", {hdim});
        add_spec(table, p + "ln1.b", {hdim});
        for (const char* proj : {"q", "k", "v", "o"}) {
          add_spec(table, p + "attn." + proj + ".w", {hdim, hdim});
          add_spec(table, p + "attn." + proj + ".b", {hdim});
        }
        add_spec(table, p + "ln2.g", {hdim});
        add_spec(table, p + "ln2.b", {hdim});
        add_spec(table, p + "ff.1.w", {hdim, config.ff_dim});
        add_spec(table, p + "ff.1.b", {config.ff_dim});
        add_spec(table, p + "ff.2.w", {config.ff_dim, hdim});
        add_spec(table, p + "ff.2.b", {hdim});
      }
      add_spec(table, "pool.v", {hdim, 1});
      add_spec(table, "pool.b", {1});
      break;
    }
    case Variant::kFramewiseBilstm: {
      const std::size_t u = config.bilstm_units_per_dir;
      for (std::size_t l = 0; l < config.n_bilstm_layers; ++l) {
        const std::size_t in = l == 0 ? d : 2 * u;
        for (const char* dir : {"fwd", "bwd"}) {
          add_spec(table, layer_prefix(l) + dir + ".w", {in + u, 4 * u});
          add_spec(table, layer_prefix(l) + dir + ".b", {4 * u});
        }
      }
      add_spec(table, "pool.v", {hdim, 1});
      add_spec(table, "pool.b", {1});
      break;
    }
    case Variant::kUtteranceMlp: {
      add_spec(table, "mlp.0.w", {2 * d, d});
      add_spec(table, "mlp.0.b", {d});
      add_spec(table, "mlp.1.w", {d, d});
      add_spec(table, "mlp.1.b", {d});
      head_in = d;
      break;
    }
  }
  for (Task t : config.tasks) {
    add_spec(table, head_prefix(t) + "w", {head_in, 1});
    add_spec(table, head_prefix(t) + "b", {1});
  }
  std::sort(table.tensors.begin(), table.tensors.end(),
            [](const ParameterSpec& a, const ParameterSpec& b) { return a.name < b.name; });
  return table;
}

DownstreamModel::DownstreamModel(ModelConfig config, ParameterMap parameters)
    : config_(std::move(config)), params_(std::move(parameters)) {
  config_.validate();
  const ParameterTable table = describe_parameters(config_);
  if (table.tensors.size() != params_.size()) {
    throw Error(ErrorKind::kIntegrity, "model has " + std::to_string(params_.size()) +
                                           " tensors, configuration requires " +
                                           std::to_string(table.tensors.size()));
  }
  for (const ParameterSpec& spec : table.tensors) {
    auto it = params_.find(spec.name);
    if (it == params_.end()) throw Error(ErrorKind::kIntegrity, "missing parameter '" + spec.name + "'");
    if (it->second.shape() != spec.shape) {
      throw Error(ErrorKind::kIntegrity, "parameter '" + spec.name + "' has shape " +
                                             shape_string(it->second.shape()) + ", expected " +
                                             shape_string(spec.shape));
    }
    if (!it->second.all_finite()) {
      throw Error(ErrorKind::kIntegrity, "parameter '" + spec.name + "' holds non-finite values");
    }
  }
}

const Tensor& DownstreamModel::parameter(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error(ErrorKind::kArgument, "no parameter named '" + name + "'");
  return it->second;
}

std::vector<Tensor*> DownstreamModel::parameter_list() {
  std::vector<Tensor*> out;
  out.reserve(params_.size());
  for (auto& [name, tensor] : params_) out.push_back(&tensor);
  return out;
}

std::size_t DownstreamModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, tensor] : params_) n += tensor.size();
  return n;
}

void DownstreamModel::set_requires_grad(bool on) {
  for (auto& [name, tensor] : params_) tensor.requires_grad = on;
}

void DownstreamModel::zero_grad() {
  for (auto& [name, tensor] : params_) tensor.zero_grad();
}

DownstreamModel init_model(const ModelConfig& config, std::uint64_t seed) {
  const ParameterTable table = describe_parameters(config);
  std::mt19937_64 rng(seed);
  ParameterMap params;
  for (const ParameterSpec& spec : table.tensors) {
    Tensor t(spec.shape);
    if (is_weight(spec.name) || spec.name == "pool.v") {
      const double fan_in = static_cast<double>(spec.shape[0]);
      const double fan_out = static_cast<double>(spec.shape[1]);
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (double& v : t.values()) v = static_cast<double>(static_cast<float>(dist(rng)));
    } else if (is_norm_gain(spec.name)) {
      std::fill(t.values().begin(), t.values().end(), 1.0);
    } else if (is_lstm_bias(spec.name)) {
      const std::size_t u = config.bilstm_units_per_dir;
      std::fill(t.values().begin() + static_cast<std::ptrdiff_t>(u),
                t.values().begin() + static_cast<std::ptrdiff_t>(2 * u), 1.0);
    }
    params.emplace(spec.name, std::move(t));
  }
  return DownstreamModel(config, std::move(params));
}

double PredictionSet::operator[](Task task) const {
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i] == task) return values[i];
  }
  throw Error(ErrorKind::kArgument, "prediction set has no " + std::string(task_name(task)) + " value");
}

bool PredictionSet::has(Task task) const {
  return std::find(tasks.begin(), tasks.end(), task) != tasks.end();
}

PredictionSet to_natural_units(const PredictionSet& preds, const ModelConfig& config) {
  PredictionSet out = preds;
  for (std::size_t i = 0; i < out.tasks.size(); ++i) {
    out.values[i] = config.target_scaling[static_cast<std::size_t>(out.tasks[i])].to_natural(out.values[i]);
  }
  return out;
}

BoundModel::BoundModel(ad::Graph& graph, DownstreamModel& model)
    : graph_(&graph), config_(&model.config()) {
  for (auto& [name, tensor] : model.parameters()) vars_.emplace(name, graph.param(tensor));
}

BoundModel::BoundModel(ad::Graph& graph, const DownstreamModel& model)
    : graph_(&graph), config_(&model.config()) {
  for (const auto& [name, tensor] : model.parameters()) vars_.emplace(name, graph.param(tensor));
}

ad::Var BoundModel::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw Error(ErrorKind::kArgument, "no parameter named '" + name + "'");
  return it->second;
}

ad::Var attention_pool(ad::Var hidden, ad::Var score_vector, ad::Var score_bias) {
  ad::Var scores = ad::add_bias(ad::matmul(hidden, score_vector), score_bias);  // T x 1
  ad::Var alpha = ad::softmax(scores, 0);
  return ad::matmul(ad::transpose(alpha), hidden);  // 1 x H
}

Tensor sinusoidal_positional_encoding(std::size_t frames, std::size_t dim) {
  Tensor pe = Tensor::matrix(frames, dim);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double pair = static_cast<double>(i - i % 2);
      const double angle = static_cast<double>(t) / std::pow(10000.0, pair / static_cast<double>(dim));
      pe.at(t, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

ForwardVars forward(const BoundModel& model, const EmbeddingSequence& seq, const ForwardOptions& options) {
  const ModelConfig& cfg = model.config();
  check_input_dim(cfg, seq.dim());
  switch (cfg.variant) {
    case Variant::kFramewiseTransformer: return forward_transformer(model, seq, options);
    case Variant::kFramewiseBilstm: return forward_bilstm(model, seq, options);
    case Variant::kUtteranceMlp: {
      // mean+max pooling in-graph so its cost is visible to the FLOP tally
      ad::Var x = model.graph().constant(sequence_tensor(seq));
      ad::Var pooled = ad::concat({ad::max(x, 0), ad::mean(x, 0)}, 1);
      ad::Var hidden = mlp_trunk(model, pooled, options);
      return {hidden, heads(model, hidden)};
    }
  }
  throw Error(ErrorKind::kArgument, "unknown variant");
}

ad::Var forward_utterance(const BoundModel& m, const UtteranceEmbedding& emb, const ForwardOptions& options) {
  const ModelConfig& cfg = m.config();
  if (cfg.variant != Variant::kUtteranceMlp) {
    throw Error(ErrorKind::kArgument, "forward_utterance needs an utterance_mlp model");
  }
  if (emb.vector.size() != 2 * cfg.input_dim) {
    throw Error(ErrorKind::kShape, "utterance embedding length mismatch: model expects " +
                                       std::to_string(2 * cfg.input_dim) + ", got " +
                                       std::to_string(emb.vector.size()));
  }
  Tensor x(Shape{1, emb.vector.size()}, emb.vector);
  return heads(m, mlp_trunk(m, m.graph().constant(std::move(x)), options));
}

FramewiseOutput forward_framewise_transformer(const DownstreamModel& model, const EmbeddingSequence& seq) {
  require_variant(model, Variant::kFramewiseTransformer);
  ad::Graph g(false);
  BoundModel bound(g, model);
  ForwardVars out = forward(bound, seq);
  return {out.hidden.value(), to_prediction_set(model.config(), out.predictions.value())};
}

FramewiseOutput forward_framewise_bilstm(const DownstreamModel& model, const EmbeddingSequence& seq) {
  require_variant(model, Variant::kFramewiseBilstm);
  ad::Graph g(false);
  BoundModel bound(g, model);
  ForwardVars out = forward(bound, seq);
  return {out.hidden.value(), to_prediction_set(model.config(), out.predictions.value())};
}

PredictionSet forward_utterance_mlp(const DownstreamModel& model, const UtteranceEmbedding& emb) {
  require_variant(model, Variant::kUtteranceMlp);
  ad::Graph g(false);
  BoundModel bound(g, model);
  return to_prediction_set(model.config(), forward_utterance(bound, emb).value());
}

PredictionSet predict(const DownstreamModel& model, const EmbeddingSequence& seq) {
  ad::Graph g(false);
  BoundModel bound(g, model);
  return to_prediction_set(model.config(), forward(bound, seq).predictions.value());
}

}  // namespace sqe
