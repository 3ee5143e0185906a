// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sqe/error.hpp"
#include "sqe/gradcheck.hpp"
#include "sqe/model.hpp"
#include "sqe/ops.hpp"
#include "test_support.hpp"

namespace sqe {
namespace {

// Plain row-major matrices for the loop oracles below.
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

Mat from_tensor(const Tensor& t) {
  const std::size_t rows = t.rank() == 1 ? 1 : t.shape()[0];
  const std::size_t cols = t.rank() == 1 ? t.shape()[0] : t.shape()[1];
  Mat m(rows, cols);
  std::copy(t.values().begin(), t.values().end(), m.v.begin());
  return m;
}

Mat from_sequence(const EmbeddingSequence& seq) {
  Mat m(seq.frames(), seq.dim());
  for (std::size_t t = 0; t < seq.frames(); ++t)
    for (std::size_t d = 0; d < seq.dim(); ++d) m(t, d) = seq.at(t, d);
  return m;
}

Mat dense(const Mat& x, const Mat& w, const Mat& b) {
  Mat y(x.rows, w.cols);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < w.cols; ++c) {
      double acc = b.v[c];
      for (std::size_t k = 0; k < x.cols; ++k) acc += x(r, k) * w(k, c);
      y(r, c) = acc;
    }
  return y;
}

Mat layer_norm_rows(const Mat& x, const Mat& g, const Mat& b) {
  Mat y(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t c = 0; c < x.cols; ++c) mu += x(r, c);
    mu /= static_cast<double>(x.cols);
    for (std::size_t c = 0; c < x.cols; ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= static_cast<double>(x.cols);
    for (std::size_t c = 0; c < x.cols; ++c) y(r, c) = (x(r, c) - mu) / std::sqrt(var + 1e-5) * g.v[c] + b.v[c];
  }
  return y;
}

std::vector<double> softmax_vec(std::vector<double> s) {
  const double mx = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (double& e : s) z += (e = std::exp(e - mx));
  for (double& e : s) e /= z;
  return s;
}

std::vector<double> oracle_attention_pool(const Mat& h, const Mat& v, double b) {
  std::vector<double> scores(h.rows);
  for (std::size_t t = 0; t < h.rows; ++t) {
    scores[t] = b;
    for (std::size_t c = 0; c < h.cols; ++c) scores[t] += h(t, c) * v.v[c];
  }
  const auto alpha = softmax_vec(scores);
  std::vector<double> out(h.cols, 0.0);
  for (std::size_t t = 0; t < h.rows; ++t)
    for (std::size_t c = 0; c < h.cols; ++c) out[c] += alpha[t] * h(t, c);
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct OracleOut {
  Mat hidden;
  std::vector<double> predictions;
};

std::vector<double> oracle_heads(const ParameterMap& p, const ModelConfig& cfg, const std::vector<double>& pooled) {
  std::vector<double> out;
  for (Task t : cfg.tasks) {
    const std::string prefix = "head." + std::string(task_name(t)) + ".";
    const Mat w = from_tensor(p.at(prefix + "w"));
    double acc = p.at(prefix + "b").values()[0];
    for (std::size_t c = 0; c < pooled.size(); ++c) acc += pooled[c] * w.v[c];
    out.push_back(acc);
  }
  return out;
}

OracleOut oracle_transformer(const DownstreamModel& model, const EmbeddingSequence& seq) {
  const ModelConfig& cfg = model.config();
  const ParameterMap& p = model.parameters();
  auto P = [&](const std::string& n) { return from_tensor(p.at(n)); };
  Mat h = dense(from_sequence(seq), P("proj.w"), P("proj.b"));
  const std::size_t T = h.rows, H = h.cols;
  if (cfg.positional_encoding) {
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < H; ++i) {
        const double angle = static_cast<double>(t) / std::pow(10000.0, static_cast<double>(i - i % 2) / static_cast<double>(H));
        h(t, i) += i % 2 == 0 ? std::sin(angle) : std::cos(angle);
      }
  }
  const std::size_t heads = cfg.n_heads, hd = H / heads;
  for (std::size_t l = 0; l < cfg.n_transformer_layers; ++l) {
    const std::string pre = "enc." + std::to_string(l) + ".";
    const Mat a = layer_norm_rows(h, P(pre + "ln1.g"), P(pre + "ln1.b"));
    const Mat q = dense(a, P(pre + "attn.q.w"), P(pre + "attn.q.b"));
    const Mat k = dense(a, P(pre + "attn.k.w"), P(pre + "attn.k.b"));
    const Mat v = dense(a, P(pre + "attn.v.w"), P(pre + "attn.v.b"));
    Mat ctx(T, H);
    for (std::size_t hh = 0; hh < heads; ++hh) {
      for (std::size_t i = 0; i < T; ++i) {
        std::vector<double> s(T);
        for (std::size_t j = 0; j < T; ++j) {
          double dot = 0.0;
          for (std::size_t c = hh * hd; c < (hh + 1) * hd; ++c) dot += q(i, c) * k(j, c);
          s[j] = dot / std::sqrt(static_cast<double>(hd));
        }
        const auto w = softmax_vec(s);
        for (std::size_t j = 0; j < T; ++j)
          for (std::size_t c = hh * hd; c < (hh + 1) * hd; ++c) ctx(i, c) += w[j] * v(j, c);
      }
    }
    const Mat o = dense(ctx, P(pre + "attn.o.w"), P(pre + "attn.o.b"));
    for (std::size_t e = 0; e < h.v.size(); ++e) h.v[e] += o.v[e];
    const Mat f0 = layer_norm_rows(h, P(pre + "ln2.g"), P(pre + "ln2.b"));
    Mat f1 = dense(f0, P(pre + "ff.1.w"), P(pre + "ff.1.b"));
    for (double& e : f1.v) e = std::max(e, 0.0);
    const Mat f2 = dense(f1, P(pre + "ff.2.w"), P(pre + "ff.2.b"));
    for (std::size_t e = 0; e < h.v.size(); ++e) h.v[e] += f2.v[e];
  }
  const auto pooled = oracle_attention_pool(h, P("pool.v"), p.at("pool.b").values()[0]);
  return {h, oracle_heads(p, cfg, pooled)};
}

// One LSTM direction with gates laid out [input | forget | candidate | output].
Mat oracle_lstm(const Mat& x, const Mat& w, const Mat& b, std::size_t units, bool reverse) {
  Mat out(x.rows, units);
  std::vector<double> h(units, 0.0), c(units, 0.0);
  for (std::size_t s = 0; s < x.rows; ++s) {
    const std::size_t t = reverse ? x.rows - 1 - s : s;
    std::vector<double> z(x.cols + units);
    for (std::size_t k = 0; k < x.cols; ++k) z[k] = x(t, k);
    for (std::size_t k = 0; k < units; ++k) z[x.cols + k] = h[k];
    std::vector<double> g(4 * units);
    for (std::size_t j = 0; j < 4 * units; ++j) {
      g[j] = b.v[j];
      for (std::size_t k = 0; k < z.size(); ++k) g[j] += z[k] * w(k, j);
    }
    for (std::size_t u = 0; u < units; ++u) {
      const double ig = sigmoid(g[u]), fg = sigmoid(g[units + u]);
      const double cand = std::tanh(g[2 * units + u]), og = sigmoid(g[3 * units + u]);
      c[u] = fg * c[u] + ig * cand;
      h[u] = og * std::tanh(c[u]);
      out(t, u) = h[u];
    }
  }
  return out;
}

OracleOut oracle_bilstm(const DownstreamModel& model, const EmbeddingSequence& seq) {
  const ModelConfig& cfg = model.config();
  const ParameterMap& p = model.parameters();
  const std::size_t u = cfg.bilstm_units_per_dir;
  Mat x = from_sequence(seq);
  for (std::size_t l = 0; l < cfg.n_bilstm_layers; ++l) {
    const std::string pre = "enc." + std::to_string(l) + ".";
    const Mat f = oracle_lstm(x, from_tensor(p.at(pre + "fwd.w")), from_tensor(p.at(pre + "fwd.b")), u, false);
    const Mat b = oracle_lstm(x, from_tensor(p.at(pre + "bwd.w")), from_tensor(p.at(pre + "bwd.b")), u, true);
    Mat next(x.rows, 2 * u);
    for (std::size_t t = 0; t < x.rows; ++t)
      for (std::size_t k = 0; k < u; ++k) {
        next(t, k) = f(t, k);
        next(t, u + k) = b(t, k);
      }
    x = next;
  }
  const auto pooled = oracle_attention_pool(x, from_tensor(p.at("pool.v")), p.at("pool.b").values()[0]);
  return {x, oracle_heads(p, cfg, pooled)};
}

std::vector<double> oracle_mlp(const DownstreamModel& model, const std::vector<double>& pooled) {
  const ParameterMap& p = model.parameters();
  Mat x(1, pooled.size());
  x.v = pooled;
  for (const char* layer : {"mlp.0.", "mlp.1."}) {
    x = dense(x, from_tensor(p.at(std::string(layer) + "w")), from_tensor(p.at(std::string(layer) + "b")));
    for (double& e : x.v) e = std::max(e, 0.0);
  }
  return oracle_heads(p, model.config(), x.v);
}

ModelConfig small_config(Variant variant, std::size_t dim) {
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.input_dim = dim;
  cfg.dropout_p = 0.0;
  return cfg;
}

DownstreamModel roundtripped(const DownstreamModel& model) { return decode_checkpoint(encode_checkpoint(model)); }

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

void expect_close(const Tensor& a, const Mat& b, double tol) {
  ASSERT_EQ(a.size(), b.v.size());
  for (std::size_t i = 0; i < b.v.size(); ++i) EXPECT_NEAR(a.values()[i], b.v[i], tol) << "index " << i;
}

EmbeddingSequence permuted(const EmbeddingSequence& seq, const std::vector<std::size_t>& perm) {
  std::vector<float> data;
  for (std::size_t t : perm) {
    const auto row = seq.row(t);
    data.insert(data.end(), row.begin(), row.end());
  }
  return EmbeddingSequence(seq.frames(), seq.dim(), std::move(data), seq.frame_step_ms(), seq.source_tag());
}

// ---------------------------------------------------------------------------

TEST(ModelInit, SameSeedSameParameters) {
  const auto cfg = small_config(Variant::kFramewiseTransformer, 16);
  EXPECT_EQ(encode_checkpoint(init_model(cfg, 3)), encode_checkpoint(init_model(cfg, 3)));
  EXPECT_NE(encode_checkpoint(init_model(cfg, 3)), encode_checkpoint(init_model(cfg, 4)));
}

TEST(ModelInit, ProjectionShapeAndBiasRules) {
  ModelConfig cfg = small_config(Variant::kFramewiseTransformer, 2048);
  const auto model = init_model(cfg, 0);
  EXPECT_EQ(model.parameter("proj.w").shape(), (Shape{2048, 64}));
  const double limit = std::sqrt(6.0 / (2048.0 + 64.0));
  for (double w : model.parameter("proj.w").values()) EXPECT_LE(std::abs(w), limit);
  for (const auto& [name, t] : model.parameters()) {
    if (name.ends_with(".b") || name == "pool.b") {
      for (double v : t.values()) EXPECT_EQ(v, 0.0) << name;
    }
  }

  const auto lstm = init_model(small_config(Variant::kFramewiseBilstm, 8), 0);
  const std::size_t u = lstm.config().bilstm_units_per_dir;
  const Tensor& b = lstm.parameter("enc.0.fwd.b");
  for (std::size_t j = 0; j < 4 * u; ++j) EXPECT_EQ(b.values()[j], (j >= u && j < 2 * u) ? 1.0 : 0.0);
}

TEST(Transformer, HiddenAndPredictionShapes) {
  std::mt19937_64 rng(1);
  ModelConfig cfg = small_config(Variant::kFramewiseTransformer, 2048);
  cfg.tasks = {kAllTasks.begin(), kAllTasks.end()};
  const auto model = init_model(cfg, 1);
  const auto out = forward_framewise_transformer(model, testing::random_sequence(rng, 37, 2048));
  EXPECT_EQ(out.hidden.shape(), (Shape{37, 64}));
  EXPECT_EQ(out.predictions.values.size(), 6u);
}

TEST(Transformer, MatchesLoopOracle) {
  std::mt19937_64 rng(2);
  for (std::size_t heads : {1u, 2u}) {
    ModelConfig cfg = small_config(Variant::kFramewiseTransformer, 8);
    cfg.n_heads = heads;
    cfg.tasks = {Task::kMos, Task::kSnr};
    const auto model = roundtripped(init_model(cfg, 7 + heads));
    const auto seq = testing::random_sequence(rng, 4, 8);
    const auto out = forward_framewise_transformer(model, seq);
    const auto ref = oracle_transformer(model, seq);
    expect_close(out.hidden, ref.hidden, 1e-6);
    expect_close(out.predictions.values, ref.predictions, 1e-6);
  }
}

TEST(Transformer, WithoutPositionalEncodingIsPermutationEquivariant) {
  std::mt19937_64 rng(3);
  ModelConfig cfg = small_config(Variant::kFramewiseTransformer, 12);
  cfg.positional_encoding = false;
  const auto model = init_model(cfg, 5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t T = testing::uniform_index(rng, 2, 9);
    const auto seq = testing::random_sequence(rng, T, 12);
    std::vector<std::size_t> perm(T);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto a = forward_framewise_transformer(model, seq);
    const auto b = forward_framewise_transformer(model, permuted(seq, perm));
    expect_close(a.predictions.values, b.predictions.values, 1e-6);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < 64; ++c) EXPECT_NEAR(b.hidden.at(t, c), a.hidden.at(perm[t], c), 1e-9);
  }
}

TEST(Transformer, PositionalEncodingBreaksPermutationInvariance) {
  std::mt19937_64 rng(4);
  const auto model = init_model(small_config(Variant::kFramewiseTransformer, 12), 5);
  const auto seq = testing::random_sequence(rng, 6, 12);
  const auto a = forward_framewise_transformer(model, seq);
  const auto b = forward_framewise_transformer(model, permuted(seq, {5, 4, 3, 2, 1, 0}));
  EXPECT_GT(std::abs(a.predictions.values[0] - b.predictions.values[0]), 1e-9);
}

TEST(Transformer, PositionalTableLayout) {
  const Tensor pe = sinusoidal_positional_encoding(3, 4);
  EXPECT_DOUBLE_EQ(pe.at(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(pe.at(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(pe.at(1, 0), std::sin(1.0));
  EXPECT_DOUBLE_EQ(pe.at(2, 2), std::sin(2.0 / 100.0));
  EXPECT_DOUBLE_EQ(pe.at(2, 3), std::cos(2.0 / 100.0));
}

TEST(Bilstm, HiddenShape) {
  std::mt19937_64 rng(5);
  const auto model = init_model(small_config(Variant::kFramewiseBilstm, 64), 1);
  const auto out = forward_framewise_bilstm(model, testing::random_sequence(rng, 11, 64));
  EXPECT_EQ(out.hidden.shape(), (Shape{11, 64}));
}

TEST(Bilstm, ZeroWeightsGiveZeroHidden) {
  std::mt19937_64 rng(6);
  auto model = init_model(small_config(Variant::kFramewiseBilstm, 8), 1);
  for (auto& [name, t] : model.parameters()) std::fill(t.values().begin(), t.values().end(), 0.0);
  const auto out = forward_framewise_bilstm(model, testing::random_sequence(rng, 5, 8));
  for (double v : out.hidden.values()) EXPECT_EQ(v, 0.0);
}

TEST(Bilstm, SingleStepCellByHand) {
  // One layer, one unit per direction, one frame of width one.
  ModelConfig cfg = small_config(Variant::kFramewiseBilstm, 1);
  cfg.n_bilstm_layers = 1;
  cfg.bilstm_units_per_dir = 1;
  cfg.hidden_dim = 2;
  auto model = init_model(cfg, 0);
  auto set = [&](const std::string& n, std::vector<double> v) {
    std::copy(v.begin(), v.end(), model.parameters().at(n).values().begin());
  };
  // rows: [x, h_prev], cols: [i, f, g, o]
  set("enc.0.fwd.w", {0.5, -0.25, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0});
  set("enc.0.fwd.b", {0.1, 1.0, -0.2, 0.3});
  set("enc.0.bwd.w", {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
  set("enc.0.bwd.b", {0.0, 0.0, 0.0, 0.0});
  const EmbeddingSequence seq(1, 1, {2.0f}, 160.0f, SourceTag::kOther);
  const double i = sigmoid(0.5 * 2 + 0.1);
  const double g = std::tanh(1.0 * 2 - 0.2);
  const double o = sigmoid(2.0 * 2 + 0.3);
  const double expected = o * std::tanh(i * g);
  const auto out = forward_framewise_bilstm(model, seq);
  EXPECT_NEAR(out.hidden.at(0, 0), expected, 1e-12);
  EXPECT_NEAR(out.hidden.at(0, 1), 0.5 * std::tanh(0.5 * 0.0), 1e-12);
}

TEST(Bilstm, MatchesLoopOracle) {
  std::mt19937_64 rng(7);
  ModelConfig cfg = small_config(Variant::kFramewiseBilstm, 8);
  cfg.tasks = {Task::kSti, Task::kT60, Task::kMos};
  const auto model = roundtripped(init_model(cfg, 9));
  const auto seq = testing::random_sequence(rng, 5, 8);
  const auto out = forward_framewise_bilstm(model, seq);
  const auto ref = oracle_bilstm(model, seq);
  expect_close(out.hidden, ref.hidden, 1e-9);
  expect_close(out.predictions.values, ref.predictions, 1e-9);
}

TEST(AttentionPool, SingleFrameReturnsThatFrame) {
  std::mt19937_64 rng(8);
  ad::Graph g(false);
  const Tensor h = testing::random_tensor(rng, 1, 6);
  const Tensor out = attention_pool(g.constant(h), g.constant(testing::random_tensor(rng, 6, 1)),
                                    g.constant(Tensor(Shape{1}, {0.3})))
                         .value();
  for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(out.values()[c], h.values()[c], 1e-15);
}

TEST(AttentionPool, ZeroScoreVectorGivesMean) {
  std::mt19937_64 rng(9);
  ad::Graph g(false);
  const Tensor h = testing::random_tensor(rng, 7, 3);
  const Tensor out = attention_pool(g.constant(h), g.constant(Tensor::matrix(3, 1)),
                                    g.constant(Tensor(Shape{1}, {1.5})))
                         .value();
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (std::size_t t = 0; t < 7; ++t) mean += h.at(t, c) / 7.0;
    EXPECT_NEAR(out.values()[c], mean, 1e-12);
  }
}

TEST(AttentionPool, OracleAndConvexHull) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t T = testing::uniform_index(rng, 1, 20), H = testing::uniform_index(rng, 1, 10);
    ad::Graph g(false);
    const Tensor h = testing::random_tensor(rng, T, H, -3.0, 3.0);
    const Tensor v = testing::random_tensor(rng, H, 1, -2.0, 2.0);
    const double b = testing::random_vector(rng, 1)[0];
    const Tensor out = attention_pool(g.constant(h), g.constant(v), g.constant(Tensor(Shape{1}, {b}))).value();
    const auto ref = oracle_attention_pool(from_tensor(h), from_tensor(v), b);
    for (std::size_t c = 0; c < H; ++c) {
      EXPECT_NEAR(out.values()[c], ref[c], 1e-9);
      double lo = h.at(0, c), hi = h.at(0, c);
      for (std::size_t t = 0; t < T; ++t) lo = std::min(lo, h.at(t, c)), hi = std::max(hi, h.at(t, c));
      EXPECT_GE(out.values()[c], lo - 1e-12);
      EXPECT_LE(out.values()[c], hi + 1e-12);
    }
  }
}

TEST(UtteranceMlp, LayerShapes) {
  const auto model = init_model(small_config(Variant::kUtteranceMlp, 1024), 0);
  EXPECT_EQ(model.parameter("mlp.0.w").shape(), (Shape{2048, 1024}));
  EXPECT_EQ(model.parameter("mlp.1.w").shape(), (Shape{1024, 1024}));
  EXPECT_EQ(model.parameter("head." + std::string(task_name(Task::kMos)) + ".w").shape(), (Shape{1024, 1}));
}

TEST(UtteranceMlp, ZeroWeightsPredictHeadBias) {
  std::mt19937_64 rng(11);
  auto model = init_model(small_config(Variant::kUtteranceMlp, 8), 0);
  for (auto& [name, t] : model.parameters()) std::fill(t.values().begin(), t.values().end(), 0.0);
  UtteranceEmbedding emb{testing::random_vector(rng, 16), SourceTag::kOther};
  EXPECT_EQ(forward_utterance_mlp(model, emb)[Task::kMos], 0.0);
}

TEST(UtteranceMlp, MatchesLoopOracle) {
  std::mt19937_64 rng(12);
  ModelConfig cfg = small_config(Variant::kUtteranceMlp, 8);
  cfg.tasks = {kAllTasks.begin(), kAllTasks.end()};
  auto model = roundtripped(init_model(cfg, 3));
  for (auto& [name, t] : model.parameters())
    if (name.ends_with(".b")) t.values()[0] = 0.05;  // exercise the bias path
  const auto seq = testing::random_sequence(rng, 6, 8);
  const auto pooled = pool_mean_max(seq);
  expect_close(forward_utterance_mlp(model, pooled).values, oracle_mlp(model, pooled.vector), 1e-9);
  // The sequence entry point pools in-graph and must agree with the explicit path.
  expect_close(predict(model, seq).values, oracle_mlp(model, pooled.vector), 1e-9);
}

TEST(UtteranceMlp, WrongEmbeddingLengthIsShapeError) {
  const auto model = init_model(small_config(Variant::kUtteranceMlp, 8), 0);
  try {
    forward_utterance_mlp(model, UtteranceEmbedding{std::vector<double>(10, 0.0), SourceTag::kOther});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShape);
  }
}

TEST(Models, InputDimensionMismatchIsShapeError) {
  std::mt19937_64 rng(13);
  for (Variant v : {Variant::kFramewiseTransformer, Variant::kFramewiseBilstm, Variant::kUtteranceMlp}) {
    const auto model = init_model(small_config(v, 8), 0);
    try {
      predict(model, testing::random_sequence(rng, 3, 9));
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kShape);
    }
  }
}

TEST(Models, ExtremeInputsStayFinite) {
  std::mt19937_64 rng(14);
  for (Variant v : {Variant::kFramewiseTransformer, Variant::kFramewiseBilstm, Variant::kUtteranceMlp}) {
    const auto model = init_model(small_config(v, 16), 2);
    const auto preds = predict(model, testing::random_sequence(rng, 8, 16, 160.0f, 1000.0f));
    for (double p : preds.values) EXPECT_TRUE(std::isfinite(p));
  }
}

TEST(Models, ParameterTableMatchesRuntimeEnumeration) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 40; ++trial) {
    ModelConfig cfg;
    cfg.variant = static_cast<Variant>(testing::uniform_index(rng, 0, 2));
    cfg.input_dim = testing::uniform_index(rng, 1, 40);
    cfg.n_heads = testing::uniform_index(rng, 1, 4);
    cfg.hidden_dim = cfg.n_heads * testing::uniform_index(rng, 1, 8);
    cfg.ff_dim = testing::uniform_index(rng, 1, 32);
    cfg.n_transformer_layers = testing::uniform_index(rng, 1, 3);
    cfg.n_bilstm_layers = testing::uniform_index(rng, 1, 3);
    cfg.bilstm_units_per_dir = testing::uniform_index(rng, 1, 8);
    if (cfg.variant == Variant::kFramewiseBilstm) cfg.hidden_dim = 2 * cfg.bilstm_units_per_dir;
    cfg.tasks.clear();
    for (Task t : kAllTasks)
      if (testing::uniform_index(rng, 0, 1) == 1) cfg.tasks.push_back(t);
    if (cfg.tasks.empty()) cfg.tasks.push_back(Task::kMos);
    const auto table = describe_parameters(cfg);
    const auto model = init_model(cfg, trial);
    EXPECT_EQ(table.total, model.parameter_count());
    ASSERT_EQ(table.tensors.size(), model.parameters().size());
    for (const auto& spec : table.tensors) {
      EXPECT_EQ(model.parameter(spec.name).shape(), spec.shape);
      EXPECT_EQ(model.parameter(spec.name).size(), spec.count);
    }
  }
}

TEST(Models, ReferenceParameterCounts) {
  const auto table = describe_parameters(small_config(Variant::kFramewiseTransformer, 2048));
  std::size_t proj = 0;
  for (const auto& s : table.tensors)
    if (s.name.starts_with("proj.")) proj += s.count;
  EXPECT_EQ(proj, 131136u);
  const double with_encoder = static_cast<double>(table.total) + 5.0e6;
  EXPECT_NEAR(with_encoder, 5.20e6, 0.05 * 5.20e6);

  ModelConfig six = small_config(Variant::kFramewiseTransformer, 2048);
  six.tasks = {kAllTasks.begin(), kAllTasks.end()};
  EXPECT_EQ(describe_parameters(six).total - table.total, 5u * 65u);
}

TEST(Checkpoint, RoundtripIsBitExact) {
  std::mt19937_64 rng(16);
  testing::TempDir dir("ckpt");
  for (Variant v : {Variant::kFramewiseTransformer, Variant::kFramewiseBilstm, Variant::kUtteranceMlp}) {
    ModelConfig cfg = small_config(v, 10);
    cfg.tasks = {Task::kSnr, Task::kC50};
    const auto model = init_model(cfg, 4);
    const auto path = dir / "m.sqm";
    save_checkpoint(model, path);
    const auto loaded = load_checkpoint(path);
    EXPECT_EQ(loaded.config(), model.config());
    for (const auto& [name, t] : model.parameters()) {
      const auto& u = loaded.parameter(name);
      EXPECT_TRUE(std::equal(t.values().begin(), t.values().end(), u.values().begin())) << name;
    }
    const auto seq = testing::random_sequence(rng, 5, 10);
    EXPECT_EQ(predict(model, seq).values, predict(loaded, seq).values);
  }
}

ErrorKind decode_error(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::kContract;
}

TEST(Checkpoint, CorruptionIsDetected) {
  const auto bytes = encode_checkpoint(init_model(small_config(Variant::kUtteranceMlp, 4), 0));
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_EQ(decode_error(truncated), ErrorKind::kIntegrity);
  auto extended = bytes;
  extended.push_back(0);
  EXPECT_EQ(decode_error(extended), ErrorKind::kIntegrity);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(decode_error(magic), ErrorKind::kFormat);
  auto version = bytes;
  version[4] = 9;
  EXPECT_EQ(decode_error(version), ErrorKind::kVersion);
}

TEST(Checkpoint, TaskSetMismatch) {
  testing::TempDir dir("ckpt_tasks");
  ModelConfig cfg = small_config(Variant::kUtteranceMlp, 4);
  save_checkpoint(init_model(cfg, 0), dir / "mos.sqm");
  EXPECT_NO_THROW(load_checkpoint(dir / "mos.sqm", {Task::kMos}));
  try {
    load_checkpoint(dir / "mos.sqm", {kAllTasks.begin(), kAllTasks.end()});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kTaskMismatch);
  }
}

TEST(Checkpoint, ConstructorRejectsWrongShapes) {
  auto model = init_model(small_config(Variant::kUtteranceMlp, 4), 0);
  ParameterMap params = model.parameters();
  params.at("mlp.0.w") = Tensor::matrix(3, 4);
  EXPECT_THROW(DownstreamModel(model.config(), params), Error);
}

class VariantGradients : public ::testing::TestWithParam<Variant> {};

TEST_P(VariantGradients, FiniteDifferencesAgree) {
  std::mt19937_64 rng(17);
  ModelConfig cfg = small_config(GetParam(), 6);
  cfg.hidden_dim = 8;
  cfg.ff_dim = 8;
  cfg.n_heads = 2;
  cfg.bilstm_units_per_dir = 3;
  if (cfg.variant == Variant::kFramewiseBilstm) cfg.hidden_dim = 6;
  cfg.tasks = {Task::kMos, Task::kSnr};
  auto model = init_model(cfg, 11);
  // Nonzero biases so every bias gradient is exercised away from the init point.
  for (auto& [name, t] : model.parameters())
    for (double& v : t.values())
      if (v == 0.0) v = testing::random_vector(rng, 1, -0.1, 0.1)[0];
  const auto seq = testing::random_sequence(rng, 4, 6);
  const Tensor target(Shape{1, 2}, {0.4, -0.7});
  auto params = model.parameter_list();
  const auto result = finite_difference_check(
      [&](ad::Graph& g) {
        BoundModel bound(g, model);
        ad::Var diff = ad::sub(forward(bound, seq).predictions, g.constant(target));
        return ad::sum(ad::mul(diff, diff));
      },
      params);
  EXPECT_LT(result.max_relative_error, 1e-4);
  EXPECT_EQ(result.coordinates, model.parameter_count());
}

INSTANTIATE_TEST_SUITE_P(AllVariants, VariantGradients,
                         ::testing::Values(Variant::kFramewiseTransformer, Variant::kFramewiseBilstm,
                                           Variant::kUtteranceMlp));

}  // namespace
}  // namespace sqe
