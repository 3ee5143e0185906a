// SPDX-License-Identifier: Apache-2.0
#include "sqe/training.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "sqe/error.hpp"
#include "sqe/ops.hpp"

namespace sqe {
namespace {

std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

const Affine& scaling_of(const ModelConfig& cfg, Task t) {
  return cfg.target_scaling[static_cast<std::size_t>(t)];
}

double weight_of(const TrainConfig& cfg, Task t) { return cfg.task_weights[static_cast<std::size_t>(t)]; }

// Per configured task: number of present labels in the batch.
std::vector<std::size_t> present_counts(const std::vector<TaskLabels>& labels, const ModelConfig& model_config) {
  std::vector<std::size_t> counts(model_config.tasks.size(), 0);
  for (const TaskLabels& l : labels) {
    for (std::size_t k = 0; k < model_config.tasks.size(); ++k) {
      if (l[model_config.tasks[k]]) ++counts[k];
    }
  }
  return counts;
}

void require_supervision(const std::vector<std::size_t>& counts) {
  if (std::all_of(counts.begin(), counts.end(), [](std::size_t n) { return n == 0; })) {
    throw Error(ErrorKind::kEmptySupervision, "no configured task has a label in this batch");
  }
}

void check_rows(const ModelConfig& cfg, const std::vector<Example>& rows, const char* what) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].features.dim() != cfg.input_dim) {
      throw Error(ErrorKind::kShape, std::string(what) + " row " + std::to_string(i) + " ('" + rows[i].id +
                                         "') has D=" + std::to_string(rows[i].features.dim()) +
                                         ", model expects D=" + std::to_string(cfg.input_dim));
    }
  }
}

bool has_supervision(const Example& row, const ModelConfig& cfg) {
  return std::any_of(cfg.tasks.begin(), cfg.tasks.end(), [&](Task t) { return row.labels[t].has_value(); });
}

}  // namespace

void TrainConfig::validate() const {
  if (std::none_of(task_weights.begin(), task_weights.end(), [](double w) { return w > 0.0; })) {
    throw Error(ErrorKind::kArgument, "train config: at least one task weight must be positive");
  }
  if (std::any_of(task_weights.begin(), task_weights.end(), [](double w) { return !(w >= 0.0); })) {
    throw Error(ErrorKind::kArgument, "train config: task weights must be non-negative");
  }
  if (patience < 1) throw Error(ErrorKind::kArgument, "train config: patience must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::kArgument, "train config: batch_size must be >= 1");
  if (!(adam.lr >= 0.0)) throw Error(ErrorKind::kArgument, "train config: lr must be >= 0");
}

double multitask_loss(const std::vector<PredictionSet>& preds, const std::vector<TaskLabels>& labels,
                      const ModelConfig& model_config, const TrainConfig& cfg) {
  if (preds.empty()) throw Error(ErrorKind::kArgument, "multitask_loss: empty batch");
  if (preds.size() != labels.size()) {
    throw Error(ErrorKind::kShape, "multitask_loss: " + std::to_string(preds.size()) + " predictions for " +
                                       std::to_string(labels.size()) + " label rows");
  }
  const auto counts = present_counts(labels, model_config);
  require_supervision(counts);
  double loss = 0.0;
  for (std::size_t k = 0; k < model_config.tasks.size(); ++k) {
    if (counts[k] == 0) continue;
    const Task t = model_config.tasks[k];
    double sse = 0.0;
    for (std::size_t b = 0; b < preds.size(); ++b) {
      if (!labels[b][t]) continue;
      const double diff = preds[b][t] - scaling_of(model_config, t).to_model(*labels[b][t]);
      sse += diff * diff;
    }
    loss += weight_of(cfg, t) * sse / static_cast<double>(counts[k]);
  }
  return loss;
}

ad::Var multitask_loss(ad::Graph& graph, ad::Var preds, const std::vector<TaskLabels>& labels,
                       const ModelConfig& model_config, const TrainConfig& cfg) {
  const Tensor& p = preds.value();
  const std::size_t batch = labels.size();
  const std::size_t n_tasks = model_config.tasks.size();
  if (batch == 0) throw Error(ErrorKind::kArgument, "multitask_loss: empty batch");
  if (p.rows() != batch || p.cols() != n_tasks) {
    throw Error(ErrorKind::kShape, "multitask_loss: predictions " + shape_string(p.shape()) + " for " +
                                       std::to_string(batch) + " rows and " + std::to_string(n_tasks) +
                                       " tasks");
  }
  const auto counts = present_counts(labels, model_config);
  require_supervision(counts);
  Tensor targets = Tensor::matrix(batch, n_tasks);
  Tensor weights = Tensor::matrix(batch, n_tasks);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t k = 0; k < n_tasks; ++k) {
      const Task t = model_config.tasks[k];
      if (!labels[b][t]) continue;
      targets.at(b, k) = scaling_of(model_config, t).to_model(*labels[b][t]);
      weights.at(b, k) = weight_of(cfg, t) / static_cast<double>(counts[k]);
    }
  }
  ad::Var diff = ad::sub(preds, graph.constant(std::move(targets)));
  return ad::sum(ad::mul(ad::mul(diff, diff), graph.constant(std::move(weights))));
}

std::vector<std::pair<Task, double>> task_losses(const DownstreamModel& model, const std::vector<Example>& rows) {
  const ModelConfig& cfg = model.config();
  std::vector<double> sse(cfg.tasks.size(), 0.0);
  std::vector<std::size_t> n(cfg.tasks.size(), 0);
  for (const Example& row : rows) {
    const PredictionSet p = predict(model, row.features);
    for (std::size_t k = 0; k < cfg.tasks.size(); ++k) {
      const Task t = cfg.tasks[k];
      if (!row.labels[t]) continue;
      const double diff = p.values[k] - scaling_of(cfg, t).to_model(*row.labels[t]);
      sse[k] += diff * diff;
      ++n[k];
    }
  }
  std::vector<std::pair<Task, double>> out;
  for (std::size_t k = 0; k < cfg.tasks.size(); ++k) {
    if (n[k] > 0) out.emplace_back(cfg.tasks[k], sse[k] / static_cast<double>(n[k]));
  }
  return out;
}

double dataset_loss(const DownstreamModel& model, const std::vector<Example>& rows, const TrainConfig& cfg) {
  std::vector<PredictionSet> preds;
  std::vector<TaskLabels> labels;
  for (const Example& row : rows) {
    preds.push_back(predict(model, row.features));
    labels.push_back(row.labels);
  }
  return multitask_loss(preds, labels, model.config(), cfg);
}

TrainResult train(DownstreamModel model, const std::vector<Example>& train_rows,
                  const std::vector<Example>& val_rows, const TrainConfig& cfg) {
  cfg.validate();
  if (train_rows.empty()) throw Error(ErrorKind::kArgument, "train: empty training set");
  const ModelConfig& mcfg = model.config();
  check_rows(mcfg, train_rows, "training");
  check_rows(mcfg, val_rows, "validation");
  const std::vector<Example>& selection_rows = val_rows.empty() ? train_rows : val_rows;

  model.set_requires_grad(true);
  std::vector<Tensor*> params = model.parameter_list();
  AdamState adam{cfg.adam};
  std::mt19937_64 rng(cfg.seed);

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  ParameterMap best_params = model.parameters();
  std::size_t epochs_without_improvement = 0;

  std::vector<std::size_t> order(train_rows.size());
  std::iota(order.begin(), order.end(), 0);
  bool budget_exhausted = false;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs && !budget_exhausted; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0, batch_index = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<TaskLabels> labels;
      for (std::size_t i = start; i < end; ++i) {
        if (has_supervision(train_rows[order[i]], mcfg)) labels.push_back(train_rows[order[i]].labels);
      }
      if (labels.empty()) continue;

      model.zero_grad();
      ad::Graph graph(true);
      BoundModel bound(graph, model);
      ForwardOptions opts{true, &rng};
      std::vector<ad::Var> rows;
      for (std::size_t i = start; i < end; ++i) {
        const Example& ex = train_rows[order[i]];
        if (!has_supervision(ex, mcfg)) continue;
        rows.push_back(forward(bound, ex.features, opts).predictions);
      }
      ad::Var preds = rows.size() == 1 ? rows.front() : ad::concat(rows, 0);
      ad::Var loss = multitask_loss(graph, preds, labels, mcfg, cfg);
      const double loss_value = loss.value()[0];
      if (!std::isfinite(loss_value)) {
        throw Error(ErrorKind::kNumeric, "non-finite training loss at epoch " + std::to_string(epoch) +
                                             ", batch " + std::to_string(batch_index));
      }
      graph.backward(loss);
      adam_step(adam, params);
      loss_sum += loss_value;
      ++batches;
      ++result.steps;
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) {
        budget_exhausted = true;
        break;
      }
    }

    const double val_loss = dataset_loss(model, selection_rows, cfg);
    if (!std::isfinite(val_loss)) {
      throw Error(ErrorKind::kNumeric, "non-finite validation loss at epoch " + std::to_string(epoch));
    }
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
    record.val_loss = val_loss;
    record.improved = val_loss < result.best_val_loss;
    if (record.improved) {
      result.best_val_loss = val_loss;
      best_params = model.parameters();
      epochs_without_improvement = 0;
    } else {
      ++epochs_without_improvement;
    }
    record.best_so_far = result.best_val_loss;
    result.history.push_back(record);
    if (epochs_without_improvement >= cfg.patience) break;
  }

  for (auto& [name, tensor] : best_params) {
    tensor.requires_grad = false;
    tensor.grad.clear();
  }
  result.model = DownstreamModel(mcfg, std::move(best_params));
  return result;
}

void write_history_csv(const std::vector<EpochRecord>& history, std::ostream& out) {
  out << "epoch,train_loss,val_loss,best_so_far\n";
  for (const EpochRecord& r : history) {
    out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss) << ','
        << format_double(r.best_so_far) << '\n';
  }
}

std::size_t EvalPairs::index_of(Task task) const {
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i] == task) return i;
  }
  throw Error(ErrorKind::kArgument, "no pairs for task " + std::string(task_name(task)));
}

EvalPairs evaluate(const DownstreamModel& model, const std::vector<Example>& rows) {
  if (rows.empty()) throw Error(ErrorKind::kArgument, "evaluate: no rows");
  const ModelConfig& cfg = model.config();
  check_rows(cfg, rows, "evaluation");
  EvalPairs out;
  out.tasks = cfg.tasks;
  out.predictions.resize(cfg.tasks.size());
  out.labels.resize(cfg.tasks.size());
  for (const Example& row : rows) {
    const PredictionSet natural = to_natural_units(predict(model, row.features), cfg);
    for (std::size_t k = 0; k < cfg.tasks.size(); ++k) {
      const Task t = cfg.tasks[k];
      if (!row.labels[t]) continue;
      out.predictions[k].push_back(natural.values[k]);
      out.labels[k].push_back(*row.labels[t]);
    }
  }
  return out;
}

}  // namespace sqe
