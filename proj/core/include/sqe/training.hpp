// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sqe/adam.hpp"
#include "sqe/features.hpp"
#include "sqe/model.hpp"
#include "sqe/tasks.hpp"

namespace sqe {

struct TrainConfig {
  std::array<double, kNumTasks> task_weights = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  AdamOptions adam;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t max_steps = 0;  // 0: no step budget
  std::size_t patience = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Example {
  std::string id;
  EmbeddingSequence features;
  TaskLabels labels;
};

/// Weighted sum over configured tasks of the MSE over samples whose label is
/// present, in model units. A task with no present label contributes 0.
/// Throws ErrorKind::kEmptySupervision when no configured task has any label.
double multitask_loss(const std::vector<PredictionSet>& preds, const std::vector<TaskLabels>& labels,
                      const ModelConfig& model_config, const TrainConfig& cfg);

/// Graph form: `preds` is B x n_tasks in config task order.
ad::Var multitask_loss(ad::Graph& graph, ad::Var preds, const std::vector<TaskLabels>& labels,
                       const ModelConfig& model_config, const TrainConfig& cfg);

/// Unweighted per-task masked MSE in model units over a dataset (absent tasks omitted).
std::vector<std::pair<Task, double>> task_losses(const DownstreamModel& model,
                                                 const std::vector<Example>& rows);

/// Weighted validation loss with dropout disabled.
double dataset_loss(const DownstreamModel& model, const std::vector<Example>& rows,
                    const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double best_so_far = 0.0;  // lowest validation loss up to and including this epoch
  bool improved = false;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainResult {
  DownstreamModel model;  // best-validation parameters
  std::vector<EpochRecord> history;
  std::size_t steps = 0;
  double best_val_loss = 0.0;
};

/// Seeded per-epoch shuffling, Adam updates, best-validation selection and early
/// stopping. Validation falls back to the training rows when `val` is empty.
TrainResult train(DownstreamModel model, const std::vector<Example>& train_rows,
                  const std::vector<Example>& val_rows, const TrainConfig& cfg);

void write_history_csv(const std::vector<EpochRecord>& history, std::ostream& out);

/// Per-task (prediction, label) pairs in natural units, for present labels only.
struct EvalPairs {
  std::vector<Task> tasks;
  std::vector<std::vector<double>> predictions;
  std::vector<std::vector<double>> labels;

  std::size_t index_of(Task task) const;
};

EvalPairs evaluate(const DownstreamModel& model, const std::vector<Example>& rows);

}  // namespace sqe
