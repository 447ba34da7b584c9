#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "tpl/config.hpp"
#include "tpl/data.hpp"
#include "tpl/hat_mlp.hpp"
#include "tpl/replay_buffer.hpp"
#include "tpl/rng.hpp"
#include "tpl/run.hpp"

namespace tpl {

// What one minibatch looked like; emitted before the gradient step.
struct BatchAudit {
  std::size_t task_index = 0;
  std::size_t epoch = 0;
  std::size_t batch = 0;  // 1-based within the epoch
  double s = 1.0;
  std::size_t class_count = 0;
  std::size_t softmax_width = 0;
  std::vector<int> targets;
  std::vector<bool> from_buffer;
  std::vector<int> labels;  // global labels of the samples
};

struct TrainHooks {
  std::function<void(const BatchAudit&)> on_batch;
  // Called after each task is trained and its checkpoint recorded.
  std::function<void(const RunArtifacts&)> on_task_complete;
};

struct TaskTrainResult {
  TaskStats stats;
  std::vector<double> epoch_losses;
};

// Trains task `task_index` (0-based) on its training split plus every buffer
// sample (relabelled to the O index), then consolidates its mask. Appends a
// new head to `heads`.
TaskTrainResult train_task(HatMlp& net, std::vector<TaskHead>& heads, const TaskStream& stream,
                           std::size_t task_index, const ReplayBuffer& buffer,
                           const TrainConfig& cfg, const Rng& rng,
                           const TrainHooks* hooks = nullptr);

// Class centroids and the shared within-class covariance (scatter / n) of a
// feature matrix; betas are left at 1.
TaskStats fit_shared_gaussian(const Matrix& features, std::span<const int> local_labels,
                              std::size_t classes, double ridge);

TaskStats compute_task_stats(const HatMlp& net, const TaskHead& head, const TaskDataset& dataset,
                             std::size_t task_index, const TrainConfig& cfg);

// Evaluates the first `tasks_learned` tasks on their test splits.
Checkpoint evaluate_checkpoint(const RunArtifacts& run, const TaskStream& stream,
                               std::size_t tasks_learned, bool use_calibration);

RunArtifacts run_sequence(const TaskStream& stream, const TrainConfig& cfg,
                          const TrainHooks& hooks = {});

}  // namespace tpl
