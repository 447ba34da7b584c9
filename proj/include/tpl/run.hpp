#pragma once

#include <cstddef>
#include <vector>

#include "tpl/config.hpp"
#include "tpl/hat_mlp.hpp"
#include "tpl/numerics.hpp"
#include "tpl/replay_buffer.hpp"

namespace tpl {

// End-of-task statistics of one task model.
struct TaskStats {
  std::size_t task_index = 0;
  std::vector<Vector> centroids;  // one per class, class_list order
  Matrix covariance;               // shared within-class covariance
  Matrix covariance_inverse;       // inverse of covariance + ridge_used·I
  double ridge_used = 0.0;
  double beta1 = 1.0;  // 1 / mean S_MLS over the task's training data
  double beta2 = 1.0;  // 1 / mean S_MD over the task's training data

  friend bool operator==(const TaskStats&, const TaskStats&) = default;
};

// Per-task affine adjustment σ1·WP·P(t|x) + σ2.
struct CalibrationParams {
  Vector sigma1;
  Vector sigma2;

  static CalibrationParams identity(std::size_t tasks);
  bool is_identity() const noexcept;
  std::size_t task_count() const noexcept { return sigma1.size(); }

  friend bool operator==(const CalibrationParams&, const CalibrationParams&) = default;
};

// Accuracy snapshot taken right after a task finishes training.
struct Checkpoint {
  std::size_t tasks_learned = 0;
  double accuracy = 0.0;       // A^(<=t): pooled CIL accuracy over test sets 1..t
  Vector task_accuracy;        // A_i^(t): CIL accuracy on task i's test set
  Vector til_accuracy;         // within-task accuracy on task i's test set
  std::vector<std::size_t> task_test_sizes;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

struct RunArtifacts {
  TrainConfig config;
  HatMlp net;
  std::vector<TaskHead> heads;
  std::vector<TaskStats> stats;
  ReplayBuffer buffer;
  std::vector<std::vector<int>> class_lists;
  CalibrationParams calibration;
  std::vector<Checkpoint> trajectory;
  std::vector<std::vector<double>> epoch_losses;  // [task][epoch]

  std::size_t task_count() const noexcept { return heads.size(); }
};

}  // namespace tpl
