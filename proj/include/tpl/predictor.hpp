#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "tpl/config.hpp"
#include "tpl/hat_mlp.hpp"
#include "tpl/numerics.hpp"
#include "tpl/replay_buffer.hpp"
#include "tpl/run.hpp"
#include "tpl/scores.hpp"

namespace tpl {

// Score used as the task-id statistic inside the posterior.
enum class TaskScoreKind { msp, mls, ebo, md, knn, lr, tpl_canonical, tpl_algorithm1 };

std::string_view to_string(TaskScoreKind kind) noexcept;
TaskScoreKind task_score_kind(ScoreVariant variant) noexcept;

struct ScoreBundle {
  std::size_t task_index = 0;
  double s_mls = 0.0;
  double s_msp = 0.0;
  double s_ebo = 0.0;
  double s_md = 0.0;
  double d_knn = 0.0;       // to Buf_{t^c}; 0 when that view is empty
  double knn_own = 0.0;     // -d_knn to the task's own training features, if provided
  double s_lr = 0.0;
  double s_tpl_canonical = 0.0;
  double s_tpl_algorithm1 = 0.0;
  Vector within_task;       // softmax over the real classes

  double select(TaskScoreKind kind) const;
};

struct Prediction {
  int global_class = 0;
  std::size_t task_index = 0;
  std::size_t local_index = 0;
  TaskPosterior posterior;
};

// Non-owning view of a trained model restricted to its first tasks().
struct ModelView {
  const HatMlp* net = nullptr;
  std::span<const TaskHead> heads;
  std::span<const TaskStats> stats;
  const ReplayBuffer* buffer = nullptr;
  std::span<const std::vector<int>> class_lists;
  const TrainConfig* config = nullptr;

  std::size_t tasks() const noexcept { return heads.size(); }
};

ModelView view_of(const RunArtifacts& run);
ModelView view_of(const RunArtifacts& run, std::size_t tasks_learned);

// Frozen inference state: per-task masks and normalized KNN references are
// built once; all scoring methods are const and safe to call concurrently.
class Predictor {
 public:
  // `own_references[t]`, when given, holds task t's raw training inputs; their
  // normalized features back the KNN ablation score.
  explicit Predictor(ModelView model,
                     std::span<const std::vector<Sample>> own_references = {});

  const ModelView& model() const noexcept { return model_; }
  std::size_t task_count() const noexcept { return model_.tasks(); }
  const LayerMasks& mask(std::size_t task) const { return masks_.at(task); }

  ScoreBundle score_task(std::span<const double> x, std::size_t task) const;
  std::vector<ScoreBundle> score(std::span<const double> x) const;

  Prediction decide(std::span<const ScoreBundle> bundles, TaskScoreKind kind,
                    const CalibrationParams* calibration = nullptr) const;
  Prediction predict(std::span<const double> x, TaskScoreKind kind,
                     const CalibrationParams* calibration = nullptr) const;
  Prediction predict(std::span<const double> x,
                     const CalibrationParams* calibration = nullptr) const;

  // Within-task argmax for a known task (TIL).
  std::size_t predict_within(std::span<const double> x, std::size_t task) const;

  // WP_j · P(t|x) for every (t, j), flattened task-major.
  Vector combined_probabilities(std::span<const ScoreBundle> bundles, TaskScoreKind kind) const;

 private:
  ModelView model_;
  std::vector<LayerMasks> masks_;
  std::vector<Matrix> buffer_refs_;  // normalized features of Buf_{t^c}
  std::vector<Matrix> own_refs_;
};

}  // namespace tpl
