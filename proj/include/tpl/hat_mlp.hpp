#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "tpl/numerics.hpp"
#include "tpl/rng.hpp"

namespace tpl {

// One gate vector per hidden layer.
using LayerMasks = std::vector<Vector>;

struct DenseLayer {
  Matrix weight;  // out × in
  Vector bias;
};

// Task classifier: class_count real outputs followed by the O ("others") unit.
struct TaskHead {
  std::size_t class_count = 0;
  Matrix weight;  // (class_count + 1) × feature width
  Vector bias;

  std::size_t other_index() const noexcept { return class_count; }
};

TaskHead make_head(std::size_t feature_width, std::size_t class_count, Rng& rng);

// Shared ReLU MLP whose hidden units are gated per task by
// a_l = sigmoid(s · e_l). Gates of finished tasks are binarized at s_max and
// folded into the cumulative mask, which then blocks gradient flow into the
// weights those tasks depend on.
class HatMlp {
 public:
  HatMlp() = default;
  HatMlp(std::size_t input_dim, std::vector<std::size_t> hidden, double s_max, Rng& rng);

  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t layer_count() const noexcept { return widths_.size(); }
  std::size_t width(std::size_t layer) const { return widths_.at(layer); }
  const std::vector<std::size_t>& widths() const noexcept { return widths_; }
  std::size_t feature_dim() const noexcept { return widths_.empty() ? 0 : widths_.back(); }
  double s_max() const noexcept { return s_max_; }

  DenseLayer& layer(std::size_t l) { return layers_.at(l); }
  const DenseLayer& layer(std::size_t l) const { return layers_.at(l); }

  std::size_t task_count() const noexcept { return embeddings_.size(); }
  // Registers a new task with embeddings drawn from U[0, 2]; returns its index.
  std::size_t add_task(Rng& rng);

  Vector& embedding(std::size_t task, std::size_t layer);
  const Vector& embedding(std::size_t task, std::size_t layer) const;

  const LayerMasks& cumulative_mask() const noexcept { return cumulative_; }
  void set_cumulative_mask(LayerMasks masks);

  bool is_consolidated(std::size_t task) const;
  // Binarized gates stored when the task was consolidated.
  const LayerMasks& task_mask(std::size_t task) const;
  void set_task_mask(std::size_t task, LayerMasks mask);

  // Gates used at inference: the binarized mask once consolidated, otherwise
  // the attention at s_max.
  LayerMasks inference_mask(std::size_t task) const;
  LayerMasks ones_mask() const;

  friend bool operator==(const HatMlp&, const HatMlp&);

 private:
  void check_task(std::size_t task) const;

  std::size_t input_dim_ = 0;
  std::vector<std::size_t> widths_;
  double s_max_ = 400.0;
  std::vector<DenseLayer> layers_;
  std::vector<std::vector<Vector>> embeddings_;  // [task][layer]
  LayerMasks cumulative_;
  std::vector<std::optional<LayerMasks>> task_masks_;
};

bool operator==(const DenseLayer& a, const DenseLayer& b);
bool operator==(const TaskHead& a, const TaskHead& b);

LayerMasks attention(const HatMlp& net, std::size_t task, double s);

struct ForwardResult {
  Vector features;  // last masked hidden output
  Vector logits;
};

Vector extract_features(const HatMlp& net, std::span<const double> x, const LayerMasks& masks);
ForwardResult forward(const HatMlp& net, const TaskHead& head, std::span<const double> x,
                      const LayerMasks& masks);
ForwardResult forward(const HatMlp& net, const TaskHead& head, std::span<const double> x,
                      std::size_t task, double s);

// Parameter-shaped buffers; also used for momentum.
struct Gradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
  std::vector<Vector> embedding;  // per layer, for the task being trained
  Matrix head_weight;
  Vector head_bias;
  double s = 1.0;  // gate temperature the gradients were taken at

  static Gradients zeros_like(const HatMlp& net, const TaskHead& head);
};
using MomentumState = Gradients;

struct TrainingExample {
  std::span<const double> features;
  int target = 0;  // index into the head outputs
};

struct LossOptions {
  // Task whose gates are trained; nullopt trains an ungated MLP (all gates 1).
  std::optional<std::size_t> task;
  double s = 1.0;
  double mu_reg = 0.0;
  // Number of leading logits in the softmax; class_count excludes O.
  std::size_t softmax_width = 0;
};

// Mean cross-entropy over the batch plus mu_reg · hat_reg_loss; fills grads.
double loss_and_gradients(const HatMlp& net, const TaskHead& head,
                          std::span<const TrainingExample> batch, const LossOptions& options,
                          Gradients& grads);

struct SgdStep {
  double learning_rate = 0.005;
  double momentum = 0.9;
};

// HAT-masked SGD-with-momentum step. Weight gradients are scaled by
// 1 - min(a_i^(<t), a_j^(<t)) (inputs count as always used), bias gradients by
// 1 - a_i^(<t); head and current-task embeddings are unscaled. Embedding
// gradients get slope compensation and embeddings are clamped to [-6, 6].
void masked_gradient_update(HatMlp& net, TaskHead& head, const Gradients& grads,
                            std::optional<std::size_t> task, const SgdStep& step,
                            MomentumState& momentum);

// cumulative = max(cumulative, binarize(attention)); returns the binarized gates.
LayerMasks merge_binarized(LayerMasks& cumulative, const LayerMasks& attention);
void consolidate_mask(HatMlp& net, std::size_t task);

double hat_reg_loss(const HatMlp& net, std::size_t task, double s);

// Linear per-batch schedule from 1/s_max to s_max (batch_index is 1-based).
double anneal_s(std::size_t batch_index, std::size_t batches_per_epoch, double s_max);

inline constexpr double kEmbeddingClamp = 6.0;

}  // namespace tpl
