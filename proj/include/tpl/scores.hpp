#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tpl/config.hpp"
#include "tpl/hat_mlp.hpp"
#include "tpl/numerics.hpp"
#include "tpl/replay_buffer.hpp"
#include "tpl/run.hpp"

namespace tpl {

// Logit scores over the first class_count entries; the trailing O logit is ignored.
double mls(std::span<const double> logits, std::size_t class_count);
double msp(std::span<const double> logits, std::size_t class_count);
double ebo(std::span<const double> logits, std::size_t class_count);

// Softmax over the real classes only.
Vector within_task_probabilities(std::span<const double> logits, std::size_t class_count);

inline constexpr double kMahalanobisFloor = 1e-12;

double min_mahalanobis_sq(std::span<const double> z, std::span<const Vector> centroids,
                          const Matrix& inverse);
// 1 / max(min_c (z-μ_c)ᵀ Σ⁻¹ (z-μ_c), 1e-12)
double md_score(std::span<const double> z, const TaskStats& stats);

// z / ||z||; the zero vector maps to itself.
Vector l2_normalized(std::span<const double> z);

// Distance from normalize(z) to its k-th nearest row of `reference` (rows
// already normalized). With fewer than k rows the farthest one is used.
double knn_distance(std::span<const double> z, const Matrix& reference, std::size_t k);

// Builds the reference from a buffer view passed through the task's extractor.
Matrix knn_reference(std::span<const BufferEntry* const> view, const HatMlp& net,
                     const LayerMasks& masks);
double knn_distance(std::span<const double> z, std::span<const BufferEntry* const> view,
                    const HatMlp& net, const LayerMasks& masks, std::size_t k);

double lr_score(double s_md, double d_knn, double beta2) noexcept;
double tpl_score(double s_mls, double s_md, double d_knn, double beta1, double beta2,
                 ScoreVariant variant);

struct TaskPosterior {
  Vector probabilities;
  double gamma = 0.05;
};

TaskPosterior task_posterior(std::span<const double> scores, double gamma);

}  // namespace tpl
