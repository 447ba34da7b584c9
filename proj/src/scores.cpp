#include "tpl/scores.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "tpl/error.hpp"

namespace tpl {
namespace {

std::span<const double> real_logits(std::span<const double> logits, std::size_t class_count) {
  if (class_count == 0 || logits.size() != class_count + 1) {
    throw Error(Errc::shape_mismatch, "expected class_count + 1 logits");
  }
  return logits.first(class_count);
}

}  // namespace

double mls(std::span<const double> logits, std::size_t class_count) {
  const auto real = real_logits(logits, class_count);
  return *std::max_element(real.begin(), real.end());
}

double msp(std::span<const double> logits, std::size_t class_count) {
  const Vector p = softmax(real_logits(logits, class_count));
  return *std::max_element(p.begin(), p.end());
}

double ebo(std::span<const double> logits, std::size_t class_count) {
  return log_sum_exp(real_logits(logits, class_count));
}

Vector within_task_probabilities(std::span<const double> logits, std::size_t class_count) {
  return softmax(real_logits(logits, class_count));
}

double min_mahalanobis_sq(std::span<const double> z, std::span<const Vector> centroids,
                          const Matrix& inverse) {
  if (centroids.empty()) throw Error(Errc::empty_class_list, "no centroids");
  double best = std::numeric_limits<double>::infinity();
  Vector diff(z.size());
  for (const Vector& mu : centroids) {
    if (mu.size() != z.size()) throw Error(Errc::dimension_mismatch, "centroid dimension");
    for (std::size_t i = 0; i < z.size(); ++i) diff[i] = z[i] - mu[i];
    best = std::min(best, quadratic_form(inverse, diff));
  }
  return best;
}

double md_score(std::span<const double> z, const TaskStats& stats) {
  const double d2 = min_mahalanobis_sq(z, stats.centroids, stats.covariance_inverse);
  return 1.0 / std::max(d2, kMahalanobisFloor);
}

Vector l2_normalized(std::span<const double> z) {
  const double n = norm2(z);
  Vector out(z.begin(), z.end());
  if (n > 0.0) {
    for (double& v : out) v /= n;
  }
  return out;
}

double knn_distance(std::span<const double> z, const Matrix& reference, std::size_t k) {
  if (reference.rows() == 0) throw Error(Errc::empty_buffer_view, "no reference features");
  if (k == 0) throw Error(Errc::invalid_argument, "k must be at least 1");
  if (reference.cols() != z.size()) throw Error(Errc::dimension_mismatch, "feature dimension");
  const Vector q = l2_normalized(z);
  std::vector<double> d2(reference.rows());
  for (std::size_t i = 0; i < reference.rows(); ++i) d2[i] = squared_distance(reference.row(i), q);
  const std::size_t kth = std::min(k, d2.size()) - 1;
  std::nth_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(kth), d2.end());
  return std::sqrt(d2[kth]);
}

Matrix knn_reference(std::span<const BufferEntry* const> view, const HatMlp& net,
                     const LayerMasks& masks) {
  Matrix ref(view.size(), net.feature_dim());
  for (std::size_t i = 0; i < view.size(); ++i) {
    const Vector z = l2_normalized(extract_features(net, view[i]->sample.features, masks));
    std::copy(z.begin(), z.end(), ref.row(i).begin());
  }
  return ref;
}

double knn_distance(std::span<const double> z, std::span<const BufferEntry* const> view,
                    const HatMlp& net, const LayerMasks& masks, std::size_t k) {
  if (view.empty()) throw Error(Errc::empty_buffer_view, "buffer view is empty");
  return knn_distance(z, knn_reference(view, net, masks), k);
}

double lr_score(double s_md, double d_knn, double beta2) noexcept { return beta2 * s_md + d_knn; }

double tpl_score(double s_mls, double s_md, double d_knn, double beta1, double beta2,
                 ScoreVariant variant) {
  if (!(beta1 > 0.0) || !(beta2 > 0.0)) {
    throw Error(Errc::invalid_argument, "scaling terms must be positive");
  }
  const double logit_energy = beta1 * s_mls;
  const double lr_energy = lr_score(s_md, d_knn, beta2);
  if (variant == ScoreVariant::canonical) {
    const std::array<double, 2> terms{logit_energy, lr_energy};
    return log_sum_exp(terms);
  }
  const std::array<double, 2> terms{-logit_energy, -lr_energy};
  return -log_sum_exp(terms);
}

TaskPosterior task_posterior(std::span<const double> scores, double gamma) {
  if (scores.empty()) throw Error(Errc::empty_input, "no task scores");
  if (scores.size() == 1) return {Vector{1.0}, gamma};
  return {softmax(scores, gamma), gamma};
}

}  // namespace tpl
