#include "tpl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "tpl/error.hpp"
#include "tpl/scores.hpp"

namespace tpl::kernels {
namespace {

// Runs body(i) for i in [0, n). Exceptions thrown inside the parallel region
// are captured and rethrown on the calling thread.
template <typename Body>
void for_each_index(std::size_t n, Execution exec, Body&& body) {
  if (exec == Execution::serial) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr failure;
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(tpl_kernel_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

Matrix extract_features_batch(const HatMlp& net, std::span<const Sample> samples,
                              const LayerMasks& masks, Execution exec) {
  Matrix out(samples.size(), net.feature_dim());
  for_each_index(samples.size(), exec, [&](std::size_t i) {
    const Vector z = extract_features(net, samples[i].features, masks);
    std::copy(z.begin(), z.end(), out.row(i).begin());
  });
  return out;
}

Vector kth_neighbor_distances(const Matrix& queries, const Matrix& reference, std::size_t k,
                              Execution exec) {
  if (reference.rows() == 0) throw Error(Errc::empty_buffer_view, "no reference features");
  if (k == 0) throw Error(Errc::invalid_argument, "k must be at least 1");
  if (queries.cols() != reference.cols()) {
    throw Error(Errc::dimension_mismatch, "query and reference widths differ");
  }
  Vector out(queries.rows());
  const std::size_t kth = std::min(k, reference.rows()) - 1;
  for_each_index(queries.rows(), exec, [&](std::size_t q) {
    std::vector<double> d2(reference.rows());
    for (std::size_t r = 0; r < reference.rows(); ++r)
      d2[r] = squared_distance(queries.row(q), reference.row(r));
    std::nth_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(kth), d2.end());
    out[q] = std::sqrt(d2[kth]);
  });
  return out;
}

std::vector<std::vector<ScoreBundle>> score_batch(const Predictor& predictor,
                                                  std::span<const Sample> samples,
                                                  Execution exec) {
  std::vector<std::vector<ScoreBundle>> out(samples.size());
  for_each_index(samples.size(), exec,
                 [&](std::size_t i) { out[i] = predictor.score(samples[i].features); });
  return out;
}

std::vector<Prediction> predict_batch(const Predictor& predictor,
                                      std::span<const Sample> samples, TaskScoreKind kind,
                                      const CalibrationParams* calibration, Execution exec) {
  std::vector<Prediction> out(samples.size());
  for_each_index(samples.size(), exec, [&](std::size_t i) {
    out[i] = predictor.predict(samples[i].features, kind, calibration);
  });
  return out;
}

}  // namespace tpl::kernels
