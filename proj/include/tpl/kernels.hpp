#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tpl/data.hpp"
#include "tpl/hat_mlp.hpp"
#include "tpl/numerics.hpp"
#include "tpl/predictor.hpp"

// Batch kernels. Every kernel has a serial reference and an OpenMP path; the
// two produce bitwise-identical results because items are independent and
// written to fixed slots.
namespace tpl::kernels {

enum class Execution { serial, parallel };

// One row of features per input sample.
Matrix extract_features_batch(const HatMlp& net, std::span<const Sample> samples,
                              const LayerMasks& masks, Execution exec = Execution::parallel);

// Distance from each normalized query row to its k-th nearest reference row.
Vector kth_neighbor_distances(const Matrix& queries, const Matrix& reference, std::size_t k,
                              Execution exec = Execution::parallel);

std::vector<std::vector<ScoreBundle>> score_batch(const Predictor& predictor,
                                                  std::span<const Sample> samples,
                                                  Execution exec = Execution::parallel);

std::vector<Prediction> predict_batch(const Predictor& predictor,
                                      std::span<const Sample> samples, TaskScoreKind kind,
                                      const CalibrationParams* calibration = nullptr,
                                      Execution exec = Execution::parallel);

}  // namespace tpl::kernels
