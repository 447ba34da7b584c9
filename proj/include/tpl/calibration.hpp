#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tpl/config.hpp"
#include "tpl/predictor.hpp"
#include "tpl/replay_buffer.hpp"
#include "tpl/rng.hpp"
#include "tpl/run.hpp"

namespace tpl {

// Per buffer sample: the uncalibrated combined probability WP_y · P(t_y|x)
// of its true class and the index of the task owning that class.
struct CalibrationTarget {
  double q = 0.0;
  std::size_t task = 0;
};

std::vector<CalibrationTarget> calibration_targets(const Predictor& predictor,
                                                   const ReplayBuffer& buffer);

inline constexpr double kCalibrationFloor = 1e-12;

// Mean of -log max(σ1_t·q + σ2_t, 1e-12).
double calibration_loss(std::span<const CalibrationTarget> targets,
                        const CalibrationParams& params);

// Minibatch SGD on the buffer cross-entropy starting from identity. The
// objective is tracked after every epoch and the best parameters seen
// (identity included) are returned. Fewer than two tasks, zero epochs or an
// empty buffer return identity.
CalibrationParams fit_calibration(const RunArtifacts& run, const ReplayBuffer& buffer,
                                  const CalibrationConfig& cfg, const Rng& rng);
CalibrationParams fit_calibration(const RunArtifacts& run, const CalibrationConfig& cfg,
                                  const Rng& rng);

}  // namespace tpl
