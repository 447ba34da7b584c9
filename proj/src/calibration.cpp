#include "tpl/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tpl/error.hpp"
#include "tpl/kernels.hpp"
#include "tpl/log.hpp"

namespace tpl {

CalibrationParams CalibrationParams::identity(std::size_t tasks) {
  return {Vector(tasks, 1.0), Vector(tasks, 0.0)};
}

bool CalibrationParams::is_identity() const noexcept {
  return std::all_of(sigma1.begin(), sigma1.end(), [](double v) { return v == 1.0; }) &&
         std::all_of(sigma2.begin(), sigma2.end(), [](double v) { return v == 0.0; });
}

std::vector<CalibrationTarget> calibration_targets(const Predictor& predictor,
                                                   const ReplayBuffer& buffer) {
  const ModelView& model = predictor.model();
  const TaskScoreKind kind = task_score_kind(model.config->score_variant);
  std::vector<Sample> samples;
  for (const BufferEntry* e : buffer.entries()) samples.push_back(e->sample);
  const auto bundles = kernels::score_batch(predictor, samples);

  std::vector<CalibrationTarget> out;
  out.reserve(samples.size());
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const Vector combined = predictor.combined_probabilities(bundles[n], kind);
    std::size_t offset = 0;
    bool found = false;
    for (std::size_t t = 0; t < model.tasks() && !found; ++t) {
      const auto& classes = model.class_lists[t];
      const auto it = std::find(classes.begin(), classes.end(), samples[n].label);
      if (it != classes.end()) {
        out.push_back({combined[offset + static_cast<std::size_t>(it - classes.begin())], t});
        found = true;
      }
      offset += classes.size();
    }
    if (!found) throw Error(Errc::invalid_argument, "buffer label outside the learned classes");
  }
  return out;
}

double calibration_loss(std::span<const CalibrationTarget> targets,
                        const CalibrationParams& params) {
  if (targets.empty()) throw Error(Errc::empty_input, "no calibration samples");
  CompensatedSum total;
  for (const CalibrationTarget& c : targets) {
    const double p = params.sigma1.at(c.task) * c.q + params.sigma2.at(c.task);
    total.add(-std::log(std::max(p, kCalibrationFloor)));
  }
  return total.value() / static_cast<double>(targets.size());
}

CalibrationParams fit_calibration(const RunArtifacts& run, const ReplayBuffer& buffer,
                                  const CalibrationConfig& cfg, const Rng& rng) {
  const std::size_t tasks = run.task_count();
  CalibrationParams params = CalibrationParams::identity(tasks);
  if (tasks < 2 || cfg.epochs == 0) return params;
  if (buffer.empty()) {
    log::warn("calibration skipped: replay buffer is empty");
    return params;
  }
  if (cfg.batch_size == 0 || !(cfg.learning_rate > 0.0)) {
    throw Error(Errc::config_error, "calibration batch size and learning rate must be positive");
  }
  const Predictor predictor(view_of(run));
  const auto targets = calibration_targets(predictor, buffer);

  CalibrationParams best = params;
  double best_loss = calibration_loss(targets, params);
  std::vector<std::size_t> order(targets.size());
  Vector g1(tasks);
  Vector g2(tasks);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng epoch_rng = rng.split("epoch").split(epoch);
    shuffle(std::span<std::size_t>(order), epoch_rng);
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      std::fill(g1.begin(), g1.end(), 0.0);
      std::fill(g2.begin(), g2.end(), 0.0);
      const double inv = 1.0 / static_cast<double>(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) {
        const CalibrationTarget& c = targets[order[i]];
        const double p = params.sigma1[c.task] * c.q + params.sigma2[c.task];
        if (p <= kCalibrationFloor) continue;  // clamped region has zero slope
        g1[c.task] -= c.q / p * inv;
        g2[c.task] -= 1.0 / p * inv;
      }
      for (std::size_t t = 0; t < tasks; ++t) {
        params.sigma1[t] -= cfg.learning_rate * g1[t];
        params.sigma2[t] -= cfg.learning_rate * g2[t];
      }
    }
    const double loss = calibration_loss(targets, params);
    const bool finite = std::all_of(params.sigma1.begin(), params.sigma1.end(),
                                    [](double v) { return std::isfinite(v); }) &&
                        std::all_of(params.sigma2.begin(), params.sigma2.end(),
                                    [](double v) { return std::isfinite(v); });
    if (!finite || !std::isfinite(loss)) break;
    if (loss < best_loss) {
      best_loss = loss;
      best = params;
    }
  }
  return best;
}

CalibrationParams fit_calibration(const RunArtifacts& run, const CalibrationConfig& cfg,
                                  const Rng& rng) {
  return fit_calibration(run, run.buffer, cfg, rng);
}

}  // namespace tpl
