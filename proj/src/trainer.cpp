#include "tpl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tpl/calibration.hpp"
#include "tpl/error.hpp"
#include "tpl/kernels.hpp"
#include "tpl/log.hpp"
#include "tpl/predictor.hpp"
#include "tpl/scores.hpp"

namespace tpl {
namespace {

struct PooledExample {
  const Sample* sample;
  int target;
  bool from_buffer;
};

}  // namespace

TaskTrainResult train_task(HatMlp& net, std::vector<TaskHead>& heads, const TaskStream& stream,
                           std::size_t task_index, const ReplayBuffer& buffer,
                           const TrainConfig& cfg, const Rng& rng, const TrainHooks* hooks) {
  cfg.validate();
  if (task_index != heads.size() || task_index != net.task_count()) {
    throw Error(Errc::invalid_argument, "tasks must be trained in order");
  }
  const TaskDataset& task = stream.task(task_index);
  if (task.train.empty()) {
    throw Error(Errc::empty_training_set,
                "task " + std::to_string(task.task_id) + " has no training samples");
  }
  if (buffer.contains_task(task_index)) {
    throw Error(Errc::invalid_argument, "buffer already holds the task being trained");
  }

  Rng embedding_rng = rng.split("embedding");
  Rng head_rng = rng.split("head");
  net.add_task(embedding_rng);
  heads.push_back(make_head(net.feature_dim(), task.class_count(), head_rng));
  TaskHead& head = heads.back();

  const int other = static_cast<int>(head.other_index());
  std::vector<PooledExample> pool;
  for (const Sample& s : task.train) pool.push_back({&s, task.local_index(s.label), false});
  for (const BufferEntry* e : buffer.entries()) pool.push_back({&e->sample, other, true});
  const bool replay = pool.size() > task.train.size();
  const std::size_t width = replay ? head.class_count + 1 : head.class_count;

  const std::size_t n = pool.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const SgdStep step{cfg.learning_rate, cfg.momentum};
  MomentumState momentum = Gradients::zeros_like(net, head);
  Gradients grads;
  std::vector<std::size_t> order(n);
  std::vector<TrainingExample> batch;
  TaskTrainResult result;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng epoch_rng = rng.split("epoch").split(epoch);
    shuffle(std::span<std::size_t>(order), epoch_rng);
    CompensatedSum epoch_loss;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      const double s = anneal_s(b + 1, batches, cfg.s_max);
      batch.clear();
      for (std::size_t i = lo; i < hi; ++i) {
        const PooledExample& ex = pool[order[i]];
        batch.push_back({ex.sample->features, ex.target});
      }
      if (hooks && hooks->on_batch) {
        BatchAudit audit{task_index, epoch, b + 1, s, head.class_count, width, {}, {}, {}};
        for (std::size_t i = lo; i < hi; ++i) {
          const PooledExample& ex = pool[order[i]];
          audit.targets.push_back(ex.target);
          audit.from_buffer.push_back(ex.from_buffer);
          audit.labels.push_back(ex.sample->label);
        }
        hooks->on_batch(audit);
      }
      const LossOptions options{task_index, s, cfg.mu_reg, width};
      const double loss = loss_and_gradients(net, head, batch, options, grads);
      epoch_loss.add(loss * static_cast<double>(hi - lo));
      masked_gradient_update(net, head, grads, task_index, step, momentum);
    }
    result.epoch_losses.push_back(epoch_loss.value() / static_cast<double>(n));
  }

  consolidate_mask(net, task_index);
  result.stats = compute_task_stats(net, head, task, task_index, cfg);
  return result;
}

TaskStats fit_shared_gaussian(const Matrix& features, std::span<const int> local_labels,
                              std::size_t classes, double ridge) {
  if (features.rows() == 0) throw Error(Errc::empty_training_set, "no samples for statistics");
  if (local_labels.size() != features.rows()) {
    throw Error(Errc::shape_mismatch, "one label per feature row is required");
  }
  const std::size_t d = features.cols();
  TaskStats stats;
  std::vector<std::vector<CompensatedSum>> sums(classes, std::vector<CompensatedSum>(d));
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    if (local_labels[i] < 0 || static_cast<std::size_t>(local_labels[i]) >= classes) {
      throw Error(Errc::invalid_argument, "label outside the task's classes");
    }
    const auto c = static_cast<std::size_t>(local_labels[i]);
    ++counts[c];
    const auto z = features.row(i);
    for (std::size_t j = 0; j < d; ++j) sums[c][j].add(z[j]);
  }
  for (std::size_t c = 0; c < classes; ++c) {
    Vector mu(d, 0.0);
    if (counts[c] > 0) {
      for (std::size_t j = 0; j < d; ++j) mu[j] = sums[c][j].value() / static_cast<double>(counts[c]);
    }
    stats.centroids.push_back(std::move(mu));
  }

  std::vector<CompensatedSum> scatter(d * d);
  Vector diff(d);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto c = static_cast<std::size_t>(local_labels[i]);
    const auto z = features.row(i);
    for (std::size_t j = 0; j < d; ++j) diff[j] = z[j] - stats.centroids[c][j];
    for (std::size_t r = 0; r < d; ++r) {
      if (diff[r] == 0.0) continue;
      for (std::size_t q = r; q < d; ++q) scatter[r * d + q].add(diff[r] * diff[q]);
    }
  }
  stats.covariance = Matrix(d, d);
  const double inv_n = 1.0 / static_cast<double>(features.rows());
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t q = r; q < d; ++q) {
      const double v = scatter[r * d + q].value() * inv_n;
      stats.covariance(r, q) = v;
      stats.covariance(q, r) = v;
    }
  }
  try {
    SpdInverse inv = spd_inverse_with_ridge(stats.covariance, ridge);
    stats.covariance_inverse = std::move(inv.inverse);
    stats.ridge_used = inv.ridge_used;
  } catch (const Error& e) {
    if (e.code() != Errc::not_positive_definite) throw;
    throw Error(Errc::degenerate_covariance, std::string("shared covariance: ") + e.what());
  }
  return stats;
}

TaskStats compute_task_stats(const HatMlp& net, const TaskHead& head, const TaskDataset& dataset,
                             std::size_t task_index, const TrainConfig& cfg) {
  if (dataset.train.empty()) throw Error(Errc::empty_training_set, "no samples for statistics");
  const LayerMasks masks = net.inference_mask(task_index);
  const Matrix features =
      kernels::extract_features_batch(net, dataset.train, masks, kernels::Execution::serial);
  std::vector<int> labels;
  for (const Sample& s : dataset.train) labels.push_back(dataset.local_index(s.label));
  TaskStats stats = fit_shared_gaussian(features, labels, dataset.class_count(), cfg.ridge);
  stats.task_index = task_index;
  const double inv_n = 1.0 / static_cast<double>(dataset.train.size());

  CompensatedSum mls_sum;
  CompensatedSum abs_mls_sum;
  CompensatedSum md_sum;
  for (std::size_t i = 0; i < dataset.train.size(); ++i) {
    const auto z = features.row(i);
    Vector logits = head.bias;
    for (std::size_t k = 0; k < logits.size(); ++k) logits[k] += dot(head.weight.row(k), z);
    const double m = mls(logits, head.class_count);
    mls_sum.add(m);
    abs_mls_sum.add(std::abs(m));
    md_sum.add(md_score(z, stats));
  }
  const double mean_mls = mls_sum.value() * inv_n;
  const double mean_abs_mls = abs_mls_sum.value() * inv_n;
  // 1/mean(MLS) is only a valid positive scale when the mean is positive.
  if (mean_mls > 0.0) {
    stats.beta1 = 1.0 / mean_mls;
  } else if (mean_abs_mls > 0.0) {
    stats.beta1 = 1.0 / mean_abs_mls;
    log::warn("task " + std::to_string(dataset.task_id) +
              ": mean maximum logit is not positive; beta1 uses its magnitude");
  } else {
    stats.beta1 = 1.0;
  }
  stats.beta2 = 1.0 / (md_sum.value() * inv_n);
  if (!std::isfinite(stats.beta1) || !std::isfinite(stats.beta2) || !(stats.beta2 > 0.0)) {
    throw Error(Errc::degenerate_covariance, "scale factors are not finite and positive");
  }
  return stats;
}

Checkpoint evaluate_checkpoint(const RunArtifacts& run, const TaskStream& stream,
                               std::size_t tasks_learned, bool use_calibration) {
  const Predictor predictor(view_of(run, tasks_learned));
  const TaskScoreKind kind = task_score_kind(run.config.score_variant);
  const CalibrationParams* calib =
      use_calibration && !run.calibration.is_identity() ? &run.calibration : nullptr;
  Checkpoint cp;
  cp.tasks_learned = tasks_learned;
  std::size_t correct_total = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < tasks_learned; ++i) {
    const TaskDataset& task = stream.task(i);
    if (task.test.empty()) {
      throw Error(Errc::empty_test_set, "task " + std::to_string(task.task_id) + " has no test set");
    }
    const auto preds = kernels::predict_batch(predictor, task.test, kind, calib);
    std::size_t correct = 0;
    std::size_t til_correct = 0;
    for (std::size_t n = 0; n < task.test.size(); ++n) {
      if (preds[n].global_class == task.test[n].label) ++correct;
      const std::size_t local = predictor.predict_within(task.test[n].features, i);
      if (task.class_list[local] == task.test[n].label) ++til_correct;
    }
    const auto size = static_cast<double>(task.test.size());
    cp.task_accuracy.push_back(static_cast<double>(correct) / size);
    cp.til_accuracy.push_back(static_cast<double>(til_correct) / size);
    cp.task_test_sizes.push_back(task.test.size());
    correct_total += correct;
    total += task.test.size();
  }
  cp.accuracy = static_cast<double>(correct_total) / static_cast<double>(total);
  return cp;
}

RunArtifacts run_sequence(const TaskStream& stream, const TrainConfig& cfg,
                          const TrainHooks& hooks) {
  cfg.validate();
  if (stream.task_count() == 0) throw Error(Errc::empty_input, "task stream is empty");
  const Rng root(cfg.seed);
  Rng init = root.split("init");

  RunArtifacts run;
  run.config = cfg;
  run.net = HatMlp(stream.dim(), cfg.hidden, cfg.s_max, init);
  run.buffer = ReplayBuffer(cfg.buffer_capacity);
  run.calibration = CalibrationParams::identity(0);

  for (std::size_t t = 0; t < stream.task_count(); ++t) {
    TaskTrainResult r = train_task(run.net, run.heads, stream, t, run.buffer, cfg,
                                   root.split("task").split(t), &hooks);
    run.stats.push_back(std::move(r.stats));
    run.epoch_losses.push_back(std::move(r.epoch_losses));
    run.class_lists.push_back(stream.task(t).class_list);
    Rng buffer_rng = root.split("buffer").split(t);
    run.buffer.update(stream.task(t), t, buffer_rng);
    run.calibration = CalibrationParams::identity(t + 1);

    const bool last = t + 1 == stream.task_count();
    if (last && cfg.calibration.enabled) {
      run.calibration = fit_calibration(run, cfg.calibration, root.split("calibration"));
    }
    run.trajectory.push_back(evaluate_checkpoint(run, stream, t + 1, last));
    if (hooks.on_task_complete) hooks.on_task_complete(run);
  }
  return run;
}

}  // namespace tpl
