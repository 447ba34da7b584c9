#include "tpl/predictor.hpp"

#include <algorithm>

#include "tpl/error.hpp"

namespace tpl {

std::string_view to_string(TaskScoreKind kind) noexcept {
  switch (kind) {
    case TaskScoreKind::msp: return "MSP";
    case TaskScoreKind::mls: return "MLS";
    case TaskScoreKind::ebo: return "EBO";
    case TaskScoreKind::md: return "MD";
    case TaskScoreKind::knn: return "KNN";
    case TaskScoreKind::lr: return "LR";
    case TaskScoreKind::tpl_canonical: return "TPL-canonical";
    case TaskScoreKind::tpl_algorithm1: return "TPL-algorithm1";
  }
  return "?";
}

TaskScoreKind task_score_kind(ScoreVariant variant) noexcept {
  return variant == ScoreVariant::canonical ? TaskScoreKind::tpl_canonical
                                            : TaskScoreKind::tpl_algorithm1;
}

double ScoreBundle::select(TaskScoreKind kind) const {
  switch (kind) {
    case TaskScoreKind::msp: return s_msp;
    case TaskScoreKind::mls: return s_mls;
    case TaskScoreKind::ebo: return s_ebo;
    case TaskScoreKind::md: return s_md;
    case TaskScoreKind::knn: return knn_own;
    case TaskScoreKind::lr: return s_lr;
    case TaskScoreKind::tpl_canonical: return s_tpl_canonical;
    case TaskScoreKind::tpl_algorithm1: return s_tpl_algorithm1;
  }
  return s_tpl_canonical;
}

ModelView view_of(const RunArtifacts& run) { return view_of(run, run.task_count()); }

ModelView view_of(const RunArtifacts& run, std::size_t tasks_learned) {
  if (tasks_learned == 0 || tasks_learned > run.heads.size() ||
      tasks_learned > run.stats.size() || tasks_learned > run.class_lists.size()) {
    throw Error(Errc::unknown_task, "run has fewer trained tasks than requested");
  }
  ModelView v;
  v.net = &run.net;
  v.heads = std::span<const TaskHead>(run.heads).first(tasks_learned);
  v.stats = std::span<const TaskStats>(run.stats).first(tasks_learned);
  v.buffer = &run.buffer;
  v.class_lists = std::span<const std::vector<int>>(run.class_lists).first(tasks_learned);
  v.config = &run.config;
  return v;
}

Predictor::Predictor(ModelView model, std::span<const std::vector<Sample>> own_references)
    : model_(model) {
  if (!model_.net || !model_.buffer || !model_.config || model_.tasks() == 0) {
    throw Error(Errc::invalid_argument, "predictor needs a trained model");
  }
  if (model_.stats.size() != model_.tasks() || model_.class_lists.size() != model_.tasks()) {
    throw Error(Errc::shape_mismatch, "heads, stats and class lists disagree on task count");
  }
  if (!own_references.empty() && own_references.size() != model_.tasks()) {
    throw Error(Errc::shape_mismatch, "one own-reference set per task is required");
  }
  for (std::size_t t = 0; t < model_.tasks(); ++t) {
    masks_.push_back(model_.net->inference_mask(t));
    const auto view = model_.buffer->view_excluding_task(t);
    buffer_refs_.push_back(knn_reference(view, *model_.net, masks_.back()));
    if (!own_references.empty()) {
      const auto& samples = own_references[t];
      Matrix ref(samples.size(), model_.net->feature_dim());
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const Vector z = l2_normalized(extract_features(*model_.net, samples[i].features,
                                                        masks_.back()));
        std::copy(z.begin(), z.end(), ref.row(i).begin());
      }
      own_refs_.push_back(std::move(ref));
    }
  }
}

ScoreBundle Predictor::score_task(std::span<const double> x, std::size_t task) const {
  if (task >= task_count()) throw Error(Errc::unknown_task, "task index out of range");
  const TaskHead& head = model_.heads[task];
  const TaskStats& stats = model_.stats[task];
  const ForwardResult fr = forward(*model_.net, head, x, masks_[task]);

  ScoreBundle b;
  b.task_index = task;
  b.s_mls = mls(fr.logits, head.class_count);
  b.within_task = within_task_probabilities(fr.logits, head.class_count);
  b.s_msp = *std::max_element(b.within_task.begin(), b.within_task.end());
  b.s_ebo = ebo(fr.logits, head.class_count);
  b.s_md = md_score(fr.features, stats);
  const std::size_t k = model_.config->k;
  // With no replay from other tasks the out-of-task energy is constant.
  b.d_knn = buffer_refs_[task].rows() == 0 ? 0.0 : knn_distance(fr.features, buffer_refs_[task], k);
  b.knn_own = own_refs_.empty() ? 0.0 : -knn_distance(fr.features, own_refs_[task], k);
  b.s_lr = lr_score(b.s_md, b.d_knn, stats.beta2);
  b.s_tpl_canonical =
      tpl_score(b.s_mls, b.s_md, b.d_knn, stats.beta1, stats.beta2, ScoreVariant::canonical);
  b.s_tpl_algorithm1 =
      tpl_score(b.s_mls, b.s_md, b.d_knn, stats.beta1, stats.beta2, ScoreVariant::algorithm1);
  return b;
}

std::vector<ScoreBundle> Predictor::score(std::span<const double> x) const {
  std::vector<ScoreBundle> out;
  out.reserve(task_count());
  for (std::size_t t = 0; t < task_count(); ++t) out.push_back(score_task(x, t));
  return out;
}

namespace {

TaskPosterior posterior_of(std::span<const ScoreBundle> bundles, TaskScoreKind kind,
                           double gamma) {
  if (bundles.size() == 1) return {Vector{1.0}, gamma};
  Vector scores;
  scores.reserve(bundles.size());
  for (const ScoreBundle& b : bundles) scores.push_back(b.select(kind));
  return task_posterior(scores, gamma);
}

}  // namespace

Vector Predictor::combined_probabilities(std::span<const ScoreBundle> bundles,
                                         TaskScoreKind kind) const {
  if (bundles.size() != task_count()) throw Error(Errc::shape_mismatch, "one bundle per task");
  const TaskPosterior post = posterior_of(bundles, kind, model_.config->gamma);
  Vector out;
  for (std::size_t t = 0; t < bundles.size(); ++t)
    for (double wp : bundles[t].within_task) out.push_back(wp * post.probabilities[t]);
  return out;
}

Prediction Predictor::decide(std::span<const ScoreBundle> bundles, TaskScoreKind kind,
                             const CalibrationParams* calibration) const {
  if (bundles.size() != task_count()) throw Error(Errc::shape_mismatch, "one bundle per task");
  if (kind == TaskScoreKind::knn && own_refs_.empty()) {
    throw Error(Errc::invalid_argument, "KNN task score needs the tasks' own references");
  }
  if (calibration && calibration->task_count() != task_count()) {
    throw Error(Errc::shape_mismatch, "calibration covers a different number of tasks");
  }
  Prediction p;
  p.posterior = posterior_of(bundles, kind, model_.config->gamma);
  double best = 0.0;
  bool first = true;
  for (std::size_t t = 0; t < bundles.size(); ++t) {
    const Vector& wp = bundles[t].within_task;
    for (std::size_t j = 0; j < wp.size(); ++j) {
      double v = wp[j] * p.posterior.probabilities[t];
      if (calibration) v = calibration->sigma1[t] * v + calibration->sigma2[t];
      if (first || v > best) {
        best = v;
        first = false;
        p.task_index = t;
        p.local_index = j;
      }
    }
  }
  p.global_class = model_.class_lists[p.task_index].at(p.local_index);
  return p;
}

Prediction Predictor::predict(std::span<const double> x, TaskScoreKind kind,
                              const CalibrationParams* calibration) const {
  const auto bundles = score(x);
  return decide(bundles, kind, calibration);
}

Prediction Predictor::predict(std::span<const double> x,
                              const CalibrationParams* calibration) const {
  return predict(x, task_score_kind(model_.config->score_variant), calibration);
}

std::size_t Predictor::predict_within(std::span<const double> x, std::size_t task) const {
  if (task >= task_count()) throw Error(Errc::unknown_task, "task index out of range");
  const TaskHead& head = model_.heads[task];
  const ForwardResult fr = forward(*model_.net, head, x, masks_[task]);
  const auto real = std::span<const double>(fr.logits).first(head.class_count);
  return static_cast<std::size_t>(std::max_element(real.begin(), real.end()) - real.begin());
}

}  // namespace tpl
