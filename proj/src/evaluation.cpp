#include "tpl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "tpl/error.hpp"
#include "tpl/hat_mlp.hpp"

namespace tpl {

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (truth.empty()) throw Error(Errc::empty_test_set, "no test samples");
  if (predicted.size() != truth.size()) {
    throw Error(Errc::shape_mismatch, "prediction and label counts differ");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

double cil_accuracy(const Predictor& predictor, std::span<const TaskDataset> tasks,
                    TaskScoreKind kind, const CalibrationParams* calibration) {
  std::vector<int> predicted;
  std::vector<int> truth;
  for (const TaskDataset& task : tasks) {
    const auto preds = kernels::predict_batch(predictor, task.test, kind, calibration);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      predicted.push_back(preds[i].global_class);
      truth.push_back(task.test[i].label);
    }
  }
  return accuracy(predicted, truth);
}

double til_accuracy(const Predictor& predictor, std::size_t task, std::span<const Sample> test) {
  const auto& classes = predictor.model().class_lists[task];
  std::vector<int> predicted;
  std::vector<int> truth;
  for (const Sample& s : test) {
    predicted.push_back(classes.at(predictor.predict_within(s.features, task)));
    truth.push_back(s.label);
  }
  return accuracy(predicted, truth);
}

NclPrefixResult train_ncl_prefix(const TaskStream& stream, std::size_t prefix,
                                 const TrainConfig& cfg) {
  cfg.validate();
  if (prefix == 0 || prefix > stream.task_count()) {
    throw Error(Errc::unknown_task, "prefix outside 1..T");
  }
  std::vector<int> classes;
  for (std::size_t t = 0; t < prefix; ++t) {
    const auto& cl = stream.task(t).class_list;
    classes.insert(classes.end(), cl.begin(), cl.end());
  }
  const auto index_of = [&](int label) {
    return static_cast<int>(std::find(classes.begin(), classes.end(), label) - classes.begin());
  };
  std::vector<TrainingExample> pool;
  for (std::size_t t = 0; t < prefix; ++t) {
    for (const Sample& s : stream.task(t).train) pool.push_back({s.features, index_of(s.label)});
  }
  if (pool.empty()) throw Error(Errc::empty_training_set, "prefix has no training samples");

  const Rng rng = Rng(cfg.seed).split("ncl").split(prefix);
  Rng init = rng.split("init");
  Rng head_rng = rng.split("head");
  HatMlp net(stream.dim(), cfg.hidden, cfg.s_max, init);
  TaskHead head = make_head(net.feature_dim(), classes.size(), head_rng);

  const std::size_t n = pool.size();
  const SgdStep step{cfg.learning_rate, cfg.momentum};
  MomentumState momentum = Gradients::zeros_like(net, head);
  Gradients grads;
  const LossOptions options{std::nullopt, 1.0, 0.0, classes.size()};
  std::vector<std::size_t> order(n);
  std::vector<TrainingExample> batch;
  NclPrefixResult result;
  result.prefix = prefix;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng epoch_rng = rng.split("epoch").split(epoch);
    shuffle(std::span<std::size_t>(order), epoch_rng);
    CompensatedSum epoch_loss;
    for (std::size_t lo = 0; lo < n; lo += cfg.batch_size) {
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      batch.clear();
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(pool[order[i]]);
      const double loss = loss_and_gradients(net, head, batch, options, grads);
      epoch_loss.add(loss * static_cast<double>(hi - lo));
      masked_gradient_update(net, head, grads, std::nullopt, step, momentum);
    }
    result.epoch_losses.push_back(epoch_loss.value() / static_cast<double>(n));
  }

  const LayerMasks ones = net.ones_mask();
  std::size_t correct_total = 0;
  std::size_t total = 0;
  for (std::size_t t = 0; t < prefix; ++t) {
    const auto& test = stream.task(t).test;
    if (test.empty()) throw Error(Errc::empty_test_set, "prefix task has no test samples");
    std::size_t correct = 0;
    for (const Sample& s : test) {
      const ForwardResult fr = forward(net, head, s.features, ones);
      const auto real = std::span<const double>(fr.logits).first(classes.size());
      const auto best = std::max_element(real.begin(), real.end()) - real.begin();
      if (classes[static_cast<std::size_t>(best)] == s.label) ++correct;
    }
    result.task_accuracy.push_back(static_cast<double>(correct) /
                                   static_cast<double>(test.size()));
    correct_total += correct;
    total += test.size();
  }
  result.accuracy = static_cast<double>(correct_total) / static_cast<double>(total);
  return result;
}

NclReference assemble_ncl(std::vector<NclPrefixResult> prefixes) {
  std::sort(prefixes.begin(), prefixes.end(),
            [](const auto& a, const auto& b) { return a.prefix < b.prefix; });
  NclReference ref;
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    if (prefixes[i].prefix != i + 1) {
      throw Error(Errc::missing_ncl_prefix,
                  "reference for prefix " + std::to_string(i + 1) + " is missing");
    }
    ref.task_accuracy.push_back(std::move(prefixes[i].task_accuracy));
    ref.accuracy.push_back(prefixes[i].accuracy);
  }
  return ref;
}

NclReference train_ncl_reference(const TaskStream& stream, const TrainConfig& cfg,
                                 kernels::Execution exec) {
  const std::size_t T = stream.task_count();
  std::vector<NclPrefixResult> results(T);
  if (exec == kernels::Execution::serial) {
    for (std::size_t t = 0; t < T; ++t) results[t] = train_ncl_prefix(stream, t + 1, cfg);
  } else {
    std::exception_ptr failure;
    const auto count = static_cast<std::ptrdiff_t>(T);
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t t = 0; t < count; ++t) {
      try {
        results[static_cast<std::size_t>(t)] =
            train_ncl_prefix(stream, static_cast<std::size_t>(t) + 1, cfg);
      } catch (...) {
#pragma omp critical(tpl_ncl_failure)
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  }
  return assemble_ncl(std::move(results));
}

ForgettingRates forgetting_rates(std::span<const Checkpoint> trajectory,
                                 const NclReference& ncl) {
  if (trajectory.empty()) throw Error(Errc::empty_input, "empty accuracy trajectory");
  ForgettingRates rates;
  CompensatedSum aia;
  for (std::size_t t = 1; t <= trajectory.size(); ++t) {
    if (t > ncl.prefixes() || ncl.task_accuracy[t - 1].size() != t) {
      throw Error(Errc::missing_ncl_prefix,
                  "no reference accuracies for prefix " + std::to_string(t));
    }
    const Checkpoint& cp = trajectory[t - 1];
    if (cp.task_accuracy.size() != t) {
      throw Error(Errc::shape_mismatch, "checkpoint has the wrong number of tasks");
    }
    CompensatedSum gap;
    for (std::size_t i = 0; i < t; ++i) gap.add(ncl.task_accuracy[t - 1][i] - cp.task_accuracy[i]);
    const double f = gap.value() / static_cast<double>(t);
    rates.last_by_prefix.push_back(f);
    aia.add(f);
  }
  rates.last = rates.last_by_prefix.back();
  rates.aia = aia.value() / static_cast<double>(trajectory.size());
  return rates;
}

double til_forgetting_display(std::span<const Checkpoint> trajectory) {
  const std::size_t T = trajectory.size();
  if (T < 2) return 0.0;
  CompensatedSum total;
  for (std::size_t i = 0; i + 1 < T; ++i) {
    double best = 0.0;
    for (std::size_t k = i; k + 1 < T; ++k) best = std::max(best, trajectory[k].til_accuracy.at(i));
    total.add(best - trajectory[T - 1].til_accuracy.at(i));
  }
  return total.value() / static_cast<double>(T - 1);
}

double average_incremental_accuracy(std::span<const Checkpoint> trajectory) {
  if (trajectory.empty()) throw Error(Errc::empty_input, "empty accuracy trajectory");
  CompensatedSum s;
  for (const Checkpoint& cp : trajectory) s.add(cp.accuracy);
  return s.value() / static_cast<double>(trajectory.size());
}

double ood_auc(std::span<const double> ind, std::span<const double> ood) {
  if (ind.empty() || ood.empty()) throw Error(Errc::empty_class_list, "both score sets must be non-empty");
  const std::size_t n = ind.size() + ood.size();
  std::vector<std::pair<double, bool>> all;
  all.reserve(n);
  for (double v : ind) all.emplace_back(v, true);
  for (double v : ood) all.emplace_back(v, false);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  // Ranks are 1-based; ties share the average of their positions.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && all[j].first == all[i].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t m = i; m < j; ++m)
      if (all[m].second) rank_sum += avg;
    i = j;
  }
  const auto n1 = static_cast<double>(ind.size());
  const auto n2 = static_cast<double>(ood.size());
  return (rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n2);
}

Correlation auc_acc_correlation(std::span<const std::pair<double, double>> pairs) {
  if (pairs.size() < 3) throw Error(Errc::invalid_argument, "correlation needs at least 3 pairs");
  CompensatedSum sx;
  CompensatedSum sy;
  for (const auto& [x, y] : pairs) {
    sx.add(x);
    sy.add(y);
  }
  const double n = static_cast<double>(pairs.size());
  const double mx = sx.value() / n;
  const double my = sy.value() / n;
  CompensatedSum sxx;
  CompensatedSum syy;
  CompensatedSum sxy;
  for (const auto& [x, y] : pairs) {
    sxx.add((x - mx) * (x - mx));
    syy.add((y - my) * (y - my));
    sxy.add((x - mx) * (y - my));
  }
  if (sxx.value() == 0.0 || syy.value() == 0.0) {
    throw Error(Errc::degenerate_variance, "a coordinate is constant across pairs");
  }
  return {sxy.value() / std::sqrt(sxx.value() * syy.value()), sxy.value() / sxx.value()};
}

std::vector<double> per_task_ood_auc(std::span<const std::vector<ScoreBundle>> bundles,
                                     std::span<const std::size_t> true_task, std::size_t tasks,
                                     TaskScoreKind kind) {
  if (bundles.size() != true_task.size()) throw Error(Errc::shape_mismatch, "one task per sample");
  std::vector<double> out;
  if (tasks < 2) return out;
  for (std::size_t t = 0; t < tasks; ++t) {
    std::vector<double> ind;
    std::vector<double> ood;
    for (std::size_t n = 0; n < bundles.size(); ++n) {
      const double v = bundles[n].at(t).select(kind);
      (true_task[n] == t ? ind : ood).push_back(v);
    }
    out.push_back(ood_auc(ind, ood));
  }
  return out;
}

MetricsReport build_metrics(const RunArtifacts& run, const TaskStream& stream,
                            const NclReference& ncl) {
  if (run.trajectory.size() != run.task_count() || run.task_count() != stream.task_count()) {
    throw Error(Errc::shape_mismatch, "run and stream disagree on the number of tasks");
  }
  MetricsReport r;
  for (const Checkpoint& cp : run.trajectory) r.accuracy_trajectory.push_back(cp.accuracy);
  r.last = run.trajectory.back().accuracy;
  r.aia = average_incremental_accuracy(run.trajectory);
  const ForgettingRates f = forgetting_rates(run.trajectory, ncl);
  r.forgetting_last = f.last;
  r.forgetting_aia = f.aia;
  r.forgetting_last_by_prefix = f.last_by_prefix;
  r.task_accuracy = run.trajectory.back().task_accuracy;
  r.til_accuracy = run.trajectory.back().til_accuracy;
  r.ncl_last = ncl.accuracy.at(run.task_count() - 1);
  r.ncl_task_accuracy = ncl.task_accuracy.at(run.task_count() - 1);
  r.til_forgetting_display = til_forgetting_display(run.trajectory);

  if (run.task_count() >= 2) {
    const Predictor predictor(view_of(run));
    std::vector<Sample> samples;
    std::vector<std::size_t> owner;
    for (std::size_t t = 0; t < stream.task_count(); ++t) {
      for (const Sample& s : stream.task(t).test) {
        samples.push_back(s);
        owner.push_back(t);
      }
    }
    const auto bundles = kernels::score_batch(predictor, samples);
    r.ood_auc = per_task_ood_auc(bundles, owner, run.task_count(),
                                 task_score_kind(run.config.score_variant));
    r.mean_ood_auc = mean(r.ood_auc);
  }
  return r;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["accuracy_trajectory"] = r.accuracy_trajectory;
  j["last"] = r.last;
  j["aia"] = r.aia;
  j["forgetting_cil_last"] = r.forgetting_last;
  j["forgetting_cil_aia"] = r.forgetting_aia;
  j["forgetting_cil_last_by_prefix"] = r.forgetting_last_by_prefix;
  j["task_accuracy"] = r.task_accuracy;
  j["til_accuracy"] = r.til_accuracy;
  j["ood_auc"] = r.ood_auc.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.ood_auc);
  j["mean_ood_auc"] = optional_json(r.mean_ood_auc);
  j["ncl_last"] = r.ncl_last;
  j["ncl_task_accuracy"] = r.ncl_task_accuracy;
  j["deprecated_til_forgetting"] = {
      {"value", r.til_forgetting_display},
      {"note", "TIL-style forgetting, display only; not a CIL metric"}};
  if (r.auc_acc) {
    j["auc_acc_correlation"] = {{"pearson_r", r.auc_acc->pearson_r},
                                {"slope", r.auc_acc->slope}};
  }
  return j;
}

nlohmann::json to_json(const NclPrefixResult& p) {
  return {{"prefix", p.prefix},
          {"task_accuracy", p.task_accuracy},
          {"accuracy", p.accuracy},
          {"epoch_losses", p.epoch_losses}};
}

NclPrefixResult ncl_prefix_from_json(const nlohmann::json& j) {
  try {
    NclPrefixResult p;
    p.prefix = j.at("prefix").get<std::size_t>();
    p.task_accuracy = j.at("task_accuracy").get<Vector>();
    p.accuracy = j.at("accuracy").get<double>();
    p.epoch_losses = j.at("epoch_losses").get<std::vector<double>>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse_error, std::string("malformed NCL record: ") + e.what());
  }
}

}  // namespace tpl
