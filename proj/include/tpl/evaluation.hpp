#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tpl/config.hpp"
#include "tpl/data.hpp"
#include "tpl/kernels.hpp"
#include "tpl/predictor.hpp"
#include "tpl/run.hpp"

namespace tpl {

double accuracy(std::span<const int> predicted, std::span<const int> truth);

// Pooled CIL accuracy over the test splits of `tasks`.
double cil_accuracy(const Predictor& predictor, std::span<const TaskDataset> tasks,
                    TaskScoreKind kind, const CalibrationParams* calibration = nullptr);
double til_accuracy(const Predictor& predictor, std::size_t task, std::span<const Sample> test);

// Accuracies of the jointly trained reference, one entry per prefix length.
struct NclReference {
  std::vector<Vector> task_accuracy;  // [t-1][i]: A_i^(t, NCL)
  Vector accuracy;                    // pooled accuracy of prefix model t

  std::size_t prefixes() const noexcept { return task_accuracy.size(); }
};

struct NclPrefixResult {
  std::size_t prefix = 0;
  Vector task_accuracy;
  double accuracy = 0.0;
  std::vector<double> epoch_losses;
};

// Unmasked MLP of the same widths with one head over every class of tasks
// 1..prefix, trained on the pooled training splits.
NclPrefixResult train_ncl_prefix(const TaskStream& stream, std::size_t prefix,
                                 const TrainConfig& cfg);
NclReference train_ncl_reference(const TaskStream& stream, const TrainConfig& cfg,
                                 kernels::Execution exec = kernels::Execution::parallel);
NclReference assemble_ncl(std::vector<NclPrefixResult> prefixes);

struct ForgettingRates {
  double last = 0.0;
  double aia = 0.0;
  Vector last_by_prefix;  // F_CIL,Last^(t) for t = 1..T
};

ForgettingRates forgetting_rates(std::span<const Checkpoint> trajectory, const NclReference& ncl);

// Classic TIL-style forgetting (best earlier within-task accuracy minus final),
// kept for display only.
double til_forgetting_display(std::span<const Checkpoint> trajectory);

double average_incremental_accuracy(std::span<const Checkpoint> trajectory);

// Mann-Whitney statistic with average ranks for ties.
double ood_auc(std::span<const double> ind, std::span<const double> ood);

struct Correlation {
  double pearson_r = 0.0;
  double slope = 0.0;
};

// Pearson r of (auc, acc) pairs and the least-squares slope of acc on auc.
Correlation auc_acc_correlation(std::span<const std::pair<double, double>> pairs);

// Per-task AUC of `kind` with task t's test data as IND and all other tasks'
// test data as OOD. Empty when fewer than two tasks were learned.
std::vector<double> per_task_ood_auc(std::span<const std::vector<ScoreBundle>> bundles,
                                     std::span<const std::size_t> true_task, std::size_t tasks,
                                     TaskScoreKind kind);

struct MetricsReport {
  Vector accuracy_trajectory;  // A^(<=t)
  double last = 0.0;
  double aia = 0.0;
  double forgetting_last = 0.0;
  double forgetting_aia = 0.0;
  Vector forgetting_last_by_prefix;
  Vector task_accuracy;  // A_i^(T)
  Vector til_accuracy;
  std::vector<double> ood_auc;  // empty for single-task runs
  std::optional<double> mean_ood_auc;
  double ncl_last = 0.0;
  Vector ncl_task_accuracy;
  double til_forgetting_display = 0.0;
  std::optional<Correlation> auc_acc;
};

MetricsReport build_metrics(const RunArtifacts& run, const TaskStream& stream,
                            const NclReference& ncl);

nlohmann::json to_json(const MetricsReport& report);
nlohmann::json to_json(const NclPrefixResult& prefix);
NclPrefixResult ncl_prefix_from_json(const nlohmann::json& j);

}  // namespace tpl
