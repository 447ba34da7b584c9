#include "tpl/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "tpl/error.hpp"
#include "tpl/json_util.hpp"
#include "tpl/kernels.hpp"
#include "tpl/log.hpp"
#include "tpl/predictor.hpp"
#include "tpl/scores.hpp"
#include "tpl/theory_lab.hpp"
#include "tpl/trainer.hpp"

namespace tpl::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Errors raised while reading configuration map to exit code 2.
struct ConfigFailure : Error {
  using Error::Error;
};

template <typename F>
auto config_stage(F f) {
  try {
    return f();
  } catch (const Error& e) {
    throw ConfigFailure(e.code(), e.what());
  }
}

json comparable_config(const RunConfig& config) {
  json j = to_json(config);
  j.erase("output_dir");
  return j;
}

std::string percent(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * v << '%';
  return s.str();
}

}  // namespace

NclReference load_or_train_ncl(const fs::path& cache_dir, const RunConfig& config,
                               const TaskStream& stream) {
  const json want = comparable_config(config);
  const fs::path config_copy = cache_dir / "config.json";
  bool valid = false;
  if (fs::exists(config_copy)) {
    try {
      valid = json_util::parse_file(config_copy) == want;
    } catch (const Error&) {
      valid = false;
    }
    if (!valid) log::warn("NCL cache in " + cache_dir.string() + " is stale, retraining");
  }
  const std::size_t T = stream.task_count();
  std::vector<std::optional<NclPrefixResult>> cached(T);
  if (valid) {
    for (std::size_t p = 1; p <= T; ++p) {
      const fs::path f = cache_dir / ("prefix_" + std::to_string(p) + ".json");
      if (!fs::exists(f)) continue;
      try {
        NclPrefixResult r = ncl_prefix_from_json(json_util::parse_file(f));
        if (r.prefix == p && r.task_accuracy.size() == p) cached[p - 1] = std::move(r);
      } catch (const Error&) {
      }
    }
  }
  std::vector<std::size_t> missing;
  for (std::size_t p = 1; p <= T; ++p) {
    if (!cached[p - 1]) missing.push_back(p);
  }
  if (!missing.empty()) {
    log::info("training " + std::to_string(missing.size()) + " NCL prefix model(s)");
    std::vector<std::optional<NclPrefixResult>> fresh(missing.size());
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1)
    for (std::size_t i = 0; i < missing.size(); ++i) {
      try {
        fresh[i] = train_ncl_prefix(stream, missing[i], config.train);
      } catch (...) {
#pragma omp critical
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
    fs::create_directories(cache_dir);
    json_util::write_file(config_copy, want);
    for (std::size_t i = 0; i < missing.size(); ++i) {
      json_util::write_file(cache_dir / ("prefix_" + std::to_string(missing[i]) + ".json"),
                            to_json(*fresh[i]));
      cached[missing[i] - 1] = std::move(fresh[i]);
    }
  }
  std::vector<NclPrefixResult> prefixes;
  for (auto& c : cached) prefixes.push_back(std::move(*c));
  return assemble_ncl(std::move(prefixes));
}

json ood_bench_report(const RunArtifacts& run, const TaskStream& stream) {
  const std::size_t T = run.task_count();
  std::vector<std::vector<Sample>> own;
  for (std::size_t t = 0; t < T; ++t) own.push_back(stream.task(t).train);
  const Predictor predictor(view_of(run), own);

  std::vector<Sample> samples;
  std::vector<std::size_t> owner;
  for (std::size_t t = 0; t < T; ++t) {
    for (const Sample& s : stream.task(t).test) {
      samples.push_back(s);
      owner.push_back(t);
    }
  }
  const auto bundles = kernels::score_batch(predictor, samples);

  json report;
  report["tasks"] = T;
  report["test_samples"] = samples.size();
  report["applicable"] = T >= 2;
  json rows = json::array();
  std::vector<std::pair<double, double>> pairs;
  for (TaskScoreKind kind :
       {TaskScoreKind::msp, TaskScoreKind::mls, TaskScoreKind::ebo, TaskScoreKind::md,
        TaskScoreKind::knn, TaskScoreKind::lr, TaskScoreKind::tpl_canonical,
        TaskScoreKind::tpl_algorithm1}) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (predictor.decide(bundles[i], kind).global_class == samples[i].label) ++correct;
    }
    if (samples.empty()) throw Error(Errc::empty_test_set, "no test samples");
    const double acc = static_cast<double>(correct) / static_cast<double>(samples.size());
    json row;
    row["score"] = std::string(to_string(kind));
    row["last_acc"] = acc;
    if (T >= 2) {
      const auto aucs = per_task_ood_auc(bundles, owner, T, kind);
      const double m = mean(aucs);
      row["task_auc"] = aucs;
      row["mean_auc"] = m;
      pairs.emplace_back(m, acc);
    } else {
      row["task_auc"] = nullptr;
      row["mean_auc"] = nullptr;
    }
    rows.push_back(std::move(row));
  }
  report["rows"] = std::move(rows);
  report["correlation"] = nullptr;
  if (T >= 2) {
    try {
      const Correlation c = auc_acc_correlation(pairs);
      report["correlation"] = {{"pearson_r", c.pearson_r}, {"slope", c.slope}};
    } catch (const Error& e) {
      if (e.code() != Errc::degenerate_variance) throw;
      log::warn("AUC/ACC correlation undefined: " + std::string(e.what()));
    }
  }
  return report;
}

std::string ood_bench_csv(const json& report) {
  std::ostringstream out;
  out << "score,mean_auc,last_acc\n";
  for (const json& row : report.at("rows")) {
    out << row.at("score").get<std::string>() << ',';
    if (row.at("mean_auc").is_null()) {
      out << "NA";
    } else {
      out << json_util::format_double(row.at("mean_auc").get<double>());
    }
    out << ',' << json_util::format_double(row.at("last_acc").get<double>()) << '\n';
  }
  return out.str();
}

json theory_report(const std::string& which, std::size_t samples, std::uint64_t seed) {
  using namespace theory;
  json report;
  report["case"] = which;
  report["samples"] = samples;
  report["seed"] = seed;
  if (which == "sec41") {
    const GaussianPair pair = narrow_complement_pair();
    const double x0[] = {0.0};
    const double x1[] = {1.0};
    report["log_lr_at_0"] = log_likelihood_ratio(pair, x0);
    report["log_lr_at_1"] = log_likelihood_ratio(pair, x1);
    report["oracle_auc_likelihood_ratio"] = oracle_auc(pair, Scorer::likelihood_ratio);
    report["oracle_auc_p_t_only"] = oracle_auc(pair, Scorer::p_t_only);
    report["empirical_auc_likelihood_ratio"] =
        empirical_auc(pair, Scorer::likelihood_ratio, samples, seed);
    report["empirical_auc_p_t_only"] = empirical_auc(pair, Scorer::p_t_only, samples, seed);
    const SignificanceCheck sig = significance_check(pair, 0.05, samples, seed);
    report["significance"] = {{"alpha", sig.alpha},
                              {"log_threshold", sig.log_threshold},
                              {"analytic_type1", sig.analytic_type1},
                              {"empirical_type1", sig.empirical_type1},
                              {"empirical_power", sig.empirical_power}};
  } else if (which == "dominance") {
    json pairs = json::array();
    bool all = true;
    for (const GaussianPair& pair : dominance_fixtures()) {
      json p;
      p["name"] = pair.name;
      const double lr = oracle_auc(pair, Scorer::likelihood_ratio);
      json oracle;
      oracle[std::string(to_string(Scorer::likelihood_ratio))] = lr;
      bool dominates = true;
      for (Scorer s : {Scorer::p_t_only, Scorer::p_tc_only_negated, Scorer::mean_distance}) {
        const double a = oracle_auc(pair, s);
        oracle[std::string(to_string(s))] = a;
        dominates = dominates && lr >= a - 1e-4;
      }
      p["oracle_auc"] = oracle;
      p["empirical_auc_likelihood_ratio"] =
          empirical_auc(pair, Scorer::likelihood_ratio, samples, seed);
      p["dominates"] = dominates;
      all = all && dominates;
      pairs.push_back(std::move(p));
    }
    report["pairs"] = std::move(pairs);
    report["all_dominate"] = all;
  } else if (which == "density") {
    const DensityCheck c = density_estimator_check(DensityCheckSpec{}, seed);
    report["md_spearman"] = c.md_spearman;
    report["md_points"] = c.md_points;
    report["md_saturated"] = c.md_saturated;
    report["knn_spearman"] = c.knn_spearman;
    report["knn_points"] = c.knn_points;
    report["reference_size"] = c.reference_size;
    report["k"] = c.k;
  } else {
    throw Error(Errc::invalid_argument, "unknown theory case '" + which + "'");
  }
  return report;
}

std::string dump_features_csv(const RunArtifacts& run, const TaskStream& stream,
                              std::size_t task_index, bool test_split) {
  if (task_index >= run.task_count()) {
    throw Error(Errc::unknown_task, "task " + std::to_string(task_index + 1) + " not in the run");
  }
  const TaskDataset& task = stream.task(task_index);
  const auto& samples = test_split ? task.test : task.train;
  if (samples.empty()) {
    throw Error(Errc::empty_input, std::string(test_split ? "test" : "train") +
                                       " split of task " + std::to_string(task_index + 1) +
                                       " is empty");
  }
  const Matrix features =
      kernels::extract_features_batch(run.net, samples, run.net.inference_mask(task_index));
  std::ostringstream out;
  out << "row,label";
  for (std::size_t j = 0; j < features.cols(); ++j) out << ",raw_f" << j;
  for (std::size_t j = 0; j < features.cols(); ++j) out << ",norm_f" << j;
  out << '\n';
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out << i << ',' << samples[i].label;
    const auto row = features.row(i);
    for (double v : row) out << ',' << json_util::format_double(v);
    for (double v : l2_normalized(row)) out << ',' << json_util::format_double(v);
    out << '\n';
  }
  return out.str();
}

namespace {

// Rows of `[label,]f0,...`; a leading non-numeric line is taken as a header.
std::vector<Vector> read_prediction_input(const fs::path& path, std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::vector<Vector> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    Vector values;
    bool numeric = true;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const auto first = cell.find_first_not_of(" \t");
      const auto last = cell.find_last_not_of(" \t");
      const std::string trimmed =
          first == std::string::npos ? "" : cell.substr(first, last - first + 1);
      double v = 0.0;
      const auto res = std::from_chars(trimmed.data(), trimmed.data() + trimmed.size(), v);
      if (trimmed.empty() || res.ec != std::errc() || res.ptr != trimmed.data() + trimmed.size()) {
        numeric = false;
        break;
      }
      values.push_back(v);
    }
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (!numeric) {
      if (rows.empty() && line_no == 1) continue;
      throw Error(Errc::parse_error, where + ": malformed number");
    }
    if (values.size() == dim + 1) {
      values.erase(values.begin());
    } else if (values.size() != dim) {
      throw Error(Errc::dimension_mismatch, where + ": expected " + std::to_string(dim) +
                                                " features (optionally preceded by a label)");
    }
    rows.push_back(std::move(values));
  }
  return rows;
}

struct Options {
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

int cmd_train(const Options& opt, const std::string& config_path, std::ostream& out) {
  RunConfig config = config_stage([&] { return load_run_config(config_path); });
  if (opt.seed) config.train.seed = *opt.seed;
  if (!opt.out.empty()) config.output_dir = opt.out;
  const TaskStream stream = config_stage([&] {
    TaskStream s = load_dataset(config);
    return s;
  });
  TrainHooks hooks;
  hooks.on_task_complete = [&](const RunArtifacts& run) {
    if (opt.quiet) return;
    const Checkpoint& cp = run.trajectory.back();
    out << "task " << cp.tasks_learned << '/' << stream.task_count() << "  A(<="
        << cp.tasks_learned << ") = " << percent(cp.accuracy) << std::endl;
  };
  const RunArtifacts run = run_sequence(stream, config.train, hooks);
  save_run(config.output_dir, config, run);
  if (!opt.quiet) out << "run written to " << config.output_dir.string() << '\n';
  return kExitOk;
}

int cmd_eval(const Options& opt, const std::string& run_dir, const std::string& ncl_dir,
             std::ostream& out) {
  const LoadedRun loaded = config_stage([&] { return load_run(run_dir); });
  const TaskStream stream = load_dataset(loaded.config);
  const fs::path cache = ncl_dir.empty() ? fs::path(run_dir) / "ncl" : fs::path(ncl_dir);
  const NclReference ncl = load_or_train_ncl(cache, loaded.config, stream);
  const MetricsReport m = build_metrics(loaded.artifacts, stream, ncl);
  const fs::path target = opt.out.empty() ? fs::path(run_dir) / "metrics.json" : fs::path(opt.out);
  json_util::write_file(target, to_json(m));
  if (!opt.quiet) {
    out << "Last " << percent(m.last) << "  AIA " << percent(m.aia) << "  F_last "
        << percent(m.forgetting_last) << "  F_aia " << percent(m.forgetting_aia) << '\n';
    out << "metrics written to " << target.string() << '\n';
  }
  return kExitOk;
}

int cmd_predict(const Options& opt, const std::string& run_dir, const std::string& input,
                const std::string& output, std::ostream& out) {
  const LoadedRun loaded = config_stage([&] { return load_run(run_dir); });
  const RunArtifacts& run = loaded.artifacts;
  const auto rows = read_prediction_input(input, run.net.input_dim());
  std::vector<Sample> samples;
  for (const Vector& r : rows) samples.push_back(Sample{r, 0});
  const Predictor predictor(view_of(run));
  const CalibrationParams* calib = run.config.calibration.enabled ? &run.calibration : nullptr;
  const auto predictions = kernels::predict_batch(
      predictor, samples, task_score_kind(run.config.score_variant), calib);
  std::ostringstream csv;
  csv << "row,predicted_class,predicted_task,p_task,score_variant\n";
  const std::string variant(to_string(run.config.score_variant));
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const Prediction& p = predictions[i];
    csv << i << ',' << p.global_class << ',' << p.task_index + 1 << ','
        << json_util::format_double(p.posterior.probabilities.at(p.task_index)) << ',' << variant
        << '\n';
  }
  const std::string target = output.empty() ? opt.out : output;
  if (target.empty()) {
    out << csv.str();
  } else {
    write_text(target, csv.str());
    if (!opt.quiet) out << predictions.size() << " predictions written to " << target << '\n';
  }
  return kExitOk;
}

int cmd_ood_bench(const Options& opt, const std::string& run_dir, std::ostream& out) {
  const LoadedRun loaded = config_stage([&] { return load_run(run_dir); });
  const TaskStream stream = load_dataset(loaded.config);
  const json report = ood_bench_report(loaded.artifacts, stream);
  const fs::path target =
      opt.out.empty() ? fs::path(run_dir) / "ood_bench.json" : fs::path(opt.out);
  json_util::write_file(target, report);
  fs::path csv_path = target;
  csv_path.replace_extension(".csv");
  write_text(csv_path, ood_bench_csv(report));
  if (!opt.quiet) {
    if (!report.at("applicable").get<bool>()) {
      out << "single-task run: task-id AUC not applicable\n";
    }
    out << ood_bench_csv(report);
  }
  return kExitOk;
}

int cmd_theory(const Options& opt, const std::string& which, std::size_t samples,
               std::ostream& out) {
  const json report = theory_report(which, samples, opt.seed.value_or(1));
  if (opt.out.empty()) {
    out << report.dump(2) << '\n';
  } else {
    json_util::write_file(opt.out, report);
    if (!opt.quiet) out << "report written to " << opt.out << '\n';
  }
  return kExitOk;
}

int cmd_dump(const Options& opt, const std::string& run_dir, std::size_t task_id,
             const std::string& split, std::ostream& out) {
  const LoadedRun loaded = config_stage([&] { return load_run(run_dir); });
  const TaskStream stream = load_dataset(loaded.config);
  if (task_id == 0) throw Error(Errc::unknown_task, "task ids start at 1");
  const std::string csv = dump_features_csv(loaded.artifacts, stream, task_id - 1, split == "test");
  if (opt.out.empty()) {
    out << csv;
  } else {
    write_text(opt.out, csv);
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Task-id prediction by likelihood ratio for class-incremental learning", "tpl"};
  app.require_subcommand(1);
  app.fallthrough();
  Options opt;
  app.add_option("--seed", opt.seed, "Override the seed");
  app.add_option("--out", opt.out, "Output path of the subcommand");
  app.add_flag("--quiet", opt.quiet, "Suppress progress output");

  std::string config_path, run_dir, ncl_dir, input, output, which = "sec41", split = "test";
  std::size_t samples = 100000;
  std::size_t task_id = 1;

  auto* train = app.add_subcommand("train", "Train a run from a JSON config");
  train->add_option("--config", config_path, "Run config")->required();

  auto* eval = app.add_subcommand("eval", "Compute metrics.json for a run");
  eval->add_option("--run", run_dir, "Run directory")->required();
  eval->add_option("--ncl", ncl_dir, "NCL cache directory (default RUN/ncl)");

  auto* predict = app.add_subcommand("predict", "Predict classes for a feature CSV");
  predict->add_option("--run", run_dir, "Run directory")->required();
  predict->add_option("--input", input, "Feature CSV")->required();
  predict->add_option("--output", output, "Prediction CSV (default --out or stdout)");

  auto* bench = app.add_subcommand("ood-bench", "Per-score task-id AUC and accuracy table");
  bench->add_option("--run", run_dir, "Run directory")->required();

  auto* theory = app.add_subcommand("theory-check", "Gaussian likelihood-ratio checks");
  theory->add_option("--case", which, "sec41, dominance or density")
      ->check(CLI::IsMember({"sec41", "dominance", "density"}));
  theory->add_option("--samples", samples, "Monte Carlo draws per side")
      ->check(CLI::PositiveNumber);

  auto* dump = app.add_subcommand("dump-features", "Raw and normalized features of one task");
  dump->add_option("--run", run_dir, "Run directory")->required();
  dump->add_option("--task", task_id, "1-based task id")->required();
  dump->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  log::set_quiet(opt.quiet);

  try {
    if (*train) return cmd_train(opt, config_path, out);
    if (*eval) return cmd_eval(opt, run_dir, ncl_dir, out);
    if (*predict) return cmd_predict(opt, run_dir, input, output, out);
    if (*bench) return cmd_ood_bench(opt, run_dir, out);
    if (*theory) return cmd_theory(opt, which, samples, out);
    if (*dump) return cmd_dump(opt, run_dir, task_id, split, out);
  } catch (const ConfigFailure& e) {
    err << "tpl: " << errc_name(e.code()) << ": " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    err << "tpl: " << errc_name(e.code()) << ": " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "tpl: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace tpl::cli
