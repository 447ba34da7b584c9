#include <doctest.h>

#include <cmath>
#include <functional>

#include "tpl/error.hpp"
#include "tpl/evaluation.hpp"
#include "tpl/trainer.hpp"

using namespace tpl;

namespace {

double brute_auc(const Vector& ind, const Vector& ood) {
  double wins = 0.0;
  for (double a : ind) {
    for (double b : ood) wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  }
  return wins / static_cast<double>(ind.size() * ood.size());
}

Checkpoint checkpoint(std::size_t t, Vector task_acc, double acc) {
  Checkpoint c;
  c.tasks_learned = t;
  c.task_accuracy = std::move(task_acc);
  c.til_accuracy = c.task_accuracy;
  c.accuracy = acc;
  c.task_test_sizes.assign(t, 10);
  return c;
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::invalid_argument;
}

}  // namespace

TEST_CASE("accuracy") {
  const std::vector<int> zeros(20, 0);
  CHECK(accuracy(zeros, zeros) == 1.0);
  CHECK(code_of([] { (void)accuracy(std::span<const int>{}, std::span<const int>{}); }) ==
        Errc::empty_test_set);
  // Uniform random guesses over C classes land within 3 binomial sigmas of 1/C.
  Rng rng(1);
  const int C = 5, n = 20000;
  std::vector<int> guess(n), truth(n);
  for (int i = 0; i < n; ++i) {
    guess[i] = static_cast<int>(rng.below(C));
    truth[i] = static_cast<int>(rng.below(C));
  }
  const double p = 1.0 / C;
  CHECK(std::abs(accuracy(guess, truth) - p) <= 3.0 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("ood_auc examples and brute-force oracle") {
  CHECK(ood_auc(Vector{3, 4, 5}, Vector{0, 1, 2}) == 1.0);
  CHECK(ood_auc(Vector{1, 1, 1}, Vector{1, 1}) == 0.5);
  CHECK(code_of([] { (void)ood_auc(Vector{}, Vector{1.0}); }) == Errc::empty_class_list);
  Rng rng(2);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Vector a(1 + rng.below(50)), b(1 + rng.below(50));
    // Coarse values force ties.
    for (double& v : a) v = std::floor(rng.uniform(0, 8));
    for (double& v : b) v = trial % 2 ? std::floor(rng.uniform(0, 8)) : rng.normal();
    const double got = ood_auc(a, b);
    worst = std::max(worst, std::abs(got - brute_auc(a, b)));
    CHECK(std::abs(got + ood_auc(b, a) - 1.0) <= 1e-12);
    Vector ta = a, tb = b;
    for (double& v : ta) v = std::exp(0.3 * v) + 1.0;
    for (double& v : tb) v = std::exp(0.3 * v) + 1.0;
    CHECK(ood_auc(ta, tb) == got);
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("auc_acc_correlation") {
  const std::pair<double, double> line[] = {{0, 0}, {1, 2}, {2, 4}};
  const Correlation c = auc_acc_correlation(line);
  CHECK(c.pearson_r == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(c.slope == doctest::Approx(2.0).epsilon(1e-15));
  const std::pair<double, double> anti[] = {{0, 1}, {1, 0}, {2, -1}};
  CHECK(auc_acc_correlation(anti).pearson_r == doctest::Approx(-1.0).epsilon(1e-15));
  const std::pair<double, double> flat[] = {{0, 1}, {1, 1}, {2, 1}};
  CHECK(code_of([&] { (void)auc_acc_correlation(flat); }) == Errc::degenerate_variance);
  CHECK_THROWS_AS(auc_acc_correlation(std::span(line).first(2)), Error);

  Rng rng(3);
  std::vector<std::pair<double, double>> pts;
  for (int i = 0; i < 10; ++i) pts.emplace_back(rng.uniform(0.5, 1), rng.uniform(0.3, 1));
  long double mx = 0, my = 0;
  for (auto [x, y] : pts) {
    mx += x;
    my += y;
  }
  mx /= 10;
  my /= 10;
  long double sxx = 0, syy = 0, sxy = 0;
  for (auto [x, y] : pts) {
    sxx += (x - mx) * (x - mx);
    syy += (y - my) * (y - my);
    sxy += (x - mx) * (y - my);
  }
  const Correlation r = auc_acc_correlation(pts);
  CHECK(r.pearson_r == doctest::Approx(static_cast<double>(sxy / std::sqrt(sxx * syy))).epsilon(1e-12));
  CHECK(r.slope == doctest::Approx(static_cast<double>(sxy / sxx)).epsilon(1e-12));
}

TEST_CASE("forgetting rates: no gap, hand-computed table, missing prefix") {
  const std::vector<Checkpoint> traj{checkpoint(1, {0.9}, 0.9), checkpoint(2, {0.7, 0.8}, 0.75)};
  NclReference same{{{0.9}, {0.7, 0.8}}, {0.9, 0.75}};
  const ForgettingRates zero = forgetting_rates(traj, same);
  CHECK(zero.last == 0.0);
  CHECK(zero.aia == 0.0);
  NclReference ncl{{{1.0}, {0.95, 0.85}}, {1.0, 0.9}};
  const ForgettingRates f = forgetting_rates(traj, ncl);
  CHECK(f.last_by_prefix[0] == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(f.last == doctest::Approx(0.15).epsilon(1e-14));
  CHECK(f.aia == doctest::Approx(0.125).epsilon(1e-14));
  NclReference partial{{{1.0}}, {1.0}};
  CHECK(code_of([&] { (void)forgetting_rates(traj, partial); }) == Errc::missing_ncl_prefix);
  CHECK(code_of([] {
          std::vector<NclPrefixResult> v(1);
          v[0].prefix = 2;
          (void)assemble_ncl(v);
        }) == Errc::missing_ncl_prefix);
  CHECK(average_incremental_accuracy(traj) == doctest::Approx(0.825).epsilon(1e-15));
  CHECK(til_forgetting_display(traj) == doctest::Approx(0.2).epsilon(1e-14));
}

TEST_CASE("benchmark: NCL reference, forgetting identity and AIA consistency") {
  const TaskStream s = generate_gaussian_stream({3, 2, 16, 6.0, 100, 50, std::nullopt}, Rng(4));
  TrainConfig cfg;
  cfg.hidden = {32, 32};
  cfg.epochs = 8;
  cfg.buffer_capacity = 60;
  cfg.seed = 4;
  const RunArtifacts run = run_sequence(s, cfg);
  const NclReference ncl = train_ncl_reference(s, cfg, kernels::Execution::parallel);
  const NclReference serial = train_ncl_reference(s, cfg, kernels::Execution::serial);
  CHECK(ncl.task_accuracy == serial.task_accuracy);
  CHECK(ncl.accuracy == serial.accuracy);
  const MetricsReport m = build_metrics(run, s, ncl);
  CHECK(m.accuracy_trajectory.size() == 3);
  CHECK(std::abs(m.aia - mean(m.accuracy_trajectory)) <= 1e-12);
  CHECK(std::abs(m.forgetting_last - (m.ncl_last - m.last)) <= 1e-12);
  CHECK(m.ncl_last >= m.last - 0.02);
  REQUIRE(m.ood_auc.size() == 3);
  for (double a : m.ood_auc) CHECK((a >= 0.0 && a <= 1.0));
  CHECK(m.mean_ood_auc.has_value());

  // Prefix 1 is the single-task setting without an O target.
  const NclPrefixResult p1 = train_ncl_prefix(s, 1, cfg);
  CHECK(p1.task_accuracy.size() == 1);
  CHECK(p1.task_accuracy[0] >= 0.95);
  const NclPrefixResult again = train_ncl_prefix(s, 1, cfg);
  CHECK(again.epoch_losses == p1.epoch_losses);
  const NclPrefixResult round = ncl_prefix_from_json(to_json(p1));
  CHECK(round.task_accuracy == p1.task_accuracy);
  CHECK(round.epoch_losses == p1.epoch_losses);

  const Predictor pred(view_of(run));
  CHECK(cil_accuracy(pred, s.tasks(), TaskScoreKind::tpl_canonical) == m.last);
  for (std::size_t t = 0; t < 3; ++t) CHECK(til_accuracy(pred, t, s.task(t).test) == m.til_accuracy[t]);

  const nlohmann::json j = to_json(m);
  CHECK(j.contains("forgetting_cil_last"));
  CHECK(j.at("deprecated_til_forgetting").contains("note"));
}

TEST_CASE("per-task AUC is empty for a single task") {
  std::vector<std::vector<ScoreBundle>> b(3, std::vector<ScoreBundle>(1));
  const std::vector<std::size_t> owner(3, 0);
  CHECK(per_task_ood_auc(b, owner, 1, TaskScoreKind::mls).empty());
}
