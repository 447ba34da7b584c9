#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "tpl/error.hpp"
#include "tpl/numerics.hpp"
#include "tpl/scores.hpp"

using namespace tpl;

namespace {

Matrix random_spd(std::size_t n, Rng& rng) {
  Matrix a(n, n);
  for (double& v : a.entries()) v = rng.uniform(-1.0, 1.0);
  Matrix m = multiply(a.transposed(), a);
  for (std::size_t i = 0; i < n; ++i) m(i, i) += 0.5;
  return m;
}

Matrix normalized_rows(const std::vector<Vector>& rows) {
  Matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Vector u = l2_normalized(rows[i]);
    std::copy(u.begin(), u.end(), m.row(i).begin());
  }
  return m;
}

// Sort every distance and pick the k-th.
double brute_knn(const Vector& z, const std::vector<Vector>& refs, std::size_t k) {
  long double nz = 0.0L;
  for (double v : z) nz += (long double)v * v;
  nz = std::sqrt(nz);
  std::vector<double> d;
  for (const Vector& r : refs) {
    long double nr = 0.0L;
    for (double v : r) nr += (long double)v * v;
    nr = std::sqrt(nr);
    long double s = 0.0L;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const long double a = nz > 0 ? z[i] / nz : 0.0L;
      const long double b = nr > 0 ? r[i] / nr : 0.0L;
      s += (a - b) * (a - b);
    }
    d.push_back(static_cast<double>(std::sqrt(s)));
  }
  std::sort(d.begin(), d.end());
  return d[std::min(k, d.size()) - 1];
}

}  // namespace

TEST_CASE("logit scores exclude the O unit") {
  const double a[] = {2.0, 5.0, -1.0};
  const double b[] = {2.0, 5.0, 9.0};
  CHECK(mls(a, 2) == 5.0);
  CHECK(mls(b, 2) == 5.0);
  const double uniform[] = {0.3, 0.3, 0.3, 0.3, 7.0};
  CHECK(msp(uniform, 4) == doctest::Approx(0.25).epsilon(1e-15));
  const double single[] = {1.7, 4.0};
  CHECK(msp(single, 1) == 1.0);
  CHECK(ebo(single, 1) == 1.7);
  CHECK_THROWS_AS(mls(a, 3), Error);
  const Vector w = within_task_probabilities(b, 2);
  CHECK(w.size() == 2);
  CHECK(w[0] + w[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("logit scores match brute force on 1000 random vectors") {
  Rng rng(2);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t c = 1 + rng.below(8);
    Vector v(c + 1);
    for (double& x : v) x = rng.uniform(-10, 10);
    const double m = *std::max_element(v.begin(), v.begin() + static_cast<long>(c));
    CHECK(mls(v, c) == m);
    const std::span<const double> real(v.data(), c);
    CHECK(ebo(v, c) == log_sum_exp(real));
    long double z = 0.0L;
    for (std::size_t i = 0; i < c; ++i) z += std::exp((long double)v[i]);
    worst = std::max(worst, std::abs(msp(v, c) - static_cast<double>(std::exp((long double)m) / z)));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("md_score examples") {
  TaskStats s;
  s.centroids = {{0.0, 0.0}};
  s.covariance = Matrix::identity(2);
  s.covariance_inverse = Matrix::identity(2);
  const double z[] = {3.0, 4.0};
  CHECK(md_score(z, s) == doctest::Approx(0.04).epsilon(1e-15));
  const double at[] = {0.0, 0.0};
  CHECK(md_score(at, s) == 1e12);
}

TEST_CASE("md_score matches a brute-force loop, with and without inversion") {
  Rng rng(3);
  double worst_direct = 0.0, worst_chain = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 1 + rng.below(6);
    const std::size_t classes = 1 + rng.below(4);
    TaskStats s;
    for (std::size_t c = 0; c < classes; ++c) {
      Vector mu(d);
      for (double& v : mu) v = rng.uniform(-3, 3);
      s.centroids.push_back(mu);
    }
    s.covariance = random_spd(d, rng);
    s.covariance_inverse = spd_inverse(s.covariance, 0.0);
    Vector z(d);
    for (double& v : z) v = rng.uniform(-4, 4);
    long double best = std::numeric_limits<long double>::infinity();
    std::vector<long double> diff(d);
    for (const Vector& mu : s.centroids) {
      for (std::size_t i = 0; i < d; ++i) diff[i] = (long double)z[i] - mu[i];
      long double q = 0.0L;
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) q += diff[i] * s.covariance_inverse(i, j) * diff[j];
      }
      best = std::min(best, q);
    }
    const double oracle = static_cast<double>(1.0L / std::max(best, 1e-12L));
    const double got = md_score(z, s);
    worst_direct = std::max(worst_direct, std::abs(got - oracle) / std::max(1.0, oracle));
    // Chain through the SPD solve: compare against Σ⁻¹ obtained by solving Σ y = diff.
    const auto l = cholesky(s.covariance);
    REQUIRE(l);
    long double best_solve = std::numeric_limits<long double>::infinity();
    for (const Vector& mu : s.centroids) {
      std::vector<long double> y(d);
      for (std::size_t i = 0; i < d; ++i) {
        long double acc = (long double)z[i] - mu[i];
        for (std::size_t k = 0; k < i; ++k) acc -= (*l)(i, k) * y[k];
        y[i] = acc / (*l)(i, i);
      }
      long double q = 0.0L;
      for (long double v : y) q += v * v;
      best_solve = std::min(best_solve, q);
    }
    const double chain = static_cast<double>(1.0L / std::max(best_solve, 1e-12L));
    worst_chain = std::max(worst_chain, std::abs(got - chain) / std::max(1.0, chain));
  }
  CHECK(worst_direct <= 1e-9);
  CHECK(worst_chain <= 1e-6);
}

TEST_CASE("knn_distance examples") {
  const std::vector<Vector> refs{{1.0, 0.0}, {0.0, 2.0}, {-3.0, -3.0}};
  const Matrix ref = normalized_rows(refs);
  const double z[] = {0.0, 5.0};
  CHECK(knn_distance(z, ref, 1) == 0.0);
  CHECK(knn_distance(z, ref, 3) <= 2.0);
  // Fewer than k rows: farthest available.
  CHECK(knn_distance(z, ref, 10) == doctest::Approx(brute_knn({0.0, 5.0}, refs, 3)));
  CHECK_THROWS_AS(knn_distance(z, Matrix(), 1), Error);
  try {
    (void)knn_distance(z, Matrix(), 1);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::empty_buffer_view);
  }
}

TEST_CASE("knn_distance equals the brute-force order statistic") {
  Rng rng(4);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 1 + rng.below(8);
    const std::size_t n = 1 + rng.below(200);
    std::vector<Vector> refs(n, Vector(d));
    for (auto& r : refs) {
      for (double& v : r) v = rng.normal();
    }
    if (trial % 10 == 0) refs[0] = Vector(d, 0.0);
    Vector z(d);
    for (double& v : z) v = rng.normal();
    const std::size_t k = 1 + rng.below(10);
    const double got = knn_distance(z, normalized_rows(refs), k);
    CHECK(got <= 2.0 + 1e-12);
    worst = std::max(worst, std::abs(got - brute_knn(z, refs, k)));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("tpl_score compositions") {
  // β1·mls = β2·md + d = 3
  const double S = 3.0;
  CHECK(tpl_score(1.5, 2.0, 1.0, 2.0, 1.0, ScoreVariant::canonical) ==
        doctest::Approx(S + std::log(2.0)).epsilon(1e-15));
  CHECK(tpl_score(1.5, 2.0, 1.0, 2.0, 1.0, ScoreVariant::algorithm1) ==
        doctest::Approx(S - std::log(2.0)).epsilon(1e-15));
  CHECK(tpl_score(-1e6, 2.0, 0.5, 1.0, 1.0, ScoreVariant::canonical) ==
        doctest::Approx(2.5).epsilon(1e-15));
  CHECK(lr_score(2.0, 0.5, 3.0) == 6.5);
  CHECK_THROWS_AS(tpl_score(1, 1, 1, 0.0, 1, ScoreVariant::canonical), Error);

  Rng rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double a = rng.uniform(-5, 5), md = rng.uniform(0, 5), dk = rng.uniform(0, 2);
    const double b1 = rng.uniform(0.1, 3), b2 = rng.uniform(0.1, 3);
    const long double x = b1 * a, y = b2 * md + dk;
    const long double soft_max = std::log(std::exp(x) + std::exp(y));
    const long double soft_min = -std::log(std::exp(-x) + std::exp(-y));
    const double gap = tpl_score(a, md, dk, b1, b2, ScoreVariant::canonical) -
                       tpl_score(a, md, dk, b1, b2, ScoreVariant::algorithm1);
    worst = std::max(worst, std::abs(gap - static_cast<double>(soft_max - soft_min)));
    const double more = tpl_score(a, md, dk + 0.1, b1, b2, ScoreVariant::canonical);
    CHECK(more >= tpl_score(a, md, dk, b1, b2, ScoreVariant::canonical));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("task posterior") {
  const double one[] = {17.0};
  CHECK(task_posterior(one, 0.05).probabilities == Vector{1.0});
  const double four[] = {2.0, 2.0, 2.0, 2.0};
  for (double p : task_posterior(four, 0.05).probabilities) CHECK(p == 0.25);
  const double two[] = {1.0, 0.0};
  CHECK(task_posterior(two, 0.05).probabilities[0] ==
        doctest::Approx(1.0 / (1.0 + std::exp(-20.0))).epsilon(1e-15));

  Rng rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    Vector s(1 + rng.below(10));
    for (double& v : s) v = rng.uniform(-3, 3);
    const Vector p = task_posterior(s, 0.05).probabilities;
    CHECK(std::abs(sum(p) - 1.0) <= 1e-12);
    Vector shifted = s;
    const double c = rng.uniform(-50, 50);
    for (double& v : shifted) v += c;
    const Vector q = task_posterior(shifted, 0.05).probabilities;
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - q[i]) <= 1e-12);
  }
}
