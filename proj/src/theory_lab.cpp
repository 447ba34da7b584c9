#include "tpl/theory_lab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "tpl/error.hpp"
#include "tpl/evaluation.hpp"
#include "tpl/kernels.hpp"
#include "tpl/scores.hpp"
#include "tpl/trainer.hpp"

namespace tpl::theory {

void GaussianPair::validate() const {
  const std::size_t d = mean_t.size();
  if (d == 0 || var_t.size() != d || mean_tc.size() != d || var_tc.size() != d) {
    throw Error(Errc::dimension_mismatch, "pair parameters must share one positive dimension");
  }
  for (std::size_t i = 0; i < d; ++i) {
    if (!(var_t[i] > 0.0) || !(var_tc[i] > 0.0)) {
      throw Error(Errc::invalid_argument, "variances must be positive");
    }
  }
}

GaussianPair narrow_complement_pair() {
  return {{0.0}, {1.0}, {0.0}, {0.01}, "narrow-complement"};
}

std::vector<GaussianPair> dominance_fixtures() {
  return {narrow_complement_pair(),
          {{2.0}, {1.0}, {0.0}, {1.0}, "shifted-mean"},
          {{1.0}, {1.0}, {0.0}, {4.0}, "wide-complement"}};
}

std::string_view to_string(Scorer scorer) noexcept {
  switch (scorer) {
    case Scorer::likelihood_ratio: return "likelihood_ratio";
    case Scorer::p_t_only: return "p_t_only";
    case Scorer::p_tc_only_negated: return "p_tc_only_negated";
    case Scorer::mean_distance: return "mean_distance";
    case Scorer::mean_difference: return "mean_difference";
  }
  return "?";
}

Scorer parse_scorer(std::string_view text) {
  for (Scorer s : {Scorer::likelihood_ratio, Scorer::p_t_only, Scorer::p_tc_only_negated,
                   Scorer::mean_distance, Scorer::mean_difference}) {
    if (text == to_string(s)) return s;
  }
  throw Error(Errc::invalid_argument, "unknown scorer '" + std::string(text) + "'");
}

namespace {

ClassDensity side(const Vector& mean, const Vector& var) { return {0, mean, var}; }

}  // namespace

double log_likelihood_ratio(const GaussianPair& pair, std::span<const double> x) {
  pair.validate();
  return gaussian_log_density(x, side(pair.mean_t, pair.var_t)) -
         gaussian_log_density(x, side(pair.mean_tc, pair.var_tc));
}

double score(const GaussianPair& pair, Scorer scorer, std::span<const double> x) {
  pair.validate();
  switch (scorer) {
    case Scorer::likelihood_ratio: return log_likelihood_ratio(pair, x);
    case Scorer::p_t_only: return gaussian_log_density(x, side(pair.mean_t, pair.var_t));
    case Scorer::p_tc_only_negated: return -gaussian_log_density(x, side(pair.mean_tc, pair.var_tc));
    case Scorer::mean_distance: return -std::sqrt(squared_distance(x, pair.mean_t));
    case Scorer::mean_difference: {
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) s += (pair.mean_t[i] - pair.mean_tc[i]) * x[i];
      return s;
    }
  }
  return 0.0;
}

namespace {

Vector draw(const Vector& mean, const Vector& var, Rng& rng) {
  Vector x(mean.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = mean[i] + std::sqrt(var[i]) * rng.normal();
  return x;
}

// a·x² + b·x + c, a strictly increasing transform of a 1-D scorer.
struct Quadratic {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  double operator()(double x) const noexcept { return (a * x + b) * x + c; }
};

Quadratic quadratic_of(const GaussianPair& p, Scorer scorer) {
  const double m1 = p.mean_t[0], v1 = p.var_t[0], m2 = p.mean_tc[0], v2 = p.var_tc[0];
  switch (scorer) {
    case Scorer::likelihood_ratio:
      return {-0.5 / v1 + 0.5 / v2, m1 / v1 - m2 / v2,
              -0.5 * m1 * m1 / v1 + 0.5 * m2 * m2 / v2 + 0.5 * std::log(v2 / v1)};
    case Scorer::p_t_only:
      return {-0.5 / v1, m1 / v1, -0.5 * m1 * m1 / v1 - 0.5 * std::log(2.0 * std::numbers::pi * v1)};
    case Scorer::p_tc_only_negated:
      return {0.5 / v2, -m2 / v2, 0.5 * m2 * m2 / v2 + 0.5 * std::log(2.0 * std::numbers::pi * v2)};
    case Scorer::mean_distance:
      // -|x - m1| is an increasing function of -(x - m1)².
      return {-1.0, 2.0 * m1, -m1 * m1};
    case Scorer::mean_difference:
      return {0.0, m1 - m2, 0.0};
  }
  return {};
}

double upper_tail(double z) noexcept { return 0.5 * std::erfc(z / std::numbers::sqrt2); }
double lower_tail(double z) noexcept { return upper_tail(-z); }

// P(lo < Y < hi) for standardized bounds, accurate in both tails.
double interval_probability(double zlo, double zhi) noexcept {
  if (zlo >= zhi) return 0.0;
  if (zlo > 0.0) return upper_tail(zlo) - upper_tail(zhi);
  if (zhi < 0.0) return lower_tail(zhi) - lower_tail(zlo);
  return 1.0 - lower_tail(zlo) - upper_tail(zhi);
}

// P(q(Y) < s) for Y ~ N(m, v).
double below_probability(const Quadratic& q, double s, double m, double v) {
  const double sd = std::sqrt(v);
  const double c = q.c - s;
  if (q.a == 0.0) {
    if (q.b == 0.0) return c < 0.0 ? 1.0 : 0.0;
    const double root = -c / q.b;
    return q.b > 0.0 ? lower_tail((root - m) / sd) : upper_tail((root - m) / sd);
  }
  const double disc = q.b * q.b - 4.0 * q.a * c;
  if (disc <= 0.0) return q.a > 0.0 ? 0.0 : 1.0;
  const double sq = std::sqrt(disc);
  const double t = -0.5 * (q.b + (q.b >= 0.0 ? sq : -sq));
  double r1 = t / q.a;
  double r2 = t != 0.0 ? c / t : -r1;
  if (r1 > r2) std::swap(r1, r2);
  const double z1 = (r1 - m) / sd;
  const double z2 = (r2 - m) / sd;
  if (q.a > 0.0) return interval_probability(z1, z2);
  return lower_tail(z1) + upper_tail(z2);
}

constexpr double kOuterHalfWidth = 12.0;
constexpr double kMaxQuadratureError = 1e-6;

// E_{X ~ N(m, v)}[f(X)], split at the given breakpoints (in x units).
template <typename F>
double gaussian_expectation(F f, double m, double v, std::vector<double> breaks) {
  const double sd = std::sqrt(v);
  std::vector<double> cuts{-kOuterHalfWidth};
  std::sort(breaks.begin(), breaks.end());
  for (double x : breaks) {
    const double u = (x - m) / sd;
    if (u > cuts.back() && u < kOuterHalfWidth) cuts.push_back(u);
  }
  cuts.push_back(kOuterHalfWidth);
  const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  auto integrand = [&](double u) { return norm * std::exp(-0.5 * u * u) * f(m + sd * u); };
  double total = 0.0;
  double total_error = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    double err = 0.0;
    total += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(integrand, cuts[i],
                                                                          cuts[i + 1], 20, 1e-13,
                                                                          &err);
    total_error += err;
  }
  if (!std::isfinite(total) || total_error > kMaxQuadratureError) {
    throw Error(Errc::integration_failure, "quadrature error estimate " +
                                               std::to_string(total_error) + " exceeds limit");
  }
  return total;
}

std::vector<double> breakpoints(const Quadratic& q) {
  if (q.a == 0.0) return {};
  return {-q.b / (2.0 * q.a)};
}

void require_1d(const GaussianPair& pair) {
  pair.validate();
  if (pair.dim() != 1) throw Error(Errc::invalid_argument, "oracle needs a 1-D pair");
}

}  // namespace

double empirical_auc(const GaussianPair& pair, Scorer scorer, std::size_t n, std::uint64_t seed) {
  pair.validate();
  if (n < 1000) throw Error(Errc::invalid_argument, "empirical AUC needs at least 1000 draws per side");
  const Rng root(seed);
  Rng pos = root.split("positive");
  Rng neg = root.split("negative");
  Vector ind(n);
  Vector ood(n);
  for (std::size_t i = 0; i < n; ++i) ind[i] = score(pair, scorer, draw(pair.mean_t, pair.var_t, pos));
  for (std::size_t i = 0; i < n; ++i) ood[i] = score(pair, scorer, draw(pair.mean_tc, pair.var_tc, neg));
  return ood_auc(ind, ood);
}

double oracle_auc(const GaussianPair& pair, Scorer scorer) {
  require_1d(pair);
  const Quadratic q = quadratic_of(pair, scorer);
  if (q.a == 0.0 && q.b == 0.0) return 0.5;  // constant score: every pair ties
  const double m2 = pair.mean_tc[0];
  const double v2 = pair.var_tc[0];
  auto inner = [&](double x) { return below_probability(q, q(x), m2, v2); };
  const double auc = gaussian_expectation(inner, pair.mean_t[0], pair.var_t[0], breakpoints(q));
  return std::clamp(auc, 0.0, 1.0);
}

SignificanceCheck significance_check(const GaussianPair& pair, double alpha, std::size_t n,
                                     std::uint64_t seed) {
  require_1d(pair);
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(Errc::invalid_argument, "alpha must be in (0, 1)");
  if (n == 0) throw Error(Errc::invalid_argument, "need at least one draw");
  const Quadratic q = quadratic_of(pair, Scorer::likelihood_ratio);
  const double m1 = pair.mean_t[0];
  const double v1 = pair.var_t[0];
  auto type1 = [&](double s) { return below_probability(q, s, m1, v1); };

  double lo = -1.0;
  double hi = 1.0;
  for (int i = 0; i < 200 && type1(lo) > alpha; ++i) lo = 2.0 * lo - 1.0;
  for (int i = 0; i < 200 && type1(hi) < alpha; ++i) hi = 2.0 * hi + 1.0;
  if (type1(lo) > alpha || type1(hi) < alpha) {
    throw Error(Errc::integration_failure, "could not bracket the threshold");
  }
  for (int i = 0; i < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++i) {
    const double mid = 0.5 * (lo + hi);
    (type1(mid) < alpha ? lo : hi) = mid;
  }

  SignificanceCheck out;
  out.alpha = alpha;
  out.log_threshold = 0.5 * (lo + hi);
  out.analytic_type1 = type1(out.log_threshold);
  out.samples = n;
  const Rng root(seed);
  Rng null_rng = root.split("null");
  Rng alt_rng = root.split("alternative");
  std::size_t rejected_null = 0;
  std::size_t rejected_alt = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (log_likelihood_ratio(pair, draw(pair.mean_t, pair.var_t, null_rng)) < out.log_threshold)
      ++rejected_null;
    if (log_likelihood_ratio(pair, draw(pair.mean_tc, pair.var_tc, alt_rng)) < out.log_threshold)
      ++rejected_alt;
  }
  out.empirical_type1 = static_cast<double>(rejected_null) / static_cast<double>(n);
  out.empirical_power = static_cast<double>(rejected_alt) / static_cast<double>(n);
  return out;
}

namespace {

Vector average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  Vector ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t m = i; m < j; ++m) ranks[idx[m]] = avg;
    i = j;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(Errc::shape_mismatch, "rank inputs differ in length");
  if (x.size() < 2) throw Error(Errc::no_variance, "rank correlation needs two points");
  const Vector rx = average_ranks(x);
  const Vector ry = average_ranks(y);
  const double mr = 0.5 * static_cast<double>(x.size() + 1);
  CompensatedSum sxx;
  CompensatedSum syy;
  CompensatedSum sxy;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxx.add((rx[i] - mr) * (rx[i] - mr));
    syy.add((ry[i] - mr) * (ry[i] - mr));
    sxy.add((rx[i] - mr) * (ry[i] - mr));
  }
  if (sxx.value() == 0.0 || syy.value() == 0.0) {
    throw Error(Errc::no_variance, "rank correlation of a constant sequence");
  }
  return sxy.value() / std::sqrt(sxx.value() * syy.value());
}

double max_class_log_density(const TaskStats& stats, std::span<const double> x) {
  if (stats.centroids.empty()) throw Error(Errc::empty_class_list, "no class centroids");
  const std::size_t d = stats.covariance.rows();
  Matrix shifted = stats.covariance;
  for (std::size_t i = 0; i < d; ++i) shifted(i, i) += stats.ridge_used;
  const auto chol = cholesky(shifted);
  if (!chol) throw Error(Errc::not_positive_definite, "fitted covariance is not positive definite");
  const Matrix& l = *chol;
  double log_det = 0.0;
  for (std::size_t i = 0; i < d; ++i) log_det += 2.0 * std::log(l(i, i));
  double best = -std::numeric_limits<double>::infinity();
  Vector w(d);
  for (const Vector& mu : stats.centroids) {
    double quad = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double acc = x[i] - mu[i];
      for (std::size_t j = 0; j < i; ++j) acc -= l(i, j) * w[j];
      w[i] = acc / l(i, i);
      quad += w[i] * w[i];
    }
    best = std::max(best, -0.5 * (quad + log_det + static_cast<double>(d) *
                                                       std::log(2.0 * std::numbers::pi)));
  }
  return best;
}

double normalized_log_density(std::span<const ClassDensity> classes, std::span<const double> u) {
  if (classes.empty()) throw Error(Errc::empty_class_list, "no class densities");
  const std::size_t d = u.size();
  const double power = static_cast<double>(d) - 1.0;
  Vector terms;
  for (const ClassDensity& cd : classes) {
    if (cd.mean.size() != d) throw Error(Errc::dimension_mismatch, "direction dimension");
    // Along the ray r·u the Gaussian exponent is -(A r² - 2 B r + D) / 2.
    double A = 0.0, B = 0.0, D = 0.0, log_norm = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      A += u[i] * u[i] / cd.variance[i];
      B += u[i] * cd.mean[i] / cd.variance[i];
      D += cd.mean[i] * cd.mean[i] / cd.variance[i];
      log_norm -= 0.5 * std::log(2.0 * std::numbers::pi * cd.variance[i]);
    }
    auto g = [&](double r) {
      const double radial = power > 0.0 ? power * std::log(r) : 0.0;
      return radial - 0.5 * (A * r * r - 2.0 * B * r + D);
    };
    const double peak = (B + std::sqrt(B * B + 4.0 * A * power)) / (2.0 * A);
    const double curvature = A + (peak > 0.0 ? power / (peak * peak) : 0.0);
    const double width = 1.0 / std::sqrt(curvature);
    const double lo = std::max(0.0, peak - 40.0 * width);
    const double hi = peak + 40.0 * width;
    const double g_peak = peak > 0.0 || power == 0.0 ? g(peak) : g(lo + 1e-300);
    double err = 0.0;
    const double mass = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
        [&](double r) { return r <= 0.0 && power > 0.0 ? 0.0 : std::exp(g(r) - g_peak); }, lo, hi,
        20, 1e-13, &err);
    if (!(mass > 0.0) || !std::isfinite(mass) || err > 1e-8 * mass) {
      throw Error(Errc::integration_failure, "radial integral did not converge");
    }
    terms.push_back(log_norm + g_peak + std::log(mass));
  }
  return log_sum_exp(terms) - std::log(static_cast<double>(classes.size()));
}

DensityCheck density_estimator_check(std::span<const Sample> train,
                                     std::span<const int> class_list,
                                     std::span<const ClassDensity> truth,
                                     std::span<const Vector> probes,
                                     std::span<const Vector> reference, std::size_t k,
                                     double ridge) {
  if (train.size() < 2) throw Error(Errc::no_variance, "need at least two training samples");
  if (probes.size() < 2) throw Error(Errc::no_variance, "need at least two probes");
  const std::size_t d = train.front().features.size();
  Matrix features(train.size(), d);
  std::vector<int> labels;
  for (std::size_t i = 0; i < train.size(); ++i) {
    std::copy(train[i].features.begin(), train[i].features.end(), features.row(i).begin());
    const auto it = std::find(class_list.begin(), class_list.end(), train[i].label);
    labels.push_back(static_cast<int>(it - class_list.begin()));
  }
  const TaskStats stats = fit_shared_gaussian(features, labels, class_list.size(), ridge);

  DensityCheck out;
  out.k = k;
  Vector md;
  Vector md_truth;
  for (const Vector& x : probes) {
    const double d2 = min_mahalanobis_sq(x, stats.centroids, stats.covariance_inverse);
    if (d2 <= kMahalanobisFloor) {
      ++out.md_saturated;
      continue;
    }
    md.push_back(md_score(x, stats));
    md_truth.push_back(max_class_log_density(stats, x));
  }
  out.md_points = md.size();
  out.md_spearman = spearman(md, md_truth);

  if (!reference.empty()) {
    Matrix ref(reference.size(), d);
    for (std::size_t i = 0; i < reference.size(); ++i) {
      const Vector z = l2_normalized(reference[i]);
      std::copy(z.begin(), z.end(), ref.row(i).begin());
    }
    Matrix queries(probes.size(), d);
    Vector truth_density(probes.size());
    for (std::size_t i = 0; i < probes.size(); ++i) {
      const Vector z = l2_normalized(probes[i]);
      std::copy(z.begin(), z.end(), queries.row(i).begin());
      truth_density[i] = normalized_log_density(truth, z);
    }
    Vector knn = kernels::kth_neighbor_distances(queries, ref, k);
    for (double& v : knn) v = -v;
    out.knn_spearman = spearman(knn, truth_density);
    out.knn_points = probes.size();
    out.reference_size = reference.size();
  }
  return out;
}

DensityCheck density_estimator_check(const DensityCheckSpec& spec, std::uint64_t seed) {
  if (spec.classes == 0) throw Error(Errc::invalid_argument, "need at least one class");
  GaussianStreamSpec gs;
  gs.tasks = 1;
  gs.classes_per_task = spec.classes;
  gs.dim = spec.dim;
  gs.separation = spec.separation;
  gs.train_per_class = std::max<std::size_t>(1, spec.reference_size / spec.classes);
  gs.test_per_class = (spec.probes + spec.classes - 1) / spec.classes;
  const TaskStream stream = generate_gaussian_stream(gs, Rng(seed).split("density"));
  const TaskDataset& task = stream.task(0);

  std::vector<Vector> probes;
  for (std::size_t i = 0; i < task.test.size() && probes.size() < spec.probes; ++i)
    probes.push_back(task.test[i].features);
  std::vector<Vector> reference;
  for (const Sample& s : task.train) reference.push_back(s.features);
  std::vector<ClassDensity> truth;
  for (int label : task.class_list) truth.push_back(stream.density(label));
  return density_estimator_check(task.train, task.class_list, truth, probes, reference, spec.k,
                                 spec.ridge);
}

}  // namespace tpl::theory
