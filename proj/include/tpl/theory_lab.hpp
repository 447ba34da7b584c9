#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tpl/data.hpp"
#include "tpl/numerics.hpp"
#include "tpl/rng.hpp"
#include "tpl/run.hpp"

namespace tpl::theory {

// Diagonal Gaussians P_t (positive side) and P_tc.
struct GaussianPair {
  Vector mean_t;
  Vector var_t;
  Vector mean_tc;
  Vector var_tc;
  std::string name;

  std::size_t dim() const noexcept { return mean_t.size(); }
  void validate() const;
};

// P_t = N(0, 1), P_tc = N(0, 0.01).
GaussianPair narrow_complement_pair();
// The pairs the dominance check runs over, narrow_complement_pair() first.
std::vector<GaussianPair> dominance_fixtures();

enum class Scorer { likelihood_ratio, p_t_only, p_tc_only_negated, mean_distance, mean_difference };

std::string_view to_string(Scorer scorer) noexcept;
Scorer parse_scorer(std::string_view text);

double log_likelihood_ratio(const GaussianPair& pair, std::span<const double> x);
double score(const GaussianPair& pair, Scorer scorer, std::span<const double> x);

// Monte-Carlo AUC with n draws per side (n >= 1000).
double empirical_auc(const GaussianPair& pair, Scorer scorer, std::size_t n, std::uint64_t seed);

// AUC by quadrature for 1-D pairs: the inner probability is exact, the outer
// expectation adaptive Gauss-Kronrod.
double oracle_auc(const GaussianPair& pair, Scorer scorer);

struct SignificanceCheck {
  double alpha = 0.05;
  double log_threshold = 0.0;  // log λ0; reject H0 (x ~ P_t) when log LR < log λ0
  double analytic_type1 = 0.0;
  double empirical_type1 = 0.0;
  double empirical_power = 0.0;  // rejection rate under P_tc
  std::size_t samples = 0;
};

SignificanceCheck significance_check(const GaussianPair& pair, double alpha, std::size_t n,
                                     std::uint64_t seed);

// Spearman rank correlation with average ranks; NoVariance on constant input.
double spearman(std::span<const double> x, std::span<const double> y);

// log of max_c N(x; μ_c, Σ + ridge·I) under the fitted shared covariance,
// evaluated through a Cholesky factor.
double max_class_log_density(const TaskStats& stats, std::span<const double> x);

// Log-density at unit direction u of x/||x|| for x drawn from the
// equal-weight mixture of `classes`.
double normalized_log_density(std::span<const ClassDensity> classes, std::span<const double> u);

struct DensityCheck {
  double md_spearman = 0.0;
  std::size_t md_points = 0;
  std::size_t md_saturated = 0;
  double knn_spearman = 0.0;
  std::size_t knn_points = 0;
  std::size_t reference_size = 0;
  std::size_t k = 0;
};

struct DensityCheckSpec {
  std::size_t classes = 2;
  std::size_t dim = 8;
  double separation = 6.0;
  std::size_t train_per_class = 500;
  std::size_t probes = 500;
  std::size_t reference_size = 2000;
  std::size_t k = 5;
  double ridge = 1e-6;
};

// Fits shared-covariance statistics on `train`, then ranks `probes` by S_MD
// against max_class_log_density and by -d_knn (normalized, against
// `reference`) against normalized_log_density.
DensityCheck density_estimator_check(std::span<const Sample> train,
                                     std::span<const int> class_list,
                                     std::span<const ClassDensity> truth,
                                     std::span<const Vector> probes,
                                     std::span<const Vector> reference, std::size_t k,
                                     double ridge);
DensityCheck density_estimator_check(const DensityCheckSpec& spec, std::uint64_t seed);

}  // namespace tpl::theory
