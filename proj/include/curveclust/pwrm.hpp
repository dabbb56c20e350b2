#pragma once

#include "curveclust/common.hpp"
#include "curveclust/dataset.hpp"

#include <vector>

namespace curveclust {

/// Cut indices 0 = b_0 < b_1 < ... < b_R = m over a common grid. Regime r
/// covers the 0-based points [b_r, b_{r+1}).
struct Segmentation {
  std::vector<int> boundaries;

  [[nodiscard]] int regimes() const { return static_cast<int>(boundaries.size()) - 1; }
  [[nodiscard]] int regime_of(int j) const;
  void validate(int m, int min_len) const;

  friend bool operator==(const Segmentation&, const Segmentation&) = default;
};

enum class SegmentCost {
  squared_error,     // sum_i w_i sum_j (y_ij - x_j' beta_r)^2
  gaussian_profile,  // Gaussian negative log-likelihood with sigma2_r profiled out
};

/// Maps abscissas to [-1, 1] for conditioning of the per-segment polynomials.
struct AbscissaScale {
  double lo = 0.0;
  double hi = 1.0;

  [[nodiscard]] double operator()(double x) const { return hi > lo ? 2.0 * (x - lo) / (hi - lo) - 1.0 : 0.0; }
};

/// Polynomial design on scaled abscissas.
Matrix scaled_polynomial_design(std::span<const double> xs, int degree, AbscissaScale scale);

struct DpResult {
  Segmentation segmentation;
  std::vector<Vector> betas;  // coefficients on scaled abscissas
  Vector rss;                 // weighted residual sum of squares per regime
  Vector mass;                // sum of weights times points per regime
  double cost = 0.0;          // value of the optimized criterion
};

/// Optimal segmentation of a weighted curve set into R regimes of degree
/// `degree` polynomials by exact dynamic programming. Ties go to the
/// lexicographically earliest boundary set. min_len defaults to degree + 1.
DpResult dp_segment(const Matrix& Y, std::span<const double> grid, const Vector& weights, int R, int degree,
                    SegmentCost cost = SegmentCost::squared_error, double variance_floor = 0.0, int min_len = -1);

/// Criterion value of a fixed segmentation (same definition as dp_segment).
DpResult segment_fixed(const Matrix& Y, std::span<const double> grid, const Vector& weights,
                       const Segmentation& seg, int degree, SegmentCost cost = SegmentCost::squared_error,
                       double variance_floor = 0.0);

struct PwrmCluster {
  Segmentation segmentation;
  std::vector<Vector> betas;
  Vector sigma2s;  // one per regime; all equal when homoskedastic
};

struct PwrmParams {
  std::vector<double> grid;
  int degree = 1;
  AbscissaScale scale;
  bool homoskedastic = false;
  bool shared_variance = false;  // one variance across all clusters (constrained mode)
  Vector alphas;
  std::vector<PwrmCluster> clusters;

  [[nodiscard]] int K() const { return static_cast<int>(clusters.size()); }
  [[nodiscard]] std::vector<int> regimes() const;
};

struct PwrmOptions {
  FitOptions fit;
  bool homoskedastic = false;
  // CEM only: equal proportions, one shared variance, degree 0.
  bool constrained = false;
};

struct PwrmFit {
  PwrmParams params;
  SoftPartition partition;
  HardPartition labels;
  FitReport report;
};

/// log f_k(y_i) for every curve and cluster (without proportions).
Matrix pwrm_log_densities(const Matrix& Y, const PwrmParams& params);

/// Piecewise mean curve of cluster k on the grid.
Vector pwrm_mean_curve(const PwrmParams& params, int k);

/// Mean curve with a junction point inserted at the midpoint of each regime
/// border, valued at the average of the two adjacent regime polynomials.
std::pair<std::vector<double>, std::vector<double>> pwrm_interpolated_curve(const PwrmParams& params, int k);

/// Number of free parameters, boundaries included.
double pwrm_free_parameters(const PwrmParams& params);

/// Expands a scalar R to K entries, or checks a per-cluster list.
std::vector<int> expand_regimes(const std::vector<int>& R, int K);

PwrmFit fit_em_pwrm(const FunctionalDataset& data, int degree, int K, const std::vector<int>& R,
                    const PwrmOptions& opts);
PwrmFit fit_cem_pwrm(const FunctionalDataset& data, int degree, int K, const std::vector<int>& R,
                     const PwrmOptions& opts);

/// Single runs from a given initial hard partition (0-based labels).
PwrmFit run_em_pwrm_from(const Matrix& Y, const std::vector<double>& grid, int degree, const std::vector<int>& R,
                         const std::vector<int>& init, const PwrmOptions& opts, double pooled_variance);
PwrmFit run_cem_pwrm_from(const Matrix& Y, const std::vector<double>& grid, int degree, const std::vector<int>& R,
                          const std::vector<int>& init, const PwrmOptions& opts, double pooled_variance);

}  // namespace curveclust
