#pragma once

#include "curveclust/common.hpp"
#include "curveclust/dataset.hpp"
#include "curveclust/pwrm.hpp"

#include <span>
#include <vector>

namespace curveclust {

/// Softmax-linear regime probabilities. `w` is (R-1) x 2 with rows
/// (w_r0, w_r1); the R-th row is the implicit null vector.
Vector logistic_proportions(double x, const Matrix& w);
Matrix logistic_proportions(std::span<const double> xs, const Matrix& w);

/// sum_j sum_r T_jr log pi_r(x_j; w).
double multinomial_objective(std::span<const double> xs, const Matrix& targets, const Matrix& w);
/// Gradient with respect to w, same shape as w.
Matrix multinomial_gradient(std::span<const double> xs, const Matrix& targets, const Matrix& w);

struct IrlsResult {
  Matrix w;
  std::vector<double> objective_trace;  // starting value first
  int iterations = 0;
  bool converged = false;
  bool unstable = false;  // no ascent step found while the gradient was not small
};

/// Newton-Raphson (IRLS) for the weighted multinomial logistic objective.
/// Rows of `targets` may sum to any non-negative mass.
IrlsResult irls_multiclass(std::span<const double> xs, const Matrix& targets, const Matrix& w0,
                           int max_iter = 50, double grad_tol = 1e-8);

struct RhlpParams {
  int degree = 1;
  AbscissaScale scale;
  Matrix w;                   // (R-1) x 2 on raw abscissas
  std::vector<Vector> betas;  // on scaled abscissas
  Vector sigma2s;

  [[nodiscard]] int R() const { return static_cast<int>(betas.size()); }
};

struct MixRhlpParams {
  Vector alphas;
  std::vector<RhlpParams> components;

  [[nodiscard]] int K() const { return static_cast<int>(components.size()); }
  [[nodiscard]] std::vector<int> regimes() const;
};

struct MixRhlpFit {
  MixRhlpParams params;
  SoftPartition partition;
  FitReport report;
};

struct RhlpFit {
  RhlpParams params;
  std::vector<Matrix> gamma;  // per curve, m_i x R
  FitReport report;
};

/// log density of one curve under one RHLP component, with the regime
/// posteriors gamma_jr written to `gamma` when non-null.
double rhlp_curve_loglik(const Curve& curve, const RhlpParams& params, Matrix* gamma = nullptr);

struct MixRhlpEStep {
  Matrix tau;
  double loglik = 0.0;
  std::vector<std::vector<Matrix>> gamma;  // [i][k]
};

MixRhlpEStep mixrhlp_e_step(const FunctionalDataset& data, const MixRhlpParams& params, int threads = 1);
MixRhlpParams mixrhlp_m_step(const FunctionalDataset& data, const MixRhlpParams& current, const MixRhlpEStep& e,
                             double variance_floor, int threads = 1);

MixRhlpParams mixrhlp_initial_params(const FunctionalDataset& data, int degree, const std::vector<int>& labels,
                                     const std::vector<int>& R, double variance_floor);

MixRhlpFit fit_em_mixrhlp(const FunctionalDataset& data, int degree, int K, const std::vector<int>& R,
                          const FitOptions& opts);
MixRhlpFit run_em_mixrhlp_from(const FunctionalDataset& data, MixRhlpParams params, const FitOptions& opts);

/// Single-component RHLP: the K = 1 mixture.
RhlpFit fit_rhlp(const FunctionalDataset& group, int degree, int R, const FitOptions& opts);

/// Reorders regimes by the abscissa of their proportion peak and re-references
/// w to the new last regime.
RhlpParams canonicalize_regimes(const RhlpParams& params, double lo, double hi);

/// y_j = sum_r pi_r(x_j) x_j' beta_r.
Vector rhlp_mean_curve(const RhlpParams& params, std::span<const double> xs);

}  // namespace curveclust
