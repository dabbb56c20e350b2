#pragma once

#include "curveclust/common.hpp"
#include "curveclust/dataset.hpp"
#include "curveclust/pwrm.hpp"

#include <vector>

namespace curveclust {

struct MarkovChain {
  Vector initial;     // pi
  Matrix transition;  // A, row-stochastic
  bool left_right = true;

  [[nodiscard]] int states() const { return static_cast<int>(initial.size()); }
  void validate() const;

  /// Left-right: self-transition 0.9, remaining mass to the next state, last
  /// state absorbing, start in state 1. Full: uniform start, 0.9 on the
  /// diagonal, the rest spread evenly.
  static MarkovChain initial_chain(int R, bool left_right);
};

struct HmmPosteriors {
  Matrix gamma;             // m x R
  std::vector<Matrix> xi;   // m-1 matrices R x R: P(H_j = l, H_{j+1} = r)
  double loglik = 0.0;
};

/// Scaled forward-backward on an m x R matrix of log emission densities.
HmmPosteriors forward_backward_log(const Matrix& log_emissions, const MarkovChain& chain);

/// Forward pass only; returns the log-likelihood.
double forward_loglik(const Matrix& log_emissions, const MarkovChain& chain);

/// Emission log densities log N(y_j; x_j' beta_r, sigma2_r).
Matrix hmm_log_emissions(const Vector& y, const Matrix& design, const std::vector<Vector>& betas,
                         const Vector& sigma2s);

HmmPosteriors forward_backward(const Vector& y, const Matrix& design, const MarkovChain& chain,
                               const std::vector<Vector>& betas, const Vector& sigma2s);

struct HmmrCluster {
  MarkovChain chain;
  std::vector<Vector> betas;  // on scaled abscissas
  Vector sigma2s;
};

struct MixHmmrParams {
  int degree = 1;
  AbscissaScale scale;
  bool left_right = true;
  Vector alphas;
  std::vector<HmmrCluster> clusters;

  [[nodiscard]] int K() const { return static_cast<int>(clusters.size()); }
  [[nodiscard]] std::vector<int> regimes() const;
};

struct MixHmmrOptions {
  FitOptions fit;
  bool left_right = true;
};

struct MixHmmrFit {
  MixHmmrParams params;
  SoftPartition partition;
  FitReport report;
  std::vector<Matrix> cluster_gamma;  // tau-weighted average smoothed probabilities (common grid only)
};

/// Per-curve E-step quantities for one cluster.
struct HmmCurveStats {
  Matrix gamma;
  Matrix xi_sum;  // sum over j of xi_j
  double loglik = 0.0;
};

/// Observed-data log-likelihood and posteriors for given parameters.
struct MixHmmrEStep {
  Matrix tau;
  double loglik = 0.0;
  std::vector<std::vector<HmmCurveStats>> stats;  // [i][k]
};

MixHmmrEStep mixhmmr_e_step(const FunctionalDataset& data, const MixHmmrParams& params, int threads = 1);
MixHmmrParams mixhmmr_m_step(const FunctionalDataset& data, const MixHmmrParams& current, const MixHmmrEStep& e,
                             double variance_floor);

/// Initial parameters: random hard partition, then for each cluster an equal
/// R-way split of every curve's points seeds the regime regressions.
MixHmmrParams mixhmmr_initial_params(const FunctionalDataset& data, int degree, const std::vector<int>& labels,
                                     const std::vector<int>& R, bool left_right, double variance_floor);

MixHmmrFit fit_em_mixhmmr(const FunctionalDataset& data, int degree, int K, const std::vector<int>& R,
                          const MixHmmrOptions& opts);
MixHmmrFit run_em_mixhmmr_from(const FunctionalDataset& data, MixHmmrParams params, const MixHmmrOptions& opts);

/// y_j = sum_r gamma_bar_jr x_j' beta_r.
Vector hmmr_mean_curve(const HmmrCluster& cluster, const Matrix& design, const Matrix& gamma_bar);

/// tau-weighted average of the smoothed state probabilities of cluster k.
Matrix average_gamma(const MixHmmrEStep& e, int k);

/// argmax_r gamma_bar_jr per point.
std::vector<int> state_path(const Matrix& gamma_bar);

}  // namespace curveclust
