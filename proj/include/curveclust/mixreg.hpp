#pragma once

#include "curveclust/basis.hpp"
#include "curveclust/common.hpp"
#include "curveclust/dataset.hpp"

#include <optional>
#include <random>
#include <vector>

namespace curveclust {

/// Per-curve designs and responses for one resolved basis.
struct RegressionData {
  BasisSpec basis;  // resolved against the dataset domain
  std::vector<Matrix> designs;
  std::vector<Vector> ys;
  std::vector<Matrix> grams;  // X_i' X_i
  std::vector<Vector> xtys;   // X_i' y_i
  double pooled_variance = 0.0;

  [[nodiscard]] int n() const { return static_cast<int>(ys.size()); }
  [[nodiscard]] int p() const { return basis.columns(); }
};

RegressionData make_regression_data(const FunctionalDataset& data, const BasisSpec& basis);

struct MixRegParams {
  BasisSpec basis;
  Vector alphas;
  std::vector<Vector> betas;
  Vector sigma2s;

  [[nodiscard]] int K() const { return static_cast<int>(alphas.size()); }
  void validate() const;
};

struct MixRegFit {
  MixRegParams params;
  SoftPartition partition;
  FitReport report;
};

/// sum_j log N(y_j; x_j' beta, sigma2).
double component_loglik(const Vector& y, const Matrix& design, const Vector& beta, double sigma2);

/// n x K matrix of log(alpha_k) + log f_k(y_i).
Matrix weighted_log_densities(const RegressionData& rd, const MixRegParams& params, int threads = 1);

/// Posterior memberships and observed-data log-likelihood.
std::pair<SoftPartition, double> e_step(const RegressionData& rd, const MixRegParams& params, int threads = 1);

/// Normalizes rows of log-weights into posteriors; throws DegenerateError on a
/// fully underflowed row. Returns the summed log normalizers.
double posteriors_from_log(Matrix& logw);

double resolve_variance_floor(const FitOptions& opts, double pooled_variance);

/// M-step with externally supplied proportions (used by robust EM); pass an
/// empty alphas vector to use mean tau.
MixRegParams m_step(const RegressionData& rd, const Matrix& tau, const FitOptions& opts,
                    const Vector& alphas = Vector());

/// Initial hard partition with every cluster non-empty.
std::vector<int> initial_partition(const FunctionalDataset& data, int K, InitMethod method, std::mt19937_64& rng);
Matrix hard_tau(const std::vector<int>& labels, int K);

/// Standard EM with n_init restarts; best final log-likelihood wins.
MixRegFit fit_em(const FunctionalDataset& data, const BasisSpec& basis, int K, const FitOptions& opts);

/// A single EM run from a given posterior matrix.
MixRegFit run_em_from(const RegressionData& rd, const Matrix& tau0, const FitOptions& opts);

/// loglik - lambda * n * (-sum alpha log alpha).
double penalized_objective(double loglik, const Vector& alphas, int n, double lambda);

enum class LambdaSchedule { ramp, adaptive };

struct RobustOptions {
  FitOptions fit;
  LambdaSchedule schedule = LambdaSchedule::adaptive;
  std::optional<double> lambda;  // fixed lambda overriding the schedule
  bool discard = true;
  int stable_window = 1;  // iterations K must stay unchanged before stopping
};

/// Schedule lambda(q) = min(1, q/10) / log n.
double robust_lambda(int q, int n);

/// Data-driven lambda from the last proportion change: the smaller of
/// mean_k exp(-eta n |a_new - a_old|) and
/// (1 - max_k mean_tau_k) / (-max_k a_old * sum_h a_old log a_old),
/// with eta = min(1, 0.5^floor(p/2 - 1)).
double adaptive_lambda(const Vector& alpha_new, const Vector& alpha_old, const Vector& mean_tau, int n, int p);

/// Entropy-penalized proportion update with the additive term capped so that
/// every proportion stays in [0, 1].
Vector robust_alpha_update(const Vector& mean_tau, const Vector& alphas, double lambda);

/// Robust EM starting from K = n components; estimates the number of clusters.
MixRegFit fit_robust_em(const FunctionalDataset& data, const BasisSpec& basis, const RobustOptions& opts);

/// One component per curve: beta from the curve's own least-squares fit,
/// sigma2 from the ceil(sqrt(n))-th nearest curve to that fit.
MixRegParams robust_initial_params(const RegressionData& rd, const FitOptions& opts);

/// Robust iterations from explicit starting parameters.
MixRegFit run_robust_from(const RegressionData& rd, MixRegParams params, const RobustOptions& opts);

/// Cluster mean curve x' beta_k on the given abscissas.
Vector mixreg_mean_curve(const MixRegParams& params, int k, std::span<const double> xs);

}  // namespace curveclust
