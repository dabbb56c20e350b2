#include "curveclust/criteria.hpp"

#include <cmath>

namespace curveclust {

CriterionValues compute_criteria(double loglik, double nu, const Matrix& tau) {
  CriterionValues c;
  c.loglik = loglik;
  c.nu = nu;
  c.n = static_cast<int>(tau.rows());
  double entropy_term = 0.0;
  for (Eigen::Index i = 0; i < tau.rows(); ++i) {
    const int z = argmax(tau.row(i).transpose());
    entropy_term += std::log(tau(i, z));
  }
  const double pen = nu * std::log(static_cast<double>(c.n)) / 2.0;
  c.complete_loglik_at_map = loglik + entropy_term;
  c.bic = loglik - pen;
  c.aic = loglik - nu;
  c.icl = c.complete_loglik_at_map - pen;
  return c;
}

double nu_mixreg(int K, int p) { return (K - 1) + K * p + K; }

double nu_pwrm(const std::vector<int>& R, int p, bool homoskedastic) {
  const int K = static_cast<int>(R.size());
  double nu = K - 1;
  for (int r : R) nu += (r - 1) + (homoskedastic ? r * p + 1 : r * (p + 1));
  return nu;
}

double nu_mixhmmr(const std::vector<int>& R, int p, bool left_right) {
  const int K = static_cast<int>(R.size());
  double nu = K - 1;
  for (int r : R) {
    nu += r * (p + 1);
    nu += left_right ? (r - 1) : (r - 1) + r * (r - 1);
  }
  return nu;
}

double nu_mixrhlp(const std::vector<int>& R, int p) {
  const int K = static_cast<int>(R.size());
  double nu = K - 1;
  for (int r : R) nu += r * p + r + 2 * (r - 1);
  return nu;
}

}  // namespace curveclust
