#pragma once

#include "curveclust/common.hpp"

#include <vector>

namespace curveclust {

/// BIC = L - nu log(n) / 2, AIC = L - nu, ICL = complete-data log-likelihood
/// at the MAP partition - nu log(n) / 2.
CriterionValues compute_criteria(double loglik, double nu, const Matrix& tau);

// Free-parameter counts.
double nu_mixreg(int K, int p);
double nu_pwrm(const std::vector<int>& R, int p, bool homoskedastic);
double nu_mixhmmr(const std::vector<int>& R, int p, bool left_right);
double nu_mixrhlp(const std::vector<int>& R, int p);

}  // namespace curveclust
