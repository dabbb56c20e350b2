#pragma once

#include "curveclust/common.hpp"
#include "curveclust/criteria.hpp"
#include "curveclust/mixhmmr.hpp"
#include "curveclust/mixreg.hpp"
#include "curveclust/mixrhlp.hpp"
#include "curveclust/pwrm.hpp"

#include <vector>

namespace curveclust {

double count_free_parameters(const MixRegParams& params);
double count_free_parameters(const PwrmParams& params);
double count_free_parameters(const MixHmmrParams& params);
double count_free_parameters(const MixRhlpParams& params);

inline CriterionValues bic_aic_icl(double loglik, double nu, const Matrix& tau) {
  return compute_criteria(loglik, nu, tau);
}

/// Minimum assignment cost on a square matrix (Hungarian method). Returns the
/// column assigned to each row.
std::vector<int> hungarian_assignment(const Matrix& cost);

/// Smallest error rate over all one-to-one relabelings of the predicted
/// labels. Labels are arbitrary integers.
double misclassification_rate(const std::vector<int>& truth, const std::vector<int>& predicted);

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

/// sum_i ||y_i - mean_{z_i}||^2 with means given as K x m rows.
double intra_cluster_inertia(const Matrix& Y, const std::vector<int>& labels, const Matrix& means);

}  // namespace curveclust
