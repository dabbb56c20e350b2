#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace curveclust {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Error hierarchy. The CLI maps each kind to a stable exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid option or inconsistent configuration (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unsuitable input data (exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numerically degenerate model: empty cluster, underflow, collapse (exit code 4).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

enum class InitMethod { random_partition, kmeans_partition };

struct FitOptions {
  int max_iter = 1000;
  double tol = 1e-6;  // relative change of the objective
  int n_init = 1;
  InitMethod init = InitMethod::random_partition;
  std::uint64_t seed = 0;
  // Non-positive values select the data-driven defaults
  // (1e-6 * Var(all y) and 1e-8 * trace(Gram) / p).
  double variance_floor = -1.0;
  double ridge = -1.0;
  int threads = 1;

  void validate() const;
};

struct CriterionValues {
  double loglik = 0.0;
  double complete_loglik_at_map = 0.0;
  double nu = 0.0;
  int n = 0;
  double bic = 0.0;
  double aic = 0.0;
  double icl = 0.0;
};

struct FitReport {
  std::vector<double> objective_trace;
  int iterations = 0;
  bool converged = false;
  int final_K = 0;
  CriterionValues criteria;
  std::uint64_t seed = 0;
  std::vector<int> k_trace;  // robust EM only
  std::vector<std::string> warnings;
};

/// Posterior memberships, one row per curve.
struct SoftPartition {
  Matrix tau;

  /// MAP labels (0-based); ties go to the smallest component index.
  [[nodiscard]] std::vector<int> map_labels() const;
};

using HardPartition = std::vector<int>;

/// Index of the largest entry; first index wins ties.
int argmax(std::span<const double> values);
int argmax(const Eigen::Ref<const Vector>& values);

double log_sum_exp(const Eigen::Ref<const Vector>& values);

/// Normalizes a row of log-weights in place to probabilities and returns the
/// log normalizer. Returns -inf (and leaves the row untouched) when every entry
/// is -inf.
double normalize_log_row(Eigen::Ref<Vector> row);

double log_normal_pdf(double y, double mean, double variance);

/// Restart seeds derived from a base seed (SplitMix64 stream).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// Runs body(i) for i in [0, count) on at most `threads` workers.
void parallel_for(int count, int threads, const std::function<void(int)>& body);

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace curveclust
