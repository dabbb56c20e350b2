#pragma once

#include "curveclust/basis.hpp"
#include "curveclust/common.hpp"
#include "curveclust/dataset.hpp"
#include "curveclust/mixrhlp.hpp"

#include <functional>
#include <string>
#include <vector>

namespace curveclust {

enum class FldaFamily { polynomial, spline, bspline, rhlp };

std::string to_string(FldaFamily family);
FldaFamily parse_flda_family(const std::string& text);

/// Single Gaussian regression y = X beta + e for one class.
struct RegressionClassModel {
  BasisSpec basis;  // resolved
  Vector beta;
  double sigma2 = 1.0;
};

struct FldaModel {
  FldaFamily family = FldaFamily::polynomial;
  std::vector<int> class_labels;  // sorted, as found in the training data
  Vector priors;
  std::vector<RegressionClassModel> regression;  // polynomial / spline / bspline families
  std::vector<RhlpParams> rhlp;                  // rhlp family

  [[nodiscard]] int G() const { return static_cast<int>(class_labels.size()); }
  void validate() const;
};

struct FmdaModel {
  std::vector<int> class_labels;
  Vector priors;
  std::vector<MixRhlpParams> classes;

  [[nodiscard]] int G() const { return static_cast<int>(class_labels.size()); }
  void validate() const;
};

struct FldaConfig {
  FldaFamily family = FldaFamily::polynomial;
  BasisSpec basis = BasisSpec::polynomial(3);  // regression families; degree also used by rhlp
  int R = 3;                                   // rhlp only
  bool allow_singleton_classes = false;
  FitOptions fit;
};

struct FmdaConfig {
  int degree = 3;
  std::vector<int> K = {2};               // one entry, or one per class
  std::vector<std::vector<int>> R = {{3}};  // one entry, or one per class; each expanded over K_g
  bool allow_singleton_classes = false;
  FitOptions fit;
};

struct ClassPrediction {
  std::vector<int> labels;  // original class labels
  Matrix posteriors;        // n x G, columns follow class_labels
};

FldaModel train_flda(const FunctionalDataset& data, const FldaConfig& config);
FmdaModel train_fmda(const FunctionalDataset& data, const FmdaConfig& config);

/// log f_g(y_i) per curve and class (priors excluded).
Matrix class_log_densities(const FldaModel& model, const FunctionalDataset& data);
Matrix class_log_densities(const FmdaModel& model, const FunctionalDataset& data);

/// Bayes rule from log densities; ties go to the smallest class index.
ClassPrediction bayes_allocate(const Matrix& log_densities, const Vector& priors, const std::vector<int>& class_labels);

ClassPrediction predict(const FldaModel& model, const FunctionalDataset& data);
ClassPrediction predict(const FmdaModel& model, const FunctionalDataset& data);

/// Fold index in [0, k) per curve; each class is shuffled and dealt round robin.
std::vector<int> stratified_folds(const std::vector<int>& labels, int k, std::uint64_t seed);

/// Fraction of curves whose predicted label differs from the true label when
/// each fold is predicted by a model trained on the remaining folds.
double cross_validated_error(
    const FunctionalDataset& data, int k, std::uint64_t seed,
    const std::function<std::vector<int>(const FunctionalDataset& train, const FunctionalDataset& test)>& fit_predict);

}  // namespace curveclust
