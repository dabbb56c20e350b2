#pragma once

#include "curveclust/common.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace curveclust {

/// A discretely sampled curve. Invariants are checked on construction:
/// xs strictly increasing, xs and ys of equal non-zero length, all finite.
class Curve {
 public:
  Curve(std::string id, std::vector<double> xs, std::vector<double> ys,
        std::optional<int> label = std::nullopt);

  [[nodiscard]] const std::string& id() const { return id_; }
  [[nodiscard]] const std::vector<double>& xs() const { return xs_; }
  [[nodiscard]] const std::vector<double>& ys() const { return ys_; }
  [[nodiscard]] std::optional<int> label() const { return label_; }
  [[nodiscard]] int size() const { return static_cast<int>(xs_.size()); }

  [[nodiscard]] Eigen::Map<const Vector> y_vector() const {
    return {ys_.data(), static_cast<Eigen::Index>(ys_.size())};
  }

  friend bool operator==(const Curve&, const Curve&) = default;

 private:
  std::string id_;
  std::vector<double> xs_;
  std::vector<double> ys_;
  std::optional<int> label_;
};

class FunctionalDataset {
 public:
  explicit FunctionalDataset(std::vector<Curve> curves);

  [[nodiscard]] const std::vector<Curve>& curves() const { return curves_; }
  [[nodiscard]] const Curve& curve(int i) const { return curves_[static_cast<std::size_t>(i)]; }
  [[nodiscard]] int size() const { return static_cast<int>(curves_.size()); }
  [[nodiscard]] bool common_grid() const { return common_grid_; }

  /// True when every curve carries a label.
  [[nodiscard]] bool labeled() const;
  /// Labels of all curves; throws DataError when any curve is unlabeled.
  [[nodiscard]] std::vector<int> labels() const;

  /// The shared abscissa grid; throws DataError without a common grid.
  [[nodiscard]] const std::vector<double>& grid() const;
  /// n x m response matrix on the common grid.
  [[nodiscard]] Matrix response_matrix() const;

  [[nodiscard]] double x_min() const;
  [[nodiscard]] double x_max() const;
  /// Variance of all pooled responses (biased).
  [[nodiscard]] double pooled_variance() const;
  [[nodiscard]] int total_points() const;

  /// Curves whose grid differs from the first curve's grid.
  [[nodiscard]] std::vector<std::string> off_grid_curves() const;

  /// Throws DataError naming the offending curves when grids differ.
  void require_common_grid(const std::string& context) const;

  [[nodiscard]] FunctionalDataset subset(const std::vector<int>& indices) const;

  friend bool operator==(const FunctionalDataset&, const FunctionalDataset&) = default;

 private:
  std::vector<Curve> curves_;
  bool common_grid_ = false;
};

/// Long-format CSV: header `curve_id,x,y` or `curve_id,x,y,label`.
FunctionalDataset load_csv(const std::filesystem::path& path);
FunctionalDataset parse_csv(std::istream& in, const std::string& source_name = "<stream>");
void save_csv(const FunctionalDataset& dataset, const std::filesystem::path& path);
void write_csv(const FunctionalDataset& dataset, std::ostream& out);

/// Formats a double with 17 significant digits.
std::string format_real(double value);

struct WaveformSpec {
  int n = 500;
  std::uint64_t seed = 0;
  double noise_sd = 1.0;

  void validate() const;
};

double waveform_base(int which, double t);

/// Three-class waveform curves on t = 1..21. Class c mixes two base
/// triangles: (1,2), (1,3), (2,3) for c = 1, 2, 3.
FunctionalDataset generate_waveform(const WaveformSpec& spec);

struct RegimeSpec {
  int K = 2;
  int R = 3;
  int n = 100;
  int degree = 1;
  std::uint64_t seed = 0;
  double noise_sd = 0.5;
  std::vector<double> proportions;  // empty -> uniform
  int m = 200;

  void validate() const;
};

struct RegimeData {
  FunctionalDataset data;
  std::vector<int> labels;                     // 1-based cluster labels
  std::vector<std::vector<int>> change_points;  // per cluster, R+1 cut indices
  std::vector<std::vector<Vector>> coefficients;
};

/// Curves on a common grid over [0,1] where each cluster follows R contiguous
/// polynomial regimes. Deterministic given the RegimeSpec.
RegimeData generate_regime_curves(const RegimeSpec& spec);

/// Seeded quota assignment: exact counts by largest remainder, shuffled.
std::vector<int> quota_labels(int n, const std::vector<double>& proportions, std::uint64_t seed);

}  // namespace curveclust
