#pragma once

#include "curveclust/common.hpp"

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace curveclust {

enum class BasisKind { polynomial, spline, bspline };

std::string to_string(BasisKind kind);
/// Accepts "poly", "polynomial", "spline", "bspline".
BasisKind parse_basis_kind(const std::string& text);

struct Domain {
  double lo = 0.0;
  double hi = 1.0;
};

struct BasisSpec {
  BasisKind kind = BasisKind::spline;
  int degree = 3;
  // Interior knots: a count (uniform placement) or explicit positions.
  std::variant<int, std::vector<double>> knots = 3;
  // Fixed once knots are resolved; bspline boundary knots sit here.
  std::optional<Domain> domain;

  void validate() const;
  /// Number of design columns p.
  [[nodiscard]] int columns() const;
  [[nodiscard]] int knot_count() const;

  static BasisSpec polynomial(int degree) { return {BasisKind::polynomial, degree, 0, std::nullopt}; }
  static BasisSpec spline(int degree, int knots) { return {BasisKind::spline, degree, knots, std::nullopt}; }
  static BasisSpec bspline(int degree, int knots) { return {BasisKind::bspline, degree, knots, std::nullopt}; }
};

/// Equal-width interior knots on [lo, hi], endpoints excluded.
std::vector<double> default_knots(double lo, double hi, int count);
std::vector<double> default_knots(std::span<const double> xs, int count);

/// Fixes the domain and turns a knot count into explicit positions.
/// Polynomial specs keep no knots.
BasisSpec resolve_basis(const BasisSpec& spec, Domain domain);

/// Design matrix for the abscissas. Unresolved specs are resolved against
/// [min(xs), max(xs)].
Matrix build_design(std::span<const double> xs, const BasisSpec& spec);

/// Least-squares coefficients from a Gram matrix and right-hand side. A ridge
/// (explicit, or 1e-8 * trace / p when ridge <= 0) is added only when the Gram
/// matrix is singular or ill-conditioned.
Vector solve_normal_equations(const Matrix& gram, const Vector& rhs, double ridge = -1.0);

/// Weighted least squares: minimizes sum_j w_j (y_j - x_j' beta)^2.
Vector weighted_least_squares(const Matrix& X, const Vector& y, const Vector& w, double ridge = -1.0);

}  // namespace curveclust
