#include "curveclust/basis.hpp"

#include <algorithm>
#include <cmath>

namespace curveclust {

std::string to_string(BasisKind kind) {
  switch (kind) {
    case BasisKind::polynomial: return "polynomial";
    case BasisKind::spline: return "spline";
    case BasisKind::bspline: return "bspline";
  }
  return "unknown";
}

BasisKind parse_basis_kind(const std::string& text) {
  if (text == "poly" || text == "polynomial") return BasisKind::polynomial;
  if (text == "spline") return BasisKind::spline;
  if (text == "bspline") return BasisKind::bspline;
  throw ConfigError("unknown basis '" + text + "' (expected poly, spline or bspline)");
}

void BasisSpec::validate() const {
  if (degree < 0) throw ConfigError("basis degree must be >= 0");
  if (const int* count = std::get_if<int>(&knots)) {
    if (*count < 0) throw ConfigError("knot count must be >= 0");
  } else {
    const auto& pos = std::get<std::vector<double>>(knots);
    for (std::size_t i = 0; i < pos.size(); ++i) {
      if (!std::isfinite(pos[i])) throw ConfigError("knots must be finite");
      if (i > 0 && !(pos[i] > pos[i - 1])) throw ConfigError("knots must be strictly increasing");
    }
    if (domain && !pos.empty() && (pos.front() <= domain->lo || pos.back() >= domain->hi)) {
      throw ConfigError("knots must lie strictly inside the data domain");
    }
  }
  if (domain && !(domain->hi > domain->lo) && kind != BasisKind::polynomial) {
    throw DataError("degenerate domain for spline basis");
  }
}

int BasisSpec::knot_count() const {
  if (kind == BasisKind::polynomial) return 0;
  if (const int* count = std::get_if<int>(&knots)) return *count;
  return static_cast<int>(std::get<std::vector<double>>(knots).size());
}

int BasisSpec::columns() const { return degree + 1 + knot_count(); }

std::vector<double> default_knots(double lo, double hi, int count) {
  if (count < 0) throw ConfigError("knot count must be >= 0");
  if (count == 0) return {};
  if (!(hi > lo)) throw DataError("degenerate domain: cannot place knots");
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = lo + (hi - lo) * (i + 1) / (count + 1);
  return out;
}

std::vector<double> default_knots(std::span<const double> xs, int count) {
  if (xs.empty()) throw DataError("no abscissas");
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  return default_knots(*lo, *hi, count);
}

BasisSpec resolve_basis(const BasisSpec& spec, Domain domain) {
  BasisSpec out = spec;
  if (!out.domain) out.domain = domain;
  if (out.kind == BasisKind::polynomial) {
    out.knots = std::vector<double>{};
  } else {
    if (!(out.domain->hi > out.domain->lo)) throw DataError("degenerate domain (all abscissas equal) for spline basis");
    if (const int* count = std::get_if<int>(&spec.knots)) {
      out.knots = default_knots(out.domain->lo, out.domain->hi, *count);
    }
  }
  out.validate();
  return out;
}

namespace {

Matrix polynomial_design(std::span<const double> xs, int degree) {
  Matrix X(static_cast<Eigen::Index>(xs.size()), degree + 1);
  for (std::size_t j = 0; j < xs.size(); ++j) {
    double v = 1.0;
    for (int d = 0; d <= degree; ++d, v *= xs[j]) X(static_cast<Eigen::Index>(j), d) = v;
  }
  return X;
}

Matrix truncated_power_design(std::span<const double> xs, int degree, const std::vector<double>& knots) {
  Matrix X(static_cast<Eigen::Index>(xs.size()), degree + 1 + static_cast<Eigen::Index>(knots.size()));
  X.leftCols(degree + 1) = polynomial_design(xs, degree);
  for (std::size_t l = 0; l < knots.size(); ++l) {
    const auto col = static_cast<Eigen::Index>(degree + 1 + l);
    for (std::size_t j = 0; j < xs.size(); ++j) {
      const double u = xs[j] - knots[l];
      double v = 0.0;
      if (degree == 0) {
        v = u >= 0.0 ? 1.0 : 0.0;
      } else if (u > 0.0) {
        v = std::pow(u, degree);
      }
      X(static_cast<Eigen::Index>(j), col) = v;
    }
  }
  return X;
}

// Cox-de Boor on a clamped knot vector.
Matrix bspline_design(std::span<const double> xs, int degree, const std::vector<double>& interior, Domain dom) {
  const int order = degree + 1;
  std::vector<double> t;
  t.insert(t.end(), static_cast<std::size_t>(order), dom.lo);
  t.insert(t.end(), interior.begin(), interior.end());
  t.insert(t.end(), static_cast<std::size_t>(order), dom.hi);
  const int nb = static_cast<int>(interior.size()) + order;
  const double span = dom.hi - dom.lo;

  Matrix X = Matrix::Zero(static_cast<Eigen::Index>(xs.size()), nb);
  std::vector<double> B(t.size() - 1);
  for (std::size_t j = 0; j < xs.size(); ++j) {
    double x = xs[j];
    if (x < dom.lo - 1e-12 * span || x > dom.hi + 1e-12 * span) {
      throw DataError("abscissa outside the B-spline domain");
    }
    x = std::clamp(x, dom.lo, dom.hi);
    // Order-1 indicators; the right endpoint joins the last non-empty interval.
    std::fill(B.begin(), B.end(), 0.0);
    std::size_t cell = static_cast<std::size_t>(order - 1);
    while (cell + 1 < t.size() - static_cast<std::size_t>(order) && x >= t[cell + 1]) ++cell;
    B[cell] = 1.0;
    for (int k = 2; k <= order; ++k) {
      for (std::size_t i = 0; i + static_cast<std::size_t>(k) < t.size(); ++i) {
        double v = 0.0;
        const double d1 = t[i + static_cast<std::size_t>(k) - 1] - t[i];
        const double d2 = t[i + static_cast<std::size_t>(k)] - t[i + 1];
        if (d1 > 0.0) v += (x - t[i]) / d1 * B[i];
        if (d2 > 0.0) v += (t[i + static_cast<std::size_t>(k)] - x) / d2 * B[i + 1];
        B[i] = v;
      }
    }
    for (int i = 0; i < nb; ++i) X(static_cast<Eigen::Index>(j), i) = B[static_cast<std::size_t>(i)];
  }
  return X;
}

}  // namespace

Matrix build_design(std::span<const double> xs, const BasisSpec& spec) {
  spec.validate();
  if (xs.empty()) throw DataError("no abscissas");
  for (double x : xs) {
    if (!std::isfinite(x)) throw DataError("non-finite abscissa");
  }
  if (spec.kind == BasisKind::polynomial) return polynomial_design(xs, spec.degree);

  BasisSpec r = spec;
  if (!r.domain || std::holds_alternative<int>(r.knots)) {
    const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
    r = resolve_basis(spec, {*lo, *hi});
  }
  const auto& knots = std::get<std::vector<double>>(r.knots);
  if (r.kind == BasisKind::spline) return truncated_power_design(xs, r.degree, knots);
  return bspline_design(xs, r.degree, knots, *r.domain);
}

Vector solve_normal_equations(const Matrix& gram, const Vector& rhs, double ridge) {
  const Eigen::Index p = gram.rows();
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() == Eigen::Success && llt.rcond() > 1e-13) return llt.solve(rhs);
  double lambda = ridge;
  if (!(lambda > 0.0)) {
    const double tr = gram.trace();
    lambda = tr > 0.0 ? 1e-8 * tr / static_cast<double>(p) : 1e-8;
  }
  Matrix reg = gram;
  reg.diagonal().array() += lambda;
  return reg.ldlt().solve(rhs);
}

Vector weighted_least_squares(const Matrix& X, const Vector& y, const Vector& w, double ridge) {
  const Matrix Xw = X.array().colwise() * w.array();
  return solve_normal_equations(X.transpose() * Xw, Xw.transpose() * y, ridge);
}

}  // namespace curveclust
