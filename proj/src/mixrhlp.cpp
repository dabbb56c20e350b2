#include "curveclust/mixrhlp.hpp"

#include "curveclust/basis.hpp"
#include "curveclust/criteria.hpp"
#include "curveclust/mixreg.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

namespace curveclust {

Vector logistic_proportions(double x, const Matrix& w) {
  const Eigen::Index R = w.rows() + 1;
  Vector eta(R);
  for (Eigen::Index r = 0; r + 1 < R; ++r) eta[r] = w(r, 0) + w(r, 1) * x;
  eta[R - 1] = 0.0;
  eta.array() -= eta.maxCoeff();
  Vector p = eta.array().exp();
  return p / p.sum();
}

Matrix logistic_proportions(std::span<const double> xs, const Matrix& w) {
  Matrix out(static_cast<Eigen::Index>(xs.size()), w.rows() + 1);
  for (std::size_t j = 0; j < xs.size(); ++j) out.row(static_cast<Eigen::Index>(j)) = logistic_proportions(xs[j], w).transpose();
  return out;
}

namespace {

Vector log_proportions(double x, const Matrix& w) {
  const Eigen::Index R = w.rows() + 1;
  Vector eta(R);
  for (Eigen::Index r = 0; r + 1 < R; ++r) eta[r] = w(r, 0) + w(r, 1) * x;
  eta[R - 1] = 0.0;
  return eta.array() - log_sum_exp(eta);
}

}  // namespace

double multinomial_objective(std::span<const double> xs, const Matrix& targets, const Matrix& w) {
  double total = 0.0;
  for (std::size_t j = 0; j < xs.size(); ++j) {
    const Vector lp = log_proportions(xs[j], w);
    for (Eigen::Index r = 0; r < lp.size(); ++r) {
      const double t = targets(static_cast<Eigen::Index>(j), r);
      if (t != 0.0) total += t * lp[r];
    }
  }
  return total;
}

Matrix multinomial_gradient(std::span<const double> xs, const Matrix& targets, const Matrix& w) {
  Matrix g = Matrix::Zero(w.rows(), 2);
  for (std::size_t j = 0; j < xs.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const Vector p = logistic_proportions(xs[j], w);
    const double mass = targets.row(jj).sum();
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      const double d = targets(jj, r) - mass * p[r];
      g(r, 0) += d;
      g(r, 1) += d * xs[j];
    }
  }
  return g;
}

IrlsResult irls_multiclass(std::span<const double> xs, const Matrix& targets, const Matrix& w0, int max_iter,
                           double grad_tol) {
  const Eigen::Index Rm1 = w0.rows();
  if (targets.rows() != static_cast<Eigen::Index>(xs.size()) || targets.cols() != Rm1 + 1) {
    throw DataError("irls: targets must be m x R");
  }
  IrlsResult res;
  res.w = w0;
  if (Rm1 == 0 || xs.empty()) {
    res.converged = true;
    res.objective_trace.push_back(0.0);
    return res;
  }
  // Work on u = (x - lo) / (hi - lo) in [0, 1].
  const auto [lo_it, hi_it] = std::minmax_element(xs.begin(), xs.end());
  const double lo = *lo_it;
  const double width = *hi_it > *lo_it ? *hi_it - *lo_it : 1.0;
  std::vector<double> u(xs.size());
  for (std::size_t j = 0; j < xs.size(); ++j) u[j] = (xs[j] - lo) / width;
  Matrix v(Rm1, 2);
  v.col(1) = w0.col(1) * width;
  v.col(0) = w0.col(0) + w0.col(1) * lo;

  const Eigen::Index P = Rm1 * 2;
  auto flat = [](const Matrix& m) {
    Vector f(m.size());
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      f[2 * r] = m(r, 0);
      f[2 * r + 1] = m(r, 1);
    }
    return f;
  };
  auto unflat = [Rm1](const Vector& f) {
    Matrix m(Rm1, 2);
    for (Eigen::Index r = 0; r < Rm1; ++r) {
      m(r, 0) = f[2 * r];
      m(r, 1) = f[2 * r + 1];
    }
    return m;
  };

  double obj = multinomial_objective(u, targets, v);
  res.objective_trace.push_back(obj);
  for (int it = 0; it < max_iter; ++it) {
    const Vector g = flat(multinomial_gradient(u, targets, v));
    if (g.norm() < grad_tol) {
      res.converged = true;
      break;
    }
    Matrix H = Matrix::Zero(P, P);  // negative Hessian
    for (std::size_t j = 0; j < u.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      const double mass = targets.row(jj).sum();
      if (mass == 0.0) continue;
      const Vector p = logistic_proportions(u[j], v);
      const double feat[2] = {1.0, u[j]};
      for (Eigen::Index r = 0; r < Rm1; ++r) {
        for (Eigen::Index s = 0; s < Rm1; ++s) {
          const double c = mass * p[r] * ((r == s ? 1.0 : 0.0) - p[s]);
          for (int a = 0; a < 2; ++a) {
            for (int b = 0; b < 2; ++b) H(2 * r + a, 2 * s + b) += c * feat[a] * feat[b];
          }
        }
      }
    }
    H.diagonal().array() += 1e-8;
    Eigen::LDLT<Matrix> ldlt(H);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      res.unstable = true;
      break;
    }
    const Vector step = ldlt.solve(g);
    const Vector cur = flat(v);
    double t = 1.0;
    bool improved = false;
    for (int h = 0; h <= 20; ++h, t *= 0.5) {
      const Matrix cand = unflat(cur + t * step);
      const double c = multinomial_objective(u, targets, cand);
      if (std::isfinite(c) && c >= obj) {
        improved = c > obj;
        v = cand;
        obj = c;
        break;
      }
    }
    res.iterations = it + 1;
    res.objective_trace.push_back(obj);
    if (!improved) {
      // Ascent exhausted; flag only when the gradient is not negligible.
      res.unstable = g.norm() > 1e-6 * std::max(1.0, targets.sum());
      res.converged = !res.unstable;
      break;
    }
  }
  res.w.resize(Rm1, 2);
  res.w.col(1) = v.col(1) / width;
  res.w.col(0) = v.col(0) - res.w.col(1) * lo;
  return res;
}

std::vector<int> MixRhlpParams::regimes() const {
  std::vector<int> R;
  for (const auto& c : components) R.push_back(c.R());
  return R;
}

double rhlp_curve_loglik(const Curve& curve, const RhlpParams& params, Matrix* gamma) {
  const Matrix X = scaled_polynomial_design(curve.xs(), params.degree, params.scale);
  const int R = params.R();
  const int m = curve.size();
  if (gamma) gamma->resize(m, R);
  double total = 0.0;
  Vector row(R);
  for (int j = 0; j < m; ++j) {
    const double x = curve.xs()[static_cast<std::size_t>(j)];
    const double y = curve.ys()[static_cast<std::size_t>(j)];
    const Vector lp = log_proportions(x, params.w);
    for (int r = 0; r < R; ++r) {
      row[r] = lp[r] + log_normal_pdf(y, X.row(j).dot(params.betas[static_cast<std::size_t>(r)]), params.sigma2s[r]);
    }
    const double lse = normalize_log_row(row);
    if (!std::isfinite(lse)) throw DegenerateError("RHLP: zero density at a point of curve '" + curve.id() + "'");
    total += lse;
    if (gamma) gamma->row(j) = row.transpose();
  }
  return total;
}

MixRhlpEStep mixrhlp_e_step(const FunctionalDataset& data, const MixRhlpParams& params, int threads) {
  const int n = data.size();
  const int K = params.K();
  MixRhlpEStep e;
  e.gamma.assign(static_cast<std::size_t>(n), std::vector<Matrix>(static_cast<std::size_t>(K)));
  Matrix logw(n, K);
  parallel_for(n, threads, [&](int i) {
    for (int k = 0; k < K; ++k) {
      logw(i, k) = std::log(params.alphas[k]) +
                   rhlp_curve_loglik(data.curve(i), params.components[static_cast<std::size_t>(k)],
                                     &e.gamma[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]);
    }
  });
  e.loglik = posteriors_from_log(logw);
  e.tau = std::move(logw);
  return e;
}

namespace {

// Weighted regression and variance updates for one regime.
void regime_regression(const FunctionalDataset& data, const std::vector<Matrix>& designs, const std::vector<Vector>& w,
                       Vector& beta, double& sigma2, double floor) {
  const Eigen::Index p = designs.front().cols();
  Matrix G = Matrix::Zero(p, p);
  Vector b = Vector::Zero(p);
  double total = 0.0;
  for (int i = 0; i < data.size(); ++i) {
    const Vector& wi = w[static_cast<std::size_t>(i)];
    if (wi.size() == 0) continue;
    const Matrix& X = designs[static_cast<std::size_t>(i)];
    const Matrix Xw = X.array().colwise() * wi.array();
    G.noalias() += X.transpose() * Xw;
    b.noalias() += Xw.transpose() * data.curve(i).y_vector();
    total += wi.sum();
  }
  if (!(total > 0.0)) return;
  beta = solve_normal_equations(G, b);
  double rss = 0.0;
  for (int i = 0; i < data.size(); ++i) {
    const Vector& wi = w[static_cast<std::size_t>(i)];
    if (wi.size() == 0) continue;
    const Vector resid = data.curve(i).y_vector() - designs[static_cast<std::size_t>(i)] * beta;
    rss += wi.dot(resid.cwiseProduct(resid));
  }
  sigma2 = std::max(rss / total, floor);
}

// IRLS inputs: targets tau_ik * gamma_ijr; aggregated per grid point on a
// common grid, otherwise one row per observation.
void logistic_targets(const FunctionalDataset& data, const MixRhlpEStep& e, int k, std::vector<double>& xs,
                      Matrix& targets) {
  const int n = data.size();
  const auto R = e.gamma.front()[static_cast<std::size_t>(k)].cols();
  if (data.common_grid()) {
    xs = data.grid();
    targets = Matrix::Zero(static_cast<Eigen::Index>(xs.size()), R);
    for (int i = 0; i < n; ++i) targets += e.tau(i, k) * e.gamma[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    return;
  }
  xs.clear();
  targets.resize(data.total_points(), R);
  Eigen::Index row = 0;
  for (int i = 0; i < n; ++i) {
    const Matrix& g = e.gamma[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    xs.insert(xs.end(), data.curve(i).xs().begin(), data.curve(i).xs().end());
    targets.middleRows(row, g.rows()) = e.tau(i, k) * g;
    row += g.rows();
  }
}

}  // namespace

MixRhlpParams mixrhlp_m_step(const FunctionalDataset& data, const MixRhlpParams& current, const MixRhlpEStep& e,
                             double variance_floor, int threads) {
  const int n = data.size();
  const int K = current.K();
  MixRhlpParams next = current;
  const Vector mass = e.tau.colwise().sum().transpose();
  for (int k = 0; k < K; ++k) {
    if (mass[k] < 1.0 / (static_cast<double>(n) * n)) {
      throw DegenerateError("empty cluster " + std::to_string(k + 1) + " in MixRHLP M-step");
    }
  }
  next.alphas = mass / n;
  parallel_for(K, threads, [&](int k) {
    RhlpParams& c = next.components[static_cast<std::size_t>(k)];
    std::vector<Matrix> designs;
    designs.reserve(static_cast<std::size_t>(n));
    for (const auto& curve : data.curves()) designs.push_back(scaled_polynomial_design(curve.xs(), c.degree, c.scale));
    for (int r = 0; r < c.R(); ++r) {
      std::vector<Vector> w(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        if (e.tau(i, k) == 0.0) continue;
        w[static_cast<std::size_t>(i)] = e.tau(i, k) * e.gamma[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].col(r);
      }
      regime_regression(data, designs, w, c.betas[static_cast<std::size_t>(r)], c.sigma2s[r], variance_floor);
    }
    if (c.R() > 1) {
      std::vector<double> xs;
      Matrix targets;
      logistic_targets(data, e, k, xs, targets);
      c.w = irls_multiclass(xs, targets, c.w).w;
    }
  });
  return next;
}

MixRhlpParams mixrhlp_initial_params(const FunctionalDataset& data, int degree, const std::vector<int>& labels,
                                     const std::vector<int>& R, double variance_floor) {
  const int K = static_cast<int>(R.size());
  const int n = data.size();
  const double lo = data.x_min();
  const double hi = data.x_max();
  MixRhlpParams params;
  params.alphas = Vector::Zero(K);
  for (int l : labels) params.alphas[l] += 1.0 / n;
  for (int k = 0; k < K; ++k) {
    RhlpParams c;
    c.degree = degree;
    c.scale = {lo, hi};
    const int Rk = R[static_cast<std::size_t>(k)];
    c.w = Matrix::Zero(Rk - 1, 2);
    c.betas.assign(static_cast<std::size_t>(Rk), Vector::Zero(degree + 1));
    c.sigma2s = Vector::Constant(Rk, std::max(data.pooled_variance(), variance_floor));
    std::vector<Matrix> designs;
    for (const auto& curve : data.curves()) designs.push_back(scaled_polynomial_design(curve.xs(), degree, c.scale));
    for (int r = 0; r < Rk; ++r) {
      const double a = lo + (hi - lo) * r / Rk;
      const double b = lo + (hi - lo) * (r + 1) / Rk;
      std::vector<Vector> w(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        if (labels[static_cast<std::size_t>(i)] != k) continue;
        const auto& xs = data.curve(i).xs();
        Vector wi(static_cast<Eigen::Index>(xs.size()));
        for (std::size_t j = 0; j < xs.size(); ++j) {
          const bool inside = xs[j] >= a && (xs[j] < b || (r == Rk - 1 && xs[j] <= b));
          wi[static_cast<Eigen::Index>(j)] = inside ? 1.0 : 0.0;
        }
        w[static_cast<std::size_t>(i)] = std::move(wi);
      }
      regime_regression(data, designs, w, c.betas[static_cast<std::size_t>(r)], c.sigma2s[r], variance_floor);
    }
    params.components.push_back(std::move(c));
  }
  return params;
}

RhlpParams canonicalize_regimes(const RhlpParams& params, double lo, double hi) {
  const int R = params.R();
  if (R <= 1) return params;
  constexpr int kProbe = 513;
  std::vector<double> peak(static_cast<std::size_t>(R), lo);
  std::vector<double> best(static_cast<std::size_t>(R), -1.0);
  for (int t = 0; t < kProbe; ++t) {
    const double x = lo + (hi - lo) * t / (kProbe - 1);
    const Vector p = logistic_proportions(x, params.w);
    for (int r = 0; r < R; ++r) {
      if (p[r] > best[static_cast<std::size_t>(r)]) {
        best[static_cast<std::size_t>(r)] = p[r];
        peak[static_cast<std::size_t>(r)] = x;
      }
    }
  }
  std::vector<int> order(static_cast<std::size_t>(R));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return peak[static_cast<std::size_t>(a)] < peak[static_cast<std::size_t>(b)]; });
  Matrix full = Matrix::Zero(R, 2);
  full.topRows(R - 1) = params.w;
  RhlpParams out = params;
  Matrix reordered(R, 2);
  for (int r = 0; r < R; ++r) {
    const int src = order[static_cast<std::size_t>(r)];
    reordered.row(r) = full.row(src);
    out.betas[static_cast<std::size_t>(r)] = params.betas[static_cast<std::size_t>(src)];
    out.sigma2s[r] = params.sigma2s[src];
  }
  out.w = reordered.topRows(R - 1).rowwise() - reordered.row(R - 1);
  return out;
}

Vector rhlp_mean_curve(const RhlpParams& params, std::span<const double> xs) {
  const Matrix X = scaled_polynomial_design(xs, params.degree, params.scale);
  const Matrix pi = logistic_proportions(xs, params.w);
  Vector out = Vector::Zero(X.rows());
  for (int r = 0; r < params.R(); ++r) out += pi.col(r).cwiseProduct(X * params.betas[static_cast<std::size_t>(r)]);
  return out;
}

MixRhlpFit run_em_mixrhlp_from(const FunctionalDataset& data, MixRhlpParams params, const FitOptions& opts) {
  const double floor = resolve_variance_floor(opts, data.pooled_variance());
  MixRhlpFit fit;
  std::optional<MixRhlpEStep> e;
  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0;; ++iter) {
    e = mixrhlp_e_step(data, params, opts.threads);
    fit.report.objective_trace.push_back(e->loglik);
    if (iter > 0 && std::abs(e->loglik - prev) < opts.tol * std::abs(prev)) {
      fit.report.converged = true;
      break;
    }
    if (iter >= opts.max_iter) break;
    prev = e->loglik;
    params = mixrhlp_m_step(data, params, *e, floor, opts.threads);
    fit.report.iterations = iter + 1;
  }
  for (int k = 0; k < params.K(); ++k) {
    const int R = params.components[static_cast<std::size_t>(k)].R();
    for (int r = 0; r < R; ++r) {
      double peak = 0.0;
      for (int i = 0; i < data.size(); ++i) {
        if (argmax(e->tau.row(i).transpose()) != k) continue;
        peak = std::max(peak, e->gamma[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].col(r).maxCoeff());
      }
      if (peak < 1e-3) {
        fit.report.warnings.push_back("cluster " + std::to_string(k + 1) + ": regime " + std::to_string(r + 1) +
                                      " is empty (max posterior " + std::to_string(peak) + ")");
      }
    }
  }
  fit.partition.tau = e->tau;
  fit.report.final_K = params.K();
  fit.report.seed = opts.seed;
  fit.report.criteria = compute_criteria(e->loglik, nu_mixrhlp(params.regimes(), params.components.front().degree + 1), e->tau);
  for (auto& c : params.components) c = canonicalize_regimes(c, data.x_min(), data.x_max());
  fit.params = std::move(params);
  return fit;
}

MixRhlpFit fit_em_mixrhlp(const FunctionalDataset& data, int degree, int K, const std::vector<int>& R,
                          const FitOptions& opts) {
  opts.validate();
  if (degree < 0) throw ConfigError("degree must be >= 0");
  if (K < 1 || K > data.size()) throw ConfigError("mixrhlp: need 1 <= K <= n");
  const std::vector<int> Rk = expand_regimes(R, K);
  const double floor = resolve_variance_floor(opts, data.pooled_variance());
  FitOptions inner = opts;
  inner.threads = 1;
  std::vector<std::optional<MixRhlpFit>> runs(static_cast<std::size_t>(opts.n_init));
  std::vector<std::string> errors(static_cast<std::size_t>(opts.n_init));
  parallel_for(opts.n_init, opts.threads, [&](int r) {
    try {
      std::mt19937_64 rng(derive_seed(opts.seed, static_cast<std::uint64_t>(r)));
      const std::vector<int> labels = initial_partition(data, K, opts.init, rng);
      runs[static_cast<std::size_t>(r)] =
          run_em_mixrhlp_from(data, mixrhlp_initial_params(data, degree, labels, Rk, floor), inner);
    } catch (const DegenerateError& e) {
      errors[static_cast<std::size_t>(r)] = e.what();
    }
  });
  std::optional<MixRhlpFit> best;
  for (int r = 0; r < opts.n_init; ++r) {
    auto& run = runs[static_cast<std::size_t>(r)];
    if (!run) {
      spdlog::warn("mixrhlp restart {} failed: {}", r, errors[static_cast<std::size_t>(r)]);
      continue;
    }
    if (!best || run->report.objective_trace.back() > best->report.objective_trace.back()) best = std::move(run);
  }
  if (!best) throw DegenerateError("mixrhlp: every restart failed (" + errors.front() + ")");
  for (const auto& w : best->report.warnings) spdlog::warn("{}", w);
  best->report.seed = opts.seed;
  return std::move(*best);
}

RhlpFit fit_rhlp(const FunctionalDataset& group, int degree, int R, const FitOptions& opts) {
  MixRhlpFit mix = fit_em_mixrhlp(group, degree, 1, {R}, opts);
  RhlpFit out;
  out.params = std::move(mix.params.components.front());
  out.report = std::move(mix.report);
  out.gamma.reserve(static_cast<std::size_t>(group.size()));
  for (const auto& c : group.curves()) {
    Matrix g;
    rhlp_curve_loglik(c, out.params, &g);
    out.gamma.push_back(std::move(g));
  }
  return out;
}

}  // namespace curveclust
