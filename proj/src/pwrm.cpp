#include "curveclust/pwrm.hpp"

#include "curveclust/basis.hpp"
#include "curveclust/criteria.hpp"
#include "curveclust/mixreg.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace curveclust {

int Segmentation::regime_of(int j) const {
  const auto it = std::upper_bound(boundaries.begin(), boundaries.end(), j);
  return static_cast<int>(it - boundaries.begin()) - 1;
}

void Segmentation::validate(int m, int min_len) const {
  if (boundaries.size() < 2 || boundaries.front() != 0 || boundaries.back() != m) {
    throw DataError("segmentation must start at 0 and end at m");
  }
  for (std::size_t r = 0; r + 1 < boundaries.size(); ++r) {
    if (boundaries[r + 1] - boundaries[r] < min_len) throw DataError("segment shorter than the minimum length");
  }
}

Matrix scaled_polynomial_design(std::span<const double> xs, int degree, AbscissaScale scale) {
  Matrix X(static_cast<Eigen::Index>(xs.size()), degree + 1);
  for (std::size_t j = 0; j < xs.size(); ++j) {
    const double u = scale(xs[j]);
    double v = 1.0;
    for (int d = 0; d <= degree; ++d, v *= u) X(static_cast<Eigen::Index>(j), d) = v;
  }
  return X;
}

namespace {

constexpr double kTieTol = 1e-9;

double profile_cost(double rss, double mass, double floor) {
  if (mass <= 0.0) return 0.0;
  const double s2 = rss / mass;
  if (s2 >= floor) return 0.5 * mass * (kLog2Pi + std::log(s2) + 1.0);
  return 0.5 * (mass * (kLog2Pi + std::log(floor)) + rss / floor);
}

struct WeightedSummary {
  Vector mean;     // weighted mean curve
  Vector scatter;  // sum_i w_i (y_ij - mean_j)^2
  double W = 0.0;
};

WeightedSummary summarize(const Matrix& Y, const Vector& w) {
  if (w.size() != Y.rows()) throw DataError("weights do not match the number of curves");
  if ((w.array() < 0.0).any()) throw DataError("weights must be non-negative");
  WeightedSummary s;
  s.W = w.sum();
  if (!(s.W > 0.0)) throw DataError("weights must have a positive sum");
  s.mean = (Y.transpose() * w) / s.W;
  s.scatter = Vector::Zero(Y.cols());
  for (Eigen::Index i = 0; i < Y.rows(); ++i) {
    if (w[i] == 0.0) continue;
    s.scatter += w[i] * (Y.row(i).transpose() - s.mean).array().square().matrix();
  }
  return s;
}

}  // namespace

DpResult segment_fixed(const Matrix& Y, std::span<const double> grid, const Vector& weights, const Segmentation& seg,
                       int degree, SegmentCost cost, double variance_floor) {
  const int m = static_cast<int>(Y.cols());
  seg.validate(m, 1);
  const WeightedSummary s = summarize(Y, weights);
  const AbscissaScale scale{grid.front(), grid.back()};
  const Matrix X = scaled_polynomial_design(grid, degree, scale);
  const double floor = variance_floor > 0.0 ? variance_floor : 1e-12;
  DpResult out;
  out.segmentation = seg;
  const int R = seg.regimes();
  out.rss.resize(R);
  out.mass.resize(R);
  for (int r = 0; r < R; ++r) {
    const int a = seg.boundaries[static_cast<std::size_t>(r)];
    const int len = seg.boundaries[static_cast<std::size_t>(r) + 1] - a;
    const Matrix Xs = X.middleRows(a, len);
    const Vector ybar = s.mean.segment(a, len);
    Vector beta = solve_normal_equations(Xs.transpose() * Xs, Xs.transpose() * ybar);
    const Vector fit = Xs * beta;
    double rss = 0.0;
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
      if (weights[i] == 0.0) continue;
      rss += weights[i] * (Y.row(i).segment(a, len).transpose() - fit).squaredNorm();
    }
    out.betas.push_back(std::move(beta));
    out.rss[r] = rss;
    out.mass[r] = s.W * len;
    out.cost += cost == SegmentCost::squared_error ? rss : profile_cost(rss, out.mass[r], floor);
  }
  return out;
}

DpResult dp_segment(const Matrix& Y, std::span<const double> grid, const Vector& weights, int R, int degree,
                    SegmentCost cost, double variance_floor, int min_len) {
  const int m = static_cast<int>(Y.cols());
  if (static_cast<int>(grid.size()) != m) throw DataError("grid length does not match the curves");
  if (R < 1 || degree < 0) throw ConfigError("dp_segment: need R >= 1 and degree >= 0");
  if (min_len < 0) min_len = degree + 1;
  if (m < R * min_len) {
    throw ConfigError("infeasible segmentation: " + std::to_string(m) + " points cannot hold " + std::to_string(R) +
                      " regimes of at least " + std::to_string(min_len) + " points");
  }
  const WeightedSummary s = summarize(Y, weights);
  const AbscissaScale scale{grid.front(), grid.back()};
  const Matrix X = scaled_polynomial_design(grid, degree, scale);
  const double floor = variance_floor > 0.0 ? variance_floor : 1e-12;
  const int p = degree + 1;
  const double shift = s.mean.mean();

  // C(a, b): criterion of one regime over points [a, b).
  const double inf = std::numeric_limits<double>::infinity();
  Matrix C = Matrix::Constant(m, m + 1, inf);
  for (int a = 0; a < m; ++a) {
    Matrix G = Matrix::Zero(p, p);
    Vector bv = Vector::Zero(p);
    double yy = 0.0;
    double scatter = 0.0;
    for (int b = a + 1; b <= m; ++b) {
      const int j = b - 1;
      const Vector x = X.row(j).transpose();
      const double yc = s.mean[j] - shift;
      G.noalias() += x * x.transpose();
      bv += yc * x;
      yy += yc * yc;
      scatter += s.scatter[j];
      if (b - a < min_len) continue;
      double rss_mean = 0.0;
      if (b - a > p) {
        const Vector beta = solve_normal_equations(G, bv);
        rss_mean = std::max(yy - beta.dot(bv), 0.0);
      }
      const double rss = s.W * rss_mean + scatter;
      C(a, b) = cost == SegmentCost::squared_error ? rss : profile_cost(rss, s.W * (b - a), floor);
    }
  }

  // best(r, a): optimal criterion for points [a, m) split into r regimes.
  Matrix best = Matrix::Constant(R + 1, m + 1, inf);
  best(0, m) = 0.0;
  for (int r = 1; r <= R; ++r) {
    for (int a = 0; a + r * min_len <= m; ++a) {
      double v = inf;
      for (int b = a + min_len; b + (r - 1) * min_len <= m; ++b) {
        if (r == 1 && b != m) continue;
        v = std::min(v, C(a, b) + best(r - 1, b));
      }
      best(r, a) = v;
    }
  }

  Segmentation seg;
  seg.boundaries.push_back(0);
  int a = 0;
  for (int r = R; r >= 1; --r) {
    if (r == 1) {
      seg.boundaries.push_back(m);
      break;
    }
    const double target = best(r, a);
    const double tol = kTieTol * std::max(1.0, std::abs(target));
    for (int b = a + min_len; b + (r - 1) * min_len <= m; ++b) {
      if (C(a, b) + best(r - 1, b) <= target + tol) {
        seg.boundaries.push_back(b);
        a = b;
        break;
      }
    }
  }
  return segment_fixed(Y, grid, weights, seg, degree, cost, variance_floor);
}

std::vector<int> PwrmParams::regimes() const {
  std::vector<int> R;
  for (const auto& c : clusters) R.push_back(c.segmentation.regimes());
  return R;
}

Vector pwrm_mean_curve(const PwrmParams& params, int k) {
  const PwrmCluster& c = params.clusters.at(static_cast<std::size_t>(k));
  const Matrix X = scaled_polynomial_design(params.grid, params.degree, params.scale);
  Vector out(X.rows());
  for (int r = 0; r < c.segmentation.regimes(); ++r) {
    const int a = c.segmentation.boundaries[static_cast<std::size_t>(r)];
    const int len = c.segmentation.boundaries[static_cast<std::size_t>(r) + 1] - a;
    out.segment(a, len) = X.middleRows(a, len) * c.betas[static_cast<std::size_t>(r)];
  }
  return out;
}

std::pair<std::vector<double>, std::vector<double>> pwrm_interpolated_curve(const PwrmParams& params, int k) {
  const PwrmCluster& c = params.clusters.at(static_cast<std::size_t>(k));
  const Vector mean = pwrm_mean_curve(params, k);
  auto eval = [&](int r, double x) {
    const Matrix row = scaled_polynomial_design(std::span<const double>(&x, 1), params.degree, params.scale);
    return (row * c.betas[static_cast<std::size_t>(r)])(0);
  };
  std::vector<double> xs;
  std::vector<double> ys;
  for (int j = 0; j < static_cast<int>(params.grid.size()); ++j) {
    const int r = c.segmentation.regime_of(j);
    if (j > 0 && r != c.segmentation.regime_of(j - 1)) {
      const double mid = 0.5 * (params.grid[static_cast<std::size_t>(j) - 1] + params.grid[static_cast<std::size_t>(j)]);
      xs.push_back(mid);
      ys.push_back(0.5 * (eval(r - 1, mid) + eval(r, mid)));
    }
    xs.push_back(params.grid[static_cast<std::size_t>(j)]);
    ys.push_back(mean[j]);
  }
  return {xs, ys};
}

Matrix pwrm_log_densities(const Matrix& Y, const PwrmParams& params) {
  const int K = params.K();
  const Eigen::Index m = Y.cols();
  Matrix out(Y.rows(), K);
  for (int k = 0; k < K; ++k) {
    const PwrmCluster& c = params.clusters[static_cast<std::size_t>(k)];
    const Vector mu = pwrm_mean_curve(params, k);
    Vector var(m);
    for (Eigen::Index j = 0; j < m; ++j) var[j] = c.sigma2s[c.segmentation.regime_of(static_cast<int>(j))];
    const double log_norm = (kLog2Pi + var.array().log()).sum();
    const Vector inv = var.cwiseInverse();
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
      const double q = ((Y.row(i).transpose() - mu).array().square() * inv.array()).sum();
      out(i, k) = -0.5 * (log_norm + q);
    }
  }
  return out;
}

std::vector<int> expand_regimes(const std::vector<int>& R, int K) {
  if (R.empty()) throw ConfigError("number of regimes R is required");
  std::vector<int> out = R.size() == 1 ? std::vector<int>(static_cast<std::size_t>(K), R.front()) : R;
  if (static_cast<int>(out.size()) != K) throw ConfigError("R must be a single value or one value per cluster");
  for (int r : out) {
    if (r < 1) throw ConfigError("R must be >= 1");
  }
  return out;
}

namespace {

PwrmParams pwrm_m_step(const Matrix& Y, const std::vector<double>& grid, const Matrix& tau, int degree,
                       const std::vector<int>& R, const PwrmOptions& opts, double floor) {
  const auto n = static_cast<int>(Y.rows());
  const int K = static_cast<int>(tau.cols());
  PwrmParams params;
  params.grid = grid;
  params.degree = degree;
  params.scale = {grid.front(), grid.back()};
  params.homoskedastic = opts.homoskedastic || opts.constrained;
  params.shared_variance = opts.constrained;
  const Vector mass = tau.colwise().sum().transpose();
  for (int k = 0; k < K; ++k) {
    if (mass[k] < 1.0 / (static_cast<double>(n) * n)) {
      throw DegenerateError("empty cluster " + std::to_string(k + 1) + " in PWRM M-step");
    }
  }
  params.alphas = opts.constrained ? Vector(Vector::Constant(K, 1.0 / K)) : Vector(mass / n);
  params.clusters.resize(static_cast<std::size_t>(K));
  const SegmentCost cost = params.homoskedastic ? SegmentCost::squared_error : SegmentCost::gaussian_profile;
  std::vector<DpResult> dps(static_cast<std::size_t>(K));
  parallel_for(K, opts.fit.threads, [&](int k) {
    dps[static_cast<std::size_t>(k)] =
        dp_segment(Y, grid, tau.col(k), R[static_cast<std::size_t>(k)], degree, cost, floor);
  });
  double total_rss = 0.0;
  double total_mass = 0.0;
  for (int k = 0; k < K; ++k) {
    DpResult& dp = dps[static_cast<std::size_t>(k)];
    PwrmCluster& c = params.clusters[static_cast<std::size_t>(k)];
    c.segmentation = dp.segmentation;
    c.betas = std::move(dp.betas);
    if (params.homoskedastic) {
      c.sigma2s = Vector::Constant(dp.rss.size(), std::max(dp.rss.sum() / dp.mass.sum(), floor));
    } else {
      c.sigma2s = (dp.rss.array() / dp.mass.array()).max(floor);
    }
    total_rss += dp.rss.sum();
    total_mass += dp.mass.sum();
  }
  if (params.shared_variance) {
    const double s2 = std::max(total_rss / total_mass, floor);
    for (auto& c : params.clusters) c.sigma2s.setConstant(s2);
  }
  return params;
}

}  // namespace

double pwrm_free_parameters(const PwrmParams& params) {
  const int p = params.degree + 1;
  if (params.shared_variance) {
    double nu = 1.0;
    for (int r : params.regimes()) nu += (r - 1) + r * p;
    return nu;
  }
  return nu_pwrm(params.regimes(), p, params.homoskedastic);
}

namespace {

void check_pwrm_inputs(int m, int degree, const std::vector<int>& R, const PwrmOptions& opts) {
  opts.fit.validate();
  if (degree < 0) throw ConfigError("degree must be >= 0");
  if (opts.constrained && degree != 0) throw ConfigError("constrained mode requires degree 0");
  for (int r : R) {
    if (m < r * (degree + 1)) {
      throw ConfigError("infeasible segmentation: grid of " + std::to_string(m) + " points for R=" + std::to_string(r));
    }
  }
}

}  // namespace

PwrmFit run_em_pwrm_from(const Matrix& Y, const std::vector<double>& grid, int degree, const std::vector<int>& R,
                         const std::vector<int>& init, const PwrmOptions& opts, double pooled_variance) {
  const int K = static_cast<int>(R.size());
  check_pwrm_inputs(static_cast<int>(Y.cols()), degree, R, opts);
  const double floor = resolve_variance_floor(opts.fit, pooled_variance);
  PwrmFit fit;
  fit.params = pwrm_m_step(Y, grid, hard_tau(init, K), degree, R, opts, floor);
  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0;; ++iter) {
    Matrix logw = pwrm_log_densities(Y, fit.params);
    logw.rowwise() += fit.params.alphas.array().log().matrix().transpose();
    const double loglik = posteriors_from_log(logw);
    fit.report.objective_trace.push_back(loglik);
    fit.partition.tau = std::move(logw);
    if (iter > 0 && std::abs(loglik - prev) < opts.fit.tol * std::abs(prev)) {
      fit.report.converged = true;
      break;
    }
    if (iter >= opts.fit.max_iter) break;
    prev = loglik;
    fit.params = pwrm_m_step(Y, grid, fit.partition.tau, degree, R, opts, floor);
    fit.report.iterations = iter + 1;
  }
  fit.labels = fit.partition.map_labels();
  fit.report.final_K = K;
  fit.report.seed = opts.fit.seed;
  fit.report.criteria = compute_criteria(fit.report.objective_trace.back(), pwrm_free_parameters(fit.params), fit.partition.tau);
  return fit;
}

PwrmFit run_cem_pwrm_from(const Matrix& Y, const std::vector<double>& grid, int degree, const std::vector<int>& R,
                          const std::vector<int>& init, const PwrmOptions& opts, double pooled_variance) {
  const int K = static_cast<int>(R.size());
  const auto n = static_cast<int>(Y.rows());
  check_pwrm_inputs(static_cast<int>(Y.cols()), degree, R, opts);
  const double floor = resolve_variance_floor(opts.fit, pooled_variance);
  PwrmFit fit;
  std::vector<int> labels = init;
  int repairs = 0;
  for (int iter = 0;; ++iter) {
    fit.params = pwrm_m_step(Y, grid, hard_tau(labels, K), degree, R, opts, floor);
    fit.report.iterations = iter + 1;
    Matrix logw = pwrm_log_densities(Y, fit.params);
    logw.rowwise() += fit.params.alphas.array().log().matrix().transpose();

    std::vector<int> next(static_cast<std::size_t>(n));
    std::vector<int> counts(static_cast<std::size_t>(K), 0);
    for (int i = 0; i < n; ++i) {
      next[static_cast<std::size_t>(i)] = argmax(logw.row(i).transpose());
      ++counts[static_cast<std::size_t>(next[static_cast<std::size_t>(i)])];
    }
    for (int k = 0; k < K; ++k) {
      if (counts[static_cast<std::size_t>(k)] > 0) continue;
      if (++repairs > 3) throw DegenerateError("CEM: cluster " + std::to_string(k + 1) + " emptied after 3 repairs");
      const int big = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      int worst = -1;
      for (int i = 0; i < n; ++i) {
        if (next[static_cast<std::size_t>(i)] != big) continue;
        if (worst < 0 || logw(i, big) < logw(worst, big)) worst = i;
      }
      spdlog::debug("CEM: moving curve {} into empty cluster {}", worst, k + 1);
      next[static_cast<std::size_t>(worst)] = k;
      --counts[static_cast<std::size_t>(big)];
      ++counts[static_cast<std::size_t>(k)];
    }
    double complete = 0.0;
    for (int i = 0; i < n; ++i) complete += logw(i, next[static_cast<std::size_t>(i)]);
    fit.report.objective_trace.push_back(complete);

    const bool same = next == labels;
    labels = std::move(next);
    if (same) {
      fit.report.converged = true;
      break;
    }
    if (iter + 1 >= opts.fit.max_iter) break;
  }
  fit.labels = labels;
  Matrix logw = pwrm_log_densities(Y, fit.params);
  logw.rowwise() += fit.params.alphas.array().log().matrix().transpose();
  const double loglik = posteriors_from_log(logw);
  fit.partition.tau = std::move(logw);
  fit.report.final_K = K;
  fit.report.seed = opts.fit.seed;
  fit.report.criteria = compute_criteria(loglik, pwrm_free_parameters(fit.params), fit.partition.tau);
  return fit;
}

namespace {

PwrmFit fit_pwrm_restarts(const FunctionalDataset& data, int degree, int K, const std::vector<int>& R,
                          const PwrmOptions& opts, bool cem) {
  opts.fit.validate();
  data.require_common_grid("PWRM");
  if (K < 1 || K > data.size()) throw ConfigError("pwrm: need 1 <= K <= n");
  const std::vector<int> Rk = expand_regimes(R, K);
  const Matrix Y = data.response_matrix();
  const std::vector<double>& grid = data.grid();
  const double pv = data.pooled_variance();
  check_pwrm_inputs(static_cast<int>(Y.cols()), degree, Rk, opts);
  PwrmOptions inner = opts;
  inner.fit.threads = 1;
  std::vector<std::optional<PwrmFit>> runs(static_cast<std::size_t>(opts.fit.n_init));
  std::vector<std::string> errors(static_cast<std::size_t>(opts.fit.n_init));
  parallel_for(opts.fit.n_init, opts.fit.threads, [&](int r) {
    try {
      std::mt19937_64 rng(derive_seed(opts.fit.seed, static_cast<std::uint64_t>(r)));
      const std::vector<int> init = initial_partition(data, K, opts.fit.init, rng);
      runs[static_cast<std::size_t>(r)] =
          cem ? run_cem_pwrm_from(Y, grid, degree, Rk, init, inner, pv) : run_em_pwrm_from(Y, grid, degree, Rk, init, inner, pv);
    } catch (const DegenerateError& e) {
      errors[static_cast<std::size_t>(r)] = e.what();
    }
  });
  std::optional<PwrmFit> best;
  for (int r = 0; r < opts.fit.n_init; ++r) {
    auto& run = runs[static_cast<std::size_t>(r)];
    if (!run) {
      spdlog::warn("pwrm restart {} failed: {}", r, errors[static_cast<std::size_t>(r)]);
      continue;
    }
    if (!best || run->report.objective_trace.back() > best->report.objective_trace.back()) best = std::move(run);
  }
  if (!best) throw DegenerateError("pwrm: every restart failed (" + errors.front() + ")");
  best->report.seed = opts.fit.seed;
  return std::move(*best);
}

}  // namespace

PwrmFit fit_em_pwrm(const FunctionalDataset& data, int degree, int K, const std::vector<int>& R,
                    const PwrmOptions& opts) {
  if (opts.constrained) throw ConfigError("constrained mode is only available with CEM");
  return fit_pwrm_restarts(data, degree, K, R, opts, false);
}

PwrmFit fit_cem_pwrm(const FunctionalDataset& data, int degree, int K, const std::vector<int>& R,
                     const PwrmOptions& opts) {
  return fit_pwrm_restarts(data, degree, K, R, opts, true);
}

}  // namespace curveclust
