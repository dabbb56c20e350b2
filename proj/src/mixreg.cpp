#include "curveclust/mixreg.hpp"

#include "curveclust/criteria.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace curveclust {

RegressionData make_regression_data(const FunctionalDataset& data, const BasisSpec& basis) {
  RegressionData rd;
  rd.basis = resolve_basis(basis, {data.x_min(), data.x_max()});
  rd.pooled_variance = data.pooled_variance();
  const int n = data.size();
  rd.designs.reserve(static_cast<std::size_t>(n));
  std::optional<Matrix> shared;
  if (data.common_grid()) shared = build_design(data.curve(0).xs(), rd.basis);
  for (int i = 0; i < n; ++i) {
    const Curve& c = data.curve(i);
    rd.designs.push_back(shared ? *shared : build_design(c.xs(), rd.basis));
    rd.ys.emplace_back(c.y_vector());
    const Matrix& X = rd.designs.back();
    rd.grams.push_back(X.transpose() * X);
    rd.xtys.push_back(X.transpose() * rd.ys.back());
  }
  return rd;
}

void MixRegParams::validate() const {
  if (alphas.size() < 1) throw ConfigError("mixreg: no components");
  if (static_cast<int>(betas.size()) != K() || sigma2s.size() != K()) throw ConfigError("mixreg: inconsistent K");
  if (std::abs(alphas.sum() - 1.0) > 1e-9 || (alphas.array() < 0.0).any()) {
    throw ConfigError("mixreg: proportions not on the simplex");
  }
  if ((sigma2s.array() <= 0.0).any()) throw ConfigError("mixreg: variances must be positive");
}

double component_loglik(const Vector& y, const Matrix& design, const Vector& beta, double sigma2) {
  if (design.rows() != y.size() || design.cols() != beta.size()) {
    throw DataError("component_loglik: dimension mismatch");
  }
  const double rss = (y - design * beta).squaredNorm();
  return -0.5 * (static_cast<double>(y.size()) * (kLog2Pi + std::log(sigma2)) + rss / sigma2);
}

Matrix weighted_log_densities(const RegressionData& rd, const MixRegParams& params, int threads) {
  const int n = rd.n();
  const int K = params.K();
  Matrix logw(n, K);
  Vector log_alpha = params.alphas.array().log();
  parallel_for(n, threads, [&](int i) {
    for (int k = 0; k < K; ++k) {
      logw(i, k) = log_alpha[k] + component_loglik(rd.ys[static_cast<std::size_t>(i)],
                                                   rd.designs[static_cast<std::size_t>(i)],
                                                   params.betas[static_cast<std::size_t>(k)], params.sigma2s[k]);
    }
  });
  return logw;
}

double posteriors_from_log(Matrix& logw) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < logw.rows(); ++i) {
    Vector row = logw.row(i).transpose();
    const double lse = normalize_log_row(row);
    if (!std::isfinite(lse)) {
      throw DegenerateError("all component densities underflow for curve " + std::to_string(i));
    }
    logw.row(i) = row.transpose();
    total += lse;
  }
  return total;
}

std::pair<SoftPartition, double> e_step(const RegressionData& rd, const MixRegParams& params, int threads) {
  Matrix logw = weighted_log_densities(rd, params, threads);
  const double loglik = posteriors_from_log(logw);
  return {SoftPartition{std::move(logw)}, loglik};
}

double resolve_variance_floor(const FitOptions& opts, double pooled_variance) {
  if (opts.variance_floor > 0.0) return opts.variance_floor;
  return std::max(1e-6 * pooled_variance, 1e-12);
}

MixRegParams m_step(const RegressionData& rd, const Matrix& tau, const FitOptions& opts, const Vector& alphas) {
  const int n = rd.n();
  const int K = static_cast<int>(tau.cols());
  const int p = rd.p();
  const double floor = resolve_variance_floor(opts, rd.pooled_variance);
  MixRegParams out;
  out.basis = rd.basis;
  const Vector mass = tau.colwise().sum().transpose();
  const double min_mass = 1.0 / (static_cast<double>(n) * n);
  for (int k = 0; k < K; ++k) {
    if (mass[k] < min_mass) throw DegenerateError("empty cluster " + std::to_string(k + 1) + " in M-step");
  }
  out.alphas = alphas.size() == K ? alphas : Vector(mass / static_cast<double>(n));
  out.betas.resize(static_cast<std::size_t>(K));
  out.sigma2s.resize(K);
  for (int k = 0; k < K; ++k) {
    Matrix G = Matrix::Zero(p, p);
    Vector b = Vector::Zero(p);
    double points = 0.0;
    for (int i = 0; i < n; ++i) {
      const double t = tau(i, k);
      if (t == 0.0) continue;
      G.noalias() += t * rd.grams[static_cast<std::size_t>(i)];
      b.noalias() += t * rd.xtys[static_cast<std::size_t>(i)];
      points += t * static_cast<double>(rd.ys[static_cast<std::size_t>(i)].size());
    }
    Vector beta = solve_normal_equations(G, b, opts.ridge);
    double rss = 0.0;
    for (int i = 0; i < n; ++i) {
      const double t = tau(i, k);
      if (t == 0.0) continue;
      rss += t * (rd.ys[static_cast<std::size_t>(i)] - rd.designs[static_cast<std::size_t>(i)] * beta).squaredNorm();
    }
    out.betas[static_cast<std::size_t>(k)] = std::move(beta);
    out.sigma2s[k] = std::max(rss / points, floor);
  }
  return out;
}

Matrix hard_tau(const std::vector<int>& labels, int K) {
  Matrix tau = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), K);
  for (std::size_t i = 0; i < labels.size(); ++i) tau(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return tau;
}

namespace {

std::vector<int> random_partition(int n, int K, std::mt19937_64& rng) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> labels(static_cast<std::size_t>(n));
  std::uniform_int_distribution<int> pick(0, K - 1);
  for (int j = 0; j < n; ++j) labels[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] = j < K ? j : pick(rng);
  return labels;
}

// k-means++ seeding followed by Lloyd iterations on the response vectors.
std::vector<int> kmeans_partition(const Matrix& Y, int K, std::mt19937_64& rng) {
  const Eigen::Index n = Y.rows();
  Matrix centers(K, Y.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centers.row(0) = Y.row(first(rng));
  Vector d2(n);
  for (int c = 1; c < K; ++c) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int h = 0; h < c; ++h) best = std::min(best, (Y.row(i) - centers.row(h)).squaredNorm());
      d2[i] = best;
    }
    Eigen::Index pick = 0;
    if (d2.sum() > 0.0) {
      std::discrete_distribution<Eigen::Index> dist(d2.data(), d2.data() + n);
      pick = dist(rng);
    } else {
      pick = first(rng);
    }
    centers.row(c) = Y.row(pick);
  }
  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < K; ++c) {
        const double d = (Y.row(i) - centers.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (labels[static_cast<std::size_t>(i)] != best) changed = true;
      labels[static_cast<std::size_t>(i)] = best;
    }
    std::vector<int> counts(static_cast<std::size_t>(K), 0);
    centers.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      centers.row(labels[static_cast<std::size_t>(i)]) += Y.row(i);
      ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < K; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) {
        // Reseed an empty center at the farthest point from its center.
        Eigen::Index far = 0;
        double far_d = -1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const int l = labels[static_cast<std::size_t>(i)];
          const double d = (Y.row(i) - centers.row(l) / std::max(counts[static_cast<std::size_t>(l)], 1)).squaredNorm();
          if (counts[static_cast<std::size_t>(l)] > 1 && d > far_d) {
            far_d = d;
            far = i;
          }
        }
        --counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(far)])];
        centers.row(labels[static_cast<std::size_t>(far)]) -= Y.row(far);
        labels[static_cast<std::size_t>(far)] = c;
        counts[static_cast<std::size_t>(c)] = 1;
        centers.row(c) = Y.row(far);
        changed = true;
      }
    }
    for (int c = 0; c < K; ++c) centers.row(c) /= counts[static_cast<std::size_t>(c)];
    if (!changed) break;
  }
  return labels;
}

}  // namespace

std::vector<int> initial_partition(const FunctionalDataset& data, int K, InitMethod method, std::mt19937_64& rng) {
  if (K < 1 || K > data.size()) throw ConfigError("need 1 <= K <= n");
  if (method == InitMethod::kmeans_partition) {
    data.require_common_grid("k-means initialization");
    return kmeans_partition(data.response_matrix(), K, rng);
  }
  return random_partition(data.size(), K, rng);
}

MixRegFit run_em_from(const RegressionData& rd, const Matrix& tau0, const FitOptions& opts) {
  const int K = static_cast<int>(tau0.cols());
  MixRegFit fit;
  fit.params = m_step(rd, tau0, opts);
  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0;; ++iter) {
    auto [part, loglik] = e_step(rd, fit.params, opts.threads);
    fit.report.objective_trace.push_back(loglik);
    fit.partition = std::move(part);
    if (iter > 0 && std::abs(loglik - prev) < opts.tol * std::abs(prev)) {
      fit.report.converged = true;
      break;
    }
    if (iter >= opts.max_iter) break;
    prev = loglik;
    fit.params = m_step(rd, fit.partition.tau, opts);
    fit.report.iterations = iter + 1;
  }
  fit.report.final_K = K;
  fit.report.seed = opts.seed;
  fit.report.criteria = compute_criteria(fit.report.objective_trace.back(), nu_mixreg(K, rd.p()), fit.partition.tau);
  return fit;
}

MixRegFit fit_em(const FunctionalDataset& data, const BasisSpec& basis, int K, const FitOptions& opts) {
  opts.validate();
  if (K < 1 || K > data.size()) throw ConfigError("mixreg: need 1 <= K <= n");
  const RegressionData rd = make_regression_data(data, basis);
  std::vector<std::optional<MixRegFit>> runs(static_cast<std::size_t>(opts.n_init));
  std::vector<std::string> errors(static_cast<std::size_t>(opts.n_init));
  FitOptions inner = opts;
  inner.threads = 1;
  parallel_for(opts.n_init, opts.threads, [&](int r) {
    try {
      std::mt19937_64 rng(derive_seed(opts.seed, static_cast<std::uint64_t>(r)));
      const Matrix tau0 = hard_tau(initial_partition(data, K, opts.init, rng), K);
      runs[static_cast<std::size_t>(r)] = run_em_from(rd, tau0, inner);
    } catch (const DegenerateError& e) {
      errors[static_cast<std::size_t>(r)] = e.what();
    }
  });
  std::optional<MixRegFit> best;
  for (int r = 0; r < opts.n_init; ++r) {
    auto& run = runs[static_cast<std::size_t>(r)];
    if (!run) {
      spdlog::warn("mixreg restart {} failed: {}", r, errors[static_cast<std::size_t>(r)]);
      continue;
    }
    if (!best || run->report.objective_trace.back() > best->report.objective_trace.back()) best = std::move(run);
  }
  if (!best) throw DegenerateError("mixreg: every restart failed (" + errors.front() + ")");
  best->report.seed = opts.seed;
  return std::move(*best);
}

double penalized_objective(double loglik, const Vector& alphas, int n, double lambda) {
  double entropy = 0.0;
  for (Eigen::Index k = 0; k < alphas.size(); ++k) {
    if (alphas[k] > 0.0) entropy -= alphas[k] * std::log(alphas[k]);
  }
  return loglik - lambda * static_cast<double>(n) * entropy;
}

double robust_lambda(int q, int n) {
  if (n < 2) return 0.0;
  return std::min(1.0, q / 10.0) / std::log(static_cast<double>(n));
}

double adaptive_lambda(const Vector& alpha_new, const Vector& alpha_old, const Vector& mean_tau, int n, int p) {
  const double eta = std::min(1.0, std::pow(0.5, std::floor(p / 2.0 - 1.0)));
  const double first = (-eta * n * (alpha_new - alpha_old).array().abs()).exp().sum() / static_cast<double>(alpha_old.size());
  double e = 0.0;
  for (Eigen::Index k = 0; k < alpha_old.size(); ++k) {
    if (alpha_old[k] > 0.0) e += alpha_old[k] * std::log(alpha_old[k]);
  }
  const double denom = -alpha_old.maxCoeff() * e;
  if (!(denom > 0.0)) return first;
  return std::min(first, (1.0 - mean_tau.maxCoeff()) / denom);
}

Vector robust_alpha_update(const Vector& mean_tau, const Vector& alphas, double lambda) {
  const Eigen::Index K = alphas.size();
  double e = 0.0;
  for (Eigen::Index k = 0; k < K; ++k) {
    if (alphas[k] > 0.0) e += alphas[k] * std::log(alphas[k]);
  }
  Vector delta(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    delta[k] = alphas[k] > 0.0 ? lambda * alphas[k] * (std::log(alphas[k]) - e) : 0.0;
  }
  // Largest step c in [0, 1] keeping mean_tau + c * delta inside [0, 1].
  double c = 1.0;
  for (Eigen::Index k = 0; k < K; ++k) {
    if (delta[k] < 0.0) c = std::min(c, mean_tau[k] / -delta[k]);
    if (delta[k] > 0.0) c = std::min(c, (1.0 - mean_tau[k]) / delta[k]);
  }
  Vector out = (mean_tau + c * delta).cwiseMax(0.0);
  return out / out.sum();
}

MixRegParams robust_initial_params(const RegressionData& rd, const FitOptions& opts) {
  const int n = rd.n();
  const double floor = resolve_variance_floor(opts, rd.pooled_variance);
  MixRegParams params;
  params.basis = rd.basis;
  params.alphas = Vector::Constant(n, 1.0 / n);
  params.betas.resize(static_cast<std::size_t>(n));
  params.sigma2s.resize(n);
  const auto rank = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  parallel_for(n, opts.threads, [&](int k) {
    const auto kk = static_cast<std::size_t>(k);
    params.betas[kk] = solve_normal_equations(rd.grams[kk], rd.xtys[kk], opts.ridge);
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      if (i == k) continue;
      const auto ii = static_cast<std::size_t>(i);
      d.push_back((rd.ys[ii] - rd.designs[ii] * params.betas[kk]).squaredNorm() / static_cast<double>(rd.ys[ii].size()));
    }
    double s2 = 0.0;
    if (d.empty()) {
      s2 = (rd.ys[kk] - rd.designs[kk] * params.betas[kk]).squaredNorm() / static_cast<double>(rd.ys[kk].size());
    } else {
      const std::size_t pos = std::min(rank, d.size()) - 1;
      std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(pos), d.end());
      s2 = d[pos];
    }
    params.sigma2s[k] = std::max(s2, floor);
  });
  return params;
}

MixRegFit run_robust_from(const RegressionData& rd, MixRegParams params, const RobustOptions& opts) {
  const int n = rd.n();
  MixRegFit fit;
  double prev = -std::numeric_limits<double>::infinity();
  int stable = 0;
  double adaptive = 1.0;
  for (int q = 0;; ++q) {
    Matrix logw = weighted_log_densities(rd, params, opts.fit.threads);
    const double loglik = posteriors_from_log(logw);
    double lambda = adaptive;
    if (opts.lambda) {
      lambda = *opts.lambda;
    } else if (opts.schedule == LambdaSchedule::ramp) {
      lambda = robust_lambda(q, n);
    }
    const double objective = penalized_objective(loglik, params.alphas, n, lambda);
    fit.report.objective_trace.push_back(objective);
    fit.report.k_trace.push_back(params.K());
    fit.partition.tau = logw;
    if (q > 0 && stable >= opts.stable_window && std::abs(objective - prev) < opts.fit.tol * std::abs(prev)) {
      fit.report.converged = true;
      break;
    }
    if (q >= opts.fit.max_iter) break;
    prev = objective;

    const Vector mean_tau = logw.colwise().sum().transpose() / static_cast<double>(n);
    Vector alphas = robust_alpha_update(mean_tau, params.alphas, lambda);
    const int K_before = params.K();
    if (opts.schedule == LambdaSchedule::adaptive) {
      adaptive = adaptive_lambda(alphas, params.alphas, mean_tau, n, rd.p());
      // Penalty switched off once K has been stable for a long stretch.
      if (q >= 60 && fit.report.k_trace[static_cast<std::size_t>(q - 60)] == K_before) adaptive = 0.0;
    }
    if (opts.discard) {
      std::vector<int> keep;
      for (int k = 0; k < K_before; ++k) {
        if (alphas[k] >= 1.0 / n) keep.push_back(k);
      }
      if (keep.empty()) throw DegenerateError("robust EM discarded every component");
      if (static_cast<int>(keep.size()) < K_before) {
        MixRegParams kept;
        kept.basis = params.basis;
        kept.alphas.resize(static_cast<Eigen::Index>(keep.size()));
        kept.sigma2s.resize(static_cast<Eigen::Index>(keep.size()));
        for (std::size_t j = 0; j < keep.size(); ++j) {
          kept.alphas[static_cast<Eigen::Index>(j)] = alphas[keep[j]];
          kept.betas.push_back(params.betas[static_cast<std::size_t>(keep[j])]);
          kept.sigma2s[static_cast<Eigen::Index>(j)] = params.sigma2s[keep[j]];
        }
        kept.alphas /= kept.alphas.sum();
        alphas = kept.alphas;
        params = std::move(kept);
        // Memberships over the surviving components.
        Matrix relog = weighted_log_densities(rd, params, opts.fit.threads);
        posteriors_from_log(relog);
        logw = std::move(relog);
      }
    }
    stable = params.K() == K_before ? stable + 1 : 0;
    params = m_step(rd, logw, opts.fit, alphas);
    fit.report.iterations = q + 1;
  }
  fit.params = std::move(params);
  fit.report.final_K = fit.params.K();
  fit.report.seed = opts.fit.seed;
  auto [part, loglik] = e_step(rd, fit.params, opts.fit.threads);
  fit.partition = std::move(part);
  fit.report.criteria = compute_criteria(loglik, nu_mixreg(fit.params.K(), rd.p()), fit.partition.tau);
  return fit;
}

MixRegFit fit_robust_em(const FunctionalDataset& data, const BasisSpec& basis, const RobustOptions& opts) {
  opts.fit.validate();
  if (data.size() < 2) throw ConfigError("robust EM needs at least 2 curves");
  if (opts.lambda && *opts.lambda < 0.0) throw ConfigError("lambda must be >= 0");
  const RegressionData rd = make_regression_data(data, basis);
  return run_robust_from(rd, robust_initial_params(rd, opts.fit), opts);
}

Vector mixreg_mean_curve(const MixRegParams& params, int k, std::span<const double> xs) {
  return build_design(xs, params.basis) * params.betas.at(static_cast<std::size_t>(k));
}

}  // namespace curveclust
