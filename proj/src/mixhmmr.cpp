#include "curveclust/mixhmmr.hpp"

#include "curveclust/basis.hpp"
#include "curveclust/criteria.hpp"
#include "curveclust/mixreg.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>
#include <optional>

namespace curveclust {

void MarkovChain::validate() const {
  const int R = states();
  if (R < 1 || transition.rows() != R || transition.cols() != R) throw ConfigError("Markov chain: bad dimensions");
  if (std::abs(initial.sum() - 1.0) > 1e-9 || (initial.array() < 0.0).any()) {
    throw ConfigError("Markov chain: initial distribution not on the simplex");
  }
  for (int l = 0; l < R; ++l) {
    if (std::abs(transition.row(l).sum() - 1.0) > 1e-9 || (transition.row(l).array() < 0.0).any()) {
      throw ConfigError("Markov chain: transition rows must be stochastic");
    }
    if (left_right) {
      for (int r = 0; r < l; ++r) {
        if (transition(l, r) != 0.0) throw ConfigError("Markov chain: left-right chain has backward mass");
      }
    }
  }
}

MarkovChain MarkovChain::initial_chain(int R, bool left_right) {
  MarkovChain c;
  c.left_right = left_right;
  c.initial = Vector::Zero(R);
  c.transition = Matrix::Zero(R, R);
  if (R == 1) {
    c.initial[0] = 1.0;
    c.transition(0, 0) = 1.0;
    return c;
  }
  if (left_right) {
    c.initial[0] = 1.0;
    for (int r = 0; r + 1 < R; ++r) {
      c.transition(r, r) = 0.9;
      c.transition(r, r + 1) = 0.1;
    }
    c.transition(R - 1, R - 1) = 1.0;
  } else {
    c.initial.setConstant(1.0 / R);
    c.transition.setConstant(0.1 / (R - 1));
    c.transition.diagonal().setConstant(0.9);
  }
  return c;
}

namespace {

struct Forward {
  Matrix log_alpha;  // log of the normalized forward variables
  Vector log_scale;  // log s_j
  double loglik = 0.0;
};

double lse(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  const double top = v.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((v.array() - top).exp().sum());
}

Matrix log_of(const Matrix& a) { return a.array().log().matrix(); }

Forward forward_pass(const Matrix& logb, const MarkovChain& chain) {
  const Eigen::Index m = logb.rows();
  const Eigen::Index R = logb.cols();
  if (R != chain.states()) throw DataError("forward_backward: emission and chain dimensions differ");
  const Matrix logA = log_of(chain.transition);
  Forward f;
  f.log_alpha.resize(m, R);
  f.log_scale.resize(m);
  Eigen::RowVectorXd a(R);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index r = 0; r < R; ++r) {
      a[r] = j == 0 ? std::log(chain.initial[r]) : lse(f.log_alpha.row(j - 1) + logA.col(r).transpose());
    }
    a += logb.row(j);
    const double total = lse(a);
    if (!std::isfinite(total)) throw DegenerateError("zero total emission mass at point " + std::to_string(j));
    f.log_alpha.row(j) = a.array() - total;
    f.log_scale[j] = total;
    f.loglik += total;
  }
  return f;
}

}  // namespace

double forward_loglik(const Matrix& log_emissions, const MarkovChain& chain) {
  return forward_pass(log_emissions, chain).loglik;
}

HmmPosteriors forward_backward_log(const Matrix& log_emissions, const MarkovChain& chain) {
  const Forward f = forward_pass(log_emissions, chain);
  const Eigen::Index m = log_emissions.rows();
  const Eigen::Index R = log_emissions.cols();
  const Matrix logA = log_of(chain.transition);
  Matrix log_beta(m, R);
  log_beta.row(m - 1).setZero();
  for (Eigen::Index j = m - 2; j >= 0; --j) {
    const Eigen::RowVectorXd next = log_emissions.row(j + 1) + log_beta.row(j + 1);
    for (Eigen::Index l = 0; l < R; ++l) log_beta(j, l) = lse(logA.row(l) + next) - f.log_scale[j + 1];
  }
  HmmPosteriors out;
  out.loglik = f.loglik;
  out.gamma.resize(m, R);
  for (Eigen::Index j = 0; j < m; ++j) {
    const Eigen::RowVectorXd g = f.log_alpha.row(j) + log_beta.row(j);
    out.gamma.row(j) = (g.array() - lse(g)).exp();
  }
  out.xi.reserve(static_cast<std::size_t>(std::max<Eigen::Index>(m - 1, 0)));
  for (Eigen::Index j = 0; j + 1 < m; ++j) {
    Matrix x = logA;
    x.colwise() += f.log_alpha.row(j).transpose();
    x.rowwise() += log_emissions.row(j + 1) + log_beta.row(j + 1);
    const double top = x.maxCoeff();
    x = (x.array() - top).exp();
    x /= x.sum();
    out.xi.push_back(std::move(x));
  }
  return out;
}

Matrix hmm_log_emissions(const Vector& y, const Matrix& design, const std::vector<Vector>& betas,
                         const Vector& sigma2s) {
  const auto R = static_cast<Eigen::Index>(betas.size());
  if (design.rows() != y.size() || sigma2s.size() != R) throw DataError("hmm emissions: dimension mismatch");
  Matrix logb(y.size(), R);
  for (Eigen::Index r = 0; r < R; ++r) {
    const Vector mu = design * betas[static_cast<std::size_t>(r)];
    for (Eigen::Index j = 0; j < y.size(); ++j) logb(j, r) = log_normal_pdf(y[j], mu[j], sigma2s[r]);
  }
  return logb;
}

HmmPosteriors forward_backward(const Vector& y, const Matrix& design, const MarkovChain& chain,
                               const std::vector<Vector>& betas, const Vector& sigma2s) {
  return forward_backward_log(hmm_log_emissions(y, design, betas, sigma2s), chain);
}

std::vector<int> MixHmmrParams::regimes() const {
  std::vector<int> R;
  for (const auto& c : clusters) R.push_back(c.chain.states());
  return R;
}

namespace {

std::vector<Matrix> curve_designs(const FunctionalDataset& data, int degree, AbscissaScale scale) {
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(data.size()));
  for (const auto& c : data.curves()) out.push_back(scaled_polynomial_design(c.xs(), degree, scale));
  return out;
}

}  // namespace

MixHmmrEStep mixhmmr_e_step(const FunctionalDataset& data, const MixHmmrParams& params, int threads) {
  const int n = data.size();
  const int K = params.K();
  const std::vector<Matrix> designs = curve_designs(data, params.degree, params.scale);
  MixHmmrEStep e;
  e.stats.assign(static_cast<std::size_t>(n), std::vector<HmmCurveStats>(static_cast<std::size_t>(K)));
  Matrix logw(n, K);
  parallel_for(n, threads, [&](int i) {
    const Vector y = data.curve(i).y_vector();
    for (int k = 0; k < K; ++k) {
      const HmmrCluster& c = params.clusters[static_cast<std::size_t>(k)];
      HmmPosteriors post = forward_backward(y, designs[static_cast<std::size_t>(i)], c.chain, c.betas, c.sigma2s);
      HmmCurveStats& st = e.stats[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      st.loglik = post.loglik;
      st.xi_sum = Matrix::Zero(c.chain.states(), c.chain.states());
      for (const auto& x : post.xi) st.xi_sum += x;
      st.gamma = std::move(post.gamma);
      logw(i, k) = std::log(params.alphas[k]) + post.loglik;
    }
  });
  e.loglik = posteriors_from_log(logw);
  e.tau = std::move(logw);
  return e;
}

MixHmmrParams mixhmmr_m_step(const FunctionalDataset& data, const MixHmmrParams& current, const MixHmmrEStep& e,
                             double variance_floor) {
  const int n = data.size();
  const int K = current.K();
  const std::vector<Matrix> designs = curve_designs(data, current.degree, current.scale);
  MixHmmrParams next = current;
  const Vector mass = e.tau.colwise().sum().transpose();
  for (int k = 0; k < K; ++k) {
    if (mass[k] < 1.0 / (static_cast<double>(n) * n)) {
      throw DegenerateError("empty cluster " + std::to_string(k + 1) + " in MixHMMR M-step");
    }
  }
  next.alphas = mass / n;
  const int p = current.degree + 1;
  for (int k = 0; k < K; ++k) {
    HmmrCluster& c = next.clusters[static_cast<std::size_t>(k)];
    const int R = c.chain.states();
    Vector pi = Vector::Zero(R);
    Matrix trans = Matrix::Zero(R, R);
    for (int i = 0; i < n; ++i) {
      const double t = e.tau(i, k);
      const HmmCurveStats& st = e.stats[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      pi += t * st.gamma.row(0).transpose();
      trans += t * st.xi_sum;
    }
    c.chain.initial = pi / pi.sum();
    for (int l = 0; l < R; ++l) {
      const double row = trans.row(l).sum();
      if (row > 0.0) c.chain.transition.row(l) = trans.row(l) / row;
    }
    if (c.chain.left_right) {
      for (int l = 0; l < R; ++l) {
        for (int r = 0; r < R; ++r) {
          if (r < l || r > l + 1) c.chain.transition(l, r) = 0.0;
        }
      }
    }
    for (int r = 0; r < R; ++r) {
      Matrix G = Matrix::Zero(p, p);
      Vector b = Vector::Zero(p);
      double w_total = 0.0;
      for (int i = 0; i < n; ++i) {
        const double t = e.tau(i, k);
        if (t == 0.0) continue;
        const Matrix& X = designs[static_cast<std::size_t>(i)];
        const Vector w = t * e.stats[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].gamma.col(r);
        const Matrix Xw = X.array().colwise() * w.array();
        G.noalias() += X.transpose() * Xw;
        b.noalias() += Xw.transpose() * data.curve(i).y_vector();
        w_total += w.sum();
      }
      Vector beta = solve_normal_equations(G, b);
      double rss = 0.0;
      for (int i = 0; i < n; ++i) {
        const double t = e.tau(i, k);
        if (t == 0.0) continue;
        const Vector resid = data.curve(i).y_vector() - designs[static_cast<std::size_t>(i)] * beta;
        rss += t * e.stats[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].gamma.col(r).dot(
                       resid.cwiseProduct(resid));
      }
      c.betas[static_cast<std::size_t>(r)] = std::move(beta);
      c.sigma2s[r] = w_total > 0.0 ? std::max(rss / w_total, variance_floor) : c.sigma2s[r];
    }
  }
  return next;
}

MixHmmrParams mixhmmr_initial_params(const FunctionalDataset& data, int degree, const std::vector<int>& labels,
                                     const std::vector<int>& R, bool left_right, double variance_floor) {
  const int K = static_cast<int>(R.size());
  const int n = data.size();
  MixHmmrParams params;
  params.degree = degree;
  params.scale = {data.x_min(), data.x_max()};
  params.left_right = left_right;
  params.alphas = Vector::Zero(K);
  for (int l : labels) params.alphas[l] += 1.0 / n;
  const std::vector<Matrix> designs = curve_designs(data, degree, params.scale);
  const int p = degree + 1;
  for (int k = 0; k < K; ++k) {
    HmmrCluster c;
    const int Rk = R[static_cast<std::size_t>(k)];
    c.chain = MarkovChain::initial_chain(Rk, left_right);
    c.sigma2s.resize(Rk);
    for (int r = 0; r < Rk; ++r) {
      Matrix G = Matrix::Zero(p, p);
      Vector b = Vector::Zero(p);
      std::vector<std::pair<int, std::pair<int, int>>> blocks;
      for (int i = 0; i < n; ++i) {
        if (labels[static_cast<std::size_t>(i)] != k) continue;
        const int m = data.curve(i).size();
        const int a = static_cast<int>(static_cast<long long>(r) * m / Rk);
        const int e = static_cast<int>(static_cast<long long>(r + 1) * m / Rk);
        if (e <= a) continue;
        const Matrix X = designs[static_cast<std::size_t>(i)].middleRows(a, e - a);
        G.noalias() += X.transpose() * X;
        b.noalias() += X.transpose() * data.curve(i).y_vector().segment(a, e - a);
        blocks.push_back({i, {a, e}});
      }
      Vector beta = solve_normal_equations(G, b);
      double rss = 0.0;
      double count = 0.0;
      for (const auto& [i, range] : blocks) {
        const auto [a, e] = range;
        rss += (data.curve(i).y_vector().segment(a, e - a) -
                designs[static_cast<std::size_t>(i)].middleRows(a, e - a) * beta)
                   .squaredNorm();
        count += e - a;
      }
      c.betas.push_back(std::move(beta));
      c.sigma2s[r] = std::max(count > 0.0 ? rss / count : data.pooled_variance(), variance_floor);
    }
    params.clusters.push_back(std::move(c));
  }
  return params;
}

Matrix average_gamma(const MixHmmrEStep& e, int k) {
  const auto n = static_cast<int>(e.stats.size());
  Matrix g = Matrix::Zero(e.stats.front()[static_cast<std::size_t>(k)].gamma.rows(),
                          e.stats.front()[static_cast<std::size_t>(k)].gamma.cols());
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const Matrix& gi = e.stats[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].gamma;
    if (gi.rows() != g.rows()) throw DataError("average state probabilities need a common grid");
    g += e.tau(i, k) * gi;
    total += e.tau(i, k);
  }
  return total > 0.0 ? Matrix(g / total) : g;
}

std::vector<int> state_path(const Matrix& gamma_bar) {
  std::vector<int> path(static_cast<std::size_t>(gamma_bar.rows()));
  for (Eigen::Index j = 0; j < gamma_bar.rows(); ++j) path[static_cast<std::size_t>(j)] = argmax(gamma_bar.row(j).transpose());
  return path;
}

Vector hmmr_mean_curve(const HmmrCluster& cluster, const Matrix& design, const Matrix& gamma_bar) {
  Vector out = Vector::Zero(design.rows());
  for (int r = 0; r < cluster.chain.states(); ++r) {
    out += gamma_bar.col(r).cwiseProduct(design * cluster.betas[static_cast<std::size_t>(r)]);
  }
  return out;
}

MixHmmrFit run_em_mixhmmr_from(const FunctionalDataset& data, MixHmmrParams params, const MixHmmrOptions& opts) {
  const double floor = resolve_variance_floor(opts.fit, data.pooled_variance());
  MixHmmrFit fit;
  std::optional<MixHmmrEStep> e;
  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0;; ++iter) {
    e = mixhmmr_e_step(data, params, opts.fit.threads);
    fit.report.objective_trace.push_back(e->loglik);
    if (iter > 0 && std::abs(e->loglik - prev) < opts.fit.tol * std::abs(prev)) {
      fit.report.converged = true;
      break;
    }
    if (iter >= opts.fit.max_iter) break;
    prev = e->loglik;
    params = mixhmmr_m_step(data, params, *e, floor);
    fit.report.iterations = iter + 1;
  }
  fit.partition.tau = e->tau;
  if (data.common_grid()) {
    for (int k = 0; k < params.K(); ++k) fit.cluster_gamma.push_back(average_gamma(*e, k));
  }
  fit.report.final_K = params.K();
  fit.report.seed = opts.fit.seed;
  fit.report.criteria =
      compute_criteria(e->loglik, nu_mixhmmr(params.regimes(), params.degree + 1, params.left_right), e->tau);
  fit.params = std::move(params);
  return fit;
}

MixHmmrFit fit_em_mixhmmr(const FunctionalDataset& data, int degree, int K, const std::vector<int>& R,
                          const MixHmmrOptions& opts) {
  opts.fit.validate();
  if (degree < 0) throw ConfigError("degree must be >= 0");
  if (K < 1 || K > data.size()) throw ConfigError("mixhmmr: need 1 <= K <= n");
  const std::vector<int> Rk = expand_regimes(R, K);
  const double floor = resolve_variance_floor(opts.fit, data.pooled_variance());
  MixHmmrOptions inner = opts;
  inner.fit.threads = 1;
  std::vector<std::optional<MixHmmrFit>> runs(static_cast<std::size_t>(opts.fit.n_init));
  std::vector<std::string> errors(static_cast<std::size_t>(opts.fit.n_init));
  parallel_for(opts.fit.n_init, opts.fit.threads, [&](int r) {
    try {
      std::mt19937_64 rng(derive_seed(opts.fit.seed, static_cast<std::uint64_t>(r)));
      const std::vector<int> labels = initial_partition(data, K, opts.fit.init, rng);
      runs[static_cast<std::size_t>(r)] =
          run_em_mixhmmr_from(data, mixhmmr_initial_params(data, degree, labels, Rk, opts.left_right, floor), inner);
    } catch (const DegenerateError& e) {
      errors[static_cast<std::size_t>(r)] = e.what();
    }
  });
  std::optional<MixHmmrFit> best;
  for (int r = 0; r < opts.fit.n_init; ++r) {
    auto& run = runs[static_cast<std::size_t>(r)];
    if (!run) {
      spdlog::warn("mixhmmr restart {} failed: {}", r, errors[static_cast<std::size_t>(r)]);
      continue;
    }
    if (!best || run->report.objective_trace.back() > best->report.objective_trace.back()) best = std::move(run);
  }
  if (!best) throw DegenerateError("mixhmmr: every restart failed (" + errors.front() + ")");
  best->report.seed = opts.fit.seed;
  return std::move(*best);
}

}  // namespace curveclust
