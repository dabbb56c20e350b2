#pragma once

// Independent reference implementations used as test oracles. None of these
// call into the library's fitting code; they share only the basic data types.

#include "curveclust/dataset.hpp"
#include "curveclust/mixhmmr.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <vector>

namespace testsupport {

using curveclust::Matrix;
using curveclust::Vector;

inline Matrix raw_vandermonde(const std::vector<double>& xs, int degree) {
  Matrix X(static_cast<Eigen::Index>(xs.size()), degree + 1);
  for (std::size_t j = 0; j < xs.size(); ++j) {
    double v = 1.0;
    for (int d = 0; d <= degree; ++d) {
      X(static_cast<Eigen::Index>(j), d) = v;
      v *= xs[j];
    }
  }
  return X;
}

struct OlsResult {
  Vector beta;
  double rss = 0.0;
};

/// Weighted OLS through a QR factorization of the sqrt-weighted rows.
inline OlsResult weighted_ols_qr(const Matrix& X, const Vector& y, const Vector& w) {
  const Vector s = w.array().sqrt();
  const Matrix Xs = X.array().colwise() * s.array();
  const Vector ys = y.array() * s.array();
  OlsResult out;
  out.beta = Xs.colPivHouseholderQr().solve(ys);
  out.rss = (ys - Xs * out.beta).squaredNorm();
  return out;
}

inline double gauss_pdf(double y, double mean, double var) {
  return std::exp(-0.5 * (y - mean) * (y - mean) / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

/// Calls fn on every cut vector 0 = b_0 < ... < b_R = m with all segment
/// lengths >= min_len, in lexicographic order.
inline void for_each_segmentation(int m, int R, int min_len, const std::function<void(const std::vector<int>&)>& fn) {
  std::vector<int> b(static_cast<std::size_t>(R) + 1, 0);
  b.back() = m;
  std::function<void(int)> rec = [&](int r) {
    if (r == R) {
      if (b[static_cast<std::size_t>(R)] - b[static_cast<std::size_t>(R) - 1] >= min_len) fn(b);
      return;
    }
    for (int c = b[static_cast<std::size_t>(r) - 1] + min_len; c <= m - (R - r) * min_len; ++c) {
      b[static_cast<std::size_t>(r)] = c;
      rec(r + 1);
    }
  };
  if (R == 1) {
    if (m >= min_len) fn(b);
    return;
  }
  rec(1);
}

struct BruteSegmentation {
  std::vector<int> boundaries;
  double cost = std::numeric_limits<double>::infinity();
};

/// Exhaustive search of the weighted squared-error segmentation; earliest
/// lexicographic cut vector wins ties.
inline BruteSegmentation brute_force_segment(const Matrix& Y, const std::vector<double>& grid, const Vector& weights,
                                             int R, int degree, int min_len) {
  const int m = static_cast<int>(grid.size());
  const Eigen::Index n = Y.rows();
  std::map<std::pair<int, int>, double> cache;
  auto segment_cost = [&](int a, int b) {
    const auto key = std::make_pair(a, b);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    const int len = b - a;
    std::vector<double> xs(grid.begin() + a, grid.begin() + b);
    const Matrix Xs = raw_vandermonde(xs, degree);
    Matrix X(n * len, degree + 1);
    Vector y(n * len);
    Vector w(n * len);
    for (Eigen::Index i = 0; i < n; ++i) {
      X.middleRows(i * len, len) = Xs;
      y.segment(i * len, len) = Y.row(i).segment(a, len).transpose();
      w.segment(i * len, len).setConstant(weights[i]);
    }
    const double c = weighted_ols_qr(X, y, w).rss;
    cache[key] = c;
    return c;
  };
  BruteSegmentation best;
  for_each_segmentation(m, R, min_len, [&](const std::vector<int>& b) {
    double c = 0.0;
    for (int r = 0; r < R; ++r) c += segment_cost(b[static_cast<std::size_t>(r)], b[static_cast<std::size_t>(r) + 1]);
    if (best.boundaries.empty() || c < best.cost - 1e-9 * std::max(1.0, std::abs(best.cost))) {
      best.cost = c;
      best.boundaries = b;
    }
  });
  return best;
}

struct PathOracle {
  Matrix gamma;
  std::vector<Matrix> xi;
  double loglik = 0.0;
};

/// Sums over all R^m state paths.
inline PathOracle enumerate_paths(const Matrix& log_emissions, const curveclust::MarkovChain& chain) {
  const int m = static_cast<int>(log_emissions.rows());
  const int R = static_cast<int>(log_emissions.cols());
  std::vector<int> path(static_cast<std::size_t>(m), 0);
  std::vector<double> logp;
  std::vector<std::vector<int>> paths;
  while (true) {
    double lp = std::log(chain.initial[path[0]]) + log_emissions(0, path[0]);
    for (int j = 1; j < m; ++j) {
      lp += std::log(chain.transition(path[static_cast<std::size_t>(j) - 1], path[static_cast<std::size_t>(j)])) +
            log_emissions(j, path[static_cast<std::size_t>(j)]);
    }
    logp.push_back(lp);
    paths.push_back(path);
    int pos = m - 1;
    while (pos >= 0 && path[static_cast<std::size_t>(pos)] == R - 1) path[static_cast<std::size_t>(pos--)] = 0;
    if (pos < 0) break;
    ++path[static_cast<std::size_t>(pos)];
  }
  const double top = *std::max_element(logp.begin(), logp.end());
  double total = 0.0;
  for (double lp : logp) total += std::exp(lp - top);
  PathOracle out;
  out.loglik = top + std::log(total);
  out.gamma = Matrix::Zero(m, R);
  out.xi.assign(static_cast<std::size_t>(std::max(m - 1, 0)), Matrix::Zero(R, R));
  for (std::size_t p = 0; p < paths.size(); ++p) {
    const double w = std::exp(logp[p] - top) / total;
    for (int j = 0; j < m; ++j) out.gamma(j, paths[p][static_cast<std::size_t>(j)]) += w;
    for (int j = 0; j + 1 < m; ++j) {
      out.xi[static_cast<std::size_t>(j)](paths[p][static_cast<std::size_t>(j)], paths[p][static_cast<std::size_t>(j) + 1]) += w;
    }
  }
  return out;
}

struct DistortionRun {
  std::vector<int> labels;
  std::vector<std::vector<int>> boundaries;
  std::vector<double> trace;
};

/// K-means-like alternation for piecewise-constant prototypes: optimal
/// segmentation of each cluster by enumeration, then nearest-prototype
/// reassignment. Empty clusters receive the worst-fitting curve of the largest
/// cluster.
inline DistortionRun kmeans_like_segmentation(const Matrix& Y, int K, int R, const std::vector<int>& init,
                                              int max_iter = 100) {
  const int n = static_cast<int>(Y.rows());
  const int m = static_cast<int>(Y.cols());
  DistortionRun run;
  std::vector<int> labels = init;
  for (int iter = 0; iter < max_iter; ++iter) {
    std::vector<Matrix> protos(static_cast<std::size_t>(K));
    run.boundaries.assign(static_cast<std::size_t>(K), {});
    for (int k = 0; k < K; ++k) {
      std::vector<int> members;
      for (int i = 0; i < n; ++i) {
        if (labels[static_cast<std::size_t>(i)] == k) members.push_back(i);
      }
      double best = std::numeric_limits<double>::infinity();
      std::vector<int> best_b;
      for_each_segmentation(m, R, 1, [&](const std::vector<int>& b) {
        double c = 0.0;
        for (int r = 0; r < R; ++r) {
          double sum = 0.0;
          int count = 0;
          for (int i : members) {
            for (int j = b[static_cast<std::size_t>(r)]; j < b[static_cast<std::size_t>(r) + 1]; ++j) {
              sum += Y(i, j);
              ++count;
            }
          }
          const double mu = sum / count;
          for (int i : members) {
            for (int j = b[static_cast<std::size_t>(r)]; j < b[static_cast<std::size_t>(r) + 1]; ++j) {
              c += (Y(i, j) - mu) * (Y(i, j) - mu);
            }
          }
        }
        if (best_b.empty() || c < best - 1e-9 * std::max(1.0, std::abs(best))) {
          best = c;
          best_b = b;
        }
      });
      run.boundaries[static_cast<std::size_t>(k)] = best_b;
      Matrix proto(1, m);
      for (int r = 0; r < R; ++r) {
        double sum = 0.0;
        int count = 0;
        for (int i : members) {
          for (int j = best_b[static_cast<std::size_t>(r)]; j < best_b[static_cast<std::size_t>(r) + 1]; ++j) {
            sum += Y(i, j);
            ++count;
          }
        }
        for (int j = best_b[static_cast<std::size_t>(r)]; j < best_b[static_cast<std::size_t>(r) + 1]; ++j) {
          proto(0, j) = sum / count;
        }
      }
      protos[static_cast<std::size_t>(k)] = proto;
    }
    Matrix d(n, K);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < K; ++k) d(i, k) = (Y.row(i) - protos[static_cast<std::size_t>(k)]).squaredNorm();
    }
    std::vector<int> next(static_cast<std::size_t>(n));
    std::vector<int> counts(static_cast<std::size_t>(K), 0);
    for (int i = 0; i < n; ++i) {
      int best = 0;
      for (int k = 1; k < K; ++k) {
        if (d(i, k) < d(i, best)) best = k;
      }
      next[static_cast<std::size_t>(i)] = best;
      ++counts[static_cast<std::size_t>(best)];
    }
    for (int k = 0; k < K; ++k) {
      if (counts[static_cast<std::size_t>(k)] > 0) continue;
      int big = 0;
      for (int h = 1; h < K; ++h) {
        if (counts[static_cast<std::size_t>(h)] > counts[static_cast<std::size_t>(big)]) big = h;
      }
      int worst = -1;
      for (int i = 0; i < n; ++i) {
        if (next[static_cast<std::size_t>(i)] != big) continue;
        if (worst < 0 || d(i, big) > d(worst, big)) worst = i;
      }
      next[static_cast<std::size_t>(worst)] = k;
      --counts[static_cast<std::size_t>(big)];
      ++counts[static_cast<std::size_t>(k)];
    }
    double J = 0.0;
    for (int i = 0; i < n; ++i) J += d(i, next[static_cast<std::size_t>(i)]);
    run.trace.push_back(J);
    const bool same = next == labels;
    labels = next;
    if (same) break;
  }
  run.labels = labels;
  return run;
}

/// Rand-type pair counting over all curve pairs.
inline double pair_counting_ari(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size();
  double both = 0.0;
  double in_a = 0.0;
  double in_b = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool sa = a[i] == a[j];
      const bool sb = b[i] == b[j];
      both += sa && sb ? 1.0 : 0.0;
      in_a += sa ? 1.0 : 0.0;
      in_b += sb ? 1.0 : 0.0;
      total += 1.0;
    }
  }
  const double expected = in_a * in_b / total;
  const double maximum = 0.5 * (in_a + in_b);
  return (both - expected) / (maximum - expected);
}

/// Curves on x = 0..m-1 grouped into clusters of constant level.
inline curveclust::FunctionalDataset constant_clusters(const std::vector<double>& levels, int per_cluster, int m,
                                                       double noise_sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<curveclust::Curve> curves;
  std::vector<double> xs(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) xs[static_cast<std::size_t>(j)] = j;
  int id = 0;
  for (std::size_t k = 0; k < levels.size(); ++k) {
    for (int c = 0; c < per_cluster; ++c) {
      std::vector<double> ys(static_cast<std::size_t>(m));
      for (double& y : ys) y = levels[k] + noise_sd * z(rng);
      curves.emplace_back("c" + std::to_string(++id), xs, ys, static_cast<int>(k) + 1);
    }
  }
  return curveclust::FunctionalDataset(std::move(curves));
}

/// Random non-empty partition of n items into K clusters.
inline std::vector<int> random_labels(int n, int K, std::mt19937_64& rng) {
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i < K ? i : static_cast<int>(rng() % K);
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

}  // namespace testsupport
