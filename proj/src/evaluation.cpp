#include "curveclust/evaluation.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>

namespace curveclust {

double count_free_parameters(const MixRegParams& params) { return nu_mixreg(params.K(), params.basis.columns()); }

double count_free_parameters(const PwrmParams& params) { return pwrm_free_parameters(params); }

double count_free_parameters(const MixHmmrParams& params) {
  return nu_mixhmmr(params.regimes(), params.degree + 1, params.left_right);
}

double count_free_parameters(const MixRhlpParams& params) {
  return nu_mixrhlp(params.regimes(), params.components.front().degree + 1);
}

std::vector<int> hungarian_assignment(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw std::invalid_argument("hungarian_assignment: matrix must be square");
  // Potentials formulation, 1-based internally.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(n) + 1, 0);
  std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
    std::vector<bool> used(static_cast<std::size_t>(n) + 1, false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assign(static_cast<std::size_t>(n));
  for (int j = 1; j <= n; ++j) assign[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return assign;
}

namespace {

std::vector<int> compact(const std::vector<int>& labels, int& count) {
  std::map<int, int> ids;
  for (int l : labels) ids.emplace(l, 0);
  int next = 0;
  for (auto& [label, id] : ids) id = next++;
  count = next;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = ids[labels[i]];
  return out;
}

}  // namespace

double misclassification_rate(const std::vector<int>& truth, const std::vector<int>& predicted) {
  if (truth.size() != predicted.size()) throw DataError("label vectors differ in length");
  if (truth.empty()) throw DataError("no labels");
  int kt = 0;
  int kp = 0;
  const std::vector<int> t = compact(truth, kt);
  const std::vector<int> p = compact(predicted, kp);
  const int S = std::max(kt, kp);
  Matrix confusion = Matrix::Zero(S, S);
  for (std::size_t i = 0; i < t.size(); ++i) confusion(p[i], t[i]) += 1.0;
  double matched = 0.0;
  if (S <= 8) {
    std::vector<int> perm(static_cast<std::size_t>(S));
    std::iota(perm.begin(), perm.end(), 0);
    do {
      double m = 0.0;
      for (int a = 0; a < S; ++a) m += confusion(a, perm[static_cast<std::size_t>(a)]);
      matched = std::max(matched, m);
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    const std::vector<int> assign = hungarian_assignment(confusion.maxCoeff() - confusion.array());
    for (int a = 0; a < S; ++a) matched += confusion(a, assign[static_cast<std::size_t>(a)]);
  }
  return 1.0 - matched / static_cast<double>(truth.size());
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw DataError("partitions differ in length");
  int ka = 0;
  int kb = 0;
  const std::vector<int> x = compact(a, ka);
  const std::vector<int> y = compact(b, kb);
  Matrix table = Matrix::Zero(ka, kb);
  for (std::size_t i = 0; i < x.size(); ++i) table(x[i], y[i]) += 1.0;
  auto pairs = [](double v) { return v * (v - 1.0) / 2.0; };
  double index = 0.0;
  for (Eigen::Index i = 0; i < table.rows(); ++i) {
    for (Eigen::Index j = 0; j < table.cols(); ++j) index += pairs(table(i, j));
  }
  double sa = 0.0;
  double sb = 0.0;
  for (Eigen::Index i = 0; i < table.rows(); ++i) sa += pairs(table.row(i).sum());
  for (Eigen::Index j = 0; j < table.cols(); ++j) sb += pairs(table.col(j).sum());
  const double total = pairs(static_cast<double>(a.size()));
  const double expected = total > 0.0 ? sa * sb / total : 0.0;
  const double maximum = 0.5 * (sa + sb);
  if (maximum == expected) {
    // Both partitions trivial (all singletons or one block).
    return misclassification_rate(a, b) == 0.0 ? 1.0 : 0.0;
  }
  return (index - expected) / (maximum - expected);
}

double intra_cluster_inertia(const Matrix& Y, const std::vector<int>& labels, const Matrix& means) {
  if (static_cast<Eigen::Index>(labels.size()) != Y.rows()) throw DataError("labels do not match the curves");
  if (means.cols() != Y.cols()) throw DataError("mean curves are not on the data grid");
  double total = 0.0;
  for (Eigen::Index i = 0; i < Y.rows(); ++i) {
    const int k = labels[static_cast<std::size_t>(i)];
    if (k < 0 || k >= means.rows()) throw DataError("label without a mean curve");
    total += (Y.row(i) - means.row(k)).squaredNorm();
  }
  return total;
}

}  // namespace curveclust
