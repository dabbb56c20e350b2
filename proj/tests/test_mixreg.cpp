#include "curveclust/evaluation.hpp"
#include "curveclust/mixreg.hpp"
#include "support.hpp"

#include <doctest.h>

#include <numbers>

using namespace curveclust;
using testsupport::gauss_pdf;

namespace {

FunctionalDataset random_dataset(std::mt19937_64& rng, int n, int m) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<Curve> curves;
  std::vector<double> xs;
  for (int j = 0; j < m; ++j) xs.push_back(j / double(m - 1));
  for (int i = 0; i < n; ++i) {
    const double level = (i % 3) * 2.0;
    std::vector<double> ys;
    for (double x : xs) ys.push_back(level + std::sin(3.0 * x * (1 + i % 3)) + 0.5 * z(rng));
    curves.emplace_back("c" + std::to_string(i), xs, ys);
  }
  return FunctionalDataset(std::move(curves));
}

}  // namespace

TEST_SUITE("mixreg") {
  TEST_CASE("component log-likelihood") {
    Matrix X1(1, 1);
    X1 << 1.0;
    Vector y1(1);
    y1 << 0.0;
    Vector b1(1);
    b1 << 0.0;
    CHECK(component_loglik(y1, X1, b1, 1.0) == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)).epsilon(1e-15));
    Matrix X3 = Matrix::Ones(3, 1);
    Vector y3 = Vector::Constant(3, 2.0);
    Vector b3(1);
    b3 << 2.0;
    CHECK(component_loglik(y3, X3, b3, 1.0) == doctest::Approx(-1.5 * std::log(2 * std::numbers::pi)).epsilon(1e-15));
    CHECK_THROWS(component_loglik(y3, Matrix::Ones(2, 1), b3, 1.0));

    std::mt19937_64 rng(1);
    std::normal_distribution<double> z(0.0, 1.0);
    for (int rep = 0; rep < 20; ++rep) {
      Matrix X(5, 3);
      Vector y(5);
      Vector b(3);
      for (int j = 0; j < 5; ++j) {
        y[j] = z(rng);
        for (int c = 0; c < 3; ++c) X(j, c) = z(rng);
      }
      for (int c = 0; c < 3; ++c) b[c] = 0.3 * z(rng);
      const double s2 = 0.5 + std::abs(z(rng));
      double prod = 1.0;
      for (int j = 0; j < 5; ++j) prod *= gauss_pdf(y[j], X.row(j).dot(b), s2);
      CHECK(std::abs(component_loglik(y, X, b, s2) - std::log(prod)) < 1e-12);
    }
  }

  TEST_CASE("e-step symmetry and hand toy") {
    std::mt19937_64 rng(2);
    const FunctionalDataset d = random_dataset(rng, 6, 8);
    const RegressionData rd = make_regression_data(d, BasisSpec::polynomial(1));
    MixRegParams p;
    p.basis = rd.basis;
    p.betas = {Vector::Zero(2), Vector::Zero(2)};
    p.sigma2s = Vector::Constant(2, 2.0);
    p.alphas = Vector::Constant(2, 0.5);
    auto [t1, l1] = e_step(rd, p);
    CHECK((t1.tau.array() - 0.5).abs().maxCoeff() < 1e-15);
    p.alphas << 0.9, 0.1;
    auto [t2, l2] = e_step(rd, p);
    CHECK((t2.tau.col(0).array() - 0.9).abs().maxCoeff() < 1e-14);

    // Two curves, two components, brute-force densities.
    const FunctionalDataset toy({Curve("a", {0, 1, 2}, {0.1, 0.9, 2.2}), Curve("b", {0, 1, 2}, {1.0, 0.8, 1.1})});
    const RegressionData rt = make_regression_data(toy, BasisSpec::polynomial(1));
    MixRegParams q;
    q.basis = rt.basis;
    Vector ba(2), bb(2);
    ba << 0.0, 1.0;
    bb << 1.0, 0.0;
    q.betas = {ba, bb};
    q.sigma2s = Vector(2);
    q.sigma2s << 0.3, 0.5;
    q.alphas = Vector(2);
    q.alphas << 0.4, 0.6;
    auto [tt, ll] = e_step(rt, q);
    double loglik = 0.0;
    for (int i = 0; i < 2; ++i) {
      double f[2];
      for (int k = 0; k < 2; ++k) {
        f[k] = q.alphas[k];
        for (int j = 0; j < 3; ++j) {
          const double x = j;
          const Vector& b = q.betas[static_cast<std::size_t>(k)];
          f[k] *= gauss_pdf(toy.curve(i).ys()[static_cast<std::size_t>(j)], b[0] + b[1] * x, q.sigma2s[k]);
        }
      }
      for (int k = 0; k < 2; ++k) CHECK(std::abs(tt.tau(i, k) - f[k] / (f[0] + f[1])) < 1e-12);
      loglik += std::log(f[0] + f[1]);
    }
    CHECK(std::abs(ll - loglik) < 1e-12);
  }

  TEST_CASE("m-step against explicitly assembled weighted problems") {
    std::mt19937_64 rng(3);
    const FunctionalDataset d = random_dataset(rng, 3, 7);
    const RegressionData rd = make_regression_data(d, BasisSpec::polynomial(2));
    FitOptions opts;
    SUBCASE("K=1 equals pooled OLS") {
      const MixRegParams p = m_step(rd, Matrix::Ones(3, 1), opts);
      Matrix X(21, 3);
      Vector y(21);
      for (int i = 0; i < 3; ++i) {
        X.middleRows(i * 7, 7) = rd.designs[static_cast<std::size_t>(i)];
        y.segment(i * 7, 7) = rd.ys[static_cast<std::size_t>(i)];
      }
      const auto ols = testsupport::weighted_ols_qr(X, y, Vector::Ones(21));
      CHECK((p.betas[0] - ols.beta).norm() < 1e-10);
      CHECK(std::abs(p.sigma2s[0] - ols.rss / 21.0) < 1e-10);
      CHECK(p.alphas[0] == 1.0);
    }
    SUBCASE("hard tau gives per-subset OLS") {
      Matrix tau(3, 2);
      tau << 1, 0, 0, 1, 1, 0;
      const MixRegParams p = m_step(rd, tau, opts);
      Matrix X(14, 3);
      Vector y(14);
      X.topRows(7) = rd.designs[0];
      X.bottomRows(7) = rd.designs[2];
      y.head(7) = rd.ys[0];
      y.tail(7) = rd.ys[2];
      CHECK((p.betas[0] - testsupport::weighted_ols_qr(X, y, Vector::Ones(14)).beta).norm() < 1e-10);
      CHECK((p.betas[1] - testsupport::weighted_ols_qr(rd.designs[1], rd.ys[1], Vector::Ones(7)).beta).norm() < 1e-10);
      CHECK(std::abs(p.alphas[0] - 2.0 / 3.0) < 1e-15);
    }
    SUBCASE("random tau") {
      std::uniform_real_distribution<double> u(0.05, 1.0);
      for (int rep = 0; rep < 10; ++rep) {
        Matrix tau(3, 2);
        for (int i = 0; i < 3; ++i) {
          tau(i, 0) = u(rng);
          tau(i, 1) = 1.0 - tau(i, 0);
        }
        const MixRegParams p = m_step(rd, tau, opts);
        for (int k = 0; k < 2; ++k) {
          Matrix X(21, 3);
          Vector y(21);
          Vector w(21);
          for (int i = 0; i < 3; ++i) {
            X.middleRows(i * 7, 7) = rd.designs[static_cast<std::size_t>(i)];
            y.segment(i * 7, 7) = rd.ys[static_cast<std::size_t>(i)];
            w.segment(i * 7, 7).setConstant(tau(i, k));
          }
          const auto ols = testsupport::weighted_ols_qr(X, y, w);
          CHECK((p.betas[static_cast<std::size_t>(k)] - ols.beta).norm() < 1e-10);
          CHECK(std::abs(p.sigma2s[k] - ols.rss / (7.0 * tau.col(k).sum())) < 1e-10);
          CHECK(std::abs(p.alphas[k] - tau.col(k).mean()) < 1e-15);
        }
      }
    }
    SUBCASE("empty component") {
      Matrix tau(3, 2);
      tau << 1, 0, 1, 0, 1, 0;
      CHECK_THROWS_AS(m_step(rd, tau, opts), DegenerateError);
    }
  }

  TEST_CASE("fit_em with K=1 is pooled OLS") {
    std::mt19937_64 rng(4);
    const FunctionalDataset d = random_dataset(rng, 10, 12);
    const MixRegFit fit = fit_em(d, BasisSpec::polynomial(2), 1, FitOptions{});
    const RegressionData rd = make_regression_data(d, BasisSpec::polynomial(2));
    Matrix X(120, 3);
    Vector y(120);
    for (int i = 0; i < 10; ++i) {
      X.middleRows(i * 12, 12) = rd.designs[static_cast<std::size_t>(i)];
      y.segment(i * 12, 12) = rd.ys[static_cast<std::size_t>(i)];
    }
    const auto ols = testsupport::weighted_ols_qr(X, y, Vector::Ones(120));
    const double s2 = ols.rss / 120.0;
    const double expected = -0.5 * 120.0 * (std::log(2 * std::numbers::pi * s2) + 1.0);
    CHECK(std::abs(fit.report.criteria.loglik - expected) < 1e-9 * std::abs(expected));
  }

  TEST_CASE("separable constant clusters are recovered") {
    const FunctionalDataset d = testsupport::constant_clusters({0.0, 10.0}, 5, 6, 0.0, 1);
    FitOptions opts;
    opts.n_init = 3;
    const MixRegFit fit = fit_em(d, BasisSpec::polynomial(0), 2, opts);
    CHECK(misclassification_rate(d.labels(), fit.partition.map_labels()) == 0.0);
  }

  TEST_CASE("EM log-likelihood is monotone") {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 100; ++rep) {
      const FunctionalDataset d = random_dataset(rng, 12 + rep % 10, 10);
      FitOptions opts;
      opts.seed = static_cast<std::uint64_t>(rep);
      opts.max_iter = 200;
      opts.n_init = 3;
      const BasisSpec basis = rep % 3 == 0 ? BasisSpec::polynomial(2)
                              : rep % 3 == 1 ? BasisSpec::spline(2, 2)
                                             : BasisSpec::bspline(3, 1);
      const MixRegFit fit = fit_em(d, basis, 2 + rep % 2, opts);
      const auto& tr = fit.report.objective_trace;
      for (std::size_t t = 1; t < tr.size(); ++t) CHECK(tr[t] >= tr[t - 1] - 1e-6 * std::abs(tr[t - 1]));
      for (Eigen::Index i = 0; i < fit.partition.tau.rows(); ++i) {
        CHECK(std::abs(fit.partition.tau.row(i).sum() - 1.0) < 1e-9);
      }
    }
  }

  TEST_CASE("determinism and thread invariance") {
    std::mt19937_64 rng(6);
    const FunctionalDataset d = random_dataset(rng, 40, 15);
    FitOptions opts;
    opts.n_init = 4;
    opts.seed = 9;
    const MixRegFit a = fit_em(d, BasisSpec::bspline(3, 2), 3, opts);
    const MixRegFit b = fit_em(d, BasisSpec::bspline(3, 2), 3, opts);
    CHECK(a.report.objective_trace == b.report.objective_trace);
    opts.threads = 4;
    const MixRegFit c = fit_em(d, BasisSpec::bspline(3, 2), 3, opts);
    CHECK(std::abs(a.report.criteria.loglik - c.report.criteria.loglik) <= 1e-8 * std::abs(a.report.criteria.loglik));
    const RegressionData rd = make_regression_data(d, BasisSpec::bspline(3, 2));
    const Matrix l1 = weighted_log_densities(rd, a.params, 1);
    const Matrix l4 = weighted_log_densities(rd, a.params, 4);
    CHECK(l1 == l4);
  }

  TEST_CASE("MAP labels are invariant to increasing transforms of a row") {
    Matrix tau(3, 3);
    tau << 0.2, 0.5, 0.3, 0.6, 0.2, 0.2, 0.3, 0.3, 0.4;
    SoftPartition a{tau};
    SoftPartition b{tau.array().pow(3.0).matrix() * 7.0};
    CHECK(a.map_labels() == b.map_labels());
    SoftPartition tie{Matrix::Constant(1, 3, 1.0 / 3.0)};
    CHECK(tie.map_labels() == std::vector<int>{0});
  }

  TEST_CASE("penalized objective") {
    Vector uniform = Vector::Constant(4, 0.25);
    CHECK(penalized_objective(-10.0, uniform, 20, 0.0) == -10.0);
    CHECK(penalized_objective(-10.0, uniform, 20, 0.5) == doctest::Approx(-10.0 - 0.5 * 20 * std::log(4.0)));
    CHECK(penalized_objective(-10.0, Vector::Ones(1), 20, 3.0) == -10.0);
  }

  TEST_CASE("robust proportion update") {
    Vector mean_tau(3);
    mean_tau << 0.5, 0.3, 0.2;
    Vector alphas(3);
    alphas << 0.4, 0.4, 0.2;
    CHECK((robust_alpha_update(mean_tau, alphas, 0.0) - mean_tau).norm() < 1e-15);
    for (double lambda : {0.1, 1.0, 10.0, 1e3}) {
      const Vector a = robust_alpha_update(mean_tau, alphas, lambda);
      CHECK((a.array() >= 0.0).all());
      CHECK((a.array() <= 1.0).all());
      CHECK(std::abs(a.sum() - 1.0) < 1e-12);
    }
  }

  TEST_CASE("robust EM without penalty or discarding follows EM") {
    std::mt19937_64 rng(7);
    const FunctionalDataset d = random_dataset(rng, 15, 10);
    const RegressionData rd = make_regression_data(d, BasisSpec::polynomial(2));
    std::mt19937_64 init_rng(1);
    const Matrix tau0 = hard_tau(initial_partition(d, 3, InitMethod::random_partition, init_rng), 3);
    FitOptions opts;
    opts.max_iter = 50;
    const MixRegFit em = run_em_from(rd, tau0, opts);
    RobustOptions ro;
    ro.fit = opts;
    ro.lambda = 0.0;
    ro.discard = false;
    const MixRegFit rob = run_robust_from(rd, m_step(rd, tau0, opts), ro);
    REQUIRE(em.report.objective_trace.size() == rob.report.objective_trace.size());
    for (std::size_t t = 0; t < em.report.objective_trace.size(); ++t) {
      CHECK(std::abs(em.report.objective_trace[t] - rob.report.objective_trace[t]) <=
            1e-10 * std::abs(em.report.objective_trace[t]));
    }
  }

  TEST_CASE("robust EM shrinks K and keeps the simplex") {
    const FunctionalDataset d = testsupport::constant_clusters({0.0, 6.0, 12.0}, 15, 10, 1.0, 3);
    RobustOptions ro;
    const MixRegFit fit = fit_robust_em(d, BasisSpec::polynomial(0), ro);
    CHECK(fit.report.k_trace.front() == 45);
    CHECK(fit.report.final_K == 3);
    CHECK(std::abs(fit.params.alphas.sum() - 1.0) < 1e-12);
    CHECK(misclassification_rate(d.labels(), fit.partition.map_labels()) == 0.0);
    CHECK(std::is_sorted(fit.report.k_trace.rbegin(), fit.report.k_trace.rend()));
  }

  TEST_CASE("fit_em preconditions") {
    const FunctionalDataset d = testsupport::constant_clusters({0.0}, 2, 4, 1.0, 1);
    CHECK_THROWS_AS(fit_em(d, BasisSpec::polynomial(0), 3, FitOptions{}), ConfigError);
    FitOptions bad;
    bad.tol = 0.0;
    CHECK_THROWS_AS(fit_em(d, BasisSpec::polynomial(0), 1, bad), ConfigError);
  }
}
