#include "curveclust/discriminant.hpp"

#include "curveclust/mixreg.hpp"
#include "curveclust/pwrm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace curveclust {

std::string to_string(FldaFamily family) {
  switch (family) {
    case FldaFamily::polynomial: return "polynomial";
    case FldaFamily::spline: return "spline";
    case FldaFamily::bspline: return "bspline";
    case FldaFamily::rhlp: return "rhlp";
  }
  return "polynomial";
}

FldaFamily parse_flda_family(const std::string& text) {
  if (text == "poly" || text == "polynomial") return FldaFamily::polynomial;
  if (text == "spline") return FldaFamily::spline;
  if (text == "bspline") return FldaFamily::bspline;
  if (text == "rhlp") return FldaFamily::rhlp;
  throw ConfigError("unknown discriminant family '" + text + "'");
}

namespace {

void check_priors(const Vector& priors, int G) {
  if (G < 2) throw ConfigError("discriminant model needs at least 2 classes");
  if (priors.size() != G) throw ConfigError("one prior per class required");
  if ((priors.array() < 0.0).any() || std::abs(priors.sum() - 1.0) > 1e-9) {
    throw ConfigError("class priors not on the simplex");
  }
}

struct ClassIndex {
  std::vector<int> labels;
  std::vector<std::vector<int>> members;
};

ClassIndex index_classes(const FunctionalDataset& data, bool allow_singletons) {
  if (!data.labeled()) throw DataError("training curves must all be labeled");
  std::map<int, std::vector<int>> groups;
  const std::vector<int> labels = data.labels();
  for (int i = 0; i < data.size(); ++i) groups[labels[static_cast<std::size_t>(i)]].push_back(i);
  ClassIndex out;
  for (auto& [label, members] : groups) {
    if (members.size() < 2 && !allow_singletons) {
      throw DataError("class " + std::to_string(label) + " has a single curve");
    }
    out.labels.push_back(label);
    out.members.push_back(std::move(members));
  }
  if (out.labels.size() < 2) throw DataError("training data contains fewer than 2 classes");
  return out;
}

Vector class_priors(const ClassIndex& idx, int n) {
  Vector priors(static_cast<Eigen::Index>(idx.labels.size()));
  for (std::size_t g = 0; g < idx.labels.size(); ++g) {
    priors[static_cast<Eigen::Index>(g)] = static_cast<double>(idx.members[g].size()) / n;
  }
  return priors;
}

RegressionClassModel fit_regression_class(const FunctionalDataset& group, const BasisSpec& resolved,
                                          const FitOptions& opts) {
  const RegressionData rd = make_regression_data(group, resolved);
  Matrix G = Matrix::Zero(rd.p(), rd.p());
  Vector b = Vector::Zero(rd.p());
  for (int i = 0; i < rd.n(); ++i) {
    G += rd.grams[static_cast<std::size_t>(i)];
    b += rd.xtys[static_cast<std::size_t>(i)];
  }
  RegressionClassModel model;
  model.basis = rd.basis;
  model.beta = solve_normal_equations(G, b, opts.ridge);
  double rss = 0.0;
  double count = 0.0;
  for (int i = 0; i < rd.n(); ++i) {
    rss += (rd.ys[static_cast<std::size_t>(i)] - rd.designs[static_cast<std::size_t>(i)] * model.beta).squaredNorm();
    count += static_cast<double>(rd.ys[static_cast<std::size_t>(i)].size());
  }
  model.sigma2 = std::max(rss / count, resolve_variance_floor(opts, group.pooled_variance()));
  return model;
}

FitOptions class_options(const FitOptions& opts, int label) {
  FitOptions inner = opts;
  inner.threads = 1;
  inner.seed = derive_seed(opts.seed, static_cast<std::uint64_t>(static_cast<std::int64_t>(label)));
  return inner;
}

}  // namespace

void FldaModel::validate() const {
  check_priors(priors, G());
  const std::size_t expected = static_cast<std::size_t>(G());
  if (family == FldaFamily::rhlp ? rhlp.size() != expected : regression.size() != expected) {
    throw ConfigError("flda: one class model per class required");
  }
}

void FmdaModel::validate() const {
  check_priors(priors, G());
  if (classes.size() != static_cast<std::size_t>(G())) throw ConfigError("fmda: one class model per class required");
}

FldaModel train_flda(const FunctionalDataset& data, const FldaConfig& config) {
  config.fit.validate();
  config.basis.validate();
  const ClassIndex idx = index_classes(data, config.allow_singleton_classes);
  const int G = static_cast<int>(idx.labels.size());
  FldaModel model;
  model.family = config.family;
  model.class_labels = idx.labels;
  model.priors = class_priors(idx, data.size());
  if (config.family == FldaFamily::rhlp) {
    if (config.R < 1) throw ConfigError("R must be >= 1");
    model.rhlp.resize(static_cast<std::size_t>(G));
    parallel_for(G, config.fit.threads, [&](int g) {
      const FunctionalDataset group = data.subset(idx.members[static_cast<std::size_t>(g)]);
      model.rhlp[static_cast<std::size_t>(g)] =
          fit_rhlp(group, config.basis.degree, config.R, class_options(config.fit, idx.labels[static_cast<std::size_t>(g)]))
              .params;
    });
    return model;
  }
  BasisSpec spec = config.basis;
  switch (config.family) {
    case FldaFamily::polynomial: spec.kind = BasisKind::polynomial; break;
    case FldaFamily::spline: spec.kind = BasisKind::spline; break;
    case FldaFamily::bspline: spec.kind = BasisKind::bspline; break;
    case FldaFamily::rhlp: break;
  }
  const BasisSpec resolved = resolve_basis(spec, {data.x_min(), data.x_max()});
  model.regression.resize(static_cast<std::size_t>(G));
  parallel_for(G, config.fit.threads, [&](int g) {
    const FunctionalDataset group = data.subset(idx.members[static_cast<std::size_t>(g)]);
    model.regression[static_cast<std::size_t>(g)] = fit_regression_class(group, resolved, config.fit);
  });
  return model;
}

FmdaModel train_fmda(const FunctionalDataset& data, const FmdaConfig& config) {
  config.fit.validate();
  if (config.degree < 0) throw ConfigError("degree must be >= 0");
  const ClassIndex idx = index_classes(data, config.allow_singleton_classes);
  const int G = static_cast<int>(idx.labels.size());
  auto per_class = [G](const auto& values, const char* what) {
    if (values.size() != 1 && values.size() != static_cast<std::size_t>(G)) {
      throw ConfigError(std::string("fmda: ") + what + " needs one entry or one per class");
    }
  };
  per_class(config.K, "K");
  per_class(config.R, "R");
  FmdaModel model;
  model.class_labels = idx.labels;
  model.priors = class_priors(idx, data.size());
  model.classes.resize(static_cast<std::size_t>(G));
  parallel_for(G, config.fit.threads, [&](int g) {
    const auto gg = static_cast<std::size_t>(g);
    const int K = config.K.size() == 1 ? config.K.front() : config.K[gg];
    const std::vector<int>& R = config.R.size() == 1 ? config.R.front() : config.R[gg];
    const FunctionalDataset group = data.subset(idx.members[gg]);
    model.classes[gg] =
        fit_em_mixrhlp(group, config.degree, K, R, class_options(config.fit, idx.labels[gg])).params;
  });
  return model;
}

Matrix class_log_densities(const FldaModel& model, const FunctionalDataset& data) {
  model.validate();
  const int n = data.size();
  Matrix out(n, model.G());
  for (int g = 0; g < model.G(); ++g) {
    const auto gg = static_cast<std::size_t>(g);
    for (int i = 0; i < n; ++i) {
      const Curve& c = data.curve(i);
      if (model.family == FldaFamily::rhlp) {
        out(i, g) = rhlp_curve_loglik(c, model.rhlp[gg]);
      } else {
        const RegressionClassModel& m = model.regression[gg];
        out(i, g) = component_loglik(c.y_vector(), build_design(c.xs(), m.basis), m.beta, m.sigma2);
      }
    }
  }
  return out;
}

Matrix class_log_densities(const FmdaModel& model, const FunctionalDataset& data) {
  model.validate();
  const int n = data.size();
  Matrix out(n, model.G());
  for (int g = 0; g < model.G(); ++g) {
    const MixRhlpParams& mix = model.classes[static_cast<std::size_t>(g)];
    Vector terms(mix.K());
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < mix.K(); ++k) {
        terms[k] = std::log(mix.alphas[k]) + rhlp_curve_loglik(data.curve(i), mix.components[static_cast<std::size_t>(k)]);
      }
      out(i, g) = log_sum_exp(terms);
    }
  }
  return out;
}

ClassPrediction bayes_allocate(const Matrix& log_densities, const Vector& priors, const std::vector<int>& class_labels) {
  ClassPrediction out;
  out.posteriors = log_densities;
  for (Eigen::Index g = 0; g < priors.size(); ++g) out.posteriors.col(g).array() += std::log(priors[g]);
  for (Eigen::Index i = 0; i < out.posteriors.rows(); ++i) {
    Vector row = out.posteriors.row(i).transpose();
    if (!std::isfinite(normalize_log_row(row))) {
      throw DegenerateError("all class densities underflow for curve " + std::to_string(i + 1));
    }
    out.posteriors.row(i) = row.transpose();
    out.labels.push_back(class_labels[static_cast<std::size_t>(argmax(row))]);
  }
  return out;
}

ClassPrediction predict(const FldaModel& model, const FunctionalDataset& data) {
  return bayes_allocate(class_log_densities(model, data), model.priors, model.class_labels);
}

ClassPrediction predict(const FmdaModel& model, const FunctionalDataset& data) {
  return bayes_allocate(class_log_densities(model, data), model.priors, model.class_labels);
}

std::vector<int> stratified_folds(const std::vector<int>& labels, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("need at least 2 folds");
  if (static_cast<int>(labels.size()) < k) throw ConfigError("more folds than curves");
  std::map<int, std::vector<int>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(static_cast<int>(i));
  std::mt19937_64 rng(seed);
  std::vector<int> folds(labels.size(), 0);
  int next = 0;
  for (auto& [label, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    for (int i : members) {
      folds[static_cast<std::size_t>(i)] = next;
      next = (next + 1) % k;
    }
  }
  return folds;
}

double cross_validated_error(
    const FunctionalDataset& data, int k, std::uint64_t seed,
    const std::function<std::vector<int>(const FunctionalDataset& train, const FunctionalDataset& test)>& fit_predict) {
  const std::vector<int> truth = data.labels();
  const std::vector<int> folds = stratified_folds(truth, k, seed);
  int wrong = 0;
  for (int f = 0; f < k; ++f) {
    std::vector<int> train;
    std::vector<int> test;
    for (std::size_t i = 0; i < folds.size(); ++i) (folds[i] == f ? test : train).push_back(static_cast<int>(i));
    const std::vector<int> predicted = fit_predict(data.subset(train), data.subset(test));
    if (predicted.size() != test.size()) throw DataError("cross-validation: prediction count mismatch");
    for (std::size_t t = 0; t < test.size(); ++t) {
      if (predicted[t] != truth[static_cast<std::size_t>(test[t])]) ++wrong;
    }
  }
  return static_cast<double>(wrong) / static_cast<double>(truth.size());
}

}  // namespace curveclust
