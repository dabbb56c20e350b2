// curveclust command-line front end.

#include "curveclust/dataset.hpp"
#include "curveclust/discriminant.hpp"
#include "curveclust/evaluation.hpp"
#include "curveclust/mixhmmr.hpp"
#include "curveclust/mixreg.hpp"
#include "curveclust/mixrhlp.hpp"
#include "curveclust/pwrm.hpp"
#include "curveclust/serialize.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace curveclust;

namespace {

struct RunConfig {
  std::string command;
  std::string model = "mixreg";
  std::string basis = "bspline";
  int degree = 3;
  std::string knots = "3";
  std::string K = "3";
  std::string R = "3";
  bool robust = false;
  std::optional<double> lambda;
  std::string lambda_schedule = "adaptive";
  int max_iter = 1000;
  double tol = 1e-6;
  int n_init = 1;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string init = "random";
  double variance_floor = -1.0;
  std::string in;
  std::string out_dir = ".";
  std::string criterion = "bic";
  bool interpolate = false;
  bool constrained = false;
  bool cem = false;
  bool homoskedastic = false;
  bool full_chain = false;
  std::string flda_family;
  // predict / evaluate / segment
  std::string model_file;
  std::string partition_file;
  std::string truth_file;
  std::string means_file;
  // generate
  std::string kind = "waveform";
  int n = 500;
  int m = 200;
  double noise_sd = -1.0;
};

Json config_json(const RunConfig& c) {
  Json j = Json::object();
  j["command"] = c.command;
  j["model"] = c.model;
  j["basis"] = c.basis;
  j["degree"] = c.degree;
  j["knots"] = c.knots;
  j["K"] = c.K;
  j["R"] = c.R;
  j["robust"] = c.robust;
  j["lambda"] = c.lambda ? Json(*c.lambda) : Json(nullptr);
  j["lambda_schedule"] = c.lambda_schedule;
  j["max_iter"] = c.max_iter;
  j["tol"] = c.tol;
  j["n_init"] = c.n_init;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["init"] = c.init;
  j["variance_floor"] = c.variance_floor;
  j["in"] = c.in;
  j["out_dir"] = c.out_dir;
  j["criterion"] = c.criterion;
  j["interpolate"] = c.interpolate;
  j["constrained"] = c.constrained;
  j["cem"] = c.cem;
  j["homoskedastic"] = c.homoskedastic;
  j["full_chain"] = c.full_chain;
  if (!c.flda_family.empty()) j["flda_family"] = c.flda_family;
  if (!c.model_file.empty()) j["model_file"] = c.model_file;
  if (!c.partition_file.empty()) j["partition_file"] = c.partition_file;
  if (!c.truth_file.empty()) j["truth_file"] = c.truth_file;
  if (!c.means_file.empty()) j["means_file"] = c.means_file;
  if (c.command == "generate") {
    j["kind"] = c.kind;
    j["n"] = c.n;
    j["m"] = c.m;
    j["noise_sd"] = c.noise_sd;
  }
  return j;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

int to_int(const std::string& text, const std::string& what) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid integer '" + text + "' for " + what);
  }
}

double to_real(const std::string& text, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid number '" + text + "' for " + what);
  }
}

/// "3" or "2,3,4".
std::vector<int> int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  for (const auto& s : split(text, ',')) out.push_back(to_int(s, what));
  if (out.empty()) throw ConfigError("empty value for " + what);
  return out;
}

/// "1..5", "1,3,5" or "3".
std::vector<int> int_range(const std::string& text, const std::string& what) {
  const auto dots = text.find("..");
  if (dots == std::string::npos) return int_list(text, what);
  const int a = to_int(text.substr(0, dots), what);
  const int b = to_int(text.substr(dots + 2), what);
  if (b < a) throw ConfigError("empty range for " + what);
  std::vector<int> out;
  for (int v = a; v <= b; ++v) out.push_back(v);
  return out;
}

BasisSpec basis_spec(const RunConfig& c) {
  BasisSpec b;
  b.kind = parse_basis_kind(c.basis);
  b.degree = c.degree;
  if (c.knots.find(',') != std::string::npos || c.knots.find('.') != std::string::npos) {
    std::vector<double> knots;
    for (const auto& s : split(c.knots, ',')) knots.push_back(to_real(s, "--knots"));
    b.knots = knots;
  } else {
    b.knots = to_int(c.knots, "--knots");
  }
  if (b.kind == BasisKind::polynomial) b.knots = 0;
  b.validate();
  return b;
}

FitOptions fit_options(const RunConfig& c) {
  FitOptions o;
  o.max_iter = c.max_iter;
  o.tol = c.tol;
  o.n_init = c.n_init;
  o.seed = c.seed;
  o.threads = c.threads;
  o.variance_floor = c.variance_floor;
  if (c.init == "random") {
    o.init = InitMethod::random_partition;
  } else if (c.init == "kmeans") {
    o.init = InitMethod::kmeans_partition;
  } else {
    throw ConfigError("--init must be random or kmeans");
  }
  o.validate();
  return o;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::vector<double> linspace(double lo, double hi, int count) {
  std::vector<double> xs(static_cast<std::size_t>(count));
  for (int t = 0; t < count; ++t) xs[static_cast<std::size_t>(t)] = lo + (hi - lo) * t / (count - 1);
  return xs;
}

std::vector<double> plot_grid(const FunctionalDataset& data) {
  if (data.common_grid()) return data.grid();
  return linspace(data.x_min(), data.x_max(), 200);
}

struct Segment {
  int regime;
  int start;
  int end;  // exclusive
};

std::vector<Segment> runs(const std::vector<int>& path) {
  std::vector<Segment> out;
  for (int j = 0; j < static_cast<int>(path.size()); ++j) {
    const int r = path[static_cast<std::size_t>(j)];
    if (out.empty() || out.back().regime != r) {
      out.push_back({r, j, j + 1});
    } else {
      out.back().end = j + 1;
    }
  }
  return out;
}

std::vector<Segment> from_boundaries(const std::vector<int>& b) {
  std::vector<Segment> out;
  for (std::size_t r = 0; r + 1 < b.size(); ++r) out.push_back({static_cast<int>(r), b[r], b[r + 1]});
  return out;
}

void write_segments(std::ostream& out, const std::string& owner, const std::vector<Segment>& segs,
                    const std::vector<double>& xs) {
  for (const auto& s : segs) {
    out << owner << ',' << s.regime + 1 << ',' << s.start << ',' << s.end << ','
        << format_real(xs[static_cast<std::size_t>(s.start)]) << ','
        << format_real(xs[static_cast<std::size_t>(s.end - 1)]) << '\n';
  }
}

struct FitOutcome {
  AnyModel model;
  FitReport report;
  Matrix tau;  // n x K posteriors (or class posteriors for discriminant models)
  std::vector<int> labels;  // 1-based labels written to partition.csv
  std::vector<Matrix> hmm_gamma;
};

std::vector<int> one_based(const std::vector<int>& zero_based) {
  std::vector<int> out = zero_based;
  for (int& l : out) ++l;
  return out;
}

std::vector<int> regimes_for(const RunConfig& c, int K) { return expand_regimes(int_list(c.R, "--R"), K); }

FldaFamily flda_family(const RunConfig& c) {
  if (!c.flda_family.empty()) return parse_flda_family(c.flda_family);
  switch (parse_basis_kind(c.basis)) {
    case BasisKind::polynomial: return FldaFamily::polynomial;
    case BasisKind::spline: return FldaFamily::spline;
    case BasisKind::bspline: return FldaFamily::bspline;
  }
  return FldaFamily::bspline;
}

FitOutcome run_fit(const FunctionalDataset& data, const RunConfig& c, int K, const std::vector<int>& R) {
  const FitOptions opts = fit_options(c);
  FitOutcome out;
  if (c.model == "mixreg") {
    MixRegFit fit;
    if (c.robust) {
      RobustOptions ro;
      ro.fit = opts;
      ro.lambda = c.lambda;
      if (c.lambda_schedule == "adaptive") {
        ro.schedule = LambdaSchedule::adaptive;
      } else if (c.lambda_schedule == "ramp") {
        ro.schedule = LambdaSchedule::ramp;
      } else {
        throw ConfigError("--lambda-schedule must be adaptive or ramp");
      }
      fit = fit_robust_em(data, basis_spec(c), ro);
    } else {
      fit = fit_em(data, basis_spec(c), K, opts);
    }
    out.tau = fit.partition.tau;
    out.labels = one_based(fit.partition.map_labels());
    out.report = std::move(fit.report);
    out.model = std::move(fit.params);
    return out;
  }
  if (c.robust) throw ConfigError("--robust applies to --model mixreg only");
  if (c.model == "pwrm") {
    data.require_common_grid("pwrm");
    PwrmOptions po;
    po.fit = opts;
    po.homoskedastic = c.homoskedastic;
    po.constrained = c.constrained;
    if (c.constrained && !c.cem) throw ConfigError("--constrained requires --cem");
    PwrmFit fit = c.cem ? fit_cem_pwrm(data, c.degree, K, R, po) : fit_em_pwrm(data, c.degree, K, R, po);
    out.tau = fit.partition.tau;
    out.labels = one_based(fit.partition.map_labels());
    out.report = std::move(fit.report);
    out.model = std::move(fit.params);
    return out;
  }
  if (c.model == "mixhmmr") {
    MixHmmrOptions ho;
    ho.fit = opts;
    ho.left_right = !c.full_chain;
    MixHmmrFit fit = fit_em_mixhmmr(data, c.degree, K, R, ho);
    out.tau = fit.partition.tau;
    out.labels = one_based(fit.partition.map_labels());
    out.report = std::move(fit.report);
    out.hmm_gamma = std::move(fit.cluster_gamma);
    out.model = std::move(fit.params);
    return out;
  }
  if (c.model == "mixrhlp" || c.model == "rhlp") {
    if (c.model == "rhlp") {
      RhlpFit fit = fit_rhlp(data, c.degree, R.front(), opts);
      out.tau = Matrix::Ones(data.size(), 1);
      out.labels.assign(static_cast<std::size_t>(data.size()), 1);
      out.report = std::move(fit.report);
      out.model = std::move(fit.params);
      return out;
    }
    MixRhlpFit fit = fit_em_mixrhlp(data, c.degree, K, R, opts);
    out.tau = fit.partition.tau;
    out.labels = one_based(fit.partition.map_labels());
    out.report = std::move(fit.report);
    out.model = std::move(fit.params);
    return out;
  }
  if (c.model == "flda" || c.model == "fmda") {
    ClassPrediction pred;
    if (c.model == "flda") {
      FldaConfig fc;
      fc.family = flda_family(c);
      fc.basis = basis_spec(c);
      if (fc.family == FldaFamily::rhlp) fc.basis = BasisSpec::polynomial(c.degree);
      fc.R = int_list(c.R, "--R").front();
      fc.fit = opts;
      FldaModel model = train_flda(data, fc);
      pred = predict(model, data);
      out.model = std::move(model);
    } else {
      FmdaConfig fc;
      fc.degree = c.degree;
      fc.K = int_list(c.K, "--K");
      fc.R = {int_list(c.R, "--R")};
      fc.fit = opts;
      FmdaModel model = train_fmda(data, fc);
      pred = predict(model, data);
      out.model = std::move(model);
    }
    out.tau = pred.posteriors;
    out.labels = pred.labels;
    out.report.final_K = static_cast<int>(pred.posteriors.cols());
    out.report.seed = c.seed;
    out.report.converged = true;
    const std::vector<int> truth = data.labels();
    int wrong = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) wrong += truth[i] != pred.labels[i] ? 1 : 0;
    out.report.warnings.push_back("training error " + format_real(static_cast<double>(wrong) / data.size()));
    return out;
  }
  throw ConfigError("unknown --model '" + c.model + "'");
}

void write_partition(const fs::path& path, const FunctionalDataset& data, const std::vector<int>& labels,
                     const Matrix& tau, const char* label_header, const char* prob_prefix) {
  std::ofstream out = open_out(path);
  out << "curve_id," << label_header;
  for (Eigen::Index k = 0; k < tau.cols(); ++k) out << ',' << prob_prefix << k + 1;
  out << '\n';
  for (int i = 0; i < data.size(); ++i) {
    out << data.curve(i).id() << ',' << labels[static_cast<std::size_t>(i)];
    for (Eigen::Index k = 0; k < tau.cols(); ++k) out << ',' << format_real(tau(i, k));
    out << '\n';
  }
}

void write_mean_rows(std::ostream& out, int cluster, std::span<const double> xs, const Vector& ys) {
  for (std::size_t j = 0; j < xs.size(); ++j) {
    out << cluster << ',' << format_real(xs[j]) << ',' << format_real(ys[static_cast<Eigen::Index>(j)]) << '\n';
  }
}

void write_proportions(std::ostream& out, int cluster, const RhlpParams& p, const std::vector<double>& xs) {
  const Matrix pi = logistic_proportions(xs, p.w);
  for (std::size_t j = 0; j < xs.size(); ++j) {
    for (int r = 0; r < p.R(); ++r) {
      out << cluster << ',' << format_real(xs[j]) << ',' << r + 1 << ','
          << format_real(pi(static_cast<Eigen::Index>(j), r)) << '\n';
    }
  }
}

std::vector<int> rhlp_path(const RhlpParams& p, const std::vector<double>& xs) {
  const Matrix pi = logistic_proportions(xs, p.w);
  std::vector<int> path;
  for (Eigen::Index j = 0; j < pi.rows(); ++j) path.push_back(argmax(pi.row(j).transpose()));
  return path;
}

/// means.csv, plus proportions.csv / segments.csv where the family has regimes.
void write_model_artifacts(const fs::path& dir, const FunctionalDataset& data, const FitOutcome& fo,
                           const RunConfig& c) {
  std::ofstream means = open_out(dir / "means.csv");
  means << "cluster,x,yhat\n";
  const std::vector<double> grid = plot_grid(data);
  const char* seg_header = "cluster,regime,start_index,end_index,x_start,x_end\n";
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, MixRegParams>) {
          for (int k = 0; k < m.K(); ++k) write_mean_rows(means, k + 1, grid, mixreg_mean_curve(m, k, grid));
        } else if constexpr (std::is_same_v<T, PwrmParams>) {
          std::ofstream segs = open_out(dir / "segments.csv");
          segs << seg_header;
          for (int k = 0; k < m.K(); ++k) {
            if (c.interpolate) {
              const auto [xs, ys] = pwrm_interpolated_curve(m, k);
              write_mean_rows(means, k + 1, xs, Eigen::Map<const Vector>(ys.data(), static_cast<Eigen::Index>(ys.size())));
            } else {
              write_mean_rows(means, k + 1, m.grid, pwrm_mean_curve(m, k));
            }
            write_segments(segs, std::to_string(k + 1),
                           from_boundaries(m.clusters[static_cast<std::size_t>(k)].segmentation.boundaries), m.grid);
          }
        } else if constexpr (std::is_same_v<T, MixHmmrParams>) {
          if (fo.hmm_gamma.empty()) {
            spdlog::warn("mixhmmr mean curves need a common grid; means.csv left empty");
            return;
          }
          std::ofstream segs = open_out(dir / "segments.csv");
          segs << seg_header;
          const Matrix X = scaled_polynomial_design(grid, m.degree, m.scale);
          for (int k = 0; k < m.K(); ++k) {
            const Matrix& g = fo.hmm_gamma[static_cast<std::size_t>(k)];
            write_mean_rows(means, k + 1, grid, hmmr_mean_curve(m.clusters[static_cast<std::size_t>(k)], X, g));
            write_segments(segs, std::to_string(k + 1), runs(state_path(g)), grid);
          }
        } else if constexpr (std::is_same_v<T, RhlpParams> || std::is_same_v<T, MixRhlpParams>) {
          std::vector<const RhlpParams*> comps;
          if constexpr (std::is_same_v<T, RhlpParams>) {
            comps.push_back(&m);
          } else {
            for (const auto& p : m.components) comps.push_back(&p);
          }
          std::ofstream props = open_out(dir / "proportions.csv");
          props << "cluster,x,regime,pi\n";
          std::ofstream segs = open_out(dir / "segments.csv");
          segs << seg_header;
          for (std::size_t k = 0; k < comps.size(); ++k) {
            const int cl = static_cast<int>(k) + 1;
            write_mean_rows(means, cl, grid, rhlp_mean_curve(*comps[k], grid));
            write_proportions(props, cl, *comps[k], grid);
            write_segments(segs, std::to_string(cl), runs(rhlp_path(*comps[k], grid)), grid);
          }
        } else if constexpr (std::is_same_v<T, FldaModel>) {
          for (int g = 0; g < m.G(); ++g) {
            const int label = m.class_labels[static_cast<std::size_t>(g)];
            if (m.family == FldaFamily::rhlp) {
              write_mean_rows(means, label, grid, rhlp_mean_curve(m.rhlp[static_cast<std::size_t>(g)], grid));
            } else {
              const RegressionClassModel& rm = m.regression[static_cast<std::size_t>(g)];
              write_mean_rows(means, label, grid, build_design(grid, rm.basis) * rm.beta);
            }
          }
        } else if constexpr (std::is_same_v<T, FmdaModel>) {
          for (int g = 0; g < m.G(); ++g) {
            const MixRhlpParams& mix = m.classes[static_cast<std::size_t>(g)];
            Vector mean = Vector::Zero(static_cast<Eigen::Index>(grid.size()));
            for (int k = 0; k < mix.K(); ++k) {
              mean += mix.alphas[k] * rhlp_mean_curve(mix.components[static_cast<std::size_t>(k)], grid);
            }
            write_mean_rows(means, m.class_labels[static_cast<std::size_t>(g)], grid, mean);
          }
        }
      },
      fo.model);
}

void write_report(const fs::path& path, const RunConfig& c, const Json& body) {
  Json doc = Json::object();
  doc["schema_version"] = kSchemaVersion;
  doc["config"] = config_json(c);
  for (auto it = body.begin(); it != body.end(); ++it) doc[it.key()] = *it;
  write_json_file(path, doc);
}

bool is_discriminant(const std::string& model) { return model == "flda" || model == "fmda"; }

int fixed_K(const RunConfig& c) {
  const std::vector<int> ks = int_list(c.K, "--K");
  return ks.front();
}

int cmd_fit(const RunConfig& c) {
  if (c.in.empty()) throw ConfigError("--in is required");
  const FunctionalDataset data = load_csv(c.in);
  const int K = c.model == "rhlp" || is_discriminant(c.model) ? 1 : fixed_K(c);
  const std::vector<int> R = c.model == "mixreg" || is_discriminant(c.model) ? std::vector<int>{1}
                                                                             : regimes_for(c, K);
  const FitOutcome fo = run_fit(data, c, K, R);
  ensure_dir(c.out_dir);
  const fs::path dir(c.out_dir);
  save_model(dir / "model.json", fo.model);
  if (is_discriminant(c.model)) {
    write_partition(dir / "predictions.csv", data, fo.labels, fo.tau, "label", "posterior_");
  } else {
    write_partition(dir / "partition.csv", data, fo.labels, fo.tau, "hard_label", "tau_");
  }
  write_model_artifacts(dir, data, fo, c);
  Json body = Json::object();
  body["family"] = family_of(fo.model);
  body["report"] = to_json(fo.report);
  write_report(dir / "report.json", c, body);
  if (is_discriminant(c.model)) {
    std::cout << "fit " << c.model << ": classes=" << fo.report.final_K << ' ' << fo.report.warnings.back()
              << " out=" << c.out_dir << '\n';
    return 0;
  }
  const auto& cr = fo.report.criteria;
  std::cout << "fit " << c.model << ": K=" << fo.report.final_K << " loglik=" << format_real(cr.loglik)
            << " bic=" << format_real(cr.bic) << " iterations=" << fo.report.iterations
            << " converged=" << (fo.report.converged ? "true" : "false") << " out=" << c.out_dir << '\n';
  return 0;
}

int cmd_select(const RunConfig& c) {
  if (c.in.empty()) throw ConfigError("--in is required");
  if (c.robust) throw ConfigError("select does not combine with --robust");
  if (is_discriminant(c.model) || c.model == "rhlp") throw ConfigError("select supports mixreg, pwrm, mixhmmr, mixrhlp");
  if (c.criterion != "bic" && c.criterion != "aic" && c.criterion != "icl") {
    throw ConfigError("--criterion must be bic, aic or icl");
  }
  const std::vector<int> Ks = int_range(c.K, "--K");
  const std::vector<int> Rs = c.model == "mixreg" ? std::vector<int>{0} : int_range(c.R, "--R");
  const FunctionalDataset data = load_csv(c.in);
  ensure_dir(c.out_dir);
  const fs::path dir(c.out_dir);
  std::ofstream table = open_out(dir / "selection.csv");
  table << "K,R,loglik,nu,bic,aic,icl,status\n";
  std::optional<FitOutcome> best;
  double best_score = -std::numeric_limits<double>::infinity();
  int best_K = 0;
  int best_R = 0;
  for (int K : Ks) {
    for (int R : Rs) {
      const std::string rtext = c.model == "mixreg" ? "" : std::to_string(R);
      try {
        FitOutcome fo = run_fit(data, c, K, std::vector<int>(static_cast<std::size_t>(std::max(K, 1)), std::max(R, 1)));
        const auto& cr = fo.report.criteria;
        table << K << ',' << rtext << ',' << format_real(cr.loglik) << ',' << format_real(cr.nu) << ','
              << format_real(cr.bic) << ',' << format_real(cr.aic) << ',' << format_real(cr.icl) << ",ok\n";
        const double score = c.criterion == "bic" ? cr.bic : c.criterion == "aic" ? cr.aic : cr.icl;
        if (!best || score > best_score) {
          best_score = score;
          best_K = K;
          best_R = R;
          best = std::move(fo);
        }
      } catch (const Error& e) {
        spdlog::warn("candidate K={} R={} failed: {}", K, rtext, e.what());
        table << K << ',' << rtext << ",,,,,,failed\n";
      }
    }
  }
  table.close();
  if (!best) throw DegenerateError("every candidate failed");
  save_model(dir / "model.json", best->model);
  write_partition(dir / "partition.csv", data, best->labels, best->tau, "hard_label", "tau_");
  write_model_artifacts(dir, data, *best, c);
  Json body = Json::object();
  body["family"] = family_of(best->model);
  body["selected"] = Json::object({{"K", best_K}, {"R", best_R}, {"criterion", c.criterion}, {"score", best_score}});
  body["report"] = to_json(best->report);
  write_report(dir / "report.json", c, body);
  std::cout << "select " << c.model << ": best K=" << best_K;
  if (c.model != "mixreg") std::cout << " R=" << best_R;
  std::cout << " by " << c.criterion << '=' << format_real(best_score) << " out=" << c.out_dir << '\n';
  return 0;
}

ClassPrediction predict_any(const AnyModel& model, const FunctionalDataset& data, int threads) {
  return std::visit(
      [&](const auto& m) -> ClassPrediction {
        using T = std::decay_t<decltype(m)>;
        ClassPrediction out;
        if constexpr (std::is_same_v<T, FldaModel> || std::is_same_v<T, FmdaModel>) {
          return predict(m, data);
        } else {
          Matrix tau;
          if constexpr (std::is_same_v<T, MixRegParams>) {
            tau = weighted_log_densities(make_regression_data(data, m.basis), m, threads);
            posteriors_from_log(tau);
          } else if constexpr (std::is_same_v<T, PwrmParams>) {
            data.require_common_grid("pwrm prediction");
            if (data.grid() != m.grid) throw DataError("curves are not on the model's grid");
            tau = pwrm_log_densities(data.response_matrix(), m);
            for (int k = 0; k < m.K(); ++k) tau.col(k).array() += std::log(m.alphas[k]);
            posteriors_from_log(tau);
          } else if constexpr (std::is_same_v<T, MixHmmrParams>) {
            tau = mixhmmr_e_step(data, m, threads).tau;
          } else if constexpr (std::is_same_v<T, MixRhlpParams>) {
            tau = mixrhlp_e_step(data, m, threads).tau;
          } else {
            for (const auto& curve : data.curves()) rhlp_curve_loglik(curve, m);
            tau = Matrix::Ones(data.size(), 1);
          }
          out.posteriors = tau;
          for (Eigen::Index i = 0; i < tau.rows(); ++i) out.labels.push_back(argmax(tau.row(i).transpose()) + 1);
          return out;
        }
      },
      model);
}

int cmd_predict(const RunConfig& c) {
  if (c.in.empty()) throw ConfigError("--in is required");
  if (c.model_file.empty()) throw ConfigError("--model-file is required");
  const AnyModel model = load_model(c.model_file);
  const FunctionalDataset data = load_csv(c.in);
  const ClassPrediction pred = predict_any(model, data, c.threads);
  ensure_dir(c.out_dir);
  const fs::path dir(c.out_dir);
  write_partition(dir / "predictions.csv", data, pred.labels, pred.posteriors, "label", "posterior_");
  Json body = Json::object();
  body["family"] = family_of(model);
  body["n"] = data.size();
  write_report(dir / "report.json", c, body);
  std::cout << "predict " << family_of(model) << ": " << data.size() << " curves out=" << c.out_dir << '\n';
  return 0;
}

std::map<std::string, int> read_label_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  std::map<std::string, int> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() < 2) throw DataError(path + ": malformed row at line " + std::to_string(lineno));
    try {
      out[fields[0]] = to_int(fields[1], "label");
    } catch (const ConfigError& e) {
      throw DataError(path + ": " + e.what() + " at line " + std::to_string(lineno));
    }
  }
  return out;
}

std::vector<int> labels_by_id(const FunctionalDataset& data, const std::map<std::string, int>& table,
                              const std::string& source) {
  std::vector<int> out;
  for (const auto& curve : data.curves()) {
    const auto it = table.find(curve.id());
    if (it == table.end()) throw DataError(source + ": no label for curve '" + curve.id() + "'");
    out.push_back(it->second);
  }
  return out;
}

int cmd_evaluate(const RunConfig& c) {
  if (c.in.empty()) throw ConfigError("--in is required");
  if (c.partition_file.empty()) throw ConfigError("--partition is required");
  const FunctionalDataset data = load_csv(c.in);
  const std::vector<int> truth =
      c.truth_file.empty() ? data.labels() : labels_by_id(data, read_label_file(c.truth_file), c.truth_file);
  const std::vector<int> predicted = labels_by_id(data, read_label_file(c.partition_file), c.partition_file);
  Json metrics = Json::object();
  metrics["n"] = data.size();
  metrics["misclassification"] = misclassification_rate(truth, predicted);
  metrics["ari"] = adjusted_rand_index(truth, predicted);
  if (data.common_grid()) {
    std::map<int, int> index;
    for (int l : predicted) index.emplace(l, 0);
    int next = 0;
    for (auto& [l, k] : index) k = next++;
    const Matrix Y = data.response_matrix();
    Matrix means = Matrix::Zero(next, Y.cols());
    std::vector<int> z;
    for (int l : predicted) z.push_back(index[l]);
    if (!c.means_file.empty()) {
      std::ifstream in(c.means_file);
      if (!in) throw IoError("cannot open " + c.means_file);
      std::string line;
      std::getline(in, line);
      std::map<int, std::vector<double>> rows;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() < 3) throw DataError(c.means_file + ": malformed row");
        rows[to_int(f[0], "cluster")].push_back(to_real(f[2], "yhat"));
      }
      for (const auto& [l, k] : index) {
        const auto it = rows.find(l);
        if (it == rows.end() || it->second.size() != static_cast<std::size_t>(Y.cols())) {
          throw DataError(c.means_file + ": mean curve of cluster " + std::to_string(l) + " is not on the data grid");
        }
        means.row(k) = Eigen::Map<const Vector>(it->second.data(), Y.cols()).transpose();
      }
    } else {
      Vector counts = Vector::Zero(next);
      for (Eigen::Index i = 0; i < Y.rows(); ++i) {
        means.row(z[static_cast<std::size_t>(i)]) += Y.row(i);
        counts[z[static_cast<std::size_t>(i)]] += 1.0;
      }
      for (int k = 0; k < next; ++k) means.row(k) /= counts[k];
    }
    metrics["inertia"] = intra_cluster_inertia(Y, z, means);
  } else {
    metrics["inertia"] = nullptr;
  }
  ensure_dir(c.out_dir);
  const fs::path dir(c.out_dir);
  write_json_file(dir / "metrics.json", metrics);
  Json body = Json::object();
  body["metrics"] = metrics;
  write_report(dir / "report.json", c, body);
  std::cout << "evaluate: misclassification=" << format_real(metrics["misclassification"].get<double>())
            << " ari=" << format_real(metrics["ari"].get<double>()) << " out=" << c.out_dir << '\n';
  return 0;
}

int cmd_generate(const RunConfig& c) {
  ensure_dir(c.out_dir);
  const fs::path dir(c.out_dir);
  std::optional<FunctionalDataset> data;
  std::vector<int> truth;
  if (c.kind == "waveform") {
    WaveformSpec spec;
    spec.n = c.n;
    spec.seed = c.seed;
    if (c.noise_sd > 0.0) spec.noise_sd = c.noise_sd;
    spec.validate();
    data = generate_waveform(spec);
    truth = data->labels();
  } else if (c.kind == "regimes") {
    RegimeSpec spec;
    spec.n = c.n;
    spec.m = c.m;
    spec.K = fixed_K(c);
    spec.R = int_list(c.R, "--R").front();
    spec.degree = c.degree;
    spec.seed = c.seed;
    if (c.noise_sd > 0.0) spec.noise_sd = c.noise_sd;
    spec.validate();
    RegimeData rdata = generate_regime_curves(spec);
    std::ofstream cps = open_out(dir / "change_points.csv");
    cps << "cluster,regime,start_index,end_index\n";
    for (std::size_t k = 0; k < rdata.change_points.size(); ++k) {
      const auto& b = rdata.change_points[k];
      for (std::size_t r = 0; r + 1 < b.size(); ++r) cps << k + 1 << ',' << r + 1 << ',' << b[r] << ',' << b[r + 1] << '\n';
    }
    data = std::move(rdata.data);
    truth = rdata.labels;
  } else {
    throw ConfigError("--kind must be waveform or regimes");
  }
  save_csv(*data, dir / "data.csv");
  std::ofstream t = open_out(dir / "truth.csv");
  t << "curve_id,label\n";
  for (int i = 0; i < data->size(); ++i) t << data->curve(i).id() << ',' << truth[static_cast<std::size_t>(i)] << '\n';
  t.close();
  write_report(dir / "report.json", c, Json::object({{"n", data->size()}}));
  std::cout << "generate " << c.kind << ": n=" << data->size() << " seed=" << c.seed << " out=" << c.out_dir << '\n';
  return 0;
}

int cmd_segment(const RunConfig& c) {
  if (c.in.empty()) throw ConfigError("--in is required");
  const FunctionalDataset data = load_csv(c.in);
  ensure_dir(c.out_dir);
  const fs::path dir(c.out_dir);
  std::ofstream segs = open_out(dir / "segments.csv");
  if (c.model_file.empty()) {
    // Per-curve optimal segmentation.
    const int R = int_list(c.R, "--R").front();
    if (R < 1) throw ConfigError("R must be >= 1");
    segs << "curve_id,regime,start_index,end_index,x_start,x_end,rss\n";
    for (const auto& curve : data.curves()) {
      const Vector y = curve.y_vector();
      const Matrix Y = y.transpose();
      const DpResult dp = dp_segment(Y, curve.xs(), Vector::Ones(1), R, c.degree);
      const auto& b = dp.segmentation.boundaries;
      for (std::size_t r = 0; r + 1 < b.size(); ++r) {
        segs << curve.id() << ',' << r + 1 << ',' << b[r] << ',' << b[r + 1] << ','
             << format_real(curve.xs()[static_cast<std::size_t>(b[r])]) << ','
             << format_real(curve.xs()[static_cast<std::size_t>(b[r + 1] - 1)]) << ','
             << format_real(dp.rss[static_cast<Eigen::Index>(r)]) << '\n';
      }
    }
    std::cout << "segment: " << data.size() << " curves into R=" << R << " regimes out=" << c.out_dir << '\n';
    return 0;
  }
  const AnyModel model = load_model(c.model_file);
  const ClassPrediction pred = predict_any(model, data, c.threads);
  segs << "curve_id,cluster,regime,start_index,end_index,x_start,x_end\n";
  std::ofstream post = open_out(dir / "regime_posteriors.csv");
  post << "curve_id,cluster,x,regime,posterior\n";
  for (int i = 0; i < data.size(); ++i) {
    const Curve& curve = data.curve(i);
    const int k = pred.labels[static_cast<std::size_t>(i)] - 1;
    Matrix gamma;
    std::visit(
        [&](const auto& m) {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, PwrmParams>) {
            const auto& b = m.clusters[static_cast<std::size_t>(k)].segmentation.boundaries;
            gamma = Matrix::Zero(curve.size(), static_cast<Eigen::Index>(b.size()) - 1);
            for (std::size_t r = 0; r + 1 < b.size(); ++r) {
              for (int j = b[r]; j < b[r + 1]; ++j) gamma(j, static_cast<Eigen::Index>(r)) = 1.0;
            }
          } else if constexpr (std::is_same_v<T, MixHmmrParams>) {
            const HmmrCluster& cl = m.clusters[static_cast<std::size_t>(k)];
            gamma = forward_backward(curve.y_vector(), scaled_polynomial_design(curve.xs(), m.degree, m.scale), cl.chain,
                                     cl.betas, cl.sigma2s)
                        .gamma;
          } else if constexpr (std::is_same_v<T, MixRhlpParams>) {
            rhlp_curve_loglik(curve, m.components[static_cast<std::size_t>(k)], &gamma);
          } else if constexpr (std::is_same_v<T, RhlpParams>) {
            rhlp_curve_loglik(curve, m, &gamma);
          } else {
            throw ConfigError("segment needs a pwrm, mixhmmr, rhlp or mixrhlp model");
          }
        },
        model);
    std::vector<int> path;
    for (Eigen::Index j = 0; j < gamma.rows(); ++j) path.push_back(argmax(gamma.row(j).transpose()));
    std::vector<double> xs(curve.xs().begin(), curve.xs().end());
    write_segments(segs, curve.id() + ',' + std::to_string(k + 1), runs(path), xs);
    for (Eigen::Index j = 0; j < gamma.rows(); ++j) {
      for (Eigen::Index r = 0; r < gamma.cols(); ++r) {
        post << curve.id() << ',' << k + 1 << ',' << format_real(xs[static_cast<std::size_t>(j)]) << ',' << r + 1 << ','
             << format_real(gamma(j, r)) << '\n';
      }
    }
  }
  std::cout << "segment " << family_of(model) << ": " << data.size() << " curves out=" << c.out_dir << '\n';
  return 0;
}

void add_fit_options(CLI::App* sub, RunConfig& c) {
  sub->add_option("--model", c.model, "mixreg | pwrm | mixhmmr | mixrhlp | rhlp | flda | fmda")
      ->check(CLI::IsMember({"mixreg", "pwrm", "mixhmmr", "mixrhlp", "rhlp", "flda", "fmda"}));
  sub->add_option("--basis", c.basis, "poly | spline | bspline (mixreg, flda)")
      ->check(CLI::IsMember({"poly", "polynomial", "spline", "bspline"}));
  sub->add_option("--degree", c.degree, "polynomial or spline degree");
  sub->add_option("--knots", c.knots, "interior knot count, or comma-separated positions");
  sub->add_option("--K", c.K, "number of clusters (select: range a..b)");
  sub->add_option("--R", c.R, "regimes: scalar or per-cluster list (select: range a..b)");
  sub->add_flag("--robust", c.robust, "robust EM estimating the number of clusters (mixreg)");
  sub->add_option("--lambda", c.lambda, "fixed entropy penalty for robust EM");
  sub->add_option("--lambda-schedule", c.lambda_schedule, "adaptive | ramp")
      ->check(CLI::IsMember({"adaptive", "ramp"}));
  sub->add_option("--max-iter", c.max_iter);
  sub->add_option("--tol", c.tol, "relative objective change stopping threshold");
  sub->add_option("--n-init", c.n_init, "random restarts");
  sub->add_option("--init", c.init, "random | kmeans")->check(CLI::IsMember({"random", "kmeans"}));
  sub->add_option("--variance-floor", c.variance_floor, "non-positive selects the data-driven floor");
  sub->add_option("--criterion", c.criterion, "bic | aic | icl")->check(CLI::IsMember({"bic", "aic", "icl"}));
  sub->add_flag("--interpolate", c.interpolate, "pwrm mean curves with junction points");
  sub->add_flag("--constrained", c.constrained, "pwrm CEM with equal proportions, shared variance, degree 0");
  sub->add_flag("--cem", c.cem, "pwrm classification EM");
  sub->add_flag("--homoskedastic", c.homoskedastic, "pwrm: one variance per cluster");
  sub->add_flag("--full-chain", c.full_chain, "mixhmmr: unconstrained transition matrix");
  sub->add_option("--flda-family", c.flda_family, "polynomial | spline | bspline | rhlp")
      ->check(CLI::IsMember({"poly", "polynomial", "spline", "bspline", "rhlp"}));
}

void add_common(CLI::App* sub, RunConfig& c) {
  sub->add_option("--in", c.in, "input curve CSV");
  sub->add_option("--out-dir", c.out_dir, "output directory");
  sub->add_option("--seed", c.seed);
  sub->add_option("--threads", c.threads, "worker threads (1 is bitwise deterministic)");
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("curveclust");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* level = std::getenv("CURVECLUST_LOG")) spdlog::set_level(spdlog::level::from_str(level));

  CLI::App app{"Model-based clustering, segmentation and classification of curves"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI configuration file; command-line flags take precedence");
  RunConfig c;

  CLI::App* fit = app.add_subcommand("fit", "fit a model and write model.json, partition.csv, means.csv, report.json");
  add_common(fit, c);
  add_fit_options(fit, c);

  CLI::App* select = app.add_subcommand("select", "fit a K (and R) range and keep the best by a criterion");
  add_common(select, c);
  add_fit_options(select, c);

  CLI::App* pred = app.add_subcommand("predict", "apply a saved model to curves");
  add_common(pred, c);
  pred->add_option("--model-file", c.model_file, "model.json written by fit")->required();

  CLI::App* eval = app.add_subcommand("evaluate", "compare a partition with the true labels");
  add_common(eval, c);
  eval->add_option("--partition", c.partition_file, "CSV with curve_id,label columns")->required();
  eval->add_option("--truth", c.truth_file, "CSV with curve_id,label (default: labels in --in)");
  eval->add_option("--means", c.means_file, "means.csv for the inertia (default: empirical cluster means)");

  CLI::App* gen = app.add_subcommand("generate", "write a synthetic dataset and its truth.csv");
  gen->add_option("--out-dir", c.out_dir, "output directory");
  gen->add_option("--seed", c.seed);
  gen->add_option("--kind", c.kind, "waveform | regimes")->check(CLI::IsMember({"waveform", "regimes"}));
  gen->add_option("--n", c.n, "number of curves");
  gen->add_option("--m", c.m, "points per curve (regimes)");
  gen->add_option("--K", c.K, "clusters (regimes)");
  gen->add_option("--R", c.R, "regimes per cluster (regimes)");
  gen->add_option("--degree", c.degree, "regime polynomial degree (regimes)");
  gen->add_option("--noise-sd", c.noise_sd, "noise standard deviation");

  CLI::App* seg = app.add_subcommand("segment", "segment each curve, or apply a model's regime posteriors");
  add_common(seg, c);
  seg->add_option("--R", c.R, "number of regimes");
  seg->add_option("--degree", c.degree, "regime polynomial degree");
  seg->add_option("--model-file", c.model_file, "pwrm, mixhmmr, rhlp or mixrhlp model.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (fit->parsed()) c.command = "fit";
  if (select->parsed()) c.command = "select";
  if (pred->parsed()) c.command = "predict";
  if (eval->parsed()) c.command = "evaluate";
  if (gen->parsed()) c.command = "generate";
  if (seg->parsed()) c.command = "segment";
  if (c.command == "generate" && gen->count("--degree") == 0) c.degree = 1;

  try {
    if (c.command == "fit") return cmd_fit(c);
    if (c.command == "select") return cmd_select(c);
    if (c.command == "predict") return cmd_predict(c);
    if (c.command == "evaluate") return cmd_evaluate(c);
    if (c.command == "generate") return cmd_generate(c);
    if (c.command == "segment") return cmd_segment(c);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const DegenerateError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 2;
}
