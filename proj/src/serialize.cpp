#include "curveclust/serialize.hpp"

#include "curveclust/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace curveclust {

namespace {

bool is_scalar(const Json& j) { return !j.is_array() && !j.is_object(); }

void emit(const Json& j, int indent, int depth, std::string& out) {
  const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
  const std::string close_pad(static_cast<std::size_t>(indent * depth), ' ');
  if (j.is_number_float()) {
    const double v = j.get<double>();
    out += std::isfinite(v) ? format_real(v) : "null";
  } else if (is_scalar(j)) {
    out += j.dump();
  } else if (j.is_array()) {
    if (j.empty()) {
      out += "[]";
      return;
    }
    bool flat = true;
    for (const auto& e : j) flat = flat && is_scalar(e);
    if (flat) {
      out += '[';
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += ", ";
        emit(j[i], indent, depth + 1, out);
      }
      out += ']';
      return;
    }
    out += "[\n";
    for (std::size_t i = 0; i < j.size(); ++i) {
      out += pad;
      emit(j[i], indent, depth + 1, out);
      out += i + 1 < j.size() ? ",\n" : "\n";
    }
    out += close_pad + "]";
  } else {
    if (j.empty()) {
      out += "{}";
      return;
    }
    out += "{\n";
    std::size_t i = 0;
    for (auto it = j.begin(); it != j.end(); ++it, ++i) {
      out += pad + Json(it.key()).dump() + ": ";
      emit(it.value(), indent, depth + 1, out);
      out += i + 1 < j.size() ? ",\n" : "\n";
    }
    out += close_pad + "}";
  }
}

Json vec(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Json mat(const Matrix& m) {
  Json a = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(vec(m.row(r).transpose()));
  return a;
}

Json vecs(const std::vector<Vector>& vs) {
  Json a = Json::array();
  for (const auto& v : vs) a.push_back(vec(v));
  return a;
}

const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw DataError(std::string("model document: missing field '") + key + "'");
  return j.at(key);
}

double real(const Json& j) {
  if (!j.is_number()) throw DataError("model document: expected a number");
  return j.get<double>();
}

Vector read_vec(const Json& j) {
  if (!j.is_array()) throw DataError("model document: expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = real(j[i]);
  return v;
}

Matrix read_mat(const Json& j, Eigen::Index cols) {
  if (!j.is_array()) throw DataError("model document: expected a matrix");
  Matrix m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Vector row = read_vec(j[r]);
    if (row.size() != cols) throw DataError("model document: ragged matrix");
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

std::vector<Vector> read_vecs(const Json& j) {
  if (!j.is_array()) throw DataError("model document: expected an array of vectors");
  std::vector<Vector> out;
  for (const auto& e : j) out.push_back(read_vec(e));
  return out;
}

int integer(const Json& j) {
  if (!j.is_number_integer()) throw DataError("model document: expected an integer");
  return j.get<int>();
}

bool boolean(const Json& j) {
  if (!j.is_boolean()) throw DataError("model document: expected a boolean");
  return j.get<bool>();
}

std::vector<int> ints(const Json& j) {
  if (!j.is_array()) throw DataError("model document: expected an integer array");
  std::vector<int> out;
  for (const auto& e : j) out.push_back(integer(e));
  return out;
}

Json scale_json(const AbscissaScale& s) { return Json::array({s.lo, s.hi}); }

AbscissaScale read_scale(const Json& j) {
  const Vector v = read_vec(j);
  if (v.size() != 2) throw DataError("model document: scale must be [lo, hi]");
  return {v[0], v[1]};
}

Json header(const char* family) {
  Json j = Json::object();
  j["schema_version"] = kSchemaVersion;
  j["family"] = family;
  return j;
}

void check_header(const Json& j, const char* family) {
  if (integer(field(j, "schema_version")) != kSchemaVersion) {
    throw DataError("model document: unsupported schema_version");
  }
  if (!field(j, "family").is_string() || j.at("family").get<std::string>() != family) {
    throw DataError(std::string("model document: expected family '") + family + "'");
  }
}

void check_same_size(std::size_t a, Eigen::Index b, const char* what) {
  if (a != static_cast<std::size_t>(b)) throw DataError(std::string("model document: inconsistent ") + what);
}

}  // namespace

std::string dump_json(const Json& doc, int indent) {
  std::string out;
  emit(doc, indent, 0, out);
  out += '\n';
  return out;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& doc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << dump_json(doc);
  if (!out) throw IoError("write failed for " + path.string());
}

Json basis_to_json(const BasisSpec& basis) {
  Json j = Json::object();
  j["kind"] = to_string(basis.kind);
  j["degree"] = basis.degree;
  if (const auto* list = std::get_if<std::vector<double>>(&basis.knots)) {
    Json k = Json::array();
    for (double x : *list) k.push_back(x);
    j["knots"] = k;
  } else {
    j["knots"] = std::get<int>(basis.knots);
  }
  if (basis.domain) j["domain"] = Json::array({basis.domain->lo, basis.domain->hi});
  return j;
}

BasisSpec basis_from_json(const Json& j) {
  BasisSpec b;
  try {
    b.kind = parse_basis_kind(field(j, "kind").get<std::string>());
  } catch (const ConfigError& e) {
    throw DataError(std::string("model document: ") + e.what());
  }
  b.degree = integer(field(j, "degree"));
  const Json& k = field(j, "knots");
  if (k.is_array()) {
    std::vector<double> knots;
    for (const auto& e : k) knots.push_back(real(e));
    b.knots = knots;
  } else {
    b.knots = integer(k);
  }
  if (j.contains("domain")) {
    const Vector d = read_vec(j.at("domain"));
    if (d.size() != 2) throw DataError("model document: domain must be [lo, hi]");
    b.domain = Domain{d[0], d[1]};
  }
  try {
    b.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("model document: ") + e.what());
  }
  return b;
}

Json to_json(const MixRegParams& params) {
  Json j = header("mixreg");
  j["basis"] = basis_to_json(params.basis);
  j["K"] = params.K();
  j["alphas"] = vec(params.alphas);
  j["betas"] = vecs(params.betas);
  j["sigma2s"] = vec(params.sigma2s);
  return j;
}

MixRegParams mixreg_from_json(const Json& j) {
  check_header(j, "mixreg");
  MixRegParams p;
  p.basis = basis_from_json(field(j, "basis"));
  p.alphas = read_vec(field(j, "alphas"));
  p.betas = read_vecs(field(j, "betas"));
  p.sigma2s = read_vec(field(j, "sigma2s"));
  if (integer(field(j, "K")) != p.K()) throw DataError("model document: K does not match alphas");
  for (const auto& b : p.betas) check_same_size(static_cast<std::size_t>(p.basis.columns()), b.size(), "beta length");
  try {
    p.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("model document: ") + e.what());
  }
  return p;
}

Json to_json(const PwrmParams& params) {
  Json j = header("pwrm");
  Json grid = Json::array();
  for (double x : params.grid) grid.push_back(x);
  j["grid"] = grid;
  j["degree"] = params.degree;
  j["scale"] = scale_json(params.scale);
  j["homoskedastic"] = params.homoskedastic;
  j["shared_variance"] = params.shared_variance;
  j["K"] = params.K();
  j["alphas"] = vec(params.alphas);
  Json clusters = Json::array();
  for (const auto& c : params.clusters) {
    Json cj = Json::object();
    cj["boundaries"] = c.segmentation.boundaries;
    cj["betas"] = vecs(c.betas);
    cj["sigma2s"] = vec(c.sigma2s);
    clusters.push_back(cj);
  }
  j["clusters"] = clusters;
  return j;
}

PwrmParams pwrm_from_json(const Json& j) {
  check_header(j, "pwrm");
  PwrmParams p;
  const Vector grid = read_vec(field(j, "grid"));
  p.grid.assign(grid.data(), grid.data() + grid.size());
  p.degree = integer(field(j, "degree"));
  p.scale = read_scale(field(j, "scale"));
  p.homoskedastic = boolean(field(j, "homoskedastic"));
  p.shared_variance = boolean(field(j, "shared_variance"));
  p.alphas = read_vec(field(j, "alphas"));
  const Json& clusters = field(j, "clusters");
  if (!clusters.is_array()) throw DataError("model document: clusters must be an array");
  for (const auto& cj : clusters) {
    PwrmCluster c;
    c.segmentation.boundaries = ints(field(cj, "boundaries"));
    c.betas = read_vecs(field(cj, "betas"));
    c.sigma2s = read_vec(field(cj, "sigma2s"));
    try {
      c.segmentation.validate(static_cast<int>(p.grid.size()), 1);
    } catch (const Error& e) {
      throw DataError(std::string("model document: ") + e.what());
    }
    check_same_size(c.betas.size(), c.segmentation.regimes(), "regime count");
    check_same_size(c.betas.size(), c.sigma2s.size(), "regime variances");
    for (const auto& b : c.betas) check_same_size(static_cast<std::size_t>(p.degree + 1), b.size(), "beta length");
    p.clusters.push_back(std::move(c));
  }
  check_same_size(p.clusters.size(), p.alphas.size(), "K");
  if (integer(field(j, "K")) != p.K()) throw DataError("model document: K does not match clusters");
  return p;
}

Json to_json(const MixHmmrParams& params) {
  Json j = header("mixhmmr");
  j["degree"] = params.degree;
  j["scale"] = scale_json(params.scale);
  j["left_right"] = params.left_right;
  j["K"] = params.K();
  j["alphas"] = vec(params.alphas);
  Json clusters = Json::array();
  for (const auto& c : params.clusters) {
    Json cj = Json::object();
    cj["initial"] = vec(c.chain.initial);
    cj["transition"] = mat(c.chain.transition);
    cj["betas"] = vecs(c.betas);
    cj["sigma2s"] = vec(c.sigma2s);
    clusters.push_back(cj);
  }
  j["clusters"] = clusters;
  return j;
}

MixHmmrParams mixhmmr_from_json(const Json& j) {
  check_header(j, "mixhmmr");
  MixHmmrParams p;
  p.degree = integer(field(j, "degree"));
  p.scale = read_scale(field(j, "scale"));
  p.left_right = boolean(field(j, "left_right"));
  p.alphas = read_vec(field(j, "alphas"));
  const Json& clusters = field(j, "clusters");
  if (!clusters.is_array()) throw DataError("model document: clusters must be an array");
  for (const auto& cj : clusters) {
    HmmrCluster c;
    c.chain.initial = read_vec(field(cj, "initial"));
    c.chain.transition = read_mat(field(cj, "transition"), c.chain.initial.size());
    c.chain.left_right = p.left_right;
    c.betas = read_vecs(field(cj, "betas"));
    c.sigma2s = read_vec(field(cj, "sigma2s"));
    try {
      c.chain.validate();
    } catch (const Error& e) {
      throw DataError(std::string("model document: ") + e.what());
    }
    check_same_size(c.betas.size(), c.chain.initial.size(), "state count");
    check_same_size(c.betas.size(), c.sigma2s.size(), "state variances");
    for (const auto& b : c.betas) check_same_size(static_cast<std::size_t>(p.degree + 1), b.size(), "beta length");
    p.clusters.push_back(std::move(c));
  }
  check_same_size(p.clusters.size(), p.alphas.size(), "K");
  if (integer(field(j, "K")) != p.K()) throw DataError("model document: K does not match clusters");
  return p;
}

namespace {

Json rhlp_body(const RhlpParams& params) {
  Json j = Json::object();
  j["degree"] = params.degree;
  j["scale"] = scale_json(params.scale);
  j["R"] = params.R();
  j["w"] = mat(params.w);
  j["betas"] = vecs(params.betas);
  j["sigma2s"] = vec(params.sigma2s);
  return j;
}

RhlpParams rhlp_body_from(const Json& j) {
  RhlpParams p;
  p.degree = integer(field(j, "degree"));
  p.scale = read_scale(field(j, "scale"));
  const int R = integer(field(j, "R"));
  if (R < 1) throw DataError("model document: R must be >= 1");
  p.w = read_mat(field(j, "w"), 2);
  p.betas = read_vecs(field(j, "betas"));
  p.sigma2s = read_vec(field(j, "sigma2s"));
  check_same_size(static_cast<std::size_t>(R), p.sigma2s.size(), "regime variances");
  check_same_size(p.betas.size(), R, "regime count");
  check_same_size(static_cast<std::size_t>(R - 1), p.w.rows(), "logistic weights");
  for (const auto& b : p.betas) check_same_size(static_cast<std::size_t>(p.degree + 1), b.size(), "beta length");
  if ((p.sigma2s.array() <= 0.0).any()) throw DataError("model document: variances must be positive");
  return p;
}

}  // namespace

Json to_json(const RhlpParams& params) {
  Json j = header("rhlp");
  const Json body = rhlp_body(params);
  for (auto it = body.begin(); it != body.end(); ++it) j[it.key()] = *it;
  return j;
}

RhlpParams rhlp_from_json(const Json& j) {
  check_header(j, "rhlp");
  return rhlp_body_from(j);
}

Json to_json(const MixRhlpParams& params) {
  Json j = header("mixrhlp");
  j["K"] = params.K();
  j["alphas"] = vec(params.alphas);
  Json comps = Json::array();
  for (const auto& c : params.components) comps.push_back(rhlp_body(c));
  j["components"] = comps;
  return j;
}

MixRhlpParams mixrhlp_from_json(const Json& j) {
  check_header(j, "mixrhlp");
  MixRhlpParams p;
  p.alphas = read_vec(field(j, "alphas"));
  const Json& comps = field(j, "components");
  if (!comps.is_array()) throw DataError("model document: components must be an array");
  for (const auto& c : comps) p.components.push_back(rhlp_body_from(c));
  check_same_size(p.components.size(), p.alphas.size(), "K");
  if (integer(field(j, "K")) != p.K()) throw DataError("model document: K does not match components");
  return p;
}

Json to_json(const FldaModel& model) {
  Json j = header("flda");
  j["class_family"] = to_string(model.family);
  j["class_labels"] = model.class_labels;
  j["priors"] = vec(model.priors);
  Json classes = Json::array();
  for (int g = 0; g < model.G(); ++g) {
    const auto gg = static_cast<std::size_t>(g);
    if (model.family == FldaFamily::rhlp) {
      classes.push_back(to_json(model.rhlp[gg]));
    } else {
      Json c = Json::object();
      c["basis"] = basis_to_json(model.regression[gg].basis);
      c["beta"] = vec(model.regression[gg].beta);
      c["sigma2"] = model.regression[gg].sigma2;
      classes.push_back(c);
    }
  }
  j["classes"] = classes;
  return j;
}

FldaModel flda_from_json(const Json& j) {
  check_header(j, "flda");
  FldaModel m;
  try {
    m.family = parse_flda_family(field(j, "class_family").get<std::string>());
  } catch (const ConfigError& e) {
    throw DataError(std::string("model document: ") + e.what());
  }
  m.class_labels = ints(field(j, "class_labels"));
  m.priors = read_vec(field(j, "priors"));
  const Json& classes = field(j, "classes");
  if (!classes.is_array()) throw DataError("model document: classes must be an array");
  for (const auto& c : classes) {
    if (m.family == FldaFamily::rhlp) {
      m.rhlp.push_back(rhlp_from_json(c));
    } else {
      RegressionClassModel r;
      r.basis = basis_from_json(field(c, "basis"));
      r.beta = read_vec(field(c, "beta"));
      r.sigma2 = real(field(c, "sigma2"));
      check_same_size(static_cast<std::size_t>(r.basis.columns()), r.beta.size(), "beta length");
      if (!(r.sigma2 > 0.0)) throw DataError("model document: variances must be positive");
      m.regression.push_back(std::move(r));
    }
  }
  try {
    m.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("model document: ") + e.what());
  }
  return m;
}

Json to_json(const FmdaModel& model) {
  Json j = header("fmda");
  j["class_labels"] = model.class_labels;
  j["priors"] = vec(model.priors);
  Json classes = Json::array();
  for (const auto& c : model.classes) classes.push_back(to_json(c));
  j["classes"] = classes;
  return j;
}

FmdaModel fmda_from_json(const Json& j) {
  check_header(j, "fmda");
  FmdaModel m;
  m.class_labels = ints(field(j, "class_labels"));
  m.priors = read_vec(field(j, "priors"));
  const Json& classes = field(j, "classes");
  if (!classes.is_array()) throw DataError("model document: classes must be an array");
  for (const auto& c : classes) m.classes.push_back(mixrhlp_from_json(c));
  try {
    m.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("model document: ") + e.what());
  }
  return m;
}

Json to_json(const CriterionValues& c) {
  Json j = Json::object();
  j["loglik"] = c.loglik;
  j["complete_loglik_at_map"] = c.complete_loglik_at_map;
  j["nu"] = c.nu;
  j["n"] = c.n;
  j["bic"] = c.bic;
  j["aic"] = c.aic;
  j["icl"] = c.icl;
  return j;
}

Json to_json(const FitReport& report) {
  Json j = Json::object();
  j["iterations"] = report.iterations;
  j["converged"] = report.converged;
  j["final_K"] = report.final_K;
  j["seed"] = report.seed;
  j["criteria"] = to_json(report.criteria);
  j["objective_trace"] = report.objective_trace;
  if (!report.k_trace.empty()) j["k_trace"] = report.k_trace;
  j["warnings"] = report.warnings;
  return j;
}

std::string family_of(const AnyModel& model) {
  return std::visit(
      [](const auto& m) -> std::string {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, MixRegParams>) return "mixreg";
        if constexpr (std::is_same_v<T, PwrmParams>) return "pwrm";
        if constexpr (std::is_same_v<T, MixHmmrParams>) return "mixhmmr";
        if constexpr (std::is_same_v<T, RhlpParams>) return "rhlp";
        if constexpr (std::is_same_v<T, MixRhlpParams>) return "mixrhlp";
        if constexpr (std::is_same_v<T, FldaModel>) return "flda";
        if constexpr (std::is_same_v<T, FmdaModel>) return "fmda";
      },
      model);
}

Json model_to_json(const AnyModel& model) {
  return std::visit([](const auto& m) { return to_json(m); }, model);
}

AnyModel model_from_json(const Json& j) {
  const Json& tag = field(j, "family");
  if (!tag.is_string()) throw DataError("model document: family must be a string");
  const std::string family = tag.get<std::string>();
  if (family == "mixreg") return mixreg_from_json(j);
  if (family == "pwrm") return pwrm_from_json(j);
  if (family == "mixhmmr") return mixhmmr_from_json(j);
  if (family == "rhlp") return rhlp_from_json(j);
  if (family == "mixrhlp") return mixrhlp_from_json(j);
  if (family == "flda") return flda_from_json(j);
  if (family == "fmda") return fmda_from_json(j);
  throw DataError("model document: unknown family '" + family + "'");
}

void save_model(const std::filesystem::path& path, const AnyModel& model) { write_json_file(path, model_to_json(model)); }

AnyModel load_model(const std::filesystem::path& path) {
  try {
    return model_from_json(read_json_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace curveclust
