#include "curveclust/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace curveclust {

Curve::Curve(std::string id, std::vector<double> xs, std::vector<double> ys, std::optional<int> label)
    : id_(std::move(id)), xs_(std::move(xs)), ys_(std::move(ys)), label_(label) {
  if (xs_.empty()) throw DataError("curve '" + id_ + "' has no observations");
  if (xs_.size() != ys_.size()) throw DataError("curve '" + id_ + "': xs and ys differ in length");
  for (std::size_t j = 0; j < xs_.size(); ++j) {
    if (!std::isfinite(xs_[j]) || !std::isfinite(ys_[j])) {
      throw DataError("curve '" + id_ + "' contains a non-finite value");
    }
    if (j > 0 && !(xs_[j] > xs_[j - 1])) {
      throw DataError("curve '" + id_ + "': abscissas must be strictly increasing");
    }
  }
  if (label_ && *label_ < 0) throw DataError("curve '" + id_ + "' has a negative label");
}

FunctionalDataset::FunctionalDataset(std::vector<Curve> curves) : curves_(std::move(curves)) {
  if (curves_.empty()) throw DataError("dataset contains no curves");
  common_grid_ = std::all_of(curves_.begin(), curves_.end(),
                             [&](const Curve& c) { return c.xs() == curves_.front().xs(); });
}

bool FunctionalDataset::labeled() const {
  return std::all_of(curves_.begin(), curves_.end(), [](const Curve& c) { return c.label().has_value(); });
}

std::vector<int> FunctionalDataset::labels() const {
  std::vector<int> out;
  out.reserve(curves_.size());
  for (const auto& c : curves_) {
    if (!c.label()) throw DataError("curve '" + c.id() + "' has no label");
    out.push_back(*c.label());
  }
  return out;
}

const std::vector<double>& FunctionalDataset::grid() const {
  require_common_grid("grid access");
  return curves_.front().xs();
}

Matrix FunctionalDataset::response_matrix() const {
  require_common_grid("response matrix");
  const auto m = static_cast<Eigen::Index>(curves_.front().size());
  Matrix Y(size(), m);
  for (int i = 0; i < size(); ++i) Y.row(i) = curves_[static_cast<std::size_t>(i)].y_vector().transpose();
  return Y;
}

double FunctionalDataset::x_min() const {
  double v = curves_.front().xs().front();
  for (const auto& c : curves_) v = std::min(v, c.xs().front());
  return v;
}

double FunctionalDataset::x_max() const {
  double v = curves_.front().xs().back();
  for (const auto& c : curves_) v = std::max(v, c.xs().back());
  return v;
}

double FunctionalDataset::pooled_variance() const {
  double sum = 0.0;
  double count = 0.0;
  for (const auto& c : curves_) {
    for (double y : c.ys()) sum += y;
    count += c.size();
  }
  const double mean = sum / count;
  double ss = 0.0;
  for (const auto& c : curves_) {
    for (double y : c.ys()) ss += (y - mean) * (y - mean);
  }
  return ss / count;
}

int FunctionalDataset::total_points() const {
  int total = 0;
  for (const auto& c : curves_) total += c.size();
  return total;
}

std::vector<std::string> FunctionalDataset::off_grid_curves() const {
  std::vector<std::string> ids;
  for (const auto& c : curves_) {
    if (c.xs() != curves_.front().xs()) ids.push_back(c.id());
  }
  return ids;
}

void FunctionalDataset::require_common_grid(const std::string& context) const {
  if (common_grid_) return;
  auto ids = off_grid_curves();
  std::string msg = context + " requires a common grid; curves off the grid of '" + curves_.front().id() + "':";
  const std::size_t shown = std::min<std::size_t>(ids.size(), 10);
  for (std::size_t i = 0; i < shown; ++i) msg += " " + ids[i];
  if (ids.size() > shown) msg += " ... (" + std::to_string(ids.size()) + " total)";
  throw DataError(msg);
}

FunctionalDataset FunctionalDataset::subset(const std::vector<int>& indices) const {
  std::vector<Curve> picked;
  picked.reserve(indices.size());
  for (int i : indices) picked.push_back(curves_.at(static_cast<std::size_t>(i)));
  return FunctionalDataset(std::move(picked));
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  char* end = nullptr;
  out = std::strtod(text.c_str(), &end);
  return end == text.c_str() + text.size() && std::isfinite(out);
}

bool parse_label(const std::string& text, int& out) {
  if (text.empty()) return false;
  char* end = nullptr;
  const long v = std::strtol(text.c_str(), &end, 10);
  if (end != text.c_str() + text.size() || v < 0 || v > std::numeric_limits<int>::max()) return false;
  out = static_cast<int>(v);
  return true;
}

struct PendingCurve {
  std::vector<std::pair<double, double>> points;
  std::optional<int> label;
};

}  // namespace

FunctionalDataset parse_csv(std::istream& in, const std::string& source_name) {
  std::string line;
  int line_no = 0;
  bool have_header = false;
  bool with_label = false;
  std::vector<std::string> order;
  std::unordered_map<std::string, PendingCurve> pending;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    for (auto& f : fields) f = trim(f);
    if (!have_header) {
      if (fields.size() == 3 && fields[0] == "curve_id" && fields[1] == "x" && fields[2] == "y") {
        with_label = false;
      } else if (fields.size() == 4 && fields[0] == "curve_id" && fields[1] == "x" && fields[2] == "y" &&
                 fields[3] == "label") {
        with_label = true;
      } else {
        throw DataError(source_name + ":" + std::to_string(line_no) +
                        ": expected header 'curve_id,x,y' or 'curve_id,x,y,label'");
      }
      have_header = true;
      continue;
    }
    const std::size_t expected = with_label ? 4 : 3;
    double x = 0.0;
    double y = 0.0;
    if (fields.size() != expected || fields[0].empty() || !parse_double(fields[1], x) ||
        !parse_double(fields[2], y)) {
      throw DataError(source_name + ":" + std::to_string(line_no) + ": malformed row '" + line + "'");
    }
    auto [it, inserted] = pending.try_emplace(fields[0]);
    if (inserted) order.push_back(fields[0]);
    PendingCurve& pc = it->second;
    if (with_label) {
      int label = 0;
      if (!parse_label(fields[3], label)) {
        throw DataError(source_name + ":" + std::to_string(line_no) + ": malformed label '" + fields[3] + "'");
      }
      if (pc.label && *pc.label != label) {
        throw DataError(source_name + ":" + std::to_string(line_no) + ": inconsistent label for curve '" +
                        fields[0] + "'");
      }
      pc.label = label;
    }
    pc.points.emplace_back(x, y);
  }
  if (!have_header) throw DataError(source_name + ": empty file");
  if (order.empty()) throw DataError(source_name + ": no data rows");

  std::vector<Curve> curves;
  curves.reserve(order.size());
  for (const auto& id : order) {
    auto& pc = pending.at(id);
    std::stable_sort(pc.points.begin(), pc.points.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<double> xs;
    std::vector<double> ys;
    xs.reserve(pc.points.size());
    ys.reserve(pc.points.size());
    for (const auto& [x, y] : pc.points) {
      if (!xs.empty() && x == xs.back()) {
        throw DataError(source_name + ": duplicate x=" + format_real(x) + " within curve '" + id + "'");
      }
      xs.push_back(x);
      ys.push_back(y);
    }
    curves.emplace_back(id, std::move(xs), std::move(ys), pc.label);
  }
  return FunctionalDataset(std::move(curves));
}

FunctionalDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return parse_csv(in, path.string());
}

std::string format_real(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

void write_csv(const FunctionalDataset& dataset, std::ostream& out) {
  const bool with_label = dataset.labeled();
  out << (with_label ? "curve_id,x,y,label\n" : "curve_id,x,y\n");
  for (const auto& c : dataset.curves()) {
    for (int j = 0; j < c.size(); ++j) {
      out << c.id() << ',' << format_real(c.xs()[static_cast<std::size_t>(j)]) << ','
          << format_real(c.ys()[static_cast<std::size_t>(j)]);
      if (with_label) out << ',' << *c.label();
      out << '\n';
    }
  }
}

void save_csv(const FunctionalDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  write_csv(dataset, out);
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void WaveformSpec::validate() const {
  if (n < 3) throw ConfigError("waveform: n must be >= 3");
  if (!(noise_sd >= 0.0)) throw ConfigError("waveform: noise_sd must be >= 0");
}

double waveform_base(int which, double t) {
  switch (which) {
    case 1: return std::max(6.0 - std::abs(t - 11.0), 0.0);
    case 2: return waveform_base(1, t - 4.0);
    case 3: return waveform_base(1, t + 4.0);
    default: throw std::invalid_argument("waveform base index must be 1, 2 or 3");
  }
}

FunctionalDataset generate_waveform(const WaveformSpec& spec) {
  spec.validate();
  static constexpr int kPairs[3][2] = {{1, 2}, {1, 3}, {2, 3}};
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<double> grid(21);
  std::iota(grid.begin(), grid.end(), 1.0);
  std::vector<Curve> curves;
  curves.reserve(static_cast<std::size_t>(spec.n));
  for (int i = 0; i < spec.n; ++i) {
    const int cls = i % 3 + 1;
    const auto [a, b] = std::pair{kPairs[cls - 1][0], kPairs[cls - 1][1]};
    const double u = unif(rng);
    std::vector<double> ys(grid.size());
    for (std::size_t j = 0; j < grid.size(); ++j) {
      ys[j] = u * waveform_base(a, grid[j]) + (1.0 - u) * waveform_base(b, grid[j]) + spec.noise_sd * normal(rng);
    }
    char id[32];
    std::snprintf(id, sizeof(id), "w%05d", i + 1);
    curves.emplace_back(id, grid, std::move(ys), cls);
  }
  return FunctionalDataset(std::move(curves));
}

void RegimeSpec::validate() const {
  if (K < 1 || R < 1 || n < 1) throw ConfigError("regime generator: K, R and n must be >= 1");
  if (degree < 0) throw ConfigError("regime generator: degree must be >= 0");
  if (!(noise_sd >= 0.0)) throw ConfigError("regime generator: noise_sd must be >= 0");
  if (m < R * (degree + 1)) throw ConfigError("regime generator: grid too small for R regimes");
  if (!proportions.empty()) {
    if (static_cast<int>(proportions.size()) != K) throw ConfigError("regime generator: need K proportions");
    double s = 0.0;
    for (double p : proportions) {
      if (!(p >= 0.0)) throw ConfigError("regime generator: proportions must be non-negative");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("regime generator: proportions must sum to 1");
  }
}

std::vector<int> quota_labels(int n, const std::vector<double>& proportions, std::uint64_t seed) {
  const int K = static_cast<int>(proportions.size());
  std::vector<int> counts(static_cast<std::size_t>(K));
  std::vector<std::pair<double, int>> remainders;
  int assigned = 0;
  for (int k = 0; k < K; ++k) {
    const double exact = n * proportions[static_cast<std::size_t>(k)];
    counts[static_cast<std::size_t>(k)] = static_cast<int>(std::floor(exact));
    assigned += counts[static_cast<std::size_t>(k)];
    remainders.emplace_back(exact - std::floor(exact), k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++counts[static_cast<std::size_t>(remainders[r % remainders.size()].second)];

  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < K; ++k) labels.insert(labels.end(), static_cast<std::size_t>(counts[static_cast<std::size_t>(k)]), k + 1);
  std::mt19937_64 rng(seed);
  for (std::size_t i = labels.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(labels[i - 1], labels[pick(rng)]);
  }
  return labels;
}

RegimeData generate_regime_curves(const RegimeSpec& spec) {
  spec.validate();
  std::vector<double> props = spec.proportions;
  if (props.empty()) props.assign(static_cast<std::size_t>(spec.K), 1.0 / spec.K);

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const int m = spec.m;
  std::vector<double> grid(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) grid[static_cast<std::size_t>(j)] = m == 1 ? 0.0 : static_cast<double>(j) / (m - 1);

  RegimeData out{FunctionalDataset({Curve("_", {0.0}, {0.0})}), {}, {}, {}};
  // Cut indices: regimes of near-equal length, jittered by up to a quarter of
  // the nominal length.
  std::vector<std::vector<double>> regime_sd(static_cast<std::size_t>(spec.K));
  for (int k = 0; k < spec.K; ++k) {
    std::vector<int> cuts(static_cast<std::size_t>(spec.R + 1));
    cuts.front() = 0;
    cuts.back() = m;
    const double nominal = static_cast<double>(m) / spec.R;
    for (int r = 1; r < spec.R; ++r) {
      const double jitter = (unif(rng) - 0.5) * 0.5 * nominal;
      cuts[static_cast<std::size_t>(r)] = static_cast<int>(std::lround(r * nominal + jitter));
    }
    out.change_points.push_back(cuts);

    std::vector<Vector> coefs;
    for (int r = 0; r < spec.R; ++r) {
      Vector c(spec.degree + 1);
      c[0] = -5.0 + 10.0 * unif(rng);
      for (int d = 1; d <= spec.degree; ++d) c[d] = -3.0 + 6.0 * unif(rng);
      coefs.push_back(c);
      regime_sd[static_cast<std::size_t>(k)].push_back(spec.noise_sd * (0.5 + unif(rng)));
    }
    out.coefficients.push_back(std::move(coefs));
  }

  out.labels = quota_labels(spec.n, props, derive_seed(spec.seed, 1));
  std::vector<Curve> curves;
  curves.reserve(static_cast<std::size_t>(spec.n));
  for (int i = 0; i < spec.n; ++i) {
    const int k = out.labels[static_cast<std::size_t>(i)] - 1;
    const auto& cuts = out.change_points[static_cast<std::size_t>(k)];
    std::vector<double> ys(static_cast<std::size_t>(m));
    int r = 0;
    for (int j = 0; j < m; ++j) {
      while (j >= cuts[static_cast<std::size_t>(r + 1)]) ++r;
      const Vector& c = out.coefficients[static_cast<std::size_t>(k)][static_cast<std::size_t>(r)];
      double value = 0.0;
      double xp = 1.0;
      for (Eigen::Index d = 0; d < c.size(); ++d, xp *= grid[static_cast<std::size_t>(j)]) value += c[d] * xp;
      ys[static_cast<std::size_t>(j)] = value + regime_sd[static_cast<std::size_t>(k)][static_cast<std::size_t>(r)] * normal(rng);
    }
    char id[32];
    std::snprintf(id, sizeof(id), "c%05d", i + 1);
    curves.emplace_back(id, grid, std::move(ys), k + 1);
  }
  out.data = FunctionalDataset(std::move(curves));
  return out;
}

}  // namespace curveclust
