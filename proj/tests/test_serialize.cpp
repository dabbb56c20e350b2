#include "curveclust/serialize.hpp"
#include "support.hpp"

#include <doctest.h>

#include <filesystem>

using namespace curveclust;

namespace {

FunctionalDataset small_data() {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z(0.0, 0.3);
  std::vector<Curve> curves;
  std::vector<double> xs;
  for (int j = 0; j < 20; ++j) xs.push_back(j / 19.0);
  for (int i = 0; i < 10; ++i) {
    std::vector<double> ys;
    for (double x : xs) ys.push_back((i % 2 ? 1.0 : -1.0) * (x < 0.5 ? 0.0 : 2.0) + std::sin(0.1 * i) + z(rng));
    curves.emplace_back("c" + std::to_string(i), xs, ys, 1 + i % 2);
  }
  return FunctionalDataset(std::move(curves));
}

void check_round_trip(const AnyModel& model) {
  const std::string text = dump_json(model_to_json(model));
  const AnyModel back = model_from_json(Json::parse(text));
  CHECK(family_of(back) == family_of(model));
  CHECK(dump_json(model_to_json(back)) == text);
}

}  // namespace

TEST_SUITE("serialize") {
  TEST_CASE("numbers keep 17 significant digits") {
    Json doc = Json::object();
    doc["x"] = 0.1;
    doc["y"] = 1.0 / 3.0;
    doc["v"] = Json::array({1e-300, -2.5});
    const std::string text = dump_json(doc);
    const Json back = Json::parse(text);
    CHECK(back["x"].get<double>() == 0.1);
    CHECK(back["y"].get<double>() == 1.0 / 3.0);
    CHECK(back["v"][0].get<double>() == 1e-300);
    CHECK(text.find("0.33333333333333331") != std::string::npos);
  }

  TEST_CASE("every family round-trips") {
    const FunctionalDataset d = small_data();
    FitOptions opts;
    opts.max_iter = 30;
    check_round_trip(fit_em(d, BasisSpec::bspline(3, 2), 2, opts).params);
    check_round_trip(fit_em(d, BasisSpec::spline(2, 1), 2, opts).params);
    PwrmOptions po;
    po.fit = opts;
    check_round_trip(fit_em_pwrm(d, 1, 2, {2}, po).params);
    po.constrained = true;
    check_round_trip(fit_cem_pwrm(d, 0, 2, {2}, po).params);
    MixHmmrOptions ho;
    ho.fit = opts;
    check_round_trip(fit_em_mixhmmr(d, 1, 2, {2}, ho).params);
    ho.left_right = false;
    check_round_trip(fit_em_mixhmmr(d, 0, 2, {3}, ho).params);
    check_round_trip(fit_rhlp(d, 1, 2, opts).params);
    check_round_trip(fit_em_mixrhlp(d, 1, 2, {2, 3}, opts).params);
    FldaConfig fl;
    fl.basis = BasisSpec::polynomial(2);
    check_round_trip(train_flda(d, fl));
    fl.family = FldaFamily::rhlp;
    fl.R = 2;
    check_round_trip(train_flda(d, fl));
    FmdaConfig fm;
    fm.degree = 1;
    fm.K = {1};
    fm.R = {{2}};
    fm.fit = opts;
    check_round_trip(train_fmda(d, fm));
  }

  TEST_CASE("round trip through a file preserves predictions") {
    const FunctionalDataset d = small_data();
    const MixRegParams p = fit_em(d, BasisSpec::polynomial(3), 2, FitOptions{}).params;
    const auto path = std::filesystem::temp_directory_path() / "curveclust_serialize_test.json";
    save_model(path, p);
    const auto back = std::get<MixRegParams>(load_model(path));
    std::filesystem::remove(path);
    const RegressionData rd = make_regression_data(d, p.basis);
    CHECK(weighted_log_densities(rd, p, 1) == weighted_log_densities(make_regression_data(d, back.basis), back, 1));
  }

  TEST_CASE("malformed documents are rejected") {
    const FunctionalDataset d = small_data();
    Json doc = model_to_json(fit_em(d, BasisSpec::polynomial(1), 1, FitOptions{}).params);
    Json wrong_version = doc;
    wrong_version["schema_version"] = 99;
    CHECK_THROWS_AS(model_from_json(wrong_version), DataError);
    Json wrong_family = doc;
    wrong_family["family"] = "kernel";
    CHECK_THROWS_AS(model_from_json(wrong_family), DataError);
    Json missing = doc;
    missing.erase("alphas");
    CHECK_THROWS_AS(model_from_json(missing), DataError);
    CHECK_THROWS_AS(load_model("/nonexistent/model.json"), IoError);
  }
}
