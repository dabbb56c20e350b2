#include "curveclust/serialize.hpp"
#include "support.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using namespace curveclust;

namespace {

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("curveclust_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  [[nodiscard]] std::string operator/(const std::string& leaf) const { return (dir / leaf).string(); }
};

int run(const std::string& args, const std::string& stdout_file = "/dev/null") {
  const std::string cmd = "CURVECLUST_LOG=off " + std::string(CURVECLUST_CLI) + " " + args + " > " + stdout_file + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

void three_clusters(const std::string& path, std::uint64_t seed) {
  save_csv(testsupport::constant_clusters({0.0, 4.0, 8.0}, 10, 12, 0.5, seed), path);
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("fit writes the documented artifacts") {
    Scratch s("fit");
    REQUIRE(run("generate --kind waveform --n 60 --seed 3 --out-dir " + s.dir.string()) == 0);
    REQUIRE(run("fit --model mixreg --basis bspline --degree 3 --knots 3 --K 3 --in " + (s / "data.csv") + " --out-dir " +
                (s / "out")) == 0);
    for (const char* f : {"model.json", "partition.csv", "means.csv", "report.json"}) CHECK(fs::exists(s.dir / "out" / f));
    const Json report = read_json_file(s / "out/report.json");
    CHECK(report["report"]["final_K"] == 3);
    CHECK(report["config"]["model"] == "mixreg");
    CHECK(report["config"]["K"] == "3");
    CHECK(lines(s / "out/partition.csv").front() == "curve_id,hard_label,tau_1,tau_2,tau_3");
    CHECK(lines(s / "out/partition.csv").size() == 61);
    CHECK(lines(s / "out/means.csv").front() == "cluster,x,yhat");
  }

  TEST_CASE("robust fit needs no K") {
    Scratch s("robust");
    three_clusters(s / "data.csv", 1);
    REQUIRE(run("fit --model mixreg --basis poly --degree 0 --robust --in " + (s / "data.csv") + " --out-dir " + s.dir.string()) == 0);
    const Json report = read_json_file(s / "report.json");
    CHECK(report["report"]["final_K"] == 3);
  }

  TEST_CASE("segmentation families on a non-common grid exit 3") {
    Scratch s("grid");
    {
      std::ofstream out(s / "data.csv");
      out << "curve_id,x,y\na,0,1\na,1,2\na,2,3\nb,0,1\nb,1.5,2\nb,2,3\n";
    }
    CHECK(run("fit --model pwrm --K 1 --R 1 --degree 0 --in " + (s / "data.csv") + " --out-dir " + s.dir.string()) == 3);
    CHECK(run("fit --model nonsense --in " + (s / "data.csv")) == 2);
    CHECK(run("fit --model mixreg --K 1 --in " + (s / "missing.csv")) == 3);
  }

  TEST_CASE("select sweeps K and keeps the BIC winner") {
    Scratch s("select");
    three_clusters(s / "data.csv", 2);
    REQUIRE(run("select --model mixreg --basis poly --degree 0 --K 1..5 --n-init 3 --in " + (s / "data.csv") + " --out-dir " +
                s.dir.string()) == 0);
    const auto table = lines(s / "selection.csv");
    CHECK(table.front() == "K,R,loglik,nu,bic,aic,icl,status");
    CHECK(table.size() == 6);
    const Json report = read_json_file(s / "report.json");
    CHECK(report["selected"]["K"] == 3);
    CHECK(fs::exists(s.dir / "model.json"));

    Scratch one("select_one");
    three_clusters(one / "data.csv", 2);
    REQUIRE(run("select --model mixreg --basis poly --degree 0 --K 2 --in " + (one / "data.csv") + " --out-dir " +
                one.dir.string()) == 0);
    CHECK(lines(one / "selection.csv").size() == 2);
    CHECK(read_json_file(one / "report.json")["selected"]["K"] == 2);
  }

  TEST_CASE("select exits 4 when every candidate fails") {
    Scratch s("select_fail");
    save_csv(testsupport::constant_clusters({0.0}, 5, 6, 0.5, 3), s / "data.csv");
    CHECK(run("select --model mixreg --basis poly --degree 0 --K 10..11 --in " + (s / "data.csv") + " --out-dir " +
              s.dir.string()) == 4);
    const auto table = lines(s / "selection.csv");
    REQUIRE(table.size() == 3);
    CHECK(table[1].find("failed") != std::string::npos);
  }

  TEST_CASE("generate is deterministic") {
    Scratch a("gen_a");
    Scratch b("gen_b");
    REQUIRE(run("generate --kind waveform --n 500 --seed 7 --out-dir " + a.dir.string()) == 0);
    REQUIRE(run("generate --kind waveform --n 500 --seed 7 --out-dir " + b.dir.string()) == 0);
    CHECK(slurp(a / "data.csv") == slurp(b / "data.csv"));
    CHECK(slurp(a / "truth.csv") == slurp(b / "truth.csv"));
    REQUIRE(run("generate --kind regimes --n 20 --m 50 --K 2 --R 3 --seed 7 --out-dir " + a.dir.string()) == 0);
    CHECK(fs::exists(a.dir / "change_points.csv"));
  }

  TEST_CASE("evaluate the truth against itself") {
    Scratch s("eval");
    REQUIRE(run("generate --kind waveform --n 30 --seed 4 --out-dir " + s.dir.string()) == 0);
    {
      std::ofstream part(s / "partition.csv");
      part << "curve_id,hard_label\n";
      const auto truth = lines(s / "truth.csv");
      for (std::size_t i = 1; i < truth.size(); ++i) part << truth[i] << '\n';
    }
    REQUIRE(run("evaluate --in " + (s / "data.csv") + " --partition " + (s / "partition.csv") + " --out-dir " + s.dir.string()) == 0);
    const Json metrics = read_json_file(s / "metrics.json");
    CHECK(metrics["misclassification"].get<double>() == 0.0);
    CHECK(metrics["ari"].get<double>() == 1.0);
  }

  TEST_CASE("segment the step curve") {
    Scratch s("segment");
    {
      std::ofstream out(s / "step.csv");
      out << "curve_id,x,y\n";
      const double ys[] = {0, 0, 0, 5, 5, 5};
      for (int j = 0; j < 6; ++j) out << "step," << j << ',' << ys[j] << '\n';
    }
    REQUIRE(run("segment --R 2 --degree 0 --in " + (s / "step.csv") + " --out-dir " + s.dir.string()) == 0);
    const auto rows = lines(s / "segments.csv");
    REQUIRE(rows.size() == 3);
    CHECK(rows[1].rfind("step,1,0,3,", 0) == 0);
    CHECK(rows[2].rfind("step,2,3,6,", 0) == 0);
  }

  TEST_CASE("predict with a saved model") {
    Scratch s("predict");
    three_clusters(s / "data.csv", 5);
    REQUIRE(run("fit --model flda --flda-family polynomial --basis poly --degree 0 --in " + (s / "data.csv") + " --out-dir " +
                (s / "fit")) == 0);
    REQUIRE(run("predict --model-file " + (s / "fit/model.json") + " --in " + (s / "data.csv") + " --out-dir " + (s / "pred")) == 0);
    const auto rows = lines(s / "pred/predictions.csv");
    CHECK(rows.front() == "curve_id,label,posterior_1,posterior_2,posterior_3");
    CHECK(rows.size() == 31);
  }

  TEST_CASE("config file values yield to flags") {
    Scratch s("config");
    three_clusters(s / "data.csv", 6);
    {
      std::ofstream cfg(s / "run.toml");
      cfg << "[fit]\nmodel = \"mixreg\"\nbasis = \"poly\"\ndegree = 0\nK = \"2\"\nseed = 11\n";
    }
    REQUIRE(run("--config " + (s / "run.toml") + " fit --K 3 --in " + (s / "data.csv") + " --out-dir " + s.dir.string()) == 0);
    const Json report = read_json_file(s / "report.json");
    CHECK(report["config"]["K"] == "3");
    CHECK(report["config"]["seed"] == 11);
    CHECK(report["config"]["basis"] == "poly");
  }
}
