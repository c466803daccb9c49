#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

#include "cluscov/cluscov.hpp"

using namespace cluscov;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "cluscov_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

fs::path write_file(const std::string& name, const std::string& contents) {
  const fs::path path = work_dir() / name;
  std::ofstream out(path);
  out << contents;
  return path;
}

fs::path intercept_csv() {
  static const fs::path path =
      write_file("intercept.csv", "y,g\n1,a\n2,a\n3,b\n4,b\n");
  return path;
}

int run_cli(const std::string& cli_args) {
  const std::string command = std::string(CLUSCOV_CLI_PATH) + " " + cli_args + " >/dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WEXITSTATUS(status);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  json out;
  in >> out;
  return out;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("ingest_csv groups rows and keeps column names") {
  const auto sample = ingest_csv(intercept_csv().string(), "g");
  CHECK(sample.n() == 4);
  CHECK(sample.G() == 2);
  CHECK(sample.dim() == 1);
  CHECK(sample.column_names() == std::vector<std::string>{"y"});
  CHECK(sample.data()(0, 0) == 1.0);
  CHECK(sample.data()(3, 0) == 4.0);
}

TEST_CASE("ingest_csv handles interleaved and numeric cluster labels") {
  const auto path = write_file("interleaved.csv", "v,id\n1,10\n2,20\n3,10\n");
  const auto sample = ingest_csv(path.string(), "id");
  CHECK(sample.G() == 2);
  CHECK(sample.index().sizes == std::vector<Eigen::Index>{2, 1});
  CHECK(sample.data()(0, 0) == 1.0);
  CHECK(sample.data()(1, 0) == 3.0);
}

TEST_CASE("ingest_csv error paths") {
  const auto bad_cell = write_file("bad_cell.csv", "y,g\n1,a\nnope,b\n");
  try {
    ingest_csv(bad_cell.string(), "g");
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == errc::parse_error);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }

  const auto header_only = write_file("header_only.csv", "y,g\n");
  try {
    ingest_csv(header_only.string(), "g");
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == errc::empty_file);
  }

  try {
    ingest_csv(intercept_csv().string(), "missing");
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == errc::missing_column);
  }

  try {
    ingest_csv((work_dir() / "does_not_exist.csv").string(), "g");
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == errc::empty_file);
  }
}

TEST_CASE("cli fit-ols reproduces the hand example") {
  const fs::path out = work_dir() / "fit_ols.json";
  const int status =
      run_cli("fit-ols --data " + intercept_csv().string() +
              " --cluster g --y y --dof none --out " + out.string());
  CHECK(status == 0);
  const json report = read_json(out);
  CHECK(report["command"] == "fit-ols");
  CHECK(report["results"]["beta"][0].get<double>() == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(report["results"]["se"][0].get<double>() ==
        doctest::Approx(0.7071067811865476).epsilon(1e-12));
  CHECK(report["results"]["wald_all_zero"]["statistic"].get<double>() ==
        doctest::Approx(12.5).epsilon(1e-12));

  const fs::path out_stata = work_dir() / "fit_ols_stata.json";
  CHECK(run_cli("fit-ols --data " + intercept_csv().string() +
                " --cluster g --y y --dof stata --out " + out_stata.string()) == 0);
  CHECK(read_json(out_stata)["results"]["se"][0].get<double>() ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cli diagnose reproduces the hand example") {
  const auto path = write_file("sizes123.csv", "y,g\n1,a\n2,b\n3,b\n4,c\n5,c\n6,c\n");
  const fs::path out = work_dir() / "diagnose.json";
  CHECK(run_cli("diagnose --data " + path.string() + " --cluster g --r 2 --out " +
                out.string()) == 0);
  const json report = read_json(out);
  CHECK(report["results"]["max_share"].get<double>() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(report["results"]["sum_sq_share"].get<double>() ==
        doctest::Approx(14.0 / 36.0).epsilon(1e-12));
  CHECK(report["results"]["a2_bound"].get<double>() ==
        doctest::Approx(14.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("cli fit-tsls, fit-mle, and fit-gmm run end to end") {
  // small IV dataset: y = x + e, z shifts x
  std::string csv = "y,x,z,g\n";
  PhiloxRng rng(777, 0);
  for (int g = 0; g < 30; ++g) {
    const double shock = rng.gaussian();
    for (int i = 0; i < 3; ++i) {
      const double z = rng.gaussian();
      const double e = shock + rng.gaussian();
      const double x = 2.0 * z + 0.5 * e + rng.gaussian();
      const double y = x + e;
      csv += std::to_string(y) + "," + std::to_string(x) + "," + std::to_string(z) + ",g" +
             std::to_string(g) + "\n";
    }
  }
  const auto data = write_file("iv.csv", csv);

  const fs::path tsls_out = work_dir() / "tsls.json";
  CHECK(run_cli("fit-tsls --data " + data.string() + " --cluster g --y y --x x --z z --out " +
                tsls_out.string()) == 0);
  const json tsls = read_json(tsls_out);
  CHECK(tsls["results"]["beta"].size() == 2);  // intercept + x
  CHECK(std::abs(tsls["results"]["beta"][1].get<double>() - 1.0) < 0.6);

  const fs::path mle_out = work_dir() / "mle.json";
  CHECK(run_cli("fit-mle --data " + data.string() +
                " --cluster g --model gaussian_location --x y --out " + mle_out.string()) == 0);
  const json mle = read_json(mle_out);
  CHECK(mle["results"]["converged"].get<bool>());

  const fs::path gmm_out = work_dir() / "gmm.json";
  CHECK(run_cli("fit-gmm --data " + data.string() +
                " --cluster g --y y --x x --z z --weight clustered --out " + gmm_out.string()) ==
        0);
  const json gmm = read_json(gmm_out);
  CHECK(gmm["results"]["converged"].get<bool>());
  CHECK(gmm["results"]["j_test"]["df"].get<int>() == 0);  // just identified with intercepts
  CHECK(std::abs(gmm["results"]["theta"][1].get<double>() -
                 tsls["results"]["beta"][1].get<double>()) < 1e-6);
}

TEST_CASE("cli exit codes follow the error contract") {
  // config errors: exit 2
  CHECK(run_cli("fit-ols --data /nonexistent.csv --cluster g --y y") == 2);
  CHECK(run_cli("fit-ols --data " + intercept_csv().string() + " --cluster g --y missing") == 2);
  CHECK(run_cli("fit-ols --bogus-flag") == 2);
  CHECK(run_cli("diagnose --data " + intercept_csv().string() + " --cluster g --r 1.0") == 2);
  CHECK(run_cli("mc-jsize --instruments 1 --reps 10") == 2);

  // estimation errors: exit 1
  const auto nan_csv = write_file("nan.csv", "y,g\nnan,a\n2,b\n");
  CHECK(run_cli("fit-ols --data " + nan_csv.string() + " --cluster g --y y") == 1);
  const auto constant = write_file("constant.csv", "y,g\n1,a\n1,a\n1,b\n1,b\n");
  CHECK(run_cli("fit-gmm --data " + constant.string() + " --cluster g --y y --x y --z y") == 1);

  // help exits 0
  CHECK(run_cli("--help") == 0);
}

TEST_CASE("cli mc runs are reproducible byte for byte across thread counts") {
  const fs::path out1 = work_dir() / "rate1.json";
  const fs::path out2 = work_dir() / "rate2.json";
  const std::string base =
      "mc-rate --family independent --alpha 0.5 --n-grid 64,128,256,512 --reps 500 --seed 99";
  CHECK(run_cli(base + " --threads 1 --out " + out1.string()) == 0);
  CHECK(run_cli(base + " --threads 2 --out " + out2.string()) == 0);
  // the config echo records the differing --threads value; the results
  // section must match byte for byte
  CHECK(read_json(out1)["results"].dump() == read_json(out2)["results"].dump());

  // rerunning the identical resolved config reproduces the report exactly
  const fs::path out3 = work_dir() / "rate3.json";
  CHECK(run_cli(base + " --threads 1 --out " + out3.string()) == 0);
  const std::string bytes1 = read_bytes(out1);
  CHECK(!bytes1.empty());
  CHECK(bytes1 == read_bytes(out3));

  // per-replication CSV is written next to the JSON report
  CHECK(fs::exists(work_dir() / "rate1.reps.csv"));
  CHECK(read_bytes(work_dir() / "rate1.reps.csv") == read_bytes(work_dir() / "rate2.reps.csv"));
}

TEST_CASE("cli mc-coverage and mc-clt2 emit aggregate fields") {
  const fs::path cov_out = work_dir() / "cov.json";
  CHECK(run_cli("mc-coverage --family equicorrelated_perfect --n-grid 150 --cluster-size 5 "
                "--reps 1000 --seed 5 --out " +
                cov_out.string()) == 0);
  const json cov = read_json(cov_out);
  CHECK(cov["results"]["coverage"].get<double>() > 0.5);
  CHECK(cov["results"]["naive_coverage"].get<double>() <
        cov["results"]["coverage"].get<double>());

  const fs::path clt_out = work_dir() / "clt2.json";
  CHECK(run_cli("mc-clt2 --family independent --n-grid 500 --cluster-size 5 --reps 400 "
                "--seed 6 --out " +
                clt_out.string()) == 0);
  const json clt = read_json(clt_out);
  CHECK(std::abs(clt["results"]["studentized"]["mean"].get<double>()) < 0.5);
}
