#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using scnn::cli::run;

namespace {

struct Result {
  int status;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int status = run(args, out, err);
  return {status, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Every regular file under `dir`, relative path -> bytes.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return out;
}

std::vector<std::string> small_data(const fs::path& file, const std::string& system, int seed = 1) {
  return {"gen-data", "--system", system, "--seed", std::to_string(seed), "--out", file.string(), "--n-traj", "4",
          "--n-points", "20", "--t-span", "0.8", "--split", "0.5"};
}

const char* kConstraintConfig = R"({
  "system": {"kind": "magnetic"},
  "model": {"kind": "scnn_constraint", "n_cyclic": 1, "constraints": ["L"], "hidden_dim": 8},
  "train": {"steps": 4, "batch_size": 16, "log_every": 1, "seed": 2}
})";

const char* kScnnConfig = R"({
  "system": {"kind": "magnetic"},
  "model": {"kind": "scnn", "n_cyclic": 2, "hidden_dim": 8},
  "train": {"steps": 2, "batch_size": 16, "log_every": 1}
})";

const char* kHnnConfig = R"({
  "system": {"kind": "magnetic"},
  "model": {"kind": "hnn", "hidden_dim": 8},
  "loss": {"alpha1": 0.5},
  "train": {"steps": 2, "batch_size": 16, "log_every": 1}
})";

}  // namespace

TEST_CASE("gen-data") {
  const auto dir = scnn::testing::scratch_dir("cli_gen");
  const auto a = cli(small_data(dir / "a.csv", "spherical_pendulum"));
  REQUIRE(a.status == 0);
  CHECK(a.out.find("resampled initial conditions") != std::string::npos);
  CHECK(a.out.find("max relative energy drift") != std::string::npos);
  REQUIRE(cli(small_data(dir / "b.csv", "spherical_pendulum")).status == 0);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  REQUIRE(cli(small_data(dir / "c.csv", "spherical_pendulum", 2)).status == 0);
  CHECK(slurp(dir / "a.csv") != slurp(dir / "c.csv"));

  auto one_point = small_data(dir / "d.csv", "magnetic");
  one_point[9] = "1";
  const auto bad = cli(one_point);
  CHECK(bad.status == 2);
  CHECK(bad.err.rfind("error: argument: ", 0) == 0);
  CHECK_FALSE(fs::exists(dir / "d.csv"));

  const auto unknown = cli(small_data(dir / "e.csv", "pendulum"));
  CHECK(unknown.status == 2);
  CHECK(unknown.err.rfind("error: argument: ", 0) == 0);
  CHECK(cli({"gen-data", "--system"}).status == 2);
  CHECK(cli({}).status == 2);
  CHECK(cli({"--help"}).status == 0);
}

TEST_CASE("train, resume, eval, extract") {
  const auto dir = scnn::testing::scratch_dir("cli_pipeline");
  REQUIRE(cli(small_data(dir / "data.csv", "magnetic")).status == 0);
  write(dir / "constraint.json", kConstraintConfig);
  write(dir / "scnn.json", kScnnConfig);
  write(dir / "hnn.json", kHnnConfig);
  const std::string data = (dir / "data.csv").string();

  SUBCASE("scnn echoes the alpha defaults") {
    const auto r = cli({"train", "--config", (dir / "scnn.json").string(), "--data", data, "--out", (dir / "s").string()});
    REQUIRE(r.status == 0);
    const auto echo = nlohmann::json::parse(slurp(dir / "s" / "config.echo"));
    CHECK(echo["loss"]["alpha1"].get<double>() == doctest::Approx(0.01));
    CHECK(echo["loss"]["alpha2"].get<double>() == doctest::Approx(0.01));
    CHECK(echo["model"]["K"].get<int>() == 2);
    CHECK(fs::exists(dir / "s" / "checkpoints" / "manifest.json"));
    CHECK(fs::exists(dir / "s" / "checkpoints" / "best" / "manifest.json"));
    CHECK(slurp(dir / "s" / "loss_history").rfind("step,l_hnn,l_poisson,l_hqp,total\n1,", 0) == 0);
    CHECK_FALSE(fs::exists(dir / "s.partial"));

    const auto again = cli({"train", "--config", (dir / "scnn.json").string(), "--data", data, "--out", (dir / "s").string()});
    CHECK(again.status == 2);
  }

  SUBCASE("hnn warns about unused weights") {
    const auto r = cli({"train", "--config", (dir / "hnn.json").string(), "--data", data, "--out", (dir / "h").string()});
    REQUIRE(r.status == 0);
    CHECK(r.err.find("warning: loss.alpha1") != std::string::npos);
    CHECK(r.err.find("alpha unused") != std::string::npos);

    const auto x = cli({"extract", "--model", (dir / "h").string(), "--out", (dir / "h.fit").string()});
    CHECK(x.status == 1);
    CHECK(x.err.rfind("error: no-cyclic: ", 0) == 0);
  }

  SUBCASE("a mismatched dataset leaves nothing behind") {
    REQUIRE(cli(small_data(dir / "tb.csv", "two_body_grav")).status == 0);
    const auto r = cli({"train", "--config", (dir / "scnn.json").string(), "--data", (dir / "tb.csv").string(), "--out",
                        (dir / "bad").string()});
    CHECK(r.status == 1);
    CHECK(r.err.rfind("error: dimension: ", 0) == 0);
    CHECK_FALSE(fs::exists(dir / "bad"));
    CHECK_FALSE(fs::exists(dir / "bad.partial"));
  }

  SUBCASE("overrides are validated") {
    const auto r = cli({"train", "--config", (dir / "scnn.json").string(), "--data", data, "--out",
                        (dir / "o").string(), "--set", "train.batch_size=0"});
    CHECK(r.status == 2);
    const auto k = cli({"train", "--config", (dir / "scnn.json").string(), "--data", data, "--out",
                        (dir / "o").string(), "--set", "train.bogus=1"});
    CHECK(k.status == 1);
    CHECK(k.err.rfind("error: parse: ", 0) == 0);
    CHECK_FALSE(fs::exists(dir / "o"));
  }

  SUBCASE("resume matches an uninterrupted run") {
    const std::string cfg = (dir / "constraint.json").string();
    REQUIRE(cli({"train", "--config", cfg, "--data", data, "--out", (dir / "full").string(), "--set", "train.steps=8"})
                .status == 0);
    REQUIRE(cli({"train", "--config", cfg, "--data", data, "--out", (dir / "part").string()}).status == 0);
    const auto stuck = cli({"train", "--resume", "--data", data, "--out", (dir / "part").string()});
    CHECK(stuck.status == 2);
    const auto r = cli({"train", "--resume", "--data", data, "--out", (dir / "part").string(), "--set", "train.steps=8"});
    REQUIRE(r.status == 0);
    CHECK(r.out.find("resuming at step 4") != std::string::npos);
    CHECK(tree(dir / "part") == tree(dir / "full"));

    const auto e = cli({"eval", "--models", "oracle", (dir / "full").string(), "--system", "magnetic", "--data", data,
                        "--n-steps", "10"});
    REQUIRE(e.status == 0);
    const std::string report = slurp(dir / "full" / "eval" / "report.csv");
    CHECK(report.find("oracle,trajectory_mse,0,0,1,2,10\n") != std::string::npos);
    CHECK(report.find("scnn_constraint_n1,trajectory_mse,") != std::string::npos);
    CHECK(report.find("scnn_constraint_n1,L_drift,") != std::string::npos);
    CHECK(fs::exists(dir / "full" / "eval" / "trajectories" / "truth.csv"));
    CHECK(fs::exists(dir / "full" / "eval" / "trajectories" / "scnn_constraint_n1_seed0.csv"));
    CHECK(e.out.find("model,metric,mean,std,n_seeds,n_init,n_steps") != std::string::npos);

    const auto x = cli({"extract", "--model", (dir / "full").string(), "--out", (dir / "fit.txt").string(), "--n-points",
                        "200", "--n-traj", "3"});
    REQUIRE(x.status == 0);
    const std::string fit = slurp(dir / "fit.txt");
    CHECK(fit.rfind("# conservation_drift=", 0) == 0);
    CHECK(fit.find("# name=P_1 r2=1 span=1 ") != std::string::npos);
    CHECK(fit.find("# display: 1.0*q_1*p_2 - 1.0*q_2*p_1") != std::string::npos);
    CHECK(fs::exists(dir / "fit.txt.echo"));
  }

  SUBCASE("missing models") {
    const auto e = cli({"eval", "--models", (dir / "nowhere").string(), "--system", "magnetic"});
    CHECK(e.status == 1);
    CHECK(e.err.rfind("error: missing-model: ", 0) == 0);
    const auto x = cli({"extract", "--model", (dir / "nowhere").string(), "--out", (dir / "x.txt").string()});
    CHECK(x.err.rfind("error: missing-model: ", 0) == 0);
  }
}
