#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfid/error.hpp"
#include "mfid/harness.hpp"
#include "mfid/io.hpp"

using namespace mfid;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("mfid_harness_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Column `col` of every data row.
std::vector<double> column(const fs::path& p, int col) {
  const auto ls = lines(p);
  std::vector<double> out;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    std::istringstream row(ls[i]);
    std::string cell;
    for (int c = 0; c <= col; ++c) std::getline(row, cell, ',');
    out.push_back(std::stod(cell));
  }
  return out;
}

fs::path write_config(const fs::path& dir, const nlohmann::json& j) {
  const auto p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

int run_cli(const std::string& args, const fs::path& dir) {
  const std::string cmd = std::string(MFID_CLI_PATH) + " " + args + " > " +
                          (dir / "stdout.txt").string() + " 2> " + (dir / "stderr.txt").string();
  const int st = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(st));
  return WEXITSTATUS(st);
}

nlohmann::json small_beachbar(const fs::path& out) {
  return {{"environment", "beachbar"},
          {"beachbar", {{"p_max", 0.5}}},
          {"solver", {{"eta", 1.0}, {"T", 50}, {"T_val", 60}}},
          {"optimizer", {{"lr", 0.01}}},
          {"training", {{"iterations", 200}, {"eval_every", 50}}},
          {"output", out.string()}};
}

nlohmann::json small_auction(const fs::path& out) {
  return {{"environment", "auction"},
          {"auction", {{"V", 3}, {"A", 3}, {"H", 2}, {"alpha_max", 0.5}, {"mechanism", {{"kind", "first_price"}}}}},
          {"solver", {{"T", 30}, {"T_val", 40}}},
          {"simulation", {{"Ns", {16, 64}}, {"reps", 20}}},
          {"output", out.string()}};
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("defaults and round trip") {
    const auto cfg = parse_config("{}");
    CHECK(cfg.solver.eta == 10.0);
    CHECK(cfg.solver.tau == 1e-3);
    CHECK(cfg.solver.T == 400);
    CHECK(cfg.solver.T_val == 500);
    CHECK(cfg.training.eval_every == 10);
    const auto text = to_json(cfg);
    CHECK(to_json(parse_config(text)) == text);

    auto j = nlohmann::json::parse(text);
    j["auction"]["mu0"] = {0.25, 0.25, 0.25, 0.25, 0.0};
    j["solver"]["checkpoint_stride"] = "full";
    const auto text2 = to_json(parse_config(j.dump()));
    CHECK(to_json(parse_config(text2)) == text2);
    CHECK(parse_config(text2).solver.full_cache);
  }

  TEST_CASE("unknown keys name their path") {
    auto err = [](const std::string& text) {
      try {
        parse_config(text);
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Config);
        return std::string(e.what());
      }
      return std::string();
    };
    CHECK(err(R"({"solver":{"etaa":1}})").find("solver.etaa") != std::string::npos);
    CHECK(err(R"({"auction":{"utility":{"kind":"linear","bta":1}}})").find("auction.utility.bta") !=
          std::string::npos);
    CHECK(err(R"({"bogus":1})").find("bogus") != std::string::npos);
    CHECK(err(R"({"environment":"moon"})").find("environment") != std::string::npos);
    CHECK(err(R"({"solver":{"T":"400"}})").find("solver.T") != std::string::npos);
    CHECK(err("{not json").find("JSON") != std::string::npos);
  }

  TEST_CASE("validation") {
    CHECK_THROWS_AS(parse_config(R"({"solver":{"T":500,"T_val":400}})"), Error);
    CHECK_THROWS_AS(parse_config(R"({"solver":{"T":-1}})"), Error);
    CHECK_THROWS_AS(parse_config(R"({"solver":{"eta":0}})"), Error);
    CHECK_THROWS_AS(parse_config(R"({"solver":{"checkpoint_stride":0}})"), Error);
    CHECK_THROWS_AS(parse_config(R"({"training":{"eval_every":0}})"), Error);
    CHECK_THROWS_AS(parse_config(R"({"simulation":{"reps":1}})"), Error);
    CHECK_THROWS_AS(parse_config(R"({"simulation":{"Ns":[]}})"), Error);
    CHECK_THROWS_AS(parse_config(R"({"environment":"auction","auction":{"alpha_max":1.0}})"), Error);
    CHECK_THROWS_AS(parse_config(R"({"output":""})"), Error);
    CHECK_NOTHROW(parse_config(R"({"solver":{"T":400,"T_val":400,"checkpoint_stride":null}})"));
  }

  TEST_CASE("experiment parameter layouts") {
    auto cfg = parse_config(R"({"environment":"auction","auction":{"V":10,"A":20,"H":4}})");
    Experiment ex(cfg);
    CHECK(ex.env().param_size() == 12948);
    CHECK(ex.initial_theta(3) == ex.initial_theta(3));
    CHECK(ex.initial_theta(3) != ex.initial_theta(4));
    cfg.env.mechanism = MechanismKind::FirstPrice;
    CHECK(Experiment(cfg).env().param_size() == 0);
    CHECK(Experiment(parse_config("{}")).env().param_size() == 10);
  }

  TEST_CASE("solve on a one-action game") {
    const auto dir = scratch("solve1");
    auto j = nlohmann::json{{"environment", "synthetic"},
                            {"synthetic", {{"A", 1}, {"S", 4}, {"H", 3}}},
                            {"solver", {{"T", 25}, {"T_val", 25}}},
                            {"output", (dir / "out").string()}};
    REQUIRE(run_cli("solve --config " + write_config(dir, j).string(), dir) == 0);
    const auto e = column(dir / "out" / "exploitability.csv", 1);
    CHECK(e.size() == 25);
    for (double x : e) CHECK(x <= 1e-10);
  }

  TEST_CASE("solve writes its files and reruns are byte-identical") {
    const auto dir = scratch("solve");
    auto j = small_beachbar(dir / "a");
    j["solver"]["T"] = 40;
    const auto cfg = write_config(dir, j);
    REQUIRE(run_cli("solve --config " + cfg.string(), dir) == 0);
    REQUIRE(run_cli("solve --config " + cfg.string() + " --out " + (dir / "b").string(), dir) == 0);
    CHECK(lines(dir / "a" / "exploitability.csv").size() == 41);
    CHECK(lines(dir / "a" / "exploitability.csv")[0] == "t,exploitability");
    CHECK(lines(dir / "a" / "flow.csv")[0] == "h,s,a,mass");
    CHECK(lines(dir / "a" / "flow.csv").size() == 1 + 5 * 10 * 3);
    for (const char* f : {"exploitability.csv", "flow.csv", "policy.bin"})
      CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    const auto m = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
    CHECK(m["command"] == "solve");
    CHECK(m["version"] == kVersion);
    CHECK(m["config_hash"].get<std::string>().size() == 16);
  }

  TEST_CASE("reals use 17 significant digits and a decimal point") {
    const auto dir = scratch("digits");
    auto j = small_beachbar(dir / "out");
    j["solver"]["T"] = 3;
    REQUIRE(run_cli("solve --config " + write_config(dir, j).string(), dir) == 0);
    const auto ls = lines(dir / "out" / "exploitability.csv");
    for (std::size_t i = 1; i < ls.size(); ++i) {
      const auto cell = ls[i].substr(ls[i].find(',') + 1);
      CHECK(cell.find_first_not_of("0123456789.e+-") == std::string::npos);
      const double x = std::stod(cell);
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", x);
      CHECK(cell == buf);
    }
  }

  TEST_CASE("design with zero iterations records one row") {
    const auto dir = scratch("design0");
    auto j = small_beachbar(dir / "out");
    j["training"]["iterations"] = 0;
    REQUIRE(run_cli("design --config " + write_config(dir, j).string(), dir) == 0);
    const auto ls = lines(dir / "out" / "training_curve.csv");
    REQUIRE(ls.size() == 2);
    CHECK(ls[0] == "iter,objective,exploitability");
    CHECK(ls[1].rfind("0,", 0) == 0);
    CHECK(fs::exists(dir / "out" / "theta.bin"));
  }

  TEST_CASE("beach-bar design improves the objective") {
    const auto dir = scratch("design");
    const auto cfg = write_config(dir, small_beachbar(dir / "a"));
    REQUIRE(run_cli("design --config " + cfg.string(), dir) == 0);
    const auto g = column(dir / "a" / "training_curve.csv", 1);
    REQUIRE(g.size() == 5);
    CHECK(g.back() >= g.front());
    REQUIRE(run_cli("design --config " + cfg.string() + " --out " + (dir / "b").string(), dir) == 0);
    // The manifest echoes the output directory, so it differs between a and b.
    for (const char* f : {"training_curve.csv", "theta.bin", "policy.bin"})
      CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  }

  TEST_CASE("anneal never decreases the objective") {
    const auto dir = scratch("anneal");
    auto j = small_beachbar(dir / "out");
    j["training"] = {{"iterations", 60}, {"eval_every", 1}, {"estimator", "anneal"}};
    j["optimizer"] = {{"sigma_anneal", 0.05}};
    j["solver"]["T_val"] = 50;  // anneal compares objectives at T
    REQUIRE(run_cli("design --config " + write_config(dir, j).string(), dir) == 0);
    const auto g = column(dir / "out" / "training_curve.csv", 1);
    REQUIRE(g.size() == 61);
    for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] >= g[i - 1]);
    CHECK(g.back() > g.front());
  }

  TEST_CASE("simulate-n") {
    const auto dir = scratch("simn");
    auto j = small_auction(dir / "solve");
    const auto cfg = write_config(dir, j);
    REQUIRE(run_cli("solve --config " + cfg.string(), dir) == 0);

    SUBCASE("missing policy file fails") {
      CHECK(run_cli("simulate-n --config " + cfg.string(), dir) == static_cast<int>(ErrorCode::Config));
      j["simulation"]["policy_file"] = (dir / "nope.bin").string();
      CHECK(run_cli("simulate-n --config " + write_config(dir, j).string(), dir) ==
            static_cast<int>(ErrorCode::Io));
      CHECK(slurp(dir / "stderr.txt").find("nope.bin") != std::string::npos);
    }
    SUBCASE("single population size and reruns") {
      j["simulation"]["policy_file"] = (dir / "solve" / "policy.bin").string();
      j["simulation"]["Ns"] = {16};
      j["output"] = (dir / "a").string();
      const auto c2 = write_config(dir, j);
      REQUIRE(run_cli("simulate-n --config " + c2.string() + " --seed 5", dir) == 0);
      REQUIRE(run_cli("simulate-n --config " + c2.string() + " --seed 5 --out " + (dir / "b").string(),
                      dir) == 0);
      const auto ls = lines(dir / "a" / "nstudy.csv");
      REQUIRE(ls.size() == 2);
      CHECK(ls[0] == "N,mean_gap,std_gap,reps");
      CHECK(ls[1].rfind("16,", 0) == 0);
      CHECK(slurp(dir / "a" / "nstudy.csv") == slurp(dir / "b" / "nstudy.csv"));
      const auto m = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
      CHECK(m["seed"] == 5);
      CHECK(m.contains("slope"));
    }
  }

  TEST_CASE("deterministic one-bid game has zero gap at every N") {
    const auto dir = scratch("onebid");
    auto j = small_auction(dir / "study");
    j["auction"]["H"] = 1;
    j["auction"]["A"] = 2;
    j["simulation"]["Ns"] = {16, 64, 256, 1024};
    // Everyone bids 1 in every state, so allocation and payments are deterministic.
    std::vector<double> pi(1 * 4 * 2, 0.0);
    for (int s = 0; s < 4; ++s) pi[s * 2 + 1] = 1.0;
    const auto policy = (dir / "policy.bin").string();
    write_params(policy, {Segment{"policy", {1, 4, 2}, 0}}, pi);
    j["simulation"]["policy_file"] = policy;
    REQUIRE(run_cli("simulate-n --config " + write_config(dir, j).string(), dir) == 0);
    const auto gap = column(dir / "study" / "nstudy.csv", 1);
    REQUIRE(gap.size() == 4);
    for (double x : gap) CHECK(x == 0.0);
  }

  TEST_CASE("gradcheck exit codes") {
    const auto dir = scratch("gc");
    nlohmann::json j{{"environment", "synthetic"},
                     {"synthetic", {{"S", 4}, {"A", 3}, {"H", 3}, {"params", 5}}},
                     {"solver", {{"eta", 0.5}, {"T", 20}, {"T_val", 20}}},
                     {"gradcheck", {{"tolerance", 1e-5}}},
                     {"output", (dir / "out").string()}};
    CHECK(run_cli("gradcheck --config " + write_config(dir, j).string(), dir) == 0);
    CHECK(slurp(dir / "stdout.txt").find("max relative error") != std::string::npos);

    j["gradcheck"]["tolerance"] = 0.0;
    CHECK(run_cli("gradcheck --config " + write_config(dir, j).string(), dir) ==
          static_cast<int>(ErrorCode::Tolerance));

    j["gradcheck"]["tolerance"] = 1e-5;
    j["synthetic"]["theta_coupling"] = 0.0;
    CHECK(run_cli("gradcheck --config " + write_config(dir, j).string(), dir) == 0);
    CHECK(slurp(dir / "stdout.txt").find("gradient norm 0\n") != std::string::npos);
  }

  TEST_CASE("invalid configurations exit nonzero with a message") {
    const auto dir = scratch("bad");
    std::ofstream(dir / "bad.json") << R"({"solver":{"T":10,"T_val":5}})";
    CHECK(run_cli("solve --config " + (dir / "bad.json").string(), dir) ==
          static_cast<int>(ErrorCode::Config));
    CHECK(slurp(dir / "stderr.txt").find("T_val") != std::string::npos);
    CHECK(run_cli("solve --config " + (dir / "missing.json").string(), dir) != 0);
    CHECK(run_cli("frobnicate", dir) != 0);
  }

  TEST_CASE("library entry points match the CLI") {
    const auto dir = scratch("lib");
    auto cfg = parse_config(small_beachbar(dir / "out").dump());
    cfg.training.iterations = 20;
    cfg.training.eval_every = 10;
    const auto r = run_design(cfg);
    REQUIRE(r.curve.size() == 3);
    CHECK(r.curve.back().iter == 20);
    CHECK(r.final_objective == r.curve.back().objective);
    CHECK(r.objective_evaluations == 20);  // one adjoint pass per step
    const auto g = column(dir / "out" / "training_curve.csv", 1);
    CHECK(g.back() == r.final_objective);
  }
}
