#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const std::string kCli = MMGMRF_CLI_PATH;

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("mmgmrf_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override {
    if (!HasFailure()) fs::remove_all(dir_);
  }

  Result run(const std::string& args) const {
    const auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = "'" + kCli + "' " + args + " >'" + out.string() + "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  fs::path path(const std::string& name) const { return dir_ / name; }
  std::string p(const std::string& name) const { return "'" + path(name).string() + "'"; }

  fs::path dir_;
};

std::vector<nlohmann::json> json_lines(const std::string& text) {
  std::vector<nlohmann::json> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] == '{') out.push_back(nlohmann::json::parse(line));
  return out;
}

nlohmann::json last_event(const std::string& err, const std::string& event) {
  nlohmann::json found;
  for (const auto& j : json_lines(err))
    if (j.value("event", "") == event) found = j;
  return found;
}

}  // namespace

TEST_F(Cli, GenerateIsByteIdentical) {
  for (const char* d : {"a", "b"}) {
    const auto r = run("--seed 1 generate --grid 5x5 --trajectories 50 --out " + p(d));
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const char* f : {"network.csv", "traces.jsonl", "truth_observations.jsonl", "truth.json"}) {
    const auto a = slurp(path("a") / f), b = slurp(path("b") / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, b) << f;
  }
  ASSERT_EQ(run("--seed 2 generate --grid 5x5 --trajectories 50 --out " + p("c")).code, 0);
  EXPECT_NE(slurp(path("a") / "traces.jsonl"), slurp(path("c") / "traces.jsonl"));
}

TEST_F(Cli, FullPipeline) {
  auto r = run("--seed 3 --threads 2 generate --grid 5x5 --trajectories 5000 --out " + p("w"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_LT(last_event(r.err, "done").at("floor_hit_rate").get<double>(), 1e-3);

  r = run("compress --network " + p("w/network.csv") + " --traces " + p("w/traces.jsonl") + " --out " + p("obs.jsonl"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto compressed = json_lines(slurp(path("obs.jsonl")));
  EXPECT_GE(compressed.size(), 4900u);

  r = run("--seed 3 learn --network " + p("w/network.csv") + " --observations " + p("obs.jsonl") + " --out " +
          p("model"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(last_event(r.err, "done").at("fit_status").get<std::string>(), "converged");
  for (const char* f : {"model.json", "markov.json", "pecm.bin", "pecm.bin.json", "precision.bin",
                        "precision.bin.json", "sketch.bin"})
    EXPECT_TRUE(fs::exists(path("model") / f)) << f;

  // A six-link query along a generated path.
  std::vector<int> six;
  for (const auto& j : json_lines(slurp(path("w/truth_observations.jsonl")))) {
    if (j.at("obs").size() < 6) continue;
    for (std::size_t i = 0; i < 6; ++i) six.push_back(j.at("obs")[i].at("link").get<int>());
    break;
  }
  ASSERT_EQ(six.size(), 6u);
  const nlohmann::json query{{"path", six}, {"K", 1000}, {"budget_s", 120.0}};
  r = run("infer --network " + p("w/network.csv") + " --model " + p("model") + " --query '" + query.dump() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto resp = json_lines(r.out);
  ASSERT_EQ(resp.size(), 1u);
  double wsum = 0;
  for (const auto& c : resp[0].at("components")) wsum += c.at("w").get<double>();
  EXPECT_NEAR(wsum, 1.0, 1e-12);
  EXPECT_TRUE(resp[0].contains("p_on_time"));
  EXPECT_TRUE(resp[0].at("fallback_links").empty());
  EXPECT_LT(last_event(r.err, "done").at("max_latency_s").get<double>(), 0.05);

  {
    std::ofstream q(path("queries.jsonl"));
    q << query.dump() << "\n\n" << nlohmann::json{{"path", {six[0], six[1]}}}.dump() << '\n';
  }
  r = run("infer --network " + p("w/network.csv") + " --model " + p("model") + " --queries " + p("queries.jsonl") +
          " --out " + p("answers.jsonl"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json_lines(slurp(path("answers.jsonl"))).size(), 2u);

  r = run("infer --exact --network " + p("w/network.csv") + " --model " + p("model") + " --query '" + query.dump() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json_lines(r.out).at(0).at("components").size(), 64u);

  r = run("evaluate --network " + p("w/network.csv") + " --model " + p("model") + " --observations " +
          p("w/truth_observations.jsonl") + " --K 200 --kl-paths 3 --out " + p("eval"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto metrics = nlohmann::json::parse(slurp(path("eval/metrics.json")));
  EXPECT_EQ(metrics.at("pp").at("count").get<std::size_t>(), 5000u);
  EXPECT_LE(metrics.at("pp").at("a").get<double>() + metrics.at("pp").at("b").get<double>(), 0.1);
  EXPECT_EQ(metrics.at("kl_paths").get<std::size_t>(), 3u);
  EXPECT_TRUE(fs::exists(path("eval/pp_curve.csv")));
  const auto kl = slurp(path("eval/kl.csv"));
  EXPECT_EQ(std::count(kl.begin(), kl.end(), '\n'), 7);
}

TEST_F(Cli, LearnIgnoresInputOrderAndThreadCount) {
  ASSERT_EQ(run("--seed 4 generate --grid 4x4 --trajectories 800 --out " + p("w")).code, 0);
  const auto lines = [&] {
    std::vector<std::string> v;
    std::istringstream in(slurp(path("w/truth_observations.jsonl")));
    std::string line;
    while (std::getline(in, line)) v.push_back(line);
    return v;
  }();
  {
    auto shuffled = lines;
    std::mt19937_64 rng(1);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    std::ofstream out(path("shuffled.jsonl"));
    for (const auto& l : shuffled) out << l << '\n';
  }
  const std::string base = "learn --network " + p("w/network.csv");
  ASSERT_EQ(run("--seed 4 " + base + " --observations " + p("w/truth_observations.jsonl") + " --out " + p("m1")).code, 0);
  ASSERT_EQ(run("--seed 4 --threads 3 " + base + " --observations " + p("shuffled.jsonl") + " --out " + p("m2")).code, 0);
  for (const char* f : {"model.json", "markov.json", "pecm.bin", "pecm.bin.json", "precision.bin", "sketch.bin"})
    EXPECT_EQ(slurp(path("m1") / f), slurp(path("m2") / f)) << f;
  // The precision sidecar carries diagnostics only; compare the parameters.
  auto s1 = nlohmann::json::parse(slurp(path("m1/precision.bin.json")));
  auto s2 = nlohmann::json::parse(slurp(path("m2/precision.bin.json")));
  EXPECT_EQ(s1.at("mu"), s2.at("mu"));
  EXPECT_EQ(s1.at("diagnostics").at("iterations"), s2.at("diagnostics").at("iterations"));
}

TEST_F(Cli, UnknownLinkIsAConfigError) {
  ASSERT_EQ(run("--seed 5 generate --grid 3x3 --trajectories 300 --out " + p("w")).code, 0);
  ASSERT_EQ(run("compress --network " + p("w/network.csv") + " --traces " + p("w/traces.jsonl") + " --out " +
                p("obs.jsonl"))
                .code,
            0);
  ASSERT_EQ(run("learn --network " + p("w/network.csv") + " --observations " + p("obs.jsonl") + " --out " + p("m")).code,
            0);
  const auto r = run("infer --network " + p("w/network.csv") + " --model " + p("m") +
                     " --query '{\"path\":[0,424242]}'");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("424242"), std::string::npos) << r.err;
  const auto ev = last_event(r.err, "error");
  EXPECT_EQ(ev.at("code").get<std::string>(), "InvalidArgument");
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("generate --grid 0x4 --out " + p("g")).code, 1);
  EXPECT_EQ(run("generate --grid banana --out " + p("g")).code, 1);
  EXPECT_EQ(run("compress --network " + p("missing.csv") + " --traces " + p("missing.jsonl")).code, 2);
  {
    std::ofstream bad(path("bad.csv"));
    bad << "link_id,length_m,downstream_ids\n0,ten,\n";
  }
  EXPECT_EQ(run("compress --network " + p("bad.csv") + " --traces " + p("bad.csv")).code, 2);
  EXPECT_EQ(run("learn --network " + p("bad.csv")).code, 1);  // missing --observations
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, ConfigFileWithFlagOverride) {
  {
    std::ofstream cfg(path("run.toml"));
    cfg << "seed = 7\n[generate]\ngrid = \"3x3\"\ntrajectories = 25\n";
  }
  auto r = run("--config " + p("run.toml") + " generate --out " + p("a"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json_lines(slurp(path("a/traces.jsonl"))).size(), 25u);
  EXPECT_EQ(nlohmann::json::parse(slurp(path("a/truth.json"))).at("seed").get<int>(), 7);
  EXPECT_EQ(nlohmann::json::parse(slurp(path("a/truth.json"))).at("grid"), (nlohmann::json{3, 3}));

  r = run("--config " + p("run.toml") + " --seed 8 generate --trajectories 10 --out " + p("b"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json_lines(slurp(path("b/traces.jsonl"))).size(), 10u);
  EXPECT_EQ(nlohmann::json::parse(slurp(path("b/truth.json"))).at("seed").get<int>(), 8);

  {
    std::ofstream cfg(path("bad.toml"));
    cfg << "no_such_key = 1\n";
  }
  EXPECT_EQ(run("--config " + p("bad.toml") + " generate --out " + p("c")).code, 1);
}
