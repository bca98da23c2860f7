#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <gtest/gtest.h>
#include <json.hpp>

#include <spoq/spoq.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "spoq_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(SPOQ_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string capture(const std::string& args) {
  const std::string cmd = std::string(SPOQ_CLI_PATH) + " " + args;
  std::string out;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return out;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  pclose(pipe);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

const std::string& small_instance() {
  static const std::string p = [] {
    const std::string f = path("small.txt");
    run("generate --small --seed 1 --truth-seed 1 --noise-percent 0.1 --out " + f);
    return f;
  }();
  return p;
}

} // namespace

TEST(CliGenerate, SameSeedIsByteIdentical) {
  ASSERT_EQ(run("generate --small --seed 7 --out " + path("g1.txt")), 0);
  ASSERT_EQ(run("generate --small --seed 7 --out " + path("g2.txt")), 0);
  ASSERT_EQ(run("generate --small --seed 8 --out " + path("g3.txt")), 0);
  EXPECT_EQ(slurp(path("g1.txt")), slurp(path("g2.txt")));
  EXPECT_NE(slurp(path("g1.txt")), slurp(path("g3.txt")));
}

TEST(CliGenerate, PresetHeaders) {
  ASSERT_EQ(run("generate --preset A --out " + path("a.txt")), 0);
  ASSERT_EQ(run("generate --preset B --out " + path("b.txt")), 0);
  const std::string a = slurp(path("a.txt")), b = slurp(path("b.txt"));
  EXPECT_NE(a.find("\nn_atoms 1000\n"), std::string::npos);
  EXPECT_NE(a.find("\nn_samples 1000\n"), std::string::npos);
  EXPECT_NE(a.find("\nn_nonzero 48\n"), std::string::npos);
  EXPECT_NE(b.find("\nn_nonzero 94\n"), std::string::npos);
  const spoq::Instance inst = spoq::load_instance(path("a.txt"));
  EXPECT_EQ(spoq::sparsity_degree(inst.x_true), 48);
}

TEST(CliGenerate, CoarsePeakWidthIsConfigError) {
  EXPECT_EQ(run("generate --small --peak-width 0.01 --out " + path("bad.txt")), 64);
}

TEST(CliSolve, SpoqWritesSortedReportAndTrace) {
  ASSERT_EQ(run("solve --instance " + small_instance() + " --out " + path("spoq")), 0);
  const std::string text = slurp(path("spoq.json"));
  const auto j = nlohmann::json::parse(text);
  EXPECT_EQ(j["solver_id"], "trvmfb");
  EXPECT_EQ(j["status"], "converged");
  EXPECT_TRUE(j.contains("config_hash"));
  std::string prev;
  for (const auto& [k, v] : j.items()) {
    EXPECT_LT(prev, k);
    prev = k;
  }
  const std::string trace = slurp(path("spoq_trace.csv"));
  EXPECT_EQ(trace.rfind("iteration,objective,step_norm", 0), 0u);
  EXPECT_EQ(static_cast<int>(std::count(trace.begin(), trace.end(), '\n')), j["iterations"].get<int>() + 1);
}

TEST(CliSolve, L1KeepsMoreAtomsThanSpoq) {
  ASSERT_EQ(run("solve --instance " + small_instance() + " --out " + path("s")), 0);
  ASSERT_EQ(run("solve --instance " + small_instance() + " --penalty l1 --out " + path("l")), 0);
  const auto s = nlohmann::json::parse(slurp(path("s.json")));
  const auto l = nlohmann::json::parse(slurp(path("l.json")));
  EXPECT_EQ(l["solver_id"], "pd");
  EXPECT_GT(l["sparsity_estimate"].get<int>(), s["sparsity_estimate"].get<int>());
}

TEST(CliSolve, IterationCapHasOwnExitCode) {
  EXPECT_EQ(run("solve --instance " + small_instance() + " --max-outer 1 --out " + path("cap")), 2);
}

TEST(CliSolve, InputErrorsExit64) {
  EXPECT_EQ(run("solve --instance " + small_instance() + " --penalty l1 --solver trvmfb --out " + path("x")), 64);
  EXPECT_EQ(run("solve --instance " + path("missing.txt") + " --out " + path("x")), 64);
  EXPECT_EQ(run("solve --instance " + small_instance() + " --p 2.5 --out " + path("x")), 64);
  EXPECT_EQ(run("solve --instance " + small_instance() + " --gamma 2 --out " + path("x")), 64);
  EXPECT_EQ(run("solve --out " + path("x")), 64);
  EXPECT_EQ(run("frobnicate"), 64);
}

TEST(CliSolve, UnwritableOutputIsIoError) {
  EXPECT_EQ(run("solve --instance " + small_instance() + " --out /nonexistent/dir/out"), 74);
}

TEST(CliDefaults, PrintsParseablePlan) {
  const std::string ini = capture("defaults");
  EXPECT_NE(ini.find("[solver]"), std::string::npos);
  std::istringstream is(ini);
  EXPECT_EQ(spoq::plan_to_ini(spoq::parse_plan(is)), ini);
}

TEST(CliBenchmark, EmptyPlanSucceeds) {
  const std::string plan = path("empty.ini");
  std::ofstream(plan) << "[dataset]\npreset = small\n[experiment]\nseeds = 0\n";
  ASSERT_EQ(run("benchmark " + plan + " --out " + path("bench_empty")), 0);
  EXPECT_EQ(slurp(workdir() / "bench_empty" / "table.csv").find('\n') + 1,
            slurp(workdir() / "bench_empty" / "table.csv").size());
}

TEST(CliGridsearch, WritesHeatmapAndBest) {
  ASSERT_EQ(run("gridsearch --instance " + small_instance() + " --pairs alpha:eta --points 2 --lo 1e-6 --hi 1e-1 --out " +
                path("grid")),
            0);
  const std::string heat = slurp(path("grid_heatmap.csv"));
  EXPECT_EQ(std::count(heat.begin(), heat.end(), '\n'), 5);
  const auto best = nlohmann::json::parse(slurp(path("grid_best.json")));
  EXPECT_EQ(best["grid_points"], 4);
  EXPECT_TRUE(best.contains("snr_db"));
}
