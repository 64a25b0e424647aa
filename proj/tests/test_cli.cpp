#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(FMD_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (fgets(buf.data(), buf.size(), pipe) != nullptr) r.output += buf.data();
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(bool(is));
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json load_report(const std::string& path) { return json::parse(slurp(path)); }

json without_wall(json j) {
  j.erase("wall_seconds");
  return j;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("fmd_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("gen-fixture is byte-deterministic for a fixed seed") {
  TempDir tmp;
  run_cli("gen-fixture --seed 5 --M 4 --N 4 --L 3 --d-model 16 --out " + tmp.file("a.json"));
  run_cli("gen-fixture --seed 5 --M 4 --N 4 --L 3 --d-model 16 --out " + tmp.file("b.json"));
  run_cli("gen-fixture --seed 6 --M 4 --N 4 --L 3 --d-model 16 --out " + tmp.file("c.json"));
  CHECK(slurp(tmp.file("a.json")) == slurp(tmp.file("b.json")));
  CHECK(slurp(tmp.file("a.json")) != slurp(tmp.file("c.json")));
}

TEST_CASE("gen-fixture with no visual block loads back") {
  TempDir tmp;
  RunResult r =
      run_cli("gen-fixture --seed 2 --M 0 --N 3 --L 2 --d-model 16 --out " + tmp.file("f.json"));
  CHECK(r.exit_code == 0);
  RunResult g = run_cli("generate --fixture " + tmp.file("f.json") +
                        " --d-model 16 --d-ff 24 --heads 2 --layers 2 --max-tokens 2 --out " +
                        tmp.file("r.json"));
  CHECK(g.exit_code == 0);
}

TEST_CASE("generate: vanilla run is deterministic and fmd with identity masking matches") {
  TempDir tmp;
  const std::string fix = tmp.file("fix.json");
  run_cli("gen-fixture --seed 9 --M 4 --N 4 --L 4 --d-model 32 --out " + fix);
  const std::string base = " --fixture " + fix +
                           " --d-model 32 --d-ff 48 --heads 2 --layers 4 --model-seed 3"
                           " --max-tokens 4";

  RunResult v1 = run_cli("generate" + base + " --strategy vanilla --out " + tmp.file("v1.json"));
  RunResult v2 = run_cli("generate" + base + " --strategy vanilla --out " + tmp.file("v2.json"));
  CHECK(v1.exit_code == 0);
  CHECK(without_wall(load_report(tmp.file("v1.json"))) ==
        without_wall(load_report(tmp.file("v2.json"))));

  RunResult f = run_cli("generate" + base +
                        " --strategy fmd --masking identity --out " + tmp.file("f.json"));
  CHECK(f.exit_code == 0);
  CHECK(load_report(tmp.file("v1.json"))["tokens"] == load_report(tmp.file("f.json"))["tokens"]);
}

TEST_CASE("generate writes and reuses checkpoints") {
  TempDir tmp;
  const std::string fix = tmp.file("fix.json");
  run_cli("gen-fixture --seed 4 --M 3 --N 3 --L 2 --d-model 16 --out " + fix);
  const std::string model_args = " --d-model 16 --d-ff 24 --heads 2 --layers 2 --model-seed 11";
  RunResult a = run_cli("generate --fixture " + fix + model_args + " --max-tokens 3 --dump-model " +
                        tmp.file("w.bin") + " --out " + tmp.file("a.json"));
  CHECK(a.exit_code == 0);
  RunResult b = run_cli("generate --fixture " + fix + " --model " + tmp.file("w.bin") +
                        " --max-tokens 3 --out " + tmp.file("b.json"));
  CHECK(b.exit_code == 0);
  // same tokens from the seeded build and the checkpoint reload
  CHECK(load_report(tmp.file("a.json"))["tokens"] == load_report(tmp.file("b.json"))["tokens"]);
}

TEST_CASE("config file keys apply with CLI precedence and strict checking") {
  TempDir tmp;
  const std::string fix = tmp.file("fix.json");
  run_cli("gen-fixture --seed 7 --M 3 --N 3 --L 3 --d-model 16 --out " + fix);

  std::ofstream cfg(tmp.file("cfg.json"));
  cfg << R"({"fixture": ")" << fix
      << R"(", "strategy": "vanilla", "max-tokens": 2, "d-model": 16, "d-ff": 24,
          "heads": 2, "layers": 2, "out": ")"
      << tmp.file("from_cfg.json") << R"("})";
  cfg.close();
  RunResult r = run_cli("generate --config " + tmp.file("cfg.json"));
  CHECK(r.exit_code == 0);
  CHECK(slurp(tmp.file("from_cfg.json")).find("\"max-tokens\": \"2\"") != std::string::npos);

  // CLI flag beats the file
  RunResult r2 = run_cli("generate --config " + tmp.file("cfg.json") + " --max-tokens 1 --out " +
                         tmp.file("cli_wins.json"));
  CHECK(r2.exit_code == 0);
  CHECK(slurp(tmp.file("cli_wins.json")).find("\"max-tokens\": \"1\"") != std::string::npos);

  std::ofstream bad(tmp.file("bad.json"));
  bad << R"({"max-tokenz": 3})";
  bad.close();
  RunResult rb = run_cli("generate --fixture " + fix + " --config " + tmp.file("bad.json"));
  CHECK(rb.exit_code == 1);
  CHECK(rb.output.find("max-tokenz") != std::string::npos);
}

TEST_CASE("validation failures exit 1 with machine-readable errors") {
  TempDir tmp;
  RunResult r = run_cli("generate --strategy nonsense --fixture missing.json");
  CHECK(r.exit_code == 1);

  const std::string fix = tmp.file("fix.json");
  run_cli("gen-fixture --seed 3 --M 2 --N 2 --L 2 --d-model 16 --out " + fix);
  // fixture width conflicts with the model width
  RunResult mismatch = run_cli("generate --fixture " + fix + " --d-model 32");
  CHECK(mismatch.exit_code == 1);
  CHECK(mismatch.output.find("\"type\":\"validation\"") != std::string::npos);

  // missing fixture file is a runtime failure
  RunResult missing = run_cli("generate --fixture " + tmp.file("nope.json"));
  CHECK(missing.exit_code == 2);
  CHECK(missing.output.find("\"type\":\"runtime\"") != std::string::npos);
}

TEST_CASE("calibrate-alpha over a fixtures directory") {
  TempDir tmp;
  fs::create_directories(tmp.file("fixtures"));
  for (int i = 1; i <= 3; ++i)
    run_cli("gen-fixture --seed " + std::to_string(i) +
            " --M 3 --N 3 --L 3 --d-model 16 --out " + tmp.file("fixtures/f" + std::to_string(i) + ".json"));
  RunResult r = run_cli("calibrate-alpha --fixtures-dir " + tmp.file("fixtures") +
                        " --d-model 16 --d-ff 24 --heads 2 --layers 2 --out " +
                        tmp.file("cal.json"));
  CHECK(r.exit_code == 0);
  const std::string report = slurp(tmp.file("cal.json"));
  CHECK(report.find("\"builtin_default_alpha\": 0.8") != std::string::npos);
  CHECK(report.find("\"samples\"") != std::string::npos);

  RunResult empty = run_cli("calibrate-alpha --fixtures-dir " + tmp.file("fixtures_missing"));
  CHECK(empty.exit_code == 1);
}

TEST_CASE("sweep-layers over the planted scenario emits the pinned CSV schema") {
  TempDir tmp;
  RunResult r = run_cli("sweep-layers --scenario planted --scenario-samples 4 --candidates 0,1,2 "
                        "--out " + tmp.file("sweep.csv"));
  CHECK(r.exit_code == 0);
  const std::string csv = slurp(tmp.file("sweep.csv"));
  CHECK(csv.rfind("l_fork,video_mass,audio_mass,text_mass,metric,samples\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  // planted task: fork-merge answers correctly at every fork layer
  CHECK(csv.find(",1,4") != std::string::npos);
}

TEST_CASE("bench reports exact analytic ratios") {
  TempDir tmp;
  const std::string fix = tmp.file("fix.json");
  run_cli("gen-fixture --seed 8 --M 4 --N 4 --L 3 --d-model 32 --out " + fix);
  RunResult r = run_cli("bench --fixture " + fix +
                        " --d-model 32 --d-ff 48 --heads 2 --layers 8 --l-fork 2"
                        " --strategies vanilla,fmd,vcd --max-tokens 4 --out " +
                        tmp.file("bench.json"));
  CHECK(r.exit_code == 0);
  const std::string report = slurp(tmp.file("bench.json"));
  CHECK(report.find("\"fmd_vs_vanilla\": 1.25") != std::string::npos);
  CHECK(report.find("\"vcd_vs_vanilla\": 2.0") != std::string::npos);
}

TEST_CASE("selftest passes and catches a corrupted golden file") {
  TempDir tmp;
  RunResult ok = run_cli("selftest");
  CHECK(ok.exit_code == 0);
  CHECK(ok.output.find("FAIL") == std::string::npos);

  std::ofstream corrupt(tmp.file("golden.txt"));
  for (int i = 0; i < 64; ++i) corrupt << "0.5\n";
  corrupt.close();
  RunResult bad = run_cli("selftest --rng-golden " + tmp.file("golden.txt"));
  CHECK(bad.exit_code != 0);
  CHECK(bad.output.find("rng.golden_stream") != std::string::npos);
  CHECK(bad.output.find("FAIL") != std::string::npos);
}

TEST_CASE("FMD_OUT_DIR provides the default output directory") {
  TempDir tmp;
  const std::string fix = tmp.file("fix.json");
  run_cli("gen-fixture --seed 1 --M 2 --N 2 --L 2 --d-model 16 --out " + fix);
  const std::string cmd = "FMD_OUT_DIR=" + tmp.path.string() + " " + std::string(FMD_CLI_PATH) +
                          " generate --fixture " + fix +
                          " --d-model 16 --d-ff 24 --heads 2 --layers 2 --max-tokens 1 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (fgets(buf.data(), buf.size(), pipe) != nullptr) {
  }
  CHECK(WEXITSTATUS(pclose(pipe)) == 0);
  CHECK(fs::exists(tmp.file("report_generate.json")));
}
