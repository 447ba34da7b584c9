#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <sys/wait.h>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tpl/cli.hpp"
#include "tpl/json_util.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result tpl_run(std::vector<std::string> args) {
  args.insert(args.begin(), "tpl");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = tpl::cli::run(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tpl_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

json config(std::size_t tasks) {
  json j = json::parse(R"({
    "schema_version": 1,
    "dataset": {"kind": "synthetic", "classes_per_task": 2, "dim": 4, "separation": 6.0,
                "train_per_class": 40, "test_per_class": 15},
    "train": {"hidden": [8, 8], "epochs": 4, "batch_size": 16, "buffer_capacity": 16},
    "seed": 5
  })");
  j["dataset"]["tasks"] = tasks;
  return j;
}

// Trains once per test binary; the result is shared by the read-only cases.
const fs::path& trained_run() {
  static const fs::path dir = [] {
    const fs::path root = scratch("shared");
    spit(root / "config.json", config(3).dump());
    const Result r = tpl_run({"--quiet", "--out", (root / "run").string(), "train", "--config",
                              (root / "config.json").string()});
    REQUIRE(r.code == 0);
    return root / "run";
  }();
  return dir;
}

}  // namespace

TEST_CASE("malformed JSON exits 2 and names line and column") {
  const fs::path dir = scratch("malformed");
  spit(dir / "bad.json", "{\n  \"schema_version\": 1,\n  \"seed\": ,\n}");
  const Result r = tpl_run({"train", "--config", (dir / "bad.json").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("bad.json:3:") != std::string::npos);
}

TEST_CASE("unknown key and bad values exit 2") {
  const fs::path dir = scratch("unknown");
  json j = config(1);
  j["train"]["learning_rat"] = 0.1;
  spit(dir / "c.json", j.dump());
  Result r = tpl_run({"train", "--config", (dir / "c.json").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("learning_rat") != std::string::npos);

  j = config(1);
  j["train"]["epochs"] = 0;
  spit(dir / "c.json", j.dump());
  CHECK(tpl_run({"train", "--config", (dir / "c.json").string()}).code == 2);

  CHECK(tpl_run({"train", "--config", (dir / "absent.json").string()}).code == 2);
  CHECK(tpl_run({"frobnicate"}).code == 2);
  CHECK(tpl_run({"theory-check", "--case", "nope"}).code == 2);
  CHECK(tpl_run({"eval"}).code == 2);
  CHECK(tpl_run({"--help"}).code == 0);
}

TEST_CASE("single-task run") {
  const fs::path dir = scratch("single");
  spit(dir / "c.json", config(1).dump());
  const Result r = tpl_run({"--out", (dir / "run").string(), "train", "--config",
                            (dir / "c.json").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("task 1/1") != std::string::npos);
  const json traj = tpl::json_util::parse_file(dir / "run" / "trajectory.json");
  CHECK(traj.size() == 1);

  REQUIRE(tpl_run({"--quiet", "eval", "--run", (dir / "run").string()}).code == 0);
  const json m = tpl::json_util::parse_file(dir / "run" / "metrics.json");
  CHECK(m.contains("last"));

  REQUIRE(tpl_run({"--quiet", "ood-bench", "--run", (dir / "run").string()}).code == 0);
  const json bench = tpl::json_util::parse_file(dir / "run" / "ood_bench.json");
  CHECK(bench["applicable"] == false);
}

TEST_CASE("multi-task run directory layout") {
  const fs::path& run = trained_run();
  for (const char* f : {"config.json", "model.bin", "stats/task_1.json", "stats/task_2.json",
                        "stats/task_3.json", "buffer.csv", "calibration.json", "trajectory.json",
                        "losses.json"}) {
    CHECK_MESSAGE(fs::exists(run / f), f);
  }
  CHECK(tpl::json_util::parse_file(run / "trajectory.json").size() == 3);
}

TEST_CASE("predict writes one row per input") {
  const fs::path& run = trained_run();
  const fs::path dir = scratch("predict");
  spit(dir / "in.csv", "f0,f1,f2,f3\n0,0,0,0\n1.5,-2,0.25,3\n9,9,9,9\n");
  REQUIRE(tpl_run({"predict", "--run", run.string(), "--input", (dir / "in.csv").string(),
                   "--output", (dir / "out.csv").string()})
              .code == 0);
  std::istringstream lines(slurp(dir / "out.csv"));
  std::string line;
  std::getline(lines, line);
  CHECK(line == "row,predicted_class,predicted_task,p_task,score_variant");
  int rows = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    CHECK(line.rfind(std::to_string(rows) + ",", 0) == 0);
    CHECK(line.find(",canonical") != std::string::npos);
    ++rows;
  }
  CHECK(rows == 3);

  spit(dir / "bad.csv", "1,2\n");
  CHECK(tpl_run({"predict", "--run", run.string(), "--input", (dir / "bad.csv").string()}).code != 0);
}

TEST_CASE("ood-bench table") {
  const fs::path& run = trained_run();
  const fs::path dir = scratch("bench");
  REQUIRE(tpl_run({"--quiet", "--out", (dir / "b.json").string(), "ood-bench", "--run",
                   run.string()})
              .code == 0);
  const json b = tpl::json_util::parse_file(dir / "b.json");
  CHECK(b["applicable"] == true);
  CHECK(b["rows"].size() == 8);
  for (const json& row : b["rows"]) {
    CHECK(row["task_auc"].size() == 3);
    CHECK(row["mean_auc"].get<double>() >= 0.0);
    CHECK(row["mean_auc"].get<double>() <= 1.0);
  }
  CHECK(fs::exists(dir / "b.csv"));
}

TEST_CASE("dump-features") {
  const fs::path& run = trained_run();
  const fs::path dir = scratch("dump");
  const auto dump = [&](const char* name, const char* task) {
    return tpl_run({"--out", (dir / name).string(), "dump-features", "--run", run.string(),
                    "--task", task, "--split", "test"});
  };
  REQUIRE(dump("a.csv", "2").code == 0);
  REQUIRE(dump("b.csv", "2").code == 0);
  const std::string a = slurp(dir / "a.csv");
  CHECK(a == slurp(dir / "b.csv"));
  CHECK(a.rfind("row,label,raw_f0,", 0) == 0);
  CHECK(a.find("norm_f7") != std::string::npos);
  CHECK(std::count(a.begin(), a.end(), '\n') == 1 + 30);
  CHECK(dump("c.csv", "4").code == 3);
  CHECK(dump("c.csv", "0").code == 3);
}

TEST_CASE("dump-features on an empty split fails") {
  const fs::path dir = scratch("empty_split");
  json j = config(1);
  j["dataset"]["test_per_class"] = 0;
  spit(dir / "c.json", j.dump());
  const Result train = tpl_run({"--quiet", "--out", (dir / "run").string(), "train", "--config",
                                (dir / "c.json").string()});
  if (train.code != 0) {
    // An empty test split may already be rejected when training.
    CHECK(train.code >= 2);
    return;
  }
  const Result r = tpl_run({"dump-features", "--run", (dir / "run").string(), "--task", "1",
                            "--split", "test"});
  CHECK(r.code == 3);
  CHECK(r.err.find("empty_input") != std::string::npos);
}

TEST_CASE("train and eval are reproducible byte for byte") {
  const fs::path dir = scratch("repro");
  spit(dir / "c.json", config(2).dump());
  for (const char* name : {"a", "b"}) {
    REQUIRE(tpl_run({"--quiet", "--out", (dir / name).string(), "train", "--config",
                     (dir / "c.json").string()})
                .code == 0);
    REQUIRE(tpl_run({"--quiet", "eval", "--run", (dir / name).string()}).code == 0);
  }
  CHECK(slurp(dir / "a" / "metrics.json") == slurp(dir / "b" / "metrics.json"));
  CHECK(slurp(dir / "a" / "model.bin") == slurp(dir / "b" / "model.bin"));
  // A second eval reuses the NCL cache and gives the same bytes.
  const std::string first = slurp(dir / "a" / "metrics.json");
  REQUIRE(tpl_run({"--quiet", "eval", "--run", (dir / "a").string()}).code == 0);
  CHECK(slurp(dir / "a" / "metrics.json") == first);
  // --seed changes the run.
  REQUIRE(tpl_run({"--quiet", "--seed", "6", "--out", (dir / "c").string(), "train", "--config",
                   (dir / "c.json").string()})
              .code == 0);
  CHECK(slurp(dir / "c" / "model.bin") != slurp(dir / "a" / "model.bin"));
}

TEST_CASE("theory-check reports") {
  const Result r = tpl_run({"--quiet", "theory-check", "--case", "sec41", "--samples", "20000"});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j.is_object());
}

#ifdef TPL_BINARY
TEST_CASE("the binary maps errors to exit codes") {
  const fs::path dir = scratch("binary");
  spit(dir / "bad.json", "{");
  const std::string cmd = std::string("\"") + TPL_BINARY + "\" train --config \"" +
                          (dir / "bad.json").string() + "\" > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(status) == 2);
  const std::string missing_run = std::string("\"") + TPL_BINARY + "\" eval --run \"" +
                                  (dir / "nope").string() + "\" > /dev/null 2>&1";
  CHECK(WEXITSTATUS(std::system(missing_run.c_str())) == 2);
}
#endif
