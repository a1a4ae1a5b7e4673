#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <unistd.h>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const char* cli = ST4D_CLI_PATH;

int run(const std::string& args) {
  const std::string cmd = std::string(cli) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("st4d_cli_" + std::to_string(::getpid()) + "_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str(const std::string& sub = "") const { return (path / sub).string(); }
};

// Small fast dataset shared across CLI cases.
void make_dataset(const TempDir& dir, const std::string& name, int subjects = 8,
                  const std::string& extra = "") {
  const int code = run("generate --out " + dir.str(name) + " --subjects " +
                       std::to_string(subjects) +
                       " --grid 6 6 6 --t-min 8 --t-max 12 --mode spatial --seed 3 " + extra);
  REQUIRE(code == 0);
}

}  // namespace

TEST_CASE("cli: version and flag validation exit codes") {
  CHECK(run("--version") == 0);
  CHECK(run("definitely-not-a-command") == 2);
  TempDir dir("flags");
  CHECK(run("train --data x --out y --crop-length 0") == 2);
}

TEST_CASE("cli: generate writes a loadable dataset and refuses overwrites") {
  TempDir dir("gen");
  make_dataset(dir, "d");
  CHECK(fs::exists(dir.path / "d" / "manifest.csv"));
  CHECK(fs::exists(dir.path / "d" / "run_manifest.json"));
  CHECK(fs::exists(dir.path / "d" / "sub000.st4d"));
  CHECK(fs::exists(dir.path / "d" / "sub007.st4d"));

  // Non-empty output directory needs --force.
  CHECK(run("generate --out " + dir.str("d") + " --subjects 8 --grid 6 6 6 --t-min 8 --t-max 12") == 2);
  CHECK(run("generate --out " + dir.str("d") +
            " --subjects 8 --grid 6 6 6 --t-min 8 --t-max 12 --mode spatial --seed 3 --force") == 0);

  // Cohort too small for two subjects per class.
  CHECK(run("generate --out " + dir.str("tiny") + " --subjects 1") == 2);
}

TEST_CASE("cli: same seed generates identical bytes, and --from-manifest replays") {
  TempDir dir("det");
  make_dataset(dir, "a");
  make_dataset(dir, "b");
  CHECK(slurp(dir.path / "a" / "sub003.st4d") == slurp(dir.path / "b" / "sub003.st4d"));
  CHECK(slurp(dir.path / "a" / "manifest.csv") == slurp(dir.path / "b" / "manifest.csv"));

  const int code = run("generate --from-manifest " + dir.str("a/run_manifest.json") + " --out " +
                       dir.str("c"));
  REQUIRE(code == 0);
  CHECK(slurp(dir.path / "a" / "sub005.st4d") == slurp(dir.path / "c" / "sub005.st4d"));
}

TEST_CASE("cli: train produces manifest, checkpoints, reports and a summary") {
  TempDir dir("train");
  make_dataset(dir, "d", 12);
  const std::string train_args = "train --data " + dir.str("d") + " --out " + dir.str("run") +
                                 " --variant conv1d --desk-scale --epochs 2 --batch 4"
                                 " --crop-length 6 --validate-every 2 --folds 3 --seed 5";
  REQUIRE(run(train_args) == 0);
  CHECK(fs::exists(dir.path / "run" / "run_manifest.json"));
  CHECK(fs::exists(dir.path / "run" / "summary.txt"));
  for (int f = 0; f < 3; ++f) {
    CHECK(fs::exists(dir.path / "run" / ("ckpt_fold" + std::to_string(f) + ".st4d")));
    CHECK(fs::exists(dir.path / "run" / ("report_fold" + std::to_string(f) + ".log")));
  }
  const std::string summary = slurp(dir.path / "run" / "summary.txt");
  CHECK(summary.find("mean.accuracy ") != std::string::npos);
  CHECK(summary.find("std.f1 ") != std::string::npos);
  CHECK(summary.find("fold.2.best_epoch ") != std::string::npos);

  // The clstm variant emits the same report schema.
  const std::string clstm_args = "train --data " + dir.str("d") + " --out " + dir.str("run2") +
                                 " --variant clstm --desk-scale --epochs 1 --batch 4"
                                 " --crop-length 6 --validate-every 1 --folds 3 --seed 5";
  REQUIRE(run(clstm_args) == 0);
  const std::string summary2 = slurp(dir.path / "run2" / "summary.txt");
  CHECK(summary2.find("mean.accuracy ") != std::string::npos);
  CHECK(summary2.find("fold.0.f1 ") != std::string::npos);

  // Subjects shorter than the crop are listed and abort the run.
  CHECK(run("train --data " + dir.str("d") + " --out " + dir.str("run3") +
            " --variant conv1d --desk-scale --epochs 1 --crop-length 50") == 3);
}

TEST_CASE("cli: train report is reproducible from its run manifest") {
  TempDir dir("replay");
  make_dataset(dir, "d", 8);
  const std::string args = "train --data " + dir.str("d") + " --out " + dir.str("r1") +
                           " --variant conv1d --desk-scale --epochs 2 --batch 4 --crop-length 6"
                           " --validate-every 2 --folds 3 --seed 11";
  REQUIRE(run(args) == 0);
  REQUIRE(run("train --from-manifest " + dir.str("r1/run_manifest.json") + " --out " +
              dir.str("r2")) == 0);
  CHECK(slurp(dir.path / "r1" / "summary.txt") == slurp(dir.path / "r2" / "summary.txt"));
  CHECK(slurp(dir.path / "r1" / "report_fold0.log") == slurp(dir.path / "r2" / "report_fold0.log"));
  CHECK(slurp(dir.path / "r1" / "ckpt_fold1.st4d") == slurp(dir.path / "r2" / "ckpt_fold1.st4d"));
}

TEST_CASE("cli: eval reports metrics, is deterministic, and checks shapes") {
  TempDir dir("eval");
  make_dataset(dir, "d", 8);
  REQUIRE(run("train --data " + dir.str("d") + " --out " + dir.str("run") +
              " --variant conv1d --desk-scale --epochs 2 --batch 4 --crop-length 6"
              " --validate-every 2 --folds 3 --seed 7") == 0);

  const std::string eval_args = "eval --checkpoint " + dir.str("run/ckpt_fold0.st4d") +
                                " --data " + dir.str("d");
  REQUIRE(run(eval_args + " --out " + dir.str("eval1.txt")) == 0);
  REQUIRE(run(eval_args + " --out " + dir.str("eval2.txt")) == 0);
  const std::string s1 = slurp(dir.path / "eval1.txt");
  CHECK(s1 == slurp(dir.path / "eval2.txt"));
  CHECK(s1.find("accuracy ") != std::string::npos);
  CHECK(s1.find("subject.sub000.prob.0 ") != std::string::npos);
  CHECK(s1.find("subject.sub000.pred ") != std::string::npos);

  // Grid mismatch between checkpoint and dataset is a data error.
  make_dataset(dir, "other", 8, "--force");
  REQUIRE(run("generate --out " + dir.str("wide") +
              " --subjects 8 --grid 8 6 6 --t-min 8 --t-max 12 --mode spatial --seed 3") == 0);
  CHECK(run("eval --checkpoint " + dir.str("run/ckpt_fold0.st4d") + " --data " + dir.str("wide")) ==
        3);
}

TEST_CASE("cli: gradcheck runs a restricted component set") {
  CHECK(run("gradcheck --component conv3d --component dense --samples 10") == 0);
  CHECK(run("gradcheck --component nonsense") == 2);
}
