#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

// Spawns the installed binary and checks the documented exit codes and the
// single-line machine-parsable error prefixes.

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string work_dir() {
  static const std::string dir = [] {
    const std::string d =
        (std::filesystem::temp_directory_path() / "graft_cli_test").string();
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
  }();
  return dir;
}

RunResult run_cli(const std::string& args, const std::string& env = "") {
  const std::string out = work_dir() + "/stdout.txt";
  const std::string err = work_dir() + "/stderr.txt";
  const std::string cmd =
      env + " " + std::string(GRAFT_CLI_PATH) + " " + args + " >" + out + " 2>" + err;
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string write_config(const char* name, const std::string& body) {
  const std::string path = work_dir() + "/" + name;
  std::ofstream(path) << body;
  return path;
}

const char* kToy =
    "kind = homogeneous\n"
    "image_size = 32\n"
    "patch_size = 4\n"
    "depths = 2\n"
    "channels = 8\n"
    "heads = 2\n"
    "num_classes = 4\n"
    "graft.policy = default\n";

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("cost verb prints both tables and exits zero") {
  const std::string cfg = write_config("toy.cfg", kToy);
  RunResult r = run_cli("cost " + cfg);
  CHECK(r.code == 0);
  CHECK(r.out.find("params") != std::string::npos);
  CHECK(r.out.find("total") != std::string::npos);
  CHECK(r.out.find("ratio") != std::string::npos);
  CHECK(r.err.empty());

  RunResult csv = run_cli("cost " + cfg + " --format csv");
  CHECK(csv.code == 0);
  CHECK(csv.out.find("name,group,params,macs,eltwise") != std::string::npos);
  CHECK(csv.out.find("resolution,ratio") != std::string::npos);
}

TEST_CASE("check verb runs suites and reports per-check lines") {
  const std::string cfg = write_config("toy.cfg", kToy);
  RunResult r = run_cli("check invariants " + cfg);
  CHECK(r.code == 0);
  CHECK(r.out.find("[pass]") != std::string::npos);
  CHECK(r.out.find("graft-transparency") != std::string::npos);
  CHECK(r.err.empty());
}

TEST_CASE("unknown suites and bad configs exit two with a reason") {
  const std::string cfg = write_config("toy.cfg", kToy);
  RunResult bad_suite = run_cli("check nonsense " + cfg);
  CHECK(bad_suite.code == 2);
  CHECK(bad_suite.err.rfind("config-error: ", 0) == 0);

  RunResult missing = run_cli("cost /nonexistent/toy.cfg");
  CHECK(missing.code == 2);
  CHECK(missing.err.rfind("config-error: ", 0) == 0);

  const std::string illegal =
      write_config("bad.cfg", std::string(kToy) + "graft.0.0 = B:1,M:4\n");
  RunResult first_layer = run_cli("cost " + illegal);
  CHECK(first_layer.code == 2);
  CHECK(first_layer.err.rfind("config-error: ", 0) == 0);
  CHECK(first_layer.err.find("first layer") != std::string::npos);

  RunResult no_args = run_cli("");
  CHECK(no_args.code == 2);

  RunResult bad_env = run_cli("cost " + cfg, "GRAFT_SEED=not-a-number");
  CHECK(bad_env.code == 2);
  CHECK(bad_env.err.rfind("config-error: ", 0) == 0);
}

TEST_CASE("a violated cost bound exits one") {
  const std::string cfg = write_config(
      "quadratic.cfg",
      "kind = homogeneous\n"
      "image_size = 16\n"
      "patch_size = 2\n"
      "depths = 2\n"
      "channels = 8\n"
      "heads = 2\n"
      "window = 4\n"
      "num_classes = 4\n"
      "graft.0.1 = B:1,M:4,down:crossattn,up:crossattn\n");
  RunResult r = run_cli("cost " + cfg);
  CHECK(r.code == 1);
  CHECK(r.err.rfind("check-failed: ", 0) == 0);
}

TEST_CASE("dataset verb emits splits and reports the oracle ceiling") {
  const std::string cfg = write_config("toy.cfg", kToy);
  const std::string out = work_dir() + "/data";
  RunResult r = run_cli("dataset " + cfg + " --emit " + out);
  CHECK(r.code == 0);
  CHECK(std::filesystem::exists(out + "/train.bin"));
  CHECK(std::filesystem::exists(out + "/test.bin"));
  CHECK(r.out.find("oracle accuracy") != std::string::npos);
  CHECK(slurp(out + "/train.bin").substr(0, 9) == "GRAFTDATA");

  RunResult denied = run_cli("dataset " + cfg + " --emit /proc/graft_denied/data");
  CHECK(denied.code == 3);
  CHECK(denied.err.rfind("runtime-error: ", 0) == 0);
}

TEST_CASE("train verb writes metrics and a checkpoint") {
  const std::string out = work_dir() + "/run1";
  const std::string cfg = write_config(
      "train.cfg", std::string(kToy) +
                       "steps = 4\nbatch = 2\neval_every = 2\n"
                       "train_size = 8\ntest_size = 4\n"
                       "out_dir = " + out + "\n");
  RunResult r = run_cli("train " + cfg);
  CHECK(r.code == 0);
  CHECK(r.out.find("trained 4 steps") != std::string::npos);
  CHECK(std::filesystem::exists(out + "/metrics.csv"));
  CHECK(std::filesystem::exists(out + "/model.ckpt"));
  const std::string metrics = slurp(out + "/metrics.csv");
  CHECK(metrics.rfind("step,loss,train_acc,test_acc\n", 0) == 0);

  // The seed flag beats the environment: different seeds, different weights.
  const std::string out_a = work_dir() + "/run_a";
  const std::string out_b = work_dir() + "/run_b";
  const std::string cfg_a = write_config(
      "train_a.cfg", std::string(kToy) +
                         "steps = 1\nbatch = 2\neval_every = 1\n"
                         "train_size = 8\ntest_size = 4\n"
                         "out_dir = " + out_a + "\n");
  const std::string cfg_b = write_config(
      "train_b.cfg", std::string(kToy) +
                         "steps = 1\nbatch = 2\neval_every = 1\n"
                         "train_size = 8\ntest_size = 4\n"
                         "out_dir = " + out_b + "\n");
  RunResult a = run_cli("train " + cfg_a + " --seed 3", "GRAFT_SEED=6");
  RunResult b = run_cli("train " + cfg_b, "GRAFT_SEED=6");
  CHECK(a.code == 0);
  CHECK(b.code == 0);
  CHECK(slurp(out_a + "/model.ckpt") != slurp(out_b + "/model.ckpt"));
}

}  // TEST_SUITE
