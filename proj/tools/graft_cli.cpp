// Command-line front end: train, check, cost, dataset.
//
// Exit codes: 0 success, 1 a check failed, 2 bad config or usage,
// 3 runtime failure (I/O, corruption, divergence). Errors go to stderr
// as a single machine-parsable line.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "graft/cost.hpp"
#include "graft/harness/config.hpp"
#include "graft/harness/dataset.hpp"
#include "graft/harness/suites.hpp"
#include "graft/harness/train.hpp"

namespace {

using namespace graft;

RunConfig load_run(const std::string& path, std::optional<std::uint64_t> seed_flag) {
  RunConfig cfg = load_config(path);
  cfg.seed = resolve_seed(cfg, std::getenv("GRAFT_SEED"), seed_flag);
  return cfg;
}

void print_cost(const CostReport& rep, const std::string& format) {
  if (format == "csv") {
    std::printf("name,group,params,macs,eltwise\n");
    for (const CostRecord& r : rep.records)
      std::printf("%s,%s,%lld,%lld,%lld\n", r.name.c_str(), r.group.c_str(), r.params,
                  r.macs, r.eltwise);
    return;
  }
  std::printf("%-24s %-10s %14s %16s %14s\n", "name", "group", "params", "macs", "eltwise");
  for (const CostRecord& r : rep.records)
    std::printf("%-24s %-10s %14lld %16lld %14lld\n", r.name.c_str(), r.group.c_str(),
                r.params, r.macs, r.eltwise);
  std::printf("%-24s %-10s %14lld %16lld %14lld\n", "total", "", rep.total_params(),
              rep.total_macs(), rep.total_eltwise());
}

int cmd_train(const std::string& config, std::optional<std::uint64_t> seed) {
  const RunConfig cfg = load_run(config, seed);
  const TrainResult res = train(cfg);
  const MetricsRow& last = res.rows.back();
  std::printf("trained %lld steps: loss %.6g train_acc %.4f test_acc %.4f\n",
              static_cast<long long>(last.step), last.loss, last.train_acc, last.test_acc);
  std::printf("metrics: %s\ncheckpoint: %s\n", res.metrics_path.c_str(),
              res.checkpoint_path.c_str());
  return 0;
}

int cmd_check(const std::string& suite, const std::string& config,
              std::optional<std::uint64_t> seed) {
  const RunConfig cfg = load_run(config, seed);
  const SuiteReport rep = run_suite(suite, cfg);
  for (const CheckResult& c : rep.checks)
    std::printf("[%s] %-24s %s\n", c.pass ? "pass" : "FAIL", c.name.c_str(),
                c.detail.c_str());
  if (rep.all_pass()) {
    std::printf("%s: %zu checks passed\n", rep.suite.c_str(), rep.checks.size());
    return 0;
  }
  std::size_t failed = 0;
  for (const CheckResult& c : rep.checks) failed += c.pass ? 0 : 1;
  std::fprintf(stderr, "check-failed: %zu of %zu %s checks failed\n", failed,
               rep.checks.size(), rep.suite.c_str());
  return 1;
}

int cmd_cost(const std::string& config, const std::string& format,
             std::optional<std::uint64_t> seed) {
  const RunConfig cfg = load_run(config, seed);
  print_cost(count_flops(cfg.spec), format);
  const Index g0 = cfg.spec.grid(0);
  const ComplexityReport claim = verify_complexity_claim(cfg.spec, {g0, 2 * g0, 4 * g0});
  if (format == "csv") {
    std::printf("resolution,ratio\n");
    for (const ComplexityPoint& p : claim.points)
      std::printf("%lld,%.9f\n", static_cast<long long>(p.resolution), p.ratio);
  } else {
    for (const ComplexityPoint& p : claim.points)
      std::printf("grid %4lld: grafted/plain cost ratio %.6f\n",
                  static_cast<long long>(p.resolution), p.ratio);
  }
  if (!claim.bounded) {
    std::fprintf(stderr, "check-failed: cost ratio %.6f exceeds bound %.2f\n", claim.limit,
                 claim.bound);
    return 1;
  }
  return 0;
}

int cmd_dataset(const std::string& config, const std::string& emit,
                std::optional<std::uint64_t> seed) {
  const RunConfig cfg = load_run(config, seed);
  SyntheticTask task;
  task.image_size = cfg.spec.image_size;
  task.classes = cfg.spec.num_classes;
  task.noise = cfg.task.noise;
  validate_task(task);
  const Dataset train_split =
      generate_split(task, cfg.seed, "train", cfg.task.train_n);
  const Dataset test_split = generate_split(task, cfg.seed, "test", cfg.task.test_n);
  std::filesystem::create_directories(emit);
  const std::string train_path = emit + "/train.bin";
  const std::string test_path = emit + "/test.bin";
  emit_dataset(train_split, train_path);
  emit_dataset(test_split, test_path);
  std::printf("wrote %lld train and %lld test samples under %s\n",
              static_cast<long long>(cfg.task.train_n),
              static_cast<long long>(cfg.task.test_n), emit.c_str());
  std::printf("oracle accuracy: train %.4f test %.4f\n",
              oracle_accuracy(task, train_split), oracle_accuracy(task, test_split));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"window-attention backbone with multi-scale graft branches"};
  app.require_subcommand(1);

  std::string config, suite, emit_dir, format = "text";
  std::uint64_t seed_flag = 0;
  bool seed_set = false;

  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed_flag, "override seed (beats GRAFT_SEED and config)")
        ->each([&seed_set](const std::string&) { seed_set = true; });
  };

  CLI::App* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("config", config, "config file")->required();
  add_seed(train);

  CLI::App* check = app.add_subcommand("check", "run a self-check suite");
  check->add_option("suite", suite, "grad|invariants|cost|oracle")->required();
  check->add_option("config", config, "config file")->required();
  add_seed(check);

  CLI::App* cost = app.add_subcommand("cost", "print parameter and compute table");
  cost->add_option("config", config, "config file")->required();
  cost->add_option("--format", format, "text|csv")
      ->check(CLI::IsMember({"text", "csv"}));
  add_seed(cost);

  CLI::App* dataset = app.add_subcommand("dataset", "generate and emit the synthetic task");
  dataset->add_option("config", config, "config file")->required();
  dataset->add_option("--emit", emit_dir, "output directory")->required();
  add_seed(dataset);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::fprintf(stderr, "config-error: %s\n", e.what());
    return 2;
  }

  const std::optional<std::uint64_t> seed =
      seed_set ? std::optional<std::uint64_t>(seed_flag) : std::nullopt;
  try {
    if (train->parsed()) return cmd_train(config, seed);
    if (check->parsed()) return cmd_check(suite, config, seed);
    if (cost->parsed()) return cmd_cost(config, format, seed);
    if (dataset->parsed()) return cmd_dataset(config, emit_dir, seed);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config-error: %s\n", e.what());
    return 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "config-error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "runtime-error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime-error: %s\n", e.what());
    return 3;
  }
  return 2;
}
