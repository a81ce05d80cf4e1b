#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "graft/backbone.hpp"

// Flat `key = value` run configuration. `#` starts a comment, blank lines are
// skipped, later duplicate keys win. Graft attachments are spelled
// `graft.<stage>.<depth> = B:<n>,M:<m>,down:<kind>,up:<kind>` and override the
// policy-derived attachment at that position.

namespace graft {

enum class Precision { Verify64, Train32 };
enum class OptKind { AdamW, Sgd };

struct TaskConfig {
  Index train_n = 512;
  Index test_n = 256;
  double noise = 0.5;
};

struct OptimConfig {
  OptKind kind = OptKind::AdamW;
  double lr = 3e-3;
  double weight_decay = 0.05;
  Index steps = 500;
  Index batch = 8;
  Index eval_every = 50;
};

struct RunConfig {
  BackboneSpec spec;
  std::uint64_t seed = 0;
  Precision precision = Precision::Verify64;
  TaskConfig task;
  OptimConfig optim;
  std::string out_dir = "graft_run";
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// Deterministic round-trippable rendering; also embedded in checkpoints.
std::string canonical_config_text(const RunConfig& cfg);

// Seed precedence: explicit CLI flag, then the GRAFT_SEED environment value,
// then the config file.
std::uint64_t resolve_seed(const RunConfig& cfg, const char* env_value,
                           std::optional<std::uint64_t> flag);

}  // namespace graft
