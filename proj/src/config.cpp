#include "graft/harness/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace graft {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void fail(int line, const std::string& msg) {
  throw ConfigError("line " + std::to_string(line) + ": " + msg);
}

Index parse_int(const std::string& v, int line, const std::string& key) {
  std::size_t pos = 0;
  Index out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    fail(line, key + ": cannot parse integer '" + v + "'");
  }
  if (pos != v.size()) fail(line, key + ": cannot parse integer '" + v + "'");
  return out;
}

double parse_double(const std::string& v, int line, const std::string& key) {
  std::size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    fail(line, key + ": cannot parse number '" + v + "'");
  }
  if (pos != v.size()) fail(line, key + ": cannot parse number '" + v + "'");
  return out;
}

std::vector<Index> parse_int_list(const std::string& v, int line, const std::string& key) {
  std::vector<Index> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(trim(item), line, key));
  if (out.empty()) fail(line, key + ": empty list");
  return out;
}

DownKind parse_down(const std::string& v, int line) {
  if (v == "avgpool") return DownKind::AvgPool;
  if (v == "linproj") return DownKind::LinearProj;
  if (v == "crossattn") return DownKind::CrossAttn;
  fail(line, "unknown downsample kind '" + v + "' (avgpool|linproj|crossattn)");
}

UpKind parse_up(const std::string& v, int line) {
  if (v == "wbilinear") return UpKind::WBilinear;
  if (v == "nearest") return UpKind::Nearest;
  if (v == "crossattn") return UpKind::CrossAttn;
  fail(line, "unknown upsample kind '" + v + "' (wbilinear|nearest|crossattn)");
}

// Largest conventional window dividing the grid; the grid itself (global
// attention) when none does.
Index default_window(Index grid) {
  for (Index m : {Index(7), Index(4), Index(2)})
    if (grid % m == 0 && grid >= m) return m;
  return grid;
}

struct GraftEntry {
  Index stage, depth;
  std::string value;
  int line;
};

GraftConfig parse_graft_value(const std::string& v, int line, const BackboneSpec& spec,
                              Index stage) {
  GraftConfig cfg;
  cfg.window = spec.eff_window(stage);
  cfg.scales = max_scales(spec.grid(stage), cfg.window, 3);
  if (cfg.scales < 1) cfg.scales = 1;  // leave it to validation to reject
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) fail(line, "graft field '" + item + "' is not key:value");
    const std::string k = trim(item.substr(0, colon));
    const std::string val = trim(item.substr(colon + 1));
    if (k == "B")
      cfg.scales = parse_int(val, line, "graft B");
    else if (k == "M")
      cfg.window = parse_int(val, line, "graft M");
    else if (k == "rh")
      cfg.ratio_h = parse_int(val, line, "graft rh");
    else if (k == "rw")
      cfg.ratio_w = parse_int(val, line, "graft rw");
    else if (k == "down")
      cfg.down = parse_down(val, line);
    else if (k == "up")
      cfg.up = parse_up(val, line);
    else if (k == "scale")
      cfg.output_scale = parse_double(val, line, "graft scale");
    else
      fail(line, "unknown graft field '" + k + "' (B|M|rh|rw|down|up|scale)");
  }
  return cfg;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  BackboneSpec& spec = cfg.spec;
  bool window_set = false;
  std::string policy = "default";
  std::optional<double> global_scale;
  std::vector<GraftEntry> entries;

  std::stringstream ss(text);
  std::string raw;
  int line = 0;
  while (std::getline(ss, raw)) {
    ++line;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    raw = trim(raw);
    if (raw.empty()) continue;
    const auto eq = raw.find('=');
    if (eq == std::string::npos) fail(line, "expected key = value, got '" + raw + "'");
    const std::string key = trim(raw.substr(0, eq));
    const std::string val = trim(raw.substr(eq + 1));
    if (key.empty()) fail(line, "missing key before '='");
    if (val.empty()) fail(line, key + ": missing value");

    if (key == "kind") {
      if (val == "homogeneous")
        spec.kind = BackboneKind::Homogeneous;
      else if (val == "pyramid")
        spec.kind = BackboneKind::Pyramid;
      else
        fail(line, "unknown kind '" + val + "' (homogeneous|pyramid)");
    } else if (key == "image_size")
      spec.image_size = parse_int(val, line, key);
    else if (key == "patch_size")
      spec.patch_size = parse_int(val, line, key);
    else if (key == "depths")
      spec.depths = parse_int_list(val, line, key);
    else if (key == "channels")
      spec.channels = parse_int_list(val, line, key);
    else if (key == "heads")
      spec.heads = parse_int_list(val, line, key);
    else if (key == "window") {
      spec.window = parse_int(val, line, key);
      window_set = true;
    } else if (key == "num_classes")
      spec.num_classes = parse_int(val, line, key);
    else if (key == "graft.policy") {
      if (val != "none" && val != "default")
        fail(line, "unknown graft.policy '" + val + "' (none|default)");
      policy = val;
    } else if (key == "graft.scale")
      global_scale = parse_double(val, line, key);
    else if (key.rfind("graft.", 0) == 0) {
      const std::string rest = key.substr(6);
      const auto dot = rest.find('.');
      if (dot == std::string::npos)
        fail(line, "unknown key '" + key + "' (want graft.<stage>.<depth>)");
      const Index st = parse_int(rest.substr(0, dot), line, key);
      const Index d = parse_int(rest.substr(dot + 1), line, key);
      entries.push_back({st, d, val, line});
    } else if (key == "seed")
      cfg.seed = static_cast<std::uint64_t>(parse_int(val, line, key));
    else if (key == "precision") {
      if (val == "verify64")
        cfg.precision = Precision::Verify64;
      else if (val == "train32")
        cfg.precision = Precision::Train32;
      else
        fail(line, "unknown precision '" + val + "' (verify64|train32)");
    } else if (key == "optimizer") {
      if (val == "adamw")
        cfg.optim.kind = OptKind::AdamW;
      else if (val == "sgd")
        cfg.optim.kind = OptKind::Sgd;
      else
        fail(line, "unknown optimizer '" + val + "' (adamw|sgd)");
    } else if (key == "lr")
      cfg.optim.lr = parse_double(val, line, key);
    else if (key == "weight_decay")
      cfg.optim.weight_decay = parse_double(val, line, key);
    else if (key == "steps")
      cfg.optim.steps = parse_int(val, line, key);
    else if (key == "batch")
      cfg.optim.batch = parse_int(val, line, key);
    else if (key == "eval_every")
      cfg.optim.eval_every = parse_int(val, line, key);
    else if (key == "train_size")
      cfg.task.train_n = parse_int(val, line, key);
    else if (key == "test_size")
      cfg.task.test_n = parse_int(val, line, key);
    else if (key == "noise")
      cfg.task.noise = parse_double(val, line, key);
    else if (key == "out_dir")
      cfg.out_dir = val;
    else
      fail(line, "unknown key '" + key + "'");
  }

  if (spec.depths.size() != spec.channels.size() || spec.depths.size() != spec.heads.size())
    throw ConfigError("depths, channels and heads must list the same number of stages");
  if (!window_set) spec.window = default_window(spec.grid(0));

  if (policy == "default") spec.grafts = default_graft_policy(spec);
  for (const GraftEntry& e : entries) {
    if (e.stage < 0 || e.stage >= spec.stages())
      fail(e.line, "graft stage " + std::to_string(e.stage) + " is outside the backbone");
    const GraftConfig gc = parse_graft_value(e.value, e.line, spec, e.stage);
    auto it = std::find_if(spec.grafts.begin(), spec.grafts.end(), [&](const GraftAttachment& a) {
      return a.stage == e.stage && a.depth == e.depth;
    });
    if (it != spec.grafts.end())
      it->cfg = gc;
    else
      spec.grafts.push_back({e.stage, e.depth, gc});
  }
  std::sort(spec.grafts.begin(), spec.grafts.end(),
            [](const GraftAttachment& a, const GraftAttachment& b) {
              return a.stage != b.stage ? a.stage < b.stage : a.depth < b.depth;
            });
  if (global_scale)
    for (GraftAttachment& a : spec.grafts) a.cfg.output_scale = *global_scale;

  validate_spec(spec);
  if (cfg.optim.steps < 0 || cfg.optim.batch < 1 || cfg.optim.eval_every < 1)
    throw ConfigError("steps must be >= 0, batch and eval_every >= 1");
  if (cfg.task.train_n < 1 || cfg.task.test_n < 1)
    throw ConfigError("train_size and test_size must be >= 1");
  if (cfg.task.noise < 0) throw ConfigError("noise must be >= 0");
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

namespace {
std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<Index>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i)
    out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}
}  // namespace

std::string canonical_config_text(const RunConfig& cfg) {
  const BackboneSpec& s = cfg.spec;
  std::ostringstream os;
  os << "kind = " << (s.kind == BackboneKind::Homogeneous ? "homogeneous" : "pyramid") << "\n";
  os << "image_size = " << s.image_size << "\n";
  os << "patch_size = " << s.patch_size << "\n";
  os << "depths = " << fmt_list(s.depths) << "\n";
  os << "channels = " << fmt_list(s.channels) << "\n";
  os << "heads = " << fmt_list(s.heads) << "\n";
  os << "window = " << s.window << "\n";
  os << "num_classes = " << s.num_classes << "\n";
  os << "graft.policy = none\n";  // attachments are written out explicitly
  for (const GraftAttachment& g : s.grafts)
    os << "graft." << g.stage << "." << g.depth << " = B:" << g.cfg.scales << ",M:"
       << g.cfg.window << ",rh:" << g.cfg.ratio_h << ",rw:" << g.cfg.ratio_w << ",down:"
       << to_string(g.cfg.down) << ",up:" << to_string(g.cfg.up) << ",scale:"
       << fmt_double(g.cfg.output_scale) << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "precision = " << (cfg.precision == Precision::Verify64 ? "verify64" : "train32") << "\n";
  os << "optimizer = " << (cfg.optim.kind == OptKind::AdamW ? "adamw" : "sgd") << "\n";
  os << "lr = " << fmt_double(cfg.optim.lr) << "\n";
  os << "weight_decay = " << fmt_double(cfg.optim.weight_decay) << "\n";
  os << "steps = " << cfg.optim.steps << "\n";
  os << "batch = " << cfg.optim.batch << "\n";
  os << "eval_every = " << cfg.optim.eval_every << "\n";
  os << "train_size = " << cfg.task.train_n << "\n";
  os << "test_size = " << cfg.task.test_n << "\n";
  os << "noise = " << fmt_double(cfg.task.noise) << "\n";
  // out_dir is deliberately not rendered: the canonical text identifies the
  // run's semantics, and reruns into different directories must produce
  // byte-identical checkpoints.
  return os.str();
}

std::uint64_t resolve_seed(const RunConfig& cfg, const char* env_value,
                           std::optional<std::uint64_t> flag) {
  if (flag) return *flag;
  if (env_value && *env_value) {
    try {
      std::size_t pos = 0;
      const std::uint64_t v = std::stoull(env_value, &pos);
      if (pos == std::string(env_value).size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("GRAFT_SEED: cannot parse '") + env_value + "'");
  }
  return cfg.seed;
}

}  // namespace graft
