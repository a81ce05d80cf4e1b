#include "graft/harness/dataset.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

#include "graft/rng.hpp"

namespace graft {

namespace {
Index grid_side(Index classes) {
  const Index g = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(classes))));
  return g * g == classes ? g : 0;
}
}  // namespace

void validate_task(const SyntheticTask& task) {
  const Index g = grid_side(task.classes);
  if (g < 1)
    throw ConfigError("task classes " + std::to_string(task.classes) +
                      " is not a perfect square");
  if (task.image_size % g != 0)
    throw ConfigError("cell grid " + std::to_string(g) + " does not divide image " +
                      std::to_string(task.image_size));
  const Index cell = task.image_size / g;
  if (cell / 2 < 1)
    throw ConfigError("cell side " + std::to_string(cell) + " leaves no room for a patch");
  if (task.noise < 0) throw ConfigError("noise must be >= 0");
}

Dataset generate_split(const SyntheticTask& task, std::uint64_t seed, const char* stream,
                       Index n) {
  validate_task(task);
  const Index g = grid_side(task.classes);
  const Index cell = task.image_size / g;
  const Index patch = cell / 2;
  const Index hw = task.image_size;
  Rng rng(mix_seed(seed, stream));
  Dataset d;
  d.image_size = hw;
  d.classes = task.classes;
  for (Index i = 0; i < n; ++i) {
    const Index label = i % task.classes;
    const Index cy = label / g, cx = label % g;
    const Index offy = static_cast<Index>(rng.below(static_cast<std::uint64_t>(cell - patch + 1)));
    const Index offx = static_cast<Index>(rng.below(static_cast<std::uint64_t>(cell - patch + 1)));
    std::vector<double> img(static_cast<std::size_t>(hw * hw * 3), 0.0);
    for (Index y = 0; y < patch; ++y)
      for (Index x = 0; x < patch; ++x)
        for (Index ch = 0; ch < 3; ++ch)
          img[static_cast<std::size_t>(((cy * cell + offy + y) * hw + cx * cell + offx + x) * 3 +
                                       ch)] = 1.0;
    if (task.noise > 0)
      for (double& v : img) v += rng.uniform(-task.noise, task.noise);
    d.images.push_back(std::move(img));
    d.labels.push_back(label);
  }
  return d;
}

std::pair<Dataset, Dataset> generate_dataset(const SyntheticTask& task, std::uint64_t seed,
                                             Index train_n, Index test_n) {
  return {generate_split(task, seed, "train", train_n),
          generate_split(task, seed, "test", test_n)};
}

Index oracle_classify(const SyntheticTask& task, const std::vector<double>& image) {
  const Index g = grid_side(task.classes);
  const Index cell = task.image_size / g;
  Index best = 0;
  double best_mean = -1e300;
  for (Index k = 0; k < task.classes; ++k) {
    const Index cy = k / g, cx = k % g;
    double acc = 0.0;
    for (Index y = 0; y < cell; ++y)
      for (Index x = 0; x < cell; ++x)
        for (Index ch = 0; ch < 3; ++ch)
          acc += image[static_cast<std::size_t>(
              ((cy * cell + y) * task.image_size + cx * cell + x) * 3 + ch)];
    if (acc > best_mean) {
      best_mean = acc;
      best = k;
    }
  }
  return best;
}

double oracle_accuracy(const SyntheticTask& task, const Dataset& data) {
  Index hits = 0;
  for (std::size_t i = 0; i < data.images.size(); ++i)
    if (oracle_classify(task, data.images[i]) == data.labels[i]) ++hits;
  return data.images.empty() ? 0.0
                             : static_cast<double>(hits) / static_cast<double>(data.images.size());
}

void emit_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write dataset file '" + path + "'");
  auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  out.write("GRAFTDATA", 9);
  put_u32(1);
  put_u32(static_cast<std::uint32_t>(data.images.size()));
  put_u32(static_cast<std::uint32_t>(data.image_size));
  put_u32(static_cast<std::uint32_t>(data.channels));
  put_u32(static_cast<std::uint32_t>(data.classes));
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    put_u32(static_cast<std::uint32_t>(data.labels[i]));
    for (double v : data.images[i]) {
      const float f = static_cast<float>(v);
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  if (!out) throw IoError("short write to dataset file '" + path + "'");
}

}  // namespace graft
