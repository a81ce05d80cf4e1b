#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "graft/tensor.hpp"

// Planted-patch synthetic classification. The image splits into a
// sqrt(K) x sqrt(K) cell grid; the class label names the cell holding a
// bright patch (half the cell side, +1.0 on all channels) at a random offset
// inside that cell. Uniform noise in [-noise, noise] is added everywhere.
// Noise-free images are perfectly classified by per-cell mean brightness.

namespace graft {

struct SyntheticTask {
  Index image_size = 32;
  Index classes = 4;
  double noise = 0.5;
};

struct Dataset {
  Index image_size = 0;
  Index channels = 3;
  Index classes = 0;
  std::vector<std::vector<double>> images;  // row-major [H][W][3]
  std::vector<Index> labels;
};

void validate_task(const SyntheticTask& task);

// Labels cycle 0..K-1 so the histogram is balanced by construction; patch
// offsets and noise come from a stream named by `stream`, so train and test
// never share draws.
Dataset generate_split(const SyntheticTask& task, std::uint64_t seed, const char* stream,
                       Index n);

std::pair<Dataset, Dataset> generate_dataset(const SyntheticTask& task, std::uint64_t seed,
                                             Index train_n, Index test_n);

// Mean brightness per cell (channels pooled), argmax.
Index oracle_classify(const SyntheticTask& task, const std::vector<double>& image);

double oracle_accuracy(const SyntheticTask& task, const Dataset& data);

// Binary emit: "GRAFTDATA", version, count, image, channels, classes, then
// per sample a u32 label and f32 pixels. Little-endian throughout.
void emit_dataset(const Dataset& data, const std::string& path);

}  // namespace graft
