#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "graft/backbone.hpp"

// Checkpoint container. On disk:
//   "GRAFTCKPT" | u32 version | u32 echo_len | echo bytes |
//   u32 tensor_count | { u32 name_len | name | u32 rank | u64 extents... |
//   f32 data... } * | u32 crc32
// Little-endian; the trailing CRC covers every preceding byte including the
// magic. Values are stored as f32 regardless of the run's scalar width.

namespace graft {

struct TensorBlob {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::uint32_t version = 1;
  std::string spec_echo;  // canonical run config text, informational
  std::vector<TensorBlob> tensors;
};

std::string serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

template <class S>
Checkpoint snapshot(const ParamRegistry<S>& reg, std::string spec_echo) {
  Checkpoint ck;
  ck.spec_echo = std::move(spec_echo);
  for (const auto& [name, t] : reg.items) {
    TensorBlob blob;
    blob.name = name;
    blob.shape = t.shape();
    blob.data.reserve(t.value().size());
    for (S v : t.value()) blob.data.push_back(static_cast<float>(v));
    ck.tensors.push_back(std::move(blob));
  }
  return ck;
}

// Restores in registry order. Any mismatch in count, name order, or shape is
// a compatibility error naming the first offender.
template <class S>
void restore(const Checkpoint& ck, ParamRegistry<S>& reg) {
  if (ck.tensors.size() != reg.items.size())
    throw CompatError("checkpoint holds " + std::to_string(ck.tensors.size()) +
                      " tensors, model expects " + std::to_string(reg.items.size()));
  for (std::size_t i = 0; i < reg.items.size(); ++i) {
    auto& [name, t] = reg.items[i];
    const TensorBlob& blob = ck.tensors[i];
    if (blob.name != name)
      throw CompatError("checkpoint tensor '" + blob.name + "' does not match model tensor '" +
                        name + "'");
    if (blob.shape != t.shape())
      throw CompatError("checkpoint tensor '" + name + "' has shape " + shape_str(blob.shape) +
                        ", model expects " + shape_str(t.shape()));
    auto& v = t.raw();
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = static_cast<S>(blob.data[j]);
  }
}

}  // namespace graft
