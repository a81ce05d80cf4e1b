#include "graft/harness/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <zlib.h>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace graft {

namespace {

constexpr char kMagic[] = "GRAFTCKPT";
constexpr std::size_t kMagicLen = 9;

void put_u32(std::string& out, std::uint32_t v) {
  out.append(reinterpret_cast<const char*>(&v), 4);
}

void put_u64(std::string& out, std::uint64_t v) {
  out.append(reinterpret_cast<const char*>(&v), 8);
}

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw CorruptionError("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, bytes.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

std::uint32_t crc_of(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out;
  out.append(kMagic, kMagicLen);
  put_u32(out, ck.version);
  put_u32(out, static_cast<std::uint32_t>(ck.spec_echo.size()));
  out.append(ck.spec_echo);
  put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const TensorBlob& t : ck.tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.append(t.name);
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (Index e : t.shape) put_u64(out, static_cast<std::uint64_t>(e));
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * 4);
  }
  put_u32(out, crc_of(out.data(), out.size()));
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagicLen + 4 || bytes.compare(0, kMagicLen, kMagic) != 0)
    throw CorruptionError("not a checkpoint: bad magic");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (crc_of(bytes.data(), bytes.size() - 4) != stored)
    throw CorruptionError("checkpoint checksum mismatch");
  Reader r{bytes, kMagicLen};
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != 1)
    throw CompatError("checkpoint version " + std::to_string(ck.version) + " is not supported");
  ck.spec_echo = r.str(r.u32());
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorBlob t;
    t.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    Index n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const Index e = static_cast<Index>(r.u64());
      if (e < 1) throw CorruptionError("checkpoint tensor '" + t.name + "' has extent " +
                                       std::to_string(e));
      t.shape.push_back(e);
      n *= e;
    }
    r.need(static_cast<std::size_t>(n) * 4);
    t.data.resize(static_cast<std::size_t>(n));
    std::memcpy(t.data.data(), bytes.data() + r.pos, static_cast<std::size_t>(n) * 4);
    r.pos += static_cast<std::size_t>(n) * 4;
    ck.tensors.push_back(std::move(t));
  }
  if (r.pos != bytes.size() - 4) throw CorruptionError("checkpoint has trailing bytes");
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const std::string bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace graft
