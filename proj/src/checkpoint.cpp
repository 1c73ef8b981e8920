#include "share/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "share/errors.hpp"

namespace share {
namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

void put_bytes(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void get_raw(std::istream& in, char* dst, std::size_t n) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw DataError("checkpoint: truncated stream");
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  get_raw(in, reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  get_raw(in, reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

// Guards allocations against corrupt length fields.
constexpr std::uint64_t kMaxBytes = std::uint64_t{1} << 34;

std::string get_bytes(std::istream& in) {
  const auto n = get_u64(in);
  if (n > kMaxBytes) throw DataError("checkpoint: implausible string length");
  std::string s(n, '\0');
  if (n) get_raw(in, s.data(), n);
  return s;
}

}  // namespace

Checkpoint make_checkpoint(const Model& model, std::uint64_t seed, std::string config) {
  Checkpoint c;
  c.seed = seed;
  c.config = std::move(config);
  for (const Param* p : model.params()) c.tensors.push_back({p->name, p->shape, p->value});
  return c;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(out, ckpt.version);
  put_u64(out, ckpt.seed);
  put_bytes(out, ckpt.config);
  put_u64(out, ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    put_bytes(out, t.name);
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_u64(out, d);
    for (double v : t.data) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw DataError("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  get_raw(in, magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw DataError("checkpoint: bad magic");
  Checkpoint c;
  c.version = get_u32(in);
  if (c.version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(c.version));
  c.seed = get_u64(in);
  c.config = get_bytes(in);
  const auto count = get_u64(in);
  if (count > kMaxBytes) throw DataError("checkpoint: implausible tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = get_bytes(in);
    const auto ndim = get_u32(in);
    if (ndim > 8) throw DataError("checkpoint: tensor '" + t.name + "' has too many dimensions");
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto dim = get_u64(in);
      if (dim > kMaxBytes) throw DataError("checkpoint: implausible dimension");
      t.shape.push_back(dim);
      numel *= dim;
      if (numel > kMaxBytes / 8) throw DataError("checkpoint: tensor '" + t.name + "' too large");
    }
    t.data.resize(numel);
    for (auto& v : t.data) v = std::bit_cast<double>(get_u64(in));
    c.tensors.push_back(std::move(t));
  }
  return c;
}

void load_parameters(Model& model, const Checkpoint& ckpt) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t;
  for (Param* p : model.params()) {
    const auto it = by_name.find(p->name);
    if (it == by_name.end()) throw StructuralError("checkpoint: missing tensor '" + p->name + "'");
    if (it->second->shape != p->shape || it->second->data.size() != p->value.size())
      throw StructuralError("checkpoint: shape mismatch for '" + p->name + "'");
    p->value = it->second->data;
  }
  if (by_name.size() != model.params().size())
    throw StructuralError("checkpoint: tensor set does not match the model");
}

}  // namespace share
