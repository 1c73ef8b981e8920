#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "share/network.hpp"

namespace share {

// Binary container, all integers little-endian:
//   magic "SHARECKP" (8 bytes), u32 version, u64 seed,
//   u64 config length + config text bytes,
//   u64 tensor count, then per tensor:
//     u64 name length + name bytes, u32 ndim, ndim x u64 dims,
//     prod(dims) x f64 (IEEE 754 binary64, little-endian).
inline constexpr char kCheckpointMagic[8] = {'S', 'H', 'A', 'R', 'E', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t seed = 0;
  std::string config;  // run config text
  std::vector<NamedTensor> tensors;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Every model parameter and buffer, in Model::params() order.
Checkpoint make_checkpoint(const Model& model, std::uint64_t seed, std::string config);

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
// Throws DataError on a bad magic, unsupported version or truncated stream.
Checkpoint read_checkpoint(std::istream& in);

// Copies tensors into a model built from the same config. Missing names or
// shape mismatches throw StructuralError.
void load_parameters(Model& model, const Checkpoint& ckpt);

}  // namespace share
