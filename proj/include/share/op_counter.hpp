#pragma once

#include <cstdint>

namespace share {

// Per-thread tallies of arithmetic issued by the layer kernels. A multiply
// "with a spike operand" is one where the activation side of a weight product
// is a spike tensor; the hard-spike path never issues any.
struct OpCounts {
  std::uint64_t multiplies = 0;
  std::uint64_t spike_operand_multiplies = 0;
  std::uint64_t accumulates = 0;

  friend bool operator==(const OpCounts&, const OpCounts&) = default;
};

inline OpCounts& op_counts() {
  thread_local OpCounts counts;
  return counts;
}

inline void reset_op_counts() { op_counts() = {}; }

}  // namespace share
