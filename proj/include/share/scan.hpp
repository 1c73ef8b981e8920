#pragma once

// Linear recurrences s_n = M s_{n-1} + F_n over block-diagonal transition
// matrices. M is stored as P independent 2x2 blocks, one per (u_j, v_j)
// state pair; state vectors use the layout [u_0..u_{P-1}, v_0..v_{P-1}].

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "share/errors.hpp"

namespace share {

template <typename T>
struct Block2 {
  T a11{1}, a12{0}, a21{0}, a22{1};

  static constexpr Block2 identity() { return {T(1), T(0), T(0), T(1)}; }
  static constexpr Block2 zero() { return {T(0), T(0), T(0), T(0)}; }

  Block2 transposed() const { return {a11, a21, a12, a22}; }

  friend bool operator==(const Block2&, const Block2&) = default;
};

// (this * rhs), i.e. apply rhs first.
template <typename T>
constexpr Block2<T> operator*(const Block2<T>& lhs, const Block2<T>& rhs) {
  return {lhs.a11 * rhs.a11 + lhs.a12 * rhs.a21,
          lhs.a11 * rhs.a12 + lhs.a12 * rhs.a22,
          lhs.a21 * rhs.a11 + lhs.a22 * rhs.a21,
          lhs.a21 * rhs.a12 + lhs.a22 * rhs.a22};
}

template <typename T>
struct BlockDiagRecurrence {
  std::vector<Block2<T>> blocks;  // P
  std::vector<T> forcing;         // L x 2P, row n = [f_u | f_v] of step n+1

  std::size_t state_size() const { return blocks.size(); }
  std::size_t length() const {
    return blocks.empty() ? 0 : forcing.size() / (2 * blocks.size());
  }

  void validate() const {
    if (blocks.empty()) throw StructuralError("recurrence has no state blocks");
    if (forcing.size() % (2 * blocks.size()) != 0) {
      throw StructuralError("forcing size " + std::to_string(forcing.size()) +
                            " is not a multiple of 2P = " +
                            std::to_string(2 * blocks.size()));
    }
  }
};

template <typename T>
struct ScanElement {
  std::vector<Block2<T>> mat;
  std::vector<T> vec;

  std::size_t state_size() const { return mat.size(); }

  static ScanElement identity(std::size_t p) {
    return {std::vector<Block2<T>>(p, Block2<T>::identity()),
            std::vector<T>(2 * p, T(0))};
  }
};

enum class ScanMode { Sequential, Parallel };

struct ScanOptions {
  // Parallel mode falls back to the sequential loop below this length.
  std::size_t sequential_threshold = 1024;
  // Worker threads per sweep level; 0 means use scan_default_threads().
  unsigned threads = 0;
  // Minimum combines per worker before a level is split across threads.
  std::size_t grain = 256;
};

struct ScanStats {
  std::size_t combine_calls = 0;
  std::size_t depth = 0;  // number of dependent sweep levels
  std::size_t scalar_multiplies = 0;
};

namespace detail {
inline std::atomic<unsigned>& default_threads_slot() {
  static std::atomic<unsigned> slot{1};
  return slot;
}
}  // namespace detail

inline unsigned scan_default_threads() { return detail::default_threads_slot().load(); }
inline void set_scan_default_threads(unsigned n) {
  detail::default_threads_slot().store(std::max(1u, n));
}

namespace detail {

// b <- a . b  (a earlier in time): (b.mat * a.mat, b.mat * a.vec + b.vec).
template <typename T>
inline void combine_inplace(const Block2<T>* a_mat, const T* a_vec, Block2<T>* b_mat,
                            T* b_vec, std::size_t p) {
  for (std::size_t j = 0; j < p; ++j) {
    const Block2<T> bm = b_mat[j];
    const T au = a_vec[j];
    const T av = a_vec[p + j];
    b_vec[j] += bm.a11 * au + bm.a12 * av;
    b_vec[p + j] += bm.a21 * au + bm.a22 * av;
    b_mat[j] = bm * a_mat[j];
  }
}

// 8 multiplies for the block product, 4 for the matrix-vector part.
constexpr std::size_t kMultipliesPerBlock = 12;

template <typename Fn>
void run_level(std::size_t count, unsigned threads, std::size_t grain, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(threads, std::max<std::size_t>(1, count / std::max<std::size_t>(1, grain)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (count + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] {
      for (std::size_t i = begin; i < end; ++i) fn(i);
    });
  }
}

}  // namespace detail

template <typename T>
ScanElement<T> combine(const ScanElement<T>& a, const ScanElement<T>& b) {
  const std::size_t p = a.state_size();
  if (b.state_size() != p || a.vec.size() != 2 * p || b.vec.size() != 2 * p) {
    throw StructuralError("combine: state sizes differ (" + std::to_string(p) + " vs " +
                          std::to_string(b.state_size()) + ")");
  }
  ScanElement<T> out = b;
  detail::combine_inplace(a.mat.data(), a.vec.data(), out.mat.data(), out.vec.data(), p);
  return out;
}

// Returns s_1..s_L as an L x 2P row-major array.
template <typename T>
std::vector<T> scan(const BlockDiagRecurrence<T>& rec, std::span<const T> s0,
                    ScanMode mode, const ScanOptions& options = {},
                    ScanStats* stats = nullptr) {
  rec.validate();
  const std::size_t p = rec.state_size();
  const std::size_t len = rec.length();
  if (len == 0) throw StructuralError("scan: empty sequence");
  if (s0.size() != 2 * p) {
    throw StructuralError("scan: initial state has size " + std::to_string(s0.size()) +
                          ", expected " + std::to_string(2 * p));
  }

  const std::size_t width = 2 * p;
  std::vector<T> out(rec.forcing);

  if (mode == ScanMode::Sequential || len < options.sequential_threshold) {
    const T* prev = s0.data();
    for (std::size_t n = 0; n < len; ++n) {
      T* cur = out.data() + n * width;
      for (std::size_t j = 0; j < p; ++j) {
        const Block2<T>& m = rec.blocks[j];
        const T pu = prev[j];
        const T pv = prev[p + j];
        cur[j] += m.a11 * pu + m.a12 * pv;
        cur[p + j] += m.a21 * pu + m.a22 * pv;
      }
      prev = cur;
    }
    return out;
  }

  // Element n carries (M, F_n); s0 is folded into the first element so the
  // inclusive prefix vector at n is s_n directly.
  std::vector<Block2<T>> mats(len * p);
  for (std::size_t n = 0; n < len; ++n) {
    std::copy(rec.blocks.begin(), rec.blocks.end(), mats.begin() + n * p);
  }
  for (std::size_t j = 0; j < p; ++j) {
    const Block2<T>& m = rec.blocks[j];
    out[j] += m.a11 * s0[j] + m.a12 * s0[p + j];
    out[p + j] += m.a21 * s0[j] + m.a22 * s0[p + j];
  }

  const unsigned threads = options.threads == 0 ? scan_default_threads() : options.threads;
  std::size_t combines = 0;
  std::size_t depth = 0;

  // Brent-Kung inclusive scan. Conceptually the array is padded to a power of
  // two with identity elements; every combine whose target lies in the padding
  // only ever feeds other padding slots, so those combines are skipped.
  std::size_t top = 1;
  while (top < len) top <<= 1;

  auto apply = [&](std::size_t src, std::size_t dst) {
    detail::combine_inplace(mats.data() + src * p, out.data() + src * width,
                            mats.data() + dst * p, out.data() + dst * width, p);
  };

  // Up-sweep.
  for (std::size_t stride = 1; stride < top; stride <<= 1) {
    const std::size_t first = 2 * stride - 1;
    if (first >= len) break;
    const std::size_t count = (len - 1 - first) / (2 * stride) + 1;
    detail::run_level(count, threads, options.grain, [&](std::size_t i) {
      const std::size_t k = first + i * 2 * stride;
      apply(k - stride, k);
    });
    combines += count;
    ++depth;
  }
  // Down-sweep.
  for (std::size_t stride = top / 2; stride >= 1; stride >>= 1) {
    const std::size_t first = 3 * stride - 1;
    if (first < len) {
      const std::size_t count = (len - 1 - first) / (2 * stride) + 1;
      detail::run_level(count, threads, options.grain, [&](std::size_t i) {
        const std::size_t k = first + i * 2 * stride;
        apply(k - stride, k);
      });
      combines += count;
      ++depth;
    }
    if (stride == 1) break;
  }

  if (stats != nullptr) {
    stats->combine_calls += combines;
    stats->depth += depth;
    stats->scalar_multiplies += combines * p * detail::kMultipliesPerBlock;
  }
  return out;
}

// Reverse-mode companion of scan(). Given g_n = dLoss/ds_n (L x 2P), returns
// the adjoints lambda_n = g_n + M^T lambda_{n+1} (lambda_{L+1} = 0), evaluated
// as a forward scan over reversed time with transposed blocks.
template <typename T>
std::vector<T> scan_adjoint(const std::vector<Block2<T>>& blocks, std::span<const T> grads,
                            ScanMode mode, const ScanOptions& options = {},
                            ScanStats* stats = nullptr) {
  const std::size_t p = blocks.size();
  BlockDiagRecurrence<T> adj;
  adj.blocks.reserve(p);
  for (const auto& b : blocks) adj.blocks.push_back(b.transposed());
  adj.forcing.assign(grads.begin(), grads.end());
  adj.validate();
  const std::size_t width = 2 * p;
  const std::size_t len = adj.length();
  for (std::size_t n = 0; n < len / 2; ++n) {
    std::swap_ranges(adj.forcing.begin() + n * width, adj.forcing.begin() + (n + 1) * width,
                     adj.forcing.begin() + (len - 1 - n) * width);
  }
  const std::vector<T> zero(width, T(0));
  auto lam = scan<T>(adj, zero, mode, options, stats);
  for (std::size_t n = 0; n < len / 2; ++n) {
    std::swap_ranges(lam.begin() + n * width, lam.begin() + (n + 1) * width,
                     lam.begin() + (len - 1 - n) * width);
  }
  return lam;
}

// dLoss/ds0 = M^T lambda_1.
template <typename T>
std::vector<T> adjoint_initial_state(const std::vector<Block2<T>>& blocks,
                                     std::span<const T> lambda1) {
  const std::size_t p = blocks.size();
  if (lambda1.size() < 2 * p) throw StructuralError("adjoint_initial_state: short adjoint");
  std::vector<T> out(2 * p);
  for (std::size_t j = 0; j < p; ++j) {
    const auto& m = blocks[j];
    out[j] = m.a11 * lambda1[j] + m.a21 * lambda1[p + j];
    out[p + j] = m.a12 * lambda1[j] + m.a22 * lambda1[p + j];
  }
  return out;
}

}  // namespace share
