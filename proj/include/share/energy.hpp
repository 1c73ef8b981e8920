#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "share/network.hpp"

namespace share {

enum class BlockKind { LinOSS, Share };

std::string_view to_string(BlockKind kind);

struct EnergyModel {
  double e_mac = 4.6;  // pJ per multiply-accumulate
  double e_ac = 0.9;   // pJ per accumulate
  std::uint64_t gelu_flops_per_elem = 14;
  std::uint64_t glu_multiplier = 2;
};

struct LayerCount {
  std::string name;
  std::uint64_t flops = 0;
  bool spike_driven = false;  // operand is a spike tensor in the SHaRe block
  bool fused = false;         // folded into the preceding layer for inference
};

struct FlopTable {
  std::vector<LayerCount> layers;

  std::uint64_t total() const;  // every listed layer, fused ones included
  const LayerCount& at(std::string_view name) const;
};

// Per-block FLOPs for a sequence of length L. Both kinds: B and C (L*P*H
// each), D (L*H), scan (P*ceil(log2 L)). LinOSS adds GLU and GeLU; SHaRe adds
// Linear (L*H^2) and batch norm (2*L*H, marked fused).
FlopTable count_block_flops(BlockKind kind, std::uint64_t L, std::uint64_t H, std::uint64_t P,
                            const EnergyModel& model = {});

struct LayerEnergy {
  std::string name;
  std::uint64_t flops = 0;
  double sops = 0.0;  // f_r * flops for spike-driven layers, else 0
  bool spike_driven = false;
  double pj = 0.0;
};

struct EnergyReport {
  BlockKind kind = BlockKind::Share;
  std::uint64_t L = 0, H = 0, P = 0;
  double firing_rate = 0.0;
  std::vector<LayerEnergy> layers;
  std::uint64_t total_flops = 0;
  double total_sops = 0.0;
  double total_pj = 0.0;
};

// LinOSS: every layer at e_mac. SHaRe: spike-driven layers at e_ac * f_r *
// FLOPs, the rest at e_mac. Fused layers are skipped unless verbose.
EnergyReport estimate(BlockKind kind, std::uint64_t L, std::uint64_t H, std::uint64_t P,
                      double firing_rate, const EnergyModel& model = {}, bool verbose = false);

struct SweepPoint {
  double p_over_h = 0.0;
  std::uint64_t H = 0, P = 0;
  double ann_pj = 0.0;
  double snn_pj = 0.0;
  double ratio = 0.0;
};

// ANN/SNN ratio at fixed H for each P/H ratio (P rounded, at least 1).
std::vector<SweepPoint> energy_sweep(std::uint64_t L, std::uint64_t H, const std::vector<double>& p_over_h,
                                     double firing_rate, const EnergyModel& model = {});

// Default P/H grid: powers of two from 1/16 to 16.
std::vector<double> default_p_over_h_grid();

struct FiringRateReport {
  std::vector<FiringRate> block_inputs;  // tensor entering each block
  FiringRate decoder_input;
};

// Exact spike counts over the given sequences (each length x channels), eval mode.
FiringRateReport measure_firing_rates(Model& model, const std::vector<Matrix>& sequences);

}  // namespace share
