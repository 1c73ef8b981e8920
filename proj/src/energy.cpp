#include "share/energy.hpp"

#include <bit>
#include <cmath>

namespace share {

std::string_view to_string(BlockKind kind) { return kind == BlockKind::LinOSS ? "linoss" : "share"; }

std::uint64_t FlopTable::total() const {
  std::uint64_t t = 0;
  for (const auto& l : layers) t += l.flops;
  return t;
}

const LayerCount& FlopTable::at(std::string_view name) const {
  for (const auto& l : layers) {
    if (l.name == name) return l;
  }
  throw ParameterError("no layer named '" + std::string(name) + "'");
}

namespace {

std::uint64_t ceil_log2(std::uint64_t n) { return n <= 1 ? 0 : std::bit_width(n - 1); }

}  // namespace

FlopTable count_block_flops(BlockKind kind, std::uint64_t L, std::uint64_t H, std::uint64_t P,
                            const EnergyModel& model) {
  if (L == 0 || H == 0 || P == 0) throw ParameterError("L, H and P must be >= 1");
  FlopTable t;
  t.layers.push_back({"B", L * P * H, true, false});
  t.layers.push_back({"scan", P * ceil_log2(L), false, false});
  t.layers.push_back({"C", L * P * H, true, false});
  t.layers.push_back({"D", L * H, true, false});
  if (kind == BlockKind::LinOSS) {
    t.layers.push_back({"gelu", model.gelu_flops_per_elem * L * H, false, false});
    t.layers.push_back({"glu", model.glu_multiplier * L * H * H, false, false});
  } else {
    t.layers.push_back({"linear", L * H * H, true, false});
    t.layers.push_back({"batch_norm", 2 * L * H, false, true});
  }
  return t;
}

EnergyReport estimate(BlockKind kind, std::uint64_t L, std::uint64_t H, std::uint64_t P,
                      double firing_rate, const EnergyModel& model, bool verbose) {
  if (!(firing_rate >= 0.0 && firing_rate <= 1.0)) throw ParameterError("firing rate must be in [0, 1]");
  const FlopTable table = count_block_flops(kind, L, H, P, model);
  EnergyReport r;
  r.kind = kind;
  r.L = L;
  r.H = H;
  r.P = P;
  r.firing_rate = firing_rate;
  for (const auto& l : table.layers) {
    if (l.fused && !verbose) continue;
    LayerEnergy e{l.name, l.flops, 0.0, false, 0.0};
    if (kind == BlockKind::Share && l.spike_driven) {
      e.spike_driven = true;
      e.sops = firing_rate * static_cast<double>(l.flops);
      e.pj = model.e_ac * e.sops;
    } else {
      e.pj = model.e_mac * static_cast<double>(l.flops);
    }
    r.total_flops += e.flops;
    r.total_sops += e.sops;
    r.total_pj += e.pj;
    r.layers.push_back(e);
  }
  return r;
}

std::vector<double> default_p_over_h_grid() {
  std::vector<double> g;
  for (int k = -4; k <= 4; ++k) g.push_back(std::ldexp(1.0, k));
  return g;
}

std::vector<SweepPoint> energy_sweep(std::uint64_t L, std::uint64_t H, const std::vector<double>& p_over_h,
                                     double firing_rate, const EnergyModel& model) {
  std::vector<SweepPoint> out;
  for (double r : p_over_h) {
    if (!(r > 0.0)) throw ParameterError("P/H ratios must be positive");
    SweepPoint s;
    s.H = H;
    s.P = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(r * static_cast<double>(H))));
    s.p_over_h = static_cast<double>(s.P) / static_cast<double>(H);
    s.ann_pj = estimate(BlockKind::LinOSS, L, H, s.P, firing_rate, model).total_pj;
    s.snn_pj = estimate(BlockKind::Share, L, H, s.P, firing_rate, model).total_pj;
    s.ratio = s.ann_pj / s.snn_pj;
    out.push_back(s);
  }
  return out;
}

FiringRateReport measure_firing_rates(Model& model, const std::vector<Matrix>& sequences) {
  FiringRateReport rep;
  rep.block_inputs.resize(model.blocks.size());
  for (const Matrix& x : sequences) {
    const SequenceBatch batch{1, x.rows(), x};
    const ForwardResult fr = model.forward(batch, ForwardOptions{});
    for (std::size_t i = 0; i < rep.block_inputs.size(); ++i) rep.block_inputs[i] += fr.block_input_rates[i];
    rep.decoder_input += fr.decoder_input_rate;
  }
  return rep;
}

}  // namespace share
