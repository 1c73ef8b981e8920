#include "share/dynamics.hpp"

#include <cmath>
#include <string>

namespace share {

std::string_view to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::ExplicitEuler:
      return "explicit_euler";
    case Scheme::IM:
      return "im";
    case Scheme::IMEX:
      return "imex";
  }
  return "unknown";
}

Scheme parse_scheme(std::string_view text) {
  if (text == "explicit_euler" || text == "euler" || text == "explicit") return Scheme::ExplicitEuler;
  if (text == "im") return Scheme::IM;
  if (text == "imex") return Scheme::IMEX;
  throw ParameterError("unknown scheme '" + std::string(text) + "'");
}

void OscillatorParams::validate() const {
  if (dt.size() != omega.size() || (!damping.empty() && damping.size() != omega.size())) {
    throw StructuralError("oscillator parameter vectors differ in length");
  }
  for (std::size_t j = 0; j < omega.size(); ++j) {
    if (!(omega[j] >= 0.0) || !std::isfinite(omega[j])) {
      throw ParameterError("omega[" + std::to_string(j) + "] must be finite and >= 0");
    }
    if (!(dt[j] > 0.0) || !std::isfinite(dt[j])) {
      throw ParameterError("dt[" + std::to_string(j) + "] must be finite and > 0");
    }
    if (!(damping_at(j) >= 0.0) || !std::isfinite(damping_at(j))) {
      throw ParameterError("damping[" + std::to_string(j) + "] must be finite and >= 0");
    }
  }
}

BlockDiagRecurrence<double> build_recurrence(const OscillatorParams& params, Scheme scheme,
                                             std::span<const double> drive) {
  params.validate();
  const std::size_t p = params.size();
  if (p == 0) throw StructuralError("build_recurrence: zero state size");
  if (drive.empty() || drive.size() % p != 0) {
    throw StructuralError("build_recurrence: drive must be a non-empty L x P array");
  }
  const std::size_t len = drive.size() / p;

  BlockDiagRecurrence<double> rec;
  rec.blocks.resize(p);
  std::vector<double> cu(p), cv(p);
  for (std::size_t j = 0; j < p; ++j) {
    const auto tr = transition(params.omega[j], params.dt[j], params.damping_at(j), scheme);
    rec.blocks[j] = tr.block;
    cu[j] = tr.cu;
    cv[j] = tr.cv;
  }
  rec.forcing.resize(len * 2 * p);
  for (std::size_t n = 0; n < len; ++n) {
    const double* d = drive.data() + n * p;
    double* f = rec.forcing.data() + n * 2 * p;
    for (std::size_t j = 0; j < p; ++j) {
      f[j] = cu[j] * d[j];
      f[p + j] = cv[j] * d[j];
    }
  }
  return rec;
}

std::vector<EigenPair> eigenvalues_closed_form(const OscillatorParams& params, Scheme scheme) {
  params.validate();
  std::vector<EigenPair> out;
  out.reserve(params.size());
  for (std::size_t j = 0; j < params.size(); ++j) {
    const double h2w = params.dt[j] * params.dt[j] * params.omega[j];
    switch (scheme) {
      case Scheme::IM: {
        const double s = 1.0 / (1.0 + h2w);
        const double im = params.dt[j] * s * std::sqrt(params.omega[j]);
        out.emplace_back(std::complex<double>(s, im), std::complex<double>(s, -im));
        break;
      }
      case Scheme::IMEX: {
        if (h2w > 4.0) {
          throw ParameterError("IMEX eigenvalues require dt^2 * omega <= 4 (state " +
                               std::to_string(j) + " has " + std::to_string(h2w) + ")");
        }
        const double re = 0.5 * (2.0 - h2w);
        const double im = 0.5 * std::sqrt(h2w * (4.0 - h2w));
        out.emplace_back(std::complex<double>(re, im), std::complex<double>(re, -im));
        break;
      }
      case Scheme::ExplicitEuler:
        throw ParameterError("closed-form eigenvalues are provided for IM and IMEX only");
    }
  }
  return out;
}

double eigenvalue_moment(double order, double dt, double omega_max) {
  if (!(order > 0.0) || !std::isfinite(order)) {
    throw ParameterError("moment order must be positive");
  }
  if (!(dt > 0.0) || !(omega_max > 0.0)) {
    throw ParameterError("eigenvalue_moment needs dt > 0 and omega_max > 0");
  }
  const double a = dt * dt * omega_max;
  if (order == 2.0) return std::log1p(a) / a;
  const double e = 1.0 - 0.5 * order;
  // expm1/log1p keep the ratio accurate as a -> 0.
  return std::expm1(e * std::log1p(a)) / (a * e);
}

std::vector<NeuronSample> simulate_neuron(double omega, double dt, double damping,
                                          Scheme scheme, std::size_t steps) {
  if (steps == 0) throw ParameterError("simulate_neuron: steps must be >= 1");
  OscillatorParams params{{omega}, {dt}, {damping}};
  params.validate();

  std::vector<double> drive(steps, 0.0);
  drive[0] = 1.0;
  const auto rec = build_recurrence(params, scheme, drive);
  const double s0[2] = {0.0, 0.0};
  const auto states = scan<double>(rec, s0, ScanMode::Sequential);

  std::vector<NeuronSample> out(steps);
  for (std::size_t n = 0; n < steps; ++n) {
    NeuronSample& smp = out[n];
    smp.u = states[2 * n];
    smp.v = states[2 * n + 1];
    const double quad = smp.u * smp.u + omega * smp.v * smp.v;
    smp.amplitude = std::sqrt(quad);
    smp.energy = scheme == Scheme::IMEX ? imex_energy(smp.u, smp.v, omega, dt) : quad;
  }
  return out;
}

}  // namespace share
