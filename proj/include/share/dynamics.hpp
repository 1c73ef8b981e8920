#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "share/errors.hpp"
#include "share/scan.hpp"

namespace share {

enum class Scheme { ExplicitEuler, IM, IMEX };

std::string_view to_string(Scheme scheme);
Scheme parse_scheme(std::string_view text);

// Per-state oscillator parameters. omega is the squared angular frequency.
// damping may be left empty, meaning zero for every state.
struct OscillatorParams {
  std::vector<double> omega;
  std::vector<double> dt;
  std::vector<double> damping;

  std::size_t size() const { return omega.size(); }
  double damping_at(std::size_t j) const { return damping.empty() ? 0.0 : damping[j]; }
  void validate() const;
};

// One state's discrete update: block of M plus the coefficients that map the
// drive d_n = (B x_n)_j to the forcing (f_u, f_v) = (cu * d_n, cv * d_n).
template <typename T>
struct Transition {
  Block2<T> block;
  T cu{0};
  T cv{0};
};

// u is the velocity-like state, v the position-like one:
//   u_n = u_{n-1} + dt (-omega v_* - 2 b u_* + x_n),   v_n = v_{n-1} + dt u_{n'}
// ExplicitEuler reads every right-hand side at n-1, IMEX evaluates the force
// at n-1 and then updates v with the new u, IM evaluates everything at n.
// T may be a forward-mode dual number; only +, -, *, / are used.
template <typename T>
Transition<T> transition(const T& omega, const T& dt, const T& damping, Scheme scheme) {
  const T one(1.0);
  const T two(2.0);
  switch (scheme) {
    case Scheme::ExplicitEuler:
      return {{one - two * damping * dt, T(0.0) - dt * omega, dt, one}, dt, T(0.0)};
    case Scheme::IMEX: {
      const T keep = one - two * damping * dt;
      return {{keep, T(0.0) - dt * omega, dt * keep, one - dt * dt * omega}, dt, dt * dt};
    }
    case Scheme::IM: {
      // Schur complement of the implicit system.
      const T s = one / (one + two * damping * dt + dt * dt * omega);
      return {{s, T(0.0) - s * dt * omega, s * dt, s * (one + two * damping * dt)}, s * dt,
              s * dt * dt};
    }
  }
  throw ParameterError("unknown scheme");
}

// drive is L x P (row n holds (B x_{n+1})_j).
BlockDiagRecurrence<double> build_recurrence(const OscillatorParams& params, Scheme scheme,
                                             std::span<const double> drive);

using EigenPair = std::pair<std::complex<double>, std::complex<double>>;

// Closed-form eigenvalues of each 2x2 block, for IM and IMEX only.
std::vector<EigenPair> eigenvalues_closed_form(const OscillatorParams& params, Scheme scheme);

// E|lambda|^N for IM eigenvalues with omega ~ U[0, omega_max]. The order is
// real so the N = 2 limit branch can be probed from either side.
double eigenvalue_moment(double order, double dt, double omega_max);

// Quadratic form left invariant by the undamped IMEX map.
inline double imex_energy(double u, double v, double omega, double dt) {
  return u * u + omega * v * v - dt * omega * u * v;
}

struct NeuronSample {
  double u = 0.0;
  double v = 0.0;
  double energy = 0.0;     // imex_energy for IMEX, u^2 + omega v^2 otherwise
  double amplitude = 0.0;  // sqrt(u^2 + omega v^2)
};

// Single-neuron response to a unit input spike at the first step, starting
// from rest. Element n is the state after step n + 1.
std::vector<NeuronSample> simulate_neuron(double omega, double dt, double damping,
                                          Scheme scheme, std::size_t steps);

}  // namespace share
