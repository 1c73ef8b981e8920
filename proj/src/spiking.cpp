#include "share/spiking.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace share {

namespace {

double gaussian(double x, double sd) {
  const double z = x / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

double normal_cdf(double x, double sd) { return 0.5 * std::erfc(-x / (sd * std::numbers::sqrt2)); }

void check_theta(const Matrix& v, std::span<const double> theta) {
  if (theta.size() != v.cols()) {
    throw StructuralError("threshold has " + std::to_string(theta.size()) +
                          " entries, tensor has " + std::to_string(v.cols()) + " features");
  }
}

}  // namespace

void SurrogateConfig::validate() const {
  if (!(sigma > 0.0)) throw ParameterError("surrogate sigma must be > 0");
  if (!(h >= 0.0 && h < 1.0)) throw ParameterError("surrogate side-lobe weight must be in [0, 1)");
}

double surrogate_grad(double x, const SurrogateConfig& cfg) {
  return cfg.scale * ((1.0 + cfg.h) * gaussian(x, cfg.sigma) - 2.0 * cfg.h * gaussian(x, 6.0 * cfg.sigma));
}

double smooth_step(double x, const SurrogateConfig& cfg) {
  return cfg.scale *
         ((1.0 + cfg.h) * normal_cdf(x, cfg.sigma) - 2.0 * cfg.h * normal_cdf(x, 6.0 * cfg.sigma));
}

FiringRate firing_rate(const Matrix& binary) {
  FiringRate r{0, binary.size()};
  for (double x : binary.values()) r.spikes += x != 0.0 ? 1 : 0;
  return r;
}

SpikeTensor SpikeTensor::from_matrix(const Matrix& m) {
  SpikeTensor out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double x = m.values()[i];
    if (x != 0.0 && x != 1.0) throw DataError("spike tensor entries must be 0 or 1");
    out.bits_[i] = x != 0.0 ? 1 : 0;
  }
  return out;
}

std::uint64_t SpikeTensor::count() const {
  std::uint64_t n = 0;
  for (auto b : bits_) n += b;
  return n;
}

Matrix SpikeTensor::to_matrix() const {
  Matrix m(rows_, cols_);
  for (std::size_t i = 0; i < bits_.size(); ++i) m.values()[i] = bits_[i];
  return m;
}

SpikeTensor spike_forward(const Matrix& v, std::span<const double> theta) {
  check_theta(v, theta);
  SpikeTensor out(v.rows(), v.cols());
  for (std::size_t r = 0; r < v.rows(); ++r) {
    for (std::size_t c = 0; c < v.cols(); ++c) out.set(r, c, v(r, c) >= theta[c]);
  }
  return out;
}

SpikeGrads spike_backward(const Matrix& v, std::span<const double> theta, const Matrix& upstream,
                          const SurrogateConfig& cfg) {
  check_theta(v, theta);
  require_shape(upstream, v.rows(), v.cols(), "spike_backward upstream");
  SpikeGrads g{Matrix(v.rows(), v.cols()), std::vector<double>(v.cols(), 0.0)};
  for (std::size_t r = 0; r < v.rows(); ++r) {
    for (std::size_t c = 0; c < v.cols(); ++c) {
      const double gv = upstream(r, c) * surrogate_grad(v(r, c) - theta[c], cfg);
      g.grad_v(r, c) = gv;
      g.grad_theta[c] -= gv;
    }
  }
  return g;
}

SpikeTensor if_neuron(const Matrix& pre_activation, std::span<const double> theta) {
  return spike_forward(pre_activation, theta);
}

}  // namespace share
