#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "share/tensor.hpp"

namespace share {

// Double-Gaussian surrogate derivative of the Heaviside step:
//   g(x) = scale * [(1 + h) N(x; 0, sigma^2) - 2 h N(x; 0, (6 sigma)^2)]
struct SurrogateConfig {
  double sigma = 0.5;
  double h = 0.15;
  double scale = 1.0;

  void validate() const;
};

double surrogate_grad(double x, const SurrogateConfig& cfg = {});

// Antiderivative of surrogate_grad with value 0 at -inf; used as the smooth
// stand-in for the step in gradient checks.
double smooth_step(double x, const SurrogateConfig& cfg = {});

// Exact spike count over a tensor.
struct FiringRate {
  std::uint64_t spikes = 0;
  std::uint64_t total = 0;

  double value() const { return total == 0 ? 0.0 : static_cast<double>(spikes) / total; }
  FiringRate& operator+=(const FiringRate& o) {
    spikes += o.spikes;
    total += o.total;
    return *this;
  }
  friend bool operator==(const FiringRate&, const FiringRate&) = default;
};

FiringRate firing_rate(const Matrix& binary);

// Binary time x feature tensor.
class SpikeTensor {
 public:
  SpikeTensor() = default;
  SpikeTensor(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), bits_(rows * cols, 0) {}

  static SpikeTensor from_matrix(const Matrix& m);  // throws unless binary

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool operator()(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool on) { bits_[r * cols_ + c] = on ? 1 : 0; }

  std::uint64_t count() const;
  FiringRate rate() const { return {count(), static_cast<std::uint64_t>(bits_.size())}; }
  double firing_rate() const { return rate().value(); }

  Matrix to_matrix() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

// z = 1 where v >= theta (theta broadcast over rows); no reset.
SpikeTensor spike_forward(const Matrix& v, std::span<const double> theta);

struct SpikeGrads {
  Matrix grad_v;
  std::vector<double> grad_theta;
};

SpikeGrads spike_backward(const Matrix& v, std::span<const double> theta,
                          const Matrix& upstream, const SurrogateConfig& cfg = {});

// Stateless integrate-and-fire: per-step thresholding of the pre-activation.
SpikeTensor if_neuron(const Matrix& pre_activation, std::span<const double> theta);

}  // namespace share
