#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "share/spiking.hpp"

using namespace share;

TEST_CASE("spike_forward uses the >= convention") {
  Matrix v(1, 3, std::vector<double>{0.5, 0.4999, 0.7});
  const std::vector<double> theta{0.5, 0.5, 0.7};
  const auto z = spike_forward(v, theta);
  CHECK(z(0, 0));
  CHECK_FALSE(z(0, 1));
  CHECK(z(0, 2));
}

TEST_CASE("very negative potentials never spike") {
  Matrix v(10, 4, -1e300);
  const std::vector<double> theta(4, 0.0);
  const auto z = spike_forward(v, theta);
  CHECK(z.count() == 0);
  CHECK(z.firing_rate() == 0.0);
}

TEST_CASE("firing rate of uniform potentials at threshold 0.5") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix v(100000, 1);
  for (double& x : v.values()) x = u(rng);
  const auto z = spike_forward(v, std::vector<double>{0.5});
  CHECK(std::abs(z.firing_rate() - 0.5) <= 0.02);
  CHECK(z.rate().total == 100000);
  CHECK(if_neuron(v, std::vector<double>{0.5}).count() == z.count());
}

TEST_CASE("spike_forward checks shapes") {
  Matrix v(2, 3);
  CHECK_THROWS_AS(spike_forward(v, std::vector<double>{0.0, 0.0}), StructuralError);
}

TEST_CASE("surrogate value at zero") {
  const SurrogateConfig cfg;
  const double root = std::sqrt(2.0 * std::numbers::pi);
  const double expected = (1.0 + cfg.h) / (cfg.sigma * root) - 2.0 * cfg.h / (6.0 * cfg.sigma * root);
  CHECK(surrogate_grad(0.0, cfg) == Catch::Approx(expected).epsilon(1e-15));
}

TEST_CASE("surrogate tails vanish") {
  // The side lobe has width 6 sigma, so the tail is governed by it.
  for (double x : {17.0, 20.0, 40.0}) {
    CHECK(std::abs(surrogate_grad(x)) <= 1e-8);
    CHECK(std::abs(surrogate_grad(-x)) <= 1e-8);
  }
}

TEST_CASE("surrogate integrates to 1 - h") {
  // Composite Simpson rule on [-40, 40].
  const int n = 200000;
  const double a = -40.0, b = 40.0, step = (b - a) / n;
  double sum = surrogate_grad(a) + surrogate_grad(b);
  for (int i = 1; i < n; ++i) sum += (i % 2 == 1 ? 4.0 : 2.0) * surrogate_grad(a + i * step);
  CHECK(std::abs(sum * step / 3.0 - 0.85) <= 1e-6);
  CHECK(smooth_step(100.0) == Catch::Approx(0.85).epsilon(1e-12));
  CHECK(std::abs(smooth_step(-100.0)) <= 1e-15);
}

TEST_CASE("spike_backward matches finite differences of the smoothed loss") {
  std::mt19937_64 rng(22);
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix v(2, 4), up(2, 4);
  for (double& x : v.values()) x = n01(rng);
  for (double& x : up.values()) x = n01(rng);
  std::vector<double> theta{0.1, -0.2, 0.3, 0.0};
  const auto loss = [&](const Matrix& vv, const std::vector<double>& th) {
    double s = 0.0;
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t c = 0; c < 4; ++c) s += up(r, c) * smooth_step(vv(r, c) - th[c]);
    }
    return s;
  };
  const auto g = spike_backward(v, theta, up);
  const double eps = 1e-6;
  for (std::size_t i = 0; i < v.size(); ++i) {
    Matrix plus = v, minus = v;
    plus.values()[i] += eps;
    minus.values()[i] -= eps;
    const double fd = (loss(plus, theta) - loss(minus, theta)) / (2 * eps);
    CHECK(g.grad_v.values()[i] == Catch::Approx(fd).epsilon(1e-4).margin(1e-9));
  }
  for (std::size_t c = 0; c < 4; ++c) {
    auto plus = theta, minus = theta;
    plus[c] += eps;
    minus[c] -= eps;
    const double fd = (loss(v, plus) - loss(v, minus)) / (2 * eps);
    CHECK(g.grad_theta[c] == Catch::Approx(fd).epsilon(1e-4).margin(1e-9));
  }
}

TEST_CASE("SpikeTensor round-trips and rejects non-binary data") {
  Matrix m(2, 2, std::vector<double>{1, 0, 0, 1});
  const auto s = SpikeTensor::from_matrix(m);
  CHECK(s.to_matrix() == m);
  CHECK(s.rate() == FiringRate{2, 4});
  m(0, 1) = 0.5;
  CHECK_THROWS_AS(SpikeTensor::from_matrix(m), DataError);
}

TEST_CASE("surrogate configuration is validated") {
  CHECK_THROWS_AS(SurrogateConfig({0.0, 0.15, 1.0}).validate(), ParameterError);
  CHECK_THROWS_AS(SurrogateConfig({0.5, 1.0, 1.0}).validate(), ParameterError);
  CHECK_NOTHROW(SurrogateConfig{}.validate());
}
