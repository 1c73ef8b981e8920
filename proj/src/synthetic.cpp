#include "share/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace share {

Dataset make_frequency_task(const FrequencyTaskConfig& cfg) {
  if (cfg.samples < 2 || cfg.length == 0) throw ParameterError("frequency task needs samples >= 2 and length >= 1");
  if (!(cfg.period_a > 0.0) || !(cfg.period_b > 0.0) || cfg.period_a == cfg.period_b) {
    throw ParameterError("frequency task needs two distinct positive periods");
  }
  if (!(cfg.amp_lo > 0.0 && cfg.amp_hi >= cfg.amp_lo)) throw ParameterError("bad amplitude range");
  if (!(cfg.noise >= 0.0)) throw ParameterError("noise must be >= 0");

  Dataset d;
  d.name = "synthetic:frequency";
  d.task = Task::Classification;
  d.channels = 1;
  d.length = cfg.length;
  d.num_classes = 2;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amp(cfg.amp_lo, cfg.amp_hi);
  std::normal_distribution<double> noise(0.0, cfg.noise);
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    const int label = static_cast<int>(i % 2);
    const double period = label == 0 ? cfg.period_a : cfg.period_b;
    const double w = 2.0 * std::numbers::pi / period;
    const double ph = phase(rng);
    const double a = amp(rng);
    Matrix x(cfg.length, 1);
    for (std::size_t t = 0; t < cfg.length; ++t) {
      x(t, 0) = a * std::sin(w * static_cast<double>(t) + ph) + (cfg.noise > 0.0 ? noise(rng) : 0.0);
    }
    d.inputs.push_back(std::move(x));
    d.labels.push_back(label);
  }
  return d;
}

Dataset make_delayed_sum_task(const DelayedSumConfig& cfg) {
  if (cfg.samples == 0 || cfg.window == 0) throw ParameterError("delayed-sum task needs samples, window >= 1");
  if (cfg.delay + cfg.window >= cfg.length) throw ParameterError("delay + window must be below the length");
  if (cfg.components == 0 || !(cfg.min_period > 0.0) || cfg.max_period < cfg.min_period) {
    throw ParameterError("bad component specification");
  }

  Dataset d;
  d.name = "synthetic:delayed_sum";
  d.task = Task::Regression;
  d.channels = 1;
  d.length = cfg.length;
  d.out_dim = 1;
  d.eval_from = cfg.delay + cfg.window - 1;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> log_period(std::log(cfg.min_period), std::log(cfg.max_period));
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  std::normal_distribution<double> noise(0.0, cfg.noise);
  const double norm = 1.0 / std::sqrt(static_cast<double>(cfg.components));
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    std::vector<double> w(cfg.components), ph(cfg.components), a(cfg.components);
    for (std::size_t k = 0; k < cfg.components; ++k) {
      w[k] = 2.0 * std::numbers::pi / std::exp(log_period(rng));
      ph[k] = phase(rng);
      a[k] = amp(rng) * norm;
    }
    Matrix x(cfg.length, 1), y(cfg.length, 1);
    for (std::size_t t = 0; t < cfg.length; ++t) {
      double s = 0.0;
      for (std::size_t k = 0; k < cfg.components; ++k) s += a[k] * std::sin(w[k] * static_cast<double>(t) + ph[k]);
      x(t, 0) = s + (cfg.noise > 0.0 ? noise(rng) : 0.0);
    }
    // Running window sums over the noisy input.
    double acc = 0.0;
    for (std::size_t t = 0; t < cfg.length; ++t) {
      acc += x(t, 0);
      if (t >= cfg.window) acc -= x(t - cfg.window, 0);
      if (t + 1 >= cfg.window && t + cfg.delay < cfg.length) {
        y(t + cfg.delay, 0) = acc / static_cast<double>(cfg.window);
      }
    }
    d.inputs.push_back(std::move(x));
    d.targets.push_back(std::move(y));
  }
  return d;
}

}  // namespace share
