#pragma once

#include <cstddef>
#include <cstdint>

#include "share/train.hpp"

namespace share {

// Two classes of noisy sinusoids that differ only in period. Phase is uniform
// and amplitude is drawn from the same range for both classes, so the value
// distribution of a sequence carries no class information.
struct FrequencyTaskConfig {
  std::size_t samples = 400;
  std::size_t length = 1000;
  double period_a = 40.0;
  double period_b = 16.0;
  double amp_lo = 0.5;
  double amp_hi = 1.5;
  double noise = 0.2;
  std::uint64_t seed = 0;
};

Dataset make_frequency_task(const FrequencyTaskConfig& cfg);

// Input: a sum of slow sinusoids plus noise. Target at step t: the mean of
// the input over the window of `window` steps ending `delay` steps earlier.
// Steps before delay + window have no complete window and are excluded via
// Dataset::eval_from.
struct DelayedSumConfig {
  std::size_t samples = 200;
  std::size_t length = 2000;
  std::size_t delay = 500;
  std::size_t window = 100;
  std::size_t components = 3;
  double min_period = 1000.0;
  double max_period = 4000.0;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

Dataset make_delayed_sum_task(const DelayedSumConfig& cfg);

}  // namespace share
