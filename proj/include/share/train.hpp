#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "share/network.hpp"

namespace share {

enum class Loss { CrossEntropy, MSE, MAE };

std::string_view to_string(Loss loss);
Loss parse_loss(std::string_view text);

struct SplitFractions {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;

  void validate() const;
};

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::size_t batch_size = 16;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Loss loss = Loss::CrossEntropy;
  SplitFractions split;
  // Stop once the validation metric reaches this value (accuracy: >=,
  // error metrics: <=).
  std::optional<double> target_metric;

  void validate() const;
};

// Sequences of equal length. Classification uses labels, regression uses
// per-step targets; split holds 0/1/2 (train/val/test) per sample when the
// source fixes the partition.
struct Dataset {
  std::string name;
  Task task = Task::Classification;
  std::size_t channels = 0;
  std::size_t length = 0;
  std::size_t num_classes = 0;
  std::size_t out_dim = 0;
  std::vector<Matrix> inputs;   // length x channels
  std::vector<int> labels;      // classification
  std::vector<Matrix> targets;  // regression: length x out_dim
  std::vector<int> split;
  // Regression losses and metrics ignore steps before this index.
  std::size_t eval_from = 0;

  std::size_t size() const { return inputs.size(); }
  void validate() const;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

// Deterministic partition: the dataset's own split when present, otherwise a
// seeded shuffle cut by the given fractions.
SplitIndices split_indices(const Dataset& data, const SplitFractions& fractions, std::uint64_t seed);

struct LossValue {
  double value = 0.0;
  Matrix grad;  // d value / d output
};

// Mean loss over the batch. Classification: output batch x classes.
// Regression: output (batch * length) x out_dim, averaged over steps >= eval_from.
LossValue classification_loss(const Matrix& logits, const std::vector<int>& labels);
LossValue regression_loss(Loss loss, const Matrix& output, const Matrix& target, std::size_t batch,
                          std::size_t length, std::size_t eval_from);

// Adam with decoupled weight decay.
class Adam {
 public:
  Adam(std::vector<Param*> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
       double weight_decay = 0.0);

  void step(double lr);
  std::size_t steps() const { return t_; }

 private:
  std::vector<Param*> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
};

struct MetricRecord {
  std::size_t epoch = 0;
  std::string split;
  std::string metric;
  double value = 0.0;

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

struct EvalResult {
  std::size_t samples = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // classification
  double mse = 0.0;       // regression
  double mae = 0.0;
  std::vector<FiringRate> block_input_rates;
  FiringRate decoder_input_rate;
};

EvalResult evaluate(Model& model, const Dataset& data, const std::vector<std::size_t>& indices,
                    Loss loss, std::size_t batch_size = 32);

// The metric model selection uses: accuracy for classification, the loss's
// own error for regression.
double selection_metric(const EvalResult& r, Task task, Loss loss);
bool metric_higher_is_better(Task task);
std::string_view selection_metric_name(Task task, Loss loss);

struct FitResult {
  std::vector<MetricRecord> history;
  std::size_t best_epoch = 0;  // 1-based; 0 if no epoch ran
  double best_val = 0.0;
  EvalResult val;   // at the best epoch
  EvalResult test;  // best-val parameters on the test split
  std::size_t epochs_run = 0;
};

using EpochCallback = std::function<void(std::size_t epoch, const EvalResult& train, const EvalResult& val)>;

// Trains in place and leaves the best-validation parameters in the model.
FitResult fit(Model& model, const Dataset& data, const TrainConfig& cfg,
              const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// Random search

struct SearchSpace {
  std::vector<double> lr;
  std::vector<std::size_t> hidden;
  std::vector<std::size_t> state;
  std::vector<std::size_t> n_blocks;

  // Ranges of the LinOSS / log-NCDE tuning protocol.
  static SearchSpace protocol();
  bool empty() const { return lr.empty() || hidden.empty() || state.empty() || n_blocks.empty(); }
};

struct TrialParams {
  double lr = 0.0;
  std::size_t hidden = 0;
  std::size_t state = 0;
  std::size_t n_blocks = 0;

  friend bool operator==(const TrialParams&, const TrialParams&) = default;
};

struct Trial {
  std::size_t index = 0;
  TrialParams params;
  std::uint64_t seed = 0;
  double val_metric = 0.0;
  double test_metric = 0.0;
};

// Trial i draws each hyperparameter uniformly from its list. When an anchor is
// given (a point of the space), it is evaluated as trial 0.
std::vector<TrialParams> sample_trials(const SearchSpace& space, std::size_t budget, std::uint64_t seed,
                                       const std::optional<TrialParams>& anchor = std::nullopt);

using TrialObjective = std::function<Trial(const TrialParams&, std::size_t index)>;

// Runs every trial and returns them best first (ties keep trial order).
std::vector<Trial> random_search(const SearchSpace& space, std::size_t budget, std::uint64_t seed,
                                 const TrialObjective& objective, bool higher_is_better,
                                 const std::optional<TrialParams>& anchor = std::nullopt);

// Objective that trains a fresh model per trial on data.
TrialObjective training_objective(const ModelConfig& base_model, const TrainConfig& base_train,
                                  const Dataset& data);

// ---------------------------------------------------------------------------
// Ablation

struct AblationSpec {
  std::vector<Component> homogeneous;
  bool ssm_only = false;

  // Names: theta_encoder, omega, B, C, D, dt, theta_C, theta_D, all, ssm_only.
  static AblationSpec parse(const std::vector<std::string>& names);
  std::string label() const;
  void apply(ModelConfig& cfg) const;
};

struct AblationRow {
  std::string label;
  std::vector<double> accuracies;  // per seed, test split of the best-val checkpoint
  std::size_t test_samples = 0;    // per seed
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
};

AblationRow run_ablation(const AblationSpec& spec, const Dataset& data, const ModelConfig& model_cfg,
                         const TrainConfig& train_cfg, std::size_t seeds = 5);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// Normal-approximation binomial interval for a proportion p over n trials.
Interval binomial_interval(double p, std::size_t n, double z = 2.576);

}  // namespace share
