#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "share/dynamics.hpp"
#include "share/scan.hpp"
#include "share/spiking.hpp"
#include "share/tensor.hpp"

namespace share {

enum class Task { Classification, Regression };

std::string_view to_string(Task task);
Task parse_task(std::string_view text);

// Components whose initialisation can be made homogeneous.
enum class Component { ThetaEncoder, Omega, B, C, D, Dt, ThetaC, ThetaD };

inline constexpr std::array<Component, 8> kAllComponents = {
    Component::ThetaEncoder, Component::Omega, Component::B,      Component::C,
    Component::D,            Component::Dt,    Component::ThetaC, Component::ThetaD};

std::string_view to_string(Component c);
Component parse_component(std::string_view text);

struct InitLaw {
  enum class Kind { Uniform, UniformUpperClosed, Normal, Constant };

  Kind kind = Kind::Constant;
  double a = 0.0;  // lower bound / mean / constant
  double b = 0.0;  // upper bound / standard deviation

  static InitLaw uniform(double lo, double hi) { return {Kind::Uniform, lo, hi}; }
  static InitLaw uniform_upper_closed(double lo, double hi) { return {Kind::UniformUpperClosed, lo, hi}; }
  static InitLaw normal(double mean, double sd) { return {Kind::Normal, mean, sd}; }
  static InitLaw constant(double v) { return {Kind::Constant, v, 0.0}; }

  double sample(std::mt19937_64& rng) const;
  friend bool operator==(const InitLaw&, const InitLaw&) = default;
};

// Initialisation law per component. standard() gives the heterogeneous
// defaults; homogenize() swaps one component for its constant.
struct HeterogeneitySpec {
  InitLaw theta_encoder, omega, b, c, d, dt, theta_c, theta_d;

  static HeterogeneitySpec standard(std::size_t hidden, std::size_t state);
  static double homogeneous_value(Component c);

  InitLaw& law(Component c);
  const InitLaw& law(Component c) const;
  void homogenize(Component c) { law(c) = InitLaw::constant(homogeneous_value(c)); }
};

struct ModelConfig {
  std::size_t input_channels = 1;
  std::size_t n_blocks = 2;
  std::size_t hidden = 16;
  std::size_t state = 16;
  Scheme scheme = Scheme::IMEX;
  Task task = Task::Classification;
  std::size_t num_classes = 2;
  std::size_t out_dim = 1;
  std::size_t kernel_size = 64;
  double dropout = 0.1;
  bool ssm_only = false;  // drop Linear/BN/IF after spike mixing
  std::vector<Component> homogeneous;
  SurrogateConfig surrogate;
  double omega_max = 4.0;  // projection bound; with dt <= 1 keeps dt^2 omega <= 4

  void validate() const;
  HeterogeneitySpec heterogeneity() const;
  std::size_t block_input_width(std::size_t block) const { return hidden * (block + 1); }
  std::size_t decoder_input_width() const { return hidden * (n_blocks + 1); }
};

// Closed-form count of trainable parameters (see README).
std::size_t expected_parameter_count(const ModelConfig& cfg);

inline constexpr double kMinThreshold = 1e-3;
inline constexpr double kMinDt = 1e-4;
inline constexpr double kMaxDt = 1.0;

enum class Constraint { None, Omega, Dt, Threshold };

struct Param {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;
  Constraint constraint = Constraint::None;
  bool trainable = true;

  Param() = default;
  Param(std::string n, std::vector<std::size_t> s, Constraint c = Constraint::None, bool train = true);

  std::size_t numel() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
  void project(double omega_max);
};

struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  Matrix values;  // (batch * length) x channels

  std::size_t rows() const { return batch * length; }
};

struct ForwardOptions {
  bool training = false;
  // Replace the step by smooth_step; every layer then takes its dense path.
  bool smooth = false;
  std::uint64_t dropout_seed = 0;
  ScanMode scan_mode = ScanMode::Parallel;
  ScanOptions scan{};
  // Called with (i, tensor) for the tensor entering block i; i == n_blocks is
  // the decoder input.
  std::function<void(std::size_t, const Matrix&)> on_boundary;
};

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, bool bias = true);

  Param weight;  // out x in
  Param bias;    // out (empty when disabled)

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }

  // spike_input selects the accumulate-only kernel unless opt.smooth is set.
  Matrix forward(const Matrix& x, bool spike_input, const ForwardOptions& opt) const;
  Matrix backward(const Matrix& x, bool spike_input, const ForwardOptions& opt,
                  const Matrix& grad_out);

  void init(std::mt19937_64& rng);

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(const std::string& name, std::size_t features);

  Param gamma, beta, running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  struct Cache {
    Matrix xhat;
    std::vector<double> inv_std;
    bool batch_stats = true;
  };

  // Per-feature statistics over all rows (batch x time) while training.
  Matrix forward(const Matrix& x, bool training, Cache& cache);
  Matrix backward(const Cache& cache, const Matrix& grad_out);
};

class Threshold {
 public:
  Threshold() = default;
  Threshold(const std::string& name, std::size_t features);

  Param theta;

  Matrix forward(const Matrix& pre, const ForwardOptions& opt, const SurrogateConfig& sg) const;
  Matrix backward(const Matrix& pre, const Matrix& grad_out, const SurrogateConfig& sg);
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(std::size_t channels, std::size_t hidden);

  Linear linear;
  BatchNorm bn;
  Threshold theta;

  struct Cache {
    Matrix input, pre, normed;
    BatchNorm::Cache bn;
  };

  Matrix forward(const Matrix& x, const ForwardOptions& opt, const SurrogateConfig& sg, Cache& cache);
  void backward(const Cache& cache, const Matrix& grad_out, const ForwardOptions& opt,
                const SurrogateConfig& sg);
};

// One spiking oscillator block: weighted spike mixing through the oscillator
// bank, spike gating, Linear + BN + IF, and concatenation with the input.
class Block {
 public:
  Block() = default;
  Block(const std::string& prefix, std::size_t in_width, std::size_t hidden, std::size_t state,
        Scheme scheme, double dropout, bool ssm_only);

  Param omega, dt;  // P
  Param B;          // P x in
  Param C;          // H x P
  Param D;          // in
  Threshold theta_c, theta_d, theta_out;
  Linear linear;
  BatchNorm bn;

  std::size_t in_width() const { return in_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t state() const { return state_; }
  Scheme scheme() const { return scheme_; }
  void set_scheme(Scheme s) { scheme_ = s; }
  double dropout() const { return dropout_; }
  bool ssm_only() const { return ssm_only_; }

  struct Cache {
    std::size_t batch = 0, length = 0;
    Matrix x, drive, states, v, z, y1, y2, y3, y4;
    Matrix mask_d, mask_out;  // empty when dropout inactive
    BatchNorm::Cache bn;
  };

  Matrix forward(const Matrix& x, std::size_t batch, std::size_t length, const ForwardOptions& opt,
                 const SurrogateConfig& sg, std::mt19937_64& rng, Cache& cache);
  Matrix backward(const Cache& cache, const Matrix& grad_out, const ForwardOptions& opt,
                  const SurrogateConfig& sg);

  std::vector<Transition<double>> transitions() const;

 private:
  std::size_t in_ = 0, hidden_ = 0, state_ = 0;
  Scheme scheme_ = Scheme::IMEX;
  double dropout_ = 0.0;
  bool ssm_only_ = false;
};

class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(std::size_t features, std::size_t classes);

  Linear linear;

  // Temporal mean pooling then a linear map: batch x classes.
  Matrix forward(const Matrix& x, std::size_t batch, std::size_t length, const ForwardOptions& opt) const;
  Matrix backward(const Matrix& x, std::size_t batch, std::size_t length, const ForwardOptions& opt,
                  const Matrix& grad_logits);
};

class RegressionHead {
 public:
  RegressionHead() = default;
  RegressionHead(std::size_t features, std::size_t out_dim, std::size_t kernel_size);

  Linear linear;
  Param kernel;  // out_dim x K

  static std::vector<double> decay_kernel(std::size_t k, double alpha = 0.9);

  struct Cache {
    Matrix proj;
  };

  // Projection then causal K-tap convolution: (batch * length) x out_dim.
  Matrix forward(const Matrix& x, std::size_t batch, std::size_t length, const ForwardOptions& opt,
                 Cache& cache) const;
  Matrix backward(const Matrix& x, std::size_t batch, std::size_t length, const ForwardOptions& opt,
                  const Cache& cache, const Matrix& grad_out);
};

struct ForwardResult {
  Matrix output;  // batch x classes, or (batch * length) x out_dim
  std::vector<FiringRate> block_input_rates;
  FiringRate decoder_input_rate;
};

class Model {
 public:
  Model() = default;
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  Encoder encoder;
  std::vector<Block> blocks;
  std::optional<ClassifierHead> classifier;
  std::optional<RegressionHead> regressor;

  struct Cache {
    std::size_t batch = 0, length = 0;
    Encoder::Cache encoder;
    std::vector<Block::Cache> blocks;
    std::vector<Matrix> block_outputs;  // output of each block (decoder input is the last)
    RegressionHead::Cache regressor;
  };

  ForwardResult forward(const SequenceBatch& input, const ForwardOptions& opt, Cache* cache = nullptr);
  void backward(const Cache& cache, const Matrix& grad_output, const ForwardOptions& opt);

  // Every parameter, including non-trainable batch-norm buffers, in a fixed order.
  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  std::vector<Param*> trainable_params();
  std::size_t parameter_count() const;

  void zero_grad();
  void project();  // re-establish omega/dt/threshold constraints

 private:
  ModelConfig cfg_;
};

// Single-sequence conveniences mirroring the layer API.
SpikeTensor encode(Model& model, const Matrix& x);
SpikeTensor block_forward(const SpikeTensor& x, Block& block, bool training,
                          const SurrogateConfig& sg = {}, std::uint64_t dropout_seed = 0);
Matrix decode_classify(const SpikeTensor& spikes, const ClassifierHead& head);
Matrix decode_regress(const SpikeTensor& spikes, const RegressionHead& head);

}  // namespace share
