#include "share/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "share/op_counter.hpp"

namespace share {

namespace {

// Forward-mode dual number used to differentiate transition() with respect to
// omega and dt.
struct Dual {
  double v = 0.0;
  double d = 0.0;
  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT(google-explicit-constructor)
  Dual(double value, double deriv) : v(value), d(deriv) {}
};
Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
Dual operator/(Dual a, Dual b) { return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)}; }

struct TransitionGrad {
  double a11 = 0, a12 = 0, a21 = 0, a22 = 0, cu = 0, cv = 0;

  double dot(const Transition<Dual>& t) const {
    return a11 * t.block.a11.d + a12 * t.block.a12.d + a21 * t.block.a21.d +
           a22 * t.block.a22.d + cu * t.cu.d + cv * t.cv.d;
  }
};

Matrix dropout_mask(std::size_t rows, std::size_t cols, double p, std::mt19937_64& rng) {
  Matrix mask(rows, cols);
  std::bernoulli_distribution keep(1.0 - p);
  for (double& m : mask.values()) m = keep(rng) ? 1.0 : 0.0;
  return mask;
}

void multiply_inplace(Matrix& x, const Matrix& mask) {
  for (std::size_t i = 0; i < x.size(); ++i) x.values()[i] *= mask.values()[i];
}

void check_finite(const Matrix& x, const char* what) {
  for (double v : x.values()) {
    if (!std::isfinite(v)) throw DataError(std::string(what) + " contains a non-finite value");
  }
}

void require_binary(const Matrix& x, std::size_t boundary) {
  if (!is_binary(x)) {
    throw std::logic_error("non-binary tensor crossing block boundary " + std::to_string(boundary));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Enumerations and initialisation laws

std::string_view to_string(Task task) {
  return task == Task::Classification ? "classification" : "regression";
}

Task parse_task(std::string_view text) {
  if (text == "classification") return Task::Classification;
  if (text == "regression") return Task::Regression;
  throw ParameterError("unknown task '" + std::string(text) + "'");
}

std::string_view to_string(Component c) {
  switch (c) {
    case Component::ThetaEncoder: return "theta_encoder";
    case Component::Omega: return "omega";
    case Component::B: return "B";
    case Component::C: return "C";
    case Component::D: return "D";
    case Component::Dt: return "dt";
    case Component::ThetaC: return "theta_C";
    case Component::ThetaD: return "theta_D";
  }
  return "unknown";
}

Component parse_component(std::string_view text) {
  for (Component c : kAllComponents) {
    if (text == to_string(c)) return c;
  }
  throw ParameterError("unknown component '" + std::string(text) + "'");
}

double InitLaw::sample(std::mt19937_64& rng) const {
  switch (kind) {
    case Kind::Uniform:
      return std::uniform_real_distribution<double>(a, b)(rng);
    case Kind::UniformUpperClosed:
      // (a, b]: reflect a draw from [a, b).
      return b - std::uniform_real_distribution<double>(0.0, b - a)(rng);
    case Kind::Normal:
      return std::normal_distribution<double>(a, b)(rng);
    case Kind::Constant:
      return a;
  }
  return a;
}

HeterogeneitySpec HeterogeneitySpec::standard(std::size_t hidden, std::size_t state) {
  const double hb = 1.0 / std::sqrt(static_cast<double>(hidden));
  const double pb = 1.0 / std::sqrt(static_cast<double>(state));
  HeterogeneitySpec s;
  s.theta_encoder = InitLaw::uniform_upper_closed(0.0, 1.0);
  s.omega = InitLaw::uniform_upper_closed(0.0, 1.0);
  s.b = InitLaw::uniform(-hb, hb);
  s.c = InitLaw::uniform(-pb, pb);
  s.d = InitLaw::normal(0.0, 1.0);
  s.dt = InitLaw::uniform_upper_closed(0.0, 1.0);
  s.theta_c = InitLaw::uniform_upper_closed(0.0, 1.0);
  s.theta_d = InitLaw::uniform_upper_closed(0.0, 1.0);
  return s;
}

double HeterogeneitySpec::homogeneous_value(Component c) {
  switch (c) {
    case Component::ThetaEncoder:
    case Component::Omega:
    case Component::Dt:
    case Component::ThetaC:
    case Component::ThetaD:
      return 1.0;
    case Component::B:
    case Component::C:
    case Component::D:
      return 0.0;
  }
  return 0.0;
}

InitLaw& HeterogeneitySpec::law(Component c) {
  switch (c) {
    case Component::ThetaEncoder: return theta_encoder;
    case Component::Omega: return omega;
    case Component::B: return b;
    case Component::C: return this->c;
    case Component::D: return d;
    case Component::Dt: return dt;
    case Component::ThetaC: return theta_c;
    case Component::ThetaD: return theta_d;
  }
  throw ParameterError("unknown component");
}

const InitLaw& HeterogeneitySpec::law(Component c) const {
  return const_cast<HeterogeneitySpec*>(this)->law(c);
}

void ModelConfig::validate() const {
  if (input_channels == 0) throw ParameterError("input_channels must be >= 1");
  if (n_blocks == 0) throw ParameterError("n_blocks must be >= 1");
  if (hidden == 0 || state == 0) throw ParameterError("hidden and state must be >= 1");
  if (task == Task::Classification && num_classes < 2) {
    throw ParameterError("classification needs num_classes >= 2");
  }
  if (task == Task::Regression) {
    if (out_dim == 0) throw ParameterError("out_dim must be >= 1");
    if (kernel_size == 0 || (kernel_size & (kernel_size - 1)) != 0) {
      throw ParameterError("kernel_size must be a power of two");
    }
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ParameterError("dropout must be in [0, 1)");
  if (!(omega_max > 0.0)) throw ParameterError("omega_max must be > 0");
  surrogate.validate();
}

HeterogeneitySpec ModelConfig::heterogeneity() const {
  auto spec = HeterogeneitySpec::standard(hidden, state);
  for (Component c : homogeneous) spec.homogenize(c);
  return spec;
}

std::size_t expected_parameter_count(const ModelConfig& cfg) {
  const std::size_t h = cfg.hidden;
  const std::size_t p = cfg.state;
  // Encoder: linear (C_in*H + H), BN scale/shift (2H), threshold (H).
  std::size_t total = cfg.input_channels * h + 4 * h;
  for (std::size_t n = 0; n < cfg.n_blocks; ++n) {
    const std::size_t in = cfg.block_input_width(n);
    // omega, dt, theta_C (3P); B (P*in); C (H*P); D (in); theta_D (H).
    total += 3 * p + p * in + h * p + in + h;
    // Linear (H*H + H), BN (2H), output threshold (H).
    if (!cfg.ssm_only) total += h * h + 4 * h;
  }
  const std::size_t f = cfg.decoder_input_width();
  if (cfg.task == Task::Classification) {
    total += cfg.num_classes * f + cfg.num_classes;
  } else {
    total += cfg.out_dim * f + cfg.out_dim + cfg.out_dim * cfg.kernel_size;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Param

Param::Param(std::string n, std::vector<std::size_t> s, Constraint c, bool train)
    : name(std::move(n)), shape(std::move(s)), constraint(c), trainable(train) {
  const std::size_t count =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  value.assign(count, 0.0);
  grad.assign(count, 0.0);
}

void Param::project(double omega_max) {
  switch (constraint) {
    case Constraint::None:
      return;
    case Constraint::Omega:
      for (double& x : value) x = std::clamp(x, 0.0, omega_max);
      return;
    case Constraint::Dt:
      for (double& x : value) x = std::clamp(x, kMinDt, kMaxDt);
      return;
    case Constraint::Threshold:
      for (double& x : value) x = std::max(x, kMinThreshold);
      return;
  }
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, bool bias)
    : weight(name + ".weight", {out, in}), in_(in), out_(out) {
  if (bias) this->bias = Param(name + ".bias", {out});
}

void Linear::init(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, in_)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& w : weight.value) w = dist(rng);
  for (double& b : bias.value) b = dist(rng);
}

Matrix Linear::forward(const Matrix& x, bool spike_input, const ForwardOptions& opt) const {
  if (x.cols() != in_) {
    throw StructuralError(weight.name + ": input width " + std::to_string(x.cols()) +
                          " != " + std::to_string(in_));
  }
  Matrix y(x.rows(), out_);
  const bool has_bias = !bias.value.empty();
  auto& ops = op_counts();
  if (spike_input && !opt.smooth) {
    // Accumulate the weight column of every active input; no multiplies.
    std::vector<double> wt(in_ * out_);
    for (std::size_t k = 0; k < out_; ++k) {
      for (std::size_t c = 0; c < in_; ++c) wt[c * out_ + k] = weight.value[k * in_ + c];
    }
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double* yr = y.data() + r * out_;
      if (has_bias) std::copy(bias.value.begin(), bias.value.end(), yr);
      const double* xr = x.data() + r * in_;
      for (std::size_t c = 0; c < in_; ++c) {
        if (xr[c] == 0.0) continue;
        const double* col = wt.data() + c * out_;
        for (std::size_t k = 0; k < out_; ++k) yr[k] += col[k];
        ops.accumulates += out_;
      }
    }
    return y;
  }
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* xr = x.data() + r * in_;
    double* yr = y.data() + r * out_;
    for (std::size_t k = 0; k < out_; ++k) {
      const double* wk = weight.value.data() + k * in_;
      double acc = has_bias ? bias.value[k] : 0.0;
      for (std::size_t c = 0; c < in_; ++c) acc += wk[c] * xr[c];
      yr[k] = acc;
    }
  }
  const std::uint64_t mults = static_cast<std::uint64_t>(x.rows()) * in_ * out_;
  ops.multiplies += mults;
  if (spike_input) ops.spike_operand_multiplies += mults;
  return y;
}

Matrix Linear::backward(const Matrix& x, bool spike_input, const ForwardOptions& opt,
                        const Matrix& grad_out) {
  require_shape(grad_out, x.rows(), out_, "Linear::backward");
  const bool has_bias = !bias.value.empty();
  const bool sparse = spike_input && !opt.smooth;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* g = grad_out.data() + r * out_;
    const double* xr = x.data() + r * in_;
    if (has_bias) {
      for (std::size_t k = 0; k < out_; ++k) bias.grad[k] += g[k];
    }
    for (std::size_t c = 0; c < in_; ++c) {
      const double xv = xr[c];
      if (xv == 0.0) continue;
      if (sparse) {
        for (std::size_t k = 0; k < out_; ++k) weight.grad[k * in_ + c] += g[k];
      } else {
        for (std::size_t k = 0; k < out_; ++k) weight.grad[k * in_ + c] += g[k] * xv;
      }
    }
  }
  Matrix gx(x.rows(), in_);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* g = grad_out.data() + r * out_;
    double* gr = gx.data() + r * in_;
    for (std::size_t k = 0; k < out_; ++k) {
      const double gk = g[k];
      if (gk == 0.0) continue;
      const double* wk = weight.value.data() + k * in_;
      for (std::size_t c = 0; c < in_; ++c) gr[c] += gk * wk[c];
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(const std::string& name, std::size_t features)
    : gamma(name + ".gamma", {features}),
      beta(name + ".beta", {features}),
      running_mean(name + ".running_mean", {features}, Constraint::None, false),
      running_var(name + ".running_var", {features}, Constraint::None, false) {
  std::fill(gamma.value.begin(), gamma.value.end(), 1.0);
  std::fill(running_var.value.begin(), running_var.value.end(), 1.0);
}

Matrix BatchNorm::forward(const Matrix& x, bool training, Cache& cache) {
  const std::size_t f = gamma.numel();
  require_shape(x, x.rows(), f, "BatchNorm::forward");
  const std::size_t rows = x.rows();
  std::vector<double> mean(f, 0.0), var(f, 0.0);
  if (training) {
    if (rows == 0) throw StructuralError("BatchNorm: empty batch");
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < f; ++c) mean[c] += x(r, c);
    }
    for (double& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < f; ++c) {
        const double d = x(r, c) - mean[c];
        var[c] += d * d;
      }
    }
    for (std::size_t c = 0; c < f; ++c) {
      const double biased = var[c] / static_cast<double>(rows);
      const double unbiased = rows > 1 ? var[c] / static_cast<double>(rows - 1) : biased;
      var[c] = biased;
      running_mean.value[c] = (1.0 - momentum) * running_mean.value[c] + momentum * mean[c];
      running_var.value[c] = (1.0 - momentum) * running_var.value[c] + momentum * unbiased;
    }
  } else {
    mean = running_mean.value;
    var = running_var.value;
  }
  cache.batch_stats = training;
  cache.inv_std.resize(f);
  for (std::size_t c = 0; c < f; ++c) cache.inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  cache.xhat = Matrix(rows, f);
  Matrix y(rows, f);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < f; ++c) {
      const double xh = (x(r, c) - mean[c]) * cache.inv_std[c];
      cache.xhat(r, c) = xh;
      y(r, c) = gamma.value[c] * xh + beta.value[c];
    }
  }
  return y;
}

Matrix BatchNorm::backward(const Cache& cache, const Matrix& grad_out) {
  const std::size_t rows = grad_out.rows();
  const std::size_t f = gamma.numel();
  std::vector<double> sum_g(f, 0.0), sum_gx(f, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < f; ++c) {
      sum_g[c] += grad_out(r, c);
      sum_gx[c] += grad_out(r, c) * cache.xhat(r, c);
    }
  }
  for (std::size_t c = 0; c < f; ++c) {
    gamma.grad[c] += sum_gx[c];
    beta.grad[c] += sum_g[c];
  }
  Matrix gx(rows, f);
  if (!cache.batch_stats) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < f; ++c) gx(r, c) = gamma.value[c] * cache.inv_std[c] * grad_out(r, c);
    }
    return gx;
  }
  // Batch statistics depend on the input.
  const double inv_n = 1.0 / static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < f; ++c) {
      gx(r, c) = gamma.value[c] * cache.inv_std[c] *
                 (grad_out(r, c) - inv_n * sum_g[c] - cache.xhat(r, c) * inv_n * sum_gx[c]);
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Threshold

Threshold::Threshold(const std::string& name, std::size_t features)
    : theta(name, {features}, Constraint::Threshold) {}

Matrix Threshold::forward(const Matrix& pre, const ForwardOptions& opt,
                          const SurrogateConfig& sg) const {
  if (pre.cols() != theta.numel()) {
    throw StructuralError(theta.name + ": tensor has " + std::to_string(pre.cols()) +
                          " features, threshold has " + std::to_string(theta.numel()));
  }
  Matrix out(pre.rows(), pre.cols());
  for (std::size_t r = 0; r < pre.rows(); ++r) {
    for (std::size_t c = 0; c < pre.cols(); ++c) {
      const double x = pre(r, c) - theta.value[c];
      out(r, c) = opt.smooth ? smooth_step(x, sg) : (x >= 0.0 ? 1.0 : 0.0);
    }
  }
  return out;
}

Matrix Threshold::backward(const Matrix& pre, const Matrix& grad_out, const SurrogateConfig& sg) {
  require_shape(grad_out, pre.rows(), pre.cols(), "Threshold::backward");
  Matrix gx(pre.rows(), pre.cols());
  for (std::size_t r = 0; r < pre.rows(); ++r) {
    for (std::size_t c = 0; c < pre.cols(); ++c) {
      const double g = grad_out(r, c);
      if (g == 0.0) continue;
      const double gv = g * surrogate_grad(pre(r, c) - theta.value[c], sg);
      gx(r, c) = gv;
      theta.grad[c] -= gv;
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Encoder

Encoder::Encoder(std::size_t channels, std::size_t hidden)
    : linear("encoder.linear", channels, hidden),
      bn("encoder.bn", hidden),
      theta("encoder.theta", hidden) {}

Matrix Encoder::forward(const Matrix& x, const ForwardOptions& opt, const SurrogateConfig& sg,
                        Cache& cache) {
  check_finite(x, "encoder input");
  cache.input = x;
  cache.pre = linear.forward(x, false, opt);
  cache.normed = bn.forward(cache.pre, opt.training, cache.bn);
  return theta.forward(cache.normed, opt, sg);
}

void Encoder::backward(const Cache& cache, const Matrix& grad_out, const ForwardOptions& opt,
                       const SurrogateConfig& sg) {
  const Matrix g_norm = theta.backward(cache.normed, grad_out, sg);
  const Matrix g_pre = bn.backward(cache.bn, g_norm);
  linear.backward(cache.input, false, opt, g_pre);
}

// ---------------------------------------------------------------------------
// Block

Block::Block(const std::string& prefix, std::size_t in_width, std::size_t hidden, std::size_t state,
             Scheme scheme, double dropout, bool ssm_only)
    : omega(prefix + ".omega", {state}, Constraint::Omega),
      dt(prefix + ".dt", {state}, Constraint::Dt),
      B(prefix + ".B", {state, in_width}),
      C(prefix + ".C", {hidden, state}),
      D(prefix + ".D", {in_width}),
      theta_c(prefix + ".theta_C", state),
      theta_d(prefix + ".theta_D", hidden),
      in_(in_width),
      hidden_(hidden),
      state_(state),
      scheme_(scheme),
      dropout_(dropout),
      ssm_only_(ssm_only) {
  if (!ssm_only) {
    theta_out = Threshold(prefix + ".theta", hidden);
    linear = Linear(prefix + ".linear", hidden, hidden);
    bn = BatchNorm(prefix + ".bn", hidden);
  }
}

std::vector<Transition<double>> Block::transitions() const {
  std::vector<Transition<double>> out(state_);
  for (std::size_t j = 0; j < state_; ++j) {
    out[j] = transition(omega.value[j], dt.value[j], 0.0, scheme_);
  }
  return out;
}

namespace {

// y(r, c mod H) += D_c x(r, c): the gated input folded onto the H outputs.
void add_gated_input(const Matrix& x, const std::vector<double>& d, bool sparse, Matrix& y) {
  const std::size_t h = y.cols();
  auto& ops = op_counts();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const double xv = x(r, c);
      if (sparse) {
        if (xv != 0.0) {
          y(r, c % h) += d[c];
          ++ops.accumulates;
        }
      } else {
        y(r, c % h) += d[c] * xv;
        ++ops.multiplies;
        ++ops.spike_operand_multiplies;
      }
    }
  }
}

}  // namespace

Matrix Block::forward(const Matrix& x, std::size_t batch, std::size_t length,
                      const ForwardOptions& opt, const SurrogateConfig& sg, std::mt19937_64& rng,
                      Cache& cache) {
  require_shape(x, batch * length, in_, "Block::forward input");
  const std::size_t p = state_;
  const std::size_t rows = batch * length;
  const bool sparse = !opt.smooth;
  cache.batch = batch;
  cache.length = length;
  cache.x = x;

  // (1) drive = B x per step.
  {
    // B is stored like a bias-free Linear weight (P x in).
    Linear tmp("", in_, p, false);
    tmp.weight.value = B.value;
    cache.drive = tmp.forward(x, true, opt);
  }

  // (2) oscillator bank via the scan core, one sequence at a time.
  const auto trans = transitions();
  BlockDiagRecurrence<double> rec;
  rec.blocks.resize(p);
  for (std::size_t j = 0; j < p; ++j) rec.blocks[j] = trans[j].block;
  rec.forcing.resize(length * 2 * p);
  const std::vector<double> s0(2 * p, 0.0);
  cache.states = Matrix(rows, 2 * p);
  cache.v = Matrix(rows, p);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < length; ++t) {
      const double* d = cache.drive.data() + (b * length + t) * p;
      double* f = rec.forcing.data() + t * 2 * p;
      for (std::size_t j = 0; j < p; ++j) {
        f[j] = trans[j].cu * d[j];
        f[p + j] = trans[j].cv * d[j];
      }
    }
    const auto s = scan<double>(rec, s0, opt.scan_mode, opt.scan);
    std::copy(s.begin(), s.end(), cache.states.data() + b * length * 2 * p);
    for (std::size_t t = 0; t < length; ++t) {
      const double* st = s.data() + t * 2 * p;
      std::copy(st + p, st + 2 * p, cache.v.data() + (b * length + t) * p);
    }
  }

  // (3) z = step(v - theta_C).
  cache.z = theta_c.forward(cache.v, opt, sg);

  // (4) y = C z + D (.) x.
  {
    Linear cmap("", p, hidden_, false);
    cmap.weight.value = C.value;
    cache.y1 = cmap.forward(cache.z, true, opt);
  }
  add_gated_input(x, D.value, sparse, cache.y1);

  // (5) y = drop(step(y - theta_D)).
  const bool drop = opt.training && dropout_ > 0.0;
  cache.y2 = theta_d.forward(cache.y1, opt, sg);
  cache.mask_d = Matrix();
  if (drop) {
    cache.mask_d = dropout_mask(rows, hidden_, dropout_, rng);
    multiply_inplace(cache.y2, cache.mask_d);
  }

  Matrix y;
  cache.mask_out = Matrix();
  if (ssm_only_) {
    y = cache.y2;
  } else {
    // (6)-(7) Linear, BN, drop(step(y - theta)).
    cache.y3 = linear.forward(cache.y2, true, opt);
    cache.y4 = bn.forward(cache.y3, opt.training, cache.bn);
    y = theta_out.forward(cache.y4, opt, sg);
    if (drop) {
      cache.mask_out = dropout_mask(rows, hidden_, dropout_, rng);
      multiply_inplace(y, cache.mask_out);
    }
  }

  // (8) concat(x, y).
  Matrix out(rows, in_ + hidden_);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(x.row(r).begin(), x.row(r).end(), out.data() + r * (in_ + hidden_));
    std::copy(y.row(r).begin(), y.row(r).end(), out.data() + r * (in_ + hidden_) + in_);
  }
  return out;
}

Matrix Block::backward(const Cache& cache, const Matrix& grad_out, const ForwardOptions& opt,
                       const SurrogateConfig& sg) {
  const std::size_t rows = cache.batch * cache.length;
  const std::size_t p = state_;
  const std::size_t h = hidden_;
  const std::size_t length = cache.length;
  require_shape(grad_out, rows, in_ + h, "Block::backward");
  const bool sparse = !opt.smooth;

  Matrix gx(rows, in_);
  Matrix gy(rows, h);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* g = grad_out.data() + r * (in_ + h);
    std::copy(g, g + in_, gx.data() + r * in_);
    std::copy(g + in_, g + in_ + h, gy.data() + r * h);
  }

  Matrix g_y2;
  if (ssm_only_) {
    g_y2 = std::move(gy);
  } else {
    if (cache.mask_out.size() != 0) multiply_inplace(gy, cache.mask_out);
    const Matrix g_y4 = theta_out.backward(cache.y4, gy, sg);
    const Matrix g_y3 = bn.backward(cache.bn, g_y4);
    g_y2 = linear.backward(cache.y2, true, opt, g_y3);
  }
  if (cache.mask_d.size() != 0) multiply_inplace(g_y2, cache.mask_d);
  const Matrix g_y1 = theta_d.backward(cache.y1, g_y2, sg);

  // y1 = C z + fold(D (.) x)
  Matrix g_z;
  {
    Linear cmap("", p, h, false);
    cmap.weight.value = C.value;
    g_z = cmap.backward(cache.z, true, opt, g_y1);
    for (std::size_t i = 0; i < C.grad.size(); ++i) C.grad[i] += cmap.weight.grad[i];
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < in_; ++c) {
      const double g = g_y1(r, c % h);
      const double xv = cache.x(r, c);
      if (xv != 0.0) D.grad[c] += sparse ? g : g * xv;
      gx(r, c) += D.value[c] * g;
    }
  }

  const Matrix g_v = theta_c.backward(cache.v, g_z, sg);

  // Adjoint of the scan, one sequence at a time.
  const auto trans = transitions();
  std::vector<Block2<double>> mblocks(p);
  for (std::size_t j = 0; j < p; ++j) mblocks[j] = trans[j].block;
  std::vector<double> g_states(length * 2 * p);

  std::vector<TransitionGrad> tg(p);
  Matrix g_drive(rows, p);
  for (std::size_t b = 0; b < cache.batch; ++b) {
    for (std::size_t t = 0; t < length; ++t) {
      double* f = g_states.data() + t * 2 * p;
      const double* gv = g_v.data() + (b * length + t) * p;
      std::fill(f, f + p, 0.0);
      std::copy(gv, gv + p, f + p);
    }
    const auto lam_all = scan_adjoint<double>(mblocks, g_states, opt.scan_mode, opt.scan);
    for (std::size_t t = 0; t < length; ++t) {
      const double* lam = lam_all.data() + t * 2 * p;
      const std::size_t row = b * length + t;
      const double* d = cache.drive.data() + row * p;
      const double* prev = t == 0 ? nullptr : cache.states.data() + (row - 1) * 2 * p;
      double* gd = g_drive.data() + row * p;
      for (std::size_t j = 0; j < p; ++j) {
        const double lu = lam[j];
        const double lv = lam[p + j];
        gd[j] = trans[j].cu * lu + trans[j].cv * lv;
        tg[j].cu += lu * d[j];
        tg[j].cv += lv * d[j];
        if (prev != nullptr) {
          const double su = prev[j];
          const double sv = prev[p + j];
          tg[j].a11 += lu * su;
          tg[j].a12 += lu * sv;
          tg[j].a21 += lv * su;
          tg[j].a22 += lv * sv;
        }
      }
    }
  }
  for (std::size_t j = 0; j < p; ++j) {
    const auto by_omega =
        transition(Dual(omega.value[j], 1.0), Dual(dt.value[j]), Dual(0.0), scheme_);
    const auto by_dt =
        transition(Dual(omega.value[j]), Dual(dt.value[j], 1.0), Dual(0.0), scheme_);
    omega.grad[j] += tg[j].dot(by_omega);
    dt.grad[j] += tg[j].dot(by_dt);
  }

  // drive = B x
  {
    Linear bmap("", in_, p, false);
    bmap.weight.value = B.value;
    const Matrix g_in = bmap.backward(cache.x, true, opt, g_drive);
    for (std::size_t i = 0; i < B.grad.size(); ++i) B.grad[i] += bmap.weight.grad[i];
    for (std::size_t i = 0; i < gx.size(); ++i) gx.values()[i] += g_in.values()[i];
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Heads

ClassifierHead::ClassifierHead(std::size_t features, std::size_t classes)
    : linear("decoder.linear", features, classes) {}

Matrix ClassifierHead::forward(const Matrix& x, std::size_t batch, std::size_t length,
                               const ForwardOptions& opt) const {
  require_shape(x, batch * length, linear.in(), "ClassifierHead::forward");
  const std::size_t k = linear.out();
  // Sum W x_t over time (accumulate-only for spikes), then one scale by 1/L.
  Linear nobias = linear;
  nobias.bias.value.clear();
  const Matrix per_step = nobias.forward(x, true, opt);
  Matrix logits(batch, k);
  const double inv_len = 1.0 / static_cast<double>(length);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < length; ++t) {
      for (std::size_t c = 0; c < k; ++c) logits(b, c) += per_step(b * length + t, c);
    }
    for (std::size_t c = 0; c < k; ++c) logits(b, c) = logits(b, c) * inv_len + linear.bias.value[c];
  }
  op_counts().multiplies += batch * k;
  return logits;
}

Matrix ClassifierHead::backward(const Matrix& x, std::size_t batch, std::size_t length,
                                const ForwardOptions& opt, const Matrix& grad_logits) {
  require_shape(grad_logits, batch, linear.out(), "ClassifierHead::backward");
  const std::size_t k = linear.out();
  const double inv_len = 1.0 / static_cast<double>(length);
  Matrix g_step(batch * length, k);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < k; ++c) linear.bias.grad[c] += grad_logits(b, c);
    for (std::size_t t = 0; t < length; ++t) {
      for (std::size_t c = 0; c < k; ++c) g_step(b * length + t, c) = grad_logits(b, c) * inv_len;
    }
  }
  Linear nobias = linear;
  nobias.bias = Param();
  nobias.weight.zero_grad();
  Matrix gx = nobias.backward(x, true, opt, g_step);
  for (std::size_t i = 0; i < linear.weight.grad.size(); ++i) {
    linear.weight.grad[i] += nobias.weight.grad[i];
  }
  return gx;
}

RegressionHead::RegressionHead(std::size_t features, std::size_t out_dim, std::size_t kernel_size)
    : linear("decoder.linear", features, out_dim), kernel("decoder.kernel", {out_dim, kernel_size}) {
  const auto k = decay_kernel(kernel_size);
  for (std::size_t o = 0; o < out_dim; ++o) {
    std::copy(k.begin(), k.end(), kernel.value.begin() + o * kernel_size);
  }
}

std::vector<double> RegressionHead::decay_kernel(std::size_t k, double alpha) {
  std::vector<double> w(k);
  double p = 1.0;
  for (std::size_t i = 0; i < k; ++i, p *= alpha) w[i] = p;
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= total;
  return w;
}

Matrix RegressionHead::forward(const Matrix& x, std::size_t batch, std::size_t length,
                               const ForwardOptions& opt, Cache& cache) const {
  const std::size_t out_dim = linear.out();
  const std::size_t k = kernel.shape[1];
  if (k > length) {
    throw ParameterError("kernel size " + std::to_string(k) + " exceeds sequence length " +
                         std::to_string(length));
  }
  cache.proj = linear.forward(x, true, opt);
  Matrix y(batch * length, out_dim);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < length; ++t) {
      const std::size_t taps = std::min(k, t + 1);
      for (std::size_t o = 0; o < out_dim; ++o) {
        const double* w = kernel.value.data() + o * k;
        double acc = 0.0;
        for (std::size_t i = 0; i < taps; ++i) acc += w[i] * cache.proj(b * length + t - i, o);
        y(b * length + t, o) = acc;
      }
    }
  }
  op_counts().multiplies += batch * length * out_dim * k;
  return y;
}

Matrix RegressionHead::backward(const Matrix& x, std::size_t batch, std::size_t length,
                                const ForwardOptions& opt, const Cache& cache,
                                const Matrix& grad_out) {
  const std::size_t out_dim = linear.out();
  const std::size_t k = kernel.shape[1];
  require_shape(grad_out, batch * length, out_dim, "RegressionHead::backward");
  Matrix g_proj(batch * length, out_dim);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < length; ++t) {
      const std::size_t taps = std::min(k, t + 1);
      for (std::size_t o = 0; o < out_dim; ++o) {
        const double g = grad_out(b * length + t, o);
        if (g == 0.0) continue;
        const double* w = kernel.value.data() + o * k;
        double* gw = kernel.grad.data() + o * k;
        for (std::size_t i = 0; i < taps; ++i) {
          gw[i] += g * cache.proj(b * length + t - i, o);
          g_proj(b * length + t - i, o) += g * w[i];
        }
      }
    }
  }
  return linear.backward(x, true, opt, g_proj);
}

// ---------------------------------------------------------------------------
// Model

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const auto spec = cfg_.heterogeneity();
  std::mt19937_64 rng(seed);

  encoder = Encoder(cfg_.input_channels, cfg_.hidden);
  encoder.linear.init(rng);
  for (double& t : encoder.theta.theta.value) t = spec.theta_encoder.sample(rng);

  for (std::size_t n = 0; n < cfg_.n_blocks; ++n) {
    Block blk("block" + std::to_string(n), cfg_.block_input_width(n), cfg_.hidden, cfg_.state,
              cfg_.scheme, cfg_.dropout, cfg_.ssm_only);
    for (double& x : blk.omega.value) x = spec.omega.sample(rng);
    for (double& x : blk.dt.value) x = spec.dt.sample(rng);
    for (double& x : blk.B.value) x = spec.b.sample(rng);
    for (double& x : blk.C.value) x = spec.c.sample(rng);
    for (double& x : blk.D.value) x = spec.d.sample(rng);
    for (double& x : blk.theta_c.theta.value) x = spec.theta_c.sample(rng);
    for (double& x : blk.theta_d.theta.value) x = spec.theta_d.sample(rng);
    if (!cfg_.ssm_only) {
      blk.linear.init(rng);
      for (double& x : blk.theta_out.theta.value) x = spec.theta_d.sample(rng);
    }
    blocks.push_back(std::move(blk));
  }

  if (cfg_.task == Task::Classification) {
    classifier.emplace(cfg_.decoder_input_width(), cfg_.num_classes);
    classifier->linear.init(rng);
  } else {
    regressor.emplace(cfg_.decoder_input_width(), cfg_.out_dim, cfg_.kernel_size);
    regressor->linear.init(rng);
  }
  project();
}

ForwardResult Model::forward(const SequenceBatch& input, const ForwardOptions& opt, Cache* cache) {
  require_shape(input.values, input.rows(), cfg_.input_channels, "Model::forward input");
  if (input.batch == 0 || input.length == 0) throw StructuralError("Model::forward: empty batch");
  Cache local;
  Cache& c = cache != nullptr ? *cache : local;
  c.batch = input.batch;
  c.length = input.length;
  c.blocks.resize(blocks.size());
  c.block_outputs.resize(blocks.size());

  std::mt19937_64 rng(opt.dropout_seed);
  ForwardResult result;
  const Matrix encoded = encoder.forward(input.values, opt, cfg_.surrogate, c.encoder);
  for (std::size_t n = 0; n < blocks.size(); ++n) {
    const Matrix& in = n == 0 ? encoded : c.block_outputs[n - 1];
    if (!opt.smooth) require_binary(in, n);
    if (opt.on_boundary) opt.on_boundary(n, in);
    result.block_input_rates.push_back(firing_rate(in));
    c.block_outputs[n] =
        blocks[n].forward(in, input.batch, input.length, opt, cfg_.surrogate, rng, c.blocks[n]);
  }
  const Matrix& last = c.block_outputs.back();
  if (!opt.smooth) require_binary(last, blocks.size());
  if (opt.on_boundary) opt.on_boundary(blocks.size(), last);
  result.decoder_input_rate = firing_rate(last);

  if (classifier) {
    result.output = classifier->forward(last, input.batch, input.length, opt);
  } else {
    result.output = regressor->forward(last, input.batch, input.length, opt, c.regressor);
  }
  return result;
}

void Model::backward(const Cache& cache, const Matrix& grad_output, const ForwardOptions& opt) {
  const Matrix& last = cache.block_outputs.back();
  Matrix g = classifier
                 ? classifier->backward(last, cache.batch, cache.length, opt, grad_output)
                 : regressor->backward(last, cache.batch, cache.length, opt, cache.regressor,
                                       grad_output);
  for (std::size_t n = blocks.size(); n-- > 0;) {
    g = blocks[n].backward(cache.blocks[n], g, opt, cfg_.surrogate);
  }
  encoder.backward(cache.encoder, g, opt, cfg_.surrogate);
}

std::vector<Param*> Model::params() {
  std::vector<Param*> out;
  auto add_linear = [&](Linear& l) {
    out.push_back(&l.weight);
    if (!l.bias.value.empty()) out.push_back(&l.bias);
  };
  auto add_bn = [&](BatchNorm& bn) {
    out.push_back(&bn.gamma);
    out.push_back(&bn.beta);
    out.push_back(&bn.running_mean);
    out.push_back(&bn.running_var);
  };
  add_linear(encoder.linear);
  add_bn(encoder.bn);
  out.push_back(&encoder.theta.theta);
  for (Block& b : blocks) {
    out.push_back(&b.omega);
    out.push_back(&b.dt);
    out.push_back(&b.B);
    out.push_back(&b.C);
    out.push_back(&b.D);
    out.push_back(&b.theta_c.theta);
    out.push_back(&b.theta_d.theta);
    if (!b.ssm_only()) {
      add_linear(b.linear);
      add_bn(b.bn);
      out.push_back(&b.theta_out.theta);
    }
  }
  if (classifier) add_linear(classifier->linear);
  if (regressor) {
    add_linear(regressor->linear);
    out.push_back(&regressor->kernel);
  }
  return out;
}

std::vector<const Param*> Model::params() const {
  auto mut = const_cast<Model*>(this)->params();
  return {mut.begin(), mut.end()};
}

std::vector<Param*> Model::trainable_params() {
  auto all = params();
  std::erase_if(all, [](const Param* p) { return !p->trainable; });
  return all;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Param* p : params()) {
    if (p->trainable) n += p->numel();
  }
  return n;
}

void Model::zero_grad() {
  for (Param* p : params()) p->zero_grad();
}

void Model::project() {
  for (Param* p : params()) p->project(cfg_.omega_max);
}

// ---------------------------------------------------------------------------
// Single-sequence conveniences

SpikeTensor encode(Model& model, const Matrix& x) {
  ForwardOptions opt;
  Encoder::Cache cache;
  return SpikeTensor::from_matrix(model.encoder.forward(x, opt, model.config().surrogate, cache));
}

SpikeTensor block_forward(const SpikeTensor& x, Block& block, bool training,
                          const SurrogateConfig& sg, std::uint64_t dropout_seed) {
  ForwardOptions opt;
  opt.training = training;
  std::mt19937_64 rng(dropout_seed);
  Block::Cache cache;
  const Matrix out = block.forward(x.to_matrix(), 1, x.rows(), opt, sg, rng, cache);
  return SpikeTensor::from_matrix(out);
}

Matrix decode_classify(const SpikeTensor& spikes, const ClassifierHead& head) {
  return head.forward(spikes.to_matrix(), 1, spikes.rows(), ForwardOptions{});
}

Matrix decode_regress(const SpikeTensor& spikes, const RegressionHead& head) {
  RegressionHead::Cache cache;
  return head.forward(spikes.to_matrix(), 1, spikes.rows(), ForwardOptions{}, cache);
}

}  // namespace share
