#include "share/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace share {

std::string_view to_string(Loss loss) {
  switch (loss) {
    case Loss::CrossEntropy: return "cross_entropy";
    case Loss::MSE: return "mse";
    case Loss::MAE: return "mae";
  }
  return "unknown";
}

Loss parse_loss(std::string_view text) {
  if (text == "cross_entropy" || text == "ce") return Loss::CrossEntropy;
  if (text == "mse") return Loss::MSE;
  if (text == "mae") return Loss::MAE;
  throw ParameterError("unknown loss '" + std::string(text) + "'");
}

void SplitFractions::validate() const {
  if (train < 0.0 || val < 0.0 || test < 0.0 || std::abs(train + val + test - 1.0) > 1e-9) {
    throw ParameterError("split fractions must be non-negative and sum to 1");
  }
  if (train <= 0.0) throw ParameterError("train fraction must be positive");
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ParameterError("lr must be finite and >= 0");
  if (!(weight_decay >= 0.0)) throw ParameterError("weight_decay must be >= 0");
  if (batch_size == 0) throw ParameterError("batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ParameterError("Adam betas must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw ParameterError("Adam eps must be > 0");
  split.validate();
}

void Dataset::validate() const {
  if (inputs.empty()) throw DataError("dataset '" + name + "' is empty");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].rows() != length || inputs[i].cols() != channels) {
      throw DataError("sample " + std::to_string(i) + " has shape " +
                      std::to_string(inputs[i].rows()) + "x" + std::to_string(inputs[i].cols()) +
                      ", expected " + std::to_string(length) + "x" + std::to_string(channels));
    }
  }
  if (task == Task::Classification) {
    if (labels.size() != inputs.size()) throw DataError("label count does not match sample count");
    for (int y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
        throw DataError("label " + std::to_string(y) + " outside [0, " +
                        std::to_string(num_classes) + ")");
      }
    }
  } else {
    if (targets.size() != inputs.size()) throw DataError("target count does not match sample count");
    for (const Matrix& t : targets) {
      if (t.rows() != length || t.cols() != out_dim) throw DataError("target shape mismatch");
    }
    if (eval_from >= length) throw DataError("eval_from must be below the sequence length");
  }
  if (!split.empty()) {
    if (split.size() != inputs.size()) throw DataError("split assignment count mismatch");
    for (int s : split) {
      if (s < 0 || s > 2) throw DataError("split assignment must be 0, 1 or 2");
    }
  }
}

SplitIndices split_indices(const Dataset& data, const SplitFractions& fractions, std::uint64_t seed) {
  fractions.validate();
  SplitIndices out;
  const std::size_t n = data.size();
  if (!data.split.empty()) {
    for (std::size_t i = 0; i < n; ++i) {
      (data.split[i] == 0 ? out.train : data.split[i] == 1 ? out.val : out.test).push_back(i);
    }
    return out;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(fractions.train * n));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(fractions.val * n)));
  out.train.assign(order.begin(), order.begin() + n_train);
  out.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  out.test.assign(order.begin() + n_train + n_val, order.end());
  return out;
}

LossValue classification_loss(const Matrix& logits, const std::vector<int>& labels) {
  const std::size_t batch = logits.rows();
  const std::size_t k = logits.cols();
  if (labels.size() != batch) throw StructuralError("classification_loss: label count mismatch");
  LossValue out{0.0, Matrix(batch, k)};
  for (std::size_t b = 0; b < batch; ++b) {
    const auto row = logits.row(b);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double x : row) z += std::exp(x - mx);
    const double log_z = mx + std::log(z);
    out.value += log_z - row[labels[b]];
    for (std::size_t c = 0; c < k; ++c) {
      out.grad(b, c) = (std::exp(row[c] - log_z) - (static_cast<int>(c) == labels[b] ? 1.0 : 0.0)) /
                       static_cast<double>(batch);
    }
  }
  out.value /= static_cast<double>(batch);
  return out;
}

LossValue regression_loss(Loss loss, const Matrix& output, const Matrix& target, std::size_t batch,
                          std::size_t length, std::size_t eval_from) {
  require_shape(target, output.rows(), output.cols(), "regression_loss target");
  if (output.rows() != batch * length) throw StructuralError("regression_loss: row count mismatch");
  if (eval_from >= length) throw ParameterError("eval_from must be below the sequence length");
  const std::size_t dim = output.cols();
  const double count = static_cast<double>(batch * (length - eval_from) * dim);
  LossValue out{0.0, Matrix(output.rows(), dim)};
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = eval_from; t < length; ++t) {
      const std::size_t r = b * length + t;
      for (std::size_t c = 0; c < dim; ++c) {
        const double e = output(r, c) - target(r, c);
        if (loss == Loss::MAE) {
          out.value += std::abs(e);
          out.grad(r, c) = (e > 0.0 ? 1.0 : e < 0.0 ? -1.0 : 0.0) / count;
        } else {
          out.value += e * e;
          out.grad(r, c) = 2.0 * e / count;
        }
      }
    }
  }
  out.value /= count;
  return out;
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::vector<Param*> params, double beta1, double beta2, double eps, double weight_decay)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  for (const Param* p : params_) {
    m_.emplace_back(p->numel(), 0.0);
    v_.emplace_back(p->numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.numel(); ++k) {
      const double g = p.grad[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p.value[k] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p.value[k]);
    }
  }
}

// ---------------------------------------------------------------------------
// Batching and evaluation

namespace {

struct Batch {
  SequenceBatch input;
  std::vector<int> labels;
  Matrix targets;
};

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices, std::size_t begin,
                 std::size_t end) {
  Batch b;
  const std::size_t n = end - begin;
  b.input = {n, data.length, Matrix(n * data.length, data.channels)};
  if (data.task == Task::Regression) b.targets = Matrix(n * data.length, data.out_dim);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx = indices[begin + i];
    std::copy(data.inputs[idx].values().begin(), data.inputs[idx].values().end(),
              b.input.values.data() + i * data.length * data.channels);
    if (data.task == Task::Classification) {
      b.labels.push_back(data.labels[idx]);
    } else {
      std::copy(data.targets[idx].values().begin(), data.targets[idx].values().end(),
                b.targets.data() + i * data.length * data.out_dim);
    }
  }
  return b;
}

LossValue batch_loss(const Dataset& data, Loss loss, const Matrix& output, const Batch& b) {
  if (data.task == Task::Classification) return classification_loss(output, b.labels);
  return regression_loss(loss, output, b.targets, b.input.batch, data.length, data.eval_from);
}

// Running sums for one split.
struct Tally {
  std::size_t samples = 0;
  double loss = 0.0, correct = 0.0, se = 0.0, ae = 0.0, elems = 0.0;
  std::vector<FiringRate> rates;
  FiringRate decoder_rate;

  void add(const Dataset& data, const Batch& b, const Matrix& output, double batch_loss,
           const ForwardResult* fr) {
    const std::size_t n = b.input.batch;
    samples += n;
    loss += batch_loss * static_cast<double>(n);
    if (data.task == Task::Classification) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto row = output.row(i);
        const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
        if (pred == b.labels[i]) correct += 1.0;
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = data.eval_from; t < data.length; ++t) {
          for (std::size_t c = 0; c < data.out_dim; ++c) {
            const double e = output(i * data.length + t, c) - b.targets(i * data.length + t, c);
            se += e * e;
            ae += std::abs(e);
            elems += 1.0;
          }
        }
      }
    }
    if (fr != nullptr) {
      if (rates.empty()) rates.resize(fr->block_input_rates.size());
      for (std::size_t i = 0; i < rates.size(); ++i) rates[i] += fr->block_input_rates[i];
      decoder_rate += fr->decoder_input_rate;
    }
  }

  EvalResult result() const {
    EvalResult r;
    r.samples = samples;
    if (samples > 0) {
      r.loss = loss / static_cast<double>(samples);
      r.accuracy = correct / static_cast<double>(samples);
    }
    if (elems > 0.0) {
      r.mse = se / elems;
      r.mae = ae / elems;
    }
    r.block_input_rates = rates;
    r.decoder_input_rate = decoder_rate;
    return r;
  }
};

void check_compatible(const Model& model, const Dataset& data) {
  const auto& cfg = model.config();
  if (cfg.input_channels != data.channels) {
    throw StructuralError("model expects " + std::to_string(cfg.input_channels) +
                          " channels, dataset has " + std::to_string(data.channels));
  }
  if (cfg.task != data.task) throw StructuralError("model and dataset tasks differ");
  if (cfg.task == Task::Classification && cfg.num_classes != data.num_classes) {
    throw StructuralError("model and dataset class counts differ");
  }
  if (cfg.task == Task::Regression && cfg.out_dim != data.out_dim) {
    throw StructuralError("model and dataset output widths differ");
  }
}

void record(std::vector<MetricRecord>& history, std::size_t epoch, const char* split,
            const EvalResult& r, Task task) {
  history.push_back({epoch, split, "loss", r.loss});
  if (task == Task::Classification) {
    history.push_back({epoch, split, "accuracy", r.accuracy});
  } else {
    history.push_back({epoch, split, "mse", r.mse});
    history.push_back({epoch, split, "mae", r.mae});
  }
}

std::vector<std::vector<double>> snapshot(Model& model) {
  std::vector<std::vector<double>> out;
  for (const Param* p : model.params()) out.push_back(p->value);
  return out;
}

void restore(Model& model, const std::vector<std::vector<double>>& values) {
  auto params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace

EvalResult evaluate(Model& model, const Dataset& data, const std::vector<std::size_t>& indices,
                    Loss loss, std::size_t batch_size) {
  check_compatible(model, data);
  Tally tally;
  ForwardOptions opt;
  for (std::size_t begin = 0; begin < indices.size(); begin += batch_size) {
    const std::size_t end = std::min(indices.size(), begin + batch_size);
    const Batch b = make_batch(data, indices, begin, end);
    const ForwardResult fr = model.forward(b.input, opt);
    const LossValue lv = batch_loss(data, loss, fr.output, b);
    tally.add(data, b, fr.output, lv.value, &fr);
  }
  return tally.result();
}

bool metric_higher_is_better(Task task) { return task == Task::Classification; }

double selection_metric(const EvalResult& r, Task task, Loss loss) {
  if (task == Task::Classification) return r.accuracy;
  return loss == Loss::MAE ? r.mae : r.mse;
}

std::string_view selection_metric_name(Task task, Loss loss) {
  if (task == Task::Classification) return "accuracy";
  return loss == Loss::MAE ? "mae" : "mse";
}

FitResult fit(Model& model, const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  data.validate();
  check_compatible(model, data);
  if (data.task == Task::Classification && cfg.loss != Loss::CrossEntropy) {
    throw ParameterError("classification requires the cross_entropy loss");
  }
  if (data.task == Task::Regression && cfg.loss == Loss::CrossEntropy) {
    throw ParameterError("regression requires the mse or mae loss");
  }

  const SplitIndices split = split_indices(data, cfg.split, cfg.seed);
  if (split.train.empty()) throw DataError("training split is empty");
  const auto& val_idx = split.val.empty() ? split.train : split.val;
  const Task task = data.task;
  const bool higher = metric_higher_is_better(task);

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Adam adam(model.trainable_params(), cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);

  FitResult result;
  std::vector<std::vector<double>> best;
  std::vector<std::size_t> order = split.train;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    Tally train;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const Batch b = make_batch(data, order, begin, end);
      ForwardOptions opt;
      opt.training = true;
      opt.dropout_seed = rng();
      Model::Cache cache;
      const ForwardResult fr = model.forward(b.input, opt, &cache);
      const LossValue lv = batch_loss(data, cfg.loss, fr.output, b);
      if (!std::isfinite(lv.value)) {
        throw TrainingError("loss diverged at epoch " + std::to_string(epoch) + ", batch starting " +
                            std::to_string(begin) + ": " + std::to_string(lv.value));
      }
      train.add(data, b, fr.output, lv.value, &fr);
      model.zero_grad();
      model.backward(cache, lv.grad, opt);
      for (const Param* p : model.trainable_params()) {
        for (double g : p->grad) {
          if (!std::isfinite(g)) {
            throw TrainingError("non-finite gradient in " + p->name + " at epoch " + std::to_string(epoch));
          }
        }
      }
      adam.step(cfg.lr);
      model.project();
    }

    const EvalResult tr = train.result();
    const EvalResult va = evaluate(model, data, val_idx, cfg.loss);
    record(result.history, epoch, "train", tr, task);
    record(result.history, epoch, "val", va, task);
    result.epochs_run = epoch;
    if (on_epoch) on_epoch(epoch, tr, va);

    const double metric = selection_metric(va, task, cfg.loss);
    if (!std::isfinite(metric)) throw TrainingError("validation metric is not finite at epoch " + std::to_string(epoch));
    const bool improved = result.best_epoch == 0 || (higher ? metric > result.best_val : metric < result.best_val);
    if (improved) {
      result.best_epoch = epoch;
      result.best_val = metric;
      result.val = va;
      best = snapshot(model);
    }
    if (cfg.target_metric && (higher ? metric >= *cfg.target_metric : metric <= *cfg.target_metric)) break;
  }

  if (!best.empty()) restore(model, best);
  if (!split.test.empty()) {
    result.test = evaluate(model, data, split.test, cfg.loss);
    record(result.history, result.best_epoch, "test", result.test, task);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Random search

SearchSpace SearchSpace::protocol() {
  return {{1e-3, 1e-4, 1e-5}, {16, 64, 128}, {16, 64, 256}, {2, 4, 6}};
}

std::vector<TrialParams> sample_trials(const SearchSpace& space, std::size_t budget, std::uint64_t seed,
                                       const std::optional<TrialParams>& anchor) {
  if (space.empty()) throw ParameterError("search space has an empty dimension");
  if (budget == 0) throw ParameterError("search budget must be >= 1");
  std::vector<TrialParams> trials;
  if (anchor) trials.push_back(*anchor);
  std::mt19937_64 rng(seed);
  auto pick = [&rng](const auto& values) {
    std::uniform_int_distribution<std::size_t> d(0, values.size() - 1);
    return values[d(rng)];
  };
  while (trials.size() < budget) {
    TrialParams t;
    t.lr = pick(space.lr);
    t.hidden = pick(space.hidden);
    t.state = pick(space.state);
    t.n_blocks = pick(space.n_blocks);
    trials.push_back(t);
  }
  return trials;
}

std::vector<Trial> random_search(const SearchSpace& space, std::size_t budget, std::uint64_t seed,
                                 const TrialObjective& objective, bool higher_is_better,
                                 const std::optional<TrialParams>& anchor) {
  const auto params = sample_trials(space, budget, seed, anchor);
  std::vector<Trial> trials;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Trial t = objective(params[i], i);
    t.index = i;
    t.params = params[i];
    trials.push_back(t);
  }
  std::stable_sort(trials.begin(), trials.end(), [higher_is_better](const Trial& a, const Trial& b) {
    return higher_is_better ? a.val_metric > b.val_metric : a.val_metric < b.val_metric;
  });
  return trials;
}

TrialObjective training_objective(const ModelConfig& base_model, const TrainConfig& base_train,
                                  const Dataset& data) {
  return [base_model, base_train, &data](const TrialParams& p, std::size_t) {
    ModelConfig mc = base_model;
    mc.hidden = p.hidden;
    mc.state = p.state;
    mc.n_blocks = p.n_blocks;
    TrainConfig tc = base_train;
    tc.lr = p.lr;
    Model model(mc, tc.seed);
    const FitResult r = fit(model, data, tc);
    Trial t;
    t.seed = tc.seed;
    t.val_metric = r.best_val;
    t.test_metric = selection_metric(r.test, data.task, tc.loss);
    return t;
  };
}

// ---------------------------------------------------------------------------
// Ablation

AblationSpec AblationSpec::parse(const std::vector<std::string>& names) {
  AblationSpec spec;
  auto add = [&spec](Component c) {
    if (std::find(spec.homogeneous.begin(), spec.homogeneous.end(), c) == spec.homogeneous.end()) {
      spec.homogeneous.push_back(c);
    }
  };
  for (const auto& n : names) {
    if (n == "all") {
      for (Component c : kAllComponents) add(c);
    } else if (n == "ssm_only") {
      spec.ssm_only = true;
    } else {
      add(parse_component(n));
    }
  }
  std::sort(spec.homogeneous.begin(), spec.homogeneous.end());
  return spec;
}

std::string AblationSpec::label() const {
  std::string out;
  if (homogeneous.size() == kAllComponents.size()) {
    out = "all";
  } else {
    for (Component c : homogeneous) {
      if (!out.empty()) out += "+";
      out += to_string(c);
    }
  }
  if (ssm_only) out += out.empty() ? "ssm_only" : "+ssm_only";
  return out.empty() ? "heterogeneous" : out;
}

void AblationSpec::apply(ModelConfig& cfg) const {
  for (Component c : homogeneous) {
    if (std::find(cfg.homogeneous.begin(), cfg.homogeneous.end(), c) == cfg.homogeneous.end()) {
      cfg.homogeneous.push_back(c);
    }
  }
  if (ssm_only) cfg.ssm_only = true;
}

AblationRow run_ablation(const AblationSpec& spec, const Dataset& data, const ModelConfig& model_cfg,
                         const TrainConfig& train_cfg, std::size_t seeds) {
  if (seeds == 0) throw ParameterError("ablation needs at least one seed");
  ModelConfig mc = model_cfg;
  spec.apply(mc);
  AblationRow row;
  row.label = spec.label();
  for (std::size_t k = 0; k < seeds; ++k) {
    TrainConfig tc = train_cfg;
    tc.seed = train_cfg.seed + k;
    Model model(mc, tc.seed);
    const FitResult r = fit(model, data, tc);
    row.accuracies.push_back(selection_metric(r.test, data.task, tc.loss));
    row.test_samples = r.test.samples;
  }
  const double n = static_cast<double>(seeds);
  row.mean = std::accumulate(row.accuracies.begin(), row.accuracies.end(), 0.0) / n;
  double ss = 0.0;
  for (double a : row.accuracies) ss += (a - row.mean) * (a - row.mean);
  row.stddev = seeds > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return row;
}

Interval binomial_interval(double p, std::size_t n, double z) {
  if (n == 0) throw ParameterError("binomial_interval needs n >= 1");
  const double half = z * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
  return {p - half, p + half};
}

}  // namespace share
