#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "share/network.hpp"
#include "share/op_counter.hpp"

using namespace share;

namespace {

SequenceBatch random_batch(std::size_t batch, std::size_t length, std::size_t channels,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  SequenceBatch b{batch, length, Matrix(batch * length, channels)};
  for (double& x : b.values.values()) x = n01(rng);
  return b;
}

ModelConfig small_config(Task task = Task::Classification) {
  ModelConfig cfg;
  cfg.input_channels = 3;
  cfg.n_blocks = 2;
  cfg.hidden = 4;
  cfg.state = 3;
  cfg.task = task;
  cfg.num_classes = 3;
  cfg.out_dim = 2;
  cfg.kernel_size = 4;
  cfg.dropout = 0.0;
  return cfg;
}

Matrix random_like(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& x : m.values()) x = n01(rng);
  return m;
}

double weighted_sum(const Matrix& a, const Matrix& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values()[i] * w.values()[i];
  return s;
}

}  // namespace

TEST_CASE("encoder: zero input never spikes") {
  auto cfg = small_config();
  Model model(cfg, 1);
  for (double& b : model.encoder.linear.bias.value) b = 0.0;
  const auto z = encode(model, Matrix(10, 3, 0.0));
  CHECK(z.count() == 0);
}

TEST_CASE("encoder: identity linear on one-hot rows") {
  auto cfg = small_config();
  cfg.input_channels = 4;
  Model model(cfg, 2);
  auto& lin = model.encoder.linear;
  std::fill(lin.weight.value.begin(), lin.weight.value.end(), 0.0);
  std::fill(lin.bias.value.begin(), lin.bias.value.end(), 0.0);
  for (std::size_t i = 0; i < 4; ++i) lin.weight.value[i * 4 + i] = 1.0;
  std::fill(model.encoder.theta.theta.value.begin(), model.encoder.theta.theta.value.end(), 0.5);
  Matrix x(4, 4);
  for (std::size_t i = 0; i < 4; ++i) x(i, i) = 1.0;
  ForwardOptions opt;
  opt.training = true;
  Encoder::Cache cache;
  const Matrix z = model.encoder.forward(x, opt, cfg.surrogate, cache);
  // Each column has mean 1/4 and variance 3/16: the hot entry normalises to
  // 0.75 / sqrt(3/16 + eps) ~ 1.73, the cold ones to about -0.58.
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      const double xhat = ((r == c ? 1.0 : 0.0) - 0.25) / std::sqrt(0.1875 + 1e-5);
      CHECK(cache.normed(r, c) == Catch::Approx(xhat).epsilon(1e-12));
      CHECK(z(r, c) == (r == c ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("encoder rejects non-finite input") {
  Model model(small_config(), 3);
  Matrix x(2, 3);
  x(1, 1) = std::nan("");
  CHECK_THROWS_AS(encode(model, x), DataError);
}

TEST_CASE("block on a hand-computed three-step recurrence") {
  Block blk("b", 1, 1, 1, Scheme::IMEX, 0.0, false);
  blk.omega.value = {1.0};
  blk.dt.value = {1.0};
  blk.B.value = {1.0};
  blk.C.value = {1.0};
  blk.D.value = {0.0};
  blk.theta_c.theta.value = {0.0};
  blk.theta_d.theta.value = {0.0};
  blk.theta_out.theta.value = {0.0};
  Matrix x(3, 1, std::vector<double>{1, 0, 0});
  ForwardOptions opt;
  std::mt19937_64 rng(0);
  Block::Cache cache;
  const Matrix out = blk.forward(x, 1, 3, opt, {}, rng, cache);
  // s1 = (1, 1), s2 = (0, 1), s3 = (-1, 0) in (u, v).
  const std::vector<double> states{1, 1, 0, 1, -1, 0};
  CHECK(cache.states.values() == states);
  // v = (1, 1, 0) and 0 >= 0 spikes under the >= convention.
  CHECK(cache.z.values() == std::vector<double>{1, 1, 1});
  CHECK(out.cols() == 2);
  for (std::size_t t = 0; t < 3; ++t) CHECK(out(t, 0) == x(t, 0));
}

TEST_CASE("zero input spikes propagate zeros through the block") {
  Block blk("b", 4, 3, 2, Scheme::IM, 0.0, true);
  blk.omega.value = {0.5, 0.7};
  blk.dt.value = {0.5, 0.2};
  std::fill(blk.B.value.begin(), blk.B.value.end(), 0.3);
  std::fill(blk.C.value.begin(), blk.C.value.end(), 0.3);
  std::fill(blk.theta_c.theta.value.begin(), blk.theta_c.theta.value.end(), 0.1);
  std::fill(blk.theta_d.theta.value.begin(), blk.theta_d.theta.value.end(), 0.1);
  const auto out = block_forward(SpikeTensor(6, 4), blk, false);
  CHECK(out.cols() == 7);
  CHECK(out.count() == 0);
}

TEST_CASE("block rejects mismatched widths") {
  Block blk("b", 4, 3, 2, Scheme::IM, 0.0, true);
  CHECK_THROWS_AS(block_forward(SpikeTensor(6, 5), blk, false), StructuralError);
}

TEST_CASE("recorded block input rate equals the input rate") {
  auto cfg = small_config();
  cfg.n_blocks = 1;
  Model model(cfg, 4);
  const auto batch = random_batch(2, 25, 3, 5);
  const auto res = model.forward(batch, ForwardOptions{});
  Model::Cache cache;
  model.forward(batch, ForwardOptions{}, &cache);
  const auto enc = SpikeTensor::from_matrix(model.encoder.forward(batch.values, ForwardOptions{}, cfg.surrogate, cache.encoder));
  CHECK(res.block_input_rates.at(0) == enc.rate());
}

TEST_CASE("classifier head") {
  ClassifierHead head(3, 2);
  head.linear.weight.value = {1, 2, 3, 4, 5, 6};
  head.linear.bias.value = {0.5, -0.5};
  SpikeTensor none(5, 3);
  CHECK(decode_classify(none, head).values() == std::vector<double>{0.5, -0.5});
  SpikeTensor one(5, 3);
  for (std::size_t t = 0; t < 5; ++t) one.set(t, 1, true);
  CHECK(decode_classify(one, head).values() == std::vector<double>{2.5, 4.5});

  std::mt19937_64 rng(6);
  ClassifierHead big(8, 4);
  big.linear.init(rng);
  SpikeTensor spikes(50, 8);
  std::bernoulli_distribution coin(0.4);
  for (std::size_t t = 0; t < 50; ++t) {
    for (std::size_t c = 0; c < 8; ++c) spikes.set(t, c, coin(rng));
  }
  const Matrix logits = decode_classify(spikes, big);
  for (std::size_t k = 0; k < 4; ++k) {
    double acc = 0.0;
    for (std::size_t t = 0; t < 50; ++t) {
      for (std::size_t c = 0; c < 8; ++c) acc += big.linear.weight.value[k * 8 + c] * (spikes(t, c) ? 1.0 : 0.0);
    }
    CHECK(logits(0, k) == Catch::Approx(acc / 50.0 + big.linear.bias.value[k]).epsilon(1e-6));
  }
}

TEST_CASE("regression head") {
  RegressionHead head(2, 1, 4);
  head.linear.weight.value = {0.25, 0.5};
  head.linear.bias.value = {0.1};
  SpikeTensor spikes(10, 2);
  for (std::size_t t = 0; t < 10; ++t) spikes.set(t, t % 2, true);

  head.kernel.value = {1, 0, 0, 0};
  const Matrix delta = decode_regress(spikes, head);
  for (std::size_t t = 0; t < 10; ++t) CHECK(delta(t, 0) == Catch::Approx(t % 2 == 0 ? 0.35 : 0.6));

  const auto decay = RegressionHead::decay_kernel(4);
  double total = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(decay[i] == Catch::Approx(std::pow(0.9, i) / (1 + 0.9 + 0.81 + 0.729)).epsilon(1e-14));
    total += decay[i];
  }
  CHECK(total == Catch::Approx(1.0).epsilon(1e-15));
  head.kernel.value = decay;
  SpikeTensor constant(10, 2);
  for (std::size_t t = 0; t < 10; ++t) constant.set(t, 0, true);
  const Matrix steady = decode_regress(constant, head);
  CHECK(steady(9, 0) == Catch::Approx(0.35).epsilon(1e-14));
  // Before the kernel fills, the output is a partial geometric sum.
  CHECK(steady(0, 0) == Catch::Approx(0.35 * decay[0]).epsilon(1e-14));

  CHECK_THROWS_AS(decode_regress(SpikeTensor(3, 2), head), ParameterError);
}

TEST_CASE("one-block model equals the composition of its stages") {
  auto cfg = small_config();
  cfg.n_blocks = 1;
  Model model(cfg, 7);
  const auto batch = random_batch(1, 30, 3, 8);
  const auto res = model.forward(batch, ForwardOptions{});
  const auto z = encode(model, batch.values);
  const auto y = block_forward(z, model.blocks[0], false);
  CHECK(decode_classify(y, *model.classifier) == res.output);
}

TEST_CASE("inter-block tensors are binary and the forward pass is multiplication-free") {
  for (std::size_t n : {1u, 2u, 4u}) {
    for (Task task : {Task::Classification, Task::Regression}) {
      auto cfg = small_config(task);
      cfg.n_blocks = n;
      cfg.dropout = 0.2;
      Model model(cfg, 9 + n);
      const auto batch = random_batch(3, 40, 3, 10);
      std::size_t seen = 0;
      ForwardOptions opt;
      opt.training = true;
      opt.dropout_seed = 5;
      opt.on_boundary = [&](std::size_t, const Matrix& m) {
        CHECK(is_binary(m));
        ++seen;
      };
      reset_op_counts();
      model.forward(batch, opt);
      CHECK(seen == n + 1);
      CHECK(op_counts().spike_operand_multiplies == 0);
      CHECK(op_counts().accumulates > 0);
    }
  }
}

TEST_CASE("smooth mode counts its dense spike products") {
  Model model(small_config(), 11);
  ForwardOptions opt;
  opt.smooth = true;
  reset_op_counts();
  model.forward(random_batch(1, 10, 3, 12), opt);
  CHECK(op_counts().spike_operand_multiplies > 0);
}

TEST_CASE("eval forward is deterministic") {
  Model model(small_config(Task::Regression), 13);
  const auto batch = random_batch(2, 30, 3, 14);
  const auto a = model.forward(batch, ForwardOptions{});
  const auto b = model.forward(batch, ForwardOptions{});
  CHECK(a.output == b.output);
}

TEST_CASE("parameter count matches the closed form") {
  for (bool ssm_only : {false, true}) {
    for (Task task : {Task::Classification, Task::Regression}) {
      for (std::size_t n : {1u, 3u}) {
        auto cfg = small_config(task);
        cfg.n_blocks = n;
        cfg.ssm_only = ssm_only;
        Model model(cfg, 15);
        std::size_t traversed = 0;
        for (const Param* p : model.params()) {
          if (p->trainable) traversed += p->numel();
        }
        CHECK(traversed == expected_parameter_count(cfg));
        CHECK(model.parameter_count() == traversed);
      }
    }
  }
}

TEST_CASE("homogeneous overrides set constants") {
  auto cfg = small_config();
  cfg.homogeneous = {Component::B, Component::C, Component::Omega, Component::Dt};
  Model model(cfg, 16);
  for (const auto& blk : model.blocks) {
    for (double x : blk.B.value) CHECK(x == 0.0);
    for (double x : blk.C.value) CHECK(x == 0.0);
    for (double x : blk.omega.value) CHECK(x == 1.0);
    for (double x : blk.dt.value) CHECK(x == 1.0);
  }
  CHECK_THROWS_AS(parse_component("E"), ParameterError);
  for (Component c : kAllComponents) CHECK(parse_component(to_string(c)) == c);
}

TEST_CASE("initial values respect their laws") {
  ModelConfig cfg = small_config();
  cfg.hidden = 16;
  cfg.state = 64;
  Model model(cfg, 17);
  const auto& blk = model.blocks[0];
  for (double x : blk.omega.value) CHECK((x > 0.0 && x <= 1.0));
  for (double x : blk.dt.value) CHECK((x > 0.0 && x <= 1.0));
  for (double x : blk.B.value) CHECK(std::abs(x) <= 0.25);
  for (double x : blk.C.value) CHECK(std::abs(x) <= 0.125);
}

TEST_CASE("smooth-path gradients match central finite differences") {
  for (Task task : {Task::Classification, Task::Regression}) {
    for (Scheme scheme : {Scheme::IMEX, Scheme::IM}) {
      ModelConfig cfg;
      cfg.input_channels = 2;
      cfg.n_blocks = 2;
      cfg.hidden = 2;
      cfg.state = 2;
      cfg.scheme = scheme;
      cfg.task = task;
      cfg.num_classes = 2;
      cfg.out_dim = 1;
      cfg.kernel_size = 4;
      cfg.dropout = 0.0;
      Model model(cfg, 18);
      const auto batch = random_batch(2, 8, 2, 19);
      ForwardOptions opt;
      opt.smooth = true;
      opt.training = true;
      opt.scan_mode = ScanMode::Sequential;

      const auto probe = model.forward(batch, opt);
      const Matrix w = random_like(probe.output.rows(), probe.output.cols(), 20);
      model.zero_grad();
      Model::Cache cache;
      model.forward(batch, opt, &cache);
      model.backward(cache, w, opt);

      double worst = 0.0;
      for (Param* p : model.trainable_params()) {
        for (std::size_t i = 0; i < p->numel(); ++i) {
          const double saved = p->value[i];
          const double h = 1e-6 * std::max(1.0, std::abs(saved));
          p->value[i] = saved + h;
          const double lp = weighted_sum(model.forward(batch, opt).output, w);
          p->value[i] = saved - h;
          const double lm = weighted_sum(model.forward(batch, opt).output, w);
          p->value[i] = saved;
          const double fd = (lp - lm) / (2 * h);
          const double err = std::abs(fd - p->grad[i]) / std::max(1e-3, std::abs(fd) + std::abs(p->grad[i]));
          worst = std::max(worst, err);
          INFO(p->name << "[" << i << "] fd=" << fd << " analytic=" << p->grad[i]);
          CHECK(err <= 1e-5);
        }
      }
      INFO("worst relative error " << worst);
      CHECK(worst <= 1e-5);
    }
  }
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  Model model(small_config(), 21);
  const auto batch = random_batch(2, 12, 3, 22);
  ForwardOptions opt;
  opt.training = true;
  Model::Cache cache;
  const auto res = model.forward(batch, opt, &cache);
  model.zero_grad();
  model.backward(cache, Matrix(res.output.rows(), res.output.cols()), opt);
  for (const Param* p : model.params()) {
    for (double g : p->grad) CHECK(g == 0.0);
  }
}

TEST_CASE("every trainable parameter receives gradient through the surrogate") {
  for (Task task : {Task::Classification, Task::Regression}) {
    auto cfg = small_config(task);
    cfg.hidden = 6;
    cfg.state = 5;
    Model model(cfg, 23);
    const auto batch = random_batch(8, 60, 3, 24);
    ForwardOptions opt;
    opt.training = true;
    Model::Cache cache;
    const auto res = model.forward(batch, opt, &cache);
    model.zero_grad();
    model.backward(cache, random_like(res.output.rows(), res.output.cols(), 25), opt);
    for (const Param* p : model.trainable_params()) {
      double norm = 0.0;
      for (double g : p->grad) norm += g * g;
      INFO(p->name);
      CHECK(norm > 0.0);
    }
  }
}

TEST_CASE("projection restores parameter constraints") {
  Model model(small_config(), 26);
  auto& blk = model.blocks[0];
  blk.omega.value[0] = -1.0;
  blk.omega.value[1] = 100.0;
  blk.dt.value[0] = 0.0;
  blk.dt.value[1] = 3.0;
  blk.theta_c.theta.value[0] = -5.0;
  model.project();
  CHECK(blk.omega.value[0] == 0.0);
  CHECK(blk.omega.value[1] == model.config().omega_max);
  CHECK(blk.dt.value[0] == kMinDt);
  CHECK(blk.dt.value[1] == 1.0);
  CHECK(blk.theta_c.theta.value[0] == kMinThreshold);
}

TEST_CASE("model configuration is validated") {
  auto cfg = small_config(Task::Regression);
  cfg.kernel_size = 6;
  CHECK_THROWS_AS(Model(cfg, 1), ParameterError);
  cfg = small_config();
  cfg.n_blocks = 0;
  CHECK_THROWS_AS(Model(cfg, 1), ParameterError);
  cfg = small_config();
  cfg.dropout = 1.0;
  CHECK_THROWS_AS(Model(cfg, 1), ParameterError);
}
