#include "share/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "share/checkpoint.hpp"
#include "share/data.hpp"
#include "share/dynamics.hpp"
#include "share/energy.hpp"
#include "share/errors.hpp"
#include "share/hash.hpp"
#include "share/run_config.hpp"
#include "share/scan.hpp"
#include "share/synthetic.hpp"
#include "share/train.hpp"

namespace share {
namespace {

namespace fs = std::filesystem;

// Bad invocation or invalid configuration: exit 2, nothing written.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

std::string num(double v) { return format_double(v); }

struct Command {
  explicit Command(CLI::App* a) : app(a) {}

  CLI::App* app = nullptr;
  std::string config_path;
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;
};

void add_config_options(Command& cmd) {
  cmd.app->add_option("--config", cmd.config_path, "Run config file (key = value lines)");
  for (const auto& key : run_config_keys()) {
    auto* opt = cmd.app->add_option("--" + key, cmd.values[key], "Config key '" + key + "'");
    cmd.options.emplace_back(key, opt);
  }
}

RunConfig resolve_config(const Command& cmd, std::vector<KeyValue> base = {}) {
  if (!cmd.config_path.empty()) {
    if (!fs::is_regular_file(cmd.config_path)) throw UsageError("config file not found: " + cmd.config_path);
    std::istringstream in(read_file(cmd.config_path));
    for (auto& kv : parse_key_values(in)) base.push_back(std::move(kv));
  }
  for (const auto& [key, opt] : cmd.options)
    if (opt->count() > 0) base.push_back({key, cmd.values.at(key)});
  return config_from(base);
}

struct LoadedData {
  Dataset data;
  // (hash, label) of every input the dataset was built from.
  std::vector<std::pair<std::string, std::string>> inputs;
};

LoadedData load_dataset(RunConfig& cfg) {
  LoadedData out;
  if (cfg.dataset == "frequency") {
    FrequencyTaskConfig fc;
    if (cfg.samples) fc.samples = cfg.samples;
    if (cfg.length) fc.length = cfg.length;
    fc.seed = cfg.train.seed;
    out.data = make_frequency_task(fc);
  } else if (cfg.dataset == "delayed_sum") {
    DelayedSumConfig dc;
    if (cfg.samples) dc.samples = cfg.samples;
    if (cfg.length) dc.length = cfg.length;
    dc.seed = cfg.train.seed;
    out.data = make_delayed_sum_task(dc);
  } else {
    if (!fs::is_regular_file(cfg.dataset)) throw UsageError("dataset manifest not found: " + cfg.dataset);
    const DatasetManifest manifest = load_manifest(cfg.dataset);
    out.inputs.emplace_back(git_blob_sha1(read_file(cfg.dataset)), cfg.dataset);
    for (const auto& p : manifest_inputs(manifest))
      out.inputs.emplace_back(git_blob_sha1(read_file(p)), p.string());
    out.data = ingest(manifest);
  }
  // The dataset fixes the model's input and output shapes.
  cfg.model.input_channels = out.data.channels;
  cfg.model.task = out.data.task;
  if (out.data.task == Task::Classification) cfg.model.num_classes = out.data.num_classes;
  else cfg.model.out_dim = out.data.out_dim;
  return out;
}

// Writes config.txt, seed.txt and inputs.sha1 into a fresh output directory.
fs::path prepare_output(const RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& inputs) {
  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  const std::string text = to_text(cfg);
  write_file(dir / "config.txt", text);
  write_file(dir / "seed.txt", std::to_string(cfg.train.seed) + "\n");
  std::string sums = git_blob_sha1(text) + "  config.txt\n";
  for (const auto& [h, label] : inputs) sums += h + "  " + label + "\n";
  write_file(dir / "inputs.sha1", sums);
  return dir;
}

std::string metrics_csv(const std::vector<MetricRecord>& history) {
  std::string s = "epoch,split,metric,value\n";
  for (const auto& r : history)
    s += std::to_string(r.epoch) + "," + r.split + "," + r.metric + "," + num(r.value) + "\n";
  return s;
}

void append_eval(std::vector<MetricRecord>& out, std::size_t epoch, const std::string& split,
                 const EvalResult& r, Task task) {
  out.push_back({epoch, split, "loss", r.loss});
  if (task == Task::Classification) {
    out.push_back({epoch, split, "accuracy", r.accuracy});
  } else {
    out.push_back({epoch, split, "mse", r.mse});
    out.push_back({epoch, split, "mae", r.mae});
  }
}

std::string rates_csv(const EvalResult& r) {
  std::string s = "tensor,spikes,total,rate\n";
  for (std::size_t i = 0; i < r.block_input_rates.size(); ++i) {
    const auto& f = r.block_input_rates[i];
    s += "block" + std::to_string(i) + "_input," + std::to_string(f.spikes) + "," + std::to_string(f.total) +
         "," + num(f.value()) + "\n";
  }
  const auto& d = r.decoder_input_rate;
  s += "decoder_input," + std::to_string(d.spikes) + "," + std::to_string(d.total) + "," + num(d.value()) + "\n";
  return s;
}

// ---------------------------------------------------------------------------

int cmd_train(const Command& cmd, std::ostream& out) {
  RunConfig cfg = resolve_config(cmd);
  LoadedData ld = load_dataset(cfg);
  cfg.validate();
  Model model(cfg.model, cfg.train.seed);
  const fs::path dir = prepare_output(cfg, ld.inputs);

  const FitResult r = fit(model, ld.data, cfg.train);
  write_file(dir / "metrics.csv", metrics_csv(r.history));
  write_file(dir / "firing_rates.csv", rates_csv(r.test));
  std::ofstream ck(dir / "checkpoint.bin", std::ios::binary);
  write_checkpoint(ck, make_checkpoint(model, cfg.train.seed, to_text(cfg)));

  out << "best epoch " << r.best_epoch << ": val " << selection_metric_name(ld.data.task, cfg.train.loss) << " "
      << num(r.best_val) << ", test " << num(selection_metric(r.test, ld.data.task, cfg.train.loss)) << "\n";
  return kExitOk;
}

int cmd_eval(const Command& cmd, const std::string& checkpoint_path, std::ostream& out) {
  if (!fs::is_regular_file(checkpoint_path)) throw UsageError("checkpoint not found: " + checkpoint_path);
  Checkpoint ckpt;
  {
    std::ifstream in(checkpoint_path, std::ios::binary);
    try {
      ckpt = read_checkpoint(in);
    } catch (const DataError& e) {
      throw UsageError(e.what());
    }
  }
  std::istringstream echo(ckpt.config);
  RunConfig cfg = resolve_config(cmd, parse_key_values(echo));
  const bool out_dir_given = std::any_of(cmd.options.begin(), cmd.options.end(), [](const auto& o) {
    return o.first == "out_dir" && o.second->count() > 0;
  });
  if (!out_dir_given && cmd.config_path.empty())
    cfg.out_dir = (fs::path(checkpoint_path).parent_path() / "eval").string();
  LoadedData ld = load_dataset(cfg);
  cfg.validate();
  Model model(cfg.model, cfg.train.seed);
  try {
    load_parameters(model, ckpt);
  } catch (const StructuralError& e) {
    throw UsageError(e.what());
  }
  ld.inputs.emplace_back(git_blob_sha1(read_file(checkpoint_path)), checkpoint_path);
  const fs::path dir = prepare_output(cfg, ld.inputs);

  const SplitIndices split = split_indices(ld.data, cfg.train.split, cfg.train.seed);
  std::vector<MetricRecord> rows;
  const EvalResult val = evaluate(model, ld.data, split.val, cfg.train.loss);
  const EvalResult test = evaluate(model, ld.data, split.test, cfg.train.loss);
  append_eval(rows, 0, "val", val, ld.data.task);
  append_eval(rows, 0, "test", test, ld.data.task);
  write_file(dir / "metrics.csv", metrics_csv(rows));
  write_file(dir / "firing_rates.csv", rates_csv(test));
  out << "test " << selection_metric_name(ld.data.task, cfg.train.loss) << " "
      << num(selection_metric(test, ld.data.task, cfg.train.loss)) << "\n";
  return kExitOk;
}

std::vector<AblationSpec> ablation_variants(const std::string& text) {
  std::vector<AblationSpec> out;
  if (text == "table") {
    out.push_back({});
    for (Component c : kAllComponents) out.push_back(AblationSpec::parse({std::string(to_string(c))}));
    out.push_back(AblationSpec::parse({"all"}));
    out.push_back(AblationSpec::parse({"ssm_only"}));
    return out;
  }
  std::stringstream ss(text);
  std::string variant;
  while (std::getline(ss, variant, ';')) {
    std::vector<std::string> names;
    std::stringstream vs(variant);
    std::string name;
    while (std::getline(vs, name, ',')) {
      const auto b = name.find_first_not_of(' ');
      const auto e = name.find_last_not_of(' ');
      if (b != std::string::npos) names.push_back(name.substr(b, e - b + 1));
    }
    out.push_back(AblationSpec::parse(names));
  }
  if (out.empty()) throw ParameterError("ablate: no variants given");
  return out;
}

int cmd_ablate(const Command& cmd, std::ostream& out) {
  RunConfig cfg = resolve_config(cmd);
  LoadedData ld = load_dataset(cfg);
  cfg.validate();
  const auto variants = ablation_variants(cfg.ablate);
  for (const auto& spec : variants) {
    ModelConfig mc = cfg.model;
    spec.apply(mc);
    Model probe(mc, cfg.train.seed);
  }
  const fs::path dir = prepare_output(cfg, ld.inputs);

  const std::string metric(selection_metric_name(ld.data.task, cfg.train.loss));
  std::string per_seed = "variant,seed," + metric + "\n";
  std::string summary = "variant,mean,std,seeds,test_samples\n";
  for (const auto& spec : variants) {
    const AblationRow row = run_ablation(spec, ld.data, cfg.model, cfg.train, cfg.ablation_seeds);
    for (std::size_t k = 0; k < row.accuracies.size(); ++k)
      per_seed += row.label + "," + std::to_string(cfg.train.seed + k) + "," + num(row.accuracies[k]) + "\n";
    summary += row.label + "," + num(row.mean) + "," + num(row.stddev) + "," + std::to_string(row.accuracies.size()) +
               "," + std::to_string(row.test_samples) + "\n";
    out << row.label << ": " << num(row.mean) << " +- " << num(row.stddev) << "\n";
  }
  write_file(dir / "ablation.csv", per_seed);
  write_file(dir / "ablation_summary.csv", summary);
  return kExitOk;
}

int cmd_search(const Command& cmd, std::ostream& out) {
  RunConfig cfg = resolve_config(cmd);
  LoadedData ld = load_dataset(cfg);
  cfg.validate();
  Model probe(cfg.model, cfg.train.seed);
  const fs::path dir = prepare_output(cfg, ld.inputs);

  const SearchSpace space = SearchSpace::protocol();
  const auto trials = random_search(space, cfg.budget, cfg.train.seed, training_objective(cfg.model, cfg.train, ld.data),
                                    metric_higher_is_better(ld.data.task));
  std::string s = "rank,trial,seed,lr,hidden,state,n_blocks,val_metric,test_metric\n";
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const Trial& t = trials[i];
    s += std::to_string(i + 1) + "," + std::to_string(t.index) + "," + std::to_string(t.seed) + "," +
         num(t.params.lr) + "," + std::to_string(t.params.hidden) + "," + std::to_string(t.params.state) + "," +
         std::to_string(t.params.n_blocks) + "," + num(t.val_metric) + "," + num(t.test_metric) + "\n";
  }
  write_file(dir / "trials.csv", s);
  const Trial& best = trials.front();
  out << "best trial " << best.index << ": lr " << num(best.params.lr) << " hidden " << best.params.hidden << " state "
      << best.params.state << " blocks " << best.params.n_blocks << " val " << num(best.val_metric) << "\n";
  return kExitOk;
}

struct EnergyArgs {
  double firing_rate = 0.32;
  std::vector<double> p_over_h;
  bool verbose = false;
};

int cmd_energy(const Command& cmd, const EnergyArgs& args, std::ostream& out) {
  RunConfig cfg = resolve_config(cmd);
  if (cfg.length == 0) cfg.length = 17984;
  if (args.firing_rate < 0.0 || args.firing_rate > 1.0) throw UsageError("--firing-rate must lie in [0, 1]");
  const fs::path dir = prepare_output(cfg, {});
  const auto grid = args.p_over_h.empty() ? default_p_over_h_grid() : args.p_over_h;
  const auto sweep = energy_sweep(cfg.length, cfg.model.hidden, grid, args.firing_rate);
  std::string s = "p_over_h,ann_pj,snn_pj,ratio\n";
  for (const auto& p : sweep)
    s += num(p.p_over_h) + "," + num(p.ann_pj) + "," + num(p.snn_pj) + "," + num(p.ratio) + "\n";
  write_file(dir / "energy_sweep.csv", s);

  std::string layers = "kind,layer,flops,spike_driven,sops,pj\n";
  for (BlockKind kind : {BlockKind::LinOSS, BlockKind::Share}) {
    const auto rep = estimate(kind, cfg.length, cfg.model.hidden, cfg.model.state, args.firing_rate, {}, args.verbose);
    for (const auto& l : rep.layers)
      layers += std::string(to_string(kind)) + "," + l.name + "," + std::to_string(l.flops) + "," +
                (l.spike_driven ? "1" : "0") + "," + num(l.sops) + "," + num(l.pj) + "\n";
    layers += std::string(to_string(kind)) + ",total," + std::to_string(rep.total_flops) + ",," + num(rep.total_sops) +
              "," + num(rep.total_pj) + "\n";
  }
  write_file(dir / "energy_layers.csv", layers);
  for (const auto& p : sweep) out << "P/H " << num(p.p_over_h) << ": ratio " << num(p.ratio) << "\n";
  return kExitOk;
}

int cmd_spectra(const Command& cmd, std::ostream& out) {
  RunConfig cfg = resolve_config(cmd);
  const std::size_t n = cfg.samples ? cfg.samples : 1000;
  if (!(cfg.model.omega_max > 0.0)) throw UsageError("omega_max must be positive");
  const fs::path dir = prepare_output(cfg, {});

  std::mt19937_64 rng(cfg.train.seed);
  // (0, b]: b - U[0, b)
  auto upper_closed = [&rng](double b) { return b - std::uniform_real_distribution<double>(0.0, b)(rng); };
  OscillatorParams p;
  while (p.size() < n) {
    const double omega = upper_closed(cfg.model.omega_max);
    const double dt = upper_closed(1.0);
    if (cfg.model.scheme == Scheme::IMEX && dt * dt * omega > 4.0) continue;
    p.omega.push_back(omega);
    p.dt.push_back(dt);
  }
  std::vector<EigenPair> eig;
  if (cfg.model.scheme == Scheme::ExplicitEuler) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto m = transition<double>(p.omega[j], p.dt[j], 0.0, Scheme::ExplicitEuler).block;
      const double tr = m.a11 + m.a22, det = m.a11 * m.a22 - m.a12 * m.a21;
      const std::complex<double> disc = std::sqrt(std::complex<double>(tr * tr / 4.0 - det));
      eig.emplace_back(tr / 2.0 + disc, tr / 2.0 - disc);
    }
  } else {
    eig = eigenvalues_closed_form(p, cfg.model.scheme);
  }
  std::string s = "omega,dt,re,im,abs\n";
  double max_abs = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    for (const auto& l : {eig[j].first, eig[j].second}) {
      s += num(p.omega[j]) + "," + num(p.dt[j]) + "," + num(l.real()) + "," + num(l.imag()) + "," +
           num(std::abs(l)) + "\n";
      max_abs = std::max(max_abs, std::abs(l));
    }
  }
  write_file(dir / "spectra.csv", s);
  out << "max |lambda| " << num(max_abs) << "\n";
  return kExitOk;
}

struct NeuronArgs {
  double omega = 1.0;
  double dt = 0.1;
  double damping = 0.0;
  std::size_t steps = 1000;
};

int cmd_neuron(const Command& cmd, const NeuronArgs& args, std::ostream& out) {
  RunConfig cfg = resolve_config(cmd);
  if (args.steps == 0) throw UsageError("--steps must be >= 1");
  OscillatorParams p{{args.omega}, {args.dt}, {args.damping}};
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const fs::path dir = prepare_output(cfg, {});
  const auto samples = simulate_neuron(args.omega, args.dt, args.damping, cfg.model.scheme, args.steps);
  std::string s = "step,u,v,energy\n";
  for (std::size_t i = 0; i < samples.size(); ++i)
    s += std::to_string(i + 1) + "," + num(samples[i].u) + "," + num(samples[i].v) + "," + num(samples[i].energy) + "\n";
  write_file(dir / "neuron.csv", s);
  out << "wrote " << (dir / "neuron.csv").string() << "\n";
  return kExitOk;
}

void apply_thread_env() {
  const char* env = std::getenv("SHARE_NUM_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1 || n > 4096) throw UsageError("SHARE_NUM_THREADS must be a positive integer");
  set_scan_default_threads(static_cast<unsigned>(n));
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spiking harmonic oscillator state space models"};
  app.name("share_ssm");
  app.require_subcommand(1);

  Command train{app.add_subcommand("train", "Train a model and write metrics and a checkpoint")};
  Command eval{app.add_subcommand("eval", "Evaluate a checkpoint on the val and test splits")};
  Command ablate{app.add_subcommand("ablate", "Homogeneous-initialisation ablation over several seeds")};
  Command search{app.add_subcommand("search", "Seeded random hyperparameter search")};
  Command energy{app.add_subcommand("energy", "Energy model and P/H sweep")};
  Command spectra{app.add_subcommand("spectra", "Eigenvalues of random oscillator transitions")};
  Command neuron{app.add_subcommand("neuron", "Single-neuron impulse response")};
  for (Command* c : {&train, &eval, &ablate, &search, &energy, &spectra, &neuron}) add_config_options(*c);

  std::string checkpoint_path;
  eval.app->add_option("--checkpoint", checkpoint_path, "Checkpoint written by train")->required();
  EnergyArgs energy_args;
  energy.app->add_option("--firing-rate", energy_args.firing_rate, "Spike rate f_r of the SHaRe block");
  energy.app->add_option("--p-over-h", energy_args.p_over_h, "P/H ratios (default 1/16 .. 16)")->delimiter(',');
  energy.app->add_flag("--verbose", energy_args.verbose, "Also charge fused layers");
  NeuronArgs neuron_args;
  neuron.app->add_option("--omega", neuron_args.omega, "Squared angular frequency");
  neuron.app->add_option("--dt", neuron_args.dt, "Time step");
  neuron.app->add_option("--damping", neuron_args.damping, "Damping coefficient");
  neuron.app->add_option("--steps", neuron_args.steps, "Number of steps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    apply_thread_env();
    if (train.app->parsed()) return cmd_train(train, out);
    if (eval.app->parsed()) return cmd_eval(eval, checkpoint_path, out);
    if (ablate.app->parsed()) return cmd_ablate(ablate, out);
    if (search.app->parsed()) return cmd_search(search, out);
    if (energy.app->parsed()) return cmd_energy(energy, energy_args, out);
    if (spectra.app->parsed()) return cmd_spectra(spectra, out);
    if (neuron.app->parsed()) return cmd_neuron(neuron, neuron_args, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace share
