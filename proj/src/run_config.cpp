#include "share/run_config.hpp"

#include <charconv>
#include <map>
#include <sstream>

#include "share/errors.hpp"

namespace share {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  throw ParameterError("config key '" + std::string(key) + "': invalid value '" + std::string(value) + "'");
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v);
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v);
  return out;
}

std::size_t to_size(std::string_view key, std::string_view v) {
  return static_cast<std::size_t>(to_u64(key, v));
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v);
}

template <typename F>
auto parse_enum(std::string_view key, std::string_view v, F&& f) {
  try {
    return f(v);
  } catch (const std::invalid_argument&) {
    bad_value(key, v);
  }
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

struct KeyDef {
  std::string name;
  void (*set)(RunConfig&, std::string_view key, std::string_view value);
  std::string (*get)(const RunConfig&);
};

#define SIZE_KEY(NAME, FIELD)                                                                  \
  KeyDef {                                                                                     \
    NAME, [](RunConfig& c, std::string_view k, std::string_view v) { c.FIELD = to_size(k, v); }, \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                             \
  }
#define DOUBLE_KEY(NAME, FIELD)                                                                  \
  KeyDef {                                                                                       \
    NAME, [](RunConfig& c, std::string_view k, std::string_view v) { c.FIELD = to_double(k, v); }, \
        [](const RunConfig& c) { return format_double(c.FIELD); }                                \
  }

const std::vector<KeyDef>& key_defs() {
  static const std::vector<KeyDef> defs = {
      {"dataset", [](RunConfig& c, std::string_view k, std::string_view v) {
         if (v.empty()) bad_value(k, v);
         c.dataset = std::string(v);
       },
       [](const RunConfig& c) { return c.dataset; }},
      SIZE_KEY("samples", samples),
      SIZE_KEY("length", length),
      {"out_dir", [](RunConfig& c, std::string_view k, std::string_view v) {
         if (v.empty()) bad_value(k, v);
         c.out_dir = std::string(v);
       },
       [](const RunConfig& c) { return c.out_dir; }},
      {"task", [](RunConfig& c, std::string_view k, std::string_view v) {
         c.model.task = parse_enum(k, v, parse_task);
       },
       [](const RunConfig& c) { return std::string(to_string(c.model.task)); }},
      {"scheme", [](RunConfig& c, std::string_view k, std::string_view v) {
         c.model.scheme = parse_enum(k, v, parse_scheme);
       },
       [](const RunConfig& c) { return std::string(to_string(c.model.scheme)); }},
      SIZE_KEY("input_channels", model.input_channels),
      SIZE_KEY("n_blocks", model.n_blocks),
      SIZE_KEY("hidden", model.hidden),
      SIZE_KEY("state", model.state),
      SIZE_KEY("num_classes", model.num_classes),
      SIZE_KEY("out_dim", model.out_dim),
      SIZE_KEY("kernel_size", model.kernel_size),
      DOUBLE_KEY("dropout", model.dropout),
      {"ssm_only", [](RunConfig& c, std::string_view k, std::string_view v) { c.model.ssm_only = to_bool(k, v); },
       [](const RunConfig& c) { return bool_text(c.model.ssm_only); }},
      {"homogeneous", [](RunConfig& c, std::string_view k, std::string_view v) {
         c.model.homogeneous.clear();
         for (auto name : split_list(v, ',')) c.model.homogeneous.push_back(parse_enum(k, name, parse_component));
       },
       [](const RunConfig& c) {
         std::string out;
         for (std::size_t i = 0; i < c.model.homogeneous.size(); ++i) {
           if (i) out += ',';
           out += to_string(c.model.homogeneous[i]);
         }
         return out;
       }},
      DOUBLE_KEY("omega_max", model.omega_max),
      DOUBLE_KEY("surrogate_sigma", model.surrogate.sigma),
      DOUBLE_KEY("surrogate_h", model.surrogate.h),
      DOUBLE_KEY("surrogate_scale", model.surrogate.scale),
      DOUBLE_KEY("lr", train.lr),
      DOUBLE_KEY("weight_decay", train.weight_decay),
      SIZE_KEY("batch_size", train.batch_size),
      SIZE_KEY("epochs", train.epochs),
      {"seed", [](RunConfig& c, std::string_view k, std::string_view v) { c.train.seed = to_u64(k, v); },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      DOUBLE_KEY("beta1", train.beta1),
      DOUBLE_KEY("beta2", train.beta2),
      DOUBLE_KEY("eps", train.eps),
      {"loss", [](RunConfig& c, std::string_view k, std::string_view v) {
         c.train.loss = parse_enum(k, v, parse_loss);
       },
       [](const RunConfig& c) { return std::string(to_string(c.train.loss)); }},
      {"split", [](RunConfig& c, std::string_view k, std::string_view v) {
         const auto parts = split_list(v, ',');
         if (parts.size() != 3) bad_value(k, v);
         c.train.split = {to_double(k, parts[0]), to_double(k, parts[1]), to_double(k, parts[2])};
       },
       [](const RunConfig& c) {
         return format_double(c.train.split.train) + "," + format_double(c.train.split.val) + "," +
                format_double(c.train.split.test);
       }},
      {"target_metric", [](RunConfig& c, std::string_view k, std::string_view v) {
         if (v == "none" || v.empty()) c.train.target_metric.reset();
         else c.train.target_metric = to_double(k, v);
       },
       [](const RunConfig& c) {
         return c.train.target_metric ? format_double(*c.train.target_metric) : std::string("none");
       }},
      SIZE_KEY("budget", budget),
      {"ablate", [](RunConfig& c, std::string_view, std::string_view v) { c.ablate = std::string(v); },
       [](const RunConfig& c) { return c.ablate; }},
      SIZE_KEY("ablation_seeds", ablation_seeds),
  };
  return defs;
}

#undef SIZE_KEY
#undef DOUBLE_KEY

const KeyDef& find_key(std::string_view key) {
  for (const auto& d : key_defs())
    if (d.name == key) return d;
  throw ParameterError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw ParameterError("cannot format number");
  return std::string(buf, p);
}

void RunConfig::set(std::string_view key, std::string_view value) {
  find_key(key).set(*this, key, trim(value));
}

std::string RunConfig::get(std::string_view key) const { return find_key(key).get(*this); }

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& d : key_defs()) k.push_back(d.name);
    return k;
  }();
  return keys;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (budget == 0) throw ParameterError("budget must be >= 1");
  if (ablation_seeds == 0) throw ParameterError("ablation_seeds must be >= 1");
  if (dataset == "frequency" && model.task != Task::Classification)
    throw ParameterError("dataset 'frequency' is a classification task");
  if (dataset == "delayed_sum" && model.task != Task::Regression)
    throw ParameterError("dataset 'delayed_sum' is a regression task");
  if (model.task == Task::Classification && train.loss != Loss::CrossEntropy)
    throw ParameterError("classification requires loss = cross_entropy");
  if (model.task == Task::Regression && train.loss == Loss::CrossEntropy)
    throw ParameterError("regression requires loss = mse or mae");
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& d : key_defs()) out += d.name + " = " + d.get(cfg) + "\n";
  return out;
}

std::vector<KeyValue> parse_key_values(std::istream& in) {
  std::vector<KeyValue> out;
  std::map<std::string, std::size_t> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = line;
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos)
      throw ParameterError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key(trim(s.substr(0, eq)));
    find_key(key);
    if (!seen.emplace(key, lineno).second)
      throw ParameterError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    out.push_back({std::move(key), std::string(trim(s.substr(eq + 1)))});
  }
  return out;
}

RunConfig defaults_for_dataset(std::string_view dataset) {
  if (dataset == "frequency") return frequency_task_defaults();
  if (dataset == "delayed_sum") return delayed_sum_task_defaults();
  RunConfig c;
  c.dataset = std::string(dataset);
  return c;
}

RunConfig config_from(const std::vector<KeyValue>& entries) {
  std::string dataset = RunConfig{}.dataset;
  for (const auto& e : entries)
    if (e.key == "dataset") dataset = e.value;
  RunConfig cfg = defaults_for_dataset(dataset);
  for (const auto& e : entries) cfg.set(e.key, e.value);
  return cfg;
}

RunConfig parse_run_config(std::istream& in) { return config_from(parse_key_values(in)); }

RunConfig parse_run_config(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_run_config(in);
}

RunConfig frequency_task_defaults() {
  RunConfig c;
  c.dataset = "frequency";
  c.samples = 200;
  c.model.task = Task::Classification;
  c.model.num_classes = 2;
  c.model.n_blocks = 2;
  c.model.hidden = 16;
  c.model.state = 16;
  c.model.dropout = 0.1;
  c.train.lr = 1e-2;
  c.train.batch_size = 16;
  c.train.epochs = 50;
  c.train.loss = Loss::CrossEntropy;
  c.train.target_metric = 0.95;
  return c;
}

RunConfig delayed_sum_task_defaults() {
  RunConfig c;
  c.dataset = "delayed_sum";
  c.samples = 100;
  c.model.task = Task::Regression;
  c.model.out_dim = 1;
  c.model.n_blocks = 2;
  c.model.hidden = 16;
  c.model.state = 16;
  c.model.dropout = 0.0;
  // Spans delay + window so the decoder can reach the averaged interval.
  c.model.kernel_size = 1024;
  c.train.lr = 3e-3;
  c.train.batch_size = 4;
  c.train.epochs = 15;
  c.train.loss = Loss::MSE;
  return c;
}

}  // namespace share
