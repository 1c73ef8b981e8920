#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "share/network.hpp"
#include "share/train.hpp"

namespace share {

// Everything a CLI run needs. Serialised as `key = value` lines; see
// run_config_keys() for the accepted keys and README for their meaning.
struct RunConfig {
  // "frequency", "delayed_sum", or the path of a dataset manifest.
  std::string dataset = "frequency";
  std::size_t samples = 0;  // synthetic tasks; 0 keeps the task default
  std::size_t length = 0;   // synthetic tasks; 0 keeps the task default
  std::string out_dir = "run";

  ModelConfig model;
  TrainConfig train;

  // search
  std::size_t budget = 15;
  // ablate: variants separated by ';', each a comma list of components
  // (empty = heterogeneous). "table" expands to every row of the study.
  std::string ablate = "table";
  std::size_t ablation_seeds = 5;

  bool is_synthetic() const { return dataset == "frequency" || dataset == "delayed_sum"; }
  void validate() const;

  // Sets one key from its text form; throws ParameterError on an unknown key
  // or malformed value.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
};

const std::vector<std::string>& run_config_keys();

// Canonical text: every key once, in run_config_keys() order.
std::string to_text(const RunConfig& cfg);

struct KeyValue {
  std::string key;
  std::string value;
};

// `key = value` lines; '#' starts a comment. Duplicate keys are errors.
std::vector<KeyValue> parse_key_values(std::istream& in);

// Starts from the defaults of the dataset named by the last `dataset` entry
// (plain defaults for manifests) and applies every entry in order.
RunConfig config_from(const std::vector<KeyValue>& entries);
RunConfig defaults_for_dataset(std::string_view dataset);

RunConfig parse_run_config(std::istream& in);
RunConfig parse_run_config(std::string_view text);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

// Defaults tuned for the synthetic tasks (model, optimiser, epochs).
RunConfig frequency_task_defaults();
RunConfig delayed_sum_task_defaults();

}  // namespace share
