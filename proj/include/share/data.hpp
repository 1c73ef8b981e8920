#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "share/train.hpp"

namespace share {

enum class NanPolicy { Error, Zero, ForwardFill };

std::string_view to_string(NanPolicy p);
NanPolicy parse_nan_policy(std::string_view text);

// Reads one series CSV: an optional header row, then rows whose first column
// is the time index and whose remaining columns are channels. Empty fields and
// "nan" are missing values handled by the policy.
Matrix read_series_csv(std::istream& in, const std::string& source, NanPolicy policy = NanPolicy::Error);

// Manifest: key = value lines, '#' comments.
//   name, path (directory of sample files, relative to the manifest),
//   layout = series_csv, n_channels, seq_len, task, num_classes | out_dim,
//   split_seed, horizon, target_columns (comma list), nan_policy, labels.
struct DatasetManifest {
  std::string name;
  std::filesystem::path path;
  std::string layout = "series_csv";
  std::size_t n_channels = 0;
  std::size_t seq_len = 0;
  Task task = Task::Classification;
  std::size_t num_classes = 0;
  std::size_t out_dim = 0;
  std::uint64_t split_seed = 0;
  std::size_t horizon = 0;
  std::vector<std::size_t> target_columns;
  NanPolicy nan_policy = NanPolicy::Error;
  std::string labels = "labels.csv";

  void validate() const;
};

DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir);
DatasetManifest load_manifest(const std::filesystem::path& file);

// Loads the dataset a manifest describes. The sidecar (default labels.csv)
// lists sample,label[,split] for classification and sample[,split] for
// regression; split is train/val/test or 0/1/2. Without a split column the
// samples are partitioned 70/15/15 by a shuffle seeded with split_seed.
//
// Regression targets: with horizon h > 0 each file holds seq_len + h rows and
// the target at step t is row t + h restricted to target_columns. With h = 0
// the target_columns are removed from the inputs and used as targets directly.
Dataset ingest(const DatasetManifest& manifest);

// Files the dataset was read from, in load order (for content hashing).
std::vector<std::filesystem::path> manifest_inputs(const DatasetManifest& manifest);

}  // namespace share
