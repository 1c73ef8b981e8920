#include "share/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace share {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_fields(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

bool is_missing(std::string_view s) {
  if (s.empty()) return true;
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  return lower == "nan" || lower == "na" || lower == "null";
}

template <typename T>
T parse_unsigned(std::string_view s, const std::string& what) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError(what + ": expected a non-negative integer, got '" + std::string(s) + "'");
  }
  return v;
}

std::string where(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line);
}

}  // namespace

std::string_view to_string(NanPolicy p) {
  switch (p) {
    case NanPolicy::Error: return "error";
    case NanPolicy::Zero: return "zero";
    case NanPolicy::ForwardFill: return "ffill";
  }
  return "unknown";
}

NanPolicy parse_nan_policy(std::string_view text) {
  if (text == "error") return NanPolicy::Error;
  if (text == "zero") return NanPolicy::Zero;
  if (text == "ffill") return NanPolicy::ForwardFill;
  throw ParameterError("unknown nan_policy '" + std::string(text) + "'");
}

Matrix read_series_csv(std::istream& in, const std::string& source, NanPolicy policy) {
  std::string line;
  std::size_t line_no = 0;
  std::size_t cols = 0;
  bool first = true;
  std::vector<double> values;
  std::vector<double> last;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (first) {
      first = false;
      double probe = 0.0;
      if (!parse_double(fields[0], probe)) continue;  // header row
    }
    if (fields.size() < 2) throw DataError(where(source, line_no) + ": expected a time index and at least one channel");
    if (cols == 0) {
      cols = fields.size() - 1;
      last.assign(cols, std::numeric_limits<double>::quiet_NaN());
    } else if (fields.size() - 1 != cols) {
      throw DataError(where(source, line_no) + ": ragged row with " + std::to_string(fields.size() - 1) +
                      " channels, expected " + std::to_string(cols));
    }
    double index = 0.0;
    if (!parse_double(fields[0], index)) throw DataError(where(source, line_no) + ": bad time index '" + std::string(fields[0]) + "'");
    for (std::size_t c = 0; c < cols; ++c) {
      const auto f = fields[c + 1];
      double v = 0.0;
      if (is_missing(f) || (parse_double(f, v) && std::isnan(v))) {
        switch (policy) {
          case NanPolicy::Error:
            throw DataError(where(source, line_no) + ": missing value in channel " + std::to_string(c));
          case NanPolicy::Zero:
            v = 0.0;
            break;
          case NanPolicy::ForwardFill:
            if (std::isnan(last[c])) {
              throw DataError(where(source, line_no) + ": missing value in channel " + std::to_string(c) +
                              " with nothing to carry forward");
            }
            v = last[c];
            break;
        }
      } else if (!parse_double(f, v)) {
        throw DataError(where(source, line_no) + ": bad number '" + std::string(f) + "'");
      } else if (!std::isfinite(v)) {
        throw DataError(where(source, line_no) + ": non-finite value in channel " + std::to_string(c));
      }
      last[c] = v;
      values.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) throw DataError(source + ": no data rows");
  return Matrix(rows, cols, std::move(values));
}

void DatasetManifest::validate() const {
  if (layout != "series_csv") throw ParameterError("unsupported layout '" + layout + "'");
  if (n_channels == 0 || seq_len == 0) throw ParameterError("manifest needs n_channels and seq_len >= 1");
  if (task == Task::Classification && num_classes < 2) throw ParameterError("manifest needs num_classes >= 2");
  if (task == Task::Regression) {
    if (target_columns.empty()) throw ParameterError("regression manifest needs target_columns");
    if (out_dim != 0 && out_dim != target_columns.size()) {
      throw ParameterError("out_dim does not match the number of target_columns");
    }
    for (std::size_t c : target_columns) {
      if (c >= n_channels) throw ParameterError("target column " + std::to_string(c) + " out of range");
    }
    if (horizon == 0 && target_columns.size() >= n_channels) {
      throw ParameterError("no input channels left after removing target_columns");
    }
  }
}

DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir) {
  DatasetManifest m;
  std::string line;
  std::size_t line_no = 0;
  bool have_path = false;
  while (std::getline(in, line)) {
    ++line_no;
    auto text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) throw ParameterError("manifest line " + std::to_string(line_no) + ": expected key = value");
    const std::string key(trim(text.substr(0, eq)));
    const std::string value(trim(text.substr(eq + 1)));
    const std::string what = "manifest key '" + key + "'";
    if (key == "name") {
      m.name = value;
    } else if (key == "path") {
      m.path = base_dir / value;
      have_path = true;
    } else if (key == "layout") {
      m.layout = value;
    } else if (key == "n_channels") {
      m.n_channels = parse_unsigned<std::size_t>(value, what);
    } else if (key == "seq_len") {
      m.seq_len = parse_unsigned<std::size_t>(value, what);
    } else if (key == "task") {
      m.task = parse_task(value);
    } else if (key == "num_classes") {
      m.num_classes = parse_unsigned<std::size_t>(value, what);
    } else if (key == "out_dim") {
      m.out_dim = parse_unsigned<std::size_t>(value, what);
    } else if (key == "split_seed") {
      m.split_seed = parse_unsigned<std::uint64_t>(value, what);
    } else if (key == "horizon") {
      m.horizon = parse_unsigned<std::size_t>(value, what);
    } else if (key == "target_columns") {
      m.target_columns.clear();
      for (auto f : split_fields(value)) m.target_columns.push_back(parse_unsigned<std::size_t>(f, what));
    } else if (key == "nan_policy") {
      m.nan_policy = parse_nan_policy(value);
    } else if (key == "labels") {
      m.labels = value;
    } else {
      throw ParameterError("manifest line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  if (!have_path) m.path = base_dir;
  if (m.task == Task::Regression && m.out_dim == 0) m.out_dim = m.target_columns.size();
  m.validate();
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open manifest " + file.string());
  return parse_manifest(in, file.parent_path());
}

namespace {

struct SampleEntry {
  std::string file;
  int label = 0;
  int split = -1;
};

int parse_split(std::string_view s, const std::string& at) {
  if (s == "train" || s == "0") return 0;
  if (s == "val" || s == "1") return 1;
  if (s == "test" || s == "2") return 2;
  throw DataError(at + ": unknown split '" + std::string(s) + "'");
}

std::vector<SampleEntry> read_sidecar(const DatasetManifest& m) {
  const auto file = m.path / m.labels;
  std::vector<SampleEntry> out;
  std::ifstream in(file);
  if (!in) {
    if (m.task == Task::Classification) throw DataError("cannot open labels file " + file.string());
    // Regression without a sidecar: every CSV in the directory, sorted.
    for (const auto& e : std::filesystem::directory_iterator(m.path)) {
      if (e.is_regular_file() && e.path().extension() == ".csv") out.push_back({e.path().filename().string()});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.file < b.file; });
    if (out.empty()) throw DataError("no sample files in " + m.path.string());
    return out;
  }
  std::string line;
  std::size_t line_no = 0;
  const std::size_t label_fields = m.task == Task::Classification ? 1 : 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_fields(line);
    const std::string at = where(file.string(), line_no);
    if (line_no == 1 && (f[0] == "sample" || f[0] == "file")) continue;
    if (f.size() != 1 + label_fields && f.size() != 2 + label_fields) {
      throw DataError(at + ": expected " + std::to_string(1 + label_fields) + " or " +
                      std::to_string(2 + label_fields) + " fields");
    }
    SampleEntry e;
    e.file = std::string(f[0]);
    if (label_fields == 1) {
      const auto label = parse_unsigned<std::size_t>(f[1], at + " label");
      if (label >= m.num_classes) throw DataError(at + ": label " + std::to_string(label) + " out of range");
      e.label = static_cast<int>(label);
    }
    if (f.size() == 2 + label_fields) e.split = parse_split(f.back(), at);
    out.push_back(e);
  }
  if (out.empty()) throw DataError(file.string() + ": no samples listed");
  const bool any_split = std::any_of(out.begin(), out.end(), [](const auto& e) { return e.split >= 0; });
  const bool all_split = std::all_of(out.begin(), out.end(), [](const auto& e) { return e.split >= 0; });
  if (any_split && !all_split) throw DataError(file.string() + ": split column must be given for every sample or none");
  return out;
}

}  // namespace

std::vector<std::filesystem::path> manifest_inputs(const DatasetManifest& manifest) {
  std::vector<std::filesystem::path> out;
  const auto sidecar = manifest.path / manifest.labels;
  if (std::filesystem::exists(sidecar)) out.push_back(sidecar);
  for (const auto& e : read_sidecar(manifest)) out.push_back(manifest.path / e.file);
  return out;
}

Dataset ingest(const DatasetManifest& manifest) {
  manifest.validate();
  const auto entries = read_sidecar(manifest);
  Dataset d;
  d.name = manifest.name;
  d.task = manifest.task;
  d.length = manifest.seq_len;
  d.num_classes = manifest.task == Task::Classification ? manifest.num_classes : 0;
  d.out_dim = manifest.task == Task::Regression ? manifest.target_columns.size() : 0;
  const bool split_targets = manifest.task == Task::Regression && manifest.horizon == 0;
  d.channels = split_targets ? manifest.n_channels - manifest.target_columns.size() : manifest.n_channels;
  const std::size_t rows_expected = manifest.seq_len + (manifest.task == Task::Regression ? manifest.horizon : 0);

  std::vector<bool> is_target(manifest.n_channels, false);
  for (std::size_t c : manifest.target_columns) is_target[c] = true;

  for (const auto& e : entries) {
    const auto file = manifest.path / e.file;
    std::ifstream in(file);
    if (!in) throw DataError("cannot open sample file " + file.string());
    const Matrix raw = read_series_csv(in, file.string(), manifest.nan_policy);
    if (raw.cols() != manifest.n_channels) {
      throw DataError(file.string() + ": has " + std::to_string(raw.cols()) + " channels, manifest declares " +
                      std::to_string(manifest.n_channels));
    }
    if (raw.rows() != rows_expected) {
      throw DataError(file.string() + ": has " + std::to_string(raw.rows()) + " rows, expected " +
                      std::to_string(rows_expected));
    }
    Matrix x(manifest.seq_len, d.channels);
    for (std::size_t t = 0; t < manifest.seq_len; ++t) {
      std::size_t k = 0;
      for (std::size_t c = 0; c < manifest.n_channels; ++c) {
        if (split_targets && is_target[c]) continue;
        x(t, k++) = raw(t, c);
      }
    }
    d.inputs.push_back(std::move(x));
    if (manifest.task == Task::Classification) {
      d.labels.push_back(e.label);
    } else {
      Matrix y(manifest.seq_len, d.out_dim);
      for (std::size_t t = 0; t < manifest.seq_len; ++t) {
        for (std::size_t j = 0; j < d.out_dim; ++j) y(t, j) = raw(t + manifest.horizon, manifest.target_columns[j]);
      }
      d.targets.push_back(std::move(y));
    }
    if (e.split >= 0) d.split.push_back(e.split);
  }
  if (d.split.empty()) {
    const SplitIndices parts = split_indices(d, SplitFractions{}, manifest.split_seed);
    d.split.assign(d.size(), 0);
    for (std::size_t i : parts.val) d.split[i] = 1;
    for (std::size_t i : parts.test) d.split[i] = 2;
  }
  d.validate();
  return d;
}

}  // namespace share
