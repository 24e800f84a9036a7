#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "qforest/errors.hpp"
#include "qforest/matrix.hpp"
#include "qforest/rng.hpp"

namespace qforest {

enum class TaskKind { regression, classification };

inline const char* to_string(TaskKind t) {
  return t == TaskKind::regression ? "regression" : "classification";
}

// Dense sample block. `standardized` tracks whether feature standardization
// has been applied, so a second application can be rejected.
struct FeatureMatrix {
  Matrix values;
  std::vector<std::string> feature_names;
  bool standardized = false;

  std::size_t n_rows() const { return values.rows(); }
  std::size_t n_cols() const { return values.cols(); }
};

struct TargetVector {
  TaskKind task = TaskKind::regression;
  std::vector<double> values;           // regression targets
  std::vector<int> labels;              // classification class indices
  std::size_t num_classes = 0;          // C for classification
  std::vector<std::string> class_names; // dense index -> original label

  std::size_t size() const {
    return task == TaskKind::regression ? values.size() : labels.size();
  }
};

struct Dataset {
  FeatureMatrix features;
  TargetVector targets;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline bool is_missing_cell(const std::string& trimmed) {
  if (trimmed.empty()) return true;
  std::string low;
  low.reserve(trimmed.size());
  for (char c : trimmed)
    low.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return low == "na" || low == "nan";
}

inline bool parse_double(const std::string& s, double& out) {
  const char* begin = s.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  return end != begin && *end == '\0' && std::isfinite(out);
}

// RFC-4180-style record reader: quoted fields may contain the delimiter,
// doubled quotes and line breaks. CRLF and LF are both accepted.
inline std::vector<std::vector<std::string>> parse_csv_records(
    const std::string& text, char delimiter) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  auto end_field = [&] {
    record.push_back(field);
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(record));
    record.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == delimiter) {
      end_field();
    } else if (c == '\n') {
      if (!field.empty() && field.back() == '\r') field.pop_back();
      end_record();
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (in_quotes) throw ParseError("csv: unterminated quoted field");
  if (!field.empty() || !record.empty()) end_record();
  // Drop a trailing fully-empty record produced by a final newline.
  while (!records.empty() && records.back().size() == 1 &&
         trim(records.back().front()).empty())
    records.pop_back();
  return records;
}

}  // namespace detail

// Loads a CSV file into a feature matrix and target vector. Feature columns
// must be numeric; missing cells (empty, "NA", "NaN") are imputed with the
// column median. Classification labels are mapped to dense indices in order
// of first appearance.
inline Dataset load_csv(const std::string& path,
                        const std::string& target_column, bool has_header,
                        TaskKind task, char delimiter = ',') {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("load_csv: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  if (detail::trim(text).empty())
    throw FormatError("load_csv: '" + path + "' is empty");

  auto records = detail::parse_csv_records(text, delimiter);
  if (records.empty()) throw FormatError("load_csv: no records in '" + path + "'");

  std::vector<std::string> names;
  std::size_t first_data = 0;
  const std::size_t n_columns = records.front().size();
  if (has_header) {
    for (const std::string& h : records.front())
      names.push_back(detail::trim(h));
    first_data = 1;
    if (records.size() == 1)
      throw FormatError("load_csv: header but no data rows");
  } else {
    for (std::size_t c = 0; c < n_columns; ++c)
      names.push_back("f" + std::to_string(c));
  }

  // Locate the target column by name (with a header) or by 0-based index.
  std::size_t target_idx = n_columns;
  if (has_header) {
    for (std::size_t c = 0; c < n_columns; ++c)
      if (names[c] == detail::trim(target_column)) {
        target_idx = c;
        break;
      }
  }
  if (target_idx == n_columns) {
    try {
      std::size_t pos = 0;
      unsigned long v = std::stoul(detail::trim(target_column), &pos);
      if (pos == detail::trim(target_column).size() && v < n_columns)
        target_idx = v;
    } catch (...) {
    }
  }
  if (target_idx == n_columns)
    throw ConfigError("load_csv: target column '" + target_column +
                      "' not found");

  const std::size_t n_rows = records.size() - first_data;
  const std::size_t n_features = n_columns - 1;
  if (n_features == 0)
    throw ConfigError("load_csv: no feature columns besides the target");

  Dataset out;
  out.features.values = Matrix(n_rows, n_features);
  for (std::size_t c = 0; c < n_columns; ++c)
    if (c != target_idx) out.features.feature_names.push_back(names[c]);
  out.targets.task = task;

  std::unordered_map<std::string, int> label_map;
  // missing[c] lists row indices to impute for feature slot c.
  std::vector<std::vector<std::size_t>> missing(n_features);

  for (std::size_t r = 0; r < n_rows; ++r) {
    const auto& rec = records[r + first_data];
    if (rec.size() != n_columns)
      throw ParseError("load_csv: record " + std::to_string(r + first_data + 1) +
                       " has " + std::to_string(rec.size()) +
                       " fields, expected " + std::to_string(n_columns));
    std::size_t slot = 0;
    for (std::size_t c = 0; c < n_columns; ++c) {
      std::string cell = detail::trim(rec[c]);
      if (c == target_idx) {
        if (detail::is_missing_cell(cell))
          throw ParseError("load_csv: missing target at record " +
                           std::to_string(r + first_data + 1));
        if (task == TaskKind::regression) {
          double v;
          if (!detail::parse_double(cell, v))
            throw ParseError("load_csv: record " +
                             std::to_string(r + first_data + 1) + " column '" +
                             names[c] + "': cannot parse '" + cell +
                             "' as a number");
          out.targets.values.push_back(v);
        } else {
          auto it = label_map.find(cell);
          int idx;
          if (it == label_map.end()) {
            idx = static_cast<int>(label_map.size());
            label_map.emplace(cell, idx);
            out.targets.class_names.push_back(cell);
          } else {
            idx = it->second;
          }
          out.targets.labels.push_back(idx);
        }
        continue;
      }
      if (detail::is_missing_cell(cell)) {
        missing[slot].push_back(r);
        out.features.values(r, slot) = 0.0;
      } else {
        double v;
        if (!detail::parse_double(cell, v))
          throw ParseError("load_csv: record " +
                           std::to_string(r + first_data + 1) + " column '" +
                           names[c] + "': cannot parse '" + cell +
                           "' as a number");
        out.features.values(r, slot) = v;
      }
      ++slot;
    }
  }
  out.targets.num_classes = label_map.size();

  // Median imputation per feature column.
  for (std::size_t c = 0; c < n_features; ++c) {
    if (missing[c].empty()) continue;
    std::vector<double> present;
    present.reserve(n_rows - missing[c].size());
    std::vector<bool> is_missing_row(n_rows, false);
    for (std::size_t r : missing[c]) is_missing_row[r] = true;
    for (std::size_t r = 0; r < n_rows; ++r)
      if (!is_missing_row[r]) present.push_back(out.features.values(r, c));
    if (present.empty())
      throw FormatError("load_csv: feature column '" +
                        out.features.feature_names[c] + "' has no values");
    std::sort(present.begin(), present.end());
    double median;
    std::size_t n = present.size();
    if (n % 2 == 1)
      median = present[n / 2];
    else
      median = 0.5 * (present[n / 2 - 1] + present[n / 2]);
    for (std::size_t r : missing[c]) out.features.values(r, c) = median;
  }
  return out;
}

// Loads a CSV of feature columns only (no target), with the same numeric
// parsing and median imputation rules as load_csv.
inline FeatureMatrix load_features_csv(const std::string& path,
                                       bool has_header, char delimiter = ',') {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("load_features_csv: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  if (detail::trim(text).empty())
    throw FormatError("load_features_csv: '" + path + "' is empty");
  auto records = detail::parse_csv_records(text, delimiter);
  if (records.empty())
    throw FormatError("load_features_csv: no records in '" + path + "'");

  std::vector<std::string> names;
  std::size_t first_data = 0;
  const std::size_t n_cols = records.front().size();
  if (has_header) {
    for (const std::string& h : records.front())
      names.push_back(detail::trim(h));
    first_data = 1;
    if (records.size() == 1)
      throw FormatError("load_features_csv: header but no data rows");
  } else {
    for (std::size_t c = 0; c < n_cols; ++c)
      names.push_back("f" + std::to_string(c));
  }
  const std::size_t n_rows = records.size() - first_data;
  FeatureMatrix out;
  out.values = Matrix(n_rows, n_cols);
  out.feature_names = names;
  std::vector<std::vector<std::size_t>> missing(n_cols);
  for (std::size_t r = 0; r < n_rows; ++r) {
    const auto& rec = records[r + first_data];
    if (rec.size() != n_cols)
      throw ParseError("load_features_csv: record " +
                       std::to_string(r + first_data + 1) + " has " +
                       std::to_string(rec.size()) + " fields, expected " +
                       std::to_string(n_cols));
    for (std::size_t c = 0; c < n_cols; ++c) {
      std::string cell = detail::trim(rec[c]);
      if (detail::is_missing_cell(cell)) {
        missing[c].push_back(r);
        out.values(r, c) = 0.0;
      } else {
        double v;
        if (!detail::parse_double(cell, v))
          throw ParseError("load_features_csv: record " +
                           std::to_string(r + first_data + 1) + " column '" +
                           names[c] + "': cannot parse '" + cell +
                           "' as a number");
        out.values(r, c) = v;
      }
    }
  }
  for (std::size_t c = 0; c < n_cols; ++c) {
    if (missing[c].empty()) continue;
    std::vector<double> present;
    std::vector<bool> miss(n_rows, false);
    for (std::size_t r : missing[c]) miss[r] = true;
    for (std::size_t r = 0; r < n_rows; ++r)
      if (!miss[r]) present.push_back(out.values(r, c));
    if (present.empty())
      throw FormatError("load_features_csv: column '" + names[c] +
                        "' has no values");
    std::sort(present.begin(), present.end());
    std::size_t n = present.size();
    double median = n % 2 == 1
                        ? present[n / 2]
                        : 0.5 * (present[n / 2 - 1] + present[n / 2]);
    for (std::size_t r : missing[c]) out.values(r, c) = median;
  }
  return out;
}

// Per-feature affine standardization fitted on the training split only.
// Constant features keep std = 1 and are flagged. For regression the target
// statistics are kept so predictions can be mapped back to original units.
struct Standardizer {
  std::vector<double> feature_mean;
  std::vector<double> feature_std;
  std::vector<bool> constant_feature;
  TaskKind task = TaskKind::regression;
  double target_mean = 0.0;
  double target_std = 1.0;

  static Standardizer fit(const FeatureMatrix& data,
                          const TargetVector& targets) {
    if (data.n_rows() == 0) throw InputError("standardizer: empty data");
    if (data.standardized)
      throw ConfigError("standardizer: refusing to fit on already "
                        "standardized features");
    Standardizer s;
    s.task = targets.task;
    const std::size_t n = data.n_rows();
    const std::size_t m = data.n_cols();
    s.feature_mean.assign(m, 0.0);
    s.feature_std.assign(m, 0.0);
    s.constant_feature.assign(m, false);
    for (std::size_t c = 0; c < m; ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < n; ++r) mean += data.values(r, c);
      mean /= static_cast<double>(n);
      double ss = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        double d = data.values(r, c) - mean;
        ss += d * d;
      }
      double sd = std::sqrt(ss / static_cast<double>(n));
      s.feature_mean[c] = mean;
      if (sd == 0.0) {
        s.feature_std[c] = 1.0;
        s.constant_feature[c] = true;
      } else {
        s.feature_std[c] = sd;
      }
    }
    if (targets.task == TaskKind::regression) {
      double mean = 0.0;
      for (double v : targets.values) mean += v;
      mean /= static_cast<double>(targets.values.size());
      double ss = 0.0;
      for (double v : targets.values) ss += (v - mean) * (v - mean);
      double sd = std::sqrt(ss / static_cast<double>(targets.values.size()));
      s.target_mean = mean;
      s.target_std = sd == 0.0 ? 1.0 : sd;
    }
    return s;
  }

  // In-place (x - mean) / std. Applying twice is rejected: validation and
  // test data must be transformed with training statistics exactly once.
  void transform_features(FeatureMatrix& data) const {
    if (data.standardized)
      throw ConfigError("standardizer: features are already standardized");
    if (data.n_cols() != feature_mean.size())
      throw DimensionError("standardizer: feature count mismatch");
    for (std::size_t r = 0; r < data.n_rows(); ++r)
      for (std::size_t c = 0; c < data.n_cols(); ++c)
        data.values(r, c) =
            (data.values(r, c) - feature_mean[c]) / feature_std[c];
    data.standardized = true;
  }

  std::vector<double> standardize_targets(
      const std::vector<double>& y) const {
    std::vector<double> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
      out[i] = (y[i] - target_mean) / target_std;
    return out;
  }

  double unstandardize_prediction(double pred) const {
    return pred * target_std + target_mean;
  }
};

struct SplitFractions {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;  // 0 disables the test partition
};

struct SplitResult {
  Dataset train;
  Dataset valid;
  Dataset test;
  bool has_test = false;
};

namespace detail {

inline Dataset take_rows(const Dataset& d,
                         const std::vector<std::size_t>& rows) {
  Dataset out;
  out.features.feature_names = d.features.feature_names;
  out.features.standardized = d.features.standardized;
  out.features.values = Matrix(rows.size(), d.features.n_cols());
  out.targets.task = d.targets.task;
  out.targets.num_classes = d.targets.num_classes;
  out.targets.class_names = d.targets.class_names;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < d.features.n_cols(); ++c)
      out.features.values(i, c) = d.features.values(rows[i], c);
    if (d.targets.task == TaskKind::regression)
      out.targets.values.push_back(d.targets.values[rows[i]]);
    else
      out.targets.labels.push_back(d.targets.labels[rows[i]]);
  }
  return out;
}

}  // namespace detail

// Seeded shuffle split into disjoint train/valid/test partitions. Partition
// sizes are round(fraction * N); anything not claimed by valid/test goes to
// train. Empty requested partitions are a configuration error.
inline SplitResult split(const Dataset& data, SplitFractions fractions,
                         std::uint64_t seed) {
  const std::size_t n = data.features.n_rows();
  if (n != data.targets.size())
    throw DimensionError("split: feature/target row count mismatch");
  if (!(fractions.train > 0.0) || !(fractions.valid > 0.0) ||
      fractions.test < 0.0)
    throw ConfigError("split: train and valid fractions must be positive");
  if (fractions.train + fractions.valid + fractions.test > 1.0 + 1e-12)
    throw ConfigError("split: fractions sum to more than 1");

  auto sized = [&](double f) {
    return static_cast<std::size_t>(
        std::floor(f * static_cast<double>(n) + 0.5));
  };
  std::size_t n_valid = sized(fractions.valid);
  std::size_t n_test = fractions.test > 0.0 ? sized(fractions.test) : 0;
  if (n_valid == 0) throw ConfigError("split: valid partition is empty");
  if (fractions.test > 0.0 && n_test == 0)
    throw ConfigError("split: test partition is empty");
  if (n_valid + n_test >= n)
    throw ConfigError("split: train partition is empty");

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(derive_seed(seed, /*tag=*/0x11a2));
  rng.shuffle(idx);

  std::vector<std::size_t> valid_rows(idx.begin(), idx.begin() + n_valid);
  std::vector<std::size_t> test_rows(idx.begin() + n_valid,
                                     idx.begin() + n_valid + n_test);
  std::vector<std::size_t> train_rows(idx.begin() + n_valid + n_test,
                                      idx.end());

  SplitResult out;
  out.train = detail::take_rows(data, train_rows);
  out.valid = detail::take_rows(data, valid_rows);
  out.has_test = n_test > 0;
  if (out.has_test) out.test = detail::take_rows(data, test_rows);
  return out;
}

// Per-epoch seeded shuffle of row indices, chunked into blocks of
// `batch_size` (the final block may be short). The epoch number is folded
// into the stream seed, so each epoch sees a fresh permutation.
inline std::vector<std::vector<std::size_t>> make_batches(
    std::size_t n_rows, std::size_t batch_size, std::uint64_t seed,
    std::uint64_t epoch) {
  if (batch_size < 1) throw ConfigError("make_batches: batch_size must be >= 1");
  std::vector<std::size_t> idx(n_rows);
  for (std::size_t i = 0; i < n_rows; ++i) idx[i] = i;
  Rng rng(derive_seed(seed, 0xba7c4 + epoch));
  rng.shuffle(idx);
  std::vector<std::vector<std::size_t>> blocks;
  for (std::size_t start = 0; start < n_rows; start += batch_size) {
    std::size_t end = std::min(start + batch_size, n_rows);
    blocks.emplace_back(idx.begin() + start, idx.begin() + end);
  }
  return blocks;
}

}  // namespace qforest
