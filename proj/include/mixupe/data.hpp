#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mixupe/tensor.hpp"

namespace mixupe {

enum class ColumnKind { continuous, categorical, label };

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::continuous;
  std::vector<std::string> categories;  // categorical / label only
};

struct DatasetSpec {
  std::vector<ColumnSpec> columns;
  bool has_header = false;
  /// Unknown categories: strict mode errors, lenient mode maps them to a
  /// reserved trailing "unknown" slot in the one-hot block.
  bool lenient_categories = false;
};

void validate(const DatasetSpec& spec);
/// JSON sidecar: {"has_header": ..., "columns": [{"name","kind","categories"}]}.
DatasetSpec load_dataset_spec(const std::string& path);
void save_dataset_spec(const DatasetSpec& spec, const std::string& path);

/// Typed columns straight off the CSV; empty cells, "?" and "NA" are
/// recorded as missing.
struct RawTable {
  DatasetSpec spec;
  std::size_t n_rows = 0;
  // One entry per column, aligned with spec.columns; unused slots empty.
  std::vector<std::vector<std::optional<double>>> continuous;
  std::vector<std::vector<std::optional<int>>> categorical;
  std::vector<int> labels;  // exactly one label column; no missing allowed
  std::size_t label_column = 0;
  std::size_t missing_count = 0;
  // (row, column) coordinates of missing cells, in file order.
  std::vector<std::pair<std::size_t, std::size_t>> missing_cells;
};

RawTable load_csv(std::istream& in, const DatasetSpec& spec);
RawTable load_csv(const std::string& path, const DatasetSpec& spec);

enum class Split { train, val, test };

/// Seeded shuffle then contiguous assignment by largest-remainder counts.
std::vector<Split> split_assignment(std::size_t n,
                                    const std::array<double, 3>& fractions,
                                    std::uint64_t seed);

/// Per-class proportional assignment; class counts stay within one sample
/// of the exact fractions.
std::vector<Split> stratified_split(const std::vector<int>& labels,
                                    std::size_t n_classes,
                                    const std::array<double, 3>& fractions,
                                    std::uint64_t seed);

struct EncodedTable {
  Tensor features;  // n x d, before normalization
  Tensor labels;    // n x C one-hot
  std::size_t n_continuous = 0;
  std::size_t n_onehot = 0;
};

/// One-hot categoricals in declared category order; missing continuous
/// cells get the train-split mean, missing categoricals the train-split
/// mode (ties broken by declaration order).
EncodedTable encode_and_impute(const RawTable& raw,
                               const std::vector<Split>& split);

struct NormalizeResult {
  Tensor features;
  Tensor mean;  // 1 x d train-split statistics
  Tensor std;   // 1 x d; entries < 1e-12 clamped to 1
};

/// (x - mean) / std per column with train-only statistics. with_std=false
/// leaves the scale at 1 (mean-centering only).
NormalizeResult normalize(const Tensor& features,
                          const std::vector<Split>& split,
                          bool with_std = true);

struct DatasetOptions {
  std::array<double, 3> fractions{0.7, 0.15, 0.15};
  std::uint64_t seed = 0;
  bool stratified = true;
  bool standardize = true;  // divide by train std as well as centering
};

/// Fully prepared dataset: encoded, imputed, normalized, split.
struct Dataset {
  Tensor features;      // n x d, normalized
  Tensor labels;        // n x C one-hot
  Tensor feature_mean;  // pre-normalization train mean (1 x d)
  Tensor feature_std;   // pre-normalization train std (1 x d)
  Tensor mean_x;        // post-normalization train mean (1 x d), ~0
  std::vector<ColumnSpec> columns;
  std::vector<Split> split;
  std::size_t n() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  std::size_t n_classes() const { return labels.cols(); }

  std::vector<std::size_t> indices_of(Split s) const;
  /// Gather rows into fresh constant tensors (features, labels).
  std::pair<Tensor, Tensor> gather(const std::vector<std::size_t>& idx) const;
};

Dataset build_dataset(const RawTable& raw, const DatasetOptions& opt);
Dataset load_dataset(const std::string& csv_path,
                     const std::string& spec_path, const DatasetOptions& opt);

}  // namespace mixupe
