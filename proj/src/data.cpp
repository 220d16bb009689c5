#include "mixupe/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mixupe/rng.hpp"

namespace mixupe {

namespace {

using nlohmann::json;

const char* kind_name(ColumnKind k) {
  switch (k) {
    case ColumnKind::continuous: return "continuous";
    case ColumnKind::categorical: return "categorical";
    case ColumnKind::label: return "label";
  }
  return "?";
}

ColumnKind kind_from_string(const std::string& s) {
  if (s == "continuous") return ColumnKind::continuous;
  if (s == "categorical") return ColumnKind::categorical;
  if (s == "label") return ColumnKind::label;
  throw ConfigError("unknown column kind '" + s + "'");
}

bool is_missing_token(const std::string& s) {
  return s.empty() || s == "?" || s == "NA";
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

void validate(const DatasetSpec& spec) {
  if (spec.columns.empty()) throw ConfigError("dataset spec has no columns");
  std::size_t labels = 0;
  for (const auto& col : spec.columns) {
    if (col.kind == ColumnKind::label) ++labels;
    if (col.kind != ColumnKind::continuous && col.categories.empty())
      throw ConfigError("column '" + col.name + "' needs categories");
  }
  if (labels != 1)
    throw ConfigError("dataset spec must have exactly one label column, has " +
                      std::to_string(labels));
}

DatasetSpec load_dataset_spec(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open dataset spec '" + path + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("dataset spec '" + path + "': " + e.what());
  }
  DatasetSpec spec;
  spec.has_header = j.value("has_header", false);
  spec.lenient_categories = j.value("lenient_categories", false);
  if (!j.contains("columns"))
    throw ConfigError("dataset spec '" + path + "' missing 'columns'");
  for (const auto& jc : j.at("columns")) {
    ColumnSpec col;
    col.name = jc.at("name").get<std::string>();
    col.kind = kind_from_string(jc.at("kind").get<std::string>());
    if (jc.contains("categories"))
      col.categories = jc.at("categories").get<std::vector<std::string>>();
    spec.columns.push_back(std::move(col));
  }
  validate(spec);
  return spec;
}

void save_dataset_spec(const DatasetSpec& spec, const std::string& path) {
  json j;
  j["has_header"] = spec.has_header;
  j["lenient_categories"] = spec.lenient_categories;
  j["columns"] = json::array();
  for (const auto& col : spec.columns) {
    json jc;
    jc["name"] = col.name;
    jc["kind"] = kind_name(col.kind);
    if (!col.categories.empty()) jc["categories"] = col.categories;
    j["columns"].push_back(jc);
  }
  std::ofstream os(path);
  if (!os) throw IoError("cannot write dataset spec '" + path + "'");
  os << j.dump(2) << "\n";
}

RawTable load_csv(std::istream& in, const DatasetSpec& spec) {
  validate(spec);
  RawTable raw;
  raw.spec = spec;
  raw.continuous.resize(spec.columns.size());
  raw.categorical.resize(spec.columns.size());
  for (std::size_t c = 0; c < spec.columns.size(); ++c)
    if (spec.columns[c].kind == ColumnKind::label) raw.label_column = c;

  std::string line;
  std::size_t file_row = 0;
  bool header_pending = spec.has_header;
  while (std::getline(in, line)) {
    ++file_row;
    if (trim(line).empty()) continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    const auto cells = split_commas(line);
    if (cells.size() != spec.columns.size())
      throw IoError("row " + std::to_string(file_row) + " has " +
                    std::to_string(cells.size()) + " cells, spec expects " +
                    std::to_string(spec.columns.size()));
    const std::size_t r = raw.n_rows;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const ColumnSpec& col = spec.columns[c];
      const std::string& cell = cells[c];
      if (col.kind == ColumnKind::continuous) {
        if (is_missing_token(cell)) {
          raw.continuous[c].push_back(std::nullopt);
          ++raw.missing_count;
          raw.missing_cells.emplace_back(r, c);
          continue;
        }
        std::size_t pos = 0;
        double v = 0.0;
        try {
          v = std::stod(cell, &pos);
        } catch (const std::exception&) {
          pos = 0;
        }
        if (pos != cell.size() || !std::isfinite(v))
          throw IoError("row " + std::to_string(file_row) + " column '" +
                        col.name + "': cannot parse numeric cell '" + cell +
                        "'");
        raw.continuous[c].push_back(v);
      } else {
        if (col.kind == ColumnKind::categorical && is_missing_token(cell)) {
          raw.categorical[c].push_back(std::nullopt);
          ++raw.missing_count;
          raw.missing_cells.emplace_back(r, c);
          continue;
        }
        auto it =
            std::find(col.categories.begin(), col.categories.end(), cell);
        if (it == col.categories.end()) {
          if (col.kind == ColumnKind::label || !spec.lenient_categories)
            throw IoError("row " + std::to_string(file_row) + " column '" +
                          col.name + "': unknown category '" + cell + "'");
          // lenient: reserved trailing slot
          raw.categorical[c].push_back(
              static_cast<int>(col.categories.size()));
          continue;
        }
        const int idx = static_cast<int>(it - col.categories.begin());
        if (col.kind == ColumnKind::label)
          raw.labels.push_back(idx);
        else
          raw.categorical[c].push_back(idx);
      }
    }
    ++raw.n_rows;
  }
  return raw;
}

RawTable load_csv(const std::string& path, const DatasetSpec& spec) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open CSV '" + path + "'");
  return load_csv(is, spec);
}

// ---------------------------------------------------------------------------
// splitting
// ---------------------------------------------------------------------------

namespace {

std::array<std::size_t, 3> largest_remainder_counts(
    std::size_t n, const std::array<double, 3>& fractions) {
  double total = fractions[0] + fractions[1] + fractions[2];
  if (std::fabs(total - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double want = fractions[s] * static_cast<double>(n);
    counts[s] = static_cast<std::size_t>(std::floor(want + 1e-12));
    remainder[s] = want - static_cast<double>(counts[s]);
    assigned += counts[s];
  }
  while (assigned < n) {
    int best = 0;
    for (int s = 1; s < 3; ++s)
      if (remainder[s] > remainder[best]) best = s;
    ++counts[best];
    remainder[best] = -1.0;
    ++assigned;
  }
  return counts;
}

void check_nonempty(const std::array<std::size_t, 3>& counts,
                    const std::array<double, 3>& fractions) {
  for (int s = 0; s < 3; ++s)
    if (fractions[s] > 0.0 && counts[s] == 0)
      throw ConfigError("split produced an empty part for a nonzero fraction");
}

}  // namespace

std::vector<Split> split_assignment(std::size_t n,
                                    const std::array<double, 3>& fractions,
                                    std::uint64_t seed) {
  const auto counts = largest_remainder_counts(n, fractions);
  check_nonempty(counts, fractions);
  Rng rng(derive_seed(seed, 0x73706c6974ULL));
  const auto order = rng.permutation(n);
  std::vector<Split> out(n, Split::train);
  std::size_t k = 0;
  for (std::size_t i = 0; i < counts[0]; ++i) out[order[k++]] = Split::train;
  for (std::size_t i = 0; i < counts[1]; ++i) out[order[k++]] = Split::val;
  for (std::size_t i = 0; i < counts[2]; ++i) out[order[k++]] = Split::test;
  return out;
}

std::vector<Split> stratified_split(const std::vector<int>& labels,
                                    std::size_t n_classes,
                                    const std::array<double, 3>& fractions,
                                    std::uint64_t seed) {
  std::vector<Split> out(labels.size(), Split::train);
  std::array<std::size_t, 3> totals{};
  for (std::size_t cls = 0; cls < n_classes; ++cls) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == static_cast<int>(cls)) members.push_back(i);
    if (members.empty()) continue;
    Rng rng(derive_seed(seed, 0x73747261ULL, cls));
    const auto order = rng.permutation(members.size());
    const auto counts = largest_remainder_counts(members.size(), fractions);
    std::size_t k = 0;
    for (std::size_t i = 0; i < counts[0]; ++i)
      out[members[order[k++]]] = Split::train;
    for (std::size_t i = 0; i < counts[1]; ++i)
      out[members[order[k++]]] = Split::val;
    for (std::size_t i = 0; i < counts[2]; ++i)
      out[members[order[k++]]] = Split::test;
    for (int s = 0; s < 3; ++s) totals[s] += counts[s];
  }
  check_nonempty(totals, fractions);
  return out;
}

// ---------------------------------------------------------------------------
// encoding and normalization
// ---------------------------------------------------------------------------

EncodedTable encode_and_impute(const RawTable& raw,
                               const std::vector<Split>& split) {
  if (split.size() != raw.n_rows)
    throw ConfigError("encode: split assignment size mismatch");
  const auto& cols = raw.spec.columns;

  // Train-split statistics.
  std::vector<double> impute_mean(cols.size(), 0.0);
  std::vector<int> impute_mode(cols.size(), 0);
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (cols[c].kind == ColumnKind::continuous) {
      double acc = 0.0;
      std::size_t count = 0;
      for (std::size_t r = 0; r < raw.n_rows; ++r) {
        if (split[r] != Split::train) continue;
        if (raw.continuous[c][r]) {
          acc += *raw.continuous[c][r];
          ++count;
        }
      }
      if (count == 0)
        throw ConfigError("column '" + cols[c].name +
                          "' has no observed train values to impute from");
      impute_mean[c] = acc / static_cast<double>(count);
    } else if (cols[c].kind == ColumnKind::categorical) {
      const std::size_t slots =
          cols[c].categories.size() + (raw.spec.lenient_categories ? 1 : 0);
      std::vector<std::size_t> freq(slots, 0);
      std::size_t count = 0;
      for (std::size_t r = 0; r < raw.n_rows; ++r) {
        if (split[r] != Split::train) continue;
        if (raw.categorical[c][r]) {
          ++freq[static_cast<std::size_t>(*raw.categorical[c][r])];
          ++count;
        }
      }
      if (count == 0)
        throw ConfigError("column '" + cols[c].name +
                          "' has no observed train values to impute from");
      // Mode; ties go to the first-declared category.
      std::size_t best = 0;
      for (std::size_t k = 1; k < freq.size(); ++k)
        if (freq[k] > freq[best]) best = k;
      impute_mode[c] = static_cast<int>(best);
    }
  }

  // Output width accounting.
  std::size_t d = 0, n_classes = 0;
  EncodedTable out;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (cols[c].kind == ColumnKind::continuous) {
      d += 1;
      out.n_continuous += 1;
    } else if (cols[c].kind == ColumnKind::categorical) {
      const std::size_t w =
          cols[c].categories.size() + (raw.spec.lenient_categories ? 1 : 0);
      d += w;
      out.n_onehot += w;
    } else {
      n_classes = cols[c].categories.size();
    }
  }

  std::vector<double> feat(raw.n_rows * d, 0.0);
  std::vector<double> lab(raw.n_rows * n_classes, 0.0);
  for (std::size_t r = 0; r < raw.n_rows; ++r) {
    std::size_t off = 0;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (cols[c].kind == ColumnKind::continuous) {
        const auto& cell = raw.continuous[c][r];
        feat[r * d + off] = cell ? *cell : impute_mean[c];
        off += 1;
      } else if (cols[c].kind == ColumnKind::categorical) {
        const std::size_t w =
            cols[c].categories.size() + (raw.spec.lenient_categories ? 1 : 0);
        const auto& cell = raw.categorical[c][r];
        const int idx = cell ? *cell : impute_mode[c];
        feat[r * d + off + static_cast<std::size_t>(idx)] = 1.0;
        off += w;
      }
    }
    lab[r * n_classes + static_cast<std::size_t>(raw.labels[r])] = 1.0;
  }
  out.features = Tensor::from_flat(raw.n_rows, d, std::move(feat));
  out.labels = Tensor::from_flat(raw.n_rows, n_classes, std::move(lab));
  return out;
}

NormalizeResult normalize(const Tensor& features,
                          const std::vector<Split>& split, bool with_std) {
  if (split.size() != features.rows())
    throw ConfigError("normalize: split assignment size mismatch");
  const std::size_t n = features.rows(), d = features.cols();
  std::size_t n_train = 0;
  for (auto s : split)
    if (s == Split::train) ++n_train;
  if (n_train == 0) throw ConfigError("normalize: empty train split");

  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    if (split[r] != Split::train) continue;
    for (std::size_t c = 0; c < d; ++c) mean[c] += features.at(r, c);
  }
  for (std::size_t c = 0; c < d; ++c) mean[c] /= static_cast<double>(n_train);
  for (std::size_t r = 0; r < n; ++r) {
    if (split[r] != Split::train) continue;
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = features.at(r, c) - mean[c];
      sd[c] += dv * dv;
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    sd[c] = std::sqrt(sd[c] / static_cast<double>(n_train));
    if (!with_std || sd[c] < 1e-12) sd[c] = 1.0;
  }

  std::vector<double> out(n * d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c)
      out[r * d + c] = (features.at(r, c) - mean[c]) / sd[c];

  NormalizeResult res;
  res.features = Tensor::from_flat(n, d, std::move(out));
  res.mean = Tensor::from_flat(1, d, std::move(mean));
  res.std = Tensor::from_flat(1, d, std::move(sd));
  return res;
}

// ---------------------------------------------------------------------------
// dataset assembly
// ---------------------------------------------------------------------------

std::vector<std::size_t> Dataset::indices_of(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) out.push_back(i);
  return out;
}

std::pair<Tensor, Tensor> Dataset::gather(
    const std::vector<std::size_t>& idx) const {
  const std::size_t d = dim(), c = n_classes();
  std::vector<double> x(idx.size() * d), y(idx.size() * c);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    for (std::size_t j = 0; j < d; ++j) x[r * d + j] = features.at(idx[r], j);
    for (std::size_t j = 0; j < c; ++j) y[r * c + j] = labels.at(idx[r], j);
  }
  return {Tensor::from_flat(idx.size(), d, std::move(x)),
          Tensor::from_flat(idx.size(), c, std::move(y))};
}

Dataset build_dataset(const RawTable& raw, const DatasetOptions& opt) {
  std::size_t n_classes = 0;
  for (const auto& col : raw.spec.columns)
    if (col.kind == ColumnKind::label) n_classes = col.categories.size();

  std::vector<Split> split =
      opt.stratified
          ? stratified_split(raw.labels, n_classes, opt.fractions, opt.seed)
          : split_assignment(raw.n_rows, opt.fractions, opt.seed);

  EncodedTable enc = encode_and_impute(raw, split);
  NormalizeResult norm = normalize(enc.features, split, opt.standardize);

  Dataset ds;
  ds.features = norm.features;
  ds.labels = enc.labels;
  ds.feature_mean = norm.mean;
  ds.feature_std = norm.std;
  ds.columns = raw.spec.columns;
  ds.split = std::move(split);

  // Post-normalization train mean; ~0 by construction, kept explicit for
  // the exact-mode regularizer and the alpha trace.
  const std::size_t d = ds.features.cols();
  std::vector<double> mx(d, 0.0);
  std::size_t n_train = 0;
  for (std::size_t r = 0; r < ds.features.rows(); ++r) {
    if (ds.split[r] != Split::train) continue;
    ++n_train;
    for (std::size_t c = 0; c < d; ++c) mx[c] += ds.features.at(r, c);
  }
  for (std::size_t c = 0; c < d; ++c) mx[c] /= static_cast<double>(n_train);
  ds.mean_x = Tensor::from_flat(1, d, std::move(mx));
  return ds;
}

Dataset load_dataset(const std::string& csv_path, const std::string& spec_path,
                     const DatasetOptions& opt) {
  const DatasetSpec spec = load_dataset_spec(spec_path);
  return build_dataset(load_csv(csv_path, spec), opt);
}

}  // namespace mixupe
