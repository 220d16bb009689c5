#include "mixupe/synth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mixupe/rng.hpp"

namespace mixupe::synth {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct BlobParams {
  std::string name;
  std::size_t n = 0;
  std::size_t dim = 0;
  std::size_t n_classes = 0;
  double class_sigma = 1.0;
  double mean_scale = 1.0;
  double label_noise = 0.0;
  double missing_rate = 0.0;
  std::uint64_t seed = 0;
  bool axis_aligned_means = false;  // guarantees wide class separation
};

/// Gaussian blobs with class means on a random simplex-ish arrangement.
SynthFile make_blobs(const BlobParams& p) {
  Rng rng(derive_seed(p.seed, 0xb10b5ULL));

  // Class means: random directions scaled to a common radius, or one
  // coordinate axis per class when separability must be certain.
  std::vector<std::vector<double>> means(p.n_classes,
                                         std::vector<double>(p.dim, 0.0));
  if (p.axis_aligned_means) {
    for (std::size_t c = 0; c < p.n_classes; ++c)
      means[c][c % p.dim] = p.mean_scale;
  } else {
    for (auto& m : means) {
      double norm2 = 0.0;
      for (auto& v : m) {
        v = rng.normal();
        norm2 += v * v;
      }
      const double norm = std::sqrt(norm2);
      for (auto& v : m) v = v / norm * p.mean_scale;
    }
  }

  std::ostringstream csv;
  std::vector<std::string> class_names;
  for (std::size_t c = 0; c < p.n_classes; ++c)
    class_names.push_back("c" + std::to_string(c));

  for (std::size_t r = 0; r < p.n; ++r) {
    const std::size_t cls = r % p.n_classes;  // balanced classes
    std::size_t label = cls;
    if (p.label_noise > 0.0 && rng.uniform() < p.label_noise)
      label = rng.uniform_index(p.n_classes);
    for (std::size_t j = 0; j < p.dim; ++j) {
      const double v = means[cls][j] + p.class_sigma * rng.normal();
      const bool missing =
          p.missing_rate > 0.0 && rng.uniform() < p.missing_rate;
      csv << (missing ? std::string("?") : fmt(v)) << ",";
    }
    csv << class_names[label] << "\n";
  }

  SynthFile out;
  out.name = p.name;
  out.csv = csv.str();
  for (std::size_t j = 0; j < p.dim; ++j)
    out.spec.columns.push_back(
        {"f" + std::to_string(j), ColumnKind::continuous, {}});
  out.spec.columns.push_back({"class", ColumnKind::label, class_names});
  return out;
}

}  // namespace

SynthFile make_petals() {
  BlobParams p;
  p.name = "petals";
  p.n = 150;
  p.dim = 4;
  p.n_classes = 3;
  p.class_sigma = 1.0;
  p.mean_scale = 2.6;
  p.label_noise = 0.02;
  p.missing_rate = 0.01;
  p.seed = 11;
  return make_blobs(p);
}

SynthFile make_levers() {
  SynthFile out;
  out.name = "levers";
  std::ostringstream csv;
  const char* levels[5] = {"1", "2", "3", "4", "5"};
  for (int lw = 1; lw <= 5; ++lw)
    for (int ld = 1; ld <= 5; ++ld)
      for (int rw = 1; rw <= 5; ++rw)
        for (int rd = 1; rd <= 5; ++rd) {
          const int torque = lw * ld - rw * rd;
          const char* cls =
              torque > 0 ? "left" : (torque < 0 ? "right" : "balanced");
          csv << levels[lw - 1] << "," << levels[ld - 1] << ","
              << levels[rw - 1] << "," << levels[rd - 1] << "," << cls
              << "\n";
        }
  out.csv = csv.str();
  const std::vector<std::string> lvl{"1", "2", "3", "4", "5"};
  out.spec.columns.push_back({"left_weight", ColumnKind::categorical, lvl});
  out.spec.columns.push_back({"left_dist", ColumnKind::categorical, lvl});
  out.spec.columns.push_back({"right_weight", ColumnKind::categorical, lvl});
  out.spec.columns.push_back({"right_dist", ColumnKind::categorical, lvl});
  out.spec.columns.push_back(
      {"class", ColumnKind::label, {"left", "balanced", "right"}});
  return out;
}

SynthFile make_glyphs() {
  BlobParams p;
  p.name = "glyphs";
  p.n = 900;
  p.dim = 16;
  p.n_classes = 10;
  p.class_sigma = 1.0;
  p.mean_scale = 2.9;
  p.label_noise = 0.12;
  p.missing_rate = 0.003;
  p.seed = 23;
  return make_blobs(p);
}

SynthFile make_speckle() {
  BlobParams p;
  p.name = "speckle";
  p.n = 300;
  p.dim = 8;
  p.n_classes = 3;
  p.class_sigma = 1.0;
  p.mean_scale = 1.9;
  p.label_noise = 0.20;
  p.missing_rate = 0.0;
  p.seed = 41;
  return make_blobs(p);
}

SynthFile make_separable_toy() {
  BlobParams p;
  p.name = "separable_toy";
  p.n = 90;
  p.dim = 4;
  p.n_classes = 3;
  p.class_sigma = 0.35;
  p.mean_scale = 4.0;
  p.label_noise = 0.0;
  p.missing_rate = 0.0;
  p.seed = 5;
  p.axis_aligned_means = true;
  return make_blobs(p);
}

SynthFile by_name(const std::string& name) {
  if (name == "petals") return make_petals();
  if (name == "levers") return make_levers();
  if (name == "glyphs") return make_glyphs();
  if (name == "speckle") return make_speckle();
  if (name == "separable_toy") return make_separable_toy();
  throw ConfigError("unknown synthetic dataset '" + name + "'");
}

std::vector<std::string> all_names() {
  return {"petals", "levers", "glyphs", "speckle", "separable_toy"};
}

void write_to_dir(const SynthFile& file, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::string csv_path = dir + "/" + file.name + ".csv";
  std::ofstream os(csv_path);
  if (!os) throw IoError("cannot write '" + csv_path + "'");
  os << file.csv;
  if (!os) throw IoError("write failure on '" + csv_path + "'");
  save_dataset_spec(file.spec, dir + "/" + file.name + ".spec.json");
}

Dataset load(const SynthFile& file, const DatasetOptions& opt) {
  std::istringstream is(file.csv);
  return build_dataset(load_csv(is, file.spec), opt);
}

}  // namespace mixupe::synth
