#pragma once

#include <string>

#include "mixupe/data.hpp"

namespace mixupe::synth {

/// A generated CSV plus its column spec. Generators are deterministic:
/// the same name always produces the same bytes.
struct SynthFile {
  std::string name;
  std::string csv;
  DatasetSpec spec;
};

/// 150 x 4 continuous, 3 classes; two of the classes overlap. A few cells
/// are blanked out to exercise imputation.
SynthFile make_petals();

/// Full 5^4 factorial of four categorical levers, 3 classes from the
/// torque sign rule. No noise, no missing cells.
SynthFile make_levers();

/// 900 x 16 continuous, 10 overlapping classes, 12% label noise, sparse
/// missing cells.
SynthFile make_glyphs();

/// 300 x 8 continuous, 3 overlapping classes with 20% label noise; small
/// enough for a wide MLP to overfit within a short budget. Used by the
/// train/test-loss ordering experiments.
SynthFile make_speckle();

/// 90 x 4 continuous, 3 well-separated classes (linearly separable).
SynthFile make_separable_toy();

SynthFile by_name(const std::string& name);
std::vector<std::string> all_names();

/// Writes dir/<name>.csv and dir/<name>.spec.json.
void write_to_dir(const SynthFile& file, const std::string& dir);

/// Parse + build without touching the filesystem.
Dataset load(const SynthFile& file, const DatasetOptions& opt);

}  // namespace mixupe::synth
