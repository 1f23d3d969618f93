#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pgnet/mat.hpp"
#include "pgnet/rng.hpp"

namespace pgnet {

enum class ShapeFamily { kSphere, kBox, kCylinder, kBracket, kLamp };

const char* family_name(ShapeFamily f);
ShapeFamily family_from_name(const std::string& name);

// Parametric shape, constructed centered at the origin and contained in the
// unit cube. Size semantics per family (all model units):
//   sphere:   size[0] radius, in [0.3, 0.5]
//   box:      size[0..2] half extents, each in [0.15, 0.5]
//   cylinder: size[0] radius in [0.1, 0.4], size[1] half height in [0.2, 0.5]
//   bracket:  size[0] arm thickness in [0.15, 0.3], size[1] half depth in [0.1, 0.25]
//   lamp:     size[0] shade bottom radius in [0.2, 0.35],
//             size[1] shade top radius in [0.05, 0.15],
//             size[2] pole radius in [0.02, 0.05]
struct ShapeSpec {
  ShapeFamily family = ShapeFamily::kSphere;
  std::array<double, 3> size{0.5, 0.0, 0.0};
  std::uint64_t seed = 0;
};

// Draws sizes uniformly within the documented ranges.
ShapeSpec random_shape_spec(ShapeFamily family, Rng& rng);

// Samples n points uniformly by surface area.
Mat gen_shape(const ShapeSpec& spec, int n);

// Half-space occlusion: keeps the keep_fraction of points with lowest dot
// product against direction, then resamples with replacement to out_count.
Mat crop_partial(const Mat& gt, const std::array<double, 3>& direction, double keep_fraction,
                 int out_count, Rng& rng);

// Perturbation profile of the simulated image-to-3D prior.
struct PriorBias {
  double max_rotation = 15.0 * 3.14159265358979323846 / 180.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double max_translation = 0.05;
  double jitter_sigma = 0.01;
  double blob_probability = 0.2;
  int blob_points = 16;
  double blob_radius = 0.05;
  double dropout_fraction = 0.1;
};

// Applies, in order: random rotation, anisotropic scale, translation,
// Gaussian jitter, an optional hallucinated blob, random dropout, and
// resampling to out_count. Covers the full ground-truth extent before the
// perturbations, so the result stays topologically complete.
Mat simulate_prior(const Mat& gt, const PriorBias& bias, std::uint64_t seed, int out_count);

struct DatasetConfig {
  int sample_count = 200;
  int partial_count = 256;  // M
  int prior_count = 256;    // N_g
  int gt_count = 256;       // N
  double keep_fraction = 0.5;
  std::vector<ShapeFamily> families{ShapeFamily::kSphere, ShapeFamily::kBox,
                                    ShapeFamily::kCylinder, ShapeFamily::kBracket,
                                    ShapeFamily::kLamp};
  PriorBias bias;
  std::uint64_t master_seed = 42;
};

struct Sample {
  std::string id;
  std::string family;
  std::array<double, 3> crop_direction{};
  std::string split;  // "train" | "val"
  Mat partial;
  Mat prior;
  Mat gt;
};

struct Dataset {
  std::string dir;
  std::uint64_t master_seed = 0;
  std::vector<Sample> samples;
  std::vector<int> train_indices;
  std::vector<int> val_indices;
};

// Writes clouds (CSV) plus manifest.json. Deterministic per master seed:
// each sample derives its own generator from (master_seed, index), so the
// bytes are identical across reruns.
void build_dataset(const std::string& dir, const DatasetConfig& cfg);

Dataset load_dataset(const std::string& dir);

}  // namespace pgnet
