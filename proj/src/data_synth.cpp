#include "pgnet/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <tuple>

#include "json.hpp"
#include "pgnet/cloud_io.hpp"
#include "pgnet/errors.hpp"
#include "pgnet/hash.hpp"

namespace pgnet {

namespace {

constexpr double kPi = 3.14159265358979323846;

void unit_vector(Rng& rng, double out[3]) {
  for (;;) {
    const double x = rng.normal(), y = rng.normal(), z = rng.normal();
    const double norm = std::sqrt(x * x + y * y + z * z);
    if (norm > 1e-6) {
      out[0] = x / norm;
      out[1] = y / norm;
      out[2] = z / norm;
      return;
    }
  }
}

void check_range(double v, double lo, double hi, const char* what) {
  if (!(v >= lo && v <= hi))
    throw InputError(std::string("gen_shape: ") + what + "=" + std::to_string(v) +
                     " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

Mat sample_sphere(double radius, int n, Rng& rng) {
  Mat cloud(n, 3);
  for (int i = 0; i < n; ++i) {
    double dir[3];
    unit_vector(rng, dir);
    for (int c = 0; c < 3; ++c) cloud(i, c) = radius * dir[c];
  }
  return cloud;
}

// Face order: -x, +x, -y, +y, -z, +z; picked by cumulative area.
Mat sample_box(const std::array<double, 3>& half, int n, Rng& rng) {
  const double areas[3] = {4.0 * half[1] * half[2], 4.0 * half[0] * half[2],
                           4.0 * half[0] * half[1]};
  const double total = 2.0 * (areas[0] + areas[1] + areas[2]);
  Mat cloud(n, 3);
  for (int i = 0; i < n; ++i) {
    double pick = rng.uniform() * total;
    int face = 0;
    while (face < 5 && pick >= areas[face / 2]) {
      pick -= areas[face / 2];
      ++face;
    }
    const int axis = face / 2;
    const int u_axis = (axis + 1) % 3;
    const int v_axis = (axis + 2) % 3;
    cloud(i, axis) = (face % 2 == 0 ? -1.0 : 1.0) * half[axis];
    cloud(i, u_axis) = rng.uniform(-half[u_axis], half[u_axis]);
    cloud(i, v_axis) = rng.uniform(-half[v_axis], half[v_axis]);
  }
  return cloud;
}

Mat sample_cylinder(double radius, double half_height, int n, Rng& rng) {
  const double side_area = 2.0 * kPi * radius * 2.0 * half_height;
  const double cap_area = kPi * radius * radius;
  const double total = side_area + 2.0 * cap_area;
  Mat cloud(n, 3);
  for (int i = 0; i < n; ++i) {
    const double pick = rng.uniform() * total;
    const double theta = rng.uniform(0.0, 2.0 * kPi);
    if (pick < side_area) {
      cloud(i, 0) = radius * std::cos(theta);
      cloud(i, 1) = radius * std::sin(theta);
      cloud(i, 2) = rng.uniform(-half_height, half_height);
    } else {
      const double r = radius * std::sqrt(rng.uniform());
      cloud(i, 0) = r * std::cos(theta);
      cloud(i, 1) = r * std::sin(theta);
      cloud(i, 2) = pick < side_area + cap_area ? -half_height : half_height;
    }
  }
  return cloud;
}

struct Box {
  double lo[3];
  double hi[3];

  double face_area(int axis) const {
    const int u = (axis + 1) % 3, v = (axis + 2) % 3;
    return (hi[u] - lo[u]) * (hi[v] - lo[v]);
  }
  bool strictly_inside(const double p[3]) const {
    for (int c = 0; c < 3; ++c)
      if (!(p[c] > lo[c] && p[c] < hi[c])) return false;
    return true;
  }
  void sample_face(int axis, bool high, Rng& rng, double out[3]) const {
    const int u = (axis + 1) % 3, v = (axis + 2) % 3;
    out[axis] = high ? hi[axis] : lo[axis];
    out[u] = rng.uniform(lo[u], hi[u]);
    out[v] = rng.uniform(lo[v], hi[v]);
  }
};

// Two overlapping boxes forming an L; samples the surface of the union by
// rejecting points interior to the other arm.
Mat sample_bracket(double thickness, double half_depth, int n, Rng& rng) {
  const Box upright{{-0.5, -0.5, -half_depth}, {-0.5 + thickness, 0.5, half_depth}};
  const Box base{{-0.5, -0.5, -half_depth}, {0.5, -0.5 + thickness, half_depth}};
  const Box* boxes[2] = {&upright, &base};

  double face_area[2][6];
  double total = 0.0;
  for (int b = 0; b < 2; ++b)
    for (int f = 0; f < 6; ++f) {
      face_area[b][f] = boxes[b]->face_area(f / 2);
      total += face_area[b][f];
    }

  Mat cloud(n, 3);
  for (int i = 0; i < n; ++i) {
    for (;;) {
      double pick = rng.uniform() * total;
      int b = 0, f = 0;
      for (b = 0; b < 2; ++b) {
        bool done = false;
        for (f = 0; f < 6; ++f) {
          if (pick < face_area[b][f]) {
            done = true;
            break;
          }
          pick -= face_area[b][f];
        }
        if (done) break;
      }
      if (b == 2) {
        b = 1;
        f = 5;
      }
      double p[3];
      boxes[b]->sample_face(f / 2, f % 2 == 1, rng, p);
      if (!boxes[1 - b]->strictly_inside(p)) {
        for (int c = 0; c < 3; ++c) cloud(i, c) = p[c];
        break;
      }
    }
  }
  return cloud;
}

// Base disc at the bottom, thin pole, conical shade on top.
Mat sample_lamp(double shade_bottom_r, double shade_top_r, double pole_r, int n, Rng& rng) {
  const double base_r = shade_bottom_r;
  const double pole_z0 = -0.5, pole_z1 = 0.1;
  const double shade_z0 = 0.1, shade_z1 = 0.5;

  const double base_area = kPi * base_r * base_r;
  const double pole_area = 2.0 * kPi * pole_r * (pole_z1 - pole_z0);
  const double shade_h = shade_z1 - shade_z0;
  const double slant = std::sqrt((shade_bottom_r - shade_top_r) * (shade_bottom_r - shade_top_r) +
                                 shade_h * shade_h);
  const double shade_area = kPi * (shade_bottom_r + shade_top_r) * slant;
  const double total = base_area + pole_area + shade_area;

  Mat cloud(n, 3);
  for (int i = 0; i < n; ++i) {
    const double pick = rng.uniform() * total;
    const double theta = rng.uniform(0.0, 2.0 * kPi);
    if (pick < base_area) {
      const double r = base_r * std::sqrt(rng.uniform());
      cloud(i, 0) = r * std::cos(theta);
      cloud(i, 1) = r * std::sin(theta);
      cloud(i, 2) = pole_z0;
    } else if (pick < base_area + pole_area) {
      cloud(i, 0) = pole_r * std::cos(theta);
      cloud(i, 1) = pole_r * std::sin(theta);
      cloud(i, 2) = rng.uniform(pole_z0, pole_z1);
    } else {
      // Area density along the shade is proportional to its radius; invert
      // the quadratic CDF for s in [0,1].
      const double u = rng.uniform();
      const double r1 = shade_bottom_r, r2 = shade_top_r;
      const double s = std::fabs(r2 - r1) < 1e-12
                           ? u
                           : (std::sqrt(r1 * r1 + u * (r2 * r2 - r1 * r1)) - r1) / (r2 - r1);
      const double r = r1 + (r2 - r1) * s;
      cloud(i, 0) = r * std::cos(theta);
      cloud(i, 1) = r * std::sin(theta);
      cloud(i, 2) = shade_z0 + shade_h * s;
    }
  }
  return cloud;
}

void rotate_in_place(Mat& cloud, const double axis[3], double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  for (int i = 0; i < cloud.rows(); ++i) {
    const double p[3] = {cloud(i, 0), cloud(i, 1), cloud(i, 2)};
    const double dot = axis[0] * p[0] + axis[1] * p[1] + axis[2] * p[2];
    const double cross[3] = {axis[1] * p[2] - axis[2] * p[1], axis[2] * p[0] - axis[0] * p[2],
                             axis[0] * p[1] - axis[1] * p[0]};
    for (int k = 0; k < 3; ++k)
      cloud(i, k) = p[k] * c + cross[k] * s + axis[k] * dot * (1.0 - c);
  }
}

}  // namespace

const char* family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::kSphere: return "sphere";
    case ShapeFamily::kBox: return "box";
    case ShapeFamily::kCylinder: return "cylinder";
    case ShapeFamily::kBracket: return "bracket";
    case ShapeFamily::kLamp: return "lamp";
  }
  return "unknown";
}

ShapeFamily family_from_name(const std::string& name) {
  for (ShapeFamily f : {ShapeFamily::kSphere, ShapeFamily::kBox, ShapeFamily::kCylinder,
                        ShapeFamily::kBracket, ShapeFamily::kLamp})
    if (name == family_name(f)) return f;
  throw InputError("unknown shape family \"" + name + "\"");
}

ShapeSpec random_shape_spec(ShapeFamily family, Rng& rng) {
  ShapeSpec spec;
  spec.family = family;
  switch (family) {
    case ShapeFamily::kSphere:
      spec.size = {rng.uniform(0.3, 0.5), 0.0, 0.0};
      break;
    case ShapeFamily::kBox:
      spec.size = {rng.uniform(0.15, 0.5), rng.uniform(0.15, 0.5), rng.uniform(0.15, 0.5)};
      break;
    case ShapeFamily::kCylinder:
      spec.size = {rng.uniform(0.1, 0.4), rng.uniform(0.2, 0.5), 0.0};
      break;
    case ShapeFamily::kBracket:
      spec.size = {rng.uniform(0.15, 0.3), rng.uniform(0.1, 0.25), 0.0};
      break;
    case ShapeFamily::kLamp:
      spec.size = {rng.uniform(0.2, 0.35), rng.uniform(0.05, 0.15), rng.uniform(0.02, 0.05)};
      break;
  }
  spec.seed = rng.next_u64();
  return spec;
}

Mat gen_shape(const ShapeSpec& spec, int n) {
  if (n < 1) throw InputError("gen_shape: need at least one point");
  Rng rng(spec.seed);
  switch (spec.family) {
    case ShapeFamily::kSphere:
      check_range(spec.size[0], 0.3, 0.5, "radius");
      return sample_sphere(spec.size[0], n, rng);
    case ShapeFamily::kBox:
      for (double h : {spec.size[0], spec.size[1], spec.size[2]})
        check_range(h, 0.15, 0.5, "half extent");
      return sample_box(spec.size, n, rng);
    case ShapeFamily::kCylinder:
      check_range(spec.size[0], 0.1, 0.4, "radius");
      check_range(spec.size[1], 0.2, 0.5, "half height");
      return sample_cylinder(spec.size[0], spec.size[1], n, rng);
    case ShapeFamily::kBracket:
      check_range(spec.size[0], 0.15, 0.3, "thickness");
      check_range(spec.size[1], 0.1, 0.25, "half depth");
      return sample_bracket(spec.size[0], spec.size[1], n, rng);
    case ShapeFamily::kLamp:
      check_range(spec.size[0], 0.2, 0.35, "shade bottom radius");
      check_range(spec.size[1], 0.05, 0.15, "shade top radius");
      check_range(spec.size[2], 0.02, 0.05, "pole radius");
      return sample_lamp(spec.size[0], spec.size[1], spec.size[2], n, rng);
  }
  throw InputError("gen_shape: invalid family");
}

Mat crop_partial(const Mat& gt, const std::array<double, 3>& direction, double keep_fraction,
                 int out_count, Rng& rng) {
  const double norm = std::sqrt(direction[0] * direction[0] + direction[1] * direction[1] +
                                direction[2] * direction[2]);
  if (norm < 1e-12) throw InputError("crop_partial: degenerate direction");
  if (!(keep_fraction > 0.0 && keep_fraction < 1.0))
    throw InputError("crop_partial: keep_fraction must be in (0, 1)");
  if (out_count < 1) throw InputError("crop_partial: out_count must be positive");

  const int n = gt.rows();
  std::vector<std::pair<double, int>> order(n);
  for (int i = 0; i < n; ++i) {
    const double dot = gt(i, 0) * direction[0] + gt(i, 1) * direction[1] +
                       gt(i, 2) * direction[2];
    order[i] = {dot, i};
  }
  std::sort(order.begin(), order.end());
  const int keep = std::clamp(int(std::floor(keep_fraction * n + 0.5)), 1, n);

  Mat out(out_count, 3);
  for (int i = 0; i < out_count; ++i) {
    const int src = order[rng.uniform_int(0, keep - 1)].second;
    for (int c = 0; c < 3; ++c) out(i, c) = gt(src, c);
  }
  return out;
}

Mat simulate_prior(const Mat& gt, const PriorBias& bias, std::uint64_t seed, int out_count) {
  Rng rng(seed);
  Mat cloud = gt;

  double axis[3];
  unit_vector(rng, axis);
  rotate_in_place(cloud, axis, rng.uniform(0.0, bias.max_rotation));

  const double scale[3] = {rng.uniform(bias.scale_min, bias.scale_max),
                           rng.uniform(bias.scale_min, bias.scale_max),
                           rng.uniform(bias.scale_min, bias.scale_max)};
  const double shift[3] = {rng.uniform(-bias.max_translation, bias.max_translation),
                           rng.uniform(-bias.max_translation, bias.max_translation),
                           rng.uniform(-bias.max_translation, bias.max_translation)};
  for (int i = 0; i < cloud.rows(); ++i)
    for (int c = 0; c < 3; ++c) cloud(i, c) = cloud(i, c) * scale[c] + shift[c];

  for (int i = 0; i < cloud.rows(); ++i)
    for (int c = 0; c < 3; ++c) cloud(i, c) += rng.normal(0.0, bias.jitter_sigma);

  std::vector<double> points(cloud.data(), cloud.data() + cloud.size());
  if (rng.uniform() < bias.blob_probability) {
    const int anchor = rng.uniform_int(0, cloud.rows() - 1);
    for (int b = 0; b < bias.blob_points; ++b)
      for (int c = 0; c < 3; ++c)
        points.push_back(cloud(anchor, c) + rng.normal(0.0, bias.blob_radius));
  }

  int count = static_cast<int>(points.size() / 3);
  std::vector<int> alive(count);
  for (int i = 0; i < count; ++i) alive[i] = i;
  const int drop = std::min(count - 1, int(std::floor(bias.dropout_fraction * count)));
  for (int d = 0; d < drop; ++d) {
    const int pick = rng.uniform_int(0, count - 1 - d);
    std::swap(alive[pick], alive[count - 1 - d]);
  }
  const int survivors = count - drop;

  Mat out(out_count, 3);
  for (int i = 0; i < out_count; ++i) {
    const int src = alive[rng.uniform_int(0, survivors - 1)];
    for (int c = 0; c < 3; ++c) out(i, c) = points[std::size_t(src) * 3 + c];
  }
  return out;
}

void build_dataset(const std::string& dir, const DatasetConfig& cfg) {
  if (cfg.sample_count < 1) throw InputError("build_dataset: need at least one sample");
  if (cfg.families.empty()) throw InputError("build_dataset: no shape families selected");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "clouds", ec);
  if (ec) throw InputError("build_dataset: cannot create " + dir + ": " + ec.message());

  struct Entry {
    std::string id;
    std::string family;
    std::array<double, 3> direction;
    std::uint64_t hash;
  };
  std::vector<Entry> entries;

  nlohmann::ordered_json samples = nlohmann::ordered_json::array();
  for (int i = 0; i < cfg.sample_count; ++i) {
    const ShapeFamily family = cfg.families[i % cfg.families.size()];
    Rng rng(Rng(cfg.master_seed + 0x9E3779B97F4A7C15ull * std::uint64_t(i)).next_u64());

    ShapeSpec spec = random_shape_spec(family, rng);
    const Mat gt = gen_shape(spec, cfg.gt_count);

    std::array<double, 3> direction{};
    unit_vector(rng, direction.data());
    const Mat partial = crop_partial(gt, direction, cfg.keep_fraction, cfg.partial_count, rng);
    const Mat prior = simulate_prior(gt, cfg.bias, rng.next_u64(), cfg.prior_count);

    char id[64];
    std::snprintf(id, sizeof id, "%s_%03d", family_name(family), i);
    entries.push_back({id, family_name(family), direction, fnv1a64(id)});

    const std::string base = "clouds/" + std::string(id);
    save_csv(dir + "/" + base + ".partial.csv", partial);
    save_csv(dir + "/" + base + ".prior.csv", prior);
    save_csv(dir + "/" + base + ".gt.csv", gt);
  }

  // Validation split: the sample_count/10 lowest id hashes. Rank-based so the
  // 200-sample default lands on exactly 180/20.
  const int val_count = cfg.sample_count / 10;
  std::vector<int> rank(entries.size());
  for (std::size_t i = 0; i < rank.size(); ++i) rank[i] = static_cast<int>(i);
  std::sort(rank.begin(), rank.end(), [&](int a, int b) {
    return std::tie(entries[a].hash, entries[a].id) < std::tie(entries[b].hash, entries[b].id);
  });
  std::vector<bool> is_val(entries.size(), false);
  for (int i = 0; i < val_count; ++i) is_val[rank[i]] = true;

  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Entry& e = entries[i];
    const std::string base = "clouds/" + e.id;
    samples.push_back({{"id", e.id},
                       {"family", e.family},
                       {"files",
                        {{"partial", base + ".partial.csv"},
                         {"prior", base + ".prior.csv"},
                         {"gt", base + ".gt.csv"}}},
                       {"crop_direction", {e.direction[0], e.direction[1], e.direction[2]}},
                       {"split", is_val[i] ? "val" : "train"}});
  }

  nlohmann::ordered_json manifest{
      {"version", 1}, {"master_seed", cfg.master_seed}, {"samples", samples}};
  std::ofstream os(dir + "/manifest.json");
  if (!os) throw InputError("build_dataset: cannot write manifest in " + dir);
  os << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream is(dir + "/manifest.json");
  if (!is) throw InputError("dataset: cannot open " + dir + "/manifest.json");
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("dataset: malformed manifest in " + dir + ": " + e.what());
  }
  if (!manifest.contains("samples") || !manifest["samples"].is_array())
    throw InputError("dataset: manifest in " + dir + " lacks a samples array");

  Dataset ds;
  ds.dir = dir;
  ds.master_seed = manifest.value("master_seed", std::uint64_t{0});
  for (const auto& s : manifest["samples"]) {
    Sample sample;
    sample.id = s.at("id").get<std::string>();
    sample.family = s.at("family").get<std::string>();
    sample.split = s.at("split").get<std::string>();
    const auto& d = s.at("crop_direction");
    sample.crop_direction = {d.at(0).get<double>(), d.at(1).get<double>(), d.at(2).get<double>()};
    const auto& files = s.at("files");
    sample.partial = load_csv(dir + "/" + files.at("partial").get<std::string>());
    sample.prior = load_csv(dir + "/" + files.at("prior").get<std::string>());
    sample.gt = load_csv(dir + "/" + files.at("gt").get<std::string>());
    const int idx = static_cast<int>(ds.samples.size());
    (sample.split == "val" ? ds.val_indices : ds.train_indices).push_back(idx);
    ds.samples.push_back(std::move(sample));
  }
  if (ds.samples.empty()) throw InputError("dataset: " + dir + " contains no samples");
  return ds;
}

}  // namespace pgnet
