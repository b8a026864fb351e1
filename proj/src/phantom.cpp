#include "spect/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "spect/io.hpp"

namespace spect {

namespace {

struct BlobGeometry {
  double peak;                // blob center intensity
  double cz, cy, cxl, cxr;    // center coordinates, left/right blob
  double az, ay, ax;          // semi-axes
};

BlobGeometry blob_geometry(int class_idx, int num_classes, Index t, Index h, Index w) {
  double frac = static_cast<double>(class_idx) / static_cast<double>(num_classes - 1);
  // Semi-axes share one scale factor so blob volume (product of axes) falls
  // linearly with class index.
  double s = std::cbrt(1.0 - 0.5 * frac);
  BlobGeometry g;
  g.peak = 1.0 - 0.8 * frac;
  g.cz = static_cast<double>(t) / 2.0;
  g.cy = static_cast<double>(h) / 2.0;
  g.cxl = static_cast<double>(w) / 2.0 - static_cast<double>(w) / 8.0;
  g.cxr = static_cast<double>(w) / 2.0 + static_cast<double>(w) / 8.0;
  g.az = s * static_cast<double>(t) / 4.0;
  g.ay = s * static_cast<double>(h) / 6.0;
  g.ax = s * static_cast<double>(w) / 10.0;
  return g;
}

void validate(const PhantomSpec& spec) {
  if (spec.num_classes < 2) throw ValidationError("phantom needs at least 2 classes");
  if (static_cast<int>(spec.counts_per_class.size()) != spec.num_classes)
    throw ValidationError("counts_per_class length must equal num_classes");
  for (Index c : spec.counts_per_class)
    if (c <= 0) throw ValidationError("counts_per_class entries must be positive");
  if (spec.slice_count_range.first > spec.slice_count_range.second)
    throw ValidationError("slice_count_range min exceeds max");
  if (spec.slice_count_range.first < 5)
    throw ValidationError("slice_count_range min must be at least 5 (four edge slices are blanked)");
  if (spec.image_size.first < 8 || spec.image_size.second < 8)
    throw ValidationError("image_size must be at least 8x8");
  if (spec.noise_level < 0.0) throw ValidationError("noise_level must be non-negative");
}

}  // namespace

Tensor<float> phantom_blob_mask(int class_idx, int num_classes, Index t, Index h, Index w) {
  BlobGeometry g = blob_geometry(class_idx, num_classes, t, h, w);
  Tensor<float> mask = Tensor<float>::zeros({t, h, w});
  for (Index z = 2; z < t - 2; ++z)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        double dz = (static_cast<double>(z) - g.cz) / g.az;
        double dy = (static_cast<double>(y) - g.cy) / g.ay;
        double dxl = (static_cast<double>(x) - g.cxl) / g.ax;
        double dxr = (static_cast<double>(x) - g.cxr) / g.ax;
        double base = dz * dz + dy * dy;
        if (base + dxl * dxl < 1.0 || base + dxr * dxr < 1.0) mask(z, y, x) = 1.0f;
      }
  return mask;
}

Volume generate_phantom_volume(const PhantomSpec& spec, int class_idx, Rng& rng) {
  Index t = spec.slice_count_range.first +
            static_cast<Index>(rng.uniform_int(
                static_cast<std::uint64_t>(spec.slice_count_range.second - spec.slice_count_range.first + 1)));
  Index h = spec.image_size.first;
  Index w = spec.image_size.second;
  BlobGeometry g = blob_geometry(class_idx, spec.num_classes, t, h, w);
  // Edge slices must stay below 0.05 regardless of noise_level.
  double edge_noise = std::min(spec.noise_level, 0.04);
  Volume v(t, h, w);
  for (Index z = 0; z < t; ++z) {
    bool edge = (z < 2 || z >= t - 2);
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        double noise = rng.uniform() * (edge ? edge_noise : spec.noise_level);
        double value = noise;
        if (!edge) {
          double dz = (static_cast<double>(z) - g.cz) / g.az;
          double dy = (static_cast<double>(y) - g.cy) / g.ay;
          double dxl = (static_cast<double>(x) - g.cxl) / g.ax;
          double dxr = (static_cast<double>(x) - g.cxr) / g.ax;
          double base = dz * dz + dy * dy;
          double rho2 = std::min(base + dxl * dxl, base + dxr * dxr);
          if (rho2 < 1.0) value = std::max(value, g.peak * (1.0 - rho2));
        }
        v.at(z, y, x) = static_cast<float>(value);
      }
  }
  return v;
}

DatasetManifest generate_phantom_dataset(const PhantomSpec& spec, const std::filesystem::path& out_dir) {
  validate(spec);
  std::filesystem::create_directories(out_dir);
  DatasetManifest m;
  m.dataset_id = "phantom_seed" + std::to_string(spec.seed);
  for (int c = 0; c < spec.num_classes; ++c) m.class_names.push_back("stage_" + std::to_string(c));
  m.filter_min_pixels = std::max<Index>(1, spec.image_size.first * spec.image_size.second / 12);

  Index patient_idx = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (Index k = 0; k < spec.counts_per_class[static_cast<std::size_t>(c)]; ++k, ++patient_idx) {
      Rng rng = Rng::derive(spec.seed, "phantom", static_cast<std::uint64_t>(patient_idx));
      Volume v = generate_phantom_volume(spec, c, rng);
      PatientRecord p;
      char buf[24];
      std::snprintf(buf, sizeof(buf), "p%04lld", static_cast<long long>(patient_idx));
      p.id = buf;
      p.volume_path = p.id + ".vol";
      // Ages shift upward with disease stage so covariates carry class signal.
      double age = rng.uniform(50.0 + 5.0 * c, 60.0 + 5.0 * c);
      p.age_years = std::clamp(age, 0.0, 100.0);
      p.sex = rng.uniform() < 0.5 ? Sex::male : Sex::female;
      p.stage = c;
      write_vol1(out_dir / p.volume_path, v);
      m.patients.push_back(std::move(p));
    }
  }
  write_manifest(out_dir / "manifest.json", m);
  return m;
}

}  // namespace spect
