#ifndef SPECT_AUGMENT_HPP
#define SPECT_AUGMENT_HPP

#include <cmath>

#include "spect/volume.hpp"

namespace spect {

struct AugmentParams {
  double rotation_deg_max = 5.0;
  std::pair<Index, Index> crop_size = {72, 72};
  std::pair<Index, Index> resize_size = {72, 72};
  Index target_depth = 32;
  bool enabled = true;  // rotation off at evaluation time
};

namespace detail {

/// Bilinear read with zero outside the image.
inline float sample_bilinear(const Volume& v, Index t, double y, double x) {
  Index y0 = static_cast<Index>(std::floor(y));
  Index x0 = static_cast<Index>(std::floor(x));
  double fy = y - static_cast<double>(y0);
  double fx = x - static_cast<double>(x0);
  auto px = [&](Index yy, Index xx) -> double {
    if (yy < 0 || yy >= v.height() || xx < 0 || xx >= v.width()) return 0.0;
    return v.at(t, yy, xx);
  };
  double top = px(y0, x0) * (1.0 - fx) + px(y0, x0 + 1) * fx;
  double bot = px(y0 + 1, x0) * (1.0 - fx) + px(y0 + 1, x0 + 1) * fx;
  return static_cast<float>(top * (1.0 - fy) + bot * fy);
}

}  // namespace detail

/// Rotates every slice by one shared angle theta (degrees) about the image
/// center ((H-1)/2, (W-1)/2), bilinear with zero padding.
inline Volume rotate_volume(const Volume& v, double theta_deg) {
  if (theta_deg == 0.0) return v;
  double rad = theta_deg * M_PI / 180.0;
  double c = std::cos(rad), s = std::sin(rad);
  double cy = static_cast<double>(v.height() - 1) / 2.0;
  double cx = static_cast<double>(v.width() - 1) / 2.0;
  Volume out(v.slices(), v.height(), v.width());
  for (Index t = 0; t < v.slices(); ++t)
    for (Index y = 0; y < v.height(); ++y)
      for (Index x = 0; x < v.width(); ++x) {
        // Inverse mapping: rotate the output grid point back into the source.
        double dy = static_cast<double>(y) - cy;
        double dx = static_cast<double>(x) - cx;
        double sy = cy + c * dy + s * dx;
        double sx = cx - s * dy + c * dx;
        out.at(t, y, x) = detail::sample_bilinear(v, t, sy, sx);
      }
  return out;
}

inline Volume center_crop(const Volume& v, Index ch, Index cw) {
  if (v.height() < ch || v.width() < cw)
    throw ShapeError("crop " + std::to_string(ch) + "x" + std::to_string(cw) + " exceeds input " +
                     std::to_string(v.height()) + "x" + std::to_string(v.width()));
  Index oy = (v.height() - ch) / 2;
  Index ox = (v.width() - cw) / 2;
  Volume out(v.slices(), ch, cw);
  for (Index t = 0; t < v.slices(); ++t)
    for (Index y = 0; y < ch; ++y)
      for (Index x = 0; x < cw; ++x) out.at(t, y, x) = v.at(t, oy + y, ox + x);
  return out;
}

/// Bilinear resize with align-corners sampling (endpoints map to endpoints).
inline Volume resize_bilinear(const Volume& v, Index rh, Index rw) {
  if (v.height() == rh && v.width() == rw) return v;
  Volume out(v.slices(), rh, rw);
  double sy = rh > 1 ? static_cast<double>(v.height() - 1) / static_cast<double>(rh - 1) : 0.0;
  double sx = rw > 1 ? static_cast<double>(v.width() - 1) / static_cast<double>(rw - 1) : 0.0;
  for (Index t = 0; t < v.slices(); ++t)
    for (Index y = 0; y < rh; ++y)
      for (Index x = 0; x < rw; ++x)
        out.at(t, y, x) = detail::sample_bilinear(v, t, sy * static_cast<double>(y), sx * static_cast<double>(x));
  return out;
}

/// Shared-parameter per-patient transform: one rotation angle for all slices,
/// then center crop and resize. Values clamp to [0,1].
inline Volume video_transform(const Volume& v, const AugmentParams& p, Rng& rng) {
  double theta = p.enabled ? rng.uniform(-p.rotation_deg_max, p.rotation_deg_max) : 0.0;
  Volume out = rotate_volume(v, theta);
  out = center_crop(out, p.crop_size.first, p.crop_size.second);
  out = resize_bilinear(out, p.resize_size.first, p.resize_size.second);
  out.tensor().array() = out.tensor().array().cwiseMax(0.0f).cwiseMin(1.0f);
  return out;
}

/// Depth resampling to target_t slices, align-corners: output slice t'
/// samples s = t'*(T-1)/(target_t-1) and blends floor/ceil source slices.
/// A single-slice input replicates.
inline Volume trilinear_resample_depth(const Volume& v, Index target_t) {
  Index t_in = v.slices();
  if (t_in == target_t) return v;
  Volume out(target_t, v.height(), v.width());
  Index plane = v.height() * v.width();
  for (Index tp = 0; tp < target_t; ++tp) {
    double s = (t_in > 1 && target_t > 1)
                   ? static_cast<double>(tp) * static_cast<double>(t_in - 1) / static_cast<double>(target_t - 1)
                   : 0.0;
    Index s0 = static_cast<Index>(std::floor(s));
    Index s1 = std::min(s0 + 1, t_in - 1);
    float f = static_cast<float>(s - static_cast<double>(s0));
    const float* a = v.tensor().data() + s0 * plane;
    const float* b = v.tensor().data() + s1 * plane;
    float* o = out.tensor().data() + tp * plane;
    for (Index k = 0; k < plane; ++k) o[k] = a[k] * (1.0f - f) + b[k] * f;
  }
  return out;
}

/// (T, H, W) -> (T, 3, H, W) with identical channel copies.
inline Tensor<float> replicate_channels(const Volume& v) {
  Index t = v.slices(), h = v.height(), w = v.width();
  Tensor<float> out({t, 3, h, w});
  Index plane = h * w;
  for (Index it = 0; it < t; ++it)
    for (Index c = 0; c < 3; ++c)
      std::copy(v.tensor().data() + it * plane, v.tensor().data() + (it + 1) * plane,
                out.data() + (it * 3 + c) * plane);
  return out;
}

}  // namespace spect

#endif  // SPECT_AUGMENT_HPP
