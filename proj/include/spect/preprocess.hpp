#ifndef SPECT_PREPROCESS_HPP
#define SPECT_PREPROCESS_HPP

#include "spect/volume.hpp"

namespace spect {

struct Covariates {
  double age_norm = 0.0;  // age_years / 100
  double sex_dummy = 0.0;  // 1 male, 0 female
};

/// Per-patient min-max scaling to [0,1]. A constant volume maps to all zeros
/// (the 0/0 case reads as "no signal"; the slice filter then drops it).
inline Volume minmax_normalize(const Volume& v) {
  float lo = v.tensor().array().minCoeff();
  float hi = v.tensor().array().maxCoeff();
  Volume out(v.slices(), v.height(), v.width());
  if (hi > lo) out.tensor().array() = (v.tensor().array() - lo) / (hi - lo);
  return out;
}

/// Keeps exactly the slices with count{pixel > intensity_threshold} >= min_pixels,
/// preserving order. Comparison is strict ">" on intensity; a slice with
/// exactly min_pixels qualifying pixels is kept.
inline Volume filter_incomplete_slices(const Volume& v, double intensity_threshold, Index min_pixels) {
  // Comparison happens at storage precision so a voxel equal to the
  // threshold never counts, regardless of double rounding.
  float thr = static_cast<float>(intensity_threshold);
  std::vector<Index> keep;
  for (Index t = 0; t < v.slices(); ++t) {
    Index count = 0;
    for (Index y = 0; y < v.height(); ++y)
      for (Index x = 0; x < v.width(); ++x)
        if (v.at(t, y, x) > thr) ++count;
    if (count >= min_pixels) keep.push_back(t);
  }
  if (keep.empty()) throw EmptyVolumeError("no slice has " + std::to_string(min_pixels) +
                                           " pixels above " + std::to_string(intensity_threshold));
  Volume out(static_cast<Index>(keep.size()), v.height(), v.width());
  Index plane = v.height() * v.width();
  for (std::size_t i = 0; i < keep.size(); ++i)
    std::copy(v.tensor().data() + keep[i] * plane, v.tensor().data() + (keep[i] + 1) * plane,
              out.tensor().data() + static_cast<Index>(i) * plane);
  return out;
}

inline Covariates encode_covariates(double age_years, Sex sex) {
  if (age_years < 0.0 || age_years > 100.0)
    throw ValidationError("age_years outside [0,100]: " + std::to_string(age_years));
  return {age_years / 100.0, sex == Sex::male ? 1.0 : 0.0};
}

}  // namespace spect

#endif  // SPECT_PREPROCESS_HPP
