#ifndef SPECT_PHANTOM_HPP
#define SPECT_PHANTOM_HPP

#include <filesystem>

#include "spect/volume.hpp"

namespace spect {

// Synthetic dataset generator. Every volume contains uniform background
// noise plus two ellipsoidal blobs left/right of the mid-coronal axis whose
// peak intensity and volume both fall linearly with class index, so classes
// are separable by blob signal. The first and last two slices stay below
// 0.05 everywhere to exercise the incomplete-slice filter.
struct PhantomSpec {
  int num_classes = 4;
  std::vector<Index> counts_per_class = {10, 10, 10, 10};
  std::pair<Index, Index> slice_count_range = {28, 36};
  std::pair<Index, Index> image_size = {96, 96};  // (H, W)
  double noise_level = 0.15;
  std::uint64_t seed = 0;
};

/// Writes one VOL1 file per patient plus manifest.json into out_dir.
/// Deterministic in spec.seed: re-running yields byte-identical files.
DatasetManifest generate_phantom_dataset(const PhantomSpec& spec, const std::filesystem::path& out_dir);

/// Generates a single phantom volume (rng should be patient-scoped).
Volume generate_phantom_volume(const PhantomSpec& spec, int class_idx, Rng& rng);

/// 0/1 mask of the two blob interiors for the given class geometry. Lets
/// tests compute blob-region mean intensities independently.
Tensor<float> phantom_blob_mask(int class_idx, int num_classes, Index t, Index h, Index w);

}  // namespace spect

#endif  // SPECT_PHANTOM_HPP
