#ifndef SPECT_IO_HPP
#define SPECT_IO_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "spect/tensor.hpp"
#include "spect/volume.hpp"

namespace spect {

// Volume container: magic "VOL1", then T,H,W as u32 little-endian, then
// T*H*W float32 little-endian voxels in row-major (slice, row, column) order.
void write_vol1(const std::filesystem::path& path, const Volume& v);
Volume read_vol1(const std::filesystem::path& path);

// Dataset manifest (JSON). Volume paths inside are kept relative to the
// manifest file; load_dataset resolves them against the manifest directory.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& manifest_path);

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

struct CheckpointLoadReport {
  std::vector<std::string> missing;    // requested names absent from the file
  std::vector<std::string> unmatched;  // file entries no destination asked for
  bool complete() const { return missing.empty(); }
};

// Checkpoint container: magic "CKPT", u32 record count, then per record a
// u32 name length, the name bytes, u32 rank, rank u32 dims, and the float32
// payload. All integers little-endian.
void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

/// Copies file entries into matching destinations by name. Shape conflicts
/// throw; missing or extra names are only reported.
CheckpointLoadReport assign_checkpoint(const std::vector<NamedTensor>& file_entries,
                                       std::vector<NamedTensor*>& destinations);

}  // namespace spect

#endif  // SPECT_IO_HPP
