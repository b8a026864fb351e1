#ifndef SPECT_VOLUME_HPP
#define SPECT_VOLUME_HPP

#include <string>
#include <vector>

#include "spect/tensor.hpp"

namespace spect {

/// Single-channel voxel grid (T, H, W): T axial slices of H x W pixels.
class Volume {
 public:
  Volume() = default;
  Volume(Index t, Index h, Index w) : data_(Tensor<float>::zeros({t, h, w})) {}
  explicit Volume(Tensor<float> data) : data_(std::move(data)) {
    if (data_.rank() != 3) throw ShapeError("Volume requires rank-3 data, got " + shape_str(data_.shape()));
  }

  Index slices() const { return data_.dim(0); }
  Index height() const { return data_.dim(1); }
  Index width() const { return data_.dim(2); }

  float& at(Index t, Index h, Index w) { return data_(t, h, w); }
  float at(Index t, Index h, Index w) const { return data_(t, h, w); }

  Tensor<float>& tensor() { return data_; }
  const Tensor<float>& tensor() const { return data_; }

 private:
  Tensor<float> data_;
};

enum class Sex { male, female };

inline std::string to_string(Sex s) { return s == Sex::male ? "male" : "female"; }
inline Sex sex_from_string(const std::string& s) {
  if (s == "male") return Sex::male;
  if (s == "female") return Sex::female;
  throw ValidationError("unknown sex value: \"" + s + "\"");
}

struct PatientRecord {
  std::string id;
  std::string volume_path;  // relative to the manifest's directory
  double age_years = 0.0;
  Sex sex = Sex::male;
  int stage = 0;  // class label in [0, num_classes)
};

struct DatasetManifest {
  std::string dataset_id;
  std::vector<std::string> class_names;
  Index filter_min_pixels = 800;
  std::vector<PatientRecord> patients;

  int num_classes() const { return static_cast<int>(class_names.size()); }
};

/// A dataset loaded into memory: manifest metadata plus one volume per patient.
struct Dataset {
  DatasetManifest manifest;
  std::vector<Volume> volumes;  // parallel to manifest.patients
};

}  // namespace spect

#endif  // SPECT_VOLUME_HPP
