#ifndef SPECT_CHECKPOINT_HPP
#define SPECT_CHECKPOINT_HPP

#include "spect/io.hpp"
#include "spect/nn/layers.hpp"

namespace spect {

/// Copies parameter values (cast to float32) into checkpoint entries.
template <typename S>
std::vector<NamedTensor> snapshot_params(const std::vector<nn::Parameter<S>*>& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (const auto* p : params) {
    Tensor<float> v(p->value.shape());
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<float>(p->value[i]);
    out.push_back({p->name, std::move(v)});
  }
  return out;
}

/// Copies checkpoint entries into matching parameters by name. Shape
/// conflicts throw; untouched parameters and unconsumed entries are reported.
template <typename S>
CheckpointLoadReport load_params(const std::vector<NamedTensor>& entries,
                                 const std::vector<nn::Parameter<S>*>& params) {
  CheckpointLoadReport report;
  std::vector<bool> used(entries.size(), false);
  for (auto* p : params) {
    bool found = false;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].name != p->name) continue;
      if (entries[i].value.shape() != p->value.shape())
        throw ShapeError("checkpoint entry " + p->name + " has shape " + shape_str(entries[i].value.shape()) +
                         ", expected " + shape_str(p->value.shape()));
      for (Index k = 0; k < p->value.size(); ++k) p->value[k] = static_cast<S>(entries[i].value[k]);
      used[i] = true;
      found = true;
      break;
    }
    if (!found) report.missing.push_back(p->name);
  }
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (!used[i]) report.unmatched.push_back(entries[i].name);
  return report;
}

}  // namespace spect

#endif  // SPECT_CHECKPOINT_HPP
