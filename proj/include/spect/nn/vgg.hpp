#ifndef SPECT_NN_VGG_HPP
#define SPECT_NN_VGG_HPP

#include "spect/nn/layers.hpp"

namespace spect::nn {

/// Channel width after applying the width multiplier (round up, at least 1).
inline Index scaled_width(Index base, double wm) {
  return std::max<Index>(1, static_cast<Index>(std::ceil(static_cast<double>(base) * wm)));
}

/// One VGG-16 block: n 3x3 same-pad conv+ReLU layers, then an optional 2x2
/// max pool. The conv stack is 13 layers in blocks of (2,2,3,3,3) at widths
/// 64,128,256,512,512; the pool after the last block is dropped so a 72x72
/// input leaves as 4x4.
template <typename S>
class VggBlock : public Module<S> {
 public:
  VggBlock(const std::string& name, Index ci, Index co, int n_convs, bool pool, Rng& rng) : pool_(pool) {
    for (int i = 0; i < n_convs; ++i) {
      convs_.emplace_back(name + ".conv" + std::to_string(i + 1), i == 0 ? ci : co, co, 3, 1, 1, true, rng);
    }
  }

  Tensor<S> forward(Tensor<S> x, bool, int workers) override {
    for (auto& c : convs_) x = c.forward(std::move(x), workers);
    if (pool_) x = pool_layer_.forward(std::move(x));
    return x;
  }

  Tensor<S> backward(const Tensor<S>& gy, int workers) override {
    Tensor<S> g = pool_ ? pool_layer_.backward(gy) : gy;
    for (auto it = convs_.rbegin(); it != convs_.rend(); ++it) g = it->backward(std::move(g), workers);
    return g;
  }

  void collect(std::vector<Parameter<S>*>& out) override {
    for (auto& c : convs_) c.collect(out);
  }

 private:
  std::vector<Conv2dLayer<S>> convs_;
  bool pool_;
  MaxPoolLayer<S> pool_layer_{1, 2, 2};
};

/// The same stack with every 2D conv replaced by an ACS conv over
/// (B, C, T, H, W); pools act spatially only, so the slice axis survives to
/// the feature map.
template <typename S>
class AcsVggBlock : public Module<S> {
 public:
  AcsVggBlock(const std::string& name, Index ci, Index co, int n_convs, bool pool, Rng& rng) : pool_(pool) {
    for (int i = 0; i < n_convs; ++i) {
      convs_.emplace_back(name + ".conv" + std::to_string(i + 1), i == 0 ? ci : co, co, 3, true, rng);
    }
  }

  Tensor<S> forward(Tensor<S> x, bool, int workers) override {
    for (auto& c : convs_) x = c.forward(std::move(x), workers);
    if (pool_) x = pool_layer_.forward(std::move(x));
    return x;
  }

  Tensor<S> backward(const Tensor<S>& gy, int workers) override {
    Tensor<S> g = pool_ ? pool_layer_.backward(gy) : gy;
    for (auto it = convs_.rbegin(); it != convs_.rend(); ++it) g = it->backward(std::move(g), workers);
    return g;
  }

  void collect(std::vector<Parameter<S>*>& out) override {
    for (auto& c : convs_) c.collect(out);
  }

 private:
  std::vector<AcsConvLayer<S>> convs_;
  bool pool_;
  MaxPoolLayer<S> pool_layer_{1, 2, 2};
};

struct VggBlockSpec {
  Index width;
  int n_convs;
  bool pool;
};

inline std::vector<VggBlockSpec> vgg16_blocks(double wm) {
  return {{scaled_width(64, wm), 2, true},
          {scaled_width(128, wm), 2, true},
          {scaled_width(256, wm), 3, true},
          {scaled_width(512, wm), 3, true},
          {scaled_width(512, wm), 3, false}};
}

}  // namespace spect::nn

#endif  // SPECT_NN_VGG_HPP
