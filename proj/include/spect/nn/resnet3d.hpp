#ifndef SPECT_NN_RESNET3D_HPP
#define SPECT_NN_RESNET3D_HPP

#include "spect/nn/vgg.hpp"

namespace spect::nn {

enum class ResnetFamily { r3d, mc3, r2plus1d };

/// Conv flavor used inside residual blocks, per family and stage:
///  full:     3x3x3 (R3D everywhere; MC3 stage 1)
///  spatial:  1x3x3 (MC3 stages 2-4)
///  factored: (1x3x3 -> BN -> ReLU -> 3x1x1) with a parameter-matched
///            intermediate width (R(2+1)D everywhere)
enum class BlockConv { full, spatial, factored };

/// Intermediate width that keeps the factored conv's parameter count at or
/// under the full 3D conv it replaces, following the (2+1)D construction:
/// M = floor(t*d^2*Nin*Nout / (d^2*Nin + t*Nout)).
inline Index r2plus1d_mid(Index nin, Index nout, Index t, Index d) {
  Index num = t * d * d * nin * nout;
  Index den = d * d * nin + t * nout;
  return std::max<Index>(1, num / den);
}

/// One conv unit inside a residual block: shape (co, t_stride, s_stride)
/// with the family flavor. Emits conv(+BN) without the trailing ReLU; the
/// block decides activations.
template <typename S>
class ResConvUnit {
 public:
  ResConvUnit(const std::string& name, BlockConv kind, Index ci, Index co, Index st, Index ss, Rng& rng) : kind_(kind) {
    if (kind == BlockConv::full) {
      Conv3dGeom g{ci, co, 3, 3, 3, st, ss, ss, 1, 1, 1};
      conv1_ = std::make_unique<Conv3dLayer<S>>(name, g, false, rng);
    } else if (kind == BlockConv::spatial) {
      Conv3dGeom g{ci, co, 1, 3, 3, st, ss, ss, 0, 1, 1};
      conv1_ = std::make_unique<Conv3dLayer<S>>(name, g, false, rng);
    } else {
      Index mid = r2plus1d_mid(ci, co, 3, 3);
      Conv3dGeom gs{ci, mid, 1, 3, 3, 1, ss, ss, 0, 1, 1};
      Conv3dGeom gt{mid, co, 3, 1, 1, st, 1, 1, 1, 0, 0};
      conv1_ = std::make_unique<Conv3dLayer<S>>(name + ".s", gs, false, rng);
      bn_mid_ = std::make_unique<BatchNorm<S>>(name + ".bnm", mid);
      conv2_ = std::make_unique<Conv3dLayer<S>>(name + ".t", gt, false, rng);
    }
  }

  Tensor<S> forward(Tensor<S> x, bool train, int workers) {
    x = conv1_->forward(std::move(x), workers);
    if (kind_ == BlockConv::factored) {
      x = bn_mid_->forward(std::move(x), train);
      mid_relu_.apply(x);
      x = conv2_->forward(std::move(x), workers);
    }
    return x;
  }

  Tensor<S> backward(Tensor<S> gy, int workers) {
    if (kind_ == BlockConv::factored) {
      gy = conv2_->backward(std::move(gy), workers);
      mid_relu_.backward(gy);
      gy = bn_mid_->backward(gy);
    }
    return conv1_->backward(std::move(gy), workers);
  }

  void collect(std::vector<Parameter<S>*>& out) {
    conv1_->collect(out);
    if (bn_mid_) bn_mid_->collect(out);
    if (conv2_) conv2_->collect(out);
  }

 private:
  BlockConv kind_;
  std::unique_ptr<Conv3dLayer<S>> conv1_, conv2_;
  std::unique_ptr<BatchNorm<S>> bn_mid_;
  ReluMask<S> mid_relu_;
};

/// Basic residual block: unit -> BN -> ReLU -> unit -> BN, plus identity or
/// 1x1x1-conv+BN shortcut, final ReLU after the sum.
template <typename S>
class ResBlock {
 public:
  ResBlock(const std::string& name, BlockConv kind, Index ci, Index co, Index st, Index ss, Rng& rng)
      : unit1_(name + ".conv1", kind, ci, co, st, ss, rng), bn1_(name + ".bn1", co),
        unit2_(name + ".conv2", kind, co, co, 1, 1, rng), bn2_(name + ".bn2", co) {
    if (ci != co || st != 1 || ss != 1) {
      Conv3dGeom g{ci, co, 1, 1, 1, st, ss, ss, 0, 0, 0};
      down_conv_ = std::make_unique<Conv3dLayer<S>>(name + ".down.conv", g, false, rng);
      down_bn_ = std::make_unique<BatchNorm<S>>(name + ".down.bn", co);
    }
  }

  Tensor<S> forward(Tensor<S> x, bool train, int workers) {
    Tensor<S> shortcut;
    if (down_conv_) {
      shortcut = down_bn_->forward(down_conv_->forward(x, workers), train);
    } else {
      shortcut = x;
    }
    Tensor<S> y = unit1_.forward(std::move(x), train, workers);
    y = bn1_.forward(std::move(y), train);
    relu1_.apply(y);
    y = unit2_.forward(std::move(y), train, workers);
    y = bn2_.forward(std::move(y), train);
    y.array() += shortcut.array();
    out_relu_.apply(y);
    return y;
  }

  Tensor<S> backward(Tensor<S> gy, int workers) {
    out_relu_.backward(gy);
    Tensor<S> g_short = gy;  // gradient flows to both branches
    Tensor<S> g = bn2_.backward(gy);
    g = unit2_.backward(std::move(g), workers);
    relu1_.backward(g);
    g = bn1_.backward(g);
    g = unit1_.backward(std::move(g), workers);
    if (down_conv_) {
      Tensor<S> gs = down_bn_->backward(g_short);
      gs = down_conv_->backward(std::move(gs), workers);
      g.array() += gs.array();
    } else {
      g.array() += g_short.array();
    }
    return g;
  }

  void collect(std::vector<Parameter<S>*>& out) {
    unit1_.collect(out);
    bn1_.collect(out);
    unit2_.collect(out);
    bn2_.collect(out);
    if (down_conv_) {
      down_conv_->collect(out);
      down_bn_->collect(out);
    }
  }

 private:
  ResConvUnit<S> unit1_;
  BatchNorm<S> bn1_;
  ResConvUnit<S> unit2_;
  BatchNorm<S> bn2_;
  std::unique_ptr<Conv3dLayer<S>> down_conv_;
  std::unique_ptr<BatchNorm<S>> down_bn_;
  ReluMask<S> relu1_, out_relu_;
};

/// Stem: (3,7,7) stride (1,2,2) conv + BN + ReLU for R3D/MC3; R(2+1)D
/// factorizes into (1,7,7) then (3,1,1), each with BN+ReLU, using the same
/// parameter-matching width rule with the stem's own kernel extents.
template <typename S>
class ResnetStem : public Module<S> {
 public:
  ResnetStem(ResnetFamily family, Index co, Rng& rng) {
    if (family == ResnetFamily::r2plus1d) {
      Index mid = r2plus1d_mid(3, co, 3, 7);
      Conv3dGeom gs{3, mid, 1, 7, 7, 1, 2, 2, 0, 3, 3};
      Conv3dGeom gt{mid, co, 3, 1, 1, 1, 1, 1, 1, 0, 0};
      conv1_ = std::make_unique<Conv3dLayer<S>>("res.stem.convs", gs, false, rng);
      bn1_ = std::make_unique<BatchNorm<S>>("res.stem.bns", mid);
      conv2_ = std::make_unique<Conv3dLayer<S>>("res.stem.convt", gt, false, rng);
      bn2_ = std::make_unique<BatchNorm<S>>("res.stem.bnt", co);
    } else {
      Conv3dGeom g{3, co, 3, 7, 7, 1, 2, 2, 1, 3, 3};
      conv1_ = std::make_unique<Conv3dLayer<S>>("res.stem.conv", g, false, rng);
      bn1_ = std::make_unique<BatchNorm<S>>("res.stem.bn", co);
    }
  }

  Tensor<S> forward(Tensor<S> x, bool train, int workers) override {
    x = bn1_->forward(conv1_->forward(std::move(x), workers), train);
    relu1_.apply(x);
    if (conv2_) {
      x = bn2_->forward(conv2_->forward(std::move(x), workers), train);
      relu2_.apply(x);
    }
    return x;
  }

  Tensor<S> backward(const Tensor<S>& gy, int workers) override {
    Tensor<S> g = gy;
    if (conv2_) {
      relu2_.backward(g);
      g = bn2_->backward(g);
      g = conv2_->backward(std::move(g), workers);
    }
    relu1_.backward(g);
    g = bn1_->backward(g);
    return conv1_->backward(std::move(g), workers);
  }

  void collect(std::vector<Parameter<S>*>& out) override {
    conv1_->collect(out);
    bn1_->collect(out);
    if (conv2_) {
      conv2_->collect(out);
      bn2_->collect(out);
    }
  }

 private:
  std::unique_ptr<Conv3dLayer<S>> conv1_, conv2_;
  std::unique_ptr<BatchNorm<S>> bn1_, bn2_;
  ReluMask<S> relu1_, relu2_;
};

/// One residual stage (two basic blocks). Stages 2-4 downsample: R3D and
/// R(2+1)D in time and space, MC3 in space only (with spatial-only convs).
template <typename S>
class ResnetStage : public Module<S> {
 public:
  ResnetStage(const std::string& name, ResnetFamily family, int stage_idx, Index ci, Index co, Rng& rng) {
    BlockConv kind = family == ResnetFamily::r2plus1d ? BlockConv::factored
                     : (family == ResnetFamily::mc3 && stage_idx >= 2) ? BlockConv::spatial
                                                                       : BlockConv::full;
    bool down = stage_idx >= 2;
    Index st = down && kind != BlockConv::spatial ? 2 : 1;
    Index ss = down ? 2 : 1;
    blocks_.push_back(std::make_unique<ResBlock<S>>(name + ".b1", kind, ci, co, st, ss, rng));
    blocks_.push_back(std::make_unique<ResBlock<S>>(name + ".b2", kind, co, co, 1, 1, rng));
  }

  Tensor<S> forward(Tensor<S> x, bool train, int workers) override {
    for (auto& blk : blocks_) x = blk->forward(std::move(x), train, workers);
    return x;
  }

  Tensor<S> backward(const Tensor<S>& gy, int workers) override {
    Tensor<S> g = blocks_[1]->backward(gy, workers);
    return blocks_[0]->backward(std::move(g), workers);
  }

  void collect(std::vector<Parameter<S>*>& out) override {
    for (auto& blk : blocks_) blk->collect(out);
  }

 private:
  std::vector<std::unique_ptr<ResBlock<S>>> blocks_;
};

}  // namespace spect::nn

#endif  // SPECT_NN_RESNET3D_HPP
