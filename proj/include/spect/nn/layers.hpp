#ifndef SPECT_NN_LAYERS_HPP
#define SPECT_NN_LAYERS_HPP

#include <memory>
#include <string>
#include <vector>

#include "spect/nn/ops.hpp"

namespace spect::nn {

template <typename S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;
  bool trainable = true;  // running statistics are checkpointed but never updated by the optimizer
  bool frozen = false;    // excluded from updates when set via freeze_prefix

  Parameter(std::string n, Tensor<S> v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(Tensor<S>::zeros(value.shape())), trainable(train) {}
};

/// A backbone chunk: maps one tensor to one tensor and owns parameters.
/// forward(train=..) and the matching backward must be called in pairs.
template <typename S>
struct Module {
  virtual ~Module() = default;
  virtual Tensor<S> forward(Tensor<S> x, bool train, int workers) = 0;
  virtual Tensor<S> backward(const Tensor<S>& gy, int workers) = 0;
  virtual void collect(std::vector<Parameter<S>*>& out) = 0;
};

namespace init {

/// He-normal fill for weights feeding ReLU units.
template <typename S>
void he_normal(Tensor<S>& w, Index fan_in, Rng& rng) {
  double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<S>(rng.normal() * std);
}

template <typename S>
void xavier_normal(Tensor<S>& w, Index fan_in, Rng& rng) {
  double std = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<S>(rng.normal() * std);
}

}  // namespace init

/// ReLU bookkeeping shared by layers that fuse an activation: keeps a 1-byte
/// mask instead of a full activation copy.
template <typename S>
struct ReluMask {
  Tensor<std::uint8_t> mask;

  void apply(Tensor<S>& y) {
    mask = Tensor<std::uint8_t>(y.shape());
    for (Index i = 0; i < y.size(); ++i) {
      bool pos = y[i] > S(0);
      mask[i] = pos ? 1 : 0;
      if (!pos) y[i] = S(0);
    }
  }
  void backward(Tensor<S>& gy) const {
    for (Index i = 0; i < gy.size(); ++i)
      if (!mask[i]) gy[i] = S(0);
  }
};

/// 2D convolution (+ optional fused ReLU) on (B, C, H, W); runs on the 3D
/// engine with a unit time axis, which shares the identical memory layout.
template <typename S>
class Conv2dLayer {
 public:
  Conv2dLayer(const std::string& name, Index ci, Index co, Index k, Index stride, Index pad, bool relu, Rng& rng)
      : w_(name + ".weight", Tensor<S>({co, ci, k, k})), b_(name + ".bias", Tensor<S>::zeros({co})), relu_(relu) {
    g_.ci = ci;
    g_.co = co;
    g_.kt = 1;
    g_.kh = g_.kw = k;
    g_.sh = g_.sw = stride;
    g_.ph = g_.pw = pad;
    init::he_normal(w_.value, g_.rows(), rng);
  }

  Tensor<S> forward(Tensor<S> x, int workers) {
    if (x.rank() != 4 || x.dim(1) != g_.ci) throw ShapeError("conv2d input " + shape_str(x.shape()));
    x_ = std::move(x);
    Index b = x_.dim(0), h = x_.dim(2), w = x_.dim(3);
    Index oh = Conv3dGeom::out_dim(h, g_.kh, g_.sh, g_.ph);
    Index ow = Conv3dGeom::out_dim(w, g_.kw, g_.sw, g_.pw);
    Tensor<S> y({b, g_.co, oh, ow});
    conv3d_forward(x_.data(), b, 1, h, w, g_, w_.value.data(), b_.value.data(), y.data(), workers);
    if (relu_) relu_mask_.apply(y);
    return y;
  }

  Tensor<S> backward(Tensor<S> gy, int workers) {
    if (relu_) relu_mask_.backward(gy);
    Tensor<S> gx(x_.shape());
    conv3d_backward(x_.data(), x_.dim(0), 1, x_.dim(2), x_.dim(3), g_, w_.value.data(), gy.data(), gx.data(),
                    w_.grad.data(), b_.grad.data(), workers);
    return gx;
  }

  void collect(std::vector<Parameter<S>*>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
  }

  Parameter<S>& weight() { return w_; }
  Parameter<S>& bias() { return b_; }

 private:
  Conv3dGeom g_;
  Parameter<S> w_, b_;
  bool relu_;
  ReluMask<S> relu_mask_;
  Tensor<S> x_;
};

/// 3D convolution (+ optional fused ReLU) on (B, C, T, H, W).
template <typename S>
class Conv3dLayer {
 public:
  Conv3dLayer(const std::string& name, Conv3dGeom g, bool relu, Rng& rng)
      : g_(g), w_(name + ".weight", Tensor<S>({g.co, g.ci, g.kt, g.kh, g.kw})),
        b_(name + ".bias", Tensor<S>::zeros({g.co})), relu_(relu) {
    init::he_normal(w_.value, g_.rows(), rng);
  }

  Tensor<S> forward(Tensor<S> x, int workers) {
    if (x.rank() != 5 || x.dim(1) != g_.ci) throw ShapeError("conv3d input " + shape_str(x.shape()));
    x_ = std::move(x);
    Index b = x_.dim(0), t = x_.dim(2), h = x_.dim(3), w = x_.dim(4);
    Index ot = Conv3dGeom::out_dim(t, g_.kt, g_.st, g_.pt);
    Index oh = Conv3dGeom::out_dim(h, g_.kh, g_.sh, g_.ph);
    Index ow = Conv3dGeom::out_dim(w, g_.kw, g_.sw, g_.pw);
    Tensor<S> y({b, g_.co, ot, oh, ow});
    conv3d_forward(x_.data(), b, t, h, w, g_, w_.value.data(), b_.value.data(), y.data(), workers);
    if (relu_) relu_mask_.apply(y);
    return y;
  }

  Tensor<S> backward(Tensor<S> gy, int workers) {
    if (relu_) relu_mask_.backward(gy);
    Tensor<S> gx(x_.shape());
    conv3d_backward(x_.data(), x_.dim(0), x_.dim(2), x_.dim(3), x_.dim(4), g_, w_.value.data(), gy.data(), gx.data(),
                    w_.grad.data(), b_.grad.data(), workers);
    return gx;
  }

  void collect(std::vector<Parameter<S>*>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
  }

 private:
  Conv3dGeom g_;
  Parameter<S> w_, b_;
  bool relu_;
  ReluMask<S> relu_mask_;
  Tensor<S> x_;
};

/// Axial/coronal/sagittal convolution. One 2D kernel bank (C_o, C_i, K, K)
/// is split along output channels; each part is a 3D convolution whose kernel
/// has extent 1 along the axis its anatomical view collapses (axial: T,
/// coronal: H, sagittal: W). The flat row layout of a 2D kernel coincides
/// with each unsqueezed 3D kernel, so parts read the bank in place.
struct AcsSplit {
  Index a, c, s;
};

inline AcsSplit acs_even_split(Index co) {
  Index base = co / 3, rem = co % 3;
  return {base + (rem > 0 ? 1 : 0), base + (rem > 1 ? 1 : 0), base};
}

template <typename S>
class AcsConvLayer {
 public:
  AcsConvLayer(const std::string& name, Index ci, Index co, Index k, bool relu, Rng& rng)
      : AcsConvLayer(name, ci, co, k, acs_even_split(co), relu, rng) {}

  AcsConvLayer(const std::string& name, Index ci, Index co, Index k, AcsSplit split, bool relu, Rng& rng)
      : ci_(ci), co_(co), k_(k), split_(split), w_(name + ".weight", Tensor<S>({co, ci, k, k})),
        b_(name + ".bias", Tensor<S>::zeros({co})), relu_(relu) {
    if (split_.a + split_.c + split_.s != co_) throw ValidationError("ACS split must sum to output channels");
    if (k_ % 2 == 0) throw ValidationError("ACS kernels must be odd for same padding");
    init::he_normal(w_.value, ci_ * k_ * k_, rng);
  }

  Tensor<S> forward(Tensor<S> x, int workers) {
    if (x.rank() != 5 || x.dim(1) != ci_) throw ShapeError("acs input " + shape_str(x.shape()));
    x_ = std::move(x);
    Index b = x_.dim(0), t = x_.dim(2), h = x_.dim(3), w = x_.dim(4);
    Tensor<S> y({b, co_, t, h, w});
    Index c0 = 0;
    for (int part = 0; part < 3; ++part) {
      Index cp = part_channels(part);
      if (cp == 0) continue;
      Conv3dGeom g = part_geom(part, cp);
      Tensor<S> yp({b, cp, t, h, w});
      conv3d_forward(x_.data(), b, t, h, w, g, w_.value.data() + c0 * ci_ * k_ * k_, b_.value.data() + c0, yp.data(),
                     workers);
      copy_channels(yp, y, c0, true);
      c0 += cp;
    }
    if (relu_) relu_mask_.apply(y);
    return y;
  }

  Tensor<S> backward(Tensor<S> gy, int workers) {
    if (relu_) relu_mask_.backward(gy);
    Index b = x_.dim(0), t = x_.dim(2), h = x_.dim(3), w = x_.dim(4);
    Tensor<S> gx = Tensor<S>::zeros(x_.shape());
    Index c0 = 0;
    for (int part = 0; part < 3; ++part) {
      Index cp = part_channels(part);
      if (cp == 0) continue;
      Conv3dGeom g = part_geom(part, cp);
      Tensor<S> gyp({b, cp, t, h, w});
      copy_channels(gy, gyp, c0, false);
      Tensor<S> gxp(x_.shape());
      conv3d_backward(x_.data(), b, t, h, w, g, w_.value.data() + c0 * ci_ * k_ * k_, gyp.data(), gxp.data(),
                      w_.grad.data() + c0 * ci_ * k_ * k_, b_.grad.data() + c0, workers);
      gx.array() += gxp.array();
      c0 += cp;
    }
    return gx;
  }

  void collect(std::vector<Parameter<S>*>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
  }

  const AcsSplit& split() const { return split_; }
  Parameter<S>& weight() { return w_; }
  Parameter<S>& bias() { return b_; }

 private:
  Index part_channels(int part) const { return part == 0 ? split_.a : part == 1 ? split_.c : split_.s; }

  Conv3dGeom part_geom(int part, Index cp) const {
    Conv3dGeom g;
    g.ci = ci_;
    g.co = cp;
    Index p = (k_ - 1) / 2;
    if (part == 0) {  // axial view (H, W): extent 1 along T
      g.kt = 1; g.kh = k_; g.kw = k_;
      g.pt = 0; g.ph = p; g.pw = p;
    } else if (part == 1) {  // coronal view (T, W): extent 1 along H
      g.kt = k_; g.kh = 1; g.kw = k_;
      g.pt = p; g.ph = 0; g.pw = p;
    } else {  // sagittal view (T, H): extent 1 along W
      g.kt = k_; g.kh = k_; g.kw = 1;
      g.pt = p; g.ph = p; g.pw = 0;
    }
    return g;
  }

  /// Copies the cp-channel compact tensor into/out of channel window [c0, c0+cp).
  void copy_channels(Tensor<S>& compact_or_full, Tensor<S>& dst, Index c0, bool into_full) const {
    Tensor<S>& full = into_full ? dst : compact_or_full;
    Tensor<S>& compact = into_full ? compact_or_full : dst;
    Index b = full.dim(0), cp = compact.dim(1), inner = full.dim(2) * full.dim(3) * full.dim(4);
    for (Index ib = 0; ib < b; ++ib) {
      S* fp = full.data() + (ib * co_ + c0) * inner;
      S* cp_ptr = compact.data() + ib * cp * inner;
      if (into_full)
        std::copy(cp_ptr, cp_ptr + cp * inner, fp);
      else
        std::copy(fp, fp + cp * inner, cp_ptr);
    }
  }

  Index ci_, co_, k_;
  AcsSplit split_;
  Parameter<S> w_, b_;
  bool relu_;
  ReluMask<S> relu_mask_;
  Tensor<S> x_;
};

/// Max pooling on rank-4 (kernel (kh,kw)) or rank-5 (kernel (kt,kh,kw))
/// inputs; stride equals the kernel.
template <typename S>
class MaxPoolLayer {
 public:
  MaxPoolLayer(Index kt, Index kh, Index kw) : kt_(kt), kh_(kh), kw_(kw) {}

  Tensor<S> forward(Tensor<S> x) {
    rank4_ = x.rank() == 4;
    Tensor<S> x5 = rank4_ ? std::move(x).reshaped({x.dim(0), x.dim(1), Index(1), x.dim(2), x.dim(3)}) : std::move(x);
    in_shape_ = x5.shape();
    Tensor<S> y;
    maxpool3d_forward(x5, rank4_ ? 1 : kt_, kh_, kw_, y, argmax_);
    if (rank4_) return std::move(y).reshaped({y.dim(0), y.dim(1), y.dim(3), y.dim(4)});
    return y;
  }

  Tensor<S> backward(const Tensor<S>& gy) {
    Tensor<S> gy5 = rank4_ ? gy.reshaped({gy.dim(0), gy.dim(1), Index(1), gy.dim(2), gy.dim(3)}) : gy;
    Tensor<S> gx;
    maxpool3d_backward(gy5, argmax_, in_shape_, gx);
    if (rank4_) return std::move(gx).reshaped({in_shape_[0], in_shape_[1], in_shape_[3], in_shape_[4]});
    return gx;
  }

 private:
  Index kt_, kh_, kw_;
  bool rank4_ = false;
  Shape in_shape_;
  Tensor<Index> argmax_;
};

/// Per-channel batch normalization over all non-channel axes of a
/// (B, C, ...) tensor. Running statistics use momentum 0.1 and the unbiased
/// variance; eval mode (or a frozen layer) normalizes with running stats and
/// leaves them untouched.
template <typename S>
class BatchNorm {
 public:
  explicit BatchNorm(const std::string& name, Index c)
      : c_(c), gamma_(name + ".gamma", Tensor<S>({c}, S(1))), beta_(name + ".beta", Tensor<S>::zeros({c})),
        rmean_(name + ".running_mean", Tensor<S>::zeros({c}), false),
        rvar_(name + ".running_var", Tensor<S>({c}, S(1)), false) {}

  Tensor<S> forward(Tensor<S> x, bool train) {
    if (x.dim(1) != c_) throw ShapeError("batchnorm channels " + shape_str(x.shape()));
    x_ = std::move(x);
    bool use_batch = train && !gamma_.frozen;
    train_mode_ = use_batch;
    Index b = x_.dim(0);
    Index inner = x_.size() / (b * c_);
    Index n = b * inner;
    mu_.resize(c_);
    inv_std_.resize(c_);
    Tensor<S> y(x_.shape());
    for (Index c = 0; c < c_; ++c) {
      double mu, var;
      if (use_batch) {
        double sum = 0.0;
        for (Index ib = 0; ib < b; ++ib) {
          const S* p = x_.data() + (ib * c_ + c) * inner;
          for (Index k = 0; k < inner; ++k) sum += p[k];
        }
        mu = sum / static_cast<double>(n);
        double sq = 0.0;
        for (Index ib = 0; ib < b; ++ib) {
          const S* p = x_.data() + (ib * c_ + c) * inner;
          for (Index k = 0; k < inner; ++k) {
            double d = p[k] - mu;
            sq += d * d;
          }
        }
        var = sq / static_cast<double>(n);
        double unbiased = n > 1 ? sq / static_cast<double>(n - 1) : var;
        rmean_.value[c] = static_cast<S>((1.0 - momentum) * rmean_.value[c] + momentum * mu);
        rvar_.value[c] = static_cast<S>((1.0 - momentum) * rvar_.value[c] + momentum * unbiased);
      } else {
        mu = rmean_.value[c];
        var = rvar_.value[c];
      }
      double inv = 1.0 / std::sqrt(var + eps);
      mu_[static_cast<std::size_t>(c)] = static_cast<S>(mu);
      inv_std_[static_cast<std::size_t>(c)] = static_cast<S>(inv);
      S ga = gamma_.value[c], be = beta_.value[c];
      for (Index ib = 0; ib < b; ++ib) {
        const S* p = x_.data() + (ib * c_ + c) * inner;
        S* q = y.data() + (ib * c_ + c) * inner;
        for (Index k = 0; k < inner; ++k) q[k] = static_cast<S>((p[k] - mu) * inv) * ga + be;
      }
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& gy) {
    Index b = x_.dim(0);
    Index inner = x_.size() / (b * c_);
    Index n = b * inner;
    Tensor<S> gx(x_.shape());
    for (Index c = 0; c < c_; ++c) {
      S mu = mu_[static_cast<std::size_t>(c)], inv = inv_std_[static_cast<std::size_t>(c)];
      S ga = gamma_.value[c];
      double sum_gy = 0.0, sum_gy_xhat = 0.0;
      for (Index ib = 0; ib < b; ++ib) {
        const S* gp = gy.data() + (ib * c_ + c) * inner;
        const S* xp = x_.data() + (ib * c_ + c) * inner;
        for (Index k = 0; k < inner; ++k) {
          double xhat = (xp[k] - mu) * inv;
          sum_gy += gp[k];
          sum_gy_xhat += gp[k] * xhat;
        }
      }
      gamma_.grad[c] += static_cast<S>(sum_gy_xhat);
      beta_.grad[c] += static_cast<S>(sum_gy);
      double mean_gy = sum_gy / static_cast<double>(n);
      double mean_gy_xhat = sum_gy_xhat / static_cast<double>(n);
      for (Index ib = 0; ib < b; ++ib) {
        const S* gp = gy.data() + (ib * c_ + c) * inner;
        const S* xp = x_.data() + (ib * c_ + c) * inner;
        S* op = gx.data() + (ib * c_ + c) * inner;
        for (Index k = 0; k < inner; ++k) {
          double xhat = (xp[k] - mu) * inv;
          if (train_mode_)
            op[k] = static_cast<S>(static_cast<double>(ga) * inv * (gp[k] - mean_gy - xhat * mean_gy_xhat));
          else
            op[k] = static_cast<S>(static_cast<double>(ga) * inv * gp[k]);
        }
      }
    }
    return gx;
  }

  void collect(std::vector<Parameter<S>*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&rmean_);
    out.push_back(&rvar_);
  }

  static constexpr double momentum = 0.1;
  static constexpr double eps = 1e-5;

 private:
  Index c_;
  Parameter<S> gamma_, beta_, rmean_, rvar_;
  Tensor<S> x_;
  std::vector<S> mu_, inv_std_;
  bool train_mode_ = false;
};

/// Fully connected layer y = x W^T + b with optional fused ReLU.
template <typename S>
class LinearLayer {
 public:
  LinearLayer(const std::string& name, Index in, Index out, bool relu, Rng& rng)
      : w_(name + ".weight", Tensor<S>({out, in})), b_(name + ".bias", Tensor<S>::zeros({out})), relu_(relu) {
    init::he_normal(w_.value, in, rng);
  }

  Tensor<S> forward(Tensor<S> x) {
    x_ = std::move(x);
    Tensor<S> y = linear_forward(x_, w_.value, b_.value);
    if (relu_) relu_mask_.apply(y);
    return y;
  }

  Tensor<S> backward(Tensor<S> gy) {
    if (relu_) relu_mask_.backward(gy);
    return linear_backward(x_, w_.value, gy, w_.grad, b_.grad);
  }

  void collect(std::vector<Parameter<S>*>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
  }

  Parameter<S>& weight() { return w_; }
  Parameter<S>& bias() { return b_; }

 private:
  Parameter<S> w_, b_;
  bool relu_;
  ReluMask<S> relu_mask_;
  Tensor<S> x_;
};

}  // namespace spect::nn

#endif  // SPECT_NN_LAYERS_HPP
