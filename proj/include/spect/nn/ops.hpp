#ifndef SPECT_NN_OPS_HPP
#define SPECT_NN_OPS_HPP

#include <Eigen/Dense>

#include "spect/tensor.hpp"

namespace spect::nn {

// Convolution core. conv3d covers the 2D case via T=1, Kt=1: a (B,C,H,W)
// tensor is bit-identical to (B,C,1,H,W), so the wrappers just reinterpret
// shapes. GEMM formulation: per item, columns of the unrolled input
// (vol2col) are multiplied by the flat weight matrix (C_o, C_i*Kt*Kh*Kw).
//
// Determinism: gradient accumulation across the batch uses per-chunk partial
// sums with fixed chunk boundaries, reduced in chunk order after the parallel
// region. The arithmetic is therefore identical for every worker count.

struct Conv3dGeom {
  Index ci, co;
  Index kt, kh, kw;
  Index st = 1, sh = 1, sw = 1;
  Index pt = 0, ph = 0, pw = 0;

  Index rows() const { return ci * kt * kh * kw; }
  static Index out_dim(Index in, Index k, Index s, Index p) { return (in + 2 * p - k) / s + 1; }
};

namespace detail {

/// Frames per vol2col slab, capped so the column buffer stays modest. Purely
/// shape-dependent (never worker-dependent) to keep reductions fixed.
inline Index frames_per_slab(Index rows, Index ohw, Index ot) {
  const Index budget = Index(1) << 22;  // scalars in the column buffer
  Index f = budget / std::max<Index>(1, rows * ohw);
  return std::min(ot, std::max<Index>(1, f));
}

/// Unrolls input frames [ot0, ot1) of one item into col (rows, (ot1-ot0)*OH*OW).
template <typename S>
void vol2col(const S* x, Index t, Index h, Index w, const Conv3dGeom& g, Index ot0, Index ot1, Index oh, Index ow,
             MatrixRM<S>& col) {
  const Index span = (ot1 - ot0) * oh * ow;
  col.resize(g.rows(), span);
  Index row = 0;
  for (Index c = 0; c < g.ci; ++c) {
    const S* xc = x + c * t * h * w;
    for (Index kt = 0; kt < g.kt; ++kt)
      for (Index kh = 0; kh < g.kh; ++kh)
        for (Index kw = 0; kw < g.kw; ++kw, ++row) {
          S* dst = col.data() + row * span;
          for (Index ot = ot0; ot < ot1; ++ot) {
            Index it = ot * g.st + kt - g.pt;
            for (Index oy = 0; oy < oh; ++oy, dst += ow) {
              Index iy = oy * g.sh + kh - g.ph;
              if (it < 0 || it >= t || iy < 0 || iy >= h) {
                std::fill(dst, dst + ow, S(0));
                continue;
              }
              const S* src = xc + (it * h + iy) * w;
              Index ix0 = kw - g.pw;  // input x for ox=0
              if (g.sw == 1) {
                Index lo = std::max<Index>(0, -ix0);
                Index hi = std::min<Index>(ow, w - ix0);
                if (lo > 0) std::fill(dst, dst + std::min(lo, ow), S(0));
                if (hi > lo) std::copy(src + ix0 + lo, src + ix0 + hi, dst + lo);
                if (hi < ow) std::fill(dst + std::max<Index>(hi, Index(0)), dst + ow, S(0));
              } else {
                for (Index ox = 0; ox < ow; ++ox) {
                  Index ix = ox * g.sw + ix0;
                  dst[ox] = (ix >= 0 && ix < w) ? src[ix] : S(0);
                }
              }
            }
          }
        }
  }
}

/// Scatter-adds col gradients back into the (unpadded) input gradient.
template <typename S>
void col2vol(const MatrixRM<S>& col, Index t, Index h, Index w, const Conv3dGeom& g, Index ot0, Index ot1, Index oh,
             Index ow, S* gx) {
  const Index span = (ot1 - ot0) * oh * ow;
  Index row = 0;
  for (Index c = 0; c < g.ci; ++c) {
    S* gc = gx + c * t * h * w;
    for (Index kt = 0; kt < g.kt; ++kt)
      for (Index kh = 0; kh < g.kh; ++kh)
        for (Index kw = 0; kw < g.kw; ++kw, ++row) {
          const S* src = col.data() + row * span;
          for (Index ot = ot0; ot < ot1; ++ot) {
            Index it = ot * g.st + kt - g.pt;
            for (Index oy = 0; oy < oh; ++oy, src += ow) {
              Index iy = oy * g.sh + kh - g.ph;
              if (it < 0 || it >= t || iy < 0 || iy >= h) continue;
              S* dstrow = gc + (it * h + iy) * w;
              for (Index ox = 0; ox < ow; ++ox) {
                Index ix = ox * g.sw + kw - g.pw;
                if (ix >= 0 && ix < w) dstrow[ix] += src[ox];
              }
            }
          }
        }
  }
}

inline std::pair<Index, Index> chunk_bounds(Index b, Index chunk, Index chunk_items) {
  Index lo = chunk * chunk_items;
  return {lo, std::min(b, lo + chunk_items)};
}

}  // namespace detail

/// y = conv3d(x, w) + b. x (B,Ci,T,H,W); w flat (Co, Ci*Kt*Kh*Kw) given by
/// pointer so weight banks can be row-sliced without copies; b nullable.
template <typename S>
void conv3d_forward(const S* x, Index b, Index t, Index h, Index w, const Conv3dGeom& g, const S* wmat, const S* bias,
                    S* y, int workers) {
  const Index ot = Conv3dGeom::out_dim(t, g.kt, g.st, g.pt);
  const Index oh = Conv3dGeom::out_dim(h, g.kh, g.sh, g.ph);
  const Index ow = Conv3dGeom::out_dim(w, g.kw, g.sw, g.pw);
  if (ot <= 0 || oh <= 0 || ow <= 0) throw ShapeError("conv output dimension is non-positive");
  const Index in_item = g.ci * t * h * w;
  const Index out_item = g.co * ot * oh * ow;
  const Index fps = detail::frames_per_slab(g.rows(), oh * ow, ot);
  ConstMatMap<S> wm(wmat, g.co, g.rows());

  parallel_for(static_cast<std::size_t>(b), workers, [&](std::size_t item) {
    MatrixRM<S> col;
    const S* xi = x + static_cast<Index>(item) * in_item;
    S* yi = y + static_cast<Index>(item) * out_item;
    for (Index ot0 = 0; ot0 < ot; ot0 += fps) {
      Index ot1 = std::min(ot, ot0 + fps);
      detail::vol2col(xi, t, h, w, g, ot0, ot1, oh, ow, col);
      Eigen::Map<MatrixRM<S>, 0, Eigen::OuterStride<>> yslab(yi + ot0 * oh * ow, g.co, (ot1 - ot0) * oh * ow,
                                                             Eigen::OuterStride<>(ot * oh * ow));
      yslab.noalias() = wm * col;
      if (bias)
        for (Index c = 0; c < g.co; ++c) yslab.row(c).array() += bias[c];
    }
  });
}

/// Accumulates gw (Co, rows) and gb (Co) with fixed-chunk ordered reduction;
/// writes gx (zero-initialized by this function) unless null.
template <typename S>
void conv3d_backward(const S* x, Index b, Index t, Index h, Index w, const Conv3dGeom& g, const S* wmat, const S* gy,
                     S* gx, S* gw, S* gb, int workers) {
  const Index ot = Conv3dGeom::out_dim(t, g.kt, g.st, g.pt);
  const Index oh = Conv3dGeom::out_dim(h, g.kh, g.sh, g.ph);
  const Index ow = Conv3dGeom::out_dim(w, g.kw, g.sw, g.pw);
  const Index in_item = g.ci * t * h * w;
  const Index out_item = g.co * ot * oh * ow;
  const Index fps = detail::frames_per_slab(g.rows(), oh * ow, ot);
  const Index chunk_items = 8;
  const Index n_chunks = (b + chunk_items - 1) / chunk_items;
  ConstMatMap<S> wm(wmat, g.co, g.rows());

  std::vector<MatrixRM<S>> pgw(static_cast<std::size_t>(n_chunks));
  std::vector<Eigen::Matrix<S, Eigen::Dynamic, 1>> pgb(static_cast<std::size_t>(n_chunks));

  parallel_for(static_cast<std::size_t>(n_chunks), workers, [&](std::size_t chunk) {
    auto [lo, hi] = detail::chunk_bounds(b, static_cast<Index>(chunk), chunk_items);
    auto& cgw = pgw[chunk];
    auto& cgb = pgb[chunk];
    if (gw) cgw.setZero(g.co, g.rows());
    if (gb) cgb.setZero(g.co);
    MatrixRM<S> col, gcol;
    for (Index item = lo; item < hi; ++item) {
      const S* xi = x + item * in_item;
      const S* gyi = gy + item * out_item;
      S* gxi = gx ? gx + item * in_item : nullptr;
      if (gxi) std::fill(gxi, gxi + in_item, S(0));
      for (Index ot0 = 0; ot0 < ot; ot0 += fps) {
        Index ot1 = std::min(ot, ot0 + fps);
        Index span = (ot1 - ot0) * oh * ow;
        Eigen::Map<const MatrixRM<S>, 0, Eigen::OuterStride<>> gyslab(gyi + ot0 * oh * ow, g.co, span,
                                                                      Eigen::OuterStride<>(ot * oh * ow));
        if (gw || gb) {
          if (gw) {
            detail::vol2col(xi, t, h, w, g, ot0, ot1, oh, ow, col);
            cgw.noalias() += gyslab * col.transpose();
          }
          if (gb) cgb.noalias() += gyslab.rowwise().sum();
        }
        if (gxi) {
          gcol.resize(g.rows(), span);
          gcol.noalias() = wm.transpose() * gyslab;
          detail::col2vol(gcol, t, h, w, g, ot0, ot1, oh, ow, gxi);
        }
      }
    }
  });

  for (Index chunk = 0; chunk < n_chunks; ++chunk) {
    if (gw) MatMap<S>(gw, g.co, g.rows()) += pgw[static_cast<std::size_t>(chunk)];
    if (gb) VecMap<S>(gb, g.co) += pgb[static_cast<std::size_t>(chunk)];
  }
}

// ---- max pooling ----

/// Max pool with kernel (kt,kh,kw) == stride (the only form the nets use is
/// non-overlapping, but overlap would still be handled). Records flat argmax
/// per output cell for the backward scatter.
template <typename S>
void maxpool3d_forward(const Tensor<S>& x, Index kt, Index kh, Index kw, Tensor<S>& y, Tensor<Index>& argmax) {
  Index b = x.dim(0), c = x.dim(1), t = x.dim(2), h = x.dim(3), w = x.dim(4);
  Index ot = t / kt, oh = h / kh, ow = w / kw;
  if (ot < 1 || oh < 1 || ow < 1) throw ShapeError("maxpool output is empty for input " + shape_str(x.shape()));
  y = Tensor<S>({b, c, ot, oh, ow});
  argmax = Tensor<Index>({b, c, ot, oh, ow});
  for (Index ib = 0; ib < b; ++ib)
    for (Index ic = 0; ic < c; ++ic) {
      const S* xp = x.data() + (ib * c + ic) * t * h * w;
      Index base_out = ((ib * c + ic) * ot) * oh * ow;
      for (Index zt = 0; zt < ot; ++zt)
        for (Index zy = 0; zy < oh; ++zy)
          for (Index zx = 0; zx < ow; ++zx) {
            S best{};
            Index best_at = -1;
            for (Index dt = 0; dt < kt; ++dt)
              for (Index dy = 0; dy < kh; ++dy)
                for (Index dx = 0; dx < kw; ++dx) {
                  Index it = zt * kt + dt, iy = zy * kh + dy, ix = zx * kw + dx;
                  Index flat = (it * h + iy) * w + ix;
                  if (best_at < 0 || xp[flat] > best) {
                    best = xp[flat];
                    best_at = flat;
                  }
                }
            Index out_flat = base_out + (zt * oh + zy) * ow + zx;
            y[out_flat] = best;
            argmax[out_flat] = best_at;
          }
    }
}

template <typename S>
void maxpool3d_backward(const Tensor<S>& gy, const Tensor<Index>& argmax, const Shape& in_shape, Tensor<S>& gx) {
  gx = Tensor<S>::zeros(in_shape);
  Index b = gy.dim(0), c = gy.dim(1);
  Index plane_in = in_shape[2] * in_shape[3] * in_shape[4];
  Index plane_out = gy.dim(2) * gy.dim(3) * gy.dim(4);
  for (Index ib = 0; ib < b; ++ib)
    for (Index ic = 0; ic < c; ++ic) {
      S* gxp = gx.data() + (ib * c + ic) * plane_in;
      const S* gyp = gy.data() + (ib * c + ic) * plane_out;
      const Index* am = argmax.data() + (ib * c + ic) * plane_out;
      for (Index k = 0; k < plane_out; ++k) gxp[am[k]] += gyp[k];
    }
}

// ---- elementwise / reductions ----

/// In-place ReLU; backward uses the output sign, so no extra cache is needed.
template <typename S>
void relu_inplace(Tensor<S>& x) {
  x.array() = x.array().max(S(0));
}

/// gx = gy where y > 0 (y is the ReLU output).
template <typename S>
void relu_backward(const Tensor<S>& y, Tensor<S>& gy_inplace) {
  gy_inplace.array() = (y.array() > S(0)).select(gy_inplace.array(), S(0));
}

/// (B, C, spatial...) -> (B, C) mean over all trailing axes.
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  Index b = x.dim(0), c = x.dim(1);
  Index inner = x.size() / (b * c);
  Tensor<S> y({b, c});
  ConstMatMap<S> xm(x.data(), b * c, inner);
  VecMap<S>(y.data(), b * c) = xm.rowwise().mean();
  return y;
}

template <typename S>
Tensor<S> global_avg_pool_backward(const Tensor<S>& gy, const Shape& in_shape) {
  Tensor<S> gx(in_shape);
  Index bc = gy.size();
  Index inner = gx.size() / bc;
  MatMap<S> gxm(gx.data(), bc, inner);
  for (Index r = 0; r < bc; ++r) gxm.row(r).setConstant(gy[r] / static_cast<S>(inner));
  return gx;
}

/// y = x * W^T + b with x (B, In), W (Out, In).
template <typename S>
Tensor<S> linear_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  Index bs = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (w.dim(1) != in) throw ShapeError("linear: weight " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
  Tensor<S> y({bs, out});
  as_matrix(y, bs, out).noalias() = as_matrix(x, bs, in) * as_matrix(w, out, in).transpose();
  as_matrix(y, bs, out).rowwise() += ConstVecMap<S>(b.data(), out).transpose();
  return y;
}

template <typename S>
Tensor<S> linear_backward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& gy, Tensor<S>& gw_accum,
                          Tensor<S>& gb_accum) {
  Index bs = x.dim(0), in = x.dim(1), out = w.dim(0);
  as_matrix(gw_accum, out, in).noalias() += as_matrix(gy, bs, out).transpose() * as_matrix(x, bs, in);
  VecMap<S>(gb_accum.data(), out) += as_matrix(gy, bs, out).colwise().sum().transpose();
  Tensor<S> gx({bs, in});
  as_matrix(gx, bs, in).noalias() = as_matrix(gy, bs, out) * as_matrix(w, out, in);
  return gx;
}

/// Row-wise softmax with max subtraction; x (B, C).
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
  Index b = x.dim(0), c = x.dim(1);
  Tensor<S> y({b, c});
  for (Index i = 0; i < b; ++i) {
    ConstVecMap<S> xi(x.data() + i * c, c);
    VecMap<S> yi(y.data() + i * c, c);
    S m = xi.maxCoeff();
    yi = (xi.array() - m).exp();
    yi /= yi.sum();
  }
  return y;
}

}  // namespace spect::nn

#endif  // SPECT_NN_OPS_HPP
