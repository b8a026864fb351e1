#ifndef SPECT_NN_AGGREGATE_HPP
#define SPECT_NN_AGGREGATE_HPP

#include "spect/nn/layers.hpp"

namespace spect::nn {

/// Column x of W (k, m): the embedding of slice index x, W * onehot(x).
template <typename S>
Tensor<S> index_embed(const Tensor<S>& w, Index x) {
  Index k = w.dim(0), m = w.dim(1);
  if (x < 0 || x >= m) throw ValidationError("slice index " + std::to_string(x) + " outside [0," + std::to_string(m) + ")");
  Tensor<S> out({k});
  for (Index d = 0; d < k; ++d) out[d] = w(d, x);
  return out;
}

/// Turns per-slice backbone features (B*m, D, s, s) into one vector per
/// patient (B, D). Implementations own the head-specific parameters.
template <typename S>
struct Aggregator {
  virtual ~Aggregator() = default;
  virtual Tensor<S> forward(Tensor<S> x, Index batch, int workers) = 0;
  virtual Tensor<S> backward(const Tensor<S>& gy, int workers) = 0;
  virtual void collect(std::vector<Parameter<S>*>& out) = 0;
  /// Per-patient attention weights from the last forward (attention heads only).
  virtual std::vector<std::vector<double>> last_attention() const { return {}; }
};

namespace detail {

/// (B*m, D) -> (B, D) arithmetic mean over each patient's m rows.
template <typename S>
Tensor<S> mean_rows(const Tensor<S>& x, Index batch) {
  Index m = x.dim(0) / batch, d = x.dim(1);
  Tensor<S> y({batch, d});
  for (Index b = 0; b < batch; ++b) {
    auto block = ConstMatMap<S>(x.data() + b * m * d, m, d);
    VecMap<S>(y.data() + b * d, d) = block.colwise().mean().transpose();
  }
  return y;
}

template <typename S>
Tensor<S> mean_rows_backward(const Tensor<S>& gy, Index m) {
  Index batch = gy.dim(0), d = gy.dim(1);
  Tensor<S> gx({batch * m, d});
  for (Index b = 0; b < batch; ++b)
    for (Index i = 0; i < m; ++i)
      VecMap<S>(gx.data() + (b * m + i) * d, d) =
          ConstVecMap<S>(gy.data() + b * d, d) / static_cast<S>(m);
  return gx;
}

}  // namespace detail

/// Mean head: global average pool per slice, then average over slices.
template <typename S>
class MeanAggregator : public Aggregator<S> {
 public:
  Tensor<S> forward(Tensor<S> x, Index batch, int) override {
    in_shape_ = x.shape();
    m_ = x.dim(0) / batch;
    return detail::mean_rows(global_avg_pool(x), batch);
  }
  Tensor<S> backward(const Tensor<S>& gy, int) override {
    return global_avg_pool_backward(detail::mean_rows_backward(gy, m_), in_shape_);
  }
  void collect(std::vector<Parameter<S>*>&) override {}

 private:
  Shape in_shape_;
  Index m_ = 1;
};

/// Learned-pool head: an s x s valid convolution (D -> D, ReLU) collapses
/// each slice's spatial grid to 1x1; slice outputs are averaged.
template <typename S>
class ConvAggregator : public Aggregator<S> {
 public:
  ConvAggregator(Index d, Index s, Rng& rng) : conv_("agg.conv", d, d, s, 1, 0, true, rng) {}

  Tensor<S> forward(Tensor<S> x, Index batch, int workers) override {
    m_ = x.dim(0) / batch;
    Index d = x.dim(1);
    Tensor<S> y = conv_.forward(std::move(x), workers);  // (B*m, D, 1, 1)
    return detail::mean_rows(std::move(y).reshaped({batch * m_, d}), batch);
  }

  Tensor<S> backward(const Tensor<S>& gy, int workers) override {
    Tensor<S> g = detail::mean_rows_backward(gy, m_);
    Index d = g.dim(1);
    return conv_.backward(std::move(g).reshaped({g.dim(0), d, Index(1), Index(1)}), workers);
  }

  void collect(std::vector<Parameter<S>*>& out) override { conv_.collect(out); }

 private:
  Conv2dLayer<S> conv_;
  Index m_ = 1;
};

/// Index-embedding head: each slice's features get that slice's embedding
/// added (broadcast over the spatial grid), pass through a 3x3 same-pad
/// conv+ReLU, are pooled, and averaged over slices. pool_first is the "-1"
/// variant (features pooled to 1x1 before embedding).
template <typename S>
class IdxEmbAggregator : public Aggregator<S> {
 public:
  IdxEmbAggregator(Index d, Index m, bool pool_first, Rng& rng)
      : embed_("agg.embed", Tensor<S>({d, m})), conv_("agg.conv", d, d, 3, 1, 1, true, rng), pool_first_(pool_first) {
    init::xavier_normal(embed_.value, m, rng);
    embed_.value.array() *= S(0.1);  // embeddings start small relative to pooled features
  }

  Tensor<S> forward(Tensor<S> x, Index batch, int workers) override {
    m_ = x.dim(0) / batch;
    Index d = x.dim(1);
    if (pool_first_) {
      pre_pool_shape_ = x.shape();
      x = global_avg_pool(x).reshaped({batch * m_, d, Index(1), Index(1)});
    }
    Index s = x.dim(2);
    // Broadcast-add embedding column i over slice i's spatial grid.
    for (Index r = 0; r < x.dim(0); ++r) {
      Index i = r % m_;
      for (Index c = 0; c < d; ++c) {
        S e = embed_.value(c, i);
        S* p = x.data() + (r * d + c) * s * s;
        for (Index k = 0; k < s * s; ++k) p[k] += e;
      }
    }
    Tensor<S> y = conv_.forward(std::move(x), workers);
    post_conv_shape_ = y.shape();
    return detail::mean_rows(global_avg_pool(y), batch);
  }

  Tensor<S> backward(const Tensor<S>& gy, int workers) override {
    Tensor<S> g = global_avg_pool_backward(detail::mean_rows_backward(gy, m_), post_conv_shape_);
    g = conv_.backward(std::move(g), workers);
    Index d = g.dim(1), s = g.dim(2);
    for (Index r = 0; r < g.dim(0); ++r) {
      Index i = r % m_;
      for (Index c = 0; c < d; ++c) {
        const S* p = g.data() + (r * d + c) * s * s;
        S acc = 0;
        for (Index k = 0; k < s * s; ++k) acc += p[k];
        embed_.grad(c, i) += acc;
      }
    }
    if (pool_first_) g = global_avg_pool_backward(std::move(g).reshaped({g.dim(0), d}), pre_pool_shape_);
    return g;
  }

  void collect(std::vector<Parameter<S>*>& out) override {
    out.push_back(&embed_);
    conv_.collect(out);
  }

  Parameter<S>& embedding() { return embed_; }
  Conv2dLayer<S>& conv() { return conv_; }

 private:
  Parameter<S> embed_;
  Conv2dLayer<S> conv_;
  bool pool_first_;
  Index m_ = 1;
  Shape pre_pool_shape_, post_conv_shape_;
};

/// Scalar attention head: score h_i = ReLU(conv_{sxs, valid, D->1}(g_i)),
/// w = softmax(h) per patient, u = sum_i w_i g_i. The "-4" variant pools u
/// to a D-vector afterwards; "-1" inputs are pooled before scoring by
/// construction (s = 1).
template <typename S>
class AttnAggregator : public Aggregator<S> {
 public:
  AttnAggregator(Index d, Index s, bool pool_first, Rng& rng)
      : score_("agg.score", d, 1, s, 1, 0, true, rng), pool_first_(pool_first) {}

  Tensor<S> forward(Tensor<S> x, Index batch, int workers) override {
    m_ = x.dim(0) / batch;
    Index d = x.dim(1);
    if (pool_first_) {
      pre_pool_shape_ = x.shape();
      x = global_avg_pool(x).reshaped({batch * m_, d, Index(1), Index(1)});
    }
    Index s = x.dim(2);
    Tensor<S> h = score_.forward(x, workers);  // (B*m, 1, 1, 1), ReLU applied
    w_ = Tensor<S>({batch, m_});
    for (Index b = 0; b < batch; ++b) {
      ConstVecMap<S> hb(h.data() + b * m_, m_);
      VecMap<S> wb(w_.data() + b * m_, m_);
      S mx = hb.maxCoeff();
      wb = (hb.array() - mx).exp();
      wb /= wb.sum();
    }
    x_ = std::move(x);
    Index inner = d * s * s;
    Tensor<S> u = Tensor<S>::zeros({batch, d, s, s});
    for (Index b = 0; b < batch; ++b) {
      VecMap<S> ub(u.data() + b * inner, inner);
      for (Index i = 0; i < m_; ++i)
        ub += w_(b, i) * ConstVecMap<S>(x_.data() + (b * m_ + i) * inner, inner);
    }
    u_shape_ = u.shape();
    if (s > 1) return global_avg_pool(u);
    return std::move(u).reshaped({batch, d});
  }

  Tensor<S> backward(const Tensor<S>& gy, int workers) override {
    Index batch = gy.dim(0), d = gy.dim(1);
    Index s = u_shape_[2];
    Tensor<S> gu = s > 1 ? global_avg_pool_backward(gy, u_shape_) : gy.reshaped(u_shape_);
    Index inner = d * s * s;
    Tensor<S> gx({batch * m_, d, s, s});
    Tensor<S> gh({batch * m_, Index(1), Index(1), Index(1)});
    for (Index b = 0; b < batch; ++b) {
      ConstVecMap<S> gub(gu.data() + b * inner, inner);
      // direct path through u, plus score-path via the softmax Jacobian
      Eigen::Matrix<S, Eigen::Dynamic, 1> gw(m_);
      for (Index i = 0; i < m_; ++i) {
        ConstVecMap<S> xi(x_.data() + (b * m_ + i) * inner, inner);
        VecMap<S>(gx.data() + (b * m_ + i) * inner, inner) = w_(b, i) * gub;
        gw[i] = gub.dot(xi);
      }
      ConstVecMap<S> wb(w_.data() + b * m_, m_);
      S dot = wb.dot(gw);
      for (Index i = 0; i < m_; ++i) gh[b * m_ + i] = wb[i] * (gw[i] - dot);
    }
    Tensor<S> gscore = score_.backward(std::move(gh), workers);
    gx.array() += gscore.array();
    if (pool_first_)
      return global_avg_pool_backward(std::move(gx).reshaped({batch * m_, d}), pre_pool_shape_);
    return gx;
  }

  void collect(std::vector<Parameter<S>*>& out) override { score_.collect(out); }

  std::vector<std::vector<double>> last_attention() const override {
    std::vector<std::vector<double>> out;
    for (Index b = 0; b < w_.dim(0); ++b) {
      std::vector<double> row(static_cast<std::size_t>(m_));
      for (Index i = 0; i < m_; ++i) row[static_cast<std::size_t>(i)] = static_cast<double>(w_(b, i));
      out.push_back(std::move(row));
    }
    return out;
  }

  Conv2dLayer<S>& score_conv() { return score_; }

 private:
  Conv2dLayer<S> score_;
  bool pool_first_;
  Index m_ = 1;
  Shape pre_pool_shape_, u_shape_;
  Tensor<S> x_, w_;
};

/// Multihead self-attention over a patient's slice sequence F (m, D):
/// per head Q = F Wq, K = F Wk, V = F Wv, Z = rowsoftmax(Q K^T) V (no
/// 1/sqrt(d) scaling unless scaled is set); heads are full-width, so the
/// concatenation is (m, 4D), projected by Wo to (m, D) and summed over rows.
template <typename S>
class MhAttnAggregator : public Aggregator<S> {
 public:
  static constexpr int heads = 4;

  MhAttnAggregator(Index d, bool scaled, Rng& rng) : d_(d), scaled_(scaled) {
    for (int h = 0; h < heads; ++h) {
      std::string base = "agg.h" + std::to_string(h);
      wq_.emplace_back(base + ".wq", Tensor<S>({d, d}));
      wk_.emplace_back(base + ".wk", Tensor<S>({d, d}));
      wv_.emplace_back(base + ".wv", Tensor<S>({d, d}));
      init::xavier_normal(wq_.back().value, d, rng);
      init::xavier_normal(wk_.back().value, d, rng);
      init::xavier_normal(wv_.back().value, d, rng);
    }
    wo_ = std::make_unique<Parameter<S>>("agg.wo", Tensor<S>({heads * d, d}));
    init::xavier_normal(wo_->value, heads * d, rng);
  }

  Tensor<S> forward(Tensor<S> x, Index batch, int) override {
    m_ = x.dim(0) / batch;
    pre_pool_shape_ = x.shape();
    f_ = global_avg_pool(x);  // (B*m, D)
    batch_ = batch;
    q_.assign(heads, {});
    k_.assign(heads, {});
    v_.assign(heads, {});
    p_.assign(heads, {});
    zcat_ = MatrixRM<S>(batch * m_, heads * d_);
    Tensor<S> out({batch, d_});
    S scale = scaled_ ? S(1) / std::sqrt(static_cast<S>(d_)) : S(1);
    for (Index b = 0; b < batch; ++b) {
      ConstMatMap<S> fb(f_.data() + b * m_ * d_, m_, d_);
      for (int h = 0; h < heads; ++h) {
        auto wqm = as_matrix(wq_[h].value, d_, d_);
        auto wkm = as_matrix(wk_[h].value, d_, d_);
        auto wvm = as_matrix(wv_[h].value, d_, d_);
        MatrixRM<S> q = fb * wqm, k = fb * wkm, v = fb * wvm;
        MatrixRM<S> a = (q * k.transpose()) * scale;
        MatrixRM<S> p(m_, m_);
        for (Index r = 0; r < m_; ++r) {
          auto ar = a.row(r);
          S mx = ar.maxCoeff();
          p.row(r) = (ar.array() - mx).exp();
          p.row(r) /= p.row(r).sum();
        }
        zcat_.block(b * m_, h * d_, m_, d_).noalias() = p * v;
        q_[h].push_back(std::move(q));
        k_[h].push_back(std::move(k));
        v_[h].push_back(std::move(v));
        p_[h].push_back(std::move(p));
      }
      auto wom = as_matrix(wo_->value, heads * d_, d_);
      MatrixRM<S> o = zcat_.middleRows(b * m_, m_) * wom;  // (m, D)
      VecMap<S>(out.data() + b * d_, d_) = o.colwise().sum().transpose();
    }
    return out;
  }

  Tensor<S> backward(const Tensor<S>& gy, int) override {
    Tensor<S> gf = Tensor<S>::zeros({batch_ * m_, d_});
    auto wom = as_matrix(wo_->value, heads * d_, d_);
    auto gwom = as_matrix(wo_->grad, heads * d_, d_);
    S scale = scaled_ ? S(1) / std::sqrt(static_cast<S>(d_)) : S(1);
    for (Index b = 0; b < batch_; ++b) {
      // each output row receives the same gradient (row sum)
      MatrixRM<S> go(m_, d_);
      for (Index r = 0; r < m_; ++r) go.row(r) = ConstVecMap<S>(gy.data() + b * d_, d_).transpose();
      gwom.noalias() += zcat_.middleRows(b * m_, m_).transpose() * go;
      MatrixRM<S> gzcat = go * wom.transpose();  // (m, heads*D)
      ConstMatMap<S> fb(f_.data() + b * m_ * d_, m_, d_);
      MatMap<S> gfb(gf.data() + b * m_ * d_, m_, d_);
      for (int h = 0; h < heads; ++h) {
        MatrixRM<S> gz = gzcat.middleCols(h * d_, d_);
        const auto& p = p_[h][static_cast<std::size_t>(b)];
        const auto& q = q_[h][static_cast<std::size_t>(b)];
        const auto& k = k_[h][static_cast<std::size_t>(b)];
        const auto& v = v_[h][static_cast<std::size_t>(b)];
        MatrixRM<S> gp = gz * v.transpose();
        MatrixRM<S> gv = p.transpose() * gz;
        MatrixRM<S> ga(m_, m_);
        for (Index r = 0; r < m_; ++r) {
          S dot = p.row(r).dot(gp.row(r));
          ga.row(r) = p.row(r).array() * (gp.row(r).array() - dot);
        }
        ga *= scale;
        MatrixRM<S> gq = ga * k;
        MatrixRM<S> gk = ga.transpose() * q;
        as_matrix(wq_[h].grad, d_, d_).noalias() += fb.transpose() * gq;
        as_matrix(wk_[h].grad, d_, d_).noalias() += fb.transpose() * gk;
        as_matrix(wv_[h].grad, d_, d_).noalias() += fb.transpose() * gv;
        gfb.noalias() += gq * as_matrix(wq_[h].value, d_, d_).transpose();
        gfb.noalias() += gk * as_matrix(wk_[h].value, d_, d_).transpose();
        gfb.noalias() += gv * as_matrix(wv_[h].value, d_, d_).transpose();
      }
    }
    return global_avg_pool_backward(gf, pre_pool_shape_);
  }

  void collect(std::vector<Parameter<S>*>& out) override {
    for (int h = 0; h < heads; ++h) {
      out.push_back(&wq_[h]);
      out.push_back(&wk_[h]);
      out.push_back(&wv_[h]);
    }
    out.push_back(wo_.get());
  }

 private:
  Index d_;
  bool scaled_;
  Index m_ = 1, batch_ = 0;
  Shape pre_pool_shape_;
  Tensor<S> f_;
  std::vector<Parameter<S>> wq_, wk_, wv_;
  std::unique_ptr<Parameter<S>> wo_;
  std::vector<std::vector<MatrixRM<S>>> q_, k_, v_, p_;
  MatrixRM<S> zcat_;
};

/// Final classifier: linear D->16 + ReLU, optional (age_norm, sex_dummy)
/// concatenation to 18, then linear to C raw logits.
template <typename S>
class ClassifierHead {
 public:
  ClassifierHead(Index d, Index num_classes, bool use_covariates, Rng& rng)
      : use_cov_(use_covariates), fc1_("head.fc1", d, 16, true, rng),
        fc2_("head.fc2", use_covariates ? 18 : 16, num_classes, false, rng) {}

  Tensor<S> forward(Tensor<S> u, const Tensor<S>& covs) {
    Tensor<S> z = fc1_.forward(std::move(u));
    if (use_cov_) {
      if (covs.size() != z.dim(0) * 2) throw ValidationError("covariates required but absent for the batch");
      Tensor<S> zc({z.dim(0), Index(18)});
      for (Index b = 0; b < z.dim(0); ++b) {
        std::copy(z.data() + b * 16, z.data() + (b + 1) * 16, zc.data() + b * 18);
        zc(b, 16) = covs[b * 2];
        zc(b, 17) = covs[b * 2 + 1];
      }
      z = std::move(zc);
    }
    return fc2_.forward(std::move(z));
  }

  /// Returns gradient w.r.t. u; covariate inputs absorb their share silently.
  Tensor<S> backward(Tensor<S> glogits) {
    Tensor<S> g = fc2_.backward(std::move(glogits));
    if (use_cov_) {
      Tensor<S> gz({g.dim(0), Index(16)});
      for (Index b = 0; b < g.dim(0); ++b)
        std::copy(g.data() + b * 18, g.data() + b * 18 + 16, gz.data() + b * 16);
      g = std::move(gz);
    }
    return fc1_.backward(std::move(g));
  }

  void collect(std::vector<Parameter<S>*>& out) {
    fc1_.collect(out);
    fc2_.collect(out);
  }

  LinearLayer<S>& fc1() { return fc1_; }
  LinearLayer<S>& fc2() { return fc2_; }

 private:
  bool use_cov_;
  LinearLayer<S> fc1_, fc2_;
};

}  // namespace spect::nn

#endif  // SPECT_NN_AGGREGATE_HPP
