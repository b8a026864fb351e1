#ifndef SPECT_MODEL_HPP
#define SPECT_MODEL_HPP

#include <memory>

#include "spect/nn/aggregate.hpp"
#include "spect/nn/resnet3d.hpp"
#include "spect/nn/vgg.hpp"

namespace spect {

enum class ModelKind { linear, conv2d, acs, r3d, mc3, r2plus1d, idxemb1, idxemb4, attn1, attn4, mhattn };

inline const std::vector<std::pair<std::string, ModelKind>>& model_kinds() {
  static const std::vector<std::pair<std::string, ModelKind>> kinds = {
      {"linear", ModelKind::linear},     {"conv2d", ModelKind::conv2d}, {"acs", ModelKind::acs},
      {"r3d", ModelKind::r3d},           {"mc3", ModelKind::mc3},      {"r2plus1d", ModelKind::r2plus1d},
      {"idxemb1", ModelKind::idxemb1},   {"idxemb4", ModelKind::idxemb4}, {"attn1", ModelKind::attn1},
      {"attn4", ModelKind::attn4},       {"mhattn", ModelKind::mhattn}};
  return kinds;
}

inline std::string to_string(ModelKind k) {
  for (const auto& [name, kind] : model_kinds())
    if (kind == k) return name;
  throw ValidationError("unknown model kind");
}

inline ModelKind model_kind_from_string(const std::string& s) {
  for (const auto& [name, kind] : model_kinds())
    if (name == s) return kind;
  std::string valid;
  for (const auto& [name, kind] : model_kinds()) valid += (valid.empty() ? "" : ", ") + name;
  throw ValidationError("unknown model \"" + s + "\" (valid: " + valid + ")");
}

/// True for models whose backbone consumes the whole (C, T, H, W) volume at
/// once; the remaining kinds run the 2D backbone per slice and aggregate.
inline bool is_volumetric(ModelKind k) {
  return k == ModelKind::acs || k == ModelKind::r3d || k == ModelKind::mc3 || k == ModelKind::r2plus1d;
}

struct ModelConfig {
  ModelKind kind = ModelKind::linear;
  int num_classes = 4;
  double width_multiplier = 1.0;
  bool use_covariates = false;
  bool scaled_attention = false;
  Index slices = 32;  // model input depth after resampling
};

/// A full classification model: backbone trunk + tail (split at the
/// cotraining boundary), optional slice aggregator, classifier head.
/// Input batches are (B, slices, 3, 72, 72) plus optional covariates (B, 2);
/// output is raw logits (B, C).
template <typename S>
class StageModel {
 public:
  using ModulePtr = std::unique_ptr<nn::Module<S>>;
  using TrunkPtr = std::shared_ptr<std::vector<ModulePtr>>;

  StageModel(const ModelConfig& cfg, Rng& rng) : StageModel(cfg, rng, nullptr) {}

  /// Cotraining constructor: reuses another model's trunk modules. The
  /// trunk's parameters then receive gradient from both models.
  StageModel(const ModelConfig& cfg, Rng& rng, TrunkPtr shared_trunk) : cfg_(cfg) {
    double wm = cfg.width_multiplier;
    feat_dim_ = nn::scaled_width(512, wm);
    bool own_trunk = !shared_trunk;
    trunk_ = own_trunk ? std::make_shared<std::vector<ModulePtr>>() : std::move(shared_trunk);
    switch (cfg.kind) {
      case ModelKind::r3d:
      case ModelKind::mc3:
      case ModelKind::r2plus1d: {
        auto family = cfg.kind == ModelKind::r3d ? nn::ResnetFamily::r3d
                      : cfg.kind == ModelKind::mc3 ? nn::ResnetFamily::mc3
                                                   : nn::ResnetFamily::r2plus1d;
        Index w1 = nn::scaled_width(64, wm), w2 = nn::scaled_width(128, wm);
        Index w3 = nn::scaled_width(256, wm), w4 = nn::scaled_width(512, wm);
        if (own_trunk) {
          trunk_->push_back(std::make_unique<nn::ResnetStem<S>>(family, w1, rng));
          trunk_->push_back(std::make_unique<nn::ResnetStage<S>>("res.s1", family, 1, w1, w1, rng));
          trunk_->push_back(std::make_unique<nn::ResnetStage<S>>("res.s2", family, 2, w1, w2, rng));
        }
        tail_.push_back(std::make_unique<nn::ResnetStage<S>>("res.s3", family, 3, w2, w3, rng));
        tail_.push_back(std::make_unique<nn::ResnetStage<S>>("res.s4", family, 4, w3, w4, rng));
        break;
      }
      case ModelKind::acs: {
        build_vgg_blocks<nn::AcsVggBlock<S>>("acsvgg", wm, own_trunk, rng);
        break;
      }
      default: {
        build_vgg_blocks<nn::VggBlock<S>>("vgg", wm, own_trunk, rng);
        break;
      }
    }
    Index d = feat_dim_;
    switch (cfg.kind) {
      case ModelKind::linear:
        agg_ = std::make_unique<nn::MeanAggregator<S>>();
        break;
      case ModelKind::conv2d:
        agg_ = std::make_unique<nn::ConvAggregator<S>>(d, 4, rng);
        break;
      case ModelKind::idxemb1:
        agg_ = std::make_unique<nn::IdxEmbAggregator<S>>(d, cfg.slices, true, rng);
        break;
      case ModelKind::idxemb4:
        agg_ = std::make_unique<nn::IdxEmbAggregator<S>>(d, cfg.slices, false, rng);
        break;
      case ModelKind::attn1:
        agg_ = std::make_unique<nn::AttnAggregator<S>>(d, 1, true, rng);
        break;
      case ModelKind::attn4:
        agg_ = std::make_unique<nn::AttnAggregator<S>>(d, 4, false, rng);
        break;
      case ModelKind::mhattn:
        agg_ = std::make_unique<nn::MhAttnAggregator<S>>(d, cfg.scaled_attention, rng);
        break;
      default:
        break;  // volumetric kinds pool over (T,H,W) instead
    }
    head_ = std::make_unique<nn::ClassifierHead<S>>(d, cfg.num_classes, cfg.use_covariates, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  TrunkPtr trunk() { return trunk_; }

  /// x: (B, slices, 3, 72, 72); covs: (B, 2) when covariates are enabled.
  Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& covs, bool train, int workers) {
    return forward_tail(forward_trunk(x, train, workers), covs, train, workers);
  }

  Tensor<S> forward_trunk(const Tensor<S>& x, bool train, int workers) {
    if (x.rank() != 5 || x.dim(1) != cfg_.slices || x.dim(2) != 3)
      throw ShapeError("model input must be (B, " + std::to_string(cfg_.slices) + ", 3, H, W), got " +
                       shape_str(x.shape()));
    batch_ = x.dim(0);
    Tensor<S> h;
    if (is_volumetric(cfg_.kind)) {
      h = swap_axes_12(x);  // (B, 3, T, H, W)
    } else {
      h = x.reshaped({batch_ * cfg_.slices, Index(3), x.dim(3), x.dim(4)});
    }
    for (auto& m : *trunk_) h = m->forward(std::move(h), train, workers);
    return h;
  }

  Tensor<S> forward_tail(Tensor<S> h, const Tensor<S>& covs, bool train, int workers) {
    for (auto& m : tail_) h = m->forward(std::move(h), train, workers);
    Tensor<S> u;
    if (agg_) {
      u = agg_->forward(std::move(h), batch_, workers);
    } else {
      gap_in_shape_ = h.shape();
      u = nn::global_avg_pool(h);
    }
    return head_->forward(std::move(u), covs);
  }

  void backward(const Tensor<S>& glogits, int workers) {
    backward_trunk(backward_tail(glogits, workers), workers);
  }

  Tensor<S> backward_tail(const Tensor<S>& glogits, int workers) {
    Tensor<S> gu = head_->backward(glogits);
    Tensor<S> gh = agg_ ? agg_->backward(gu, workers) : nn::global_avg_pool_backward(gu, gap_in_shape_);
    for (auto it = tail_.rbegin(); it != tail_.rend(); ++it) gh = (*it)->backward(gh, workers);
    return gh;
  }

  void backward_trunk(const Tensor<S>& gh, int workers) {
    Tensor<S> g = gh;
    for (auto it = trunk_->rbegin(); it != trunk_->rend(); ++it) g = (*it)->backward(g, workers);
  }

  std::vector<nn::Parameter<S>*> params() {
    std::vector<nn::Parameter<S>*> out;
    for (auto& m : *trunk_) m->collect(out);
    collect_tail(out);
    return out;
  }

  /// Tail-side parameters only (everything the cotraining partner does not share).
  std::vector<nn::Parameter<S>*> tail_params() {
    std::vector<nn::Parameter<S>*> out;
    collect_tail(out);
    return out;
  }

  std::vector<nn::Parameter<S>*> trunk_params() {
    std::vector<nn::Parameter<S>*> out;
    for (auto& m : *trunk_) m->collect(out);
    return out;
  }

  nn::Aggregator<S>* aggregator() { return agg_.get(); }
  nn::ClassifierHead<S>& head() { return *head_; }
  Index feature_dim() const { return feat_dim_; }

 private:
  template <typename Block>
  void build_vgg_blocks(const std::string& prefix, double wm, bool own_trunk, Rng& rng) {
    auto specs = nn::vgg16_blocks(wm);
    Index ci = 3;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      // Blocks before the third max pool (blocks 1-2) form the shared trunk;
      // with a borrowed trunk they are neither built nor draw from the RNG.
      if (i < 2 && !own_trunk) {
        ci = specs[i].width;
        continue;
      }
      auto block = std::make_unique<Block>(prefix + ".b" + std::to_string(i + 1), ci, specs[i].width, specs[i].n_convs,
                                           specs[i].pool, rng);
      if (i < 2)
        trunk_->push_back(std::move(block));
      else
        tail_.push_back(std::move(block));
      ci = specs[i].width;
    }
  }

  void collect_tail(std::vector<nn::Parameter<S>*>& out) {
    for (auto& m : tail_) m->collect(out);
    if (agg_) agg_->collect(out);
    head_->collect(out);
  }

  ModelConfig cfg_;
  Index feat_dim_;
  TrunkPtr trunk_;
  std::vector<ModulePtr> tail_;
  std::unique_ptr<nn::Aggregator<S>> agg_;
  std::unique_ptr<nn::ClassifierHead<S>> head_;
  Index batch_ = 0;
  Shape gap_in_shape_;
};

}  // namespace spect

#endif  // SPECT_MODEL_HPP
