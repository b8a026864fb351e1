#ifndef SPECT_TRAIN_HPP
#define SPECT_TRAIN_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "spect/augment.hpp"
#include "spect/checkpoint.hpp"
#include "spect/eval.hpp"
#include "spect/model.hpp"
#include "spect/objective.hpp"
#include "spect/preprocess.hpp"

namespace spect {

struct TrainConfig {
  int batch_size = 8;
  long long num_steps = 3000;
  double base_lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<std::string> freeze_prefix;
  std::uint64_t seed = 0;
  Reduction reduction = Reduction::mean;
  double val_fraction = 0.2;
  int workers = 1;
  long long stop_after = -1;  // pause after this many optimizer steps; -1 runs to num_steps

  void validate() const {
    if (batch_size < 2) throw ValidationError("batch_size must be >= 2");
    if (num_steps < 1) throw ValidationError("num_steps must be >= 1");
    if (base_lr <= 0) throw ValidationError("base_lr must be positive");
  }
};

/// One-cycle schedule: linear warmup from base/25 to base over the first 10%
/// of steps, then cosine annealing from base down to base/1e4.
inline double lr_at(long long step, const TrainConfig& cfg) {
  if (step < 0 || step >= cfg.num_steps)
    throw ValidationError("step " + std::to_string(step) + " outside [0," + std::to_string(cfg.num_steps) + ")");
  long long warm = cfg.num_steps / 10;
  double base = cfg.base_lr;
  if (warm > 0 && step <= warm)
    return base / 25.0 + (base - base / 25.0) * static_cast<double>(step) / static_cast<double>(warm);
  long long last = cfg.num_steps - 1;
  if (last <= warm) return base;
  double floor = base / 1e4;
  double phase = static_cast<double>(step - warm) / static_cast<double>(last - warm);
  return floor + (base - floor) * 0.5 * (1.0 + std::cos(M_PI * phase));
}

struct PreparedPatient {
  Volume volume;  // normalized and slice-filtered, native height/width
  Covariates covs;
  int label = 0;
  std::string id;
};

/// Usable patients only; those whose volumes lose every slice to the
/// incomplete-slice filter are skipped and reported in warnings.
struct PreparedDataset {
  std::string dataset_id;
  std::vector<std::string> class_names;
  int num_classes = 0;
  std::vector<PreparedPatient> patients;
  std::vector<std::string> warnings;

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(patients.size());
    for (const auto& p : patients) out.push_back(p.label);
    return out;
  }
};

inline PreparedDataset prepare_dataset(const Dataset& ds, double intensity_threshold = 0.1) {
  PreparedDataset out;
  out.dataset_id = ds.manifest.dataset_id;
  out.class_names = ds.manifest.class_names;
  out.num_classes = ds.manifest.num_classes();
  for (std::size_t i = 0; i < ds.manifest.patients.size(); ++i) {
    const PatientRecord& rec = ds.manifest.patients[i];
    try {
      Volume v = minmax_normalize(ds.volumes[i]);
      v = filter_incomplete_slices(v, intensity_threshold, ds.manifest.filter_min_pixels);
      out.patients.push_back({std::move(v), encode_covariates(rec.age_years, rec.sex), rec.stage, rec.id});
    } catch (const EmptyVolumeError& e) {
      out.warnings.push_back("skipping patient " + rec.id + ": " + e.what());
    }
  }
  return out;
}

namespace detail {

template <typename S>
Tensor<S> to_scalar(Tensor<float> x) {
  if constexpr (std::is_same_v<S, float>) {
    return x;
  } else {
    Tensor<S> out(x.shape());
    for (Index i = 0; i < x.size(); ++i) out[i] = static_cast<S>(x[i]);
    return out;
  }
}

}  // namespace detail

/// Materializes (B, T, 3, H, W) inputs plus (B, 2) covariates. Augmentation
/// draws a per-(seed, step, patient) generator so any assembly order, worker
/// count, or resume point sees identical batches.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> assemble_batch(const PreparedDataset& pd, const std::vector<std::size_t>& idxs,
                                               const AugmentParams& aug, std::uint64_t seed, long long step,
                                               bool train, std::string_view stream = "aug") {
  if (idxs.empty()) throw ValidationError("cannot assemble an empty batch");
  std::vector<Tensor<float>> vols;
  vols.reserve(idxs.size());
  Tensor<float> covs({static_cast<Index>(idxs.size()), 2});
  for (std::size_t k = 0; k < idxs.size(); ++k) {
    const PreparedPatient& pat = pd.patients[idxs[k]];
    AugmentParams p = aug;
    p.enabled = aug.enabled && train;
    Rng rng = Rng::derive(seed, stream, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(idxs[k]));
    Volume v = video_transform(pat.volume, p, rng);
    v = trilinear_resample_depth(v, p.target_depth);
    vols.push_back(replicate_channels(v));
    covs(static_cast<Index>(k), 0) = static_cast<float>(pat.covs.age_norm);
    covs(static_cast<Index>(k), 1) = static_cast<float>(pat.covs.sex_dummy);
  }
  return {detail::to_scalar<S>(stack(vols)), detail::to_scalar<S>(covs)};
}

/// Epoch order that spreads every class evenly through the pass: each class
/// is shuffled with its own stream, then members merge sorted by fractional
/// position within their class.
inline std::vector<std::size_t> stratified_epoch_order(const std::vector<int>& labels,
                                                       const std::vector<std::size_t>& pool, int num_classes,
                                                       std::uint64_t seed, long long epoch,
                                                       std::string_view stream = "epoch") {
  std::vector<std::vector<std::size_t>> per_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i : pool) per_class[static_cast<std::size_t>(labels[i])].push_back(i);
  std::vector<std::tuple<double, int, std::size_t>> keyed;
  keyed.reserve(pool.size());
  for (int c = 0; c < num_classes; ++c) {
    auto& members = per_class[static_cast<std::size_t>(c)];
    if (members.empty()) continue;
    Rng rng = Rng::derive(seed, stream, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(c));
    rng.shuffle(members);
    for (std::size_t j = 0; j < members.size(); ++j)
      keyed.emplace_back((static_cast<double>(j) + 0.5) / static_cast<double>(members.size()), c, members[j]);
  }
  std::stable_sort(keyed.begin(), keyed.end(),
                   [](const auto& a, const auto& b) {
                     if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
                     return std::get<1>(a) < std::get<1>(b);
                   });
  std::vector<std::size_t> out;
  out.reserve(keyed.size());
  for (const auto& [key, c, i] : keyed) out.push_back(i);
  return out;
}

/// Sequential reader over stratified epoch passes. State is a pure function
/// of how many items have been taken, so seek() restores any position.
class StratifiedSampler {
 public:
  StratifiedSampler(std::vector<int> labels, std::vector<std::size_t> pool, int num_classes, std::uint64_t seed,
                    std::string_view stream = "epoch")
      : labels_(std::move(labels)), pool_(std::move(pool)), num_classes_(num_classes), seed_(seed),
        stream_(stream) {
    if (pool_.empty()) throw ValidationError("sampler needs a non-empty training pool");
    reload();
  }

  std::vector<std::size_t> take(int n) {
    std::vector<std::size_t> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      if (pos_ == order_.size()) {
        ++epoch_;
        pos_ = 0;
        reload();
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

  void seek(long long items_consumed) {
    long long n = static_cast<long long>(pool_.size());
    epoch_ = items_consumed / n;
    pos_ = static_cast<std::size_t>(items_consumed % n);
    reload();
  }

  long long epoch() const { return epoch_; }
  std::size_t pool_size() const { return pool_.size(); }

 private:
  void reload() { order_ = stratified_epoch_order(labels_, pool_, num_classes_, seed_, epoch_, stream_); }

  std::vector<int> labels_;
  std::vector<std::size_t> pool_;
  int num_classes_;
  std::uint64_t seed_;
  std::string stream_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  long long epoch_ = 0;
};

template <typename S>
class Adam {
 public:
  Adam(std::vector<nn::Parameter<S>*> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      p->frozen = false;
      for (const std::string& prefix : cfg_.freeze_prefix)
        if (p->name.rfind(prefix, 0) == 0) p->frozen = true;
      m_.push_back(Tensor<S>::zeros(p->value.shape()));
      v_.push_back(Tensor<S>::zeros(p->value.shape()));
    }
  }

  void zero_grads() {
    for (auto* p : params_) p->grad.set_zero();
  }

  void step(double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    S eps = static_cast<S>(cfg_.epsilon);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto* p = params_[i];
      if (!p->trainable || p->frozen) continue;
      m_[i].array() = b1 * m_[i].array() + (S(1) - b1) * p->grad.array();
      v_[i].array() = b2 * v_[i].array() + (S(1) - b2) * p->grad.array().square();
      p->value.array() -= static_cast<S>(lr) *
                          (m_[i].array() / static_cast<S>(bc1)) /
                          ((v_[i].array() / static_cast<S>(bc2)).sqrt() + eps);
    }
  }

  long long steps_taken() const { return t_; }

  void append_state(std::vector<NamedTensor>& out) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.push_back({"opt.m." + params_[i]->name, detail_cast(m_[i])});
      out.push_back({"opt.v." + params_[i]->name, detail_cast(v_[i])});
    }
    Tensor<float> t({1});
    t[0] = static_cast<float>(t_);
    out.push_back({"trainer.step", std::move(t)});
  }

  void load_state(const std::vector<NamedTensor>& entries) {
    for (const NamedTensor& e : entries) {
      if (e.name == "trainer.step") {
        t_ = static_cast<long long>(e.value[0]);
        continue;
      }
      bool is_m = e.name.rfind("opt.m.", 0) == 0;
      bool is_v = e.name.rfind("opt.v.", 0) == 0;
      if (!is_m && !is_v) continue;
      std::string pname = e.name.substr(6);
      for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i]->name != pname) continue;
        Tensor<S>& dst = is_m ? m_[i] : v_[i];
        if (e.value.shape() != dst.shape())
          throw ShapeError("optimizer state " + e.name + " has shape " + shape_str(e.value.shape()) +
                           ", expected " + shape_str(dst.shape()));
        for (Index k = 0; k < dst.size(); ++k) dst[k] = static_cast<S>(e.value[k]);
        break;
      }
    }
  }

 private:
  static Tensor<float> detail_cast(const Tensor<S>& x) {
    Tensor<float> out(x.shape());
    for (Index i = 0; i < x.size(); ++i) out[i] = static_cast<float>(x[i]);
    return out;
  }

  std::vector<nn::Parameter<S>*> params_;
  TrainConfig cfg_;
  std::vector<Tensor<S>> m_, v_;
  long long t_ = 0;
};

template <typename S>
std::vector<int> argmax_rows(const Tensor<S>& logits) {
  Index b = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(b));
  for (Index i = 0; i < b; ++i) {
    Index best = 0;
    for (Index j = 1; j < c; ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

/// Rotation-free forward pass over an index set; predictions by argmax.
template <typename S>
FoldMetrics run_inference(StageModel<S>& model, const PreparedDataset& pd,
                          const std::vector<std::size_t>& idxs, const AugmentParams& aug,
                          const TrainConfig& cfg, std::vector<int>* predictions = nullptr) {
  if (idxs.empty()) throw ValidationError("cannot evaluate an empty index set");
  std::vector<int> y_true, y_pred;
  for (std::size_t at = 0; at < idxs.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
    std::vector<std::size_t> chunk(idxs.begin() + static_cast<std::ptrdiff_t>(at),
                                   idxs.begin() + static_cast<std::ptrdiff_t>(
                                                      std::min(at + static_cast<std::size_t>(cfg.batch_size),
                                                               idxs.size())));
    auto [x, covs] = assemble_batch<S>(pd, chunk, aug, cfg.seed, 0, false);
    Tensor<S> logits = model.forward(x, covs, false, cfg.workers);
    std::vector<int> preds = argmax_rows(logits);
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      y_true.push_back(pd.patients[chunk[k]].label);
      y_pred.push_back(preds[k]);
    }
  }
  if (predictions) *predictions = y_pred;
  return evaluate_predictions(y_true, y_pred, pd.num_classes);
}

struct TrainLogRow {
  long long step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> loss_a, loss_b;  // present for cotraining rows
};

struct ValRecord {
  long long step = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  std::vector<ValRecord> val_history;
  std::vector<NamedTensor> best_checkpoint, last_checkpoint;
  double best_macro_f1 = -1.0;
  long long best_step = -1;
  std::vector<std::size_t> train_idxs, val_idxs;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<long long> class_counts(const std::vector<int>& labels,
                                           const std::vector<std::size_t>& idxs, int num_classes) {
  std::vector<long long> counts(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i : idxs) counts[static_cast<std::size_t>(labels[i])]++;
  return counts;
}

inline std::vector<double> fold_class_weights(const std::vector<int>& labels,
                                              const std::vector<std::size_t>& train_idxs, int num_classes) {
  std::vector<long long> counts = class_counts(labels, train_idxs, num_classes);
  std::vector<Index> as_index;
  for (int c = 0; c < num_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0)
      throw ValidationError("stratification failed: training fold lost class " + std::to_string(c));
    as_index.push_back(static_cast<Index>(counts[static_cast<std::size_t>(c)]));
  }
  return compute_class_weights(as_index);
}

template <typename S>
std::vector<NamedTensor> full_snapshot(const std::vector<nn::Parameter<S>*>& params, const Adam<S>& opt,
                                       double best_metric, long long best_step) {
  std::vector<NamedTensor> out = snapshot_params(params);
  opt.append_state(out);
  Tensor<float> bm({1}), bs({1});
  bm[0] = static_cast<float>(best_metric);
  bs[0] = static_cast<float>(best_step);
  out.push_back({"trainer.best_metric", std::move(bm)});
  out.push_back({"trainer.best_step", std::move(bs)});
  return out;
}

inline const NamedTensor* find_entry(const std::vector<NamedTensor>& entries, const std::string& name) {
  for (const NamedTensor& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

}  // namespace detail

/// Trains in place for cfg.num_steps optimization steps (resuming from a
/// checkpoint's recorded step when given). Validation runs at every epoch
/// boundary and at the final step; the best-validation-macro-F1 snapshot is
/// retained alongside the final one.
template <typename S>
TrainResult train_single(StageModel<S>& model, const PreparedDataset& pd, const FoldPlan& folds, int fold_id,
                         const TrainConfig& cfg, const AugmentParams& aug,
                         const std::vector<NamedTensor>* resume = nullptr) {
  cfg.validate();
  if (fold_id < 0 || fold_id >= folds.k) throw ValidationError("fold_id outside [0,k)");
  std::vector<int> labels = pd.labels();
  ValidationSplit split = split_validation(labels, folds.complement(fold_id), cfg.val_fraction, cfg.seed);

  TrainResult res;
  res.train_idxs = split.train;
  res.val_idxs = split.val;
  res.warnings = pd.warnings;
  res.warnings.insert(res.warnings.end(), split.warnings.begin(), split.warnings.end());

  std::vector<double> weights = detail::fold_class_weights(labels, split.train, pd.num_classes);
  std::vector<nn::Parameter<S>*> params = model.params();
  Adam<S> opt(params, cfg);

  long long start_step = 0;
  if (resume) {
    load_params(*resume, params);
    opt.load_state(*resume);
    start_step = opt.steps_taken();
    if (const NamedTensor* bm = detail::find_entry(*resume, "trainer.best_metric"))
      res.best_macro_f1 = static_cast<double>(bm->value[0]);
    if (const NamedTensor* bs = detail::find_entry(*resume, "trainer.best_step"))
      res.best_step = static_cast<long long>(bs->value[0]);
  }
  if (start_step >= cfg.num_steps)
    throw ValidationError("checkpoint already at step " + std::to_string(start_step));

  StratifiedSampler sampler(labels, split.train, pd.num_classes, cfg.seed);
  sampler.seek(start_step * cfg.batch_size);
  long long steps_per_epoch =
      (static_cast<long long>(split.train.size()) + cfg.batch_size - 1) / cfg.batch_size;
  long long end_step = cfg.stop_after >= 0 ? std::min(cfg.num_steps, cfg.stop_after) : cfg.num_steps;

  for (long long step = start_step; step < end_step; ++step) {
    std::vector<std::size_t> idxs = sampler.take(cfg.batch_size);
    auto [x, covs] = assemble_batch<S>(pd, idxs, aug, cfg.seed, step, true);
    std::vector<int> batch_labels;
    for (std::size_t i : idxs) batch_labels.push_back(labels[i]);
    opt.zero_grads();
    Tensor<S> logits = model.forward(x, covs, true, cfg.workers);
    WceResult<S> wce = weighted_cross_entropy(logits, batch_labels, weights, cfg.reduction);
    model.backward(wce.glogits, cfg.workers);
    double lr = lr_at(step, cfg);
    opt.step(lr);
    res.log.push_back({step, lr, wce.loss, std::nullopt, std::nullopt});

    bool epoch_end = (step + 1) % steps_per_epoch == 0;
    if ((epoch_end || step + 1 == cfg.num_steps) && !split.val.empty()) {
      FoldMetrics vm = run_inference(model, pd, split.val, aug, cfg);
      res.val_history.push_back({step, vm.accuracy, vm.macro_f1});
      if (vm.macro_f1 > res.best_macro_f1) {
        res.best_macro_f1 = vm.macro_f1;
        res.best_step = step;
        res.best_checkpoint = detail::full_snapshot(params, opt, res.best_macro_f1, res.best_step);
      }
    }
  }
  res.last_checkpoint = detail::full_snapshot(params, opt, res.best_macro_f1, res.best_step);
  if (res.best_checkpoint.empty()) res.best_checkpoint = res.last_checkpoint;
  return res;
}

struct CotrainResult {
  TrainResult a, b;
  std::vector<TrainLogRow> log;  // combined rows: loss = loss_a + loss_b
  std::vector<std::pair<int, int>> batch_mix;
  std::vector<NamedTensor> last_checkpoint;  // both models plus optimizer
};

/// Joint training on two datasets with a shared trunk: every step feeds each
/// model half the batch from its own dataset, backpropagates both losses and
/// applies one update. Trunk parameters accumulate both gradients; head
/// parameters see only their own dataset's.
template <typename S>
CotrainResult cotrain(StageModel<S>& model_a, StageModel<S>& model_b, const PreparedDataset& pa,
                      const PreparedDataset& pb, const FoldPlan& folds_a, const FoldPlan& folds_b, int fold_id,
                      const TrainConfig& cfg, const AugmentParams& aug) {
  cfg.validate();
  if (cfg.batch_size % 2 != 0) throw ValidationError("cotraining needs an even batch_size");
  if (model_a.trunk() != model_b.trunk()) throw ValidationError("cotraining models must share a trunk");
  if (fold_id < 0 || fold_id >= folds_a.k || fold_id >= folds_b.k)
    throw ValidationError("fold_id outside [0,k)");
  int half = cfg.batch_size / 2;

  std::vector<int> labels_a = pa.labels(), labels_b = pb.labels();
  ValidationSplit split_a = split_validation(labels_a, folds_a.complement(fold_id), cfg.val_fraction, cfg.seed);
  ValidationSplit split_b = split_validation(labels_b, folds_b.complement(fold_id), cfg.val_fraction, cfg.seed);

  CotrainResult res;
  res.a.train_idxs = split_a.train;
  res.a.val_idxs = split_a.val;
  res.b.train_idxs = split_b.train;
  res.b.val_idxs = split_b.val;
  res.a.warnings = pa.warnings;
  res.a.warnings.insert(res.a.warnings.end(), split_a.warnings.begin(), split_a.warnings.end());
  res.b.warnings = pb.warnings;
  res.b.warnings.insert(res.b.warnings.end(), split_b.warnings.begin(), split_b.warnings.end());

  std::vector<double> weights_a = detail::fold_class_weights(labels_a, split_a.train, pa.num_classes);
  std::vector<double> weights_b = detail::fold_class_weights(labels_b, split_b.train, pb.num_classes);

  // model_a.params() already covers the shared trunk.
  std::vector<nn::Parameter<S>*> all_params = model_a.params();
  for (auto* p : model_b.tail_params()) all_params.push_back(p);
  Adam<S> opt(all_params, cfg);

  StratifiedSampler sampler_a(labels_a, split_a.train, pa.num_classes, cfg.seed, "epoch.a");
  StratifiedSampler sampler_b(labels_b, split_b.train, pb.num_classes, cfg.seed, "epoch.b");
  long long spe_a = (static_cast<long long>(split_a.train.size()) + half - 1) / half;
  long long spe_b = (static_cast<long long>(split_b.train.size()) + half - 1) / half;

  for (long long step = 0; step < cfg.num_steps; ++step) {
    std::vector<std::size_t> idxs_a = sampler_a.take(half);
    std::vector<std::size_t> idxs_b = sampler_b.take(half);
    res.batch_mix.emplace_back(static_cast<int>(idxs_a.size()), static_cast<int>(idxs_b.size()));
    opt.zero_grads();

    auto [xa, cova] = assemble_batch<S>(pa, idxs_a, aug, cfg.seed, step, true, "aug.a");
    std::vector<int> la;
    for (std::size_t i : idxs_a) la.push_back(labels_a[i]);
    Tensor<S> logits_a = model_a.forward(xa, cova, true, cfg.workers);
    WceResult<S> wce_a = weighted_cross_entropy(logits_a, la, weights_a, cfg.reduction);
    model_a.backward(wce_a.glogits, cfg.workers);

    auto [xb, covb] = assemble_batch<S>(pb, idxs_b, aug, cfg.seed, step, true, "aug.b");
    std::vector<int> lb;
    for (std::size_t i : idxs_b) lb.push_back(labels_b[i]);
    Tensor<S> logits_b = model_b.forward(xb, covb, true, cfg.workers);
    WceResult<S> wce_b = weighted_cross_entropy(logits_b, lb, weights_b, cfg.reduction);
    model_b.backward(wce_b.glogits, cfg.workers);

    double lr = lr_at(step, cfg);
    opt.step(lr);
    double total = wce_a.loss + wce_b.loss;
    res.log.push_back({step, lr, total, wce_a.loss, wce_b.loss});
    res.a.log.push_back({step, lr, wce_a.loss, std::nullopt, std::nullopt});
    res.b.log.push_back({step, lr, wce_b.loss, std::nullopt, std::nullopt});

    bool last_step = step + 1 == cfg.num_steps;
    if (((step + 1) % spe_a == 0 || last_step) && !split_a.val.empty()) {
      FoldMetrics vm = run_inference(model_a, pa, split_a.val, aug, cfg);
      res.a.val_history.push_back({step, vm.accuracy, vm.macro_f1});
      if (vm.macro_f1 > res.a.best_macro_f1) {
        res.a.best_macro_f1 = vm.macro_f1;
        res.a.best_step = step;
        res.a.best_checkpoint = snapshot_params(model_a.params());
      }
    }
    if (((step + 1) % spe_b == 0 || last_step) && !split_b.val.empty()) {
      FoldMetrics vm = run_inference(model_b, pb, split_b.val, aug, cfg);
      res.b.val_history.push_back({step, vm.accuracy, vm.macro_f1});
      if (vm.macro_f1 > res.b.best_macro_f1) {
        res.b.best_macro_f1 = vm.macro_f1;
        res.b.best_step = step;
        res.b.best_checkpoint = snapshot_params(model_b.params());
      }
    }
  }
  res.last_checkpoint = detail::full_snapshot(all_params, opt, res.a.best_macro_f1, res.a.best_step);
  res.a.last_checkpoint = snapshot_params(model_a.params());
  res.b.last_checkpoint = snapshot_params(model_b.params());
  if (res.a.best_checkpoint.empty()) res.a.best_checkpoint = res.a.last_checkpoint;
  if (res.b.best_checkpoint.empty()) res.b.best_checkpoint = res.b.last_checkpoint;
  return res;
}

inline std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
  bool cotrain_cols = !rows.empty() && rows.front().loss_a.has_value();
  std::string out = cotrain_cols ? "step,lr,loss,loss_A,loss_B\n" : "step,lr,loss\n";
  char buf[160];
  for (const TrainLogRow& r : rows) {
    if (cotrain_cols)
      std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g,%.10g,%.10g\n", r.step, r.lr, r.loss, *r.loss_a,
                    *r.loss_b);
    else
      std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g\n", r.step, r.lr, r.loss);
    out += buf;
  }
  return out;
}

}  // namespace spect

#endif  // SPECT_TRAIN_HPP
