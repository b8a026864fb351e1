// Command-line surface: dataset synthesis, training, cotraining, evaluation,
// prediction and report aggregation. See README for the config schema.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "spect/io.hpp"
#include "spect/phantom.hpp"
#include "spect/plot.hpp"
#include "spect/report.hpp"
#include "spect/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace spect;

namespace {

struct RunConfig {
  std::string model = "linear";
  std::string manifest;
  bool use_covariates = false;
  bool scaled_attention = false;
  double width_multiplier = 1.0;
  int batch_size = 8;
  long long num_steps = 3000;
  double base_lr = 1e-4;
  int folds = 5;
  Index slices = 32;
  double rotation_deg = 5.0;
  std::vector<Index> crop = {72, 72};
  std::vector<Index> resize = {72, 72};
  double val_fraction = 0.2;
  std::vector<std::string> freeze_prefix;
  std::string reduction = "mean";
  std::uint64_t seed = 0;
  int workers = 1;
  bool deterministic = false;
};

json run_config_json(const RunConfig& rc) {
  json j;
  j["model"] = rc.model;
  j["manifest"] = rc.manifest;
  j["use_covariates"] = rc.use_covariates;
  j["scaled_attention"] = rc.scaled_attention;
  j["width_multiplier"] = rc.width_multiplier;
  j["batch_size"] = rc.batch_size;
  j["num_steps"] = rc.num_steps;
  j["base_lr"] = rc.base_lr;
  j["folds"] = rc.folds;
  j["slices"] = rc.slices;
  j["rotation_deg"] = rc.rotation_deg;
  j["crop"] = rc.crop;
  j["resize"] = rc.resize;
  j["val_fraction"] = rc.val_fraction;
  j["freeze_prefix"] = rc.freeze_prefix;
  j["reduction"] = rc.reduction;
  j["seed"] = rc.seed;
  j["workers"] = rc.workers;
  j["deterministic"] = rc.deterministic;
  return j;
}

RunConfig run_config_from_json(const json& j, const fs::path& origin) {
  RunConfig rc;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    try {
      if (k == "model")
        rc.model = it.value().get<std::string>();
      else if (k == "manifest")
        rc.manifest = it.value().get<std::string>();
      else if (k == "use_covariates")
        rc.use_covariates = it.value().get<bool>();
      else if (k == "scaled_attention")
        rc.scaled_attention = it.value().get<bool>();
      else if (k == "width_multiplier")
        rc.width_multiplier = it.value().get<double>();
      else if (k == "batch_size")
        rc.batch_size = it.value().get<int>();
      else if (k == "num_steps")
        rc.num_steps = it.value().get<long long>();
      else if (k == "base_lr")
        rc.base_lr = it.value().get<double>();
      else if (k == "folds")
        rc.folds = it.value().get<int>();
      else if (k == "slices")
        rc.slices = it.value().get<Index>();
      else if (k == "rotation_deg")
        rc.rotation_deg = it.value().get<double>();
      else if (k == "crop")
        rc.crop = it.value().get<std::vector<Index>>();
      else if (k == "resize")
        rc.resize = it.value().get<std::vector<Index>>();
      else if (k == "val_fraction")
        rc.val_fraction = it.value().get<double>();
      else if (k == "freeze_prefix")
        rc.freeze_prefix = it.value().get<std::vector<std::string>>();
      else if (k == "reduction")
        rc.reduction = it.value().get<std::string>();
      else if (k == "seed")
        rc.seed = it.value().get<std::uint64_t>();
      else if (k == "workers")
        rc.workers = it.value().get<int>();
      else if (k == "deterministic")
        rc.deterministic = it.value().get<bool>();
      else
        throw ValidationError("unknown config key \"" + k + "\" in " + origin.string());
    } catch (const json::exception& e) {
      throw ValidationError("config key \"" + k + "\" in " + origin.string() + ": " + e.what());
    }
  }
  if (rc.crop.size() != 2 || rc.resize.size() != 2)
    throw ValidationError("crop/resize must be [height, width] pairs");
  if (rc.reduction != "mean" && rc.reduction != "sum")
    throw ValidationError("reduction must be \"mean\" or \"sum\"");
  return rc;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open config file: " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ValidationError("config file " + path.string() + ": " + e.what());
  }
  // manifest paths in a config resolve relative to the config file
  RunConfig rc = run_config_from_json(j, path);
  if (!rc.manifest.empty() && fs::path(rc.manifest).is_relative())
    rc.manifest = (path.parent_path() / rc.manifest).string();
  return rc;
}

ModelConfig model_config_from(const RunConfig& rc, int num_classes) {
  ModelConfig mc;
  mc.kind = model_kind_from_string(rc.model);
  mc.num_classes = num_classes;
  mc.width_multiplier = rc.width_multiplier;
  mc.use_covariates = rc.use_covariates;
  mc.scaled_attention = rc.scaled_attention;
  mc.slices = rc.slices;
  return mc;
}

TrainConfig train_config_from(const RunConfig& rc) {
  TrainConfig tc;
  tc.batch_size = rc.batch_size;
  tc.num_steps = rc.num_steps;
  tc.base_lr = rc.base_lr;
  tc.freeze_prefix = rc.freeze_prefix;
  tc.seed = rc.seed;
  tc.reduction = rc.reduction == "sum" ? Reduction::sum : Reduction::mean;
  tc.val_fraction = rc.val_fraction;
  tc.workers = rc.deterministic ? 1 : rc.workers;
  return tc;
}

AugmentParams aug_from(const RunConfig& rc) {
  AugmentParams aug;
  aug.rotation_deg_max = rc.rotation_deg;
  aug.crop_size = {rc.crop[0], rc.crop[1]};
  aug.resize_size = {rc.resize[0], rc.resize[1]};
  aug.target_depth = rc.slices;
  return aug;
}

json metrics_json(const FoldMetrics& m, const std::vector<std::string>& class_names) {
  json j;
  j["accuracy"] = m.accuracy;
  j["macro_f1"] = m.macro_f1;
  j["class_names"] = class_names;
  j["per_class_precision"] = m.per_class_precision;
  j["per_class_recall"] = m.per_class_recall;
  j["per_class_f1"] = m.per_class_f1;
  std::vector<std::vector<long long>> conf;
  for (Eigen::Index i = 0; i < m.confusion.rows(); ++i) {
    std::vector<long long> row;
    for (Eigen::Index c = 0; c < m.confusion.cols(); ++c) row.push_back(m.confusion(i, c));
    conf.push_back(std::move(row));
  }
  j["confusion"] = conf;
  return j;
}

json val_metrics_json(const TrainResult& tr) {
  json j;
  j["best_step"] = tr.best_step;
  j["best_macro_f1"] = tr.best_macro_f1;
  j["history"] = json::array();
  for (const ValRecord& v : tr.val_history)
    j["history"].push_back({{"step", v.step}, {"accuracy", v.accuracy}, {"macro_f1", v.macro_f1}});
  return j;
}

FoldMetrics read_fold_metrics(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  json j = json::parse(is);
  FoldMetrics m;
  m.accuracy = j.at("accuracy").get<double>();
  m.macro_f1 = j.at("macro_f1").get<double>();
  m.per_class_precision = j.at("per_class_precision").get<std::vector<double>>();
  m.per_class_recall = j.at("per_class_recall").get<std::vector<double>>();
  m.per_class_f1 = j.at("per_class_f1").get<std::vector<double>>();
  auto conf = j.at("confusion").get<std::vector<std::vector<long long>>>();
  m.confusion = MatrixRM<long long>::Zero(static_cast<Eigen::Index>(conf.size()),
                                          conf.empty() ? 0 : static_cast<Eigen::Index>(conf[0].size()));
  for (std::size_t i = 0; i < conf.size(); ++i)
    for (std::size_t c = 0; c < conf[i].size(); ++c)
      m.confusion(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = conf[i][c];
  return m;
}

void emit_loss_plots(const fs::path& dir, const std::vector<TrainLogRow>& log) {
  std::vector<PlotSeries> series;
  PlotSeries loss{"loss", {}, {}};
  for (const TrainLogRow& r : log) {
    loss.x.push_back(static_cast<double>(r.step));
    loss.y.push_back(r.loss);
  }
  series.push_back(std::move(loss));
  if (!log.empty() && log.front().loss_a.has_value()) {
    PlotSeries a{"loss_A", {}, {}}, b{"loss_B", {}, {}};
    for (const TrainLogRow& r : log) {
      a.x.push_back(static_cast<double>(r.step));
      a.y.push_back(*r.loss_a);
      b.x.push_back(static_cast<double>(r.step));
      b.y.push_back(*r.loss_b);
    }
    series.push_back(std::move(a));
    series.push_back(std::move(b));
  }
  write_text_file(dir / "loss_curve.svg", svg_line_chart("training loss", "step", "loss", series));
  PlotSeries lr{"lr", {}, {}};
  for (const TrainLogRow& r : log) {
    lr.x.push_back(static_cast<double>(r.step));
    lr.y.push_back(r.lr);
  }
  write_text_file(dir / "lr_schedule.svg", svg_line_chart("learning rate", "step", "lr", {lr}));
}

/// One chart per test patient, emitted only for models that expose
/// per-slice attention weights.
void emit_attention_plots(const fs::path& dir, StageModel<float>& model, const PreparedDataset& pd,
                          const std::vector<std::size_t>& idxs, const AugmentParams& aug,
                          const TrainConfig& cfg) {
  if (!model.aggregator()) return;
  bool any = false;
  for (std::size_t i : idxs) {
    auto [x, covs] = assemble_batch<float>(pd, {i}, aug, cfg.seed, 0, false);
    model.forward(x, covs, false, cfg.workers);
    auto weights = model.aggregator()->last_attention();
    if (weights.empty()) return;  // aggregator kind has no per-slice weights
    if (!any) {
      fs::create_directories(dir / "attention");
      any = true;
    }
    std::vector<std::string> labels;
    for (std::size_t s = 0; s < weights[0].size(); ++s) labels.push_back(std::to_string(s));
    write_text_file(dir / "attention" / (pd.patients[i].id + ".svg"),
                    svg_bar_chart("attention weights: " + pd.patients[i].id, labels, weights[0]));
  }
}

void report_warnings(const std::vector<std::string>& warnings, std::size_t skip = 0) {
  for (std::size_t i = skip; i < warnings.size(); ++i) std::cerr << "warning: " << warnings[i] << "\n";
}

std::vector<int> fold_list(int fold_flag, int k) {
  if (fold_flag >= k) throw ValidationError("--fold " + std::to_string(fold_flag) +
                                            " outside [0," + std::to_string(k) + ")");
  std::vector<int> out;
  if (fold_flag >= 0)
    out.push_back(fold_flag);
  else
    for (int f = 0; f < k; ++f) out.push_back(f);
  return out;
}

int cmd_train(const RunConfig& rc, const fs::path& out_dir, int fold_flag) {
  if (rc.manifest.empty()) throw ValidationError("train needs a manifest (config key or --manifest)");
  model_kind_from_string(rc.model);  // validates before any heavy work
  Dataset ds = load_dataset(rc.manifest);
  PreparedDataset pd = prepare_dataset(ds);
  report_warnings(pd.warnings);
  FoldPlan folds = stratified_kfold(pd.labels(), rc.folds, rc.seed);
  TrainConfig tc = train_config_from(rc);
  AugmentParams aug = aug_from(rc);

  fs::create_directories(out_dir);
  write_text_file(out_dir / "config.json", run_config_json(rc).dump(2) + "\n");

  for (int f : fold_list(fold_flag, folds.k)) {
    fs::path fold_dir = out_dir / ("fold_" + std::to_string(f));
    fs::create_directories(fold_dir);
    Rng rng = Rng::derive(rc.seed, "init", static_cast<std::uint64_t>(f));
    StageModel<float> model(model_config_from(rc, pd.num_classes), rng);
    TrainResult tr = train_single(model, pd, folds, f, tc, aug);
    // dataset warnings already shown once; echo only the fold's split warnings
    report_warnings(tr.warnings, pd.warnings.size());

    json cfg_snapshot = run_config_json(rc);
    cfg_snapshot["fold"] = f;
    write_text_file(fold_dir / "config.json", cfg_snapshot.dump(2) + "\n");
    write_text_file(fold_dir / "train_log.csv", train_log_csv(tr.log));
    write_checkpoint(fold_dir / "best.ckpt", tr.best_checkpoint);
    write_checkpoint(fold_dir / "last.ckpt", tr.last_checkpoint);
    write_text_file(fold_dir / "val_metrics.json", val_metrics_json(tr).dump(2) + "\n");
    emit_loss_plots(fold_dir, tr.log);

    auto params = model.params();
    load_params(tr.best_checkpoint, params);
    std::vector<std::size_t> test_idxs = folds.fold_members(f);
    FoldMetrics test = run_inference(model, pd, test_idxs, aug, tc);
    write_text_file(fold_dir / "test_metrics.json", metrics_json(test, pd.class_names).dump(2) + "\n");
    emit_attention_plots(fold_dir, model, pd, test_idxs, aug, tc);

    std::cout << "fold " << f << ": best val macro_f1 " << format_fixed(tr.best_macro_f1, 4) << " (step "
              << tr.best_step << "), test accuracy " << format_fixed(test.accuracy, 4) << ", test macro_f1 "
              << format_fixed(test.macro_f1, 4) << "\n";
  }
  std::cout << "run directory: " << out_dir.string() << "\n";
  return 0;
}

int cmd_cotrain(const RunConfig& rca, const RunConfig& rcb, const fs::path& out_dir, int fold_flag) {
  if (rca.manifest.empty() || rcb.manifest.empty())
    throw ValidationError("cotrain needs a manifest in both configs");
  if (rca.model != rcb.model || rca.width_multiplier != rcb.width_multiplier)
    throw ValidationError("cotraining requires matching model kind and width for the shared trunk");
  if (rca.batch_size != rcb.batch_size || rca.num_steps != rcb.num_steps || rca.base_lr != rcb.base_lr)
    throw ValidationError("cotraining configs must agree on batch_size, num_steps and base_lr");
  Dataset da = load_dataset(rca.manifest), db = load_dataset(rcb.manifest);
  PreparedDataset pa = prepare_dataset(da), pb = prepare_dataset(db);
  report_warnings(pa.warnings);
  report_warnings(pb.warnings);
  FoldPlan fa = stratified_kfold(pa.labels(), rca.folds, rca.seed);
  FoldPlan fb = stratified_kfold(pb.labels(), rcb.folds, rca.seed);
  TrainConfig tc = train_config_from(rca);
  AugmentParams aug = aug_from(rca);

  fs::create_directories(out_dir);
  json top;
  top["dataset_a"] = run_config_json(rca);
  top["dataset_b"] = run_config_json(rcb);
  write_text_file(out_dir / "config.json", top.dump(2) + "\n");

  int k = std::min(fa.k, fb.k);
  for (int f : fold_list(fold_flag, k)) {
    fs::path fold_dir = out_dir / ("fold_" + std::to_string(f));
    fs::create_directories(fold_dir);
    Rng rng = Rng::derive(rca.seed, "init", static_cast<std::uint64_t>(f));
    StageModel<float> ma(model_config_from(rca, pa.num_classes), rng);
    StageModel<float> mb(model_config_from(rcb, pb.num_classes), rng, ma.trunk());
    CotrainResult res = cotrain(ma, mb, pa, pb, fa, fb, f, tc, aug);
    report_warnings(res.a.warnings, pa.warnings.size());
    report_warnings(res.b.warnings, pb.warnings.size());

    json cfg_snapshot = top;
    cfg_snapshot["fold"] = f;
    write_text_file(fold_dir / "config.json", cfg_snapshot.dump(2) + "\n");
    write_text_file(fold_dir / "train_log.csv", train_log_csv(res.log));
    write_checkpoint(fold_dir / "best_a.ckpt", res.a.best_checkpoint);
    write_checkpoint(fold_dir / "best_b.ckpt", res.b.best_checkpoint);
    write_checkpoint(fold_dir / "last.ckpt", res.last_checkpoint);
    write_text_file(fold_dir / "val_metrics_a.json", val_metrics_json(res.a).dump(2) + "\n");
    write_text_file(fold_dir / "val_metrics_b.json", val_metrics_json(res.b).dump(2) + "\n");
    emit_loss_plots(fold_dir, res.log);

    auto params_a = ma.params();
    load_params(res.a.best_checkpoint, params_a);
    FoldMetrics ta = run_inference(ma, pa, fa.fold_members(f), aug, tc);
    write_text_file(fold_dir / "test_metrics_a.json", metrics_json(ta, pa.class_names).dump(2) + "\n");

    auto params_b = mb.params();
    load_params(res.b.best_checkpoint, params_b);
    FoldMetrics tb = run_inference(mb, pb, fb.fold_members(f), aug, tc);
    write_text_file(fold_dir / "test_metrics_b.json", metrics_json(tb, pb.class_names).dump(2) + "\n");

    std::cout << "fold " << f << ": A test macro_f1 " << format_fixed(ta.macro_f1, 4) << ", B test macro_f1 "
              << format_fixed(tb.macro_f1, 4) << " (batches " << tc.batch_size / 2 << "+"
              << tc.batch_size / 2 << ")\n";
  }
  std::cout << "run directory: " << out_dir.string() << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& rc, const fs::path& checkpoint, const fs::path& out_dir) {
  if (rc.manifest.empty()) throw ValidationError("evaluate needs a manifest");
  Dataset ds = load_dataset(rc.manifest);
  PreparedDataset pd = prepare_dataset(ds);
  report_warnings(pd.warnings);
  Rng rng = Rng::derive(rc.seed, "init");
  StageModel<float> model(model_config_from(rc, pd.num_classes), rng);
  auto entries = read_checkpoint(checkpoint);
  auto params = model.params();
  CheckpointLoadReport rep = load_params(entries, params);
  if (!rep.missing.empty())
    throw ValidationError("checkpoint lacks parameter " + rep.missing.front() +
                          " (wrong --model or width?)");
  TrainConfig tc = train_config_from(rc);
  AugmentParams aug = aug_from(rc);
  std::vector<std::size_t> all(pd.patients.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  FoldMetrics m = run_inference(model, pd, all, aug, tc);
  fs::create_directories(out_dir);
  write_text_file(out_dir / "evaluate_metrics.json", metrics_json(m, pd.class_names).dump(2) + "\n");
  emit_attention_plots(out_dir, model, pd, all, aug, tc);
  std::cout << "accuracy " << format_fixed(m.accuracy, 4) << ", macro_f1 " << format_fixed(m.macro_f1, 4)
            << " over " << pd.patients.size() << " patients\n";
  return 0;
}

int cmd_predict(const RunConfig& rc, const fs::path& checkpoint, const std::string& patient_id) {
  if (rc.manifest.empty()) throw ValidationError("predict needs a manifest");
  Dataset ds = load_dataset(rc.manifest);
  PreparedDataset pd = prepare_dataset(ds);
  std::size_t target = pd.patients.size();
  for (std::size_t i = 0; i < pd.patients.size(); ++i)
    if (pd.patients[i].id == patient_id) target = i;
  if (target == pd.patients.size())
    throw ValidationError("patient \"" + patient_id + "\" not found or not usable");
  Rng rng = Rng::derive(rc.seed, "init");
  StageModel<float> model(model_config_from(rc, pd.num_classes), rng);
  auto entries = read_checkpoint(checkpoint);
  auto params = model.params();
  CheckpointLoadReport rep = load_params(entries, params);
  if (!rep.missing.empty())
    throw ValidationError("checkpoint lacks parameter " + rep.missing.front() +
                          " (wrong --model or width?)");
  TrainConfig tc = train_config_from(rc);
  AugmentParams aug = aug_from(rc);
  auto [x, covs] = assemble_batch<float>(pd, {target}, aug, rc.seed, 0, false);
  Tensor<float> logits = model.forward(x, covs, false, tc.workers);
  Tensor<float> probs = nn::softmax_rows(logits);
  int pred = argmax_rows(logits)[0];
  std::cout << "patient " << patient_id << ": " << pd.class_names[static_cast<std::size_t>(pred)] << "\n";
  std::cout << "probabilities:";
  for (Index c = 0; c < probs.dim(1); ++c)
    std::cout << " " << pd.class_names[static_cast<std::size_t>(c)] << "=" << format_fixed(probs(0, c), 4);
  std::cout << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const fs::path& out_dir) {
  std::vector<ModelReport> reports;
  for (const std::string& dir : run_dirs) {
    fs::path run(dir);
    std::ifstream is(run / "config.json");
    if (!is) throw ValidationError("no config.json under " + run.string());
    json cfg = json::parse(is);
    ModelReport mr;
    mr.model = cfg.contains("model") ? cfg.at("model").get<std::string>()
                                     : cfg.at("dataset_a").at("model").get<std::string>();
    for (int f = 0;; ++f) {
      fs::path fold_dir = run / ("fold_" + std::to_string(f));
      fs::path metrics = fold_dir / "test_metrics.json";
      if (!fs::exists(metrics)) metrics = fold_dir / "test_metrics_a.json";
      if (!fs::exists(metrics)) break;
      mr.folds.push_back(read_fold_metrics(metrics));
    }
    if (mr.folds.empty()) throw ValidationError("no fold metrics under " + run.string());
    reports.push_back(std::move(mr));
  }
  fs::create_directories(out_dir);
  emit_report(reports, out_dir);
  std::cout << report_csv(reports);
  if (reports.size() > 1) std::cout << significance_csv(significance_table(reports));
  std::cout << "report directory: " << out_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"volumetric multiclass staging toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::uint64_t seed = 0;
  std::string out_dir = "runs/out";
  bool deterministic = false;
  int workers = 1;
  auto* seed_opt = app.add_option("--seed", seed, "RNG seed for every derived stream");
  auto* out_opt = app.add_option("--out", out_dir, "output directory");
  auto* det_opt = app.add_flag("--deterministic", deterministic, "single-worker bit-reproducible mode");
  auto* workers_opt = app.add_option("--workers", workers, "worker threads for convolution inner loops");

  auto* phantom = app.add_subcommand("phantom", "generate a synthetic dataset");
  PhantomSpec spec;
  std::vector<Index> counts, size, slice_range;
  Index min_pixels = 0;
  phantom->add_option("--classes", spec.num_classes, "number of classes");
  phantom->add_option("--per-class", spec.counts_per_class[0], "patients per class (uniform)");
  phantom->add_option("--counts", counts, "per-class patient counts (overrides --per-class)");
  phantom->add_option("--size", size, "slice height and width")->expected(2);
  phantom->add_option("--slice-range", slice_range, "min and max slices per volume")->expected(2);
  phantom->add_option("--noise", spec.noise_level, "background noise level");
  phantom->add_option("--min-pixels", min_pixels, "incomplete-slice filter threshold for the manifest");

  std::string config_path, config_path_b, manifest_path, model_name, checkpoint_path, patient_id;
  int fold_flag = -1;
  std::vector<std::string> run_dirs;

  auto add_train_opts = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run config");
    cmd->add_option("--manifest", manifest_path, "dataset manifest path");
    cmd->add_option("--model", model_name, "model kind");
    cmd->add_option("--fold", fold_flag, "single fold index (default: all folds)");
  };

  long long steps_flag = 0;
  int batch_flag = 0, folds_flag = 0;
  double lr_flag = 0, wm_flag = 0;
  Index slices_flag = 0;
  bool cov_flag = false, scaled_flag = false;
  auto* steps_opt = app.add_option("--steps", steps_flag, "optimizer steps");
  auto* batch_opt = app.add_option("--batch", batch_flag, "mini-batch size");
  auto* lr_opt = app.add_option("--lr", lr_flag, "peak learning rate");
  auto* wm_opt = app.add_option("--width-multiplier", wm_flag, "channel width multiplier");
  auto* folds_opt = app.add_option("--folds", folds_flag, "cross-validation fold count");
  auto* slices_opt = app.add_option("--slices", slices_flag, "model input depth after resampling");
  auto* cov_opt = app.add_flag("--covariates", cov_flag, "concatenate age and sex into the head");
  auto* scaled_opt = app.add_flag("--scaled-attention", scaled_flag, "scale attention logits by 1/sqrt(d)");

  auto* train = app.add_subcommand("train", "single-dataset k-fold training");
  add_train_opts(train);

  auto* cotrain_cmd = app.add_subcommand("cotrain", "joint training of two datasets with a shared trunk");
  cotrain_cmd->add_option("--config-a", config_path, "JSON run config for dataset A")->required();
  cotrain_cmd->add_option("--config-b", config_path_b, "JSON run config for dataset B")->required();
  cotrain_cmd->add_option("--fold", fold_flag, "single fold index (default: all folds)");

  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a manifest");
  add_train_opts(evaluate);
  evaluate->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

  auto* predict = app.add_subcommand("predict", "predict one patient's class");
  add_train_opts(predict);
  predict->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  predict->add_option("--patient", patient_id, "patient id from the manifest")->required();

  auto* report = app.add_subcommand("report", "aggregate fold metrics across runs");
  report->add_option("--runs", run_dirs, "training run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig rc;
    if (!config_path.empty() && !cotrain_cmd->parsed()) rc = load_run_config(config_path);
    if (manifest_path.size()) rc.manifest = manifest_path;
    if (model_name.size()) rc.model = model_name;
    if (seed_opt->count()) rc.seed = seed;
    if (det_opt->count()) rc.deterministic = deterministic;
    if (workers_opt->count()) rc.workers = workers;
    if (steps_opt->count()) rc.num_steps = steps_flag;
    if (batch_opt->count()) rc.batch_size = batch_flag;
    if (lr_opt->count()) rc.base_lr = lr_flag;
    if (wm_opt->count()) rc.width_multiplier = wm_flag;
    if (folds_opt->count()) rc.folds = folds_flag;
    if (slices_opt->count()) rc.slices = slices_flag;
    if (cov_opt->count()) rc.use_covariates = cov_flag;
    if (scaled_opt->count()) rc.scaled_attention = scaled_flag;

    if (phantom->parsed()) {
      if (seed_opt->count()) spec.seed = seed;
      if (!size.empty()) spec.image_size = {size[0], size[1]};
      if (!slice_range.empty()) spec.slice_count_range = {slice_range[0], slice_range[1]};
      if (!counts.empty()) {
        spec.counts_per_class = counts;
        spec.num_classes = static_cast<int>(counts.size());
      } else {
        spec.counts_per_class.assign(static_cast<std::size_t>(spec.num_classes), spec.counts_per_class[0]);
      }
      DatasetManifest m = generate_phantom_dataset(spec, out_dir);
      if (min_pixels > 0) {
        m.filter_min_pixels = min_pixels;
        write_manifest(fs::path(out_dir) / "manifest.json", m);
      }
      std::cout << "wrote " << m.patients.size() << " patients to " << out_dir << "\n";
      return 0;
    }
    if (train->parsed()) return cmd_train(rc, out_dir, fold_flag);
    if (cotrain_cmd->parsed()) {
      RunConfig rca = load_run_config(config_path);
      RunConfig rcb = load_run_config(config_path_b);
      for (RunConfig* p : {&rca, &rcb}) {
        if (seed_opt->count()) p->seed = seed;
        if (det_opt->count()) p->deterministic = deterministic;
        if (workers_opt->count()) p->workers = workers;
        if (steps_opt->count()) p->num_steps = steps_flag;
        if (batch_opt->count()) p->batch_size = batch_flag;
        if (lr_opt->count()) p->base_lr = lr_flag;
        if (folds_opt->count()) p->folds = folds_flag;
      }
      return cmd_cotrain(rca, rcb, out_dir, fold_flag);
    }
    if (evaluate->parsed()) return cmd_evaluate(rc, checkpoint_path, out_dir);
    if (predict->parsed()) return cmd_predict(rc, checkpoint_path, patient_id);
    if (report->parsed()) return cmd_report(run_dirs, out_dir);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
