// End-to-end checks of the spectstage binary: exit codes, run-directory
// layout, config/flag precedence and cross-invocation determinism.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kScratch = fs::temp_directory_path() / "spectstage_cli_test";

struct CmdResult {
  int code = -1;
  std::string output;  // stdout and stderr combined
};

CmdResult run_cli(const std::string& args) {
  static int invocation = 0;
  fs::path capture = kScratch / ("capture_" + std::to_string(invocation++) + ".txt");
  std::string cmd = std::string(SPECTSTAGE_BIN) + " " + args + " > " + capture.string() + " 2>&1";
  int status = std::system(cmd.c_str());
  CmdResult res;
  res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream is(capture);
  std::stringstream ss;
  ss << is.rdbuf();
  res.output = ss.str();
  return res;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Small dataset plus flags that shrink training to test scale.
const std::string kDataDir = (kScratch / "data").string();
const std::string kMicroFlags =
    " --width-multiplier 0.0625 --slices 8 --steps 6 --batch 4 --folds 2 --seed 13";

void make_dataset() {
  static bool done = false;
  if (done) return;
  fs::remove_all(kScratch);
  fs::create_directories(kScratch);
  CmdResult r = run_cli("phantom --classes 3 --per-class 8 --seed 5 --out " + kDataDir);
  REQUIRE(r.code == 0);
  done = true;
}

std::string micro_config_json() {
  return std::string("{\n")
      + "  \"model\": \"linear\",\n"
      + "  \"manifest\": \"" + kDataDir + "/manifest.json\",\n"
      + "  \"width_multiplier\": 0.0625,\n"
      + "  \"slices\": 8,\n"
      + "  \"crop\": [24, 24],\n"
      + "  \"resize\": [24, 24],\n"
      + "  \"num_steps\": 6,\n"
      + "  \"batch_size\": 4,\n"
      + "  \"folds\": 2,\n"
      + "  \"seed\": 13\n"
      + "}\n";
}

std::string write_micro_config(const std::string& name) {
  fs::path p = kScratch / name;
  std::ofstream os(p);
  os << micro_config_json();
  return p.string();
}

}  // namespace

TEST_CASE("phantom writes a loadable dataset and honors --min-pixels") {
  make_dataset();
  REQUIRE(fs::exists(kDataDir + "/manifest.json"));
  json m = json::parse(slurp(kDataDir + "/manifest.json"));
  CHECK(m.at("class_names").size() == 3);
  CHECK(m.at("patients").size() == 24);
  for (const auto& p : m.at("patients"))
    CHECK(fs::exists(fs::path(kDataDir) / p.at("volume").get<std::string>()));

  std::string dir2 = (kScratch / "data_mp").string();
  CmdResult r = run_cli("phantom --classes 3 --per-class 2 --seed 5 --min-pixels 400 --out " + dir2);
  REQUIRE(r.code == 0);
  json m2 = json::parse(slurp(dir2 + "/manifest.json"));
  CHECK(m2.at("filter_min_pixels").get<long long>() == 400);
}

TEST_CASE("exit codes: 0 success, 1 usage, 2 runtime") {
  make_dataset();
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("train --help").code == 0);
  CHECK(run_cli("").code == 1);            // subcommand required
  CHECK(run_cli("--bogus-flag").code == 1);
  CHECK(run_cli("train --steps 1 --out " + (kScratch / "x").string()).code == 1);  // no manifest

  CmdResult bad_model = run_cli("train --manifest " + kDataDir + "/manifest.json --model wrong --out " +
                                (kScratch / "x").string());
  CHECK(bad_model.code == 1);
  // the usage error names every valid model kind
  for (const char* kind : {"linear", "conv2d", "acs", "r3d", "mc3", "r2plus1d", "idxemb1", "idxemb4",
                           "attn1", "attn4", "mhattn"})
    CHECK(bad_model.output.find(kind) != std::string::npos);

  CHECK(run_cli("train --manifest /does/not/exist.json --model linear --out " +
                (kScratch / "x").string()).code == 2);
  CHECK(run_cli("evaluate --manifest " + kDataDir + "/manifest.json --checkpoint /missing.ckpt --out " +
                (kScratch / "x").string()).code == 2);
}

TEST_CASE("train emits the full run directory layout") {
  make_dataset();
  std::string cfg = write_micro_config("cfg_layout.json");
  std::string run = (kScratch / "run_layout").string();
  CmdResult r = run_cli("train --config " + cfg + " --fold 0 --out " + run);
  REQUIRE(r.code == 0);

  fs::path fold = fs::path(run) / "fold_0";
  for (const char* f : {"config.json", "train_log.csv", "best.ckpt", "last.ckpt", "val_metrics.json",
                        "test_metrics.json", "loss_curve.svg", "lr_schedule.svg"})
    CHECK(fs::exists(fold / f));
  CHECK(fs::exists(fs::path(run) / "config.json"));

  std::string log = slurp(fold / "train_log.csv");
  CHECK(log.rfind("step,lr,loss\n", 0) == 0);
  int lines = 0;
  for (char c : log)
    if (c == '\n') ++lines;
  CHECK(lines == 7);  // header plus one row per step

  json snap = json::parse(slurp(fold / "config.json"));
  CHECK(snap.at("model") == "linear");
  CHECK(snap.at("fold") == 0);
  CHECK(snap.at("num_steps") == 6);

  json tm = json::parse(slurp(fold / "test_metrics.json"));
  CHECK(tm.at("accuracy").get<double>() >= 0.0);
  CHECK(tm.at("confusion").size() == 3);

  std::string svg = slurp(fold / "loss_curve.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("polyline") != std::string::npos);
}

TEST_CASE("flags override config values") {
  make_dataset();
  std::string cfg = write_micro_config("cfg_override.json");
  std::string run = (kScratch / "run_override").string();
  CmdResult r = run_cli("train --config " + cfg + " --steps 4 --fold 0 --out " + run);
  REQUIRE(r.code == 0);
  std::string log = slurp(fs::path(run) / "fold_0" / "train_log.csv");
  int lines = 0;
  for (char c : log)
    if (c == '\n') ++lines;
  CHECK(lines == 5);  // header plus 4 steps: the flag beat num_steps=6
  json snap = json::parse(slurp(fs::path(run) / "fold_0" / "config.json"));
  CHECK(snap.at("num_steps") == 4);
}

TEST_CASE("unknown config keys are usage errors") {
  make_dataset();
  fs::path p = kScratch / "cfg_bad.json";
  std::ofstream(p) << "{\"model\": \"linear\", \"stepz\": 5}";
  CmdResult r = run_cli("train --config " + p.string() + " --out " + (kScratch / "x").string());
  CHECK(r.code == 1);
  CHECK(r.output.find("stepz") != std::string::npos);
}

TEST_CASE("same seed reproduces checkpoints byte for byte") {
  make_dataset();
  std::string cfg = write_micro_config("cfg_det.json");
  std::string run_a = (kScratch / "run_det_a").string();
  std::string run_b = (kScratch / "run_det_b").string();
  REQUIRE(run_cli("train --config " + cfg + " --fold 0 --deterministic --out " + run_a).code == 0);
  REQUIRE(run_cli("train --config " + cfg + " --fold 0 --deterministic --out " + run_b).code == 0);
  CHECK(slurp(fs::path(run_a) / "fold_0" / "best.ckpt") == slurp(fs::path(run_b) / "fold_0" / "best.ckpt"));
  CHECK(slurp(fs::path(run_a) / "fold_0" / "last.ckpt") == slurp(fs::path(run_b) / "fold_0" / "last.ckpt"));
  CHECK(slurp(fs::path(run_a) / "fold_0" / "train_log.csv") ==
        slurp(fs::path(run_b) / "fold_0" / "train_log.csv"));

  std::string run_c = (kScratch / "run_det_c").string();
  REQUIRE(run_cli("train --config " + cfg + " --fold 0 --seed 99 --out " + run_c).code == 0);
  CHECK(slurp(fs::path(run_a) / "fold_0" / "last.ckpt") != slurp(fs::path(run_c) / "fold_0" / "last.ckpt"));
}

TEST_CASE("predict names a class and prints a probability distribution") {
  make_dataset();
  std::string cfg = write_micro_config("cfg_pred.json");
  std::string run = (kScratch / "run_pred").string();
  REQUIRE(run_cli("train --config " + cfg + " --fold 0 --out " + run).code == 0);

  CmdResult r = run_cli("predict --config " + cfg + " --checkpoint " + run +
                        "/fold_0/best.ckpt --patient p0003");
  REQUIRE(r.code == 0);
  CHECK(r.output.find("patient p0003: stage_") != std::string::npos);
  double sum = 0.0;
  int terms = 0;
  for (std::size_t at = r.output.find('='); at != std::string::npos; at = r.output.find('=', at + 1)) {
    sum += std::strtod(r.output.c_str() + at + 1, nullptr);
    ++terms;
  }
  CHECK(terms == 3);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-3));

  CHECK(run_cli("predict --config " + cfg + " --checkpoint " + run +
                "/fold_0/best.ckpt --patient ghost").code == 1);
}

TEST_CASE("evaluate scores a checkpoint over the whole manifest") {
  make_dataset();
  std::string cfg = write_micro_config("cfg_eval.json");
  std::string run = (kScratch / "run_eval").string();
  REQUIRE(run_cli("train --config " + cfg + " --fold 0 --out " + run).code == 0);
  std::string out = (kScratch / "eval_out").string();
  CmdResult r = run_cli("evaluate --config " + cfg + " --checkpoint " + run + "/fold_0/best.ckpt --out " + out);
  REQUIRE(r.code == 0);
  json m = json::parse(slurp(fs::path(out) / "evaluate_metrics.json"));
  long long total = 0;
  for (const auto& row : m.at("confusion"))
    for (const auto& v : row) total += v.get<long long>();
  CHECK(total == 24);  // every patient scored once

  // a checkpoint from a different architecture is rejected up front
  CmdResult wrong = run_cli("evaluate --config " + cfg + " --model attn1 --checkpoint " + run +
                            "/fold_0/best.ckpt --out " + out);
  CHECK(wrong.code == 1);
}

TEST_CASE("report aggregates fold metrics and matches hand averages") {
  make_dataset();
  std::string cfg = write_micro_config("cfg_report.json");
  std::string run = (kScratch / "run_report").string();
  REQUIRE(run_cli("train --config " + cfg + " --out " + run).code == 0);  // both folds
  REQUIRE(fs::exists(fs::path(run) / "fold_1" / "test_metrics.json"));

  std::string out = (kScratch / "report_out").string();
  CmdResult r = run_cli("report --runs " + run + " --out " + out);
  REQUIRE(r.code == 0);
  std::string csv = slurp(fs::path(out) / "report.csv");
  CHECK(csv.rfind("model,metric,mean,std,fold_0,fold_1\n", 0) == 0);

  double a0 = json::parse(slurp(fs::path(run) / "fold_0" / "test_metrics.json")).at("accuracy").get<double>();
  double a1 = json::parse(slurp(fs::path(run) / "fold_1" / "test_metrics.json")).at("accuracy").get<double>();
  std::istringstream lines(csv);
  std::string header, acc_line;
  std::getline(lines, header);
  std::getline(lines, acc_line);
  std::vector<std::string> fields;
  std::istringstream fs_(acc_line);
  for (std::string f; std::getline(fs_, f, ',');) fields.push_back(f);
  REQUIRE(fields.size() == 6);
  CHECK(fields[0] == "linear");
  CHECK(fields[1] == "accuracy");
  CHECK(std::stod(fields[2]) == doctest::Approx((a0 + a1) / 2).epsilon(1e-3));
  CHECK(std::stod(fields[4]) == doctest::Approx(a0).epsilon(1e-3));
  CHECK(std::stod(fields[5]) == doctest::Approx(a1).epsilon(1e-3));

  CHECK(fs::exists(fs::path(out) / "report.json"));
  CHECK(!fs::exists(fs::path(out) / "significance.csv"));  // one model: nothing to compare

  // a second run directory under a different model name brings significance in
  std::string run2 = (kScratch / "run_report2").string();
  fs::copy(run, run2, fs::copy_options::recursive);
  json snap = json::parse(slurp(fs::path(run2) / "config.json"));
  snap["model"] = "conv2d";
  std::ofstream(fs::path(run2) / "config.json") << snap.dump(2) << "\n";
  std::string out2 = (kScratch / "report_out2").string();
  REQUIRE(run_cli("report --runs " + run + " " + run2 + " --out " + out2).code == 0);
  std::string sig = slurp(fs::path(out2) / "significance.csv");
  CHECK(sig.rfind("comparison,t,raw_p,adjusted_p,significant\n", 0) == 0);
  CHECK(sig.find(":accuracy") != std::string::npos);
  CHECK(sig.find(":macro_f1") != std::string::npos);
}

TEST_CASE("cotrain writes per-dataset artifacts and a five-column log") {
  make_dataset();
  std::string cfg_a = write_micro_config("cfg_co_a.json");
  std::string cfg_b = write_micro_config("cfg_co_b.json");
  std::string run = (kScratch / "run_co").string();
  CmdResult r = run_cli("cotrain --config-a " + cfg_a + " --config-b " + cfg_b + " --fold 0 --out " + run);
  REQUIRE(r.code == 0);
  fs::path fold = fs::path(run) / "fold_0";
  for (const char* f : {"best_a.ckpt", "best_b.ckpt", "last.ckpt", "val_metrics_a.json",
                        "val_metrics_b.json", "test_metrics_a.json", "test_metrics_b.json"})
    CHECK(fs::exists(fold / f));
  CHECK(slurp(fold / "train_log.csv").rfind("step,lr,loss,loss_A,loss_B\n", 0) == 0);
}

TEST_CASE("attention models emit per-patient weight charts") {
  make_dataset();
  std::string cfg = write_micro_config("cfg_attn.json");
  std::string run = (kScratch / "run_attn").string();
  CmdResult r = run_cli("train --config " + cfg + " --model attn1 --steps 2 --fold 0 --out " + run);
  REQUIRE(r.code == 0);
  fs::path dir = fs::path(run) / "fold_0" / "attention";
  REQUIRE(fs::exists(dir));
  int charts = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    CHECK(e.path().extension() == ".svg");
    CHECK(slurp(e.path()).find("<rect") != std::string::npos);
    ++charts;
  }
  CHECK(charts == 12);  // fold 0 of 24 patients over 2 folds

  // linear models have no attention weights, so no charts appear
  CHECK(!fs::exists(fs::path(kScratch) / "run_layout" / "fold_0" / "attention"));
}
