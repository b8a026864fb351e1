#ifndef SPECT_REPORT_HPP
#define SPECT_REPORT_HPP

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "spect/eval.hpp"

namespace spect {

struct ModelReport {
  std::string model;
  std::vector<FoldMetrics> folds;
};

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

inline std::vector<double> fold_scores(const ModelReport& r, const std::string& metric) {
  std::vector<double> out;
  for (const FoldMetrics& f : r.folds) {
    if (metric == "accuracy")
      out.push_back(f.accuracy);
    else if (metric == "macro_f1")
      out.push_back(f.macro_f1);
    else
      throw ValidationError("unknown report metric: " + metric);
  }
  return out;
}

/// One row per model per metric: mean, unbiased std, then the fold scores.
inline std::string report_csv(const std::vector<ModelReport>& reports) {
  if (reports.empty()) throw ValidationError("cannot emit an empty report");
  std::size_t k = reports.front().folds.size();
  std::string out = "model,metric";
  out += ",mean,std";
  for (std::size_t i = 0; i < k; ++i) out += ",fold_" + std::to_string(i);
  out += "\n";
  for (const ModelReport& r : reports) {
    if (r.folds.size() != k) throw ValidationError("fold count mismatch across models in one report");
    for (const char* metric : {"accuracy", "macro_f1"}) {
      std::vector<double> scores = fold_scores(r, metric);
      out += r.model;
      out += ",";
      out += metric;
      out += "," + format_fixed(mean_of(scores), 4);
      out += "," + format_fixed(stddev_unbiased(scores), 4);
      for (double s : scores) out += "," + format_fixed(s, 4);
      out += "\n";
    }
  }
  return out;
}

inline nlohmann::ordered_json report_json(const std::vector<ModelReport>& reports) {
  nlohmann::ordered_json root;
  root["models"] = nlohmann::ordered_json::array();
  for (const ModelReport& r : reports) {
    nlohmann::ordered_json m;
    m["model"] = r.model;
    m["folds"] = nlohmann::ordered_json::array();
    for (const FoldMetrics& f : r.folds) {
      nlohmann::ordered_json fj;
      fj["accuracy"] = f.accuracy;
      fj["macro_f1"] = f.macro_f1;
      fj["per_class_precision"] = f.per_class_precision;
      fj["per_class_recall"] = f.per_class_recall;
      fj["per_class_f1"] = f.per_class_f1;
      std::vector<std::vector<long long>> conf;
      for (Eigen::Index i = 0; i < f.confusion.rows(); ++i) {
        std::vector<long long> row;
        for (Eigen::Index j = 0; j < f.confusion.cols(); ++j) row.push_back(f.confusion(i, j));
        conf.push_back(std::move(row));
      }
      fj["confusion"] = conf;
      m["folds"].push_back(std::move(fj));
    }
    for (const char* metric : {"accuracy", "macro_f1"}) {
      std::vector<double> scores = fold_scores(r, metric);
      m[std::string(metric) + "_mean"] = mean_of(scores);
      m[std::string(metric) + "_std"] = stddev_unbiased(scores);
    }
    root["models"].push_back(std::move(m));
  }
  return root;
}

struct SignificanceRow {
  std::string comparison;
  TtestResult result;
};

/// For each metric, the model with the best mean is tested one-sided against
/// every other model; Bonferroni m counts the comparisons within that metric.
inline std::vector<SignificanceRow> significance_table(const std::vector<ModelReport>& reports) {
  std::vector<SignificanceRow> rows;
  if (reports.size() < 2) return rows;
  for (const char* metric : {"accuracy", "macro_f1"}) {
    std::size_t best = 0;
    double best_mean = mean_of(fold_scores(reports[0], metric));
    for (std::size_t i = 1; i < reports.size(); ++i) {
      double m = mean_of(fold_scores(reports[i], metric));
      if (m > best_mean) {
        best_mean = m;
        best = i;
      }
    }
    int m = static_cast<int>(reports.size()) - 1;
    for (std::size_t i = 0; i < reports.size(); ++i) {
      if (i == best) continue;
      SignificanceRow row;
      row.comparison = reports[best].model + ">" + reports[i].model + ":" + metric;
      row.result = bonferroni_onesided_ttest(fold_scores(reports[best], metric),
                                             fold_scores(reports[i], metric), m);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline std::string significance_csv(const std::vector<SignificanceRow>& rows) {
  std::string out = "comparison,t,raw_p,adjusted_p,significant\n";
  for (const SignificanceRow& r : rows) {
    out += r.comparison;
    out += "," + format_fixed(r.result.t, 4);
    out += "," + format_fixed(r.result.raw_p, 4);
    out += "," + format_fixed(r.result.adjusted_p, 4);
    out += r.result.significant ? ",yes" : ",no";
    out += "\n";
  }
  return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

/// Writes report.csv, report.json and (for 2+ models) significance.csv.
inline void emit_report(const std::vector<ModelReport>& reports, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "report.csv", report_csv(reports));
  write_text_file(dir / "report.json", report_json(reports).dump(2) + "\n");
  std::vector<SignificanceRow> rows = significance_table(reports);
  if (!rows.empty()) write_text_file(dir / "significance.csv", significance_csv(rows));
}

}  // namespace spect

#endif  // SPECT_REPORT_HPP
