#ifndef SPECT_EVAL_HPP
#define SPECT_EVAL_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "spect/tensor.hpp"

namespace spect {

/// Index-aligned fold assignment over a label vector.
struct FoldPlan {
  int k = 5;
  std::uint64_t seed = 0;
  std::vector<int> assignments;

  std::vector<std::size_t> fold_members(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignments.size(); ++i)
      if (assignments[i] == fold) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> complement(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignments.size(); ++i)
      if (assignments[i] != fold) out.push_back(i);
    return out;
  }
};

/// Within each class, a seeded shuffle is dealt round-robin into k folds, so
/// per-fold class counts stay within 1 of proportional.
inline FoldPlan stratified_kfold(const std::vector<int>& labels, int k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("stratified k-fold needs k >= 2");
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.assignments.assign(labels.size(), -1);
  int num_classes = 0;
  for (int y : labels) num_classes = std::max(num_classes, y + 1);
  for (int c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) members.push_back(i);
    if (members.size() < static_cast<std::size_t>(k))
      throw ValidationError("class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                            " members, fewer than k=" + std::to_string(k));
    Rng rng = Rng::derive(seed, "fold", static_cast<std::uint64_t>(c));
    rng.shuffle(members);
    for (std::size_t j = 0; j < members.size(); ++j)
      plan.assignments[members[j]] = static_cast<int>(j % static_cast<std::size_t>(k));
  }
  return plan;
}

struct ValidationSplit {
  std::vector<std::size_t> train, val;
  std::vector<std::string> warnings;
};

/// Stratified hold-out from a training pool. Classes with fewer than 5
/// members stay wholly in training (warned); larger classes send
/// max(1, round(fraction * n_c)) members to validation.
inline ValidationSplit split_validation(const std::vector<int>& labels, const std::vector<std::size_t>& pool,
                                        double fraction, std::uint64_t seed) {
  if (pool.empty()) throw ValidationError("validation split needs a non-empty training pool");
  ValidationSplit out;
  int num_classes = 0;
  for (std::size_t i : pool) num_classes = std::max(num_classes, labels[i] + 1);
  for (int c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i : pool)
      if (labels[i] == c) members.push_back(i);
    if (members.empty()) continue;
    if (members.size() < 5) {
      out.warnings.push_back("class " + std::to_string(c) + " has only " + std::to_string(members.size()) +
                             " training members; keeping all in training");
      out.train.insert(out.train.end(), members.begin(), members.end());
      continue;
    }
    Rng rng = Rng::derive(seed, "valsplit", static_cast<std::uint64_t>(c));
    rng.shuffle(members);
    std::size_t n_val = static_cast<std::size_t>(
        std::max<long long>(1, std::llround(fraction * static_cast<double>(members.size()))));
    out.val.insert(out.val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
    out.train.insert(out.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

struct FoldMetrics {
  double accuracy = 0.0;
  std::vector<double> per_class_precision, per_class_recall, per_class_f1;
  double macro_f1 = 0.0;
  MatrixRM<long long> confusion;  // rows: true class, cols: predicted
};

/// Confusion-matrix metrics. Undefined ratios (empty denominator) are 0, so
/// a class absent from both truth and prediction contributes F1 = 0.
inline FoldMetrics evaluate_predictions(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                                        int num_classes) {
  if (y_true.size() != y_pred.size()) throw ValidationError("prediction/label count mismatch");
  if (y_true.empty()) throw ValidationError("cannot score an empty prediction set");
  FoldMetrics m;
  m.confusion = MatrixRM<long long>::Zero(num_classes, num_classes);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] < 0 || y_true[i] >= num_classes || y_pred[i] < 0 || y_pred[i] >= num_classes)
      throw ValidationError("class index outside [0," + std::to_string(num_classes) + ")");
    m.confusion(y_true[i], y_pred[i]) += 1;
  }
  long long correct = 0;
  for (int c = 0; c < num_classes; ++c) correct += m.confusion(c, c);
  m.accuracy = static_cast<double>(correct) / static_cast<double>(y_true.size());
  double f1_sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    long long tp = m.confusion(c, c);
    long long fp = m.confusion.col(c).sum() - tp;
    long long fn = m.confusion.row(c).sum() - tp;
    double p = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    double r = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    double f1 = p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
    m.per_class_precision.push_back(p);
    m.per_class_recall.push_back(r);
    m.per_class_f1.push_back(f1);
    f1_sum += f1;
  }
  m.macro_f1 = f1_sum / static_cast<double>(num_classes);
  return m;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Sample standard deviation with the unbiased (n-1) denominator.
inline double stddev_unbiased(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mu = mean_of(v), s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

namespace detail {

/// Continued fraction for the regularized incomplete beta (modified Lentz).
inline double betacf(double a, double b, double x) {
  constexpr int max_iter = 300;
  constexpr double eps = 3e-16, fpmin = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h;
}

}  // namespace detail

/// I_x(a, b), the regularized incomplete beta function.
inline double regularized_incomplete_beta(double a, double b, double x) {
  if (x < 0.0 || x > 1.0) throw ValidationError("incomplete beta argument outside [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  double front = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                          b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::betacf(a, b, x) / a;
  return 1.0 - front * detail::betacf(b, a, 1.0 - x) / b;
}

/// P(T > t) for Student's t with df degrees of freedom.
inline double student_t_upper_p(double t, double df) {
  double x = df / (df + t * t);
  double half = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x);
  return t >= 0.0 ? half : 1.0 - half;
}

struct TtestResult {
  double t = 0.0;
  double df = 0.0;
  double raw_p = 0.5;
  double adjusted_p = 0.5;
  bool significant = false;
  bool degenerate = false;  // both groups constant with equal means
};

/// Welch one-sided two-sample t-test (alternative: best > other) with a
/// Bonferroni adjustment over m comparisons, significance at alpha = 0.05.
inline TtestResult bonferroni_onesided_ttest(const std::vector<double>& best, const std::vector<double>& other,
                                             int num_comparisons) {
  if (best.size() < 2 || other.size() < 2) throw ValidationError("t-test needs at least 2 scores per group");
  if (num_comparisons < 1) throw ValidationError("number of comparisons must be >= 1");
  double n1 = static_cast<double>(best.size()), n2 = static_cast<double>(other.size());
  double m1 = mean_of(best), m2 = mean_of(other);
  double v1 = 0.0, v2 = 0.0;
  for (double x : best) v1 += (x - m1) * (x - m1);
  for (double x : other) v2 += (x - m2) * (x - m2);
  v1 /= n1 - 1.0;
  v2 /= n2 - 1.0;
  TtestResult res;
  double se2 = v1 / n1 + v2 / n2;
  if (se2 == 0.0) {
    if (m1 == m2) {
      res.degenerate = true;
      res.raw_p = 0.5;
      res.df = n1 + n2 - 2.0;
    } else {
      res.t = m1 > m2 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      res.raw_p = m1 > m2 ? 0.0 : 1.0;
      res.df = n1 + n2 - 2.0;
    }
  } else {
    res.t = (m1 - m2) / std::sqrt(se2);
    double num = se2 * se2;
    double den = (v1 / n1) * (v1 / n1) / (n1 - 1.0) + (v2 / n2) * (v2 / n2) / (n2 - 1.0);
    res.df = num / den;
    res.raw_p = student_t_upper_p(res.t, res.df);
  }
  res.adjusted_p = std::min(1.0, static_cast<double>(num_comparisons) * res.raw_p);
  res.significant = res.adjusted_p < 0.05;
  return res;
}

}  // namespace spect

#endif  // SPECT_EVAL_HPP
