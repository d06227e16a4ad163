#pragma once

// Independent reference computations for test expectations. These stay
// deliberately naive (series, brute-force loops) and share no code with the
// implementation they are checking.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

namespace oracle {

// erf via its Maclaurin series; plenty of terms for |x| <= 3
inline double erf_series(double x) {
  double term = x;
  double sum = x;
  for (int n = 1; n <= 60; ++n) {
    term *= -x * x / n;
    sum += term / (2 * n + 1);
  }
  return sum * 2.0 / std::sqrt(3.14159265358979323846264338327950288);
}

inline double normal_cdf(double z) { return 0.5 * (1.0 + erf_series(z / std::sqrt(2.0))); }

inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846264338327950288);
}

inline double gelu(double z) { return z * normal_cdf(z); }

// naive metric references, straight from the printed formulas

inline double accuracy(std::span<const double> y, std::span<const double> yh) {
  double ok = 0;
  for (size_t i = 0; i < y.size(); ++i) ok += y[i] == yh[i] ? 1.0 : 0.0;
  return ok / y.size();
}

inline double f1(std::span<const double> y, std::span<const double> yh) {
  double tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < y.size(); ++i) {
    tp += (y[i] == 1 && yh[i] == 1) ? 1 : 0;
    fp += (y[i] == 0 && yh[i] == 1) ? 1 : 0;
    fn += (y[i] == 1 && yh[i] == 0) ? 1 : 0;
  }
  double pr = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  double re = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  return pr + re > 0 ? 2 * pr * re / (pr + re) : 0.0;
}

inline double fpr(std::span<const double> y, std::span<const double> yh) {
  double fp = 0, neg = 0;
  for (size_t i = 0; i < y.size(); ++i) {
    fp += (y[i] == 0 && yh[i] == 1) ? 1 : 0;
    neg += y[i] == 0 ? 1 : 0;
  }
  return fp / neg;
}

inline double fnr(std::span<const double> y, std::span<const double> yh) {
  double fn = 0, pos = 0;
  for (size_t i = 0; i < y.size(); ++i) {
    fn += (y[i] == 1 && yh[i] == 0) ? 1 : 0;
    pos += y[i] == 1 ? 1 : 0;
  }
  return fn / pos;
}

// pairwise strict-inequality form, quadratic loop
inline double auroc(std::span<const double> y, std::span<const double> s) {
  double hits = 0, pairs = 0;
  for (size_t m = 0; m < y.size(); ++m) {
    if (y[m] != 1) continue;
    for (size_t n = 0; n < y.size(); ++n) {
      if (y[n] != 0) continue;
      pairs += 1;
      hits += s[m] > s[n] ? 1.0 : 0.0;
    }
  }
  return hits / pairs;
}

// step sum over descending unique thresholds
inline double auprc(std::span<const double> y, std::span<const double> s) {
  std::vector<double> thresholds(s.begin(), s.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double pos = 0;
  for (double v : y) pos += v == 1 ? 1 : 0;
  double area = 0, re_prev = 0;
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (size_t i = 0; i < y.size(); ++i) {
      if (s[i] >= t) (y[i] == 1 ? tp : fp) += 1;
    }
    double pr = tp / (tp + fp);
    double re = tp / pos;
    area += (re - re_prev) * pr;
    re_prev = re;
  }
  return area;
}

// ordered Gini: values sorted ascending by key (stable), normalized by the
// self-ordered sum
inline double gini(std::span<const double> y, std::span<const double> s) {
  auto ordered_sum = [](std::span<const double> vals, std::span<const double> key) {
    std::vector<int> idx(vals.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return key[a] < key[b]; });
    double n = static_cast<double>(vals.size());
    double total = 0, acc = 0;
    for (double v : vals) total += v;
    for (size_t i = 0; i < idx.size(); ++i)
      acc += (2.0 * (i + 1) - n - 1.0) * vals[idx[i]];
    return acc / (n * total);
  };
  return ordered_sum(y, s) / ordered_sum(y, y);
}

inline double pe(std::span<const double> y, std::span<const double> yh) {
  double sy = 0, sp = 0;
  for (size_t i = 0; i < y.size(); ++i) {
    sy += y[i];
    sp += yh[i];
  }
  return (sp - sy) / sy;
}

inline double rmse(std::span<const double> y, std::span<const double> yh) {
  double acc = 0;
  for (size_t i = 0; i < y.size(); ++i) acc += (yh[i] - y[i]) * (yh[i] - y[i]);
  return std::sqrt(acc / y.size());
}

inline double mae(std::span<const double> y, std::span<const double> yh) {
  double acc = 0;
  for (size_t i = 0; i < y.size(); ++i) acc += std::fabs(yh[i] - y[i]);
  return acc / y.size();
}

inline double wasserstein1(std::span<const double> a, std::span<const double> b) {
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double acc = 0;
  for (size_t i = 0; i < sa.size(); ++i) acc += std::fabs(sa[i] - sb[i]);
  return acc / sa.size();
}

inline double dpd(std::span<const double> pred, std::span<const int> group, int n_groups) {
  double best = 0;
  for (int j = 0; j < n_groups; ++j) {
    for (int k = 0; k < n_groups; ++k) {
      double sj = 0, cj = 0, sk = 0, ck = 0;
      for (size_t i = 0; i < pred.size(); ++i) {
        if (group[i] == j) {
          sj += pred[i];
          cj += 1;
        }
        if (group[i] == k) {
          sk += pred[i];
          ck += 1;
        }
      }
      if (cj == 0 || ck == 0) continue;
      best = std::max(best, std::fabs(sj / cj - sk / ck));
    }
  }
  return best;
}

// triple-loop PCM forms over explicit per-partition prediction tables:
// preds[i][j] are the scores of base-category-i rows rewritten to category j

inline double avgif(const std::vector<std::vector<std::vector<double>>>& preds, int cs) {
  double acc = 0;
  for (int i = 0; i < cs; ++i)
    for (int j = 0; j < cs; ++j)
      for (int k = 0; k < cs; ++k) {
        if (j == k || preds[i][j].empty()) continue;
        acc += wasserstein1(preds[i][j], preds[i][k]);
      }
  return acc / (static_cast<double>(cs) * (cs - 1));
}

template <typename MetricFn>
inline double metric_gap(const std::vector<std::vector<std::vector<double>>>& preds,
                         const std::vector<std::vector<double>>& labels, int cs, MetricFn fn) {
  double acc = 0;
  for (int i = 0; i < cs; ++i)
    for (int j = 0; j < cs; ++j)
      for (int k = 0; k < cs; ++k) {
        if (j == k || preds[i][j].empty()) continue;
        acc += std::fabs(fn(labels[i], preds[i][j]) - fn(labels[i], preds[i][k]));
      }
  return acc / (static_cast<double>(cs) * (cs - 1));
}

inline double conditional_gap(std::span<const double> y, std::span<const double> yh,
                              std::span<const int> group, int n_groups,
                              std::span<const int> labels) {
  double best = 0;
  for (int j = 0; j < n_groups; ++j) {
    for (int k = 0; k < n_groups; ++k) {
      for (int lab : labels) {
        double pj = 0, cj = 0, pk = 0, ck = 0;
        for (size_t i = 0; i < y.size(); ++i) {
          if (y[i] != lab) continue;
          if (group[i] == j) {
            pj += yh[i] == 1 ? 1 : 0;
            cj += 1;
          }
          if (group[i] == k) {
            pk += yh[i] == 1 ? 1 : 0;
            ck += 1;
          }
        }
        if (cj == 0 || ck == 0) continue;
        best = std::max(best, std::fabs(pj / cj - pk / ck));
      }
    }
  }
  return best;
}

}  // namespace oracle
