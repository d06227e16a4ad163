#include "fairattn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "fairattn/errors.hpp"

namespace fairattn::metrics {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_binary_pair(std::span<const double> labels, std::span<const double> preds,
                       const char* who) {
  if (labels.empty()) throw ContractViolation(std::string(who) + ": empty input");
  require(labels.size() == preds.size(), std::string(who) + ": length mismatch");
  for (double y : labels) require(y == 0.0 || y == 1.0, std::string(who) + ": labels must be 0/1");
}

struct Counts {
  long long tp = 0, fp = 0, tn = 0, fn = 0;
};

Counts confusion(std::span<const double> labels, std::span<const double> hard) {
  Counts c;
  for (size_t i = 0; i < labels.size(); ++i) {
    bool y = labels[i] == 1.0;
    bool p = hard[i] == 1.0;
    if (y && p) ++c.tp;
    else if (!y && p) ++c.fp;
    else if (y && !p) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// indices sorted ascending by key, original order within ties
std::vector<int> order_by(std::span<const double> key) {
  std::vector<int> idx(key.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return key[a] < key[b]; });
  return idx;
}

}  // namespace

double accuracy(std::span<const double> labels, std::span<const double> hard) {
  check_binary_pair(labels, hard, "accuracy");
  long long ok = 0;
  for (size_t i = 0; i < labels.size(); ++i) ok += labels[i] == hard[i] ? 1 : 0;
  return static_cast<double>(ok) / labels.size();
}

double f1(std::span<const double> labels, std::span<const double> hard) {
  check_binary_pair(labels, hard, "f1");
  Counts c = confusion(labels, hard);
  double pr = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
  double re = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
  if (pr + re == 0.0) return 0.0;
  return 2.0 * pr * re / (pr + re);
}

double fpr(std::span<const double> labels, std::span<const double> hard) {
  check_binary_pair(labels, hard, "fpr");
  Counts c = confusion(labels, hard);
  if (c.fp + c.tn == 0) throw UndefinedMetricError("fpr: no negative labels");
  return static_cast<double>(c.fp) / (c.fp + c.tn);
}

double fnr(std::span<const double> labels, std::span<const double> hard) {
  check_binary_pair(labels, hard, "fnr");
  Counts c = confusion(labels, hard);
  if (c.tp + c.fn == 0) throw UndefinedMetricError("fnr: no positive labels");
  return static_cast<double>(c.fn) / (c.tp + c.fn);
}

double auroc(std::span<const double> labels, std::span<const double> scores) {
  check_binary_pair(labels, scores, "auroc");
  long long pos = 0, neg = 0;
  for (double y : labels) (y == 1.0 ? pos : neg)++;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("auroc: needs both classes");
  std::vector<int> idx = order_by(scores);
  // count (positive, negative) pairs with score_pos strictly greater
  long long hits = 0;
  long long neg_below = 0;
  size_t i = 0;
  while (i < idx.size()) {
    size_t j = i;
    long long group_pos = 0, group_neg = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1.0 ? group_pos : group_neg)++;
      ++j;
    }
    hits += group_pos * neg_below;  // ties contribute nothing
    neg_below += group_neg;
    i = j;
  }
  return static_cast<double>(hits) / (static_cast<double>(pos) * static_cast<double>(neg));
}

double auprc(std::span<const double> labels, std::span<const double> scores) {
  check_binary_pair(labels, scores, "auprc");
  long long pos = 0;
  for (double y : labels) pos += y == 1.0 ? 1 : 0;
  if (pos == 0) throw UndefinedMetricError("auprc: no positive labels");
  std::vector<int> idx = order_by(scores);
  std::reverse(idx.begin(), idx.end());  // descending thresholds
  double area = 0.0;
  double recall_prev = 0.0;
  long long tp = 0, fp = 0;
  size_t i = 0;
  while (i < idx.size()) {
    size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1.0 ? tp : fp)++;
      ++j;
    }
    double precision = static_cast<double>(tp) / (tp + fp);
    double recall = static_cast<double>(tp) / pos;
    area += (recall - recall_prev) * precision;
    recall_prev = recall;
    i = j;
  }
  return area;
}

namespace {

// ordered Gini sum: values sorted ascending by key, weighted by (2n - N - 1)
double ordered_gini(std::span<const double> values, std::span<const double> key) {
  std::vector<int> idx = order_by(key);
  const auto n = static_cast<long long>(values.size());
  double total = 0.0;
  for (double v : values) total += v;
  double acc = 0.0;
  for (long long i = 0; i < n; ++i)
    acc += static_cast<double>(2 * (i + 1) - n - 1) * values[idx[i]];
  return acc / (static_cast<double>(n) * total);
}

}  // namespace

double gini(std::span<const double> targets, std::span<const double> scores) {
  if (targets.empty()) throw ContractViolation("gini: empty input");
  require(targets.size() == scores.size(), "gini: length mismatch");
  double total = 0.0;
  for (double y : targets) total += y;
  if (total <= 0.0) throw UndefinedMetricError("gini: target sum must be positive");
  double denom = ordered_gini(targets, targets);
  if (denom == 0.0) throw UndefinedMetricError("gini: constant targets");
  return ordered_gini(targets, scores) / denom;
}

double pe(std::span<const double> targets, std::span<const double> preds) {
  if (targets.empty()) throw ContractViolation("pe: empty input");
  require(targets.size() == preds.size(), "pe: length mismatch");
  double sy = 0.0, sp = 0.0;
  for (size_t i = 0; i < targets.size(); ++i) {
    sy += targets[i];
    sp += preds[i];
  }
  if (sy == 0.0) throw UndefinedMetricError("pe: target sum is zero");
  return (sp - sy) / sy;
}

double rmse(std::span<const double> targets, std::span<const double> preds) {
  if (targets.empty()) throw ContractViolation("rmse: empty input");
  require(targets.size() == preds.size(), "rmse: length mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < targets.size(); ++i) {
    double d = preds[i] - targets[i];
    acc += d * d;
  }
  return std::sqrt(acc / targets.size());
}

double mae(std::span<const double> targets, std::span<const double> preds) {
  if (targets.empty()) throw ContractViolation("mae: empty input");
  require(targets.size() == preds.size(), "mae: length mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < targets.size(); ++i) acc += std::fabs(preds[i] - targets[i]);
  return acc / targets.size();
}

double wasserstein1(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "wasserstein1: samples must have equal size");
  require(!a.empty(), "wasserstein1: empty samples");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double acc = 0.0;
  for (size_t i = 0; i < sa.size(); ++i) acc += std::fabs(sa[i] - sb[i]);
  return acc / sa.size();
}

MetricResult dpd(std::span<const double> predictions, std::span<const int> groups, int n_groups) {
  require(predictions.size() == groups.size(), "dpd: length mismatch");
  require(n_groups >= 2, "dpd: need at least two groups");
  std::vector<double> sum(n_groups, 0.0);
  std::vector<long long> count(n_groups, 0);
  for (size_t i = 0; i < predictions.size(); ++i) {
    sum[groups[i]] += predictions[i];
    ++count[groups[i]];
  }
  MetricResult res;
  bool any = false;
  for (int j = 0; j < n_groups; ++j) {
    for (int k = j + 1; k < n_groups; ++k) {
      if (count[j] == 0 || count[k] == 0) {
        res.notes.push_back("dpd: pair (" + std::to_string(j) + "," + std::to_string(k) +
                            ") skipped, empty group");
        continue;
      }
      double gap = std::fabs(sum[j] / count[j] - sum[k] / count[k]);
      res.value = std::max(res.value, gap);
      any = true;
    }
  }
  if (!any) throw UndefinedMetricError("dpd: all group pairs empty");
  return res;
}

namespace {

MetricResult conditional_rate_gap(std::span<const double> labels, std::span<const double> hard,
                                  std::span<const int> groups, int n_groups,
                                  std::span<const double> condition_labels, const char* who) {
  require(labels.size() == hard.size() && labels.size() == groups.size(),
          std::string(who) + ": length mismatch");
  require(n_groups >= 2, std::string(who) + ": need at least two groups");
  // rate[g][y] = P(hard = 1 | group = g, label = y)
  std::vector<std::vector<double>> pos(n_groups, std::vector<double>(2, 0.0));
  std::vector<std::vector<long long>> cnt(n_groups, std::vector<long long>(2, 0));
  for (size_t i = 0; i < labels.size(); ++i) {
    int y = labels[i] == 1.0 ? 1 : 0;
    ++cnt[groups[i]][y];
    pos[groups[i]][y] += hard[i] == 1.0 ? 1.0 : 0.0;
  }
  MetricResult res;
  bool any = false;
  for (int j = 0; j < n_groups; ++j) {
    for (int k = j + 1; k < n_groups; ++k) {
      for (double yv : condition_labels) {
        int y = static_cast<int>(yv);
        if (cnt[j][y] == 0 || cnt[k][y] == 0) {
          res.notes.push_back(std::string(who) + ": pair (" + std::to_string(j) + "," +
                              std::to_string(k) + ") at y=" + std::to_string(y) +
                              " skipped, empty cell");
          continue;
        }
        double gap = std::fabs(pos[j][y] / cnt[j][y] - pos[k][y] / cnt[k][y]);
        res.value = std::max(res.value, gap);
        any = true;
      }
    }
  }
  if (!any) throw UndefinedMetricError(std::string(who) + ": no valid group pairs");
  return res;
}

}  // namespace

MetricResult eqodd(std::span<const double> labels, std::span<const double> hard,
                   std::span<const int> groups, int n_groups) {
  const double both[2] = {0.0, 1.0};
  return conditional_rate_gap(labels, hard, groups, n_groups, both, "eqodd");
}

MetricResult eqopp(std::span<const double> labels, std::span<const double> hard,
                   std::span<const int> groups, int n_groups) {
  const double pos_only[1] = {1.0};
  return conditional_rate_gap(labels, hard, groups, n_groups, pos_only, "eqopp");
}

std::vector<double> partition_scores(const ScoreFn& score, const PerturbedDataset& pd,
                                     int base_cat, int target_cat) {
  const Dataset& base = *pd.base;
  int sigma = base.schema.sensitive_index();
  std::vector<double> buf(base.n_features());
  std::vector<double> out;
  out.reserve(pd.rows_by_base_category[base_cat].size());
  for (int r : pd.rows_by_base_category[base_cat]) {
    auto row = base.row(r);
    std::copy(row.begin(), row.end(), buf.begin());
    buf[sigma] = static_cast<double>(target_cat);
    out.push_back(score(buf));
  }
  return out;
}

MetricResult avgif(const ScoreFn& score, const PerturbedDataset& pd) {
  int cs = pd.n_categories();
  require(cs >= 2, "avgif: need at least two sensitive categories");
  double zeta = static_cast<double>(cs) * (cs - 1);
  MetricResult res;
  double acc = 0.0;
  for (int i = 0; i < cs; ++i) {
    if (pd.partition_size(i) == 0) {
      res.notes.push_back("avgif: base category " + std::to_string(i) + " empty, skipped");
      continue;
    }
    std::vector<std::vector<double>> scores(cs);
    for (int j = 0; j < cs; ++j) {
      scores[j] = partition_scores(score, pd, i, j);
      std::sort(scores[j].begin(), scores[j].end());
    }
    for (int j = 0; j < cs; ++j) {
      for (int k = 0; k < cs; ++k) {
        if (j == k) continue;
        double w1 = 0.0;
        for (size_t t = 0; t < scores[j].size(); ++t) w1 += std::fabs(scores[j][t] - scores[k][t]);
        acc += w1 / scores[j].size();
      }
    }
  }
  res.value = acc / zeta;
  return res;
}

MetricResult metric_gap(const ScoreFn& score, const PerturbedDataset& pd, GapMetric which,
                        double threshold) {
  int cs = pd.n_categories();
  require(cs >= 2, "metric_gap: need at least two sensitive categories");
  double zeta = static_cast<double>(cs) * (cs - 1);
  const Dataset& base = *pd.base;
  MetricResult res;
  double acc = 0.0;
  bool any = false;
  auto name = [&]() -> const char* {
    switch (which) {
      case GapMetric::f1: return "f1_gap";
      case GapMetric::auroc: return "auroc_gap";
      case GapMetric::auprc: return "auprc_gap";
      case GapMetric::rmse: return "rmse_gap";
      case GapMetric::mae: return "mae_gap";
    }
    return "gap";
  };
  for (int i = 0; i < cs; ++i) {
    if (pd.partition_size(i) == 0) {
      res.notes.push_back(std::string(name()) + ": base category " + std::to_string(i) +
                          " empty, skipped");
      continue;
    }
    // labels are carried unchanged under perturbation
    std::vector<double> labels;
    labels.reserve(pd.partition_size(i));
    for (int r : pd.rows_by_base_category[i]) labels.push_back(base.response[r]);

    std::vector<double> metric_value(cs, kNaN);
    for (int j = 0; j < cs; ++j) {
      std::vector<double> sc = partition_scores(score, pd, i, j);
      try {
        switch (which) {
          case GapMetric::f1: {
            std::vector<double> hard(sc.size());
            for (size_t t = 0; t < sc.size(); ++t) hard[t] = sc[t] >= threshold ? 1.0 : 0.0;
            metric_value[j] = f1(labels, hard);
            break;
          }
          case GapMetric::auroc: metric_value[j] = auroc(labels, sc); break;
          case GapMetric::auprc: metric_value[j] = auprc(labels, sc); break;
          case GapMetric::rmse: metric_value[j] = rmse(labels, sc); break;
          case GapMetric::mae: metric_value[j] = mae(labels, sc); break;
        }
      } catch (const UndefinedMetricError& e) {
        res.notes.push_back(std::string(name()) + ": partition (" + std::to_string(i) + "->" +
                            std::to_string(j) + ") undefined: " + e.what());
      }
    }
    for (int j = 0; j < cs; ++j) {
      for (int k = 0; k < cs; ++k) {
        if (j == k) continue;
        if (std::isnan(metric_value[j]) || std::isnan(metric_value[k])) continue;
        acc += std::fabs(metric_value[j] - metric_value[k]);
        any = true;
      }
    }
  }
  if (!any) throw UndefinedMetricError(std::string("metric_gap: no defined partition pairs"));
  res.value = acc / zeta;
  return res;
}

namespace {

nlohmann::json num_or_null(double x) {
  if (std::isnan(x)) return nullptr;
  return x;
}

}  // namespace

std::string PerformanceReport::to_json_text() const {
  nlohmann::json doc;
  doc["task"] = to_string(task);
  if (task == Task::classification) {
    doc["threshold"] = threshold;
    doc["Accuracy"] = num_or_null(accuracy);
    doc["F1"] = num_or_null(f1);
    doc["FPR"] = num_or_null(fpr);
    doc["FNR"] = num_or_null(fnr);
    doc["AUPRC"] = num_or_null(auprc);
    doc["AUROC"] = num_or_null(auroc);
  } else {
    doc["Gini"] = num_or_null(gini);
    doc["PE"] = num_or_null(pe);
    doc["RMSE"] = num_or_null(rmse);
    doc["MAE"] = num_or_null(mae);
  }
  doc["annotations"] = annotations;
  return doc.dump(2) + "\n";
}

PerformanceReport evaluate_performance(Task task, std::span<const double> labels,
                                       std::span<const double> scores, double threshold) {
  PerformanceReport rep;
  rep.task = task;
  rep.threshold = threshold;
  auto guarded = [&](const char* key, auto&& fn) -> double {
    try {
      return fn();
    } catch (const UndefinedMetricError& e) {
      rep.annotations.push_back(std::string(key) + ": " + e.what());
      return kNaN;
    }
  };
  if (task == Task::classification) {
    std::vector<double> hard(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) hard[i] = scores[i] >= threshold ? 1.0 : 0.0;
    rep.accuracy = guarded("Accuracy", [&] { return accuracy(labels, hard); });
    rep.f1 = guarded("F1", [&] { return f1(labels, hard); });
    rep.fpr = guarded("FPR", [&] { return fpr(labels, hard); });
    rep.fnr = guarded("FNR", [&] { return fnr(labels, hard); });
    rep.auroc = guarded("AUROC", [&] { return auroc(labels, scores); });
    rep.auprc = guarded("AUPRC", [&] { return auprc(labels, scores); });
  } else {
    rep.gini = guarded("Gini", [&] { return gini(labels, scores); });
    rep.pe = guarded("PE", [&] { return pe(labels, scores); });
    rep.rmse = guarded("RMSE", [&] { return rmse(labels, scores); });
    rep.mae = guarded("MAE", [&] { return mae(labels, scores); });
  }
  return rep;
}

std::string FairnessReport::to_json_text() const {
  nlohmann::json doc;
  doc["task"] = to_string(task);
  doc["DPD"] = num_or_null(dpd);
  if (task == Task::classification) {
    doc["EqOdd"] = num_or_null(eqodd);
    doc["EqOpp"] = num_or_null(eqopp);
  }
  doc["AvgIF"] = num_or_null(avgif);
  if (task == Task::classification) {
    doc["F1 Gap"] = num_or_null(f1_gap);
    doc["AUROC Gap"] = num_or_null(auroc_gap);
    doc["AUPRC Gap"] = num_or_null(auprc_gap);
  } else {
    doc["RMSE Gap"] = num_or_null(rmse_gap);
    doc["MAE Gap"] = num_or_null(mae_gap);
  }
  doc["zeta"] = zeta;
  nlohmann::json sizes;
  for (const auto& [key, n] : partition_sizes) sizes[key] = n;
  doc["partition_sizes"] = std::move(sizes);
  doc["annotations"] = annotations;
  return doc.dump(2) + "\n";
}

FairnessReport evaluate_fairness(const Dataset& preprocessed, const ScoreFn& score, Task task,
                                 double threshold) {
  FairnessReport rep;
  rep.task = task;
  int cs = preprocessed.schema.sensitive_cardinality();
  rep.zeta = static_cast<double>(cs) * (cs - 1);

  std::vector<double> scores(preprocessed.n_rows);
  std::vector<int> groups(preprocessed.n_rows);
  for (int r = 0; r < preprocessed.n_rows; ++r) {
    scores[r] = score(preprocessed.row(r));
    groups[r] = preprocessed.sensitive_category(r);
  }

  auto guarded = [&](const char* key, auto&& fn) -> double {
    try {
      MetricResult mr = fn();
      for (auto& n : mr.notes) rep.annotations.push_back(n);
      return mr.value;
    } catch (const UndefinedMetricError& e) {
      rep.annotations.push_back(std::string(key) + ": " + e.what());
      return kNaN;
    }
  };

  if (task == Task::classification) {
    std::vector<double> hard(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) hard[i] = scores[i] >= threshold ? 1.0 : 0.0;
    rep.dpd = guarded("DPD", [&] { return dpd(hard, groups, cs); });
    rep.eqodd = guarded("EqOdd", [&] { return eqodd(preprocessed.response, hard, groups, cs); });
    rep.eqopp = guarded("EqOpp", [&] { return eqopp(preprocessed.response, hard, groups, cs); });
  } else {
    rep.dpd = guarded("DPD", [&] { return dpd(scores, groups, cs); });
    rep.eqodd = kNaN;
    rep.eqopp = kNaN;
  }

  PerturbedDataset pd = perturb(preprocessed);
  for (int i = 0; i < cs; ++i)
    for (int j = 0; j < cs; ++j)
      rep.partition_sizes.emplace_back(
          preprocessed.schema.feature(preprocessed.schema.sensitive_index()).categories[i] + "->" +
              preprocessed.schema.feature(preprocessed.schema.sensitive_index()).categories[j],
          pd.partition_size(i));

  rep.avgif = guarded("AvgIF", [&] { return avgif(score, pd); });
  if (task == Task::classification) {
    rep.f1_gap = guarded("F1 Gap", [&] { return metric_gap(score, pd, GapMetric::f1, threshold); });
    rep.auroc_gap =
        guarded("AUROC Gap", [&] { return metric_gap(score, pd, GapMetric::auroc, threshold); });
    rep.auprc_gap =
        guarded("AUPRC Gap", [&] { return metric_gap(score, pd, GapMetric::auprc, threshold); });
  } else {
    rep.rmse_gap =
        guarded("RMSE Gap", [&] { return metric_gap(score, pd, GapMetric::rmse, threshold); });
    rep.mae_gap =
        guarded("MAE Gap", [&] { return metric_gap(score, pd, GapMetric::mae, threshold); });
  }
  return rep;
}

}  // namespace fairattn::metrics
