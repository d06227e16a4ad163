#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fairattn/dataset.hpp"
#include "fairattn/schema.hpp"

namespace fairattn::metrics {

// ---- performance scores ----
// Classification takes binary labels plus hard predictions or scores;
// regression takes targets plus predicted values. All throw
// UndefinedMetricError on degenerate inputs as documented per function.

double accuracy(std::span<const double> labels, std::span<const double> hard);
double f1(std::span<const double> labels, std::span<const double> hard);
double fpr(std::span<const double> labels, std::span<const double> hard);
double fnr(std::span<const double> labels, std::span<const double> hard);
// strict pairwise form: ties contribute nothing
double auroc(std::span<const double> labels, std::span<const double> scores);
// step summation over descending unique score thresholds
double auprc(std::span<const double> labels, std::span<const double> scores);
// normalized ordered Gini: rank targets by scores, normalize by self-ranking
double gini(std::span<const double> targets, std::span<const double> scores);
double pe(std::span<const double> targets, std::span<const double> preds);
double rmse(std::span<const double> targets, std::span<const double> preds);
double mae(std::span<const double> targets, std::span<const double> preds);

// Wasserstein-1 between equal-sized samples: mean absolute difference of
// sorted order statistics.
double wasserstein1(std::span<const double> a, std::span<const double> b);

// ---- group fairness ----

struct MetricResult {
  double value = 0.0;
  std::vector<std::string> notes;  // skipped pairs/cells
};

// max over group pairs of |E(pred | group j) - E(pred | group k)|
MetricResult dpd(std::span<const double> predictions, std::span<const int> groups, int n_groups);
MetricResult eqodd(std::span<const double> labels, std::span<const double> hard,
                   std::span<const int> groups, int n_groups);
MetricResult eqopp(std::span<const double> labels, std::span<const double> hard,
                   std::span<const int> groups, int n_groups);

// ---- counterfactual (PCM) fairness ----

// preprocessed row -> score (probability for classification, value for regression)
using ScoreFn = std::function<double(std::span<const double>)>;

// predictions for partition (base_cat -> target_cat)
std::vector<double> partition_scores(const ScoreFn& score, const PerturbedDataset& pd,
                                     int base_cat, int target_cat);

// mean Wasserstein-1 across counterfactual partitions, normalized by
// C^s (C^s - 1) over ordered target pairs
MetricResult avgif(const ScoreFn& score, const PerturbedDataset& pd);

enum class GapMetric { f1, auroc, auprc, rmse, mae };

MetricResult metric_gap(const ScoreFn& score, const PerturbedDataset& pd, GapMetric which,
                        double threshold);

// ---- reports ----

struct PerformanceReport {
  Task task = Task::classification;
  double threshold = 0.5;
  double accuracy = 0, f1 = 0, fpr = 0, fnr = 0, auroc = 0, auprc = 0;
  double gini = 0, pe = 0, rmse = 0, mae = 0;
  std::vector<std::string> annotations;
  std::string to_json_text() const;
};

PerformanceReport evaluate_performance(Task task, std::span<const double> labels,
                                       std::span<const double> scores, double threshold);

struct FairnessReport {
  Task task = Task::classification;
  double dpd = 0, eqodd = 0, eqopp = 0;
  double avgif = 0;
  double f1_gap = 0, auroc_gap = 0, auprc_gap = 0;
  double rmse_gap = 0, mae_gap = 0;
  double zeta = 0;
  std::vector<std::pair<std::string, int>> partition_sizes;
  std::vector<std::string> annotations;
  std::string to_json_text() const;
};

// Runs the full fairness suite: group metrics on the natural data, PCM
// metrics on the perturbed dataset built from it.
FairnessReport evaluate_fairness(const Dataset& preprocessed, const ScoreFn& score, Task task,
                                 double threshold);

}  // namespace fairattn::metrics
