#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fairattn/dataset.hpp"
#include "fairattn/metrics.hpp"
#include "fairattn/model.hpp"

namespace fairattn {

enum class CarForm { off, cda, augmented };
enum class LambdaMode { off, fixed, automatic };

std::string to_string(CarForm f);
CarForm car_form_from_string(const std::string& s);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 256;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  LambdaMode lambda_mode = LambdaMode::automatic;
  double lambda_fixed = 0.0;
  double lambda_cap = 1e6;
  CarForm car_form = CarForm::augmented;
  uint64_t seed = 0;
};

struct EpochLoss {
  int epoch = 0;
  double perf = 0.0;
  double car = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

struct LossBreakdown {
  double perf = 0.0;
  double car = 0.0;
  double lambda = 0.0;
  double total = 0.0;
  std::vector<EpochLoss> history;
};

struct TrainedModel {
  Schema schema;
  ModelConfig model_config;
  ModelParams params;
  PreprocessStats stats;
  double threshold = 0.5;  // classification decision threshold
  LossBreakdown losses;
  TrainConfig train_config;

  // raw model output: logit for classification, value for regression
  double raw_output(std::span<const double> preprocessed_row) const;
  // probability for classification, value for regression
  double score(std::span<const double> preprocessed_row) const;
};

// score function with the layout precomputed, for evaluation loops
metrics::ScoreFn make_score_fn(const TrainedModel& tm);

// regularization weight from the first-batch losses: 10^floor(perf/car),
// clamped to [1, cap]; a vanishing CAR loss maps to the cap
double lambda_auto(double perf_first_batch, double car_first_batch, double cap);

// CAR term from counterfactual data augmentation: first-layer attention of
// the original row against each sensitive rewrite, sigma column only
diff::Value car_loss_cda(diff::Tape& tape, std::span<const double> row,
                         const ParamLeaves& leaves, const ModelLayout& layout,
                         const diff::Value* original_attention = nullptr);

// CAR term from the augmented first-layer attention matrix
diff::Value car_loss_augmented(diff::Tape& tape, diff::Value augmented_attention,
                               const ModelLayout& layout);

TrainedModel train(const Dataset& preprocessed, const PreprocessStats& stats,
                   const TrainConfig& tc, const ModelConfig& mc);

// maximizes training F1 over the grid {0.01, 0.02, ..., 0.99}
double select_threshold(const Dataset& preprocessed, const ModelParams& params,
                        const ModelConfig& config);

struct SweepRow {
  double lambda = 0.0;
  metrics::FairnessReport fairness;
};

// one training run per lambda (shared seed), fairness suite on the eval split
std::vector<SweepRow> lambda_sweep(const Dataset& train_raw, const Dataset& eval_raw,
                                   std::span<const double> lambdas, const TrainConfig& tc,
                                   const ModelConfig& mc, int max_threads = 1);

}  // namespace fairattn
