#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fairattn/schema.hpp"

namespace fairattn {

// N x p feature table bound to a Schema, plus the response vector.
// Categorical cells hold the category index; continuous cells hold reals.
struct Dataset {
  Schema schema;
  int n_rows = 0;
  std::vector<double> cells;     // row-major, n_rows * p
  std::vector<uint8_t> missing;  // parallel to cells; cleared by preprocessing
  std::vector<double> response;

  Dataset() = default;
  explicit Dataset(Schema s) : schema(std::move(s)) {}

  int n_features() const { return schema.n_features(); }
  std::span<const double> row(int r) const {
    return {cells.data() + static_cast<size_t>(r) * n_features(),
            static_cast<size_t>(n_features())};
  }
  double cell(int r, int f) const { return cells[static_cast<size_t>(r) * n_features() + f]; }
  bool cell_missing(int r, int f) const {
    return !missing.empty() && missing[static_cast<size_t>(r) * n_features() + f] != 0;
  }
  int category_at(int r, int f) const { return static_cast<int>(cell(r, f)); }
  int sensitive_category(int r) const { return category_at(r, schema.sensitive_index()); }

  void push_row(std::span<const double> vals, std::span<const uint8_t> miss, double y);
  void check() const;  // enforce invariants after construction
};

// Per-feature statistics fitted on a training split: continuous mean/scale
// for z-scoring, imputation values, and zero-variance flags.
struct PreprocessStats {
  struct Continuous {
    double mean = 0.0;
    double scale = 1.0;
    bool zero_variance = false;
  };
  std::vector<Continuous> continuous;  // indexed by feature position (unused slots for categorical)
  std::vector<int> categorical_mode;   // indexed by feature position (-1 for continuous)
};

PreprocessStats fit_preprocess(const Dataset& train);
Dataset apply_preprocess(const Dataset& ds, const PreprocessStats& stats);

// All sensitive-category rewrites of a dataset, organized by base category.
// Partition (i -> j) is the rows whose original sensitive value is category i,
// with the sensitive cell rewritten to j; the underlying rows are stored once.
struct PerturbedDataset {
  const Dataset* base = nullptr;
  std::vector<std::vector<int>> rows_by_base_category;  // indexed by base category

  int n_categories() const { return static_cast<int>(rows_by_base_category.size()); }
  int partition_size(int base_cat) const {
    return static_cast<int>(rows_by_base_category[base_cat].size());
  }
  long long total_rows() const {
    long long t = 0;
    for (const auto& g : rows_by_base_category) t += static_cast<long long>(g.size()) * n_categories();
    return t;
  }
  // materialize partition (base_cat -> target_cat) as a standalone dataset
  Dataset materialize(int base_cat, int target_cat) const;
};

PerturbedDataset perturb(const Dataset& ds);

Dataset load_csv(const std::string& path, const Schema& schema);
void save_csv(const Dataset& ds, const std::string& path);

// Generates the three-binary-feature synthetic process: two independent
// informative features, a sensitive feature correlated with the first of
// them, and a response driven by the informative pair only.
Dataset generate_synthetic(int n, uint64_t seed);

struct SplitResult {
  Dataset train;
  Dataset test;
};

// Deterministic row split; stratified by response for classification.
SplitResult split(const Dataset& ds, double train_fraction, uint64_t seed);

}  // namespace fairattn
