#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fairattn/dataset.hpp"
#include "fairattn/diff.hpp"
#include "fairattn/schema.hpp"

namespace fairattn {

inline constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
  Task task = Task::classification;
  int n_encoder_layers = 1;
  bool residual_attention = false;
  std::vector<int> head_hidden = {64, 32};
  bool removal_baseline = false;  // drop the sensitive feature entirely
};

// How schema features map onto embedding slots. Under removal_baseline the
// sensitive feature has no slot and the one-hot layout excludes its block.
struct ModelLayout {
  int width = 0;     // number of embedding slots
  int oh_width = 0;  // one-hot slots across used categorical features
  int n_cat = 0;
  int n_con = 0;
  std::vector<int> slot_feature;    // schema feature per slot
  std::vector<int> slot_cat_index;  // index among used categoricals, -1 if continuous
  std::vector<int> slot_con_index;  // index among used continuous, -1 if categorical
  std::vector<int> cat_offsets;     // per used categorical: one-hot start, plus end sentinel
  std::vector<int> cat_slot;        // slot of each used categorical
  int sigma_slot = -1;              // slot of the sensitive feature, -1 under removal
  int sigma_cat_index = -1;         // its index among used categoricals
  int sensitive_cardinality = 0;
};

ModelLayout make_layout(const Schema& schema, const ModelConfig& config);

struct EncoderLayerParams {
  diff::Param attn_norm_w, attn_norm_b;
  diff::Param ffn_norm_w, ffn_norm_b;
  diff::Param ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

struct DenseLayerParams {
  diff::Param w, b;
};

// Every learnable array of the model, keyed by role. Enumeration order from
// all() is fixed; the optimizer, serializer, and gradient checks rely on it.
struct ModelParams {
  diff::Param cat_w1, cat_b1;  // one-hot elementwise stage
  diff::Param cat_w2, cat_b2;  // per-feature aggregation stage
  diff::Param con_w1, con_b1, con_w2, con_b2;
  std::vector<EncoderLayerParams> encoder;
  std::vector<DenseLayerParams> head;

  std::vector<diff::Param*> all();
  std::vector<const diff::Param*> all() const;
  long long total_size() const;
  void zero_grads();
};

ModelParams init_params(const Schema& schema, const ModelConfig& config, uint64_t seed);

// ---- plain (inference) path ----

struct LayerTrace {
  Array normalized;  // layer-norm output feeding the attention
  Array scores;      // pre-softmax
  Array attention;   // post-softmax
  Array attention_out;
  Array block_out;
};

struct ForwardTrace {
  Array embedding;
  std::vector<LayerTrace> layers;
  double prediction = 0.0;  // logit for classification
};

// Per-feature embeddings; outputs follow the layout's slot order.
void embed_categorical(std::span<const double> row, const ModelParams& params,
                       const ModelLayout& layout, double* out /* n_cat */);
void embed_continuous(std::span<const double> row, const ModelParams& params,
                      const ModelLayout& layout, double* out /* n_con */);
void embed(std::span<const double> row, const ModelParams& params, const ModelLayout& layout,
           double* out /* width */);

struct AttentionResult {
  Array normalized, scores, attention, output;
};

AttentionResult attention_layer(const Array& e_in, const EncoderLayerParams& layer,
                                int scale_dim, bool residual);
Array encoder_block(const Array& e_in, const EncoderLayerParams& layer, int scale_dim,
                    bool residual, LayerTrace* trace = nullptr);

double forward(std::span<const double> row, const ModelParams& params, const Schema& schema,
               const ModelConfig& config, ForwardTrace* trace = nullptr);
// same, with the layout precomputed (hot loops over many rows)
double forward(std::span<const double> row, const ModelParams& params, const ModelLayout& layout,
               const ModelConfig& config, ForwardTrace* trace = nullptr);

// ---- tape (training) path ----

enum class Phase { train, infer };

struct ParamLeaves {
  diff::Value cat_w1, cat_b1, cat_w2, cat_b2;
  diff::Value con_w1, con_b1, con_w2, con_b2;
  struct Enc {
    diff::Value attn_norm_w, attn_norm_b, ffn_norm_w, ffn_norm_b;
    diff::Value ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  };
  std::vector<Enc> encoder;
  std::vector<std::pair<diff::Value, diff::Value>> head;
  // sensitive-feature parameter views used by the augmented path
  diff::Value sen_w1, sen_b1, sen_w2, sen_b2;
  // counterfactual category slot activations, shared across a batch
  diff::Value sen_slots;
  bool sensitive_bound = false;
};

ParamLeaves bind_params(diff::Tape& tape, ModelParams& params);
// Pre-slices the sensitive feature's parameter blocks and evaluates the
// counterfactual slot activations (they depend only on parameters, so one
// subgraph serves every row of a batch).
void bind_sensitive(diff::Tape& tape, ParamLeaves& leaves, const ModelLayout& layout);

struct GraphForward {
  diff::Value prediction;       // scalar; logit for classification
  diff::Value first_scores;     // layer-1 pre-softmax matrix
  diff::Value first_attention;  // layer-1 post-softmax matrix
};

diff::Value embed_graph(diff::Tape& tape, std::span<const double> row,
                        const ParamLeaves& leaves, const ModelLayout& layout);
GraphForward forward_graph(diff::Tape& tape, std::span<const double> row,
                           const ParamLeaves& leaves, const ModelLayout& layout,
                           const ModelConfig& config);

// Training-only: embedding extended with one slot per sensitive category,
// computed from the sensitive feature's own shared parameters.
diff::Value sen_embed_augmented(diff::Tape& tape, std::span<const double> row,
                                const ParamLeaves& leaves, const ModelLayout& layout);
GraphForward forward_augmented(diff::Tape& tape, std::span<const double> row,
                               const ParamLeaves& leaves, const ModelLayout& layout,
                               const ModelConfig& config, Phase phase);

// ---- interpretability ----

struct SignificanceProfile {
  std::vector<std::string> feature_names;       // slot order
  Array mean_scores;                            // layer-1 pre-softmax mean
  Array mean_attention;                         // layer-1 post-softmax mean
  std::vector<Array> mean_scores_by_layer;      // filled when all_layers is set
  std::vector<Array> mean_attention_by_layer;
  std::vector<int> ranking;                     // slots by descending diagonal

  double diagonal(int slot) const { return mean_scores.at(slot, slot); }
  double pair_weight(int a, int b) const {
    return 0.5 * (mean_scores.at(a, b) + mean_scores.at(b, a));
  }
};

SignificanceProfile significance(const Dataset& ds, const ModelParams& params,
                                 const ModelConfig& config, bool all_layers = false);

}  // namespace fairattn
