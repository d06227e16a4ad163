#include "fairattn/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fairattn/kernels.hpp"
#include "fairattn/rng.hpp"

namespace fairattn {

ModelLayout make_layout(const Schema& schema, const ModelConfig& config) {
  ModelLayout lay;
  for (int f = 0; f < schema.n_features(); ++f) {
    if (config.removal_baseline && f == schema.sensitive_index()) continue;
    const FeatureSpec& spec = schema.feature(f);
    int slot = lay.width++;
    lay.slot_feature.push_back(f);
    if (spec.kind == FeatureKind::categorical) {
      lay.slot_cat_index.push_back(lay.n_cat);
      lay.slot_con_index.push_back(-1);
      lay.cat_offsets.push_back(lay.oh_width);
      lay.cat_slot.push_back(slot);
      if (f == schema.sensitive_index()) {
        lay.sigma_slot = slot;
        lay.sigma_cat_index = lay.n_cat;
      }
      lay.oh_width += spec.cardinality();
      ++lay.n_cat;
    } else {
      lay.slot_cat_index.push_back(-1);
      lay.slot_con_index.push_back(lay.n_con);
      ++lay.n_con;
    }
  }
  lay.cat_offsets.push_back(lay.oh_width);
  lay.sensitive_cardinality = schema.sensitive_cardinality();
  require(lay.width >= 2, "model: need at least two embedding slots");
  return lay;
}

std::vector<diff::Param*> ModelParams::all() {
  std::vector<diff::Param*> out = {&cat_w1, &cat_b1, &cat_w2, &cat_b2,
                                   &con_w1, &con_b1, &con_w2, &con_b2};
  for (auto& l : encoder) {
    out.push_back(&l.attn_norm_w);
    out.push_back(&l.attn_norm_b);
    out.push_back(&l.ffn_norm_w);
    out.push_back(&l.ffn_norm_b);
    out.push_back(&l.ffn_w1);
    out.push_back(&l.ffn_b1);
    out.push_back(&l.ffn_w2);
    out.push_back(&l.ffn_b2);
  }
  for (auto& h : head) {
    out.push_back(&h.w);
    out.push_back(&h.b);
  }
  return out;
}

std::vector<const diff::Param*> ModelParams::all() const {
  auto mutable_all = const_cast<ModelParams*>(this)->all();
  return {mutable_all.begin(), mutable_all.end()};
}

long long ModelParams::total_size() const {
  long long n = 0;
  for (const diff::Param* p : all()) n += p->size();
  return n;
}

void ModelParams::zero_grads() {
  for (diff::Param* p : all()) p->zero_grad();
}

ModelParams init_params(const Schema& schema, const ModelConfig& config, uint64_t seed) {
  require(config.n_encoder_layers >= 1, "ModelConfig: need at least one encoder layer");
  for (int h : config.head_hidden) require(h >= 1, "ModelConfig: head sizes must be positive");

  ModelLayout lay = make_layout(schema, config);
  Rng rng = Rng::substream(seed, "init");
  auto uniform_fill = [&](Array& a, double half_range) {
    for (auto& x : a.v) x = rng.uniform(-half_range, half_range);
  };

  ModelParams mp;
  mp.cat_w1 = diff::Param("cat_w1", Array::zeros(lay.oh_width));
  mp.cat_b1 = diff::Param("cat_b1", Array::zeros(lay.oh_width));
  mp.cat_w2 = diff::Param("cat_w2", Array::zeros(lay.oh_width));
  mp.cat_b2 = diff::Param("cat_b2", Array::zeros(lay.n_cat));
  mp.con_w1 = diff::Param("con_w1", Array::zeros(lay.n_con));
  mp.con_b1 = diff::Param("con_b1", Array::zeros(lay.n_con));
  mp.con_w2 = diff::Param("con_w2", Array::zeros(lay.n_con));
  mp.con_b2 = diff::Param("con_b2", Array::zeros(lay.n_con));
  uniform_fill(mp.cat_w1.value, 0.5);
  uniform_fill(mp.cat_w2.value, 0.5);
  uniform_fill(mp.con_w1.value, 0.5);
  uniform_fill(mp.con_w2.value, 0.5);

  for (int l = 0; l < config.n_encoder_layers; ++l) {
    std::string tag = "enc" + std::to_string(l) + ".";
    EncoderLayerParams lp;
    lp.attn_norm_w = diff::Param(tag + "attn_norm_w", Array::full(lay.width, 1, 1.0));
    lp.attn_norm_b = diff::Param(tag + "attn_norm_b", Array::zeros(lay.width));
    lp.ffn_norm_w = diff::Param(tag + "ffn_norm_w", Array::full(lay.width, 1, 1.0));
    lp.ffn_norm_b = diff::Param(tag + "ffn_norm_b", Array::zeros(lay.width));
    lp.ffn_w1 = diff::Param(tag + "ffn_w1", Array::zeros(lay.width));
    lp.ffn_b1 = diff::Param(tag + "ffn_b1", Array::zeros(lay.width));
    lp.ffn_w2 = diff::Param(tag + "ffn_w2", Array::zeros(lay.width));
    lp.ffn_b2 = diff::Param(tag + "ffn_b2", Array::zeros(lay.width));
    uniform_fill(lp.ffn_w1.value, 0.5);
    uniform_fill(lp.ffn_w2.value, 0.5);
    mp.encoder.push_back(std::move(lp));
  }

  int fan_in = lay.width;
  std::vector<int> widths = config.head_hidden;
  widths.push_back(1);
  for (size_t k = 0; k < widths.size(); ++k) {
    std::string tag = "head" + std::to_string(k) + ".";
    DenseLayerParams dl;
    dl.w = diff::Param(tag + "w", Array::zeros(widths[k], fan_in));
    dl.b = diff::Param(tag + "b", Array::zeros(widths[k]));
    double a = std::sqrt(6.0 / (fan_in + widths[k]));
    uniform_fill(dl.w.value, a);
    mp.head.push_back(std::move(dl));
    fan_in = widths[k];
  }
  return mp;
}

// ---- plain path ----

void embed_categorical(std::span<const double> row, const ModelParams& params,
                       const ModelLayout& layout, double* out) {
  const auto& w1 = params.cat_w1.value.v;
  const auto& b1 = params.cat_b1.value.v;
  const auto& w2 = params.cat_w2.value.v;
  const auto& b2 = params.cat_b2.value.v;
  for (int k = 0; k < layout.n_cat; ++k) {
    int feature = layout.slot_feature[layout.cat_slot[k]];
    int cat = static_cast<int>(row[feature]);
    int begin = layout.cat_offsets[k];
    int end = layout.cat_offsets[k + 1];
    require(cat >= 0 && cat < end - begin, "embed_categorical: category index out of range");
    double acc = 0.0;
    for (int j = begin; j < end; ++j) {
      double oh = (j - begin == cat) ? 1.0 : 0.0;
      acc += w2[j] * kern::gelu(w1[j] * oh + b1[j]);
    }
    out[k] = acc + b2[k];
  }
}

void embed_continuous(std::span<const double> row, const ModelParams& params,
                      const ModelLayout& layout, double* out) {
  const auto& w1 = params.con_w1.value.v;
  const auto& b1 = params.con_b1.value.v;
  const auto& w2 = params.con_w2.value.v;
  const auto& b2 = params.con_b2.value.v;
  int k = 0;
  for (int slot = 0; slot < layout.width; ++slot) {
    if (layout.slot_con_index[slot] < 0) continue;
    double x = row[layout.slot_feature[slot]];
    out[k] = w2[k] * kern::gelu(w1[k] * x + b1[k]) + b2[k];
    ++k;
  }
}

void embed(std::span<const double> row, const ModelParams& params, const ModelLayout& layout,
           double* out) {
  std::vector<double> cat(layout.n_cat), con(layout.n_con);
  if (layout.n_cat > 0) embed_categorical(row, params, layout, cat.data());
  if (layout.n_con > 0) embed_continuous(row, params, layout, con.data());
  for (int slot = 0; slot < layout.width; ++slot)
    out[slot] = layout.slot_cat_index[slot] >= 0 ? cat[layout.slot_cat_index[slot]]
                                                 : con[layout.slot_con_index[slot]];
}

AttentionResult attention_layer(const Array& e_in, const EncoderLayerParams& layer,
                                int scale_dim, bool residual) {
  require(scale_dim >= 1, "attention_layer: scale_dim must be positive");
  int k = e_in.rows;
  AttentionResult res;
  res.normalized = Array::zeros(k);
  double mu = 0.0, inv = 0.0;
  kern::layer_norm(e_in.v.data(), k, layer.attn_norm_w.value.v.data(),
                   layer.attn_norm_b.value.v.data(), kLayerNormEps, res.normalized.v.data(),
                   &mu, &inv);
  res.scores = Array::zeros(k, k);
  kern::scaled_self_outer(res.normalized.v.data(), k, std::sqrt(static_cast<double>(scale_dim)),
                          res.scores.v.data());
  res.attention = Array::zeros(k, k);
  for (int r = 0; r < k; ++r)
    kern::softmax_row(res.scores.v.data() + static_cast<size_t>(r) * k, k,
                      res.attention.v.data() + static_cast<size_t>(r) * k);
  res.output = Array::zeros(k);
  kern::matvec(res.attention.v.data(), k, k, res.normalized.v.data(), res.output.v.data());
  if (residual)
    for (int i = 0; i < k; ++i) res.output.v[i] += e_in.v[i];
  return res;
}

Array encoder_block(const Array& e_in, const EncoderLayerParams& layer, int scale_dim,
                    bool residual, LayerTrace* trace) {
  AttentionResult attn = attention_layer(e_in, layer, scale_dim, residual);
  int k = e_in.rows;
  Array h = Array::zeros(k);
  double mu = 0.0, inv = 0.0;
  kern::layer_norm(attn.output.v.data(), k, layer.ffn_norm_w.value.v.data(),
                   layer.ffn_norm_b.value.v.data(), kLayerNormEps, h.v.data(), &mu, &inv);
  Array out = Array::zeros(k);
  const auto& w1 = layer.ffn_w1.value.v;
  const auto& b1 = layer.ffn_b1.value.v;
  const auto& w2 = layer.ffn_w2.value.v;
  const auto& b2 = layer.ffn_b2.value.v;
  for (int i = 0; i < k; ++i) {
    double f = w2[i] * kern::gelu(w1[i] * h.v[i] + b1[i]) + b2[i];
    out.v[i] = attn.output.v[i] + f;
  }
  if (trace) {
    trace->normalized = std::move(attn.normalized);
    trace->scores = std::move(attn.scores);
    trace->attention = std::move(attn.attention);
    trace->attention_out = std::move(attn.output);
    trace->block_out = out;
  }
  return out;
}

namespace {

double head_forward(const Array& x_in, const ModelParams& params) {
  Array x = x_in;
  for (size_t k = 0; k < params.head.size(); ++k) {
    const Array& w = params.head[k].w.value;
    const Array& b = params.head[k].b.value;
    Array y = Array::zeros(w.rows);
    kern::matvec(w.v.data(), w.rows, w.cols, x.v.data(), y.v.data());
    for (int i = 0; i < y.rows; ++i) y.v[i] += b.v[i];
    if (k + 1 < params.head.size())
      for (auto& e : y.v) e = kern::gelu(e);
    x = std::move(y);
  }
  require(x.is_scalar(), "head: final layer must produce a scalar");
  return x.v[0];
}

}  // namespace

double forward(std::span<const double> row, const ModelParams& params, const Schema& schema,
               const ModelConfig& config, ForwardTrace* trace) {
  return forward(row, params, make_layout(schema, config), config, trace);
}

double forward(std::span<const double> row, const ModelParams& params, const ModelLayout& layout,
               const ModelConfig& config, ForwardTrace* trace) {
  Array e = Array::zeros(layout.width);
  embed(row, params, layout, e.v.data());
  if (trace) {
    trace->embedding = e;
    trace->layers.resize(config.n_encoder_layers);
  }
  for (int l = 0; l < config.n_encoder_layers; ++l)
    e = encoder_block(e, params.encoder[l], layout.width, config.residual_attention,
                      trace ? &trace->layers[l] : nullptr);
  double pred = head_forward(e, params);
  if (trace) trace->prediction = pred;
  return pred;
}

// ---- tape path ----

ParamLeaves bind_params(diff::Tape& tape, ModelParams& params) {
  ParamLeaves pl;
  pl.cat_w1 = tape.param(params.cat_w1);
  pl.cat_b1 = tape.param(params.cat_b1);
  pl.cat_w2 = tape.param(params.cat_w2);
  pl.cat_b2 = tape.param(params.cat_b2);
  if (params.con_w1.size() > 0) {
    pl.con_w1 = tape.param(params.con_w1);
    pl.con_b1 = tape.param(params.con_b1);
    pl.con_w2 = tape.param(params.con_w2);
    pl.con_b2 = tape.param(params.con_b2);
  }
  for (auto& l : params.encoder) {
    ParamLeaves::Enc e;
    e.attn_norm_w = tape.param(l.attn_norm_w);
    e.attn_norm_b = tape.param(l.attn_norm_b);
    e.ffn_norm_w = tape.param(l.ffn_norm_w);
    e.ffn_norm_b = tape.param(l.ffn_norm_b);
    e.ffn_w1 = tape.param(l.ffn_w1);
    e.ffn_b1 = tape.param(l.ffn_b1);
    e.ffn_w2 = tape.param(l.ffn_w2);
    e.ffn_b2 = tape.param(l.ffn_b2);
    pl.encoder.push_back(e);
  }
  for (auto& h : params.head) pl.head.emplace_back(tape.param(h.w), tape.param(h.b));
  return pl;
}

void bind_sensitive(diff::Tape& tape, ParamLeaves& leaves, const ModelLayout& layout) {
  require(layout.sigma_slot >= 0, "bind_sensitive: sensitive feature not in the model");
  int begin = layout.cat_offsets[layout.sigma_cat_index];
  int cs = layout.sensitive_cardinality;
  leaves.sen_w1 = tape.slice(leaves.cat_w1, begin, cs);
  leaves.sen_b1 = tape.slice(leaves.cat_b1, begin, cs);
  leaves.sen_w2 = tape.slice(leaves.cat_w2, begin, cs);
  leaves.sen_b2 = tape.slice(leaves.cat_b2, layout.sigma_cat_index, 1);

  const int slot_offsets[2] = {0, cs};
  std::vector<diff::Value> slots;
  for (int c = 0; c < cs; ++c) {
    Array oh = Array::zeros(cs);
    oh.v[c] = 1.0;
    diff::Value el = tape.elementwise_linear(tape.input(std::move(oh)), leaves.sen_w1, leaves.sen_b1);
    slots.push_back(tape.cat_linear(tape.gelu(el), leaves.sen_w2, leaves.sen_b2,
                                    std::span<const int>(slot_offsets, 2)));
  }
  leaves.sen_slots = tape.stack_scalars(slots);
  leaves.sensitive_bound = true;
}

diff::Value embed_graph(diff::Tape& tape, std::span<const double> row,
                        const ParamLeaves& leaves, const ModelLayout& layout) {
  diff::Value cat_part, con_part;
  if (layout.n_cat > 0) {
    Array oh = Array::zeros(layout.oh_width);
    for (int k = 0; k < layout.n_cat; ++k) {
      int feature = layout.slot_feature[layout.cat_slot[k]];
      int cat = static_cast<int>(row[feature]);
      int begin = layout.cat_offsets[k];
      require(cat >= 0 && begin + cat < layout.cat_offsets[k + 1],
              "embed: category index out of range");
      oh.v[begin + cat] = 1.0;
    }
    diff::Value el = tape.elementwise_linear(tape.input(std::move(oh)), leaves.cat_w1, leaves.cat_b1);
    cat_part = tape.cat_linear(tape.gelu(el), leaves.cat_w2, leaves.cat_b2, layout.cat_offsets);
  }
  if (layout.n_con > 0) {
    Array xs = Array::zeros(layout.n_con);
    int k = 0;
    for (int slot = 0; slot < layout.width; ++slot) {
      if (layout.slot_con_index[slot] < 0) continue;
      xs.v[k++] = row[layout.slot_feature[slot]];
    }
    diff::Value h = tape.elementwise_linear(tape.input(std::move(xs)), leaves.con_w1, leaves.con_b1);
    con_part = tape.elementwise_linear(tape.gelu(h), leaves.con_w2, leaves.con_b2);
  }
  if (layout.n_con == 0) return cat_part;
  if (layout.n_cat == 0) return con_part;
  return tape.interleave(cat_part, con_part, layout.slot_cat_index, layout.slot_con_index);
}

namespace {

diff::Value head_graph(diff::Tape& tape, diff::Value x, const ParamLeaves& leaves) {
  for (size_t k = 0; k < leaves.head.size(); ++k) {
    x = tape.affine(leaves.head[k].first, x, leaves.head[k].second);
    if (k + 1 < leaves.head.size()) x = tape.gelu(x);
  }
  return x;
}

}  // namespace

GraphForward forward_graph(diff::Tape& tape, std::span<const double> row,
                           const ParamLeaves& leaves, const ModelLayout& layout,
                           const ModelConfig& config) {
  diff::Value e = embed_graph(tape, row, leaves, layout);
  double denom = std::sqrt(static_cast<double>(layout.width));
  GraphForward out;
  for (int l = 0; l < config.n_encoder_layers; ++l) {
    const auto& lp = leaves.encoder[l];
    diff::Value eln = tape.layer_norm(e, lp.attn_norm_w, lp.attn_norm_b, kLayerNormEps);
    diff::Value scores = tape.scaled_self_outer(eln, denom);
    diff::Value attn = tape.softmax_rows(scores);
    diff::Value attn_out = tape.matvec(attn, eln);
    if (config.residual_attention) attn_out = tape.add(attn_out, e);
    if (l == 0) {
      out.first_scores = scores;
      out.first_attention = attn;
    }
    diff::Value h = tape.layer_norm(attn_out, lp.ffn_norm_w, lp.ffn_norm_b, kLayerNormEps);
    diff::Value f = tape.elementwise_linear(tape.gelu(tape.elementwise_linear(h, lp.ffn_w1, lp.ffn_b1)),
                                            lp.ffn_w2, lp.ffn_b2);
    e = tape.add(attn_out, f);
  }
  out.prediction = head_graph(tape, e, leaves);
  return out;
}

diff::Value sen_embed_augmented(diff::Tape& tape, std::span<const double> row,
                                const ParamLeaves& leaves, const ModelLayout& layout) {
  require(leaves.sensitive_bound, "sen_embed_augmented: call bind_sensitive first");
  diff::Value e = embed_graph(tape, row, leaves, layout);
  diff::Value parts[2] = {e, leaves.sen_slots};
  return tape.concat(parts);
}

GraphForward forward_augmented(diff::Tape& tape, std::span<const double> row,
                               const ParamLeaves& leaves, const ModelLayout& layout,
                               const ModelConfig& config, Phase phase) {
  require(phase == Phase::train,
          "forward_augmented: input augmentation is suppressed at inference");
  require(layout.sigma_slot >= 0, "forward_augmented: incompatible with removal baseline");
  diff::Value e = sen_embed_augmented(tape, row, leaves, layout);
  // the scale stays sqrt(width); softmax runs over the augmented columns
  double denom = std::sqrt(static_cast<double>(layout.width));
  int p = layout.width;
  int sigma = layout.sigma_slot;
  GraphForward out;
  for (int l = 0; l < config.n_encoder_layers; ++l) {
    const auto& lp = leaves.encoder[l];
    diff::Value eln = tape.sen_layer_norm(e, lp.attn_norm_w, lp.attn_norm_b, kLayerNormEps, p, sigma);
    diff::Value scores = tape.scaled_self_outer(eln, denom);
    diff::Value attn = tape.softmax_rows(scores);
    diff::Value attn_out = tape.matvec(attn, eln);
    if (config.residual_attention) attn_out = tape.add(attn_out, e);
    if (l == 0) {
      out.first_scores = scores;
      out.first_attention = attn;
    }
    diff::Value h = tape.sen_layer_norm(attn_out, lp.ffn_norm_w, lp.ffn_norm_b, kLayerNormEps, p, sigma);
    diff::Value f = tape.sen_elementwise_linear(
        tape.gelu(tape.sen_elementwise_linear(h, lp.ffn_w1, lp.ffn_b1, p, sigma)),
        lp.ffn_w2, lp.ffn_b2, p, sigma);
    e = tape.add(attn_out, f);
  }
  // drop the counterfactual slots before the prediction head
  out.prediction = head_graph(tape, tape.slice(e, 0, p), leaves);
  return out;
}

SignificanceProfile significance(const Dataset& ds, const ModelParams& params,
                                 const ModelConfig& config, bool all_layers) {
  require(ds.n_rows > 0, "significance: empty dataset");
  ModelLayout lay = make_layout(ds.schema, config);
  int w = lay.width;
  int layers = config.n_encoder_layers;

  SignificanceProfile prof;
  for (int slot = 0; slot < w; ++slot)
    prof.feature_names.push_back(ds.schema.feature(lay.slot_feature[slot]).name);
  prof.mean_scores_by_layer.assign(all_layers ? layers : 1, Array::zeros(w, w));
  prof.mean_attention_by_layer.assign(all_layers ? layers : 1, Array::zeros(w, w));

  ForwardTrace trace;
  for (int r = 0; r < ds.n_rows; ++r) {
    forward(ds.row(r), params, lay, config, &trace);
    int upto = all_layers ? layers : 1;
    for (int l = 0; l < upto; ++l) {
      for (int i = 0; i < w * w; ++i) {
        prof.mean_scores_by_layer[l].v[i] += trace.layers[l].scores.v[i];
        prof.mean_attention_by_layer[l].v[i] += trace.layers[l].attention.v[i];
      }
    }
  }
  for (auto& m : prof.mean_scores_by_layer)
    for (auto& x : m.v) x /= ds.n_rows;
  for (auto& m : prof.mean_attention_by_layer)
    for (auto& x : m.v) x /= ds.n_rows;
  prof.mean_scores = prof.mean_scores_by_layer[0];
  prof.mean_attention = prof.mean_attention_by_layer[0];

  prof.ranking.resize(w);
  std::iota(prof.ranking.begin(), prof.ranking.end(), 0);
  std::stable_sort(prof.ranking.begin(), prof.ranking.end(), [&](int a, int b) {
    return prof.mean_scores.at(a, a) > prof.mean_scores.at(b, b);
  });
  return prof;
}

}  // namespace fairattn
