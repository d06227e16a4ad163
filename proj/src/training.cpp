#include "fairattn/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

#include "fairattn/kernels.hpp"
#include "fairattn/rng.hpp"

namespace fairattn {

std::string to_string(CarForm f) {
  switch (f) {
    case CarForm::off: return "off";
    case CarForm::cda: return "cda";
    case CarForm::augmented: return "augmented";
  }
  return "off";
}

CarForm car_form_from_string(const std::string& s) {
  if (s == "off") return CarForm::off;
  if (s == "cda") return CarForm::cda;
  if (s == "augmented" || s == "aug") return CarForm::augmented;
  throw DataError("unknown CAR form: " + s);
}

double TrainedModel::raw_output(std::span<const double> row) const {
  return forward(row, params, schema, model_config);
}

double TrainedModel::score(std::span<const double> row) const {
  double out = raw_output(row);
  return model_config.task == Task::classification ? kern::sigmoid(out) : out;
}

metrics::ScoreFn make_score_fn(const TrainedModel& tm) {
  ModelLayout layout = make_layout(tm.schema, tm.model_config);
  const ModelParams* params = &tm.params;
  const ModelConfig* config = &tm.model_config;
  bool classify = tm.model_config.task == Task::classification;
  return [layout, params, config, classify](std::span<const double> row) {
    double out = forward(row, *params, layout, *config);
    return classify ? kern::sigmoid(out) : out;
  };
}

double lambda_auto(double perf_first_batch, double car_first_batch, double cap) {
  require(cap >= 1.0, "lambda_auto: cap must be at least 1");
  require(std::isfinite(perf_first_batch) && std::isfinite(car_first_batch),
          "lambda_auto: losses must be finite");
  require(perf_first_batch >= 0.0 && car_first_batch >= 0.0,
          "lambda_auto: losses must be non-negative");
  if (car_first_batch == 0.0) return cap;
  double k = std::floor(perf_first_batch / car_first_batch);
  if (k > std::log10(cap)) return cap;
  return std::clamp(std::pow(10.0, k), 1.0, cap);
}

namespace {

// embed -> first-layer norm -> scores -> softmax, nothing deeper
diff::Value first_attention_graph(diff::Tape& tape, std::span<const double> row,
                                  const ParamLeaves& leaves, const ModelLayout& layout) {
  diff::Value e = embed_graph(tape, row, leaves, layout);
  const auto& lp = leaves.encoder[0];
  diff::Value eln = tape.layer_norm(e, lp.attn_norm_w, lp.attn_norm_b, kLayerNormEps);
  diff::Value scores = tape.scaled_self_outer(eln, std::sqrt(static_cast<double>(layout.width)));
  return tape.softmax_rows(scores);
}

}  // namespace

diff::Value car_loss_cda(diff::Tape& tape, std::span<const double> row,
                         const ParamLeaves& leaves, const ModelLayout& layout,
                         const diff::Value* original_attention) {
  require(layout.sigma_slot >= 0, "car_loss_cda: sensitive feature not in the model");
  int p = layout.width;
  int cs = layout.sensitive_cardinality;
  int sigma_feature = layout.slot_feature[layout.sigma_slot];

  diff::Value base_attn = original_attention
                              ? *original_attention
                              : first_attention_graph(tape, row, leaves, layout);
  diff::Value base_col = tape.column_segment(base_attn, layout.sigma_slot, 0, p);

  std::vector<double> rewritten(row.begin(), row.end());
  std::vector<diff::Value> terms;
  terms.reserve(cs);
  for (int c = 0; c < cs; ++c) {
    rewritten[sigma_feature] = static_cast<double>(c);
    diff::Value attn = first_attention_graph(tape, rewritten, leaves, layout);
    diff::Value col = tape.column_segment(attn, layout.sigma_slot, 0, p);
    diff::Value d = tape.sub(base_col, col);
    terms.push_back(tape.sum(tape.mul(d, d)));
  }
  return tape.scale(tape.sum(tape.stack_scalars(terms)), 1.0 / cs);
}

diff::Value car_loss_augmented(diff::Tape& tape, diff::Value augmented_attention,
                               const ModelLayout& layout) {
  int p = layout.width;
  int cs = layout.sensitive_cardinality;
  require(layout.sigma_slot >= 0, "car_loss_augmented: sensitive feature not in the model");
  require(augmented_attention.rows() == p + cs && augmented_attention.cols() == p + cs,
          "car_loss_augmented: matrix side must be p + C^s");
  diff::Value base_col = tape.column_segment(augmented_attention, layout.sigma_slot, 0, p);
  std::vector<diff::Value> terms;
  terms.reserve(cs);
  for (int c = 0; c < cs; ++c) {
    diff::Value col = tape.column_segment(augmented_attention, p + c, 0, p);
    diff::Value d = tape.sub(base_col, col);
    terms.push_back(tape.sum(tape.mul(d, d)));
  }
  return tape.scale(tape.sum(tape.stack_scalars(terms)), 1.0 / cs);
}

double select_threshold(const Dataset& preprocessed, const ModelParams& params,
                        const ModelConfig& config) {
  ModelLayout layout = make_layout(preprocessed.schema, config);
  std::vector<double> prob(preprocessed.n_rows);
  for (int r = 0; r < preprocessed.n_rows; ++r)
    prob[r] = kern::sigmoid(forward(preprocessed.row(r), params, layout, config));
  double best_t = 0.01;
  double best_f1 = -1.0;
  std::vector<double> hard(preprocessed.n_rows);
  for (int i = 1; i <= 99; ++i) {
    double t = i / 100.0;
    for (int r = 0; r < preprocessed.n_rows; ++r) hard[r] = prob[r] >= t ? 1.0 : 0.0;
    double score = metrics::f1(preprocessed.response, hard);
    if (score > best_f1) {
      best_f1 = score;
      best_t = t;
    }
  }
  return best_t;
}

TrainedModel train(const Dataset& ds, const PreprocessStats& stats, const TrainConfig& tc,
                   const ModelConfig& mc) {
  require(ds.n_rows > 0, "train: empty dataset");
  require(tc.epochs >= 1 && tc.batch_size >= 1 && tc.learning_rate > 0.0,
          "train: epochs, batch size and learning rate must be positive");
  require(tc.lambda_cap >= 1.0, "train: lambda cap must be at least 1");
  if (mc.task == Task::classification)
    for (double y : ds.response)
      require(y == 0.0 || y == 1.0, "train: classification responses must be binary");

  // a lambda of zero makes the CAR machinery inert, so take the plain path
  bool car_active = tc.car_form != CarForm::off && tc.lambda_mode != LambdaMode::off &&
                    !(tc.lambda_mode == LambdaMode::fixed && tc.lambda_fixed == 0.0);
  require(!(car_active && mc.removal_baseline),
          "train: CAR and the removal baseline are mutually exclusive");

  ModelLayout layout = make_layout(ds.schema, mc);
  TrainedModel tm;
  tm.schema = ds.schema;
  tm.model_config = mc;
  tm.stats = stats;
  tm.train_config = tc;
  tm.params = init_params(ds.schema, mc, tc.seed);

  std::vector<diff::Param*> plist = tm.params.all();
  std::vector<Array> adam_m, adam_v;
  for (diff::Param* p : plist) {
    adam_m.push_back(Array::zeros_like(p->value));
    adam_v.push_back(Array::zeros_like(p->value));
  }
  long long adam_step = 0;

  double lambda = tc.lambda_mode == LambdaMode::fixed ? tc.lambda_fixed : 0.0;
  bool lambda_resolved = car_active ? tc.lambda_mode != LambdaMode::automatic : true;

  Rng shuffle_rng = Rng::substream(tc.seed, "shuffle");
  std::vector<int> order(ds.n_rows);
  std::iota(order.begin(), order.end(), 0);

  diff::Tape tape;
  std::vector<diff::Value> logits;
  std::vector<diff::Value> car_terms;

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double ep_perf = 0.0, ep_car = 0.0, ep_total = 0.0;
    long long seen = 0;
    for (int start = 0; start < ds.n_rows; start += tc.batch_size) {
      int bsz = std::min(tc.batch_size, ds.n_rows - start);
      tape.clear();
      ParamLeaves leaves = bind_params(tape, tm.params);
      if (car_active && tc.car_form == CarForm::augmented)
        bind_sensitive(tape, leaves, layout);

      logits.clear();
      car_terms.clear();
      Array labels(bsz, 1);
      for (int i = 0; i < bsz; ++i) {
        int r = order[start + i];
        labels.v[i] = ds.response[r];
        if (car_active && tc.car_form == CarForm::augmented) {
          GraphForward gf = forward_augmented(tape, ds.row(r), leaves, layout, mc, Phase::train);
          logits.push_back(gf.prediction);
          car_terms.push_back(car_loss_augmented(tape, gf.first_attention, layout));
        } else if (car_active) {
          GraphForward gf = forward_graph(tape, ds.row(r), leaves, layout, mc);
          logits.push_back(gf.prediction);
          car_terms.push_back(car_loss_cda(tape, ds.row(r), leaves, layout, &gf.first_attention));
        } else {
          logits.push_back(forward_graph(tape, ds.row(r), leaves, layout, mc).prediction);
        }
      }

      diff::Value stacked = tape.stack_scalars(logits);
      diff::Value perf = mc.task == Task::classification ? tape.bce_with_logits(stacked, labels)
                                                         : tape.mse(stacked, labels);
      diff::Value car;
      double car_value = 0.0;
      if (car_active) {
        car = tape.scale(tape.sum(tape.stack_scalars(car_terms)), 1.0 / bsz);
        car_value = car.scalar();
      }
      double perf_value = perf.scalar();
      if (!lambda_resolved) {
        lambda = lambda_auto(perf_value, car_value, tc.lambda_cap);
        lambda_resolved = true;
      }
      diff::Value total = car_active ? tape.add(perf, tape.scale(car, lambda)) : perf;
      double total_value = total.scalar();
      if (!std::isfinite(total_value))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(start / tc.batch_size));

      tm.params.zero_grads();
      tape.backward(total);

      ++adam_step;
      double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(adam_step));
      double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(adam_step));
      for (size_t pi = 0; pi < plist.size(); ++pi) {
        diff::Param& p = *plist[pi];
        for (int k = 0; k < p.size(); ++k) {
          double g = p.grad.v[k];
          double& m = adam_m[pi].v[k];
          double& v = adam_v[pi].v[k];
          m = tc.beta1 * m + (1.0 - tc.beta1) * g;
          v = tc.beta2 * v + (1.0 - tc.beta2) * g * g;
          p.value.v[k] -= tc.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + tc.adam_eps);
        }
      }

      ep_perf += perf_value * bsz;
      ep_car += car_value * bsz;
      ep_total += total_value * bsz;
      seen += bsz;
    }
    EpochLoss el;
    el.epoch = epoch;
    el.perf = ep_perf / seen;
    el.car = ep_car / seen;
    el.lambda = lambda;
    el.total = ep_total / seen;
    tm.losses.history.push_back(el);
  }

  const EpochLoss& last = tm.losses.history.back();
  tm.losses.perf = last.perf;
  tm.losses.car = last.car;
  tm.losses.lambda = last.lambda;
  tm.losses.total = last.total;

  if (mc.task == Task::classification)
    tm.threshold = select_threshold(ds, tm.params, mc);
  return tm;
}

std::vector<SweepRow> lambda_sweep(const Dataset& train_raw, const Dataset& eval_raw,
                                   std::span<const double> lambdas, const TrainConfig& tc,
                                   const ModelConfig& mc, int max_threads) {
  require(lambdas.size() >= 2, "lambda_sweep: need at least two lambda values");
  PreprocessStats stats = fit_preprocess(train_raw);
  Dataset train_ds = apply_preprocess(train_raw, stats);
  Dataset eval_ds = apply_preprocess(eval_raw, stats);

  std::vector<SweepRow> rows(lambdas.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= lambdas.size()) return;
      TrainConfig run = tc;
      run.lambda_mode = LambdaMode::fixed;
      run.lambda_fixed = lambdas[i];
      TrainedModel tm = train(train_ds, stats, run, mc);
      rows[i].lambda = lambdas[i];
      rows[i].fairness =
          metrics::evaluate_fairness(eval_ds, make_score_fn(tm), mc.task, tm.threshold);
    }
  };
  int n_threads = std::max(1, std::min<int>(max_threads, static_cast<int>(lambdas.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return rows;
}

}  // namespace fairattn
