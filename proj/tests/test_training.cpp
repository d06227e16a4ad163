#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "fairattn/metrics.hpp"
#include "fairattn/model.hpp"
#include "fairattn/serialize.hpp"
#include "fairattn/training.hpp"

using namespace fairattn;
using diff::Param;
using diff::Tape;
using diff::Value;

namespace {

TrainConfig quick_config(uint64_t seed, CarForm form, LambdaMode mode, double lambda = 0.0) {
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 64;
  tc.seed = seed;
  tc.car_form = form;
  tc.lambda_mode = mode;
  tc.lambda_fixed = lambda;
  return tc;
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  auto pa = a.all(), pb = b.all();
  if (pa.size() != pb.size()) return false;
  for (size_t i = 0; i < pa.size(); ++i)
    if (pa[i]->value.v != pb[i]->value.v) return false;
  return true;
}

}  // namespace

TEST_CASE("lambda_auto follows the floor-of-ratio rule with clamping") {
  CHECK(lambda_auto(1.0, 1.0, 1e6) == 10.0);
  CHECK(lambda_auto(0.5, 1.0, 1e6) == 1.0);
  CHECK(lambda_auto(0.693, 1e-6, 1e6) == 1e6);
  CHECK(lambda_auto(0.3, 0.0, 1e6) == 1e6);
  CHECK(lambda_auto(2.34, 1.0, 1e6) == 100.0);

  // monotone in the unclamped region
  double prev = 0.0;
  for (double perf : {0.1, 0.5, 1.0, 2.0, 3.0, 4.5}) {
    double lam = lambda_auto(perf, 1.0, 1e6);
    CHECK(lam >= prev);
    prev = lam;
  }
  prev = std::numeric_limits<double>::infinity();
  for (double car : {0.2, 0.5, 1.0, 2.0, 8.0}) {
    double lam = lambda_auto(2.0, car, 1e6);
    CHECK(lam <= prev);
    prev = lam;
  }
}

TEST_CASE("car_loss_augmented on constructed matrices") {
  Schema schema = generate_synthetic(1, 0).schema;
  ModelConfig mc;
  ModelLayout lay = make_layout(schema, mc);  // p = 3, C^s = 2

  Array m(5, 5);
  // column 0 is the sigma column; make both augmented columns copy it
  for (int r = 0; r < 5; ++r) {
    m.at(r, 0) = 0.1 * r + 0.05;
    m.at(r, 3) = m.at(r, 0);
    m.at(r, 4) = m.at(r, 0);
  }
  {
    Tape t;
    CHECK(car_loss_augmented(t, t.input(m), lay).scalar() == 0.0);
  }
  {
    // shift one augmented column by d over the first p rows
    Array shifted = m;
    double d[3] = {0.2, -0.1, 0.3};
    double norm2 = 0.0;
    for (int r = 0; r < 3; ++r) {
      shifted.at(r, 3) += d[r];
      norm2 += d[r] * d[r];
    }
    Tape t;
    CHECK(car_loss_augmented(t, t.input(shifted), lay).scalar() ==
          doctest::Approx(norm2 / 2.0).epsilon(1e-12));
  }
  {
    Tape t;
    CHECK_THROWS_AS(car_loss_augmented(t, t.input(Array(4, 4)), lay), ContractViolation);
  }
}

TEST_CASE("car_loss_cda") {
  Dataset ds = generate_synthetic(6, 7);
  ModelConfig mc;
  mc.head_hidden = {4};
  ModelLayout lay = make_layout(ds.schema, mc);

  SUBCASE("zero when the sensitive embedding is category-invariant") {
    ModelParams mp = init_params(ds.schema, mc, 3);
    for (int j = lay.cat_offsets[lay.sigma_cat_index];
         j < lay.cat_offsets[lay.sigma_cat_index + 1]; ++j)
      mp.cat_w1.value.v[j] = 0.0;
    for (int r = 0; r < ds.n_rows; ++r) {
      Tape t;
      ParamLeaves leaves = bind_params(t, mp);
      CHECK(car_loss_cda(t, ds.row(r), leaves, lay).scalar() == 0.0);
    }
  }

  SUBCASE("own-category term vanishes, leaving half the squared distance") {
    ModelParams mp = init_params(ds.schema, mc, 4);
    int r = 0;
    int own = ds.sensitive_category(r);
    int other = 1 - own;

    // attention columns from two plain forwards
    auto sigma_column = [&](double category) {
      std::vector<double> row(ds.row(r).begin(), ds.row(r).end());
      row[0] = category;
      ForwardTrace tr;
      forward(row, mp, ds.schema, mc, &tr);
      std::vector<double> col(3);
      for (int i = 0; i < 3; ++i) col[i] = tr.layers[0].attention.at(i, lay.sigma_slot);
      return col;
    };
    std::vector<double> own_col = sigma_column(own);
    std::vector<double> other_col = sigma_column(other);
    double norm2 = 0.0;
    for (int i = 0; i < 3; ++i) {
      double d = own_col[i] - other_col[i];
      norm2 += d * d;
    }

    Tape t;
    ParamLeaves leaves = bind_params(t, mp);
    double loss = car_loss_cda(t, ds.row(r), leaves, lay).scalar();
    CHECK(loss == doctest::Approx(norm2 / 2.0).epsilon(1e-12));
    CHECK(loss >= 0.0);
  }
}

TEST_CASE("total loss with CAR passes finite differences in both forms") {
  Dataset ds = generate_synthetic(4, 17);
  ModelConfig mc;
  mc.head_hidden = {5};
  ModelParams mp = init_params(ds.schema, mc, 21);
  ModelLayout lay = make_layout(ds.schema, mc);
  Array labels(ds.n_rows, 1);
  for (int r = 0; r < ds.n_rows; ++r) labels.v[r] = ds.response[r];

  for (bool augmented : {true, false}) {
    CAPTURE(augmented);
    auto eval = [&] {
      Tape t;
      ParamLeaves leaves = bind_params(t, mp);
      if (augmented) bind_sensitive(t, leaves, lay);
      std::vector<Value> logits, cars;
      for (int r = 0; r < ds.n_rows; ++r) {
        if (augmented) {
          GraphForward gf = forward_augmented(t, ds.row(r), leaves, lay, mc, Phase::train);
          logits.push_back(gf.prediction);
          cars.push_back(car_loss_augmented(t, gf.first_attention, lay));
        } else {
          GraphForward gf = forward_graph(t, ds.row(r), leaves, lay, mc);
          logits.push_back(gf.prediction);
          cars.push_back(car_loss_cda(t, ds.row(r), leaves, lay, &gf.first_attention));
        }
      }
      Value perf = t.bce_with_logits(t.stack_scalars(logits), labels);
      Value car = t.scale(t.sum(t.stack_scalars(cars)), 1.0 / ds.n_rows);
      Value root = t.add(perf, t.scale(car, 10.0));
      t.backward(root);
      return root.scalar();
    };
    auto rep = diff::grad_check(eval, mp.all(), 1e-5);
    CHECK(rep.max_rel_err <= 1e-4);
  }
}

TEST_CASE("training is deterministic and lambda zero equals CAR off") {
  Dataset raw = generate_synthetic(300, 23);
  PreprocessStats stats = fit_preprocess(raw);
  Dataset ds = apply_preprocess(raw, stats);
  ModelConfig mc;
  mc.head_hidden = {8, 4};

  TrainedModel off = train(ds, stats, quick_config(9, CarForm::off, LambdaMode::off), mc);
  TrainedModel zero =
      train(ds, stats, quick_config(9, CarForm::augmented, LambdaMode::fixed, 0.0), mc);
  TrainedModel off2 = train(ds, stats, quick_config(9, CarForm::off, LambdaMode::off), mc);

  CHECK(same_params(off.params, zero.params));
  CHECK(same_params(off.params, off2.params));
  CHECK(off.threshold == zero.threshold);

  // inference predictions agree bitwise
  for (int r = 0; r < 20; ++r)
    CHECK(off.raw_output(ds.row(r)) == zero.raw_output(ds.row(r)));

  TrainedModel other_seed = train(ds, stats, quick_config(10, CarForm::off, LambdaMode::off), mc);
  CHECK(!same_params(off.params, other_seed.params));
}

TEST_CASE("CAR training reduces the CAR loss over epochs") {
  Dataset raw = generate_synthetic(600, 29);
  PreprocessStats stats = fit_preprocess(raw);
  Dataset ds = apply_preprocess(raw, stats);
  ModelConfig mc;
  mc.head_hidden = {8, 4};
  TrainConfig tc = quick_config(11, CarForm::augmented, LambdaMode::automatic);
  tc.epochs = 6;
  TrainedModel tm = train(ds, stats, tc, mc);
  REQUIRE(tm.losses.history.size() == 6);
  CHECK(tm.losses.history.back().car < tm.losses.history.front().car);
  CHECK(tm.losses.lambda >= 1.0);

  // the informative features exist by construction, so even a short run
  // separates the classes
  std::vector<double> scores(ds.n_rows);
  for (int r = 0; r < ds.n_rows; ++r) scores[r] = tm.score(ds.row(r));
  CHECK(metrics::auroc(ds.response, scores) > 0.5);
  for (const auto& e : tm.losses.history) {
    CHECK(std::isfinite(e.total));
    CHECK(e.car >= 0.0);
    CHECK(e.total == doctest::Approx(e.perf + e.lambda * e.car).epsilon(1e-9));
  }
}

TEST_CASE("stored threshold attains the grid maximum") {
  Dataset raw = generate_synthetic(400, 31);
  PreprocessStats stats = fit_preprocess(raw);
  Dataset ds = apply_preprocess(raw, stats);
  ModelConfig mc;
  mc.head_hidden = {8};
  TrainedModel tm = train(ds, stats, quick_config(13, CarForm::off, LambdaMode::off), mc);

  std::vector<double> prob(ds.n_rows), hard(ds.n_rows);
  for (int r = 0; r < ds.n_rows; ++r) prob[r] = tm.score(ds.row(r));
  double best = -1.0;
  for (int i = 1; i <= 99; ++i) {
    double t = i / 100.0;
    for (int r = 0; r < ds.n_rows; ++r) hard[r] = prob[r] >= t ? 1.0 : 0.0;
    best = std::max(best, metrics::f1(ds.response, hard));
  }
  for (int r = 0; r < ds.n_rows; ++r) hard[r] = prob[r] >= tm.threshold ? 1.0 : 0.0;
  CHECK(metrics::f1(ds.response, hard) == doctest::Approx(best));
  CHECK(tm.threshold > 0.0);
  CHECK(tm.threshold < 1.0);
}

TEST_CASE("non-finite loss aborts with location") {
  std::vector<FeatureSpec> feats(2);
  feats[0] = {"g", FeatureKind::categorical, {"0", "1"}};
  feats[1] = {"v", FeatureKind::continuous, {}};
  Schema s(std::move(feats), 0, "y", Task::regression);
  Dataset ds(s);
  double bad[2] = {0.0, std::numeric_limits<double>::infinity()};
  ds.push_row({bad, 2}, {}, 1.0);
  double fine[2] = {1.0, 0.5};
  ds.push_row({fine, 2}, {}, 0.0);
  PreprocessStats stats;
  stats.continuous.resize(2);
  stats.categorical_mode = {0, -1};

  ModelConfig mc;
  mc.task = Task::regression;
  mc.head_hidden = {4};
  TrainConfig tc = quick_config(1, CarForm::off, LambdaMode::off);
  try {
    train(ds, stats, tc, mc);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    std::string msg = e.what();
    CHECK(msg.find("epoch 1") != std::string::npos);
    CHECK(msg.find("batch 0") != std::string::npos);
  }
}

TEST_CASE("train validates inputs") {
  Dataset raw = generate_synthetic(50, 37);
  PreprocessStats stats = fit_preprocess(raw);
  Dataset ds = apply_preprocess(raw, stats);
  ModelConfig mc;
  SUBCASE("empty dataset") {
    Dataset empty(ds.schema);
    CHECK_THROWS_AS(train(empty, stats, quick_config(1, CarForm::off, LambdaMode::off), mc),
                    ContractViolation);
  }
  SUBCASE("CAR with removal baseline conflicts") {
    ModelConfig rem = mc;
    rem.removal_baseline = true;
    CHECK_THROWS_AS(
        train(ds, stats, quick_config(1, CarForm::augmented, LambdaMode::automatic), rem),
        ContractViolation);
  }
}

TEST_CASE("model persistence round-trips predictions bit for bit") {
  Dataset raw = generate_synthetic(200, 41);
  PreprocessStats stats = fit_preprocess(raw);
  Dataset ds = apply_preprocess(raw, stats);
  ModelConfig mc;
  mc.head_hidden = {6, 3};
  TrainedModel tm = train(ds, stats, quick_config(17, CarForm::augmented, LambdaMode::automatic), mc);

  std::string text = model_to_json_text(tm);
  TrainedModel back = model_from_json_text(text);
  CHECK(back.schema == tm.schema);
  CHECK(back.threshold == tm.threshold);
  CHECK(same_params(back.params, tm.params));
  for (int r = 0; r < ds.n_rows; ++r)
    CHECK(back.raw_output(ds.row(r)) == tm.raw_output(ds.row(r)));
  // serialization is stable text
  CHECK(model_to_json_text(back) == text);
}

TEST_CASE("lambda_sweep") {
  Dataset data = generate_synthetic(400, 43);
  SplitResult sr = split(data, 0.75, 5);
  ModelConfig mc;
  mc.head_hidden = {6};
  TrainConfig tc = quick_config(19, CarForm::augmented, LambdaMode::automatic);

  SUBCASE("needs at least two values") {
    std::vector<double> one = {1.0};
    CHECK_THROWS_AS(lambda_sweep(sr.train, sr.test, one, tc, mc), ContractViolation);
  }
  SUBCASE("zero row equals a plain run, order echoes input") {
    std::vector<double> lambdas = {0.0, 5.0};
    auto rows = lambda_sweep(sr.train, sr.test, lambdas, tc, mc, 2);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].lambda == 0.0);
    CHECK(rows[1].lambda == 5.0);

    PreprocessStats stats = fit_preprocess(sr.train);
    Dataset cooked_train = apply_preprocess(sr.train, stats);
    Dataset cooked_eval = apply_preprocess(sr.test, stats);
    TrainedModel plain =
        train(cooked_train, stats, quick_config(19, CarForm::off, LambdaMode::off), mc);
    auto rep = metrics::evaluate_fairness(cooked_eval, make_score_fn(plain),
                                          Task::classification, plain.threshold);
    CHECK(rows[0].fairness.avgif == doctest::Approx(rep.avgif).epsilon(1e-12));
  }
}
