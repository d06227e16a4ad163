// Command-line surface for the fair tabular attention toolkit: synthetic data
// generation, training, evaluation, fairness auditing, attention export, and
// the lambda sweep. Every command is batch-style: it reads its inputs, writes
// its outputs next to a run manifest, and exits.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fairattn/dataset.hpp"
#include "fairattn/metrics.hpp"
#include "fairattn/model.hpp"
#include "fairattn/serialize.hpp"
#include "fairattn/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fairattn;

namespace {

constexpr const char* kToolVersion = "0.1.0";

// exit codes: 0 success, 2 usage, 3 data, 4 numeric
constexpr int kUsageError = 2;
constexpr int kDataError = 3;
constexpr int kNumericError = 4;

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open input for digest: " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string hex64(uint64_t x) {
  char buf[17];
  snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

class Manifest {
 public:
  Manifest(std::string command, fs::path out_dir)
      : out_dir_(std::move(out_dir)), start_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["tool_version"] = kToolVersion;
  }

  void config(const json& cfg) { doc_["config"] = cfg; }
  void seed(uint64_t s) { doc_["seed"] = s; }
  void input(const std::string& path) {
    json e;
    e["path"] = path;
    e["fnv1a64"] = hex64(fnv1a64_file(path));
    inputs_.push_back(std::move(e));
  }
  void output(const fs::path& path) { outputs_.push_back(path.string()); }

  void write() {
    doc_["inputs"] = inputs_;
    doc_["outputs"] = outputs_;
    doc_["duration_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::ofstream out(out_dir_ / "manifest.json", std::ios::binary);
    if (!out) throw DataError("cannot write manifest in " + out_dir_.string());
    out << doc_.dump(2) << "\n";
  }

 private:
  fs::path out_dir_;
  std::chrono::steady_clock::time_point start_;
  json doc_;
  json inputs_ = json::array();
  json outputs_ = json::array();
};

fs::path prepare_out_dir(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + out + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string format_double(double x) {
  std::ostringstream ss;
  ss.precision(17);
  ss << x;
  return ss.str();
}

void write_matrix_csv(const fs::path& path, const Array& m,
                      const std::vector<std::string>& names) {
  std::ostringstream ss;
  ss << "feature";
  for (const auto& n : names) ss << ',' << n;
  ss << '\n';
  for (int i = 0; i < m.rows; ++i) {
    ss << names[i];
    for (int j = 0; j < m.cols; ++j) ss << ',' << format_double(m.at(i, j));
    ss << '\n';
  }
  write_text(path, ss.str());
}

int sweep_threads(size_t n_jobs) {
  unsigned hw = std::thread::hardware_concurrency();
  int threads = hw == 0 ? 1 : static_cast<int>(hw);
  if (const char* env = std::getenv("FAIRATTN_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end == env || v < 1) throw UsageError("FAIRATTN_THREADS must be a positive integer");
    threads = static_cast<int>(v);
  }
  return std::min<int>(threads, static_cast<int>(n_jobs));
}

// ---- command options ----

struct SynthOpts {
  int n = 1000;
  uint64_t seed = 0;
  std::string out;
};

struct TrainOpts {
  std::string data, schema, out;
  std::string task;  // optional, must agree with the schema
  std::string car = "aug";
  std::string lambda = "auto";
  int layers = 1;
  bool residual_attn = false;
  bool remove_sensitive = false;
  int epochs = 30;
  int batch = 256;
  double lr = 1e-3;
  double lambda_cap = 1e6;
  std::vector<int> head = {64, 32};
  uint64_t seed = 0;
};

struct EvalOpts {
  std::string model, data, out;
};

struct AttentionOpts {
  std::string model, data, out;
  bool all_layers = false;
};

struct SweepOpts {
  std::string data, schema, out;
  std::vector<double> lambdas;
  std::string car = "aug";
  double train_fraction = 0.8;
  int epochs = 30;
  int batch = 256;
  double lr = 1e-3;
  uint64_t seed = 0;
};

TrainConfig make_train_config(const TrainOpts& o) {
  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.learning_rate = o.lr;
  tc.lambda_cap = o.lambda_cap;
  tc.seed = o.seed;
  if (o.car == "off") {
    tc.car_form = CarForm::off;
    tc.lambda_mode = LambdaMode::off;
  } else {
    tc.car_form = car_form_from_string(o.car);
    if (o.lambda == "auto") {
      tc.lambda_mode = LambdaMode::automatic;
    } else {
      char* end = nullptr;
      double v = std::strtod(o.lambda.c_str(), &end);
      if (end == o.lambda.c_str() || *end != '\0' || v < 0.0)
        throw UsageError("--lambda expects 'auto' or a non-negative number");
      tc.lambda_mode = LambdaMode::fixed;
      tc.lambda_fixed = v;
    }
  }
  return tc;
}

json train_config_json(const TrainOpts& o) {
  json cfg;
  cfg["data"] = o.data;
  cfg["schema"] = o.schema;
  cfg["car"] = o.car;
  cfg["lambda"] = o.lambda;
  cfg["layers"] = o.layers;
  cfg["residual_attn"] = o.residual_attn;
  cfg["remove_sensitive"] = o.remove_sensitive;
  cfg["epochs"] = o.epochs;
  cfg["batch"] = o.batch;
  cfg["lr"] = o.lr;
  cfg["head"] = o.head;
  cfg["lambda_cap"] = o.lambda_cap;
  return cfg;
}

// ---- commands ----

int cmd_synth(const SynthOpts& o) {
  fs::path dir = prepare_out_dir(o.out);
  Manifest manifest("synth", dir);
  manifest.seed(o.seed);
  json cfg;
  cfg["n"] = o.n;
  manifest.config(cfg);

  Dataset ds = generate_synthetic(o.n, o.seed);
  save_csv(ds, (dir / "data.csv").string());
  ds.schema.save((dir / "schema.json").string());
  manifest.output(dir / "data.csv");
  manifest.output(dir / "schema.json");
  manifest.write();
  std::cout << "wrote " << (dir / "data.csv").string() << " (" << ds.n_rows << " rows)\n";
  return 0;
}

int cmd_train(const TrainOpts& o) {
  if (o.car != "off" && o.remove_sensitive)
    throw UsageError(
        "--car requires the sensitive feature; drop --remove-sensitive or use --car off");

  Schema schema = Schema::load(o.schema);
  if (!o.task.empty() && task_from_string(o.task) != schema.task())
    throw UsageError("--task conflicts with the task declared in the schema");

  fs::path dir = prepare_out_dir(o.out);
  Manifest manifest("train", dir);
  manifest.seed(o.seed);
  manifest.config(train_config_json(o));
  manifest.input(o.data);
  manifest.input(o.schema);

  Dataset raw = load_csv(o.data, schema);
  PreprocessStats stats = fit_preprocess(raw);
  for (int f = 0; f < schema.n_features(); ++f)
    if (f < static_cast<int>(stats.continuous.size()) && stats.continuous[f].zero_variance)
      std::cerr << "warning: feature '" << schema.feature(f).name
                << "' has zero variance; scale forced to 1\n";
  Dataset ds = apply_preprocess(raw, stats);

  ModelConfig mc;
  mc.task = schema.task();
  mc.n_encoder_layers = o.layers;
  mc.residual_attention = o.residual_attn;
  mc.removal_baseline = o.remove_sensitive;
  mc.head_hidden = o.head;

  TrainConfig tc = make_train_config(o);
  TrainedModel tm = train(ds, stats, tc, mc);

  save_model(tm, (dir / "model.json").string());
  manifest.output(dir / "model.json");

  std::ostringstream log;
  for (const auto& e : tm.losses.history) {
    json line;
    line["epoch"] = e.epoch;
    line["L_perf"] = e.perf;
    line["L_CAR"] = e.car;
    line["lambda"] = e.lambda;
    line["L_total"] = e.total;
    log << line.dump() << '\n';
  }
  write_text(dir / "train_log.jsonl", log.str());
  manifest.output(dir / "train_log.jsonl");
  manifest.write();

  std::cout << "final losses: L_perf=" << tm.losses.perf << " L_CAR=" << tm.losses.car
            << " lambda=" << tm.losses.lambda << " L_total=" << tm.losses.total << '\n';
  if (mc.task == Task::classification)
    std::cout << "decision threshold: " << tm.threshold << '\n';
  std::cout << "wrote " << (dir / "model.json").string() << '\n';
  return 0;
}

int cmd_eval(const EvalOpts& o) {
  fs::path dir = prepare_out_dir(o.out);
  Manifest manifest("eval", dir);
  json cfg;
  cfg["model"] = o.model;
  cfg["data"] = o.data;
  manifest.config(cfg);
  manifest.input(o.model);
  manifest.input(o.data);

  TrainedModel tm = load_model(o.model);
  Dataset raw = load_csv(o.data, tm.schema);
  Dataset ds = apply_preprocess(raw, tm.stats);

  metrics::ScoreFn score = make_score_fn(tm);
  std::vector<double> scores(ds.n_rows);
  for (int r = 0; r < ds.n_rows; ++r) scores[r] = score(ds.row(r));
  metrics::PerformanceReport rep =
      metrics::evaluate_performance(tm.model_config.task, ds.response, scores, tm.threshold);

  write_text(dir / "performance.json", rep.to_json_text());
  manifest.output(dir / "performance.json");
  manifest.write();
  std::cout << rep.to_json_text();
  return 0;
}

int cmd_audit(const EvalOpts& o) {
  fs::path dir = prepare_out_dir(o.out);
  Manifest manifest("audit", dir);
  json cfg;
  cfg["model"] = o.model;
  cfg["data"] = o.data;
  manifest.config(cfg);
  manifest.input(o.model);
  manifest.input(o.data);

  TrainedModel tm = load_model(o.model);
  Dataset raw = load_csv(o.data, tm.schema);
  Dataset ds = apply_preprocess(raw, tm.stats);

  metrics::FairnessReport rep =
      metrics::evaluate_fairness(ds, make_score_fn(tm), tm.model_config.task, tm.threshold);

  write_text(dir / "fairness.json", rep.to_json_text());
  manifest.output(dir / "fairness.json");
  manifest.write();
  std::cout << rep.to_json_text();
  return 0;
}

int cmd_attention(const AttentionOpts& o) {
  fs::path dir = prepare_out_dir(o.out);
  Manifest manifest("attention", dir);
  json cfg;
  cfg["model"] = o.model;
  cfg["data"] = o.data;
  cfg["all_layers"] = o.all_layers;
  manifest.config(cfg);
  manifest.input(o.model);
  manifest.input(o.data);

  TrainedModel tm = load_model(o.model);
  Dataset raw = load_csv(o.data, tm.schema);
  Dataset ds = apply_preprocess(raw, tm.stats);

  SignificanceProfile prof = significance(ds, tm.params, tm.model_config, o.all_layers);

  write_matrix_csv(dir / "attention_pre.csv", prof.mean_scores, prof.feature_names);
  write_matrix_csv(dir / "attention_post.csv", prof.mean_attention, prof.feature_names);
  manifest.output(dir / "attention_pre.csv");
  manifest.output(dir / "attention_post.csv");
  if (o.all_layers) {
    for (size_t l = 1; l < prof.mean_scores_by_layer.size(); ++l) {
      fs::path pre = dir / ("attention_pre_layer" + std::to_string(l + 1) + ".csv");
      fs::path post = dir / ("attention_post_layer" + std::to_string(l + 1) + ".csv");
      write_matrix_csv(pre, prof.mean_scores_by_layer[l], prof.feature_names);
      write_matrix_csv(post, prof.mean_attention_by_layer[l], prof.feature_names);
      manifest.output(pre);
      manifest.output(post);
    }
  }

  json sig;
  json features = json::array();
  for (int slot : prof.ranking) {
    json f;
    f["feature"] = prof.feature_names[slot];
    f["significance"] = prof.diagonal(slot);
    features.push_back(std::move(f));
  }
  sig["ranking"] = std::move(features);
  json pairs = json::array();
  for (int i = 0; i < prof.mean_scores.rows; ++i) {
    for (int j = i + 1; j < prof.mean_scores.rows; ++j) {
      json p;
      p["a"] = prof.feature_names[i];
      p["b"] = prof.feature_names[j];
      p["weight"] = prof.pair_weight(i, j);
      pairs.push_back(std::move(p));
    }
  }
  sig["pairwise"] = std::move(pairs);
  write_text(dir / "significance.json", sig.dump(2) + "\n");
  manifest.output(dir / "significance.json");
  manifest.write();
  std::cout << "wrote attention matrices for " << prof.feature_names.size() << " features\n";
  return 0;
}

int cmd_sweep(const SweepOpts& o) {
  if (o.lambdas.size() < 2) throw UsageError("--lambdas needs at least two values");

  Schema schema = Schema::load(o.schema);
  fs::path dir = prepare_out_dir(o.out);
  Manifest manifest("sweep", dir);
  manifest.seed(o.seed);
  json cfg;
  cfg["data"] = o.data;
  cfg["schema"] = o.schema;
  cfg["lambdas"] = o.lambdas;
  cfg["car"] = o.car;
  cfg["train_fraction"] = o.train_fraction;
  cfg["epochs"] = o.epochs;
  cfg["batch"] = o.batch;
  cfg["lr"] = o.lr;
  manifest.config(cfg);
  manifest.input(o.data);
  manifest.input(o.schema);

  Dataset raw = load_csv(o.data, schema);
  SplitResult sr = split(raw, o.train_fraction, o.seed);

  ModelConfig mc;
  mc.task = schema.task();
  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.learning_rate = o.lr;
  tc.seed = o.seed;
  tc.car_form = car_form_from_string(o.car);

  std::vector<SweepRow> rows =
      lambda_sweep(sr.train, sr.test, o.lambdas, tc, mc, sweep_threads(o.lambdas.size()));

  std::ostringstream ss;
  if (schema.task() == Task::classification) {
    ss << "lambda,DPD,EqOdd,EqOpp,AvgIF,F1_Gap,AUROC_Gap,AUPRC_Gap\n";
    for (const auto& row : rows)
      ss << format_double(row.lambda) << ',' << format_double(row.fairness.dpd) << ','
         << format_double(row.fairness.eqodd) << ',' << format_double(row.fairness.eqopp) << ','
         << format_double(row.fairness.avgif) << ',' << format_double(row.fairness.f1_gap) << ','
         << format_double(row.fairness.auroc_gap) << ','
         << format_double(row.fairness.auprc_gap) << '\n';
  } else {
    ss << "lambda,DPD,AvgIF,RMSE_Gap,MAE_Gap\n";
    for (const auto& row : rows)
      ss << format_double(row.lambda) << ',' << format_double(row.fairness.dpd) << ','
         << format_double(row.fairness.avgif) << ',' << format_double(row.fairness.rmse_gap)
         << ',' << format_double(row.fairness.mae_gap) << '\n';
  }
  write_text(dir / "sweep.csv", ss.str());
  manifest.output(dir / "sweep.csv");
  manifest.write();
  std::cout << ss.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FCorrTransformer training and counterfactual fairness auditing"};
  app.require_subcommand(1);

  SynthOpts synth;
  auto* s = app.add_subcommand("synth", "generate the synthetic benchmark dataset");
  s->add_option("--n", synth.n, "number of rows")->check(CLI::PositiveNumber);
  s->add_option("--seed", synth.seed, "random seed");
  s->add_option("--out", synth.out, "output directory")->required();

  TrainOpts train_o;
  auto* t = app.add_subcommand("train", "train a model");
  t->add_option("--data", train_o.data, "training CSV")->required();
  t->add_option("--schema", train_o.schema, "schema descriptor JSON")->required();
  t->add_option("--task", train_o.task, "classification|regression (must match the schema)");
  t->add_option("--car", train_o.car, "CAR form: aug|cda|off")
      ->check(CLI::IsMember({"aug", "augmented", "cda", "off"}));
  t->add_option("--lambda", train_o.lambda, "CAR weight: auto or a number");
  t->add_option("--layers", train_o.layers, "encoder layers")->check(CLI::PositiveNumber);
  t->add_flag("--residual-attn", train_o.residual_attn, "re-enable the attention residual");
  t->add_flag("--remove-sensitive", train_o.remove_sensitive, "drop the sensitive feature");
  t->add_option("--epochs", train_o.epochs)->check(CLI::PositiveNumber);
  t->add_option("--batch", train_o.batch)->check(CLI::PositiveNumber);
  t->add_option("--lr", train_o.lr)->check(CLI::PositiveNumber);
  t->add_option("--lambda-cap", train_o.lambda_cap)->check(CLI::PositiveNumber);
  t->add_option("--head", train_o.head, "prediction head hidden sizes");
  t->add_option("--seed", train_o.seed, "random seed");
  t->add_option("--out", train_o.out, "output directory")->required();

  EvalOpts eval_o;
  auto* e = app.add_subcommand("eval", "performance report for a model on a dataset");
  e->add_option("--model", eval_o.model)->required();
  e->add_option("--data", eval_o.data)->required();
  e->add_option("--out", eval_o.out)->required();

  EvalOpts audit_o;
  auto* a = app.add_subcommand("audit", "fairness report for a model on a dataset");
  a->add_option("--model", audit_o.model)->required();
  a->add_option("--data", audit_o.data)->required();
  a->add_option("--out", audit_o.out)->required();

  AttentionOpts attn_o;
  auto* at = app.add_subcommand("attention", "export mean attention matrices");
  at->add_option("--model", attn_o.model)->required();
  at->add_option("--data", attn_o.data)->required();
  at->add_flag("--all-layers", attn_o.all_layers, "emit every encoder layer");
  at->add_option("--out", attn_o.out)->required();

  SweepOpts sweep_o;
  auto* sw = app.add_subcommand("sweep", "fairness metrics across CAR weights");
  sw->add_option("--data", sweep_o.data)->required();
  sw->add_option("--schema", sweep_o.schema)->required();
  sw->add_option("--lambdas", sweep_o.lambdas, "CAR weights to sweep")->required()->delimiter(',');
  sw->add_option("--car", sweep_o.car, "CAR form: aug|cda")
      ->check(CLI::IsMember({"aug", "augmented", "cda"}));
  sw->add_option("--train-fraction", sweep_o.train_fraction);
  sw->add_option("--epochs", sweep_o.epochs)->check(CLI::PositiveNumber);
  sw->add_option("--batch", sweep_o.batch)->check(CLI::PositiveNumber);
  sw->add_option("--lr", sweep_o.lr)->check(CLI::PositiveNumber);
  sw->add_option("--seed", sweep_o.seed, "random seed");
  sw->add_option("--out", sweep_o.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    int code = app.exit(err);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*t) return cmd_train(train_o);
    if (*e) return cmd_eval(eval_o);
    if (*a) return cmd_audit(audit_o);
    if (*at) return cmd_attention(attn_o);
    if (*sw) return cmd_sweep(sweep_o);
    throw UsageError("no command given");
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << '\n';
    return kUsageError;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << '\n';
    return kDataError;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kNumericError;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kNumericError;
  }
}
