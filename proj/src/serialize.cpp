#include "fairattn/serialize.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fairattn {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

json array_to_json(const Array& a) {
  json out;
  out["rows"] = a.rows;
  out["cols"] = a.cols;
  out["values"] = a.v;
  return out;
}

Array array_from_json(const json& j) {
  Array a(j.at("rows").get<int>(), j.at("cols").get<int>());
  const auto& vals = j.at("values");
  if (static_cast<int>(vals.size()) != a.size())
    throw DataError("model: parameter value count does not match its shape");
  for (int i = 0; i < a.size(); ++i) a.v[i] = vals[i].get<double>();
  return a;
}

json lambda_mode_to_json(LambdaMode m) {
  switch (m) {
    case LambdaMode::off: return "off";
    case LambdaMode::fixed: return "fixed";
    case LambdaMode::automatic: return "auto";
  }
  return "off";
}

LambdaMode lambda_mode_from_json(const std::string& s) {
  if (s == "off") return LambdaMode::off;
  if (s == "fixed") return LambdaMode::fixed;
  if (s == "auto") return LambdaMode::automatic;
  throw DataError("model: unknown lambda mode '" + s + "'");
}

}  // namespace

std::string model_to_json_text(const TrainedModel& tm) {
  json doc;
  doc["format"] = "fairattn-model";
  doc["version"] = kFormatVersion;
  doc["schema"] = json::parse(tm.schema.to_json_text());

  json mc;
  mc["task"] = to_string(tm.model_config.task);
  mc["n_encoder_layers"] = tm.model_config.n_encoder_layers;
  mc["residual_attention"] = tm.model_config.residual_attention;
  mc["head_hidden"] = tm.model_config.head_hidden;
  mc["removal_baseline"] = tm.model_config.removal_baseline;
  doc["model_config"] = std::move(mc);

  json trc;
  trc["epochs"] = tm.train_config.epochs;
  trc["batch_size"] = tm.train_config.batch_size;
  trc["learning_rate"] = tm.train_config.learning_rate;
  trc["beta1"] = tm.train_config.beta1;
  trc["beta2"] = tm.train_config.beta2;
  trc["adam_eps"] = tm.train_config.adam_eps;
  trc["lambda_mode"] = lambda_mode_to_json(tm.train_config.lambda_mode);
  trc["lambda_fixed"] = tm.train_config.lambda_fixed;
  trc["lambda_cap"] = tm.train_config.lambda_cap;
  trc["car_form"] = to_string(tm.train_config.car_form);
  trc["seed"] = tm.train_config.seed;
  doc["train_config"] = std::move(trc);

  json pp;
  json cont = json::array();
  for (const auto& c : tm.stats.continuous) {
    json jc;
    jc["mean"] = c.mean;
    jc["scale"] = c.scale;
    jc["zero_variance"] = c.zero_variance;
    cont.push_back(std::move(jc));
  }
  pp["continuous"] = std::move(cont);
  pp["categorical_mode"] = tm.stats.categorical_mode;
  doc["preprocess"] = std::move(pp);

  if (tm.model_config.task == Task::classification) doc["threshold"] = tm.threshold;

  json losses;
  losses["perf"] = tm.losses.perf;
  losses["car"] = tm.losses.car;
  losses["lambda"] = tm.losses.lambda;
  losses["total"] = tm.losses.total;
  json hist = json::array();
  for (const auto& e : tm.losses.history) {
    json je;
    je["epoch"] = e.epoch;
    je["L_perf"] = e.perf;
    je["L_CAR"] = e.car;
    je["lambda"] = e.lambda;
    je["L_total"] = e.total;
    hist.push_back(std::move(je));
  }
  losses["history"] = std::move(hist);
  doc["losses"] = std::move(losses);

  json params = json::array();
  for (const diff::Param* p : tm.params.all()) {
    json jp = array_to_json(p->value);
    jp["name"] = p->name;
    params.push_back(std::move(jp));
  }
  doc["params"] = std::move(params);
  return doc.dump(2) + "\n";
}

TrainedModel model_from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("model: invalid JSON: ") + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != "fairattn-model")
      throw DataError("model: not a model file");
    if (doc.at("version").get<int>() != kFormatVersion)
      throw DataError("model: unsupported format version");

    TrainedModel tm;
    tm.schema = Schema::from_json_text(doc.at("schema").dump());

    const json& mc = doc.at("model_config");
    tm.model_config.task = task_from_string(mc.at("task").get<std::string>());
    tm.model_config.n_encoder_layers = mc.at("n_encoder_layers").get<int>();
    tm.model_config.residual_attention = mc.at("residual_attention").get<bool>();
    tm.model_config.head_hidden = mc.at("head_hidden").get<std::vector<int>>();
    tm.model_config.removal_baseline = mc.at("removal_baseline").get<bool>();

    const json& trc = doc.at("train_config");
    tm.train_config.epochs = trc.at("epochs").get<int>();
    tm.train_config.batch_size = trc.at("batch_size").get<int>();
    tm.train_config.learning_rate = trc.at("learning_rate").get<double>();
    tm.train_config.beta1 = trc.at("beta1").get<double>();
    tm.train_config.beta2 = trc.at("beta2").get<double>();
    tm.train_config.adam_eps = trc.at("adam_eps").get<double>();
    tm.train_config.lambda_mode = lambda_mode_from_json(trc.at("lambda_mode").get<std::string>());
    tm.train_config.lambda_fixed = trc.at("lambda_fixed").get<double>();
    tm.train_config.lambda_cap = trc.at("lambda_cap").get<double>();
    tm.train_config.car_form = car_form_from_string(trc.at("car_form").get<std::string>());
    tm.train_config.seed = trc.at("seed").get<uint64_t>();

    const json& pp = doc.at("preprocess");
    for (const auto& jc : pp.at("continuous")) {
      PreprocessStats::Continuous c;
      c.mean = jc.at("mean").get<double>();
      c.scale = jc.at("scale").get<double>();
      c.zero_variance = jc.at("zero_variance").get<bool>();
      tm.stats.continuous.push_back(c);
    }
    tm.stats.categorical_mode = pp.at("categorical_mode").get<std::vector<int>>();

    if (tm.model_config.task == Task::classification)
      tm.threshold = doc.at("threshold").get<double>();

    const json& losses = doc.at("losses");
    tm.losses.perf = losses.at("perf").get<double>();
    tm.losses.car = losses.at("car").get<double>();
    tm.losses.lambda = losses.at("lambda").get<double>();
    tm.losses.total = losses.at("total").get<double>();
    for (const auto& je : losses.at("history")) {
      EpochLoss e;
      e.epoch = je.at("epoch").get<int>();
      e.perf = je.at("L_perf").get<double>();
      e.car = je.at("L_CAR").get<double>();
      e.lambda = je.at("lambda").get<double>();
      e.total = je.at("L_total").get<double>();
      tm.losses.history.push_back(e);
    }

    // build the parameter skeleton from the config, then overwrite values
    tm.params = init_params(tm.schema, tm.model_config, 0);
    std::vector<diff::Param*> plist = tm.params.all();
    const json& params = doc.at("params");
    if (params.size() != plist.size())
      throw DataError("model: parameter count does not match the configuration");
    for (size_t i = 0; i < plist.size(); ++i) {
      const json& jp = params[i];
      if (jp.at("name").get<std::string>() != plist[i]->name)
        throw DataError("model: unexpected parameter '" + jp.at("name").get<std::string>() +
                        "', wanted '" + plist[i]->name + "'");
      Array a = array_from_json(jp);
      if (!a.same_shape(plist[i]->value))
        throw DataError("model: parameter '" + plist[i]->name + "' has the wrong shape");
      plist[i]->value = std::move(a);
      plist[i]->zero_grad();
    }
    return tm;
  } catch (const json::exception& e) {
    throw DataError(std::string("model: missing or malformed field: ") + e.what());
  }
}

void save_model(const TrainedModel& tm, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("model: cannot write " + path);
  out << model_to_json_text(tm);
}

TrainedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("model: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return model_from_json_text(ss.str());
}

}  // namespace fairattn
