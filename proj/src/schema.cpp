#include "fairattn/schema.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fairattn {

using nlohmann::json;

std::string to_string(Task t) {
  return t == Task::classification ? "classification" : "regression";
}

Task task_from_string(const std::string& s) {
  if (s == "classification") return Task::classification;
  if (s == "regression") return Task::regression;
  throw DataError("unknown task kind: " + s);
}

Schema::Schema(std::vector<FeatureSpec> features, int sensitive_index,
               std::string response_name, Task task)
    : features_(std::move(features)),
      sensitive_index_(sensitive_index),
      response_name_(std::move(response_name)),
      task_(task) {
  derive();
}

void Schema::derive() {
  require(!features_.empty(), "Schema: no features declared");
  require(sensitive_index_ >= 0 && sensitive_index_ < n_features(),
          "Schema: sensitive index out of range");
  const FeatureSpec& s = features_[sensitive_index_];
  require(s.kind == FeatureKind::categorical, "Schema: sensitive feature must be categorical");
  require(s.cardinality() >= 2, "Schema: sensitive feature needs at least two categories");

  n_categorical_ = 0;
  n_continuous_ = 0;
  one_hot_width_ = 0;
  oh_offsets_.assign(features_.size(), -1);
  for (size_t i = 0; i < features_.size(); ++i) {
    const FeatureSpec& f = features_[i];
    require(!f.name.empty(), "Schema: unnamed feature");
    if (f.kind == FeatureKind::categorical) {
      require(f.cardinality() >= 1, "Schema: categorical feature '" + f.name + "' has no categories");
      oh_offsets_[i] = one_hot_width_;
      one_hot_width_ += f.cardinality();
      ++n_categorical_;
    } else {
      require(f.categories.empty(), "Schema: continuous feature '" + f.name + "' declares categories");
      ++n_continuous_;
    }
    for (size_t j = 0; j < i; ++j)
      require(features_[j].name != f.name, "Schema: duplicate feature name '" + f.name + "'");
    require(f.name != response_name_, "Schema: feature name collides with response column");
  }
}

int Schema::flat_index(int feature, int category) const {
  require(feature >= 0 && feature < n_features(), "flat_index: feature out of range");
  const FeatureSpec& f = features_[feature];
  require(f.kind == FeatureKind::categorical, "flat_index: feature is continuous");
  require(category >= 0 && category < f.cardinality(), "flat_index: category out of range");
  return oh_offsets_[feature] + category;
}

std::pair<int, int> Schema::decode_flat(int flat) const {
  require(flat >= 0 && flat < one_hot_width_, "decode_flat: index out of range");
  for (int i = n_features() - 1; i >= 0; --i) {
    if (oh_offsets_[i] >= 0 && flat >= oh_offsets_[i])
      return {i, flat - oh_offsets_[i]};
  }
  throw ContractViolation("decode_flat: unreachable");
}

int Schema::feature_index(const std::string& name) const {
  for (int i = 0; i < n_features(); ++i)
    if (features_[i].name == name) return i;
  return -1;
}

int Schema::category_index(int feature, const std::string& label) const {
  const FeatureSpec& f = features_[feature];
  for (int c = 0; c < f.cardinality(); ++c)
    if (f.categories[c] == label) return c;
  return -1;
}

bool Schema::operator==(const Schema& o) const {
  if (n_features() != o.n_features() || sensitive_index_ != o.sensitive_index_ ||
      response_name_ != o.response_name_ || task_ != o.task_)
    return false;
  for (int i = 0; i < n_features(); ++i) {
    const FeatureSpec &a = features_[i], &b = o.features_[i];
    if (a.name != b.name || a.kind != b.kind || a.categories != b.categories) return false;
  }
  return true;
}

Schema Schema::from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("schema: invalid JSON: ") + e.what());
  }
  try {
    std::vector<FeatureSpec> feats;
    int sensitive = -1;
    for (const auto& jf : doc.at("features")) {
      FeatureSpec f;
      f.name = jf.at("name").get<std::string>();
      std::string kind = jf.at("kind").get<std::string>();
      if (kind == "categorical") {
        f.kind = FeatureKind::categorical;
        for (const auto& c : jf.at("categories")) f.categories.push_back(c.get<std::string>());
      } else if (kind == "continuous") {
        f.kind = FeatureKind::continuous;
      } else {
        throw DataError("schema: unknown feature kind '" + kind + "'");
      }
      if (jf.value("sensitive", false)) {
        if (sensitive >= 0) throw DataError("schema: multiple sensitive features declared");
        sensitive = static_cast<int>(feats.size());
      }
      feats.push_back(std::move(f));
    }
    if (sensitive < 0) throw DataError("schema: no sensitive feature declared");
    std::string response = doc.at("response").get<std::string>();
    Task task = task_from_string(doc.at("task").get<std::string>());
    return Schema(std::move(feats), sensitive, std::move(response), task);
  } catch (const json::exception& e) {
    throw DataError(std::string("schema: missing or malformed field: ") + e.what());
  }
}

std::string Schema::to_json_text() const {
  json doc;
  doc["task"] = to_string(task_);
  doc["response"] = response_name_;
  json feats = json::array();
  for (int i = 0; i < n_features(); ++i) {
    const FeatureSpec& f = features_[i];
    json jf;
    jf["name"] = f.name;
    jf["kind"] = f.kind == FeatureKind::categorical ? "categorical" : "continuous";
    if (f.kind == FeatureKind::categorical) jf["categories"] = f.categories;
    if (i == sensitive_index_) jf["sensitive"] = true;
    feats.push_back(std::move(jf));
  }
  doc["features"] = std::move(feats);
  return doc.dump(2) + "\n";
}

Schema Schema::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("schema: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

void Schema::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("schema: cannot write " + path);
  out << to_json_text();
}

}  // namespace fairattn
