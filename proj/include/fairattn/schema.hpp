#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fairattn/errors.hpp"

namespace fairattn {

enum class Task { classification, regression };

std::string to_string(Task t);
Task task_from_string(const std::string& s);

enum class FeatureKind { categorical, continuous };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::continuous;
  std::vector<std::string> categories;  // declared vocabulary, categorical only

  int cardinality() const { return static_cast<int>(categories.size()); }
};

// Column layout of a dataset: ordered feature descriptors, the designated
// sensitive feature, the response column, and the derived one-hot offset
// table. Category vocabularies are declared up front so train/test encodings
// cannot drift.
class Schema {
 public:
  Schema() = default;
  Schema(std::vector<FeatureSpec> features, int sensitive_index,
         std::string response_name, Task task);

  static Schema from_json_text(const std::string& text);
  static Schema load(const std::string& path);
  std::string to_json_text() const;
  void save(const std::string& path) const;

  const std::vector<FeatureSpec>& features() const { return features_; }
  const FeatureSpec& feature(int i) const { return features_[i]; }
  int n_features() const { return static_cast<int>(features_.size()); }
  int n_categorical() const { return n_categorical_; }
  int n_continuous() const { return n_continuous_; }
  int one_hot_width() const { return one_hot_width_; }
  int sensitive_index() const { return sensitive_index_; }
  int sensitive_cardinality() const { return features_[sensitive_index_].cardinality(); }
  const std::string& response_name() const { return response_name_; }
  Task task() const { return task_; }

  // start of feature i's block in the flat one-hot layout (-1 for continuous)
  int one_hot_offset(int feature) const { return oh_offsets_[feature]; }
  int flat_index(int feature, int category) const;
  std::pair<int, int> decode_flat(int flat) const;  // -> (feature, category)

  int feature_index(const std::string& name) const;  // -1 if absent
  int category_index(int feature, const std::string& label) const;  // -1 if absent

  bool operator==(const Schema& o) const;

 private:
  void derive();

  std::vector<FeatureSpec> features_;
  int sensitive_index_ = -1;
  std::string response_name_;
  Task task_ = Task::classification;

  int n_categorical_ = 0;
  int n_continuous_ = 0;
  int one_hot_width_ = 0;
  std::vector<int> oh_offsets_;
};

}  // namespace fairattn
