#include "fairattn/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fairattn/rng.hpp"

namespace fairattn {

void Dataset::push_row(std::span<const double> vals, std::span<const uint8_t> miss, double y) {
  require(static_cast<int>(vals.size()) == n_features(), "push_row: wrong cell count");
  cells.insert(cells.end(), vals.begin(), vals.end());
  if (miss.empty())
    missing.insert(missing.end(), vals.size(), 0);
  else
    missing.insert(missing.end(), miss.begin(), miss.end());
  response.push_back(y);
  ++n_rows;
}

void Dataset::check() const {
  require(static_cast<size_t>(n_rows) * n_features() == cells.size(), "Dataset: cell count mismatch");
  require(static_cast<size_t>(n_rows) == response.size(), "Dataset: response length mismatch");
  for (int r = 0; r < n_rows; ++r) {
    for (int f = 0; f < n_features(); ++f) {
      if (schema.feature(f).kind != FeatureKind::categorical || cell_missing(r, f)) continue;
      int c = category_at(r, f);
      require(c >= 0 && c < schema.feature(f).cardinality(),
              "Dataset: categorical cell out of range at row " + std::to_string(r) +
                  ", feature '" + schema.feature(f).name + "'");
    }
  }
}

PreprocessStats fit_preprocess(const Dataset& train) {
  require(train.n_rows > 0, "fit_preprocess: empty training data");
  const Schema& sc = train.schema;
  PreprocessStats stats;
  stats.continuous.resize(sc.n_features());
  stats.categorical_mode.assign(sc.n_features(), -1);

  for (int f = 0; f < sc.n_features(); ++f) {
    if (sc.feature(f).kind == FeatureKind::continuous) {
      double sum = 0.0;
      int n = 0;
      for (int r = 0; r < train.n_rows; ++r) {
        if (train.cell_missing(r, f)) continue;
        sum += train.cell(r, f);
        ++n;
      }
      auto& cs = stats.continuous[f];
      cs.mean = n > 0 ? sum / n : 0.0;
      double var = 0.0;
      for (int r = 0; r < train.n_rows; ++r) {
        if (train.cell_missing(r, f)) continue;
        double d = train.cell(r, f) - cs.mean;
        var += d * d;
      }
      var = n > 0 ? var / n : 0.0;
      if (var > 0.0) {
        cs.scale = std::sqrt(var);
      } else {
        cs.scale = 1.0;  // constant column: leave values centered at zero
        cs.zero_variance = true;
      }
    } else {
      std::vector<int> counts(sc.feature(f).cardinality(), 0);
      for (int r = 0; r < train.n_rows; ++r) {
        if (train.cell_missing(r, f)) continue;
        ++counts[train.category_at(r, f)];
      }
      int mode = 0;
      for (int c = 1; c < static_cast<int>(counts.size()); ++c)
        if (counts[c] > counts[mode]) mode = c;
      stats.categorical_mode[f] = mode;
    }
  }
  return stats;
}

Dataset apply_preprocess(const Dataset& ds, const PreprocessStats& stats) {
  require(static_cast<int>(stats.continuous.size()) == ds.n_features(),
          "apply_preprocess: stats do not match schema");
  Dataset out(ds.schema);
  out.n_rows = ds.n_rows;
  out.response = ds.response;
  out.cells.resize(ds.cells.size());
  out.missing.assign(ds.cells.size(), 0);
  for (int r = 0; r < ds.n_rows; ++r) {
    for (int f = 0; f < ds.n_features(); ++f) {
      size_t at = static_cast<size_t>(r) * ds.n_features() + f;
      if (ds.schema.feature(f).kind == FeatureKind::continuous) {
        const auto& cs = stats.continuous[f];
        out.cells[at] = ds.cell_missing(r, f) ? 0.0 : (ds.cells[at] - cs.mean) / cs.scale;
      } else {
        out.cells[at] = ds.cell_missing(r, f)
                            ? static_cast<double>(stats.categorical_mode[f])
                            : ds.cells[at];
      }
    }
  }
  out.check();
  return out;
}

PerturbedDataset perturb(const Dataset& ds) {
  PerturbedDataset pd;
  pd.base = &ds;
  pd.rows_by_base_category.resize(ds.schema.sensitive_cardinality());
  for (int r = 0; r < ds.n_rows; ++r)
    pd.rows_by_base_category[ds.sensitive_category(r)].push_back(r);
  return pd;
}

Dataset PerturbedDataset::materialize(int base_cat, int target_cat) const {
  require(base != nullptr, "PerturbedDataset: not initialized");
  const Dataset& b = *base;
  require(base_cat >= 0 && base_cat < n_categories() && target_cat >= 0 &&
              target_cat < n_categories(),
          "materialize: category out of range");
  Dataset out(b.schema);
  int sigma = b.schema.sensitive_index();
  std::vector<double> buf(b.n_features());
  for (int r : rows_by_base_category[base_cat]) {
    auto row = b.row(r);
    std::copy(row.begin(), row.end(), buf.begin());
    buf[sigma] = static_cast<double>(target_cat);
    out.push_row(buf, {}, b.response[r]);
  }
  return out;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, int line_no, const std::string& col) {
  double x = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, x);
  if (ec != std::errc() || ptr != last)
    throw DataError("csv line " + std::to_string(line_no) + ", column '" + col +
                    "': unparseable value '" + s + "'");
  return x;
}

std::string format_double(double x) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, ptr);
}

}  // namespace

Dataset load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("csv: empty file " + path);

  std::vector<std::string> header = split_line(line);
  int p = schema.n_features();
  std::vector<int> col_to_feature(header.size(), -1);
  int response_col = -1;
  std::vector<bool> seen(p, false);
  for (size_t c = 0; c < header.size(); ++c) {
    if (header[c] == schema.response_name()) {
      if (response_col >= 0) throw DataError("csv: duplicate response column");
      response_col = static_cast<int>(c);
      continue;
    }
    int f = schema.feature_index(header[c]);
    if (f < 0) throw DataError("csv: unknown column '" + header[c] + "'");
    if (seen[f]) throw DataError("csv: duplicate column '" + header[c] + "'");
    seen[f] = true;
    col_to_feature[c] = f;
  }
  for (int f = 0; f < p; ++f)
    if (!seen[f]) throw DataError("csv: declared feature '" + schema.feature(f).name + "' missing");
  if (response_col < 0)
    throw DataError("csv: response column '" + schema.response_name() + "' missing");

  Dataset ds(schema);
  std::vector<double> vals(p);
  std::vector<uint8_t> miss(p);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols = split_line(line);
    if (cols.size() != header.size())
      throw DataError("csv line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " columns, found " +
                      std::to_string(cols.size()));
    std::fill(miss.begin(), miss.end(), 0);
    double y = 0.0;
    for (size_t c = 0; c < cols.size(); ++c) {
      if (static_cast<int>(c) == response_col) {
        if (cols[c].empty())
          throw DataError("csv line " + std::to_string(line_no) + ": missing response");
        y = parse_double(cols[c], line_no, schema.response_name());
        if (schema.task() == Task::classification && y != 0.0 && y != 1.0)
          throw DataError("csv line " + std::to_string(line_no) +
                          ": classification response must be 0 or 1");
        continue;
      }
      int f = col_to_feature[c];
      const FeatureSpec& spec = schema.feature(f);
      if (cols[c].empty()) {
        miss[f] = 1;
        vals[f] = 0.0;
        continue;
      }
      if (spec.kind == FeatureKind::categorical) {
        int cat = schema.category_index(f, cols[c]);
        if (cat < 0)
          throw DataError("csv line " + std::to_string(line_no) + ", column '" + spec.name +
                          "': undeclared category '" + cols[c] + "'");
        vals[f] = static_cast<double>(cat);
      } else {
        vals[f] = parse_double(cols[c], line_no, spec.name);
      }
    }
    ds.push_row(vals, miss, y);
  }
  ds.check();
  return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("csv: cannot write " + path);
  const Schema& sc = ds.schema;
  for (int f = 0; f < sc.n_features(); ++f) out << sc.feature(f).name << ',';
  out << sc.response_name() << '\n';
  for (int r = 0; r < ds.n_rows; ++r) {
    for (int f = 0; f < sc.n_features(); ++f) {
      if (!ds.cell_missing(r, f)) {
        if (sc.feature(f).kind == FeatureKind::categorical)
          out << sc.feature(f).categories[ds.category_at(r, f)];
        else
          out << format_double(ds.cell(r, f));
      }
      out << ',';
    }
    out << format_double(ds.response[r]) << '\n';
  }
}

Dataset generate_synthetic(int n, uint64_t seed) {
  require(n >= 1, "generate_synthetic: n must be positive");
  std::vector<FeatureSpec> feats(3);
  feats[0] = {"X_1", FeatureKind::categorical, {"0", "1"}};
  feats[1] = {"X_2", FeatureKind::categorical, {"0", "1"}};
  feats[2] = {"X_3", FeatureKind::categorical, {"0", "1"}};
  Schema schema(std::move(feats), 0, "y", Task::classification);
  Dataset ds(std::move(schema));

  Rng rng = Rng::substream(seed, "synth");
  double vals[3];
  for (int i = 0; i < n; ++i) {
    bool x2 = rng.bernoulli(0.5);
    bool x3 = rng.bernoulli(0.5);
    bool x1 = rng.bernoulli(x2 ? 0.7 : 0.3);
    bool y = rng.bernoulli((x2 && x3) ? 0.8 : 0.2);
    vals[0] = x1 ? 1.0 : 0.0;
    vals[1] = x2 ? 1.0 : 0.0;
    vals[2] = x3 ? 1.0 : 0.0;
    ds.push_row({vals, 3}, {}, y ? 1.0 : 0.0);
  }
  return ds;
}

SplitResult split(const Dataset& ds, double train_fraction, uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0, "split: fraction must be in (0,1)");
  // stratify by response for classification so rare positives land on both sides
  std::vector<std::vector<int>> groups;
  if (ds.schema.task() == Task::classification) {
    groups.resize(2);
    for (int r = 0; r < ds.n_rows; ++r) groups[ds.response[r] == 1.0 ? 1 : 0].push_back(r);
  } else {
    groups.emplace_back();
    for (int r = 0; r < ds.n_rows; ++r) groups[0].push_back(r);
  }

  Rng rng = Rng::substream(seed, "split");
  std::vector<uint8_t> in_train(ds.n_rows, 0);
  for (auto& g : groups) {
    rng.shuffle(g);
    auto k = static_cast<size_t>(std::llround(train_fraction * static_cast<double>(g.size())));
    for (size_t i = 0; i < k && i < g.size(); ++i) in_train[g[i]] = 1;
  }

  SplitResult res{Dataset(ds.schema), Dataset(ds.schema)};
  for (int r = 0; r < ds.n_rows; ++r) {
    Dataset& side = in_train[r] ? res.train : res.test;
    std::span<const uint8_t> miss;
    if (!ds.missing.empty())
      miss = {ds.missing.data() + static_cast<size_t>(r) * ds.n_features(),
              static_cast<size_t>(ds.n_features())};
    side.push_row(ds.row(r), miss, ds.response[r]);
  }
  if (res.train.n_rows == 0 || res.test.n_rows == 0)
    throw DataError("split: one side is empty");
  return res;
}

}  // namespace fairattn
