#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fairattn/array.hpp"

namespace fairattn::diff {

// A learnable parameter: a named value array with a gradient accumulator of
// identical shape. Gradients add up across backward passes until explicitly
// zeroed, which is what the shared sensitive layers rely on.
struct Param {
  std::string name;
  Array value;
  Array grad;

  Param() = default;
  Param(std::string n, Array v) : name(std::move(n)), value(std::move(v)) {
    grad = Array::zeros_like(value);
  }

  int size() const { return value.size(); }
  void zero_grad() { grad.fill(0.0); }
};

class Tape;

// Handle to one node of a computation graph. data() and grad() always share
// a shape; grad() holds the sum over all backward passes run so far.
class Value {
 public:
  Value() = default;
  bool valid() const { return tape_ != nullptr; }
  const Array& data() const;
  const Array& grad() const;
  int rows() const { return data().rows; }
  int cols() const { return data().cols; }
  int size() const { return data().size(); }
  double scalar() const;

 private:
  friend class Tape;
  Value(Tape* t, int i) : tape_(t), idx_(i) {}
  Tape* tape_ = nullptr;
  int idx_ = -1;
};

// Result of comparing analytic gradients against central finite differences.
struct GradReport {
  struct Entry {
    std::string param;
    double max_rel_err = 0.0;
    int flat_index = -1;     // worst coordinate within the parameter
    double analytic = 0.0;   // at that coordinate
    double numeric = 0.0;
  };
  double step = 0.0;
  double max_rel_err = 0.0;
  std::string worst_param;
  std::vector<Entry> per_param;

  bool passed(double tol) const { return max_rel_err <= tol; }
};

// Reverse-mode tape over vectors and matrices. Nodes are created in forward
// order (creation order is a topological order), and backward() replays them
// in reverse. One tape is confined to a single thread from forward through
// backward; clear() drops the graph but keeps buffer capacity so a training
// loop can rebuild per batch without churning the allocator.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // leaves
  Value input(Array a);           // constant w.r.t. differentiation
  Value param(Param& p);          // gradient sink; backward adds into p.grad

  // elementwise arithmetic (shapes must agree)
  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);
  Value scale(Value a, double c);
  Value sum(Value a);             // -> 1x1

  // model primitives
  Value gelu(Value a);
  Value elementwise_linear(Value x, Value w, Value b);
  Value layer_norm(Value x, Value w, Value b, double eps);
  // augmented-input variants: slots past `p` reuse position sigma's parameters
  Value sen_layer_norm(Value x, Value w, Value b, double eps, int p, int sigma);
  Value sen_elementwise_linear(Value x, Value w, Value b, int p, int sigma);
  Value softmax_rows(Value m);
  Value scaled_self_outer(Value e, double denom);  // e e^T / denom
  Value matvec(Value a, Value x);
  Value affine(Value w, Value x, Value b);         // W x + b
  // per-categorical-feature aggregation of one-hot slot activations;
  // offsets has one entry per feature plus a trailing end sentinel
  Value cat_linear(Value act, Value w, Value b, std::span<const int> offsets);

  // structural ops
  Value concat(std::span<const Value> parts);      // column vectors
  // out[i] = from_a[i] >= 0 ? a[from_a[i]] : b[from_b[i]]; b may be empty
  Value interleave(Value a, Value b, std::span<const int> from_a, std::span<const int> from_b);
  Value slice(Value x, int start, int len);        // column vector slice
  Value column_segment(Value m, int col, int row_begin, int row_end);
  Value stack_scalars(std::span<const Value> xs);  // 1x1 nodes -> vector

  // losses
  Value bce_with_logits(Value logits, const Array& labels);
  Value mse(Value pred, const Array& target);

  // Accumulates d(root)/d(node) into every node's grad and every bound
  // Param's grad. Repeated calls without zeroing add up exactly.
  void backward(const Value& root);

  void clear();
  size_t node_count() const { return nodes_.size(); }

 private:
  friend class Value;
  struct Node {
    Array data;
    Array grad;
    long long scratch_off = 0;
    Param* bound = nullptr;
    std::function<void(Tape&, int)> back;  // propagate pass-gradient to parents
  };

  std::vector<Node> nodes_;
  std::vector<double> scratch_;
  long long scratch_len_ = 0;

  int push(Array data, std::function<void(Tape&, int)> back, Param* bound = nullptr);
  double* pg(int idx) { return scratch_.data() + nodes_[idx].scratch_off; }
  const Array& node_data(int idx) const { return nodes_[idx].data; }
};

// Checks d(eval)/d(param) for every listed parameter against central finite
// differences with the given step. `eval` must be deterministic; it builds a
// fresh graph, runs backward, and accumulates into the params' grads. Throws
// NumericError if two evaluations at the same point disagree.
GradReport grad_check(const std::function<double()>& eval,
                      std::span<Param* const> params, double step);

}  // namespace fairattn::diff
