#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "fairattn/errors.hpp"

namespace fairattn {

// Dense row-major array with an explicit (rows, cols) shape.
// Column vectors are (n, 1); everything in the model is a vector or a
// square matrix, so this stays deliberately small.
struct Array {
  int rows = 0;
  int cols = 1;
  std::vector<double> v;

  Array() = default;
  Array(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}

  static Array zeros(int r, int c = 1) { return Array(r, c); }
  static Array zeros_like(const Array& a) { return Array(a.rows, a.cols); }
  static Array full(int r, int c, double x) {
    Array a(r, c);
    for (auto& e : a.v) e = x;
    return a;
  }
  static Array vec(std::initializer_list<double> xs) {
    Array a(static_cast<int>(xs.size()), 1);
    int i = 0;
    for (double x : xs) a.v[i++] = x;
    return a;
  }
  static Array vec(const std::vector<double>& xs) {
    Array a(static_cast<int>(xs.size()), 1);
    a.v = xs;
    return a;
  }

  int size() const { return rows * cols; }
  bool same_shape(const Array& o) const { return rows == o.rows && cols == o.cols; }
  bool is_vector() const { return cols == 1; }
  bool is_scalar() const { return rows == 1 && cols == 1; }

  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  double& operator[](int i) { return v[i]; }
  double operator[](int i) const { return v[i]; }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }
};

}  // namespace fairattn
