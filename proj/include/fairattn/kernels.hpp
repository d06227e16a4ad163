#pragma once

#include <cmath>

namespace fairattn::kern {

// Standard normal CDF through erfc; accurate to ~1 ulp, no tanh shortcut.
inline double phi_cdf(double z) { return 0.5 * std::erfc(-z * 0.7071067811865475244); }

inline double phi_pdf(double z) {
  return 0.3989422804014326779 * std::exp(-0.5 * z * z);
}

inline double gelu(double z) { return z * phi_cdf(z); }

inline double gelu_grad(double z) { return phi_cdf(z) + z * phi_pdf(z); }

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow
inline double softplus(double z) {
  double m = z > 0.0 ? z : 0.0;
  return m + std::log1p(std::exp(-std::fabs(z)));
}

// Population-variance layer norm over x[0..p): out_j = (x_j - mu) * inv * w_j + b_j.
// Reports mu and inv = 1/sqrt(var + eps) for reuse by backward passes.
inline void layer_norm(const double* x, int p, const double* w, const double* b,
                       double eps, double* out, double* mu_out, double* inv_out) {
  double mu = 0.0;
  for (int j = 0; j < p; ++j) mu += x[j];
  mu /= p;
  double var = 0.0;
  for (int j = 0; j < p; ++j) {
    double d = x[j] - mu;
    var += d * d;
  }
  var /= p;
  double inv = 1.0 / std::sqrt(var + eps);
  for (int j = 0; j < p; ++j) out[j] = (x[j] - mu) * inv * w[j] + b[j];
  *mu_out = mu;
  *inv_out = inv;
}

// Layer norm over an augmented vector of length total >= p: the first p slots
// are normalized among themselves, the remaining slots reuse the first-p
// statistics and the affine parameters of position `sigma`.
inline void sen_layer_norm(const double* x, int total, int p, int sigma,
                           const double* w, const double* b, double eps,
                           double* out, double* mu_out, double* inv_out) {
  layer_norm(x, p, w, b, eps, out, mu_out, inv_out);
  for (int j = p; j < total; ++j) out[j] = (x[j] - *mu_out) * *inv_out * w[sigma] + b[sigma];
}

// Row-max-stabilized softmax of one row.
inline void softmax_row(const double* s, int n, double* out) {
  double m = s[0];
  for (int j = 1; j < n; ++j) m = s[j] > m ? s[j] : m;
  double z = 0.0;
  for (int j = 0; j < n; ++j) {
    out[j] = std::exp(s[j] - m);
    z += out[j];
  }
  for (int j = 0; j < n; ++j) out[j] /= z;
}

// S = e e^T / denom for a length-n vector e
inline void scaled_self_outer(const double* e, int n, double denom, double* out) {
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] = e[i] * e[j] / denom;
}

// out = A x, A is (n x m) row-major
inline void matvec(const double* a, int n, int m, const double* x, double* out) {
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    const double* row = a + static_cast<size_t>(i) * m;
    for (int j = 0; j < m; ++j) acc += row[j] * x[j];
    out[i] = acc;
  }
}

}  // namespace fairattn::kern
