#include "fairattn/diff.hpp"

#include <algorithm>
#include <cmath>

#include "fairattn/errors.hpp"
#include "fairattn/kernels.hpp"

namespace fairattn::diff {

const Array& Value::data() const {
  require(valid(), "Value: use of empty handle");
  return tape_->nodes_[idx_].data;
}

const Array& Value::grad() const {
  require(valid(), "Value: use of empty handle");
  return tape_->nodes_[idx_].grad;
}

double Value::scalar() const {
  const Array& d = data();
  require(d.is_scalar(), "Value::scalar: node is not 1x1");
  return d.v[0];
}

int Tape::push(Array data, std::function<void(Tape&, int)> back, Param* bound) {
  Node n;
  n.scratch_off = scratch_len_;
  scratch_len_ += data.size();
  n.grad = Array::zeros_like(data);
  n.data = std::move(data);
  n.bound = bound;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::clear() {
  nodes_.clear();
  scratch_len_ = 0;
}

Value Tape::input(Array a) { return Value(this, push(std::move(a), nullptr)); }

Value Tape::param(Param& p) { return Value(this, push(p.value, nullptr, &p)); }

Value Tape::add(Value a, Value b) {
  require(a.data().same_shape(b.data()), "add: shape mismatch");
  Array out = a.data();
  const Array& bd = b.data();
  for (int i = 0; i < out.size(); ++i) out.v[i] += bd.v[i];
  int ai = a.idx_, bi = b.idx_;
  return Value(this, push(std::move(out), [ai, bi](Tape& t, int self) {
                 const double* g = t.pg(self);
                 double *ga = t.pg(ai), *gb = t.pg(bi);
                 int n = t.nodes_[self].data.size();
                 for (int i = 0; i < n; ++i) {
                   ga[i] += g[i];
                   gb[i] += g[i];
                 }
               }));
}

Value Tape::sub(Value a, Value b) {
  require(a.data().same_shape(b.data()), "sub: shape mismatch");
  Array out = a.data();
  const Array& bd = b.data();
  for (int i = 0; i < out.size(); ++i) out.v[i] -= bd.v[i];
  int ai = a.idx_, bi = b.idx_;
  return Value(this, push(std::move(out), [ai, bi](Tape& t, int self) {
                 const double* g = t.pg(self);
                 double *ga = t.pg(ai), *gb = t.pg(bi);
                 int n = t.nodes_[self].data.size();
                 for (int i = 0; i < n; ++i) {
                   ga[i] += g[i];
                   gb[i] -= g[i];
                 }
               }));
}

Value Tape::mul(Value a, Value b) {
  require(a.data().same_shape(b.data()), "mul: shape mismatch");
  Array out = a.data();
  const Array& bd = b.data();
  for (int i = 0; i < out.size(); ++i) out.v[i] *= bd.v[i];
  int ai = a.idx_, bi = b.idx_;
  return Value(this, push(std::move(out), [ai, bi](Tape& t, int self) {
                 const double* g = t.pg(self);
                 const Array& ad = t.nodes_[ai].data;
                 const Array& bdd = t.nodes_[bi].data;
                 double *ga = t.pg(ai), *gb = t.pg(bi);
                 for (int i = 0; i < ad.size(); ++i) {
                   ga[i] += g[i] * bdd.v[i];
                   gb[i] += g[i] * ad.v[i];
                 }
               }));
}

Value Tape::scale(Value a, double c) {
  Array out = a.data();
  for (auto& x : out.v) x *= c;
  int ai = a.idx_;
  return Value(this, push(std::move(out), [ai, c](Tape& t, int self) {
                 const double* g = t.pg(self);
                 double* ga = t.pg(ai);
                 int n = t.nodes_[self].data.size();
                 for (int i = 0; i < n; ++i) ga[i] += c * g[i];
               }));
}

Value Tape::sum(Value a) {
  double s = 0.0;
  for (double x : a.data().v) s += x;
  Array out(1, 1);
  out.v[0] = s;
  int ai = a.idx_;
  return Value(this, push(std::move(out), [ai](Tape& t, int self) {
                 double g = t.pg(self)[0];
                 double* ga = t.pg(ai);
                 int n = t.nodes_[ai].data.size();
                 for (int i = 0; i < n; ++i) ga[i] += g;
               }));
}

Value Tape::gelu(Value a) {
  Array out = a.data();
  for (auto& x : out.v) x = kern::gelu(x);
  int ai = a.idx_;
  return Value(this, push(std::move(out), [ai](Tape& t, int self) {
                 const double* g = t.pg(self);
                 const Array& ad = t.nodes_[ai].data;
                 double* ga = t.pg(ai);
                 for (int i = 0; i < ad.size(); ++i) ga[i] += g[i] * kern::gelu_grad(ad.v[i]);
               }));
}

Value Tape::elementwise_linear(Value x, Value w, Value b) {
  require(x.data().same_shape(w.data()) && x.data().same_shape(b.data()),
          "elementwise_linear: shape mismatch");
  const Array &xd = x.data(), &wd = w.data(), &bd = b.data();
  Array out = Array::zeros_like(xd);
  for (int i = 0; i < out.size(); ++i) out.v[i] = wd.v[i] * xd.v[i] + bd.v[i];
  int xi = x.idx_, wi = w.idx_, bi = b.idx_;
  return Value(this, push(std::move(out), [xi, wi, bi](Tape& t, int self) {
                 const double* g = t.pg(self);
                 const Array& xv = t.nodes_[xi].data;
                 const Array& wv = t.nodes_[wi].data;
                 double *gx = t.pg(xi), *gw = t.pg(wi), *gb = t.pg(bi);
                 for (int i = 0; i < xv.size(); ++i) {
                   gx[i] += g[i] * wv.v[i];
                   gw[i] += g[i] * xv.v[i];
                   gb[i] += g[i];
                 }
               }));
}

Value Tape::sen_elementwise_linear(Value x, Value w, Value b, int p, int sigma) {
  const Array &xd = x.data(), &wd = w.data(), &bd = b.data();
  require(wd.size() == p && bd.size() == p, "sen_elementwise_linear: parameter length != p");
  require(xd.is_vector() && xd.rows >= p, "sen_elementwise_linear: input shorter than p");
  require(sigma >= 0 && sigma < p, "sen_elementwise_linear: sigma out of range");
  Array out = Array::zeros_like(xd);
  for (int i = 0; i < p; ++i) out.v[i] = wd.v[i] * xd.v[i] + bd.v[i];
  for (int i = p; i < xd.size(); ++i) out.v[i] = wd.v[sigma] * xd.v[i] + bd.v[sigma];
  int xi = x.idx_, wi = w.idx_, bi = b.idx_;
  return Value(this, push(std::move(out), [xi, wi, bi, p, sigma](Tape& t, int self) {
                 const double* g = t.pg(self);
                 const Array& xv = t.nodes_[xi].data;
                 const Array& wv = t.nodes_[wi].data;
                 double *gx = t.pg(xi), *gw = t.pg(wi), *gb = t.pg(bi);
                 for (int i = 0; i < p; ++i) {
                   gx[i] += g[i] * wv.v[i];
                   gw[i] += g[i] * xv.v[i];
                   gb[i] += g[i];
                 }
                 for (int i = p; i < xv.size(); ++i) {
                   gx[i] += g[i] * wv.v[sigma];
                   gw[sigma] += g[i] * xv.v[i];
                   gb[sigma] += g[i];
                 }
               }));
}

namespace {

// shared backward for layer_norm / sen_layer_norm; `p` slots carry the
// statistics, any further slots reuse them with position sigma's affine
void ln_backward(Tape& t, double* g, const Array& xd, const Array& wd, double* gx,
                 double* gw, double* gb, int p, int sigma, double mu, double inv) {
  const int total = xd.size();
  // h = dL/dx_hat per slot; accumulate the two reduction terms
  double h_sum = 0.0;
  double hx_sum = 0.0;  // sum of h_s * x_hat_s over all slots
  for (int s = 0; s < total; ++s) {
    double w_s = s < p ? wd.v[s] : wd.v[sigma];
    double x_hat = (xd.v[s] - mu) * inv;
    double h = g[s] * w_s;
    h_sum += h;
    hx_sum += h * x_hat;
    if (s < p) {
      gw[s] += g[s] * x_hat;
      gb[s] += g[s];
    } else {
      gw[sigma] += g[s] * x_hat;
      gb[sigma] += g[s];
      gx[s] += h * inv;  // augmented slots do not feed the statistics
    }
  }
  for (int j = 0; j < p; ++j) {
    double w_j = wd.v[j];
    double x_hat = (xd.v[j] - mu) * inv;
    double h = g[j] * w_j;
    gx[j] += inv * (h - h_sum / p - x_hat * hx_sum / p);
  }
  (void)t;
}

}  // namespace

Value Tape::layer_norm(Value x, Value w, Value b, double eps) {
  const Array &xd = x.data(), &wd = w.data(), &bd = b.data();
  require(xd.is_vector() && xd.same_shape(wd) && xd.same_shape(bd), "layer_norm: shape mismatch");
  require(xd.rows >= 2, "layer_norm: need at least two slots");
  int p = xd.rows;
  Array out = Array::zeros_like(xd);
  double mu = 0.0, inv = 0.0;
  kern::layer_norm(xd.v.data(), p, wd.v.data(), bd.v.data(), eps, out.v.data(), &mu, &inv);
  int xi = x.idx_, wi = w.idx_, bi = b.idx_;
  return Value(this, push(std::move(out), [xi, wi, bi, p, mu, inv](Tape& t, int self) {
                 ln_backward(t, t.pg(self), t.nodes_[xi].data, t.nodes_[wi].data, t.pg(xi),
                             t.pg(wi), t.pg(bi), p, 0, mu, inv);
               }));
}

Value Tape::sen_layer_norm(Value x, Value w, Value b, double eps, int p, int sigma) {
  const Array &xd = x.data(), &wd = w.data(), &bd = b.data();
  require(xd.is_vector() && xd.rows >= p && p >= 2, "sen_layer_norm: bad input length");
  require(wd.size() == p && bd.size() == p, "sen_layer_norm: parameter length != p");
  require(sigma >= 0 && sigma < p, "sen_layer_norm: sigma out of range");
  Array out = Array::zeros_like(xd);
  double mu = 0.0, inv = 0.0;
  kern::sen_layer_norm(xd.v.data(), xd.rows, p, sigma, wd.v.data(), bd.v.data(), eps,
                       out.v.data(), &mu, &inv);
  int xi = x.idx_, wi = w.idx_, bi = b.idx_;
  return Value(this, push(std::move(out), [xi, wi, bi, p, sigma, mu, inv](Tape& t, int self) {
                 ln_backward(t, t.pg(self), t.nodes_[xi].data, t.nodes_[wi].data, t.pg(xi),
                             t.pg(wi), t.pg(bi), p, sigma, mu, inv);
               }));
}

Value Tape::softmax_rows(Value m) {
  const Array& md = m.data();
  Array out = Array::zeros_like(md);
  for (int r = 0; r < md.rows; ++r)
    kern::softmax_row(md.v.data() + static_cast<size_t>(r) * md.cols, md.cols,
                      out.v.data() + static_cast<size_t>(r) * md.cols);
  int mi = m.idx_;
  return Value(this, push(std::move(out), [mi](Tape& t, int self) {
                 const Array& a = t.nodes_[self].data;  // softmax output
                 const double* g = t.pg(self);
                 double* gm = t.pg(mi);
                 for (int r = 0; r < a.rows; ++r) {
                   const double* ar = a.v.data() + static_cast<size_t>(r) * a.cols;
                   const double* gr = g + static_cast<size_t>(r) * a.cols;
                   double dot = 0.0;
                   for (int j = 0; j < a.cols; ++j) dot += gr[j] * ar[j];
                   double* gmr = gm + static_cast<size_t>(r) * a.cols;
                   for (int j = 0; j < a.cols; ++j) gmr[j] += ar[j] * (gr[j] - dot);
                 }
               }));
}

Value Tape::scaled_self_outer(Value e, double denom) {
  const Array& ed = e.data();
  require(ed.is_vector(), "scaled_self_outer: expects a vector");
  int n = ed.rows;
  Array out(n, n);
  kern::scaled_self_outer(ed.v.data(), n, denom, out.v.data());
  int ei = e.idx_;
  return Value(this, push(std::move(out), [ei, denom, n](Tape& t, int self) {
                 const double* g = t.pg(self);
                 const Array& ev = t.nodes_[ei].data;
                 double* ge = t.pg(ei);
                 // dL/de_k = sum_j (G_kj + G_jk) e_j / denom
                 for (int k = 0; k < n; ++k) {
                   double acc = 0.0;
                   for (int j = 0; j < n; ++j)
                     acc += (g[static_cast<size_t>(k) * n + j] + g[static_cast<size_t>(j) * n + k]) *
                            ev.v[j];
                   ge[k] += acc / denom;
                 }
               }));
}

Value Tape::matvec(Value a, Value x) {
  const Array& ad = a.data();
  const Array& xd = x.data();
  require(xd.is_vector() && ad.cols == xd.rows, "matvec: shape mismatch");
  Array out(ad.rows, 1);
  kern::matvec(ad.v.data(), ad.rows, ad.cols, xd.v.data(), out.v.data());
  int ai = a.idx_, xi = x.idx_;
  return Value(this, push(std::move(out), [ai, xi](Tape& t, int self) {
                 const double* g = t.pg(self);
                 const Array& av = t.nodes_[ai].data;
                 const Array& xv = t.nodes_[xi].data;
                 double *ga = t.pg(ai), *gx = t.pg(xi);
                 for (int i = 0; i < av.rows; ++i) {
                   const double* arow = av.v.data() + static_cast<size_t>(i) * av.cols;
                   double* garow = ga + static_cast<size_t>(i) * av.cols;
                   for (int j = 0; j < av.cols; ++j) {
                     garow[j] += g[i] * xv.v[j];
                     gx[j] += g[i] * arow[j];
                   }
                 }
               }));
}

Value Tape::affine(Value w, Value x, Value b) {
  const Array &wd = w.data(), &xd = x.data(), &bd = b.data();
  require(xd.is_vector() && bd.is_vector() && wd.cols == xd.rows && wd.rows == bd.rows,
          "affine: shape mismatch");
  Array out(wd.rows, 1);
  kern::matvec(wd.v.data(), wd.rows, wd.cols, xd.v.data(), out.v.data());
  for (int i = 0; i < out.rows; ++i) out.v[i] += bd.v[i];
  int wi = w.idx_, xi = x.idx_, bi = b.idx_;
  return Value(this, push(std::move(out), [wi, xi, bi](Tape& t, int self) {
                 const double* g = t.pg(self);
                 const Array& wv = t.nodes_[wi].data;
                 const Array& xv = t.nodes_[xi].data;
                 double *gw = t.pg(wi), *gx = t.pg(xi), *gb = t.pg(bi);
                 for (int i = 0; i < wv.rows; ++i) {
                   const double* wrow = wv.v.data() + static_cast<size_t>(i) * wv.cols;
                   double* gwrow = gw + static_cast<size_t>(i) * wv.cols;
                   for (int j = 0; j < wv.cols; ++j) {
                     gwrow[j] += g[i] * xv.v[j];
                     gx[j] += g[i] * wrow[j];
                   }
                   gb[i] += g[i];
                 }
               }));
}

Value Tape::cat_linear(Value act, Value w, Value b, std::span<const int> offsets) {
  const Array &ad = act.data(), &wd = w.data(), &bd = b.data();
  int n_feat = static_cast<int>(offsets.size()) - 1;
  require(n_feat >= 1 && bd.size() == n_feat, "cat_linear: offsets/bias mismatch");
  require(ad.same_shape(wd) && offsets[n_feat] == ad.size(), "cat_linear: activation length mismatch");
  Array out(n_feat, 1);
  for (int f = 0; f < n_feat; ++f) {
    double acc = 0.0;
    for (int j = offsets[f]; j < offsets[f + 1]; ++j) acc += wd.v[j] * ad.v[j];
    out.v[f] = acc + bd.v[f];
  }
  int ai = act.idx_, wi = w.idx_, bi = b.idx_;
  std::vector<int> offs(offsets.begin(), offsets.end());
  return Value(this, push(std::move(out), [ai, wi, bi, offs = std::move(offs)](Tape& t, int self) {
                 const double* g = t.pg(self);
                 const Array& av = t.nodes_[ai].data;
                 const Array& wv = t.nodes_[wi].data;
                 double *ga = t.pg(ai), *gw = t.pg(wi), *gb = t.pg(bi);
                 int n_feat = static_cast<int>(offs.size()) - 1;
                 for (int f = 0; f < n_feat; ++f) {
                   for (int j = offs[f]; j < offs[f + 1]; ++j) {
                     ga[j] += g[f] * wv.v[j];
                     gw[j] += g[f] * av.v[j];
                   }
                   gb[f] += g[f];
                 }
               }));
}

Value Tape::concat(std::span<const Value> parts) {
  require(!parts.empty(), "concat: no parts");
  int total = 0;
  for (const Value& p : parts) {
    require(p.data().is_vector(), "concat: expects column vectors");
    total += p.rows();
  }
  Array out(total, 1);
  std::vector<int> idx, off;
  int at = 0;
  for (const Value& p : parts) {
    std::copy(p.data().v.begin(), p.data().v.end(), out.v.begin() + at);
    idx.push_back(p.idx_);
    off.push_back(at);
    at += p.rows();
  }
  off.push_back(at);
  return Value(this, push(std::move(out),
                          [idx = std::move(idx), off = std::move(off)](Tape& t, int self) {
                            const double* g = t.pg(self);
                            for (size_t k = 0; k < idx.size(); ++k) {
                              double* gp = t.pg(idx[k]);
                              for (int i = off[k]; i < off[k + 1]; ++i) gp[i - off[k]] += g[i];
                            }
                          }));
}

Value Tape::interleave(Value a, Value b, std::span<const int> from_a,
                       std::span<const int> from_b) {
  require(from_a.size() == from_b.size(), "interleave: plan length mismatch");
  int n = static_cast<int>(from_a.size());
  Array out(n, 1);
  const Array& ad = a.data();
  for (int i = 0; i < n; ++i) {
    if (from_a[i] >= 0) {
      require(from_a[i] < ad.size(), "interleave: index out of range");
      out.v[i] = ad.v[from_a[i]];
    } else {
      require(b.valid() && from_b[i] >= 0 && from_b[i] < b.data().size(),
              "interleave: index out of range");
      out.v[i] = b.data().v[from_b[i]];
    }
  }
  int ai = a.idx_, bi = b.valid() ? b.idx_ : -1;
  std::vector<int> fa(from_a.begin(), from_a.end());
  std::vector<int> fb(from_b.begin(), from_b.end());
  return Value(this, push(std::move(out),
                          [ai, bi, fa = std::move(fa), fb = std::move(fb)](Tape& t, int self) {
                            const double* g = t.pg(self);
                            double* ga = t.pg(ai);
                            double* gb = bi >= 0 ? t.pg(bi) : nullptr;
                            for (size_t i = 0; i < fa.size(); ++i) {
                              if (fa[i] >= 0)
                                ga[fa[i]] += g[i];
                              else
                                gb[fb[i]] += g[i];
                            }
                          }));
}

Value Tape::slice(Value x, int start, int len) {
  const Array& xd = x.data();
  require(xd.is_vector() && start >= 0 && len >= 1 && start + len <= xd.rows,
          "slice: range out of bounds");
  Array out(len, 1);
  std::copy(xd.v.begin() + start, xd.v.begin() + start + len, out.v.begin());
  int xi = x.idx_;
  return Value(this, push(std::move(out), [xi, start, len](Tape& t, int self) {
                 const double* g = t.pg(self);
                 double* gx = t.pg(xi);
                 for (int i = 0; i < len; ++i) gx[start + i] += g[i];
               }));
}

Value Tape::column_segment(Value m, int col, int row_begin, int row_end) {
  const Array& md = m.data();
  require(col >= 0 && col < md.cols && row_begin >= 0 && row_end <= md.rows && row_begin < row_end,
          "column_segment: range out of bounds");
  Array out(row_end - row_begin, 1);
  for (int r = row_begin; r < row_end; ++r) out.v[r - row_begin] = md.at(r, col);
  int mi = m.idx_;
  int cols = md.cols;
  return Value(this, push(std::move(out), [mi, col, row_begin, row_end, cols](Tape& t, int self) {
                 const double* g = t.pg(self);
                 double* gm = t.pg(mi);
                 for (int r = row_begin; r < row_end; ++r)
                   gm[static_cast<size_t>(r) * cols + col] += g[r - row_begin];
               }));
}

Value Tape::stack_scalars(std::span<const Value> xs) {
  require(!xs.empty(), "stack_scalars: empty list");
  Array out(static_cast<int>(xs.size()), 1);
  std::vector<int> idx;
  idx.reserve(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) {
    require(xs[i].data().is_scalar(), "stack_scalars: element is not 1x1");
    out.v[i] = xs[i].data().v[0];
    idx.push_back(xs[i].idx_);
  }
  return Value(this, push(std::move(out), [idx = std::move(idx)](Tape& t, int self) {
                 const double* g = t.pg(self);
                 for (size_t i = 0; i < idx.size(); ++i) t.pg(idx[i])[0] += g[i];
               }));
}

Value Tape::bce_with_logits(Value logits, const Array& labels) {
  const Array& zd = logits.data();
  require(zd.is_vector() && zd.same_shape(labels), "bce_with_logits: shape mismatch");
  require(zd.rows >= 1, "bce_with_logits: empty input");
  for (double y : labels.v)
    require(y == 0.0 || y == 1.0, "bce_with_logits: labels must be 0 or 1");
  int n = zd.rows;
  double loss = 0.0;
  for (int i = 0; i < n; ++i)
    loss += kern::softplus(-zd.v[i]) + (1.0 - labels.v[i]) * zd.v[i];
  Array out(1, 1);
  out.v[0] = loss / n;
  int zi = logits.idx_;
  Array lab = labels;
  return Value(this, push(std::move(out), [zi, lab = std::move(lab), n](Tape& t, int self) {
                 double g = t.pg(self)[0];
                 const Array& zv = t.nodes_[zi].data;
                 double* gz = t.pg(zi);
                 for (int i = 0; i < n; ++i)
                   gz[i] += g * (kern::sigmoid(zv.v[i]) - lab.v[i]) / n;
               }));
}

Value Tape::mse(Value pred, const Array& target) {
  const Array& pd = pred.data();
  require(pd.is_vector() && pd.same_shape(target), "mse: shape mismatch");
  require(pd.rows >= 1, "mse: empty input");
  int n = pd.rows;
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double d = pd.v[i] - target.v[i];
    loss += d * d;
  }
  Array out(1, 1);
  out.v[0] = loss / n;
  int pi = pred.idx_;
  Array tgt = target;
  return Value(this, push(std::move(out), [pi, tgt = std::move(tgt), n](Tape& t, int self) {
                 double g = t.pg(self)[0];
                 const Array& pv = t.nodes_[pi].data;
                 double* gp = t.pg(pi);
                 for (int i = 0; i < n; ++i)
                   gp[i] += g * 2.0 * (pv.v[i] - tgt.v[i]) / n;
               }));
}

void Tape::backward(const Value& root) {
  require(root.valid() && root.tape_ == this, "backward: root not on this tape");
  require(root.data().is_scalar(), "backward: root must be scalar");
  scratch_.assign(static_cast<size_t>(scratch_len_), 0.0);
  pg(root.idx_)[0] = 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
    if (nodes_[i].back) nodes_[i].back(*this, i);
  for (size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    const double* g = scratch_.data() + n.scratch_off;
    for (int k = 0; k < n.grad.size(); ++k) n.grad.v[k] += g[k];
    if (n.bound)
      for (int k = 0; k < n.grad.size(); ++k) n.bound->grad.v[k] += g[k];
  }
}

GradReport grad_check(const std::function<double()>& eval,
                      std::span<Param* const> params, double step) {
  require(step > 0.0, "grad_check: step must be positive");
  GradReport report;
  report.step = step;
  if (params.empty()) return report;

  for (Param* p : params) p->zero_grad();
  double base = eval();
  std::vector<Array> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad);

  for (Param* p : params) p->zero_grad();
  if (eval() != base)
    throw NumericError("grad_check: evaluation is not deterministic, check unreliable");

  for (size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    GradReport::Entry entry;
    entry.param = p.name;
    for (int k = 0; k < p.size(); ++k) {
      double saved = p.value.v[k];
      p.value.v[k] = saved + step;
      p.zero_grad();
      double up = eval();
      p.value.v[k] = saved - step;
      p.zero_grad();
      double down = eval();
      p.value.v[k] = saved;
      double numeric = (up - down) / (2.0 * step);
      double a = analytic[pi].v[k];
      double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      double rel = std::fabs(a - numeric) / denom;
      if (rel >= entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.flat_index = k;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
    if (entry.max_rel_err >= report.max_rel_err) {
      report.max_rel_err = entry.max_rel_err;
      report.worst_param = entry.param;
    }
    report.per_param.push_back(std::move(entry));
  }
  // leave the analytic gradients in place for the caller
  for (size_t pi = 0; pi < params.size(); ++pi) params[pi]->grad = analytic[pi];
  return report;
}

}  // namespace fairattn::diff
