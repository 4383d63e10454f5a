// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tensor, tape and the differentiable op set.

#include "r4d/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "r4d/error.hpp"

namespace r4d::diff {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// --- Tensor ------------------------------------------------------------------

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), values_(shape_size(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_size(shape_) != values_.size())
    fail(ErrorKind::dimension, "shape " + shape_string(shape_) + " does not hold " +
                                   std::to_string(values_.size()) + " values");
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? 1 : shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? shape_[0] : values_.size() / std::max<std::size_t>(shape_[0], 1);
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), values_);
}

// --- ParameterStore ------------------------------------------------------------

Parameter& ParameterStore::add(std::string name, Tensor value, bool trainable) {
  if (params_.count(name)) fail(ErrorKind::configuration, "duplicate parameter '" + name + "'");
  Parameter p{name, std::move(value), {}, trainable};
  return params_.emplace(std::move(name), std::move(p)).first->second;
}

bool ParameterStore::contains(std::string_view name) const { return params_.find(name) != params_.end(); }

Parameter& ParameterStore::at(std::string_view name) {
  auto it = params_.find(name);
  if (it == params_.end()) fail(ErrorKind::configuration, "unknown parameter '" + std::string(name) + "'");
  return it->second;
}

const Parameter& ParameterStore::at(std::string_view name) const {
  auto it = params_.find(name);
  if (it == params_.end()) fail(ErrorKind::configuration, "unknown parameter '" + std::string(name) + "'");
  return it->second;
}

void ParameterStore::zero_grad() {
  for (auto& [name, p] : params_) p.grad.assign(p.value.size(), 0.0);
}

std::size_t ParameterStore::trainable_scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_)
    if (p.trainable) n += p.value.size();
  return n;
}

bool ParameterStore::all_finite() const {
  return std::all_of(params_.begin(), params_.end(),
                     [](const auto& kv) { return kv.second.value.all_finite(); });
}

// --- Graph ---------------------------------------------------------------------

const Tensor& Var::value() const { return graph->value(id); }
std::span<const double> Var::grad() const { return graph->grad(id); }

std::vector<std::size_t> Segments::row_owner() const {
  std::vector<std::size_t> owner(total());
  for (std::size_t s = 0; s < count(); ++s)
    for (std::size_t r = begin(s); r < end(s); ++r) owner[r] = s;
  return owner;
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var{this, nodes_.size() - 1};
}

Var Graph::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, true});
  return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(Parameter& param) {
  nodes_.push_back(Node{param.value, {}, {}, &param, param.trainable && grad_enabled_});
  return Var{this, nodes_.size() - 1};
}

std::span<double> Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return {};
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

Var Graph::record(Tensor value, std::initializer_list<std::size_t> parents, BackwardFn backward) {
  bool needs = false;
  for (std::size_t p : parents) needs = needs || nodes_[p].needs_grad;
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, nullptr, needs});
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, const std::vector<std::size_t>& parents, BackwardFn backward) {
  bool needs = false;
  for (std::size_t p : parents) needs = needs || nodes_[p].needs_grad;
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, nullptr, needs});
  return Var{this, nodes_.size() - 1};
}

void Graph::note_branch(std::uint64_t bits) {
  kink_hash_ ^= bits + 0x9e3779b97f4a7c15ULL + (kink_hash_ << 6) + (kink_hash_ >> 2);
}

void Graph::backward(Var output) {
  if (output.graph != this) fail(ErrorKind::precondition, "backward on a foreign variable");
  if (nodes_[output.id].value.size() != 1)
    fail(ErrorKind::precondition, "backward requires a scalar output, got shape " +
                                      shape_string(nodes_[output.id].value.shape()));
  auto seed = grad_buffer(output.id);
  if (seed.empty()) return;
  seed[0] += 1.0;
  for (std::size_t id = output.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr && n.param->trainable) {
      auto& pg = n.param->grad;
      if (pg.size() != n.grad.size()) pg.assign(n.grad.size(), 0.0);
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    }
  }
}

// --- helpers -------------------------------------------------------------------

namespace {

void expect(bool ok, const std::string& what) {
  if (!ok) fail(ErrorKind::dimension, what);
}

Graph& graph_of(Var a) {
  if (a.graph == nullptr) fail(ErrorKind::precondition, "variable is not attached to a graph");
  return *a.graph;
}

void same_graph(Var a, Var b) {
  if (a.graph != b.graph) fail(ErrorKind::precondition, "variables belong to different graphs");
}

}  // namespace

// --- ops -----------------------------------------------------------------------

Var linear(Var x, Var weight, Var bias) {
  Graph& g = graph_of(x);
  same_graph(x, weight);
  same_graph(x, bias);
  const Tensor& X = x.value();
  const Tensor& W = weight.value();
  const Tensor& B = bias.value();
  expect(W.rank() == 2, "linear: weight must be rank 2, got " + shape_string(W.shape()));
  const std::size_t n = X.rows(), in = X.cols(), out = W.shape()[1];
  expect(W.shape()[0] == in, "linear: input width " + std::to_string(in) + " vs weight " +
                                 shape_string(W.shape()));
  expect(B.size() == out, "linear: bias " + shape_string(B.shape()) + " vs output width " +
                              std::to_string(out));

  Tensor Y({n, out});
  const double* xp = X.values().data();
  const double* wp = W.values().data();
  const double* bp = B.values().data();
  double* yp = Y.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* yr = yp + i * out;
    std::copy(bp, bp + out, yr);
    const double* xr = xp + i * in;
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = xr[k];
      if (xv == 0.0) continue;
      const double* wr = wp + k * out;
      for (std::size_t j = 0; j < out; ++j) yr[j] += xv * wr[j];
    }
  }

  const std::size_t xi = x.id, wi = weight.id, bi = bias.id;
  return g.record(std::move(Y), {xi, wi, bi}, [xi, wi, bi, n, in, out](Graph& gr, std::size_t self) {
    auto gy = gr.grad(self);
    const double* xp = gr.value(xi).values().data();
    const double* wp = gr.value(wi).values().data();
    if (auto gx = gr.grad_buffer(xi); !gx.empty()) {
      std::vector<double> wt(in * out);
      for (std::size_t k = 0; k < in; ++k)
        for (std::size_t j = 0; j < out; ++j) wt[j * in + k] = wp[k * out + j];
      for (std::size_t i = 0; i < n; ++i) {
        double* gxr = gx.data() + i * in;
        const double* gyr = gy.data() + i * out;
        for (std::size_t j = 0; j < out; ++j) {
          const double gv = gyr[j];
          if (gv == 0.0) continue;
          const double* wtr = wt.data() + j * in;
          for (std::size_t k = 0; k < in; ++k) gxr[k] += gv * wtr[k];
        }
      }
    }
    if (auto gw = gr.grad_buffer(wi); !gw.empty()) {
      for (std::size_t i = 0; i < n; ++i) {
        const double* xr = xp + i * in;
        const double* gyr = gy.data() + i * out;
        for (std::size_t k = 0; k < in; ++k) {
          const double xv = xr[k];
          if (xv == 0.0) continue;
          double* gwr = gw.data() + k * out;
          for (std::size_t j = 0; j < out; ++j) gwr[j] += xv * gyr[j];
        }
      }
    }
    if (auto gb = gr.grad_buffer(bi); !gb.empty()) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out; ++j) gb[j] += gy[i * out + j];
    }
  });
}

Var relu(Var x) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  Tensor Y(X.shape());
  auto xs = X.values();
  auto ys = Y.values();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] > 0.0 ? xs[i] : 0.0;
  if (g.tracking_kinks()) {
    std::uint64_t h = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (xs[i] > 0.0) h = h * 31 + i + 1;
    }
    g.note_branch(h);
  }
  const std::size_t xi = x.id;
  return g.record(std::move(Y), {xi}, [xi](Graph& gr, std::size_t self) {
    auto gx = gr.grad_buffer(xi);
    auto gy = gr.grad(self);
    auto xs = gr.value(xi).values();
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (xs[i] > 0.0) gx[i] += gy[i];
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = graph_of(x);
  same_graph(x, gain);
  same_graph(x, bias);
  const Tensor& X = x.value();
  const std::size_t n = X.rows(), d = X.cols();
  expect(d >= 1, "layer_norm: feature dimension must be >= 1");
  expect(gain.value().size() == d && bias.value().size() == d,
         "layer_norm: gain/bias must have " + std::to_string(d) + " entries");
  if (!(eps > 0.0)) fail(ErrorKind::precondition, "layer_norm: eps must be positive");

  Tensor Y(X.shape());
  std::vector<double> xhat(n * d), inv(n);
  const double* xp = X.values().data();
  const double* gp = gain.value().values().data();
  const double* bp = bias.value().values().data();
  double* yp = Y.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = xp + i * d;
    double mean = 0.0;
    for (std::size_t k = 0; k < d; ++k) mean += xr[k];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t k = 0; k < d; ++k) var += (xr[k] - mean) * (xr[k] - mean);
    var /= static_cast<double>(d);
    const double s = 1.0 / std::sqrt(var + eps);
    inv[i] = s;
    for (std::size_t k = 0; k < d; ++k) {
      const double h = (xr[k] - mean) * s;
      xhat[i * d + k] = h;
      yp[i * d + k] = gp[k] * h + bp[k];
    }
  }

  const std::size_t xi = x.id, gi = gain.id, bi = bias.id;
  return g.record(std::move(Y), {xi, gi, bi},
                  [xi, gi, bi, n, d, xhat = std::move(xhat), inv = std::move(inv)](Graph& gr, std::size_t self) {
                    auto gy = gr.grad(self);
                    const double* gp = gr.value(gi).values().data();
                    if (auto gg = gr.grad_buffer(gi); !gg.empty())
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t k = 0; k < d; ++k) gg[k] += gy[i * d + k] * xhat[i * d + k];
                    if (auto gb = gr.grad_buffer(bi); !gb.empty())
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t k = 0; k < d; ++k) gb[k] += gy[i * d + k];
                    if (auto gx = gr.grad_buffer(xi); !gx.empty()) {
                      const double dd = static_cast<double>(d);
                      std::vector<double> dh(d);
                      for (std::size_t i = 0; i < n; ++i) {
                        double sum_dh = 0.0, sum_dh_h = 0.0;
                        for (std::size_t k = 0; k < d; ++k) {
                          dh[k] = gy[i * d + k] * gp[k];
                          sum_dh += dh[k];
                          sum_dh_h += dh[k] * xhat[i * d + k];
                        }
                        for (std::size_t k = 0; k < d; ++k)
                          gx[i * d + k] += inv[i] / dd * (dd * dh[k] - sum_dh - xhat[i * d + k] * sum_dh_h);
                      }
                    }
                  });
}

Var softmax(Var x) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  const std::size_t n = X.size();
  expect(n >= 1, "softmax: empty input");
  auto xs = X.values();
  const double mx = *std::max_element(xs.begin(), xs.end());
  Tensor Y({n});
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += (Y[i] = std::exp(xs[i] - mx));
  for (std::size_t i = 0; i < n; ++i) Y[i] /= total;
  const std::size_t xi = x.id;
  return g.record(std::move(Y), {xi}, [xi, n](Graph& gr, std::size_t self) {
    auto gx = gr.grad_buffer(xi);
    auto gy = gr.grad(self);
    auto y = gr.value(self).values();
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += gy[i] * y[i];
    for (std::size_t i = 0; i < n; ++i) gx[i] += y[i] * (gy[i] - dot);
  });
}

Var mean_pool(std::span<const Var> xs) {
  if (xs.empty()) fail(ErrorKind::precondition, "mean_pool: empty list");
  Graph& g = graph_of(xs[0]);
  const Shape shape = xs[0].value().shape();
  const std::size_t d = xs[0].value().size();
  Tensor Y(shape);
  std::vector<std::size_t> ids;
  ids.reserve(xs.size());
  for (const Var& v : xs) {
    same_graph(xs[0], v);
    expect(v.value().shape() == shape, "mean_pool: shape " + shape_string(v.value().shape()) +
                                           " differs from " + shape_string(shape));
    auto vs = v.value().values();
    for (std::size_t k = 0; k < d; ++k) Y[k] += vs[k];
    ids.push_back(v.id);
  }
  const double inv = 1.0 / static_cast<double>(xs.size());
  for (std::size_t k = 0; k < d; ++k) Y[k] *= inv;
  return g.record(std::move(Y), ids, [ids, inv, d](Graph& gr, std::size_t self) {
    auto gy = gr.grad(self);
    for (std::size_t id : ids) {
      auto gx = gr.grad_buffer(id);
      if (gx.empty()) continue;
      for (std::size_t k = 0; k < d; ++k) gx[k] += gy[k] * inv;
    }
  });
}

namespace {

inline double huber(double r, double delta) {
  const double a = std::abs(r);
  return a < delta ? 0.5 * r * r / delta : a - 0.5 * delta;
}

inline double huber_grad(double r, double delta) {
  if (std::abs(r) < delta) return r / delta;
  return r > 0.0 ? 1.0 : -1.0;
}

}  // namespace

Var smooth_l1(Var pred, Var target, double delta) {
  Graph& g = graph_of(pred);
  same_graph(pred, target);
  const std::size_t n = pred.value().size();
  expect(n == target.value().size(), "smooth_l1: prediction " + shape_string(pred.value().shape()) +
                                         " vs target " + shape_string(target.value().shape()));
  expect(n >= 1, "smooth_l1: empty input");
  if (!(delta > 0.0)) fail(ErrorKind::precondition, "smooth_l1: delta must be positive");
  auto p = pred.value().values();
  auto t = target.value().values();
  double total = 0.0;
  std::uint64_t branches = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += huber(p[i] - t[i], delta);
    if (std::abs(p[i] - t[i]) < delta) branches = branches * 31 + i + 1;
  }
  if (g.tracking_kinks()) g.note_branch(branches);
  const std::size_t pi = pred.id, ti = target.id;
  return g.record(Tensor::scalar(total / static_cast<double>(n)), {pi, ti},
                  [pi, ti, n, delta](Graph& gr, std::size_t self) {
                    const double gy = gr.grad(self)[0] / static_cast<double>(n);
                    auto p = gr.value(pi).values();
                    auto t = gr.value(ti).values();
                    auto gp = gr.grad_buffer(pi);
                    auto gt = gr.grad_buffer(ti);
                    for (std::size_t i = 0; i < n; ++i) {
                      const double d = gy * huber_grad(p[i] - t[i], delta);
                      if (!gp.empty()) gp[i] += d;
                      if (!gt.empty()) gt[i] -= d;
                    }
                  });
}

Var weighted_smooth_l1(Var pred, std::span<const double> target, std::span<const double> weights,
                       double delta) {
  Graph& g = graph_of(pred);
  const std::size_t n = pred.value().size();
  expect(n == target.size() && n == weights.size(),
         "weighted_smooth_l1: " + std::to_string(n) + " predictions, " + std::to_string(target.size()) +
             " targets, " + std::to_string(weights.size()) + " weights");
  if (!(delta > 0.0)) fail(ErrorKind::precondition, "weighted_smooth_l1: delta must be positive");
  auto p = pred.value().values();
  double total = 0.0;
  std::uint64_t branches = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += weights[i] * huber(p[i] - target[i], delta);
    if (std::abs(p[i] - target[i]) < delta) branches = branches * 31 + i + 1;
  }
  if (g.tracking_kinks()) g.note_branch(branches);
  const std::size_t pi = pred.id;
  std::vector<double> t(target.begin(), target.end()), w(weights.begin(), weights.end());
  return g.record(Tensor::scalar(total), {pi},
                  [pi, delta, t = std::move(t), w = std::move(w)](Graph& gr, std::size_t self) {
                    const double gy = gr.grad(self)[0];
                    auto p = gr.value(pi).values();
                    auto gp = gr.grad_buffer(pi);
                    for (std::size_t i = 0; i < gp.size(); ++i)
                      gp[i] += gy * w[i] * huber_grad(p[i] - t[i], delta);
                  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a);
  same_graph(a, b);
  expect(a.value().size() == b.value().size(),
         "add: " + shape_string(a.value().shape()) + " vs " + shape_string(b.value().shape()));
  Tensor Y(a.value().shape());
  auto as = a.value().values();
  auto bs = b.value().values();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = as[i] + bs[i];
  const std::size_t ai = a.id, bi = b.id;
  return g.record(std::move(Y), {ai, bi}, [ai, bi](Graph& gr, std::size_t self) {
    auto gy = gr.grad(self);
    for (std::size_t id : {ai, bi}) {
      auto gx = gr.grad_buffer(id);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    }
  });
}

Var affine(Var x, double factor, double offset) {
  Graph& g = graph_of(x);
  Tensor Y(x.value().shape());
  auto xs = x.value().values();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = factor * xs[i] + offset;
  const std::size_t xi = x.id;
  return g.record(std::move(Y), {xi}, [xi, factor](Graph& gr, std::size_t self) {
    auto gy = gr.grad(self);
    auto gx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * gy[i];
  });
}

Var scale(Var x, double factor) { return affine(x, factor, 0.0); }

Var sum(Var x) {
  Graph& g = graph_of(x);
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  const std::size_t xi = x.id;
  return g.record(Tensor::scalar(total), {xi}, [xi](Graph& gr, std::size_t self) {
    const double gy = gr.grad(self)[0];
    auto gx = gr.grad_buffer(xi);
    for (double& v : gx) v += gy;
  });
}

Var reshape(Var x, Shape shape) {
  Graph& g = graph_of(x);
  expect(shape_size(shape) == x.value().size(),
         "reshape: " + shape_string(x.value().shape()) + " to " + shape_string(shape));
  const std::size_t xi = x.id;
  return g.record(x.value().reshaped(std::move(shape)), {xi}, [xi](Graph& gr, std::size_t self) {
    auto gy = gr.grad(self);
    auto gx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
  });
}

Var flatten(Var x) { return reshape(x, {x.value().size()}); }

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorKind::precondition, "concat_cols: no inputs");
  Graph& g = graph_of(parts[0]);
  const std::size_t n = parts[0].value().rows();
  std::vector<std::size_t> ids, widths;
  std::size_t total = 0;
  for (const Var& v : parts) {
    same_graph(parts[0], v);
    expect(v.value().rows() == n, "concat_cols: row count " + std::to_string(v.value().rows()) +
                                      " vs " + std::to_string(n));
    ids.push_back(v.id);
    widths.push_back(v.value().cols());
    total += widths.back();
  }
  Tensor Y({n, total});
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto src = parts[p].value().values();
    const std::size_t w = widths[p];
    for (std::size_t i = 0; i < n; ++i)
      std::copy(src.begin() + i * w, src.begin() + (i + 1) * w, Y.values().begin() + i * total + off);
    off += w;
  }
  return g.record(std::move(Y), ids, [ids, widths, n, total](Graph& gr, std::size_t self) {
    auto gy = gr.grad(self);
    std::size_t off = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      const std::size_t w = widths[p];
      if (auto gx = gr.grad_buffer(ids[p]); !gx.empty())
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t k = 0; k < w; ++k) gx[i * w + k] += gy[i * total + off + k];
      off += w;
    }
  });
}

Var gather_rows(Var x, std::vector<std::size_t> index) {
  Graph& g = graph_of(x);
  const std::size_t rows = x.value().rows(), d = x.value().cols();
  for (std::size_t r : index)
    expect(r < rows, "gather_rows: index " + std::to_string(r) + " out of " + std::to_string(rows));
  Tensor Y({index.size(), d});
  auto src = x.value().values();
  for (std::size_t i = 0; i < index.size(); ++i)
    std::copy(src.begin() + index[i] * d, src.begin() + (index[i] + 1) * d, Y.values().begin() + i * d);
  const std::size_t xi = x.id;
  return g.record(std::move(Y), {xi}, [xi, d, index = std::move(index)](Graph& gr, std::size_t self) {
    auto gy = gr.grad(self);
    auto gx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < index.size(); ++i)
      for (std::size_t k = 0; k < d; ++k) gx[index[i] * d + k] += gy[i * d + k];
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(x);
  const std::size_t n = x.value().rows(), d = x.value().cols();
  expect(begin <= end && end <= d, "slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) +
                                       ") out of width " + std::to_string(d));
  const std::size_t w = end - begin;
  Tensor Y({n, w});
  auto src = x.value().values();
  for (std::size_t i = 0; i < n; ++i)
    std::copy(src.begin() + i * d + begin, src.begin() + i * d + end, Y.values().begin() + i * w);
  const std::size_t xi = x.id;
  return g.record(std::move(Y), {xi}, [xi, n, d, w, begin](Graph& gr, std::size_t self) {
    auto gy = gr.grad(self);
    auto gx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < w; ++k) gx[i * d + begin + k] += gy[i * w + k];
  });
}

Var scale_rows(Var x, std::vector<double> factors) {
  Graph& g = graph_of(x);
  const std::size_t n = x.value().rows(), d = x.value().cols();
  expect(factors.size() == n, "scale_rows: " + std::to_string(factors.size()) + " factors for " +
                                  std::to_string(n) + " rows");
  Tensor Y(x.value().shape());
  auto src = x.value().values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) Y[i * d + k] = factors[i] * src[i * d + k];
  const std::size_t xi = x.id;
  return g.record(std::move(Y), {xi}, [xi, d, factors = std::move(factors)](Graph& gr, std::size_t self) {
    auto gy = gr.grad(self);
    auto gx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < factors.size(); ++i)
      for (std::size_t k = 0; k < d; ++k) gx[i * d + k] += factors[i] * gy[i * d + k];
  });
}

Var segment_mean(Var x, const Segments& segments) {
  Graph& g = graph_of(x);
  const std::size_t d = x.value().cols();
  expect(x.value().rows() == segments.total(),
         "segment_mean: " + std::to_string(x.value().rows()) + " rows vs " +
             std::to_string(segments.total()) + " segment members");
  const std::size_t b = segments.count();
  Tensor Y({b, d});
  auto src = x.value().values();
  for (std::size_t s = 0; s < b; ++s) {
    const std::size_t len = segments.length(s);
    if (len == 0) continue;
    double* yr = Y.values().data() + s * d;
    for (std::size_t r = segments.begin(s); r < segments.end(s); ++r)
      for (std::size_t k = 0; k < d; ++k) yr[k] += src[r * d + k];
    const double inv = 1.0 / static_cast<double>(len);
    for (std::size_t k = 0; k < d; ++k) yr[k] *= inv;
  }
  const std::size_t xi = x.id;
  return g.record(std::move(Y), {xi}, [xi, d, segments](Graph& gr, std::size_t self) {
    auto gy = gr.grad(self);
    auto gx = gr.grad_buffer(xi);
    for (std::size_t s = 0; s < segments.count(); ++s) {
      const std::size_t len = segments.length(s);
      if (len == 0) continue;
      const double inv = 1.0 / static_cast<double>(len);
      for (std::size_t r = segments.begin(s); r < segments.end(s); ++r)
        for (std::size_t k = 0; k < d; ++k) gx[r * d + k] += gy[s * d + k] * inv;
    }
  });
}

Var segment_softmax(Var scores, const Segments& segments) {
  Graph& g = graph_of(scores);
  const std::size_t n = scores.value().size();
  expect(n == segments.total(), "segment_softmax: " + std::to_string(n) + " scores vs " +
                                    std::to_string(segments.total()) + " segment members");
  auto xs = scores.value().values();
  Tensor Y({n});
  for (std::size_t s = 0; s < segments.count(); ++s) {
    if (segments.length(s) == 0) continue;
    double mx = xs[segments.begin(s)];
    for (std::size_t r = segments.begin(s); r < segments.end(s); ++r) mx = std::max(mx, xs[r]);
    double total = 0.0;
    for (std::size_t r = segments.begin(s); r < segments.end(s); ++r) total += (Y[r] = std::exp(xs[r] - mx));
    for (std::size_t r = segments.begin(s); r < segments.end(s); ++r) Y[r] /= total;
  }
  const std::size_t xi = scores.id;
  return g.record(std::move(Y), {xi}, [xi, segments](Graph& gr, std::size_t self) {
    auto gy = gr.grad(self);
    auto y = gr.value(self).values();
    auto gx = gr.grad_buffer(xi);
    for (std::size_t s = 0; s < segments.count(); ++s) {
      double dot = 0.0;
      for (std::size_t r = segments.begin(s); r < segments.end(s); ++r) dot += gy[r] * y[r];
      for (std::size_t r = segments.begin(s); r < segments.end(s); ++r) gx[r] += y[r] * (gy[r] - dot);
    }
  });
}

Var segment_weighted_sum(Var x, Var weights, const Segments& segments) {
  Graph& g = graph_of(x);
  same_graph(x, weights);
  const std::size_t d = x.value().cols();
  expect(x.value().rows() == segments.total() && weights.value().size() == segments.total(),
         "segment_weighted_sum: rows/weights/segments disagree");
  const std::size_t b = segments.count();
  Tensor Y({b, d});
  auto src = x.value().values();
  auto w = weights.value().values();
  for (std::size_t s = 0; s < b; ++s) {
    double* yr = Y.values().data() + s * d;
    for (std::size_t r = segments.begin(s); r < segments.end(s); ++r) {
      const double wr = w[r];
      for (std::size_t k = 0; k < d; ++k) yr[k] += wr * src[r * d + k];
    }
  }
  const std::size_t xi = x.id, wi = weights.id;
  return g.record(std::move(Y), {xi, wi}, [xi, wi, d, segments](Graph& gr, std::size_t self) {
    auto gy = gr.grad(self);
    auto src = gr.value(xi).values();
    auto w = gr.value(wi).values();
    auto gx = gr.grad_buffer(xi);
    auto gw = gr.grad_buffer(wi);
    for (std::size_t s = 0; s < segments.count(); ++s) {
      const double* gyr = gy.data() + s * d;
      for (std::size_t r = segments.begin(s); r < segments.end(s); ++r) {
        if (!gx.empty())
          for (std::size_t k = 0; k < d; ++k) gx[r * d + k] += w[r] * gyr[k];
        if (!gw.empty()) {
          double dot = 0.0;
          for (std::size_t k = 0; k < d; ++k) dot += gyr[k] * src[r * d + k];
          gw[r] += dot;
        }
      }
    }
  });
}

}  // namespace r4d::diff
