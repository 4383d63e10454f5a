// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0
//
// MLP, optimizers, finite-difference gradient check and checkpoint container.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "r4d/diffcore.hpp"
#include "r4d/error.hpp"
#include "r4d/io.hpp"

namespace r4d::diff {

// --- MLP -----------------------------------------------------------------------

void MLPSpec::validate() const {
  if (input_dim == 0) fail(ErrorKind::configuration, "MLP input width must be positive");
  if (layer_widths.empty()) fail(ErrorKind::configuration, "MLP needs at least one layer");
  for (std::size_t w : layer_widths)
    if (w == 0) fail(ErrorKind::configuration, "MLP layer widths must be positive");
}

namespace {

std::string layer_key(std::string_view name, std::size_t layer, const char* field) {
  return std::string(name) + ".l" + std::to_string(layer) + "." + field;
}

bool layer_activated(const MLPSpec& spec, std::size_t layer) {
  return layer + 1 < spec.layer_widths.size() || spec.activate_final;
}

void check_param(const ParameterStore& store, const std::string& key, const Shape& shape) {
  if (!store.contains(key)) fail(ErrorKind::configuration, "missing parameter '" + key + "'");
  const Shape& got = store.at(key).value.shape();
  if (shape_size(got) != shape_size(shape) || got.back() != shape.back())
    fail(ErrorKind::configuration, "parameter '" + key + "' has shape " + shape_string(got) +
                                       ", spec expects " + shape_string(shape));
}

void check_layout(const MLPSpec& spec, std::string_view name, const ParameterStore& store) {
  spec.validate();
  std::size_t in = spec.input_dim;
  for (std::size_t i = 0; i < spec.layer_widths.size(); ++i) {
    const std::size_t out = spec.layer_widths[i];
    check_param(store, layer_key(name, i, "weight"), {in, out});
    check_param(store, layer_key(name, i, "bias"), {out});
    if (spec.use_layer_norm && layer_activated(spec, i)) {
      check_param(store, layer_key(name, i, "ln_gain"), {out});
      check_param(store, layer_key(name, i, "ln_bias"), {out});
    }
    in = out;
  }
}

}  // namespace

MLP::MLP(std::string name, MLPSpec spec, ParameterStore& store, std::mt19937_64& rng)
    : name_(std::move(name)), spec_(std::move(spec)) {
  spec_.validate();
  std::size_t in = spec_.input_dim;
  for (std::size_t i = 0; i < spec_.layer_widths.size(); ++i) {
    const std::size_t out = spec_.layer_widths[i];
    const bool activated = layer_activated(spec_, i);
    const bool he = activated && spec_.activation == Activation::relu;
    const double bound = std::sqrt((he ? 6.0 : 3.0) / static_cast<double>(in));
    std::uniform_real_distribution<double> draw(-bound, bound);
    Tensor w({in, out});
    for (double& v : w.values()) v = draw(rng);
    store.add(layer_key(name_, i, "weight"), std::move(w));
    store.add(layer_key(name_, i, "bias"), Tensor({out}));
    if (spec_.use_layer_norm && activated) {
      store.add(layer_key(name_, i, "ln_gain"), Tensor({out}, std::vector<double>(out, 1.0)));
      store.add(layer_key(name_, i, "ln_bias"), Tensor({out}));
    }
    in = out;
  }
}

MLP MLP::bind(std::string name, MLPSpec spec, const ParameterStore& store) {
  check_layout(spec, name, store);
  MLP m;
  m.name_ = std::move(name);
  m.spec_ = std::move(spec);
  return m;
}

Var MLP::forward(Graph& graph, ParameterStore& store, Var x) const {
  return mlp_forward(spec_, name_, store, graph, x);
}

Var mlp_forward(const MLPSpec& spec, std::string_view name, ParameterStore& params, Graph& graph, Var x,
                double layer_norm_eps) {
  check_layout(spec, name, params);
  if (x.value().cols() != spec.input_dim)
    fail(ErrorKind::dimension, std::string(name) + ": input width " + std::to_string(x.value().cols()) +
                                   " vs spec " + std::to_string(spec.input_dim));
  Var h = x;
  for (std::size_t i = 0; i < spec.layer_widths.size(); ++i) {
    h = linear(h, graph.parameter(params.at(layer_key(name, i, "weight"))),
               graph.parameter(params.at(layer_key(name, i, "bias"))));
    if (!layer_activated(spec, i)) continue;
    if (spec.use_layer_norm)
      h = layer_norm(h, graph.parameter(params.at(layer_key(name, i, "ln_gain"))),
                     graph.parameter(params.at(layer_key(name, i, "ln_bias"))), layer_norm_eps);
    if (spec.activation == Activation::relu) h = relu(h);
  }
  return h;
}

// --- optimizer -------------------------------------------------------------------

void Optimizer::step(ParameterStore& params, double lr) {
  for (const auto& [name, p] : params) {
    if (!p.trainable) continue;
    if (p.grad.size() != p.value.size())
      fail(ErrorKind::state, "no gradient for trainable parameter '" + name + "'");
  }
  double clip = 1.0;
  if (config_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [name, p] : params)
      if (p.trainable)
        for (double g : p.grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) clip = config_.clip_norm / norm;
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    auto values = p.value.values();
    const std::size_t n = values.size();
    auto grad_at = [&](std::size_t i) { return clip * p.grad[i] + config_.weight_decay * values[i]; };
    switch (config_.kind) {
      case OptimizerKind::sgd:
        for (std::size_t i = 0; i < n; ++i) values[i] -= lr * grad_at(i);
        break;
      case OptimizerKind::momentum: {
        auto& v = first_[name];
        if (v.size() != n) v.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          v[i] = config_.momentum * v[i] + grad_at(i);
          values[i] -= lr * v[i];
        }
        break;
      }
      case OptimizerKind::adam: {
        auto& m = first_[name];
        auto& s = second_[name];
        if (m.size() != n) m.assign(n, 0.0);
        if (s.size() != n) s.assign(n, 0.0);
        const double c1 = 1.0 - std::pow(config_.beta1, t);
        const double c2 = 1.0 - std::pow(config_.beta2, t);
        for (std::size_t i = 0; i < n; ++i) {
          const double g = grad_at(i);
          m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
          s[i] = config_.beta2 * s[i] + (1.0 - config_.beta2) * g * g;
          values[i] -= lr * (m[i] / c1) / (std::sqrt(s[i] / c2) + config_.epsilon);
        }
        break;
      }
    }
  }
}

void optimizer_step(ParameterStore& params, Optimizer& optimizer, double lr) { optimizer.step(params, lr); }

// --- gradient check ----------------------------------------------------------------

namespace {

struct Probe {
  double value;
  std::uint64_t signature;
};

Probe evaluate(const std::function<Var(Graph&)>& build) {
  Graph g;
  g.set_track_kinks(true);
  Var out = build(g);
  if (out.value().size() != 1)
    fail(ErrorKind::precondition, "gradient check needs a scalar output, got shape " +
                                      shape_string(out.value().shape()));
  return {out.value()[0], g.kink_signature()};
}

}  // namespace

GradCheckResult gradient_check(const std::function<Var(Graph&)>& build, ParameterStore& params,
                               const GradCheckOptions& options) {
  if (!(options.step >= 1e-6 && options.step <= 1e-3))
    fail(ErrorKind::precondition, "finite-difference step must lie in [1e-6, 1e-3]");

  params.zero_grad();
  std::uint64_t base_signature = 0;
  {
    Graph g;
    g.set_track_kinks(true);
    Var out = build(g);
    if (out.value().size() != 1)
      fail(ErrorKind::precondition, "gradient check needs a scalar output, got shape " +
                                        shape_string(out.value().shape()));
    g.backward(out);
    base_signature = g.kink_signature();
  }

  std::vector<std::pair<Parameter*, std::size_t>> entries;
  for (auto& [name, p] : params) {
    if (!p.trainable || !name.starts_with(options.prefix)) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) entries.emplace_back(&p, i);
  }
  if (entries.size() > options.max_samples) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(entries.begin(), entries.end(), rng);
    entries.resize(options.max_samples);
  }

  GradCheckResult result;
  for (auto [p, i] : entries) {
    const double analytic = p->grad.empty() ? 0.0 : p->grad[i];
    const double saved = p->value[i];
    p->value[i] = saved + options.step;
    const Probe plus = evaluate(build);
    p->value[i] = saved - options.step;
    const Probe minus = evaluate(build);
    p->value[i] = saved;
    if (plus.signature != base_signature || minus.signature != base_signature) {
      ++result.skipped_kinks;
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * options.step);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
    const double err = std::abs(analytic - numeric) / denom;
    ++result.checked;
    if (err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_parameter = p->name;
      result.worst_index = i;
    }
  }
  return result;
}

// --- checkpoint ----------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'R', '4', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, std::string_view s) {
  put<std::uint64_t>(out, s.size());
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      fail(ErrorKind::parse, std::string("checkpoint truncated while reading ") + what + " at byte " +
                                 std::to_string(pos_));
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const ParameterStore& params, const std::string& metadata) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, metadata);
  put<std::uint64_t>(out, params.size());
  for (const auto& [name, p] : params) {
    put_string(out, name);
    put<std::uint8_t>(out, p.trainable ? 1 : 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) put<std::uint64_t>(out, d);
    for (double v : p.value.values()) put<double>(out, v);
  }
  return out;
}

ParameterStore deserialize_checkpoint(std::string_view bytes, std::string* metadata) {
  Reader in(bytes);
  if (in.take(sizeof(kMagic), "magic") != std::string_view(kMagic, sizeof(kMagic)))
    fail(ErrorKind::parse, "not a checkpoint file (bad magic)");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    fail(ErrorKind::version, "unsupported checkpoint version " + std::to_string(version));
  const auto meta_len = in.get<std::uint64_t>("metadata length");
  const auto meta = in.take(meta_len, "metadata");
  if (metadata != nullptr) *metadata = std::string(meta);
  const auto count = in.get<std::uint64_t>("entry count");
  ParameterStore store;
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto name_len = in.get<std::uint64_t>("name length");
    std::string name(in.take(name_len, "name"));
    const bool trainable = in.get<std::uint8_t>("trainable flag") != 0;
    const auto rank = in.get<std::uint32_t>("rank");
    if (rank > 8) fail(ErrorKind::parse, "parameter '" + name + "' has implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = in.get<std::uint64_t>("dimension");
    const std::size_t n = shape_size(shape);
    auto raw = in.take(n * sizeof(double), "values");
    std::vector<double> values(n);
    std::memcpy(values.data(), raw.data(), raw.size());
    if (store.contains(name)) fail(ErrorKind::parse, "duplicate checkpoint entry '" + name + "'");
    store.add(std::move(name), Tensor(std::move(shape), std::move(values)), trainable);
  }
  if (!in.done()) fail(ErrorKind::parse, "trailing bytes after checkpoint entries");
  return store;
}

void save_checkpoint(const std::string& path, const ParameterStore& params, const std::string& metadata) {
  io::write_file_atomic(path, serialize_checkpoint(params, metadata));
}

ParameterStore load_checkpoint(const std::string& path, std::string* metadata) {
  return deserialize_checkpoint(io::read_file(path), metadata);
}

}  // namespace r4d::diff
