// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense row-major float64 tensors.
//
// A Graph is a tape: every op appends a node whose parents have smaller ids, so
// the tape order is a topological order and backward() is one reverse sweep.
// Parameters live in a ParameterStore outside the graph; leaves created with
// Graph::parameter() copy the value in and flush gradients back on backward().

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace r4d::diff {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  // Rank-1 tensors are treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<double>& storage() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool flag) { requires_grad_ = flag; }
  bool has_grad() const { return !grad_.empty(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  void zero_grad() { grad_.assign(values_.size(), 0.0); }
  void clear_grad() { grad_.clear(); }

  bool all_finite() const;
  Tensor reshaped(Shape shape) const;

 private:
  Shape shape_;
  std::vector<double> values_;
  std::vector<double> grad_;
  bool requires_grad_ = false;
};

struct Parameter {
  std::string name;
  Tensor value;
  std::vector<double> grad;
  bool trainable = true;
};

class ParameterStore {
 public:
  using Map = std::map<std::string, Parameter, std::less<>>;

  Parameter& add(std::string name, Tensor value, bool trainable = true);
  bool contains(std::string_view name) const;
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;

  void zero_grad();
  std::size_t trainable_scalar_count() const;
  bool all_finite() const;

  Map::iterator begin() { return params_.begin(); }
  Map::iterator end() { return params_.end(); }
  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

 private:
  Map params_;
};

class Graph;

struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::span<const double> grad() const;
};

// Contiguous row groups: segment s owns rows [offsets[s], offsets[s+1]).
struct Segments {
  std::vector<std::size_t> offsets{0};

  std::size_t count() const { return offsets.size() - 1; }
  std::size_t total() const { return offsets.back(); }
  std::size_t begin(std::size_t s) const { return offsets[s]; }
  std::size_t end(std::size_t s) const { return offsets[s + 1]; }
  std::size_t length(std::size_t s) const { return offsets[s + 1] - offsets[s]; }
  void push(std::size_t length) { offsets.push_back(offsets.back() + length); }
  std::vector<std::size_t> row_owner() const;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Differentiable leaf whose gradient is kept on the node (used to probe inputs).
  Var input(Tensor value);
  Var parameter(Parameter& param);

  // Seeds d(output)/d(output) = 1 and sweeps the tape once in reverse.
  void backward(Var output);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  std::span<const double> grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  // Lazily zero-allocated gradient buffer; empty span if the node needs no grad.
  std::span<double> grad_buffer(std::size_t id);
  std::size_t size() const { return nodes_.size(); }

  Var record(Tensor value, std::initializer_list<std::size_t> parents, BackwardFn backward);
  Var record(Tensor value, const std::vector<std::size_t>& parents, BackwardFn backward);

  // Hash of every piecewise branch taken (ReLU signs, smooth-L1 regimes).
  // Finite-difference probes compare it to detect kink crossings.
  std::uint64_t kink_signature() const { return kink_hash_; }
  void set_track_kinks(bool on) { track_kinks_ = on; }
  bool tracking_kinks() const { return track_kinks_; }
  void note_branch(std::uint64_t bits);

  // With gradients disabled, parameters enter as constants and no backward
  // closures are recorded (inference).
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::uint64_t kink_hash_ = 1469598103934665603ULL;
  bool track_kinks_ = false;
  bool grad_enabled_ = true;
};

// --- ops -------------------------------------------------------------------

Var linear(Var x, Var weight, Var bias);
Var relu(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var softmax(Var x);
// Elementwise mean over the list; all tensors share one shape.
Var mean_pool(std::span<const Var> xs);
// Mean of a Huber residual: 0.5 r^2 / delta if |r| < delta else |r| - 0.5 delta.
Var smooth_l1(Var pred, Var target, double delta = 1.0);
// sum_i weights[i] * huber(pred_i - target_i); weights are constants.
Var weighted_smooth_l1(Var pred, std::span<const double> target, std::span<const double> weights,
                       double delta);

Var add(Var a, Var b);
Var scale(Var x, double factor);
Var affine(Var x, double factor, double offset);
Var sum(Var x);
Var flatten(Var x);
Var reshape(Var x, Shape shape);
Var concat_cols(std::span<const Var> parts);
Var gather_rows(Var x, std::vector<std::size_t> index);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
// Row i multiplied by the constant factors[i].
Var scale_rows(Var x, std::vector<double> factors);
Var segment_mean(Var x, const Segments& segments);
Var segment_softmax(Var scores, const Segments& segments);
Var segment_weighted_sum(Var x, Var weights, const Segments& segments);

// --- multilayer perceptron ---------------------------------------------------

enum class Activation { relu, none };

struct MLPSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> layer_widths;
  bool use_layer_norm = false;
  Activation activation = Activation::relu;
  // Regression heads leave the last layer linear.
  bool activate_final = true;

  void validate() const;
  std::size_t output_dim() const { return layer_widths.back(); }
};

class MLP {
 public:
  MLP() = default;
  // Registers "<name>.l<i>.{weight,bias[,ln_gain,ln_bias]}" and initialises them
  // with fan-in scaled uniform draws (He for ReLU layers, LeCun otherwise).
  MLP(std::string name, MLPSpec spec, ParameterStore& store, std::mt19937_64& rng);
  // Binds to parameters that already exist in the store (checkpoint load).
  static MLP bind(std::string name, MLPSpec spec, const ParameterStore& store);

  Var forward(Graph& graph, ParameterStore& store, Var x) const;
  const MLPSpec& spec() const { return spec_; }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  MLPSpec spec_;
};

// Applies spec to x using parameters named "<name>.l<i>.*"; throws a
// configuration error if the stored shapes disagree with the spec.
Var mlp_forward(const MLPSpec& spec, std::string_view name, ParameterStore& params, Graph& graph,
                Var x, double layer_norm_eps = 1e-5);

// --- optimisation ------------------------------------------------------------

enum class OptimizerKind { sgd, momentum, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::momentum;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  // Global L2 norm clip on the gradient; 0 disables.
  double clip_norm = 0.0;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {}) : config_(config) {}
  void step(ParameterStore& params, double lr);
  std::size_t steps() const { return steps_; }

 private:
  OptimizerConfig config_;
  std::map<std::string, std::vector<double>, std::less<>> first_;
  std::map<std::string, std::vector<double>, std::less<>> second_;
  std::size_t steps_ = 0;
};

void optimizer_step(ParameterStore& params, Optimizer& optimizer, double lr);

// --- verification ------------------------------------------------------------

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t max_samples = 256;
  std::uint64_t seed = 7;
  // Denominator floor for the relative error.
  double floor = 1e-6;
  // Parameters whose name does not start with this prefix are skipped.
  std::string prefix;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
};

// Central finite differences of the scalar produced by `build` against the
// analytic gradient, over a seeded sample of trainable parameter entries.
// Probes whose +h/-h evaluations take different piecewise branches are skipped.
GradCheckResult gradient_check(const std::function<Var(Graph&)>& build, ParameterStore& params,
                               const GradCheckOptions& options = {});

// --- persistence -------------------------------------------------------------

// Binary container: magic, version, metadata blob, then (name, trainable,
// shape, raw little-endian float64 values) per entry in name order.
void save_checkpoint(const std::string& path, const ParameterStore& params,
                     const std::string& metadata);
ParameterStore load_checkpoint(const std::string& path, std::string* metadata = nullptr);
std::string serialize_checkpoint(const ParameterStore& params, const std::string& metadata);
ParameterStore deserialize_checkpoint(std::string_view bytes, std::string* metadata = nullptr);

}  // namespace r4d::diff
