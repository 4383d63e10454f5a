// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "r4d/diffcore.hpp"
#include "r4d/error.hpp"

using namespace r4d;
using namespace r4d::diff;

namespace {

// Independent triple-loop matmul.
std::vector<double> naive_affine(const std::vector<double>& x, const std::vector<double>& w,
                                 const std::vector<double>& b, std::size_t n, std::size_t in,
                                 std::size_t out) {
  std::vector<double> y(n * out);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < out; ++j) {
      double s = b[j];
      for (std::size_t k = 0; k < in; ++k) s += x[i * in + k] * w[k * out + j];
      y[i * out + j] = s;
    }
  return y;
}

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Central differences of f with respect to every entry of a graph input.
template <typename F>
double input_fd_error(const Tensor& x0, F&& f, double h = 1e-5) {
  Graph g;
  Var x = g.input(x0);
  Var out = f(g, x);
  g.backward(out);
  std::vector<double> analytic(x.grad().begin(), x.grad().end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    Tensor xp = x0, xm = x0;
    xp[i] += h;
    xm[i] -= h;
    Graph gp, gm;
    const double fp = f(gp, gp.constant(xp)).value()[0];
    const double fm = f(gm, gm.constant(xm)).value()[0];
    const double numeric = (fp - fm) / (2 * h);
    const double a = analytic.empty() ? 0.0 : analytic[i];
    worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8}));
  }
  return worst;
}

// Projects a tensor-valued op onto a scalar with fixed random weights.
Var project(Graph& g, Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t n = y.value().size();
  Var c = g.constant(Tensor({n}, random_values(n, rng)));
  Segments one;
  one.push(n);
  return sum(segment_weighted_sum(reshape(y, {n, 1}), c, one));
}

GradCheckOptions step(double h) {
  GradCheckOptions o;
  o.step = h;
  return o;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape and value count must agree") {
    CHECK_NOTHROW(Tensor({2, 3}, std::vector<double>(6)));
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), Error);
    Tensor t({2, 2}, {1, 2, 3, std::nan("")});
    CHECK_FALSE(t.all_finite());
    CHECK(Tensor({2}, {1, 2}).all_finite());
  }
}

TEST_SUITE("linear") {
  TEST_CASE("identity-like weight") {
    Graph g;
    Var y = linear(g.constant(Tensor::matrix(1, 2, {1, 0})), g.constant(Tensor::matrix(2, 2, {2, 0, 0, 3})),
                   g.constant(Tensor::vector({0, 0})));
    CHECK(y.value()[0] == 2.0);
    CHECK(y.value()[1] == 0.0);
  }

  TEST_CASE("zero input passes bias") {
    Graph g;
    Var y = linear(g.constant(Tensor::matrix(1, 2, {0, 0})), g.constant(Tensor::matrix(2, 2, {4, -1, 9, 2})),
                   g.constant(Tensor::vector({5, 7})));
    CHECK(y.value()[0] == 5.0);
    CHECK(y.value()[1] == 7.0);
  }

  TEST_CASE("random case matches naive matmul") {
    std::mt19937_64 rng(3);
    const auto x = random_values(3 * 4, rng), w = random_values(4 * 5, rng), b = random_values(5, rng);
    Graph g;
    Var y = linear(g.constant(Tensor::matrix(3, 4, x)), g.constant(Tensor::matrix(4, 5, w)),
                   g.constant(Tensor::vector(b)));
    const auto ref = naive_affine(x, w, b, 3, 4, 5);
    REQUIRE(y.value().shape() == Shape{3, 5});
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y.value()[i] - ref[i]) < 1e-12);
  }

  TEST_CASE("shape mismatch is a dimension error") {
    Graph g;
    auto bad = [&] {
      linear(g.constant(Tensor::matrix(1, 3, {1, 2, 3})), g.constant(Tensor::matrix(2, 2, {1, 0, 0, 1})),
             g.constant(Tensor::vector({0, 0})));
    };
    CHECK_THROWS_WITH(bad(), doctest::Contains("dimension error"));
  }

  TEST_CASE("gradients match finite differences") {
    std::mt19937_64 rng(5);
    ParameterStore store;
    store.add("w", Tensor::matrix(4, 3, random_values(12, rng)));
    store.add("b", Tensor::vector(random_values(3, rng)));
    const Tensor x = Tensor::matrix(2, 4, random_values(8, rng));
    auto build = [&](Graph& g) {
      return project(g, linear(g.constant(x), g.parameter(store.at("w")), g.parameter(store.at("b"))), 11);
    };
    CHECK(gradient_check(build, store).max_relative_error < 1e-8);
    CHECK(input_fd_error(x, [&](Graph& g, Var v) {
            return project(g, linear(v, g.parameter(store.at("w")), g.parameter(store.at("b"))), 11);
          }) < 1e-8);
  }
}

TEST_SUITE("layer_norm") {
  TEST_CASE("constant row maps to zeros") {
    Graph g;
    Var y = layer_norm(g.constant(Tensor::matrix(1, 3, {4, 4, 4})), g.constant(Tensor::vector({1, 1, 1})),
                       g.constant(Tensor::vector({0, 0, 0})));
    for (double v : y.value().values()) CHECK(v == 0.0);
  }

  TEST_CASE("normalized row is returned") {
    Graph g;
    Var y = layer_norm(g.constant(Tensor::matrix(1, 2, {1, -1})), g.constant(Tensor::vector({1, 1})),
                       g.constant(Tensor::vector({0, 0})), 1e-15);
    CHECK(y.value()[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y.value()[1] == doctest::Approx(-1.0).epsilon(1e-12));
  }

  TEST_CASE("empty feature dimension is rejected") {
    Graph g;
    CHECK_THROWS_WITH(layer_norm(g.constant(Tensor({1, 0})), g.constant(Tensor({0})), g.constant(Tensor({0}))),
                      doctest::Contains("dimension error"));
  }

  TEST_CASE("gradients match finite differences") {
    std::mt19937_64 rng(8);
    ParameterStore store;
    store.add("g", Tensor::vector(random_values(5, rng, 0.5, 1.5)));
    store.add("b", Tensor::vector(random_values(5, rng)));
    const Tensor x = Tensor::matrix(3, 5, random_values(15, rng, -2, 2));
    auto op = [&](Graph& g, Var v) {
      return project(g, layer_norm(v, g.parameter(store.at("g")), g.parameter(store.at("b"))), 4);
    };
    CHECK(gradient_check([&](Graph& g) { return op(g, g.constant(x)); }, store, step(1e-4)).max_relative_error <
          1e-4);
    CHECK(input_fd_error(x, op, 1e-4) < 1e-4);
  }
}

TEST_SUITE("softmax") {
  TEST_CASE("analytic values") {
    Graph g;
    Var a = softmax(g.constant(Tensor::vector({0, 0})));
    CHECK(a.value()[0] == 0.5);
    Var b = softmax(g.constant(Tensor::vector({1000, 1000})));
    CHECK(b.value()[0] == 0.5);
    CHECK(b.value()[1] == 0.5);
    Var c = softmax(g.constant(Tensor::vector({0, std::log(3.0)})));
    CHECK(c.value()[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(c.value()[1] == doctest::Approx(0.75).epsilon(1e-14));
  }

  TEST_CASE("empty input is a dimension error") {
    Graph g;
    CHECK_THROWS_WITH(softmax(g.constant(Tensor({0}))), doctest::Contains("dimension error"));
  }

  TEST_CASE("positive, normalized, shift invariant") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 1 + rng() % 9;
      auto x = random_values(n, rng, -30, 30);
      const double shift = random_values(1, rng, -500, 500)[0];
      auto xs = x;
      for (double& v : xs) v += shift;
      Graph g;
      Var a = softmax(g.constant(Tensor::vector(x)));
      Var b = softmax(g.constant(Tensor::vector(xs)));
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(a.value()[i] > 0.0);
        CHECK(std::abs(a.value()[i] - b.value()[i]) < 1e-12);
        total += a.value()[i];
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }

  TEST_CASE("gradients match finite differences") {
    std::mt19937_64 rng(2);
    const Tensor x = Tensor::vector(random_values(6, rng, -2, 2));
    CHECK(input_fd_error(x, [](Graph& g, Var v) { return project(g, softmax(v), 9); }) < 1e-6);
    Segments seg;
    seg.push(2);
    seg.push(4);
    CHECK(input_fd_error(x, [&](Graph& g, Var v) { return project(g, segment_softmax(v, seg), 9); }) < 1e-6);
  }
}

TEST_SUITE("smooth_l1") {
  double loss(double p, double t, double delta = 1.0) {
    Graph g;
    return smooth_l1(g.constant(Tensor::vector({p})), g.constant(Tensor::vector({t})), delta).value()[0];
  }

  TEST_CASE("analytic branches") {
    CHECK(loss(3.0, 3.0) == 0.0);
    CHECK(loss(0.5, 0.0) == 0.125);
    CHECK(loss(2.0, 0.0) == 1.5);
    CHECK(loss(-2.0, 0.0) == 1.5);
  }

  TEST_CASE("shape mismatch is a dimension error") {
    Graph g;
    CHECK_THROWS_WITH(smooth_l1(g.constant(Tensor::vector({1, 2})), g.constant(Tensor::vector({1}))),
                      doctest::Contains("dimension error"));
  }

  TEST_CASE("continuous and once differentiable at the kink") {
    const double delta = 1.0, h = 1e-7;
    CHECK(std::abs(loss(delta - 1e-12, 0) - loss(delta + 1e-12, 0)) < 1e-11);
    const double left = (loss(delta, 0) - loss(delta - h, 0)) / h;
    const double right = (loss(delta + h, 0) - loss(delta, 0)) / h;
    CHECK(std::abs(left - right) < 1e-6);
  }

  TEST_CASE("gradient away from the kink") {
    const Tensor p = Tensor::vector({0.3, -2.5, 4.0, -0.2});
    const Tensor t = Tensor::vector({0.0, 0.1, 1.0, 0.4});
    CHECK(input_fd_error(p, [&](Graph& g, Var v) { return smooth_l1(v, g.constant(t)); }) < 1e-8);
  }
}

TEST_SUITE("mean_pool") {
  TEST_CASE("values") {
    Graph g;
    std::vector<Var> one{g.constant(Tensor::vector({1, 3}))};
    Var a = mean_pool(one);
    CHECK(a.value()[0] == 1.0);
    CHECK(a.value()[1] == 3.0);
    std::vector<Var> two{g.constant(Tensor::vector({0, 0})), g.constant(Tensor::vector({2, 4}))};
    Var b = mean_pool(two);
    CHECK(b.value()[0] == 1.0);
    CHECK(b.value()[1] == 2.0);
  }

  TEST_CASE("empty list is a precondition error") {
    std::vector<Var> none;
    CHECK_THROWS_WITH(mean_pool(none), doctest::Contains("precondition error"));
  }

  TEST_CASE("gradient distributes 1/len") {
    Graph g;
    std::vector<Var> xs{g.input(Tensor::vector({1, 2})), g.input(Tensor::vector({3, 4})),
                        g.input(Tensor::vector({5, 6}))};
    g.backward(sum(mean_pool(xs)));
    for (const Var& v : xs)
      for (double gr : v.grad()) CHECK(gr == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }

  TEST_CASE("segment_mean matches finite differences") {
    std::mt19937_64 rng(13);
    const Tensor x = Tensor::matrix(5, 3, random_values(15, rng));
    Segments seg;
    seg.push(3);
    seg.push(2);
    CHECK(input_fd_error(x, [&](Graph& g, Var v) { return project(g, segment_mean(v, seg), 1); }) < 1e-8);
  }
}

TEST_SUITE("structural ops") {
  TEST_CASE("concat, gather, slice and weighted sums are differentiable") {
    std::mt19937_64 rng(17);
    const Tensor x = Tensor::matrix(4, 3, random_values(12, rng));
    const Tensor w = Tensor::vector(random_values(4, rng));
    Segments seg;
    seg.push(1);
    seg.push(3);
    CHECK(input_fd_error(x, [&](Graph& g, Var v) {
            std::vector<Var> parts{v, slice_cols(v, 1, 3), gather_rows(v, {3, 0, 0, 2}),
                                   scale_rows(v, {0.5, -2.0, 0.0, 3.0})};
            return project(g, concat_cols(parts), 5);
          }) < 1e-8);
    CHECK(input_fd_error(x, [&](Graph& g, Var v) {
            return project(g, segment_weighted_sum(v, g.constant(w), seg), 6);
          }) < 1e-8);
    CHECK(input_fd_error(w, [&](Graph& g, Var v) {
            return project(g, segment_weighted_sum(g.constant(x), v, seg), 6);
          }) < 1e-8);
    CHECK(input_fd_error(x, [&](Graph&, Var v) { return sum(affine(add(v, v), 3.0, 1.0)); }) < 1e-8);
  }

  TEST_CASE("backward rejects non-scalar outputs") {
    Graph g;
    Var v = g.input(Tensor::vector({1, 2}));
    CHECK_THROWS_WITH(g.backward(v), doctest::Contains("precondition error"));
  }
}

TEST_SUITE("mlp") {
  TEST_CASE("identity layer returns its input") {
    ParameterStore store;
    store.add("m.l0.weight", Tensor::matrix(2, 2, {1, 0, 0, 1}));
    store.add("m.l0.bias", Tensor::vector({0, 0}));
    MLPSpec spec{2, {2}, false, Activation::none, true};
    Graph g;
    Var y = mlp_forward(spec, "m", store, g, g.constant(Tensor::matrix(1, 2, {-3, 8})));
    CHECK(y.value()[0] == -3.0);
    CHECK(y.value()[1] == 8.0);
  }

  TEST_CASE("relu layer clips negatives") {
    ParameterStore store;
    store.add("m.l0.weight", Tensor::matrix(2, 2, {1, 0, 0, 1}));
    store.add("m.l0.bias", Tensor::vector({0, 0}));
    MLPSpec spec{2, {2}, false, Activation::relu, true};
    Graph g;
    Var y = mlp_forward(spec, "m", store, g, g.constant(Tensor::matrix(1, 2, {-1, 2})));
    CHECK(y.value()[0] == 0.0);
    CHECK(y.value()[1] == 2.0);
  }

  TEST_CASE("random three-layer net matches a step-by-step replay") {
    std::mt19937_64 rng(99);
    ParameterStore store;
    MLPSpec spec{4, {6, 5, 2}, true, Activation::relu, false};
    MLP net("net", spec, store, rng);
    const auto x = random_values(3 * 4, rng);
    Graph g;
    Var y = net.forward(g, store, g.constant(Tensor::matrix(3, 4, x)));

    std::vector<double> h = x;
    std::size_t in = 4;
    for (std::size_t l = 0; l < 3; ++l) {
      const std::size_t out = spec.layer_widths[l];
      const std::string p = "net.l" + std::to_string(l) + ".";
      h = naive_affine(h, store.at(p + "weight").value.storage(), store.at(p + "bias").value.storage(), 3, in,
                       out);
      if (l < 2) {
        const auto& gain = store.at(p + "ln_gain").value.storage();
        const auto& bias = store.at(p + "ln_bias").value.storage();
        for (std::size_t i = 0; i < 3; ++i) {
          double mean = 0, var = 0;
          for (std::size_t k = 0; k < out; ++k) mean += h[i * out + k] / out;
          for (std::size_t k = 0; k < out; ++k) var += (h[i * out + k] - mean) * (h[i * out + k] - mean) / out;
          for (std::size_t k = 0; k < out; ++k) {
            const double v = gain[k] * (h[i * out + k] - mean) / std::sqrt(var + 1e-5) + bias[k];
            h[i * out + k] = v > 0 ? v : 0;
          }
        }
      }
      in = out;
    }
    REQUIRE(y.value().size() == h.size());
    for (std::size_t i = 0; i < h.size(); ++i) CHECK(std::abs(y.value()[i] - h[i]) < 1e-12);
  }

  TEST_CASE("parameter/spec mismatch is a configuration error") {
    std::mt19937_64 rng(1);
    ParameterStore store;
    MLP("m", MLPSpec{3, {4}, false, Activation::relu, true}, store, rng);
    Graph g;
    CHECK_THROWS_WITH(mlp_forward(MLPSpec{3, {5}, false, Activation::relu, true}, "m", store, g,
                                  g.constant(Tensor::matrix(1, 3, {1, 2, 3}))),
                      doctest::Contains("configuration error"));
    CHECK_THROWS_WITH(MLP::bind("other", MLPSpec{3, {4}, false, Activation::relu, true}, store),
                      doctest::Contains("configuration error"));
    CHECK_THROWS_WITH(MLPSpec{}.validate(), doctest::Contains("configuration error"));
  }
}

TEST_SUITE("optimizer") {
  TEST_CASE("zero learning rate leaves parameters unchanged") {
    ParameterStore store;
    store.add("p", Tensor::vector({1.5, -2.0}));
    store.zero_grad();
    store.at("p").grad = {3.0, 4.0};
    Optimizer opt;
    opt.step(store, 0.0);
    CHECK(store.at("p").value[0] == 1.5);
    CHECK(store.at("p").value[1] == -2.0);
  }

  TEST_CASE("plain SGD step") {
    ParameterStore store;
    store.add("p", Tensor::vector({1.0}));
    store.at("p").grad = {2.0};
    Optimizer opt({OptimizerKind::sgd});
    optimizer_step(store, opt, 0.1);
    CHECK(store.at("p").value[0] == doctest::Approx(0.8).epsilon(1e-15));
  }

  TEST_CASE("missing gradient is a state error") {
    ParameterStore store;
    store.add("p", Tensor::vector({1.0}));
    Optimizer opt;
    CHECK_THROWS_WITH(opt.step(store, 0.1), doctest::Contains("state error"));
  }

  TEST_CASE("converges on a one-dimensional quadratic") {
    // f(p) = 0.5 * a (p - c)^2 has its minimum at c.
    const double a = 2.0, c = 3.25;
    // Momentum 0.9 contracts no faster than sqrt(0.9) per step, so the
    // momentum run uses 0.5 to reach 1e-6 within 200 steps.
    for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::momentum}) {
      ParameterStore store;
      store.add("p", Tensor::vector({-4.0}));
      OptimizerConfig config;
      config.kind = kind;
      config.momentum = 0.5;
      Optimizer opt(config);
      for (int i = 0; i < 200; ++i) {
        Graph g;
        Var p = g.parameter(store.at("p"));
        Var loss = scale(weighted_smooth_l1(p, std::vector<double>{c}, std::vector<double>{1.0}, 1e6), a * 1e6);
        store.zero_grad();
        g.backward(loss);
        opt.step(store, kind == OptimizerKind::sgd ? 0.25 : 0.2);
      }
      CHECK(std::abs(store.at("p").value[0] - c) < 1e-6);
    }
  }
}

TEST_SUITE("gradient_check") {
  TEST_CASE("linear scalar function is exact") {
    ParameterStore store;
    store.add("a", Tensor::vector({0.7, -1.2, 2.0}));
    auto build = [&](Graph& g) { return sum(affine(g.parameter(store.at("a")), 3.0, 1.0)); };
    const auto r = gradient_check(build, store, step(1e-5));
    CHECK(r.checked == 3);
    CHECK(r.max_relative_error < 1e-8);
  }

  TEST_CASE("relu away from its kink") {
    ParameterStore store;
    store.add("a", Tensor::vector({0.5, -0.4, 1.3, -2.0, 0.01}));
    auto build = [&](Graph& g) { return project(g, relu(g.parameter(store.at("a"))), 3); };
    const auto r = gradient_check(build, store, step(1e-5));
    CHECK(r.skipped_kinks == 0);
    CHECK(r.max_relative_error < 1e-6);
  }

  TEST_CASE("probes crossing a kink are skipped") {
    ParameterStore store;
    store.add("a", Tensor::vector({1e-7, 0.5}));
    auto build = [&](Graph& g) { return sum(relu(g.parameter(store.at("a")))); };
    const auto r = gradient_check(build, store, step(1e-5));
    CHECK(r.skipped_kinks == 1);
    CHECK(r.checked == 1);
  }

  TEST_CASE("preconditions") {
    ParameterStore store;
    store.add("a", Tensor::vector({1.0, 2.0}));
    auto vec = [&](Graph& g) { return g.parameter(store.at("a")); };
    CHECK_THROWS_WITH(gradient_check(vec, store), doctest::Contains("precondition error"));
    auto scalar = [&](Graph& g) { return sum(g.parameter(store.at("a"))); };
    CHECK_THROWS_WITH(gradient_check(scalar, store, step(1e-2)), doctest::Contains("precondition error"));
  }
}

TEST_SUITE("determinism and persistence") {
  TEST_CASE("repeated forward/backward gives bit-identical gradients") {
    auto run = [] {
      std::mt19937_64 rng(77);
      ParameterStore store;
      MLP net("n", MLPSpec{3, {8, 8, 1}, true, Activation::relu, false}, store, rng);
      const Tensor x = Tensor::matrix(4, 3, random_values(12, rng));
      Graph g;
      Var y = net.forward(g, store, g.constant(x));
      store.zero_grad();
      g.backward(smooth_l1(flatten(y), g.constant(Tensor::vector({1, 2, 3, 4}))));
      std::vector<double> all;
      for (auto& [name, p] : store) all.insert(all.end(), p.grad.begin(), p.grad.end());
      return all;
    };
    CHECK(run() == run());
  }

  TEST_CASE("checkpoint round trip is bit exact") {
    std::mt19937_64 rng(4);
    ParameterStore store;
    MLP("n", MLPSpec{3, {4, 2}, true, Activation::relu, false}, store, rng);
    store.add("frozen", Tensor::vector({std::nextafter(1.0, 2.0), -0.0, 1e-310}), false);
    const std::string bytes = serialize_checkpoint(store, "{\"k\":1}");
    std::string meta;
    ParameterStore back = deserialize_checkpoint(bytes, &meta);
    CHECK(meta == "{\"k\":1}");
    REQUIRE(back.size() == store.size());
    for (const auto& [name, p] : store) {
      const auto& q = back.at(name);
      CHECK(q.trainable == p.trainable);
      CHECK(q.value.shape() == p.value.shape());
      CHECK(std::memcmp(q.value.values().data(), p.value.values().data(), p.value.size() * sizeof(double)) == 0);
    }
    CHECK(serialize_checkpoint(back, meta) == bytes);
  }

  TEST_CASE("corrupt checkpoints are rejected") {
    ParameterStore store;
    store.add("a", Tensor::vector({1, 2}));
    std::string bytes = serialize_checkpoint(store, "");
    CHECK_THROWS_WITH(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), doctest::Contains("parse error"));
    CHECK_THROWS_WITH(deserialize_checkpoint("garbage!"), doctest::Contains("parse error"));
    bytes[8] = 9;
    CHECK_THROWS_WITH(deserialize_checkpoint(bytes), doctest::Contains("version error"));
  }
}
