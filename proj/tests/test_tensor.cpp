#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "mpgraf/optim.hpp"
#include "mpgraf/rng.hpp"
#include "mpgraf/tape.hpp"

using namespace mpgraf;
using gradcheck::max_rel_err;
using gradcheck::random_tensor;

TEST_CASE("softmax of a constant row is uniform") {
  Tape<double> tp;
  Var x = tp.input(Tensor<double>::vec({0.0, 0.0, 0.0}));
  Var y = tp.softmax(x, 0);
  for (double v : tp.val(y).data) REQUIRE(v == Catch::Approx(1.0 / 3.0));
}

TEST_CASE("softmax rows sum to one and are nonnegative") {
  Rng rng = make_rng(11, "softmax");
  for (int it = 0; it < 20; ++it) {
    Tape<double> tp;
    Var x = tp.input(random_tensor({3, 7}, rng, -30.0, 30.0));
    Var y = tp.softmax(x, 1);
    const auto& t = tp.val(y);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        REQUIRE(t.at(r, c) >= 0.0);
        s += t.at(r, c);
      }
      REQUIRE(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("matmul matches hand computation") {
  Tape<double> tp;
  Var a = tp.input(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var b = tp.input(Tensor<double>({3, 1}, {7, 8, 9}));
  Var y = tp.matmul(a, b);
  REQUIRE(tp.val(y).data == std::vector<double>{50, 122});
}

TEST_CASE("layer_norm of a constant vector is zero") {
  Tape<double> tp;
  Var x = tp.input(Tensor<double>::vec({1.0, 1.0, 1.0}));
  Var y = tp.layer_norm(x, 0);
  for (double v : tp.val(y).data) REQUIRE(v == 0.0);
}

TEST_CASE("backward of sum gives all-ones") {
  Parameter<double> p("p", Tensor<double>({2, 2}, {1, 2, 3, 4}));
  Tape<double> tp;
  Var loss = tp.sum(tp.param(p));
  tp.backward(loss);
  REQUIRE(p.grad.data == std::vector<double>{1, 1, 1, 1});
}

TEST_CASE("backward of sum of squares") {
  Parameter<double> p("p", Tensor<double>::vec({1.0, 2.0}));
  Tape<double> tp;
  Var v = tp.param(p);
  Var loss = tp.sum(tp.mul(v, v));
  tp.backward(loss);
  REQUIRE(p.grad.data == std::vector<double>{2, 4});
}

TEST_CASE("backward rejects non-scalar loss") {
  Parameter<double> p("p", Tensor<double>::vec({1.0, 2.0}));
  Tape<double> tp;
  Var v = tp.param(p);
  REQUIRE_THROWS_AS(tp.backward(v), Error);
}

TEST_CASE("frozen parameters receive no grad") {
  Parameter<double> p("p", Tensor<double>::vec({1.0, 2.0}), false);
  Tape<double> tp;
  Var v = tp.param(p);
  Var loss = tp.sum(tp.mul(v, v));
  tp.backward(loss);
  REQUIRE_FALSE(p.has_grad());
}

TEST_CASE("shape mismatch errors name the op") {
  Tape<double> tp;
  Var a = tp.input(Tensor<double>({2, 3}));
  Var b = tp.input(Tensor<double>({2, 2}));
  REQUIRE_THROWS_WITH(tp.matmul(a, b),
                      Catch::Matchers::ContainsSubstring("matmul"));
  REQUIRE_THROWS_WITH(tp.add(a, b),
                      Catch::Matchers::ContainsSubstring("add"));
}

TEST_CASE("concat/slice round-trips gradients") {
  Rng rng = make_rng(7, "concatslice");
  Parameter<double> p1("p1", random_tensor({2, 3}, rng));
  Parameter<double> p2("p2", random_tensor({2, 2}, rng));
  Tensor<double> w = random_tensor({2, 5}, rng);

  // loss through concat
  Tape<double> tp;
  Var c = tp.concat(1, {tp.param(p1), tp.param(p2)});
  Var loss = tp.sum(tp.mul(c, tp.input(w)));
  tp.backward(loss);
  Tensor<double> g1 = p1.grad, g2 = p2.grad;

  // same loss through explicit slices of the concatenated input
  p1.zero_grad();
  p2.zero_grad();
  Tape<double> tp2;
  Var c2 = tp2.concat(1, {tp2.param(p1), tp2.param(p2)});
  Var s1 = tp2.slice(c2, 1, 0, 3);
  Var s2 = tp2.slice(c2, 1, 3, 2);
  Var w1 = tp2.input(Tensor<double>({2, 3}, {w.at(0, 0), w.at(0, 1), w.at(0, 2),
                                             w.at(1, 0), w.at(1, 1), w.at(1, 2)}));
  Var w2 = tp2.input(Tensor<double>({2, 2}, {w.at(0, 3), w.at(0, 4),
                                             w.at(1, 3), w.at(1, 4)}));
  Var loss2 = tp2.add(tp2.sum(tp2.mul(s1, w1)), tp2.sum(tp2.mul(s2, w2)));
  tp2.backward(loss2);
  for (std::size_t i = 0; i < g1.numel(); ++i)
    REQUIRE(p1.grad.data[i] == Catch::Approx(g1.data[i]).margin(1e-14));
  for (std::size_t i = 0; i < g2.numel(); ++i)
    REQUIRE(p2.grad.data[i] == Catch::Approx(g2.data[i]).margin(1e-14));
}

TEST_CASE("gradient check across every differentiable op") {
  Rng rng = make_rng(42, "ops");
  auto check = [&](auto fn, Shape shape, double lo = -1.0, double hi = 1.0) {
    for (int rep = 0; rep < 8; ++rep) {
      Parameter<double> p("p", random_tensor(shape, rng, lo, hi));
      Parameter<double> q("q", random_tensor(shape, rng, lo, hi));
      double err = max_rel_err({&p, &q}, [&](Tape<double>& tp) {
        return fn(tp, tp.param(p), tp.param(q));
      });
      INFO("shape " << shape_str(shape));
      REQUIRE(err < 1e-4);
    }
  };

  // weighted-sum head keeps the loss scalar and generic
  auto head = [](Tape<double>& tp, Var y) {
    Tensor<double> w(tp.val(y).shape);
    for (std::size_t i = 0; i < w.numel(); ++i)
      w.data[i] = 0.3 + 0.1 * static_cast<double>(i % 5);
    return tp.sum(tp.mul(y, tp.input(w)));
  };

  check([&](Tape<double>& tp, Var a, Var b) { return head(tp, tp.add(a, b)); },
        {2, 3});
  check([&](Tape<double>& tp, Var a, Var b) { return head(tp, tp.sub(a, b)); },
        {2, 3});
  check([&](Tape<double>& tp, Var a, Var b) { return head(tp, tp.mul(a, b)); },
        {2, 3});
  check([&](Tape<double>& tp, Var a, Var b) { return head(tp, tp.div(a, b)); },
        {2, 3}, 0.5, 2.0);
  check([&](Tape<double>& tp, Var a, Var b) {
          return head(tp, tp.matmul(a, tp.transpose(b)));
        },
        {2, 3});
  check([&](Tape<double>& tp, Var a, Var) { return head(tp, tp.relu(a)); },
        {3, 3});
  check([&](Tape<double>& tp, Var a, Var) { return head(tp, tp.gelu(a)); },
        {3, 3});
  check([&](Tape<double>& tp, Var a, Var) { return head(tp, tp.exp(a)); },
        {2, 4});
  check([&](Tape<double>& tp, Var a, Var) { return head(tp, tp.log(a)); },
        {2, 4}, 0.2, 3.0);
  check([&](Tape<double>& tp, Var a, Var) { return head(tp, tp.sqrt(a)); },
        {2, 4}, 0.2, 3.0);
  check([&](Tape<double>& tp, Var a, Var) { return head(tp, tp.abs(a)); },
        {2, 4}, 0.1, 2.0);
  check([&](Tape<double>& tp, Var a, Var) { return head(tp, tp.softplus(a)); },
        {2, 4});
  check([&](Tape<double>& tp, Var a, Var) {
          return head(tp, tp.softmax(a, 1));
        },
        {3, 4});
  check([&](Tape<double>& tp, Var a, Var) {
          return head(tp, tp.layer_norm(a, 1));
        },
        {3, 4});
  check([&](Tape<double>& tp, Var a, Var) {
          return head(tp, tp.reshape(a, {4, 2}));
        },
        {2, 4});
  check([&](Tape<double>& tp, Var a, Var b) {
          return head(tp, tp.concat(0, {a, b}));
        },
        {2, 3});
  check([&](Tape<double>& tp, Var a, Var) {
          return head(tp, tp.slice(a, 1, 1, 2));
        },
        {3, 4});
  check([&](Tape<double>& tp, Var a, Var) {
          return head(tp, tp.gather_rows(a, {2, 0, 2}));
        },
        {3, 4});
  check([&](Tape<double>& tp, Var a, Var) { return head(tp, tp.scale(a, 1.7)); },
        {2, 3});
  check([&](Tape<double>& tp, Var a, Var) {
          return head(tp, tp.add_scalar(a, 0.9));
        },
        {2, 3});
  check([&](Tape<double>& tp, Var a, Var) {
          return head(tp, tp.sum_axis(a, 0));
        },
        {3, 4});
  check([&](Tape<double>& tp, Var a, Var) {
          return head(tp, tp.mean_axis(a, 1));
        },
        {3, 4});
  check([&](Tape<double>& tp, Var a, Var) { return tp.mean(a); }, {3, 4});

  // broadcast paths: rhs suffix and rhs scalar
  for (int rep = 0; rep < 8; ++rep) {
    Parameter<double> p("p", random_tensor({3, 4}, rng));
    Parameter<double> s("s", random_tensor({4}, rng, 0.5, 1.5));
    Parameter<double> c("c", random_tensor({1}, rng, 0.5, 1.5));
    double err = max_rel_err({&p, &s, &c}, [&](Tape<double>& tp) {
      Var y = tp.mul(tp.add(tp.param(p), tp.param(s)), tp.param(c));
      return tp.sum(tp.mul(y, y));
    });
    REQUIRE(err < 1e-4);
  }
}

TEST_CASE("random MLP gradients match finite differences") {
  Rng rng = make_rng(3, "mlp");
  for (int rep = 0; rep < 3; ++rep) {
    Parameter<double> w1("w1", random_tensor({5, 7}, rng, -0.5, 0.5));
    Parameter<double> b1("b1", random_tensor({7}, rng, -0.1, 0.1));
    Parameter<double> w2("w2", random_tensor({7, 4}, rng, -0.5, 0.5));
    Parameter<double> b2("b2", random_tensor({4}, rng, -0.1, 0.1));
    Parameter<double> w3("w3", random_tensor({4, 1}, rng, -0.5, 0.5));
    Tensor<double> x = random_tensor({3, 5}, rng);
    double err = max_rel_err(
        {&w1, &b1, &w2, &b2, &w3}, [&](Tape<double>& tp) {
          Var h1 = tp.relu(tp.add(tp.matmul(tp.input(x), tp.param(w1)),
                                  tp.param(b1)));
          Var h2 = tp.gelu(tp.add(tp.matmul(h1, tp.param(w2)), tp.param(b2)));
          Var out = tp.matmul(h2, tp.param(w3));
          return tp.mean(tp.mul(out, out));
        });
    REQUIRE(err < 1e-4);
  }
}

TEST_CASE("forward and backward are deterministic") {
  auto run = [](std::vector<double>& grads) {
    Rng rng = make_rng(99, "det");
    Parameter<double> w("w", random_tensor({4, 4}, rng));
    Tensor<double> x = random_tensor({2, 4}, rng);
    Tape<double> tp;
    Var y = tp.softmax(tp.matmul(tp.input(x), tp.param(w)), 1);
    Var loss = tp.mean(tp.layer_norm(y, 1));
    tp.backward(loss);
    grads = w.grad.data;
    return tp.val(loss).data[0];
  };
  std::vector<double> g1, g2;
  double l1 = run(g1);
  double l2 = run(g2);
  REQUIRE(l1 == l2);
  REQUIRE(g1 == g2);
}

TEST_CASE("adam: zero grad leaves parameter unchanged") {
  Parameter<double> p("p", Tensor<double>::vec({1.5, -2.0}));
  p.grad = Tensor<double>({2});  // explicit zeros
  Adam<double> opt;
  opt.step(p);
  REQUIRE(p.value.data == std::vector<double>{1.5, -2.0});
}

TEST_CASE("adam first step moves by about lr") {
  Parameter<double> p("p", Tensor<double>::scalar(3.0));
  p.grad = Tensor<double>::scalar(1.0);
  Adam<double>::Hyper h;
  h.lr = 0.1;
  Adam<double> opt(h);
  opt.step(p);
  // first Adam step: mhat = g, vhat = g^2, so delta ~ lr * sign(g)
  REQUIRE(p.value.data[0] == Catch::Approx(3.0 - 0.1).epsilon(1e-6));
}

TEST_CASE("adam does not move or advance state of frozen parameters") {
  Parameter<double> p("p", Tensor<double>::scalar(3.0), false);
  p.grad = Tensor<double>::scalar(1.0);  // grad present but parameter frozen
  Adam<double> opt;
  opt.step(p);
  REQUIRE(p.value.data[0] == 3.0);
  REQUIRE(opt.state_of("p") == nullptr);
}

TEST_CASE("float instantiation compiles and runs") {
  Tape<float> tp;
  Var x = tp.input(Tensor<float>::vec({1.0f, 2.0f}));
  Var y = tp.softmax(x, 0);
  float s = tp.val(y).data[0] + tp.val(y).data[1];
  REQUIRE(s == Catch::Approx(1.0f));
}
