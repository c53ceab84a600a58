#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gradcheck.hpp"
#include "mpgraf/losses.hpp"

using namespace mpgraf;
using gradcheck::max_rel_err;
using gradcheck::random_tensor;

namespace {

// brute-force NDCG oracle: explicit index sort, explicit DCG sums
double ndcg_oracle(const std::vector<double>& scores,
                   const std::vector<double>& labels, std::size_t k) {
  const std::size_t n_items = scores.size();
  std::vector<std::size_t> by_score(n_items), by_label(n_items);
  for (std::size_t i = 0; i < n_items; ++i) by_score[i] = by_label[i] = i;
  std::sort(by_score.begin(), by_score.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::sort(by_label.begin(), by_label.end(), [&](std::size_t a, std::size_t b) {
    if (labels[a] != labels[b]) return labels[a] > labels[b];
    return a < b;
  });
  double dcg = 0, idcg = 0;
  for (std::size_t r = 0; r < std::min(k, n_items); ++r) {
    dcg += (std::pow(2.0, labels[by_score[r]]) - 1.0) / std::log2(r + 2.0);
    idcg += (std::pow(2.0, labels[by_label[r]]) - 1.0) / std::log2(r + 2.0);
  }
  return idcg == 0 ? 1.0 : dcg / idcg;
}

double eval_loss(LossKind kind, const std::vector<double>& scores,
                 const std::vector<double>& labels, std::size_t k = 0,
                 double tau = 1.0) {
  Tape<double> tp;
  Var s = tp.input(Tensor<double>::vec(std::vector<double>(scores)));
  Var l = query_loss(tp, kind, s, labels, k, tau);
  return tp.val(l).data[0];
}

}  // namespace

TEST_CASE("ndcg of an ideal ordering is 1") {
  REQUIRE(metrics::ndcg_at_k({3.0, 2.0, 1.0}, {4, 2, 0}, 3) == 1.0);
}

TEST_CASE("ndcg hand case: labels [3,2] mis-ranked") {
  // scores put the grade-2 doc first
  double v = metrics::ndcg_at_k({1.0, 2.0}, {3, 2}, 2);
  double expect = (3.0 + 7.0 / std::log2(3.0)) / (7.0 + 3.0 / std::log2(3.0));
  REQUIRE(v == Catch::Approx(expect).margin(1e-12));
  REQUIRE(v == Catch::Approx(0.8340).margin(1e-4));
}

TEST_CASE("all-zero labels score 1 by convention") {
  REQUIRE(metrics::ndcg_at_k({0.3, 0.2, 0.9}, {0, 0, 0}, 2) == 1.0);
}

TEST_CASE("ndcg matches the brute-force oracle on random lists") {
  Rng rng = make_rng(101, "ndcgoracle");
  for (int it = 0; it < 300; ++it) {
    const std::size_t n = 1 + uniform_index(rng, 20);
    std::vector<double> scores(n), labels(n);
    for (auto& s : scores) s = uniform_real(rng, -2, 2);
    for (auto& y : labels) y = static_cast<double>(uniform_index(rng, 5));
    for (std::size_t k : {std::size_t(1), std::size_t(5), std::size_t(10)}) {
      double a = metrics::ndcg_at_k(scores, labels, k);
      double b = ndcg_oracle(scores, labels, k);
      REQUIRE(std::abs(a - b) < 1e-12);
    }
  }
}

TEST_CASE("ndcg is invariant under strictly monotone score transforms") {
  Rng rng = make_rng(102, "mono");
  for (int it = 0; it < 50; ++it) {
    const std::size_t n = 2 + uniform_index(rng, 10);
    std::vector<double> scores(n), labels(n), warped(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = uniform_real(rng, -3, 3);
      labels[i] = static_cast<double>(uniform_index(rng, 5));
      warped[i] = 2.0 * std::exp(scores[i] * 0.5) + 1.0;
    }
    REQUIRE(metrics::ndcg_at_k(scores, labels, 5) ==
            metrics::ndcg_at_k(warped, labels, 5));
  }
}

TEST_CASE("rmse trivial values") {
  REQUIRE(eval_loss(LossKind::rmse, {1, 2, 3}, {1, 2, 3}) == 0.0);
  REQUIRE(eval_loss(LossKind::rmse, {2, 0}, {1, 1}) ==
          Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("rmse matches direct recomputation") {
  Rng rng = make_rng(103, "rmse");
  for (int it = 0; it < 20; ++it) {
    std::size_t n = 1 + uniform_index(rng, 8);
    std::vector<double> s(n), y(n);
    for (auto& v : s) v = uniform_real(rng, -2, 2);
    for (auto& v : y) v = uniform_real(rng, 0, 4);
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += (s[i] - y[i]) * (s[i] - y[i]);
    REQUIRE(eval_loss(LossKind::rmse, s, y) ==
            Catch::Approx(std::sqrt(acc / n)).margin(1e-12));
  }
}

TEST_CASE("ranknet at equal scores gives ln 2 per pair") {
  REQUIRE(eval_loss(LossKind::ranknet, {0.7, 0.7}, {1, 0}) ==
          Catch::Approx(std::log(2.0)).margin(1e-12));
}

TEST_CASE("ranknet saturates to zero for well-separated pairs") {
  REQUIRE(eval_loss(LossKind::ranknet, {60.0, 0.0}, {1, 0}) < 1e-12);
}

TEST_CASE("ranknet matches brute-force pair enumeration") {
  Rng rng = make_rng(104, "ranknet");
  for (int it = 0; it < 20; ++it) {
    std::vector<double> s(4), y(4);
    for (auto& v : s) v = uniform_real(rng, -2, 2);
    for (auto& v : y) v = static_cast<double>(uniform_index(rng, 3));
    double total = 0;
    int pairs = 0;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        if (y[i] > y[j]) {
          total += std::log(1.0 + std::exp(-(s[i] - s[j])));
          pairs++;
        }
    double expect = pairs == 0 ? 0.0 : total / pairs;
    REQUIRE(eval_loss(LossKind::ranknet, s, y) ==
            Catch::Approx(expect).margin(1e-12));
  }
}

TEST_CASE("ranknet and listnet are shift invariant") {
  Rng rng = make_rng(105, "shift");
  for (int it = 0; it < 20; ++it) {
    std::vector<double> s(5), y(5), shifted(5);
    for (auto& v : s) v = uniform_real(rng, -1, 1);
    for (auto& v : y) v = static_cast<double>(uniform_index(rng, 4));
    const double c = uniform_real(rng, -5, 5);
    for (int i = 0; i < 5; ++i) shifted[i] = s[i] + c;
    REQUIRE(eval_loss(LossKind::ranknet, s, y) ==
            Catch::Approx(eval_loss(LossKind::ranknet, shifted, y)).margin(1e-9));
    REQUIRE(eval_loss(LossKind::listnet, s, y) ==
            Catch::Approx(eval_loss(LossKind::listnet, shifted, y)).margin(1e-9));
  }
}

TEST_CASE("listnet at scores equal to labels reaches the entropy floor") {
  std::vector<double> y = {2, 0, 1, 3};
  double mx = 3;
  double z = 0;
  for (double v : y) z += std::exp(v - mx);
  double entropy = 0;
  for (double v : y) {
    double p = std::exp(v - mx) / z;
    entropy -= p * std::log(p);
  }
  REQUIRE(eval_loss(LossKind::listnet, y, y) ==
          Catch::Approx(entropy).margin(1e-12));
  // up to additive constant
  REQUIRE(eval_loss(LossKind::listnet, {4, 2, 3, 5}, y) ==
          Catch::Approx(entropy).margin(1e-12));
}

TEST_CASE("listnet of uniform lists is ln L") {
  REQUIRE(eval_loss(LossKind::listnet, {1, 1, 1, 1, 1}, {2, 2, 2, 2, 2}) ==
          Catch::Approx(std::log(5.0)).margin(1e-12));
}

TEST_CASE("listnet matches direct formula evaluation") {
  Rng rng = make_rng(106, "listnet");
  for (int it = 0; it < 20; ++it) {
    std::vector<double> s(6), y(6);
    for (auto& v : s) v = uniform_real(rng, -2, 2);
    for (auto& v : y) v = static_cast<double>(uniform_index(rng, 5));
    auto softmax = [](const std::vector<double>& v) {
      double mx = *std::max_element(v.begin(), v.end());
      std::vector<double> out(v.size());
      double z = 0;
      for (std::size_t i = 0; i < v.size(); ++i) z += std::exp(v[i] - mx);
      for (std::size_t i = 0; i < v.size(); ++i)
        out[i] = std::exp(v[i] - mx) / z;
      return out;
    };
    auto ps = softmax(s), py = softmax(y);
    double expect = 0;
    for (std::size_t i = 0; i < 6; ++i) expect -= py[i] * std::log(ps[i]);
    REQUIRE(eval_loss(LossKind::listnet, s, y) ==
            Catch::Approx(expect).margin(1e-12));
  }
}

TEST_CASE("neural_sort rows sum to one pre-sinkhorn") {
  Rng rng = make_rng(107, "nsort");
  for (int it = 0; it < 20; ++it) {
    std::size_t n = 2 + uniform_index(rng, 7);
    Tape<double> tp;
    Var s = tp.input(random_tensor({n}, rng, -2, 2));
    Var p = neural_sort(tp, s, 0.7);
    for (std::size_t r = 0; r < n; ++r) {
      double sum = 0;
      for (std::size_t c = 0; c < n; ++c) {
        REQUIRE(tp.val(p).at(r, c) >= 0.0);
        sum += tp.val(p).at(r, c);
      }
      REQUIRE(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("sinkhorn converges to row and column sums of one") {
  // moderately separated scores are the slow case for plain alternation, so
  // the doubly-stochastic property is checked at convergence; the loss keeps
  // the 20-iteration default as a speed/accuracy tradeoff
  Rng rng = make_rng(108, "sink");
  for (int it = 0; it < 20; ++it) {
    std::size_t n = 2 + uniform_index(rng, 7);
    Tape<double> tp;
    Var s = tp.input(random_tensor({n}, rng, -2, 2));
    Var p = sinkhorn(tp, neural_sort(tp, s, 0.7), 1000);
    for (std::size_t r = 0; r < n; ++r) {
      double rsum = 0, csum = 0;
      for (std::size_t c = 0; c < n; ++c) {
        rsum += tp.val(p).at(r, c);
        csum += tp.val(p).at(c, r);
      }
      REQUIRE(std::abs(rsum - 1.0) < 1e-6);
      REQUIRE(std::abs(csum - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("neuralndcg approaches hard ndcg as tau shrinks") {
  std::vector<double> s = {1.0, 0.2, 1.7};
  std::vector<double> y = {2, 0, 3};
  const double hard = metrics::ndcg_at_k(s, y, 3);
  double prev_err = std::numeric_limits<double>::infinity();
  for (double tau : {1.0, 0.1, 0.01}) {
    double err = std::abs(-eval_loss(LossKind::neuralndcg, s, y, 0, tau) - hard);
    REQUIRE(err <= prev_err + 1e-12);
    prev_err = err;
  }
  REQUIRE(prev_err < 1e-3);
  // near-zero temperature recovers the exact permutation
  REQUIRE(-eval_loss(LossKind::neuralndcg, s, y, 0, 1e-3) ==
          Catch::Approx(hard).margin(1e-9));
}

TEST_CASE("neuralndcg of a single relevant doc is -1") {
  REQUIRE(eval_loss(LossKind::neuralndcg, {0.4}, {2}) ==
          Catch::Approx(-1.0).margin(1e-12));
}

TEST_CASE("neuralndcg of all-zero labels is constant -1") {
  REQUIRE(eval_loss(LossKind::neuralndcg, {0.4, 0.1}, {0, 0}) == -1.0);
}

TEST_CASE("neuralndcg rejects non-positive tau") {
  Tape<double> tp;
  Var s = tp.input(Tensor<double>::vec({1.0, 2.0}));
  REQUIRE_THROWS_AS(neuralndcg_loss(tp, s, std::vector<double>{1, 0}, 0, 0.0),
                    Error);
}

TEST_CASE("all four losses pass gradient checks") {
  Rng rng = make_rng(109, "lossgrad");
  for (LossKind kind : {LossKind::rmse, LossKind::ranknet, LossKind::listnet,
                        LossKind::neuralndcg}) {
    for (int rep = 0; rep < 10; ++rep) {
      const std::size_t n = 2 + uniform_index(rng, 5);
      Parameter<double> p("scores", random_tensor({n}, rng, -1.5, 1.5));
      std::vector<double> y(n);
      for (auto& v : y) v = static_cast<double>(uniform_index(rng, 5));
      y[0] = std::max(y[0], 1.0);  // keep ideal DCG nonzero
      double err = max_rel_err({&p}, [&](Tape<double>& tp) {
        return query_loss(tp, kind, tp.param(p), y, 0, 0.8);
      });
      INFO(loss_name(kind));
      REQUIRE(err < 1e-4);
    }
  }
}

TEST_CASE("batch loss averages per-query losses") {
  std::vector<double> scores = {1, 2, 0.5, 0.7, 0.9};
  std::vector<double> targets = {2, 1, 0, 1, 2};
  std::vector<QuerySlice> slices = {{0, 2}, {2, 3}};
  Tape<double> tp;
  Var s = tp.input(Tensor<double>::vec(std::vector<double>(scores)));
  Var l = batch_ranking_loss(tp, LossKind::rmse, s, targets, slices);
  double q1 = eval_loss(LossKind::rmse, {1, 2}, {2, 1});
  double q2 = eval_loss(LossKind::rmse, {0.5, 0.7, 0.9}, {0, 1, 2});
  REQUIRE(tp.val(l).data[0] == Catch::Approx((q1 + q2) / 2).margin(1e-12));
}
