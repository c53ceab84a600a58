#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "mpgraf/tape.hpp"

namespace mpgraf {

enum class LossKind { rmse, ranknet, listnet, neuralndcg };

inline const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::rmse: return "rmse";
    case LossKind::ranknet: return "ranknet";
    case LossKind::listnet: return "listnet";
    default: return "neuralndcg";
  }
}

inline LossKind parse_loss(const std::string& s) {
  if (s == "rmse") return LossKind::rmse;
  if (s == "ranknet") return LossKind::ranknet;
  if (s == "listnet") return LossKind::listnet;
  if (s == "neuralndcg") return LossKind::neuralndcg;
  throw Error("unknown loss '" + s + "'");
}

namespace metrics {

inline double gain(double label) { return std::pow(2.0, label) - 1.0; }
inline double discount(std::size_t rank0) {  // rank0 is 0-based
  return 1.0 / std::log2(static_cast<double>(rank0) + 2.0);
}

/// DCG@k of labels taken in the order given.
inline double dcg_at_k(const std::vector<double>& ordered_labels,
                       std::size_t k) {
  double s = 0;
  const std::size_t n = std::min(k, ordered_labels.size());
  for (std::size_t r = 0; r < n; ++r) s += gain(ordered_labels[r]) * discount(r);
  return s;
}

inline double ideal_dcg_at_k(std::vector<double> labels, std::size_t k) {
  std::stable_sort(labels.begin(), labels.end(), std::greater<>());
  return dcg_at_k(labels, k);
}

/// NDCG@k with gain 2^y - 1 and discount 1/log2(rank+1); score ties break by
/// original index. All-zero-label queries score 1.0 by convention.
inline double ndcg_at_k(const std::vector<double>& scores,
                        const std::vector<double>& labels, std::size_t k) {
  if (scores.size() != labels.size())
    throw Error("ndcg_at_k: scores/labels length mismatch");
  if (scores.empty() || k == 0) throw Error("ndcg_at_k: empty input or k=0");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  std::vector<double> ranked(scores.size());
  for (std::size_t r = 0; r < order.size(); ++r) ranked[r] = labels[order[r]];
  const double idcg = ideal_dcg_at_k(labels, k);
  if (idcg == 0.0) return 1.0;
  return dcg_at_k(ranked, k) / idcg;
}

}  // namespace metrics

// ---- differentiable losses; scores is a rank-1 Var of length L ----

template <class T>
Var rmse_loss(Tape<T>& tp, Var scores, const std::vector<T>& labels) {
  Var d = tp.sub(scores, tp.input(Tensor<T>::vec(std::vector<T>(labels))));
  return tp.sqrt(tp.mean(tp.mul(d, d)));
}

/// Pairwise logistic loss over all ordered pairs y_i > y_j (sigma = 1),
/// averaged per pair. Queries with no ordered pairs contribute zero.
template <class T>
Var ranknet_loss(Tape<T>& tp, Var scores, const std::vector<T>& labels) {
  std::vector<std::size_t> hi, lo;
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = 0; j < labels.size(); ++j)
      if (labels[i] > labels[j]) {
        hi.push_back(i);
        lo.push_back(j);
      }
  if (hi.empty()) return tp.input(Tensor<T>::scalar(T(0)));
  Var si = tp.gather_rows(scores, std::move(hi));
  Var sj = tp.gather_rows(scores, std::move(lo));
  return tp.mean(tp.softplus(tp.neg(tp.sub(si, sj))));
}

/// Top-1 ListNet: cross-entropy between softmax(labels) and softmax(scores).
template <class T>
Var listnet_loss(Tape<T>& tp, Var scores, const std::vector<T>& labels) {
  const std::size_t n = labels.size();
  // target distribution is a constant
  double mx = -std::numeric_limits<double>::infinity();
  for (T y : labels) mx = std::max(mx, static_cast<double>(y));
  std::vector<T> py(n);
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double e = std::exp(static_cast<double>(labels[i]) - mx);
    py[i] = static_cast<T>(e);
    sum += e;
  }
  for (auto& v : py) v = static_cast<T>(static_cast<double>(v) / sum);
  // log softmax(scores) via the max-shift identity; the shift is constant so
  // gradients are exact
  double smax = -std::numeric_limits<double>::infinity();
  for (T v : tp.val(scores).data) smax = std::max(smax, static_cast<double>(v));
  Var shifted = tp.add_scalar(scores, static_cast<T>(-smax));
  Var lse = tp.log(tp.sum(tp.exp(shifted)));
  Var log_sm = tp.sub(shifted, lse);
  return tp.neg(tp.sum(tp.mul(log_sm, tp.input(Tensor<T>::vec(py)))));
}

/// NeuralSort relaxed permutation: row r approximates the indicator of the
/// r-th largest score. Rows sum to one by construction.
template <class T>
Var neural_sort(Tape<T>& tp, Var scores, double tau) {
  if (!(tau > 0)) throw Error("neural_sort: tau must be positive");
  const std::size_t n = tp.val(scores).numel();
  Var sc = tp.reshape(scores, {n, 1});
  Var ones_row = tp.input(Tensor<T>({1, n}, T(1)));
  Var ones_col = tp.input(Tensor<T>({n, 1}, T(1)));
  Var s_rows = tp.matmul(sc, ones_row);            // [n,n], row i = s_i
  Var diff_abs = tp.abs(tp.sub(s_rows, tp.transpose(s_rows)));
  Var a_col = tp.reshape(tp.sum_axis(diff_abs, 1), {n, 1});  // a_i = sum_j |s_i - s_j|
  Tensor<T> coeff({n, 1});
  for (std::size_t r = 0; r < n; ++r)
    coeff.data[r] = static_cast<T>(static_cast<double>(n) - 1.0 -
                                   2.0 * static_cast<double>(r));
  Var m = tp.matmul(tp.input(std::move(coeff)), tp.transpose(sc));
  Var a_rows = tp.matmul(ones_col, tp.transpose(a_col));
  Var pre = tp.scale(tp.sub(m, a_rows), static_cast<T>(1.0 / tau));
  return tp.softmax(pre, 1);
}

/// Alternating row/column normalization toward a doubly-stochastic matrix.
template <class T>
Var sinkhorn(Tape<T>& tp, Var p, std::size_t iters = 20) {
  const std::size_t n = tp.val(p).rows();
  Var ones_row = tp.input(Tensor<T>({1, n}, T(1)));
  Var ones_col = tp.input(Tensor<T>({n, 1}, T(1)));
  const T tiny = static_cast<T>(1e-12);
  for (std::size_t it = 0; it < iters; ++it) {
    Var rowsum = tp.matmul(p, ones_col);  // [n,1]
    p = tp.div(p, tp.add_scalar(tp.matmul(rowsum, ones_row), tiny));
    Var colsum = tp.matmul(ones_row, p);  // [1,n]
    p = tp.div(p, tp.add_scalar(tp.matmul(ones_col, colsum), tiny));
  }
  return p;
}

/// Differentiable NDCG surrogate: smoothed gains through a Sinkhorn-scaled
/// NeuralSort permutation, discounted and normalized by the ideal DCG@k.
/// Returns the negative of the smooth NDCG; k = 0 means the full list.
/// Zero-ideal-DCG queries return a constant -1 with no gradient.
template <class T>
Var neuralndcg_loss(Tape<T>& tp, Var scores, const std::vector<T>& labels,
                    std::size_t k = 0, double tau = 1.0,
                    std::size_t sinkhorn_iters = 20) {
  if (!(tau > 0)) throw Error("neuralndcg_loss: tau must be positive");
  const std::size_t n = labels.size();
  if (k == 0) k = n;
  std::vector<double> dl(labels.begin(), labels.end());
  const double idcg = metrics::ideal_dcg_at_k(dl, k);
  if (idcg == 0.0) return tp.input(Tensor<T>::scalar(T(-1)));

  Var p = sinkhorn(tp, neural_sort(tp, scores, tau), sinkhorn_iters);
  Tensor<T> gains({n, 1});
  for (std::size_t j = 0; j < n; ++j)
    gains.data[j] = static_cast<T>(metrics::gain(dl[j]));
  Var smoothed = tp.matmul(p, tp.input(std::move(gains)));  // [n,1]
  Tensor<T> disc({n, 1});
  for (std::size_t r = 0; r < std::min(k, n); ++r)
    disc.data[r] = static_cast<T>(metrics::discount(r));
  Var dot = tp.sum(tp.mul(smoothed, tp.input(std::move(disc))));
  return tp.scale(dot, static_cast<T>(-1.0 / idcg));
}

/// Dispatch on loss kind for one query's scores/targets.
template <class T>
Var query_loss(Tape<T>& tp, LossKind kind, Var scores,
               const std::vector<T>& targets, std::size_t k = 0,
               double tau = 1.0) {
  switch (kind) {
    case LossKind::rmse: return rmse_loss(tp, scores, targets);
    case LossKind::ranknet: return ranknet_loss(tp, scores, targets);
    case LossKind::listnet: return listnet_loss(tp, scores, targets);
    default: return neuralndcg_loss(tp, scores, targets, k, tau);
  }
}

struct QuerySlice {
  std::size_t offset = 0;
  std::size_t length = 0;
};

/// Unweighted mean of per-query losses over a batch. `scores` is the
/// concatenated rank-1 score vector; slices delimit queries.
template <class T>
Var batch_ranking_loss(Tape<T>& tp, LossKind kind, Var scores,
                       const std::vector<T>& targets,
                       const std::vector<QuerySlice>& slices,
                       std::size_t k = 0, double tau = 1.0) {
  if (slices.empty()) throw Error("batch_ranking_loss: empty batch");
  Var total{};
  for (std::size_t qi = 0; qi < slices.size(); ++qi) {
    const auto& s = slices[qi];
    Var qs = tp.slice(scores, 0, s.offset, s.length);
    std::vector<T> qt(targets.begin() + s.offset,
                      targets.begin() + s.offset + s.length);
    Var l = query_loss(tp, kind, qs, qt, k, tau);
    total = qi == 0 ? l : tp.add(total, l);
  }
  return tp.scale(total, T(1) / static_cast<T>(slices.size()));
}

}  // namespace mpgraf
