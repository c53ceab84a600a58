#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "mpgraf/rippling.hpp"
#include "mpgraf/tape.hpp"

namespace mpgraf::gnn {

/// Degree-normalized edge list extracted from a bipartite graph. Propagation
/// uses structure only; edge scores decide which edges exist, not message
/// weights.
struct PropagationPlan {
  std::size_t num_queries = 0;
  std::size_t num_pages = 0;
  struct Entry {
    std::size_t q, p;
    double coeff;  // 1 / (sqrt(|N_q|) sqrt(|N_p|))
  };
  std::vector<Entry> edges;

  static PropagationPlan build(const BipartiteGraph& g) {
    PropagationPlan plan;
    plan.num_queries = g.query_nodes.size();
    plan.num_pages = g.page_nodes.size();
    plan.edges.reserve(g.edges.size());
    for (const auto& e : g.edges) {
      const double dq = static_cast<double>(g.query_degree(e.query));
      const double dp = static_cast<double>(g.page_degree(e.page));
      plan.edges.push_back(
          Entry{e.query, e.page, 1.0 / (std::sqrt(dq) * std::sqrt(dp))});
    }
    return plan;
  }
};

/// x^(0) = raw feature * adapter, per node type.
template <class T>
std::pair<Var, Var> init_layer0(Tape<T>& tp, const Tensor<T>& query_feats,
                                const Tensor<T>& page_feats,
                                Parameter<T>& query_adapter,
                                Parameter<T>& page_adapter) {
  if (query_feats.numel() == 0 || page_feats.numel() == 0)
    throw Error("init_layer0: missing node features");
  Var q = tp.matmul(tp.input(query_feats), tp.param(query_adapter));
  Var p = tp.matmul(tp.input(page_feats), tp.param(page_adapter));
  return {q, p};
}

namespace detail {

// One direction of the propagation step as a custom tape op. The adjoint of
// a linear map with coefficient c per edge is the transposed map with the
// same c.
template <class T>
Var spread(Tape<T>& tp, const PropagationPlan& plan, Var src, bool to_queries) {
  const Tensor<T>& S = tp.val(src);
  const std::size_t d = S.cols();
  const std::size_t out_rows = to_queries ? plan.num_queries : plan.num_pages;
  Tensor<T> Y({out_rows, d});
  for (const auto& e : plan.edges) {
    const std::size_t dst = to_queries ? e.q : e.p;
    const std::size_t from = to_queries ? e.p : e.q;
    const T c = static_cast<T>(e.coeff);
    for (std::size_t j = 0; j < d; ++j)
      Y.data[dst * d + j] += c * S.data[from * d + j];
  }
  bool rg = tp.needs_grad(src);
  return tp.push_node(std::move(Y), rg,
                      [src, rg, &plan, d, to_queries](Tape<T>& tp2, Var self) {
    if (!rg) return;
    const Tensor<T>& g = tp2.grad(self);
    Tensor<T>& gs = tp2.grad_acc(src);
    for (const auto& e : plan.edges) {
      const std::size_t dst = to_queries ? e.q : e.p;
      const std::size_t from = to_queries ? e.p : e.q;
      const T c = static_cast<T>(e.coeff);
      for (std::size_t j = 0; j < d; ++j)
        gs.data[from * d + j] += c * g.data[dst * d + j];
    }
  });
}

}  // namespace detail

/// One propagation layer: queries gather from neighbor pages and vice versa.
/// Isolated nodes come out zero.
template <class T>
std::pair<Var, Var> propagate_once(Tape<T>& tp, const PropagationPlan& plan,
                                   Var queries, Var pages) {
  Var q_next = detail::spread(tp, plan, pages, /*to_queries=*/true);
  Var p_next = detail::spread(tp, plan, queries, /*to_queries=*/false);
  return {q_next, p_next};
}

/// Per-layer node embeddings, layer 0 = adapted inputs.
struct NodeStates {
  std::vector<Var> query_layers;
  std::vector<Var> page_layers;
  std::size_t depth() const { return query_layers.size() - 1; }
};

template <class T>
NodeStates run_propagation(Tape<T>& tp, const PropagationPlan& plan,
                           Var queries0, Var pages0, std::size_t layers) {
  if (layers < 1) throw Error("run_propagation: at least one layer required");
  NodeStates s;
  s.query_layers.push_back(queries0);
  s.page_layers.push_back(pages0);
  for (std::size_t n = 0; n < layers; ++n) {
    auto [q, p] = propagate_once(tp, plan, s.query_layers.back(),
                                 s.page_layers.back());
    s.query_layers.push_back(q);
    s.page_layers.push_back(p);
  }
  return s;
}

/// Weighted layer combination with alpha = softmax(alpha_logits), so the
/// weights stay on the simplex while remaining trainable.
template <class T>
std::pair<Var, Var> combine_layers(Tape<T>& tp, const NodeStates& states,
                                   Parameter<T>& alpha_logits) {
  const std::size_t n = states.query_layers.size();
  if (alpha_logits.value.numel() != n)
    throw Error("combine_layers: alpha_logits length " +
                std::to_string(alpha_logits.value.numel()) + ", expected " +
                std::to_string(n));
  Var alpha = tp.softmax(tp.param(alpha_logits), 0);
  Var q{}, p{};
  for (std::size_t i = 0; i < n; ++i) {
    Var ai = tp.slice(alpha, 0, i, 1);
    Var qi = tp.mul(states.query_layers[i], ai);
    Var pi = tp.mul(states.page_layers[i], ai);
    q = i == 0 ? qi : tp.add(q, qi);
    p = i == 0 ? pi : tp.add(p, pi);
  }
  return {q, p};
}

/// x^G = [query_emb || page_emb] for each requested (query, page) index pair.
template <class T>
Var pair_representation(Tape<T>& tp, Var query_emb, Var page_emb,
                        const std::vector<std::pair<std::size_t, std::size_t>>&
                            pairs) {
  if (tp.val(query_emb).cols() != tp.val(page_emb).cols())
    throw Error("pair_representation: embedding width mismatch");
  std::vector<std::size_t> qi, pi;
  qi.reserve(pairs.size());
  pi.reserve(pairs.size());
  for (auto& [q, p] : pairs) {
    qi.push_back(q);
    pi.push_back(p);
  }
  Var qr = tp.gather_rows(query_emb, std::move(qi));
  Var pr = tp.gather_rows(page_emb, std::move(pi));
  return tp.concat(1, {qr, pr});
}

/// Raw node features in the LETOR setting: a query is the mean of its
/// candidates' pair vectors, a page the mean of its pair vectors across
/// queries.
template <class T>
std::pair<Tensor<T>, Tensor<T>> node_raw_features(const Dataset& ds,
                                                  const BipartiteGraph& g) {
  const std::size_t m = ds.feature_dim;
  Tensor<T> qf({g.query_nodes.size(), m});
  Tensor<T> pf({g.page_nodes.size(), m});
  std::vector<std::size_t> page_counts(g.page_nodes.size(), 0);
  for (const auto& grp : ds.groups) {
    auto qit = g.query_index.find(grp.query_id);
    if (qit == g.query_index.end() || grp.docs.empty()) continue;
    const std::size_t q = qit->second;
    for (const auto& d : grp.docs) {
      const std::size_t p = g.page_index.at(d.doc_id);
      for (std::size_t j = 0; j < m; ++j) {
        qf.data[q * m + j] += static_cast<T>(d.features[j]);
        pf.data[p * m + j] += static_cast<T>(d.features[j]);
      }
      page_counts[p]++;
    }
    for (std::size_t j = 0; j < m; ++j)
      qf.data[q * m + j] /= static_cast<T>(grp.docs.size());
  }
  for (std::size_t p = 0; p < page_counts.size(); ++p)
    if (page_counts[p] > 0)
      for (std::size_t j = 0; j < m; ++j)
        pf.data[p * m + j] /= static_cast<T>(page_counts[p]);
  return {std::move(qf), std::move(pf)};
}

}  // namespace mpgraf::gnn
