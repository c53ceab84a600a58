#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mpgraf/letor.hpp"
#include "mpgraf/rng.hpp"

namespace mpgraf {

struct RippleConfig {
  std::size_t knn_k = 3;
  double top_fraction = 0.2;
  double bottom_fraction = 0.2;
  int relevance_floor = 2;  // "higher than fair" on the 5-grade scale
  std::size_t negatives_per_page = 1;
  int negative_score = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(top_fraction > 0.0) || top_fraction > 0.5 ||
        !(bottom_fraction > 0.0) || bottom_fraction > 0.5)
      throw Error("ripple config: fractions must lie in (0, 0.5]");
    if (knn_k < 1) throw Error("ripple config: knn_k must be >= 1");
    if (negative_score != 0 && negative_score != 1)
      throw Error("ripple config: negative_score must be 0 or 1");
  }
};

enum class EdgeOrigin { human, propagated, negative };

inline const char* origin_name(EdgeOrigin o) {
  switch (o) {
    case EdgeOrigin::human: return "human";
    case EdgeOrigin::propagated: return "propagated";
    default: return "negative";
  }
}

struct PairKey {
  std::string query_id;
  std::string doc_id;
  auto operator<=>(const PairKey&) const = default;
};

/// Every pair carries exactly one score: the human grade where annotated,
/// a propagated pseudo-score otherwise.
struct PseudoLabeled {
  Dataset base;
  std::map<PairKey, double> scores;
  std::map<PairKey, EdgeOrigin> origins;  // human or propagated

  double score_of(const std::string& qid, const std::string& did) const {
    auto it = scores.find(PairKey{qid, did});
    if (it == scores.end())
      throw Error("pseudo labels: unknown pair (" + qid + ", " + did + ")");
    return it->second;
  }
  EdgeOrigin origin_of(const std::string& qid, const std::string& did) const {
    return origins.at(PairKey{qid, did});
  }
};

struct GraphEdge {
  std::size_t query;  // index into query_nodes
  std::size_t page;   // index into page_nodes
  double score;
  EdgeOrigin origin;
};

struct BipartiteGraph {
  std::vector<std::string> query_nodes;
  std::vector<std::string> page_nodes;
  std::vector<GraphEdge> edges;
  std::vector<std::vector<std::size_t>> query_adj;  // edge ids per query
  std::vector<std::vector<std::size_t>> page_adj;   // edge ids per page

  std::map<std::string, std::size_t> query_index;
  std::map<std::string, std::size_t> page_index;

  std::size_t query_degree(std::size_t q) const { return query_adj[q].size(); }
  std::size_t page_degree(std::size_t p) const { return page_adj[p].size(); }

  bool has_edge(std::size_t q, std::size_t p) const {
    for (std::size_t e : query_adj[q])
      if (edges[e].page == p) return true;
    return false;
  }

  std::size_t add_query(const std::string& qid) {
    auto [it, inserted] = query_index.try_emplace(qid, query_nodes.size());
    if (inserted) {
      query_nodes.push_back(qid);
      query_adj.emplace_back();
    }
    return it->second;
  }
  std::size_t add_page(const std::string& did) {
    auto [it, inserted] = page_index.try_emplace(did, page_nodes.size());
    if (inserted) {
      page_nodes.push_back(did);
      page_adj.emplace_back();
    }
    return it->second;
  }
  void add_edge(std::size_t q, std::size_t p, double score, EdgeOrigin o) {
    if (has_edge(q, p)) return;
    edges.push_back(GraphEdge{q, p, score, o});
    query_adj[q].push_back(edges.size() - 1);
    page_adj[p].push_back(edges.size() - 1);
  }
};

/// Softmax-weighted kNN label propagation over Euclidean distance in feature
/// space. Annotated pairs keep their grades exactly.
inline PseudoLabeled propagate_pseudo_labels(const Dataset& ds,
                                             const LabelMask& mask,
                                             const RippleConfig& cfg) {
  cfg.validate();
  PseudoLabeled out;
  out.base = ds;

  struct LabeledRef {
    const std::vector<double>* features;
    double grade;
  };
  std::vector<LabeledRef> pool;
  for (const auto& g : ds.groups) {
    if (!mask.is_labeled(g.query_id)) continue;
    for (const auto& d : g.docs)
      if (d.label) pool.push_back({&d.features, static_cast<double>(*d.label)});
  }
  if (pool.empty())
    throw Error("propagate_pseudo_labels: no labeled pairs available");
  std::size_t k = cfg.knn_k;
  if (k > pool.size()) {
    std::cerr << "warning: knn_k " << k << " clamped to labeled pool size "
              << pool.size() << "\n";
    k = pool.size();
  }

  std::vector<std::pair<double, std::size_t>> dist;
  for (const auto& g : ds.groups) {
    const bool labeled_query = mask.is_labeled(g.query_id);
    for (const auto& d : g.docs) {
      PairKey key{g.query_id, d.doc_id};
      if (labeled_query && d.label) {
        out.scores[key] = static_cast<double>(*d.label);
        out.origins[key] = EdgeOrigin::human;
        continue;
      }
      dist.clear();
      dist.reserve(pool.size());
      for (std::size_t i = 0; i < pool.size(); ++i) {
        double s = 0;
        const auto& f = *pool[i].features;
        for (std::size_t j = 0; j < f.size(); ++j) {
          double diff = f[j] - d.features[j];
          s += diff * diff;
        }
        dist.emplace_back(std::sqrt(s), i);
      }
      std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
      // softmax over negated distances of the k nearest
      double mx = -dist[0].first;
      for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, -dist[i].first);
      double wsum = 0, acc = 0;
      for (std::size_t i = 0; i < k; ++i) {
        double w = std::exp(-dist[i].first - mx);
        wsum += w;
        acc += w * pool[dist[i].second].grade;
      }
      out.scores[key] = acc / wsum;
      out.origins[key] = EdgeOrigin::propagated;
    }
  }
  return out;
}

/// Connects every query to its highest- and lowest-scored candidate pages.
/// Ranking is by (score desc, doc_id asc); the top set is the head of that
/// ranking and the bottom set its tail.
inline BipartiteGraph query_expanding_ripple(const PseudoLabeled& pl,
                                             const RippleConfig& cfg) {
  cfg.validate();
  BipartiteGraph g;
  for (const auto& grp : pl.base.groups) g.add_query(grp.query_id);
  for (const auto& grp : pl.base.groups)
    for (const auto& d : grp.docs) g.add_page(d.doc_id);

  for (const auto& grp : pl.base.groups) {
    const std::size_t n = grp.docs.size();
    if (n == 0) continue;
    std::vector<std::pair<double, std::string>> ranked;
    ranked.reserve(n);
    for (const auto& d : grp.docs)
      ranked.emplace_back(pl.score_of(grp.query_id, d.doc_id), d.doc_id);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    const std::size_t top_n =
        static_cast<std::size_t>(std::ceil(cfg.top_fraction * n));
    const std::size_t bot_n =
        static_cast<std::size_t>(std::ceil(cfg.bottom_fraction * n));
    std::set<std::string> chosen;
    for (std::size_t i = 0; i < top_n && i < n; ++i)
      chosen.insert(ranked[i].second);
    for (std::size_t i = 0; i < bot_n && i < n; ++i)
      chosen.insert(ranked[n - 1 - i].second);
    const std::size_t q = g.query_index.at(grp.query_id);
    for (const auto& d : grp.docs) {
      if (!chosen.count(d.doc_id)) continue;
      g.add_edge(q, g.page_index.at(d.doc_id),
                 pl.score_of(grp.query_id, d.doc_id),
                 pl.origin_of(grp.query_id, d.doc_id));
    }
  }
  return g;
}

/// Attaches sampled irrelevant queries to every page that is well-ranked
/// somewhere. Sampling streams are derived from (seed, doc_id) so results are
/// independent of traversal order.
inline BipartiteGraph webpage_shrinking_ripple(const PseudoLabeled& pl,
                                               const BipartiteGraph& gin,
                                               const RippleConfig& cfg) {
  cfg.validate();
  if (gin.query_nodes.size() < 2)
    throw Error("webpage_shrinking_ripple: at least 2 queries required");
  BipartiteGraph g = gin;

  // candidate lists per page: queries that retrieved the page at all
  std::map<std::size_t, std::set<std::size_t>> page_candidates;
  for (const auto& grp : pl.base.groups) {
    std::size_t q = g.query_index.at(grp.query_id);
    for (const auto& d : grp.docs)
      page_candidates[g.page_index.at(d.doc_id)].insert(q);
  }

  for (std::size_t p = 0; p < gin.page_nodes.size(); ++p) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t e : gin.page_adj[p])
      best = std::max(best, gin.edges[e].score);
    if (gin.page_adj[p].empty() || best < cfg.relevance_floor) continue;

    std::vector<std::size_t> candidates;
    const auto& seen = page_candidates[p];
    for (std::size_t q = 0; q < g.query_nodes.size(); ++q) {
      if (seen.count(q)) continue;
      if (gin.has_edge(q, p)) continue;
      candidates.push_back(q);
    }
    if (candidates.empty()) {
      std::cerr << "warning: page " << g.page_nodes[p]
                << " connects to all queries; no negatives added\n";
      continue;
    }
    Rng rng = make_rng(cfg.seed, "shrink:" + g.page_nodes[p]);
    const std::size_t take =
        std::min(cfg.negatives_per_page, candidates.size());
    for (std::size_t i = 0; i < take; ++i) {
      std::size_t j =
          i + uniform_index(rng, candidates.size() - i);
      std::swap(candidates[i], candidates[j]);
      g.add_edge(candidates[i], p, static_cast<double>(cfg.negative_score),
                 EdgeOrigin::negative);
    }
  }
  return g;
}

/// Full link-rippling pipeline: propagate pseudo-labels, expand from queries,
/// shrink from pages.
inline std::pair<PseudoLabeled, BipartiteGraph> build_training_graphs(
    const Dataset& ds, const LabelMask& mask, const RippleConfig& cfg) {
  PseudoLabeled pl = propagate_pseudo_labels(ds, mask, cfg);
  BipartiteGraph g = query_expanding_ripple(pl, cfg);
  g = webpage_shrinking_ripple(pl, g, cfg);
  return {std::move(pl), std::move(g)};
}

/// Text export, one edge per line `<qid>\t<did>\t<score>\t<origin>`, sorted
/// by (query_id, doc_id).
inline void write_edge_list(const BipartiteGraph& g, std::ostream& out) {
  std::vector<std::size_t> order(g.edges.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ea = g.edges[a];
    const auto& eb = g.edges[b];
    const auto& qa = g.query_nodes[ea.query];
    const auto& qb = g.query_nodes[eb.query];
    if (qa != qb) return qa < qb;
    return g.page_nodes[ea.page] < g.page_nodes[eb.page];
  });
  for (std::size_t i : order) {
    const auto& e = g.edges[i];
    out << g.query_nodes[e.query] << '\t' << g.page_nodes[e.page] << '\t'
        << detail::format_double(e.score) << '\t' << origin_name(e.origin)
        << '\n';
  }
}

}  // namespace mpgraf
