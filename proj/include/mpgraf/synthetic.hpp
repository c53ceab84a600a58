#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "mpgraf/letor.hpp"
#include "mpgraf/rng.hpp"

namespace mpgraf {

/// Synthetic LTR benchmark: relevance comes from a planted bilinear
/// query-doc model plus a cluster-match term that is visible in the graph
/// structure (shared candidate docs) but only weakly present in the
/// features.
struct SynthConfig {
  std::size_t queries = 200;
  std::size_t docs_per_query = 20;
  std::size_t feature_dim = 16;
  std::size_t latent_dim = 4;
  std::size_t clusters = 8;
  std::size_t doc_pool = 400;
  double bilinear_weight = 0.4;    // planted u^T W v term
  double quality_weight = 1.0;     // doc-intrinsic w0^T v term
  double cluster_bonus = 1.2;      // graph-correlated relevance term
  double feature_noise = 1.2;      // noise added to informative features
  double relevance_noise = 0.15;
  double same_cluster_bias = 0.6;  // candidate sampling bias
  // how much of the cluster identity leaks into the latents (and hence the
  // features); 0 keeps the cluster term visible only through the graph
  double latent_coupling = 0.0;
  std::uint64_t seed = 1;
};

inline Dataset synth_dataset(const SynthConfig& cfg) {
  if (cfg.feature_dim < cfg.latent_dim * 3 + 4)
    throw Error("synth: feature_dim too small for the layout");
  Rng rng = make_rng(cfg.seed, "synth");
  const std::size_t h = cfg.latent_dim;

  std::vector<std::vector<double>> centers(cfg.clusters,
                                           std::vector<double>(h));
  for (auto& c : centers)
    for (auto& v : c) v = normal(rng);

  std::vector<std::vector<double>> bilinear(h, std::vector<double>(h));
  for (auto& row : bilinear)
    for (auto& v : row) v = normal(rng) / std::sqrt(static_cast<double>(h));
  std::vector<double> quality_dir(h);
  for (auto& v : quality_dir) v = normal(rng) / std::sqrt(static_cast<double>(h));

  std::vector<std::vector<double>> doc_latent(cfg.doc_pool,
                                              std::vector<double>(h));
  std::vector<std::size_t> doc_cluster(cfg.doc_pool);
  std::vector<std::vector<std::size_t>> cluster_docs(cfg.clusters);
  for (std::size_t d = 0; d < cfg.doc_pool; ++d) {
    doc_cluster[d] = d % cfg.clusters;
    cluster_docs[doc_cluster[d]].push_back(d);
    for (std::size_t i = 0; i < h; ++i)
      doc_latent[d][i] = cfg.latent_coupling * centers[doc_cluster[d]][i] +
                         normal(rng);
  }

  Dataset ds;
  ds.feature_dim = cfg.feature_dim;
  std::vector<std::vector<double>> relevances;  // per query, per candidate
  for (std::size_t q = 0; q < cfg.queries; ++q) {
    const std::size_t cq = q % cfg.clusters;
    std::vector<double> u(h);
    for (std::size_t i = 0; i < h; ++i)
      u[i] = cfg.latent_coupling * centers[cq][i] + normal(rng);

    // candidate sampling, biased toward the query's cluster
    std::vector<std::size_t> cands;
    std::set<std::size_t> seen;
    while (cands.size() < cfg.docs_per_query) {
      std::size_t d;
      if (uniform_real(rng) < cfg.same_cluster_bias) {
        const auto& pool = cluster_docs[cq];
        d = pool[uniform_index(rng, pool.size())];
      } else {
        d = uniform_index(rng, cfg.doc_pool);
      }
      if (seen.insert(d).second) cands.push_back(d);
    }

    QueryGroup grp;
    grp.query_id = "q" + std::to_string(q);
    std::vector<double> rel;
    for (std::size_t ci = 0; ci < cands.size(); ++ci) {
      const auto& v = doc_latent[cands[ci]];
      double uv = 0;
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < h; ++j) uv += u[i] * bilinear[i][j] * v[j];
      double quality = 0;
      for (std::size_t i = 0; i < h; ++i) quality += quality_dir[i] * v[i];
      rel.push_back(cfg.bilinear_weight * uv + cfg.quality_weight * quality +
                    (doc_cluster[cands[ci]] == cq ? cfg.cluster_bonus : 0.0) +
                    cfg.relevance_noise * normal(rng));

      Doc doc;
      doc.doc_id = "d" + std::to_string(cands[ci]);
      auto& f = doc.features;
      f.assign(cfg.feature_dim, 0.0);
      std::size_t k = 0;
      for (std::size_t i = 0; i < h; ++i)  // interactions
        f[k++] = u[i] * v[i] + cfg.feature_noise * normal(rng);
      f[k++] = uv + 2.0 * cfg.feature_noise * normal(rng);  // noisy score
      double dist = 0;
      for (std::size_t i = 0; i < h; ++i) dist += (u[i] - v[i]) * (u[i] - v[i]);
      f[k++] = std::sqrt(dist) + cfg.feature_noise * normal(rng);
      for (std::size_t i = 0; i < h; ++i)  // doc-side
        f[k++] = v[i] + cfg.feature_noise * normal(rng);
      for (std::size_t i = 0; i < h; ++i)  // query-side (constant per query)
        f[k++] = u[i] + cfg.feature_noise * normal(rng);
      while (k < cfg.feature_dim) f[k++] = normal(rng);  // distractors
      grp.docs.push_back(std::move(doc));
    }
    relevances.push_back(std::move(rel));
    ds.groups.push_back(std::move(grp));
  }

  // grade against global relevance quantiles, so per-query grade profiles
  // vary like real collections (some queries have no relevant docs at all)
  std::vector<double> all;
  for (const auto& rel : relevances) all.insert(all.end(), rel.begin(), rel.end());
  std::sort(all.begin(), all.end());
  auto quantile = [&](double p) {
    return all[std::min(all.size() - 1,
                        static_cast<std::size_t>(p * all.size()))];
  };
  const double t4 = quantile(0.95), t3 = quantile(0.85), t2 = quantile(0.65),
               t1 = quantile(0.35);
  for (std::size_t q = 0; q < ds.groups.size(); ++q)
    for (std::size_t ci = 0; ci < ds.groups[q].docs.size(); ++ci) {
      const double r = relevances[q][ci];
      int grade = 0;
      if (r >= t4) grade = 4;
      else if (r >= t3) grade = 3;
      else if (r >= t2) grade = 2;
      else if (r >= t1) grade = 1;
      ds.groups[q].docs[ci].label = grade;
    }
  return ds;
}

/// Low-noise variant where the features essentially reveal the relevance;
/// used for pipeline sanity runs.
inline SynthConfig easy_synth_config(std::size_t queries = 50,
                                     std::uint64_t seed = 1) {
  SynthConfig cfg;
  cfg.queries = queries;
  cfg.docs_per_query = 10;
  cfg.doc_pool = std::max<std::size_t>(queries, 40);
  cfg.feature_noise = 0.05;
  cfg.relevance_noise = 0.02;
  cfg.cluster_bonus = 0.3;
  cfg.seed = seed;
  return cfg;
}

}  // namespace mpgraf
