#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "mpgraf/rippling.hpp"
#include "mpgraf/rng.hpp"

using namespace mpgraf;

namespace {

Doc make_doc(std::string id, std::vector<double> f,
             std::optional<int> label = std::nullopt) {
  Doc d;
  d.doc_id = std::move(id);
  d.features = std::move(f);
  d.label = label;
  return d;
}

LabelMask mask_of(std::initializer_list<const char*> qids, double ratio) {
  LabelMask m;
  m.ratio = ratio;
  for (const char* q : qids) m.labeled_query_ids.insert(q);
  return m;
}

// brute-force kNN oracle: full sort over the labeled pool
double knn_oracle(const std::vector<double>& x,
                  const std::vector<std::pair<std::vector<double>, double>>& pool,
                  std::size_t k) {
  std::vector<std::pair<double, double>> d;  // (dist, grade)
  for (const auto& [f, y] : pool) {
    double s = 0;
    for (std::size_t i = 0; i < f.size(); ++i)
      s += (f[i] - x[i]) * (f[i] - x[i]);
    d.emplace_back(std::sqrt(s), y);
  }
  std::stable_sort(d.begin(), d.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  k = std::min(k, d.size());
  double mx = -d[0].first;
  for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, -d[i].first);
  double wsum = 0, acc = 0;
  for (std::size_t i = 0; i < k; ++i) {
    double w = std::exp(-d[i].first - mx);
    wsum += w;
    acc += w * d[i].second;
  }
  return acc / wsum;
}

}  // namespace

TEST_CASE("pseudo-label of uniform neighborhood equals the shared grade") {
  Dataset ds;
  ds.feature_dim = 1;
  ds.groups.push_back({"q1",
                       {make_doc("a", {0.0}, 3), make_doc("b", {0.1}, 3),
                        make_doc("c", {0.2}, 3)}});
  ds.groups.push_back({"q2", {make_doc("x", {0.05})}});
  RippleConfig cfg;
  cfg.knn_k = 3;
  PseudoLabeled pl =
      propagate_pseudo_labels(ds, mask_of({"q1"}, 0.5), cfg);
  REQUIRE(pl.score_of("q2", "x") == Catch::Approx(3.0).margin(1e-12));
  REQUIRE(pl.origin_of("q2", "x") == EdgeOrigin::propagated);
}

TEST_CASE("equidistant labels 0 and 4 average to 2") {
  Dataset ds;
  ds.feature_dim = 1;
  ds.groups.push_back(
      {"q1", {make_doc("a", {0.0}, 0), make_doc("b", {2.0}, 4)}});
  ds.groups.push_back({"q2", {make_doc("x", {1.0})}});
  RippleConfig cfg;
  cfg.knn_k = 2;
  PseudoLabeled pl = propagate_pseudo_labels(ds, mask_of({"q1"}, 0.5), cfg);
  REQUIRE(pl.score_of("q2", "x") == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("propagation matches a brute-force kNN oracle") {
  Rng rng = make_rng(31, "knnfix");
  Dataset ds;
  ds.feature_dim = 4;
  std::vector<std::pair<std::vector<double>, double>> pool;
  // 2 labeled queries x 5 docs, 2 unlabeled x 5 docs = 20 pairs
  for (int q = 0; q < 4; ++q) {
    QueryGroup g;
    g.query_id = "q" + std::to_string(q);
    for (int d = 0; d < 5; ++d) {
      std::vector<double> f(4);
      for (auto& v : f) v = uniform_real(rng);
      if (q < 2) {
        int grade = static_cast<int>(uniform_index(rng, 5));
        g.docs.push_back(make_doc("d" + std::to_string(q * 5 + d), f, grade));
        pool.emplace_back(f, grade);
      } else {
        g.docs.push_back(make_doc("d" + std::to_string(q * 5 + d), f));
      }
    }
    ds.groups.push_back(std::move(g));
  }
  RippleConfig cfg;
  cfg.knn_k = 3;
  PseudoLabeled pl =
      propagate_pseudo_labels(ds, mask_of({"q0", "q1"}, 0.5), cfg);
  for (int q = 2; q < 4; ++q)
    for (const auto& d : ds.groups[q].docs) {
      double expect = knn_oracle(d.features, pool, 3);
      REQUIRE(pl.score_of(ds.groups[q].query_id, d.doc_id) ==
              Catch::Approx(expect).margin(1e-9));
    }
}

TEST_CASE("pseudo-scores stay within the convex hull of labels") {
  Rng rng = make_rng(77, "hull");
  Dataset ds;
  ds.feature_dim = 3;
  double lo = 5, hi = -1;
  for (int q = 0; q < 6; ++q) {
    QueryGroup g;
    g.query_id = "q" + std::to_string(q);
    for (int d = 0; d < 4; ++d) {
      std::vector<double> f(3);
      for (auto& v : f) v = uniform_real(rng);
      if (q < 3) {
        int grade = static_cast<int>(uniform_index(rng, 3) + 1);
        lo = std::min(lo, static_cast<double>(grade));
        hi = std::max(hi, static_cast<double>(grade));
        g.docs.push_back(make_doc("d" + std::to_string(q * 4 + d), f, grade));
      } else {
        g.docs.push_back(make_doc("d" + std::to_string(q * 4 + d), f));
      }
    }
    ds.groups.push_back(std::move(g));
  }
  RippleConfig cfg;
  PseudoLabeled pl =
      propagate_pseudo_labels(ds, mask_of({"q0", "q1", "q2"}, 0.5), cfg);
  for (const auto& [key, s] : pl.scores) {
    REQUIRE(s >= lo - 1e-12);
    REQUIRE(s <= hi + 1e-12);
  }
}

TEST_CASE("no labeled pairs is an error; oversized k clamps") {
  Dataset ds;
  ds.feature_dim = 1;
  ds.groups.push_back({"q1", {make_doc("a", {0.0})}});
  ds.groups.push_back({"q2", {make_doc("b", {1.0}, 2)}});
  RippleConfig cfg;
  REQUIRE_THROWS_AS(propagate_pseudo_labels(ds, mask_of({"q1"}, 0.5), cfg),
                    Error);
  cfg.knn_k = 50;  // larger than the single labeled pair
  PseudoLabeled pl = propagate_pseudo_labels(ds, mask_of({"q2"}, 0.5), cfg);
  REQUIRE(pl.score_of("q1", "a") == 2.0);
}

namespace {

Dataset ripple_fixture() {
  // one query, 10 docs, labels 0..4 twice -> fully labeled
  Dataset ds;
  ds.feature_dim = 1;
  QueryGroup g;
  g.query_id = "q1";
  for (int i = 0; i < 10; ++i)
    g.docs.push_back(
        make_doc("d" + std::to_string(i), {static_cast<double>(i)}, i % 5));
  ds.groups.push_back(g);
  // a second query so the shrinking ripple has somewhere to point
  QueryGroup g2;
  g2.query_id = "q2";
  g2.docs.push_back(make_doc("z0", {0.5}, 1));
  g2.docs.push_back(make_doc("z1", {1.5}, 0));
  ds.groups.push_back(g2);
  return ds;
}

}  // namespace

TEST_CASE("expanding ripple links top and bottom fractions") {
  Dataset ds = ripple_fixture();
  RippleConfig cfg;
  cfg.top_fraction = 0.2;
  cfg.bottom_fraction = 0.2;
  PseudoLabeled pl = propagate_pseudo_labels(ds, mask_of({"q1", "q2"}, 1.0), cfg);
  BipartiteGraph g = query_expanding_ripple(pl, cfg);
  std::size_t q1 = g.query_index.at("q1");
  // oracle by hand: ranked by (score desc, doc_id asc) =
  // d4(4) d9(4) d3(3) d8(3) d2 d7 d1 d6 d0 d5; top 2 = {d4,d9}, bottom 2 = {d0,d5}
  REQUIRE(g.query_degree(q1) == 4);
  std::set<std::string> linked;
  for (std::size_t e : g.query_adj[q1])
    linked.insert(g.page_nodes[g.edges[e].page]);
  REQUIRE(linked == std::set<std::string>{"d4", "d9", "d0", "d5"});
}

TEST_CASE("single-candidate query yields one deduplicated edge") {
  Dataset ds;
  ds.feature_dim = 1;
  ds.groups.push_back({"q1", {make_doc("only", {1.0}, 3)}});
  RippleConfig cfg;
  PseudoLabeled pl = propagate_pseudo_labels(ds, mask_of({"q1"}, 1.0), cfg);
  BipartiteGraph g = query_expanding_ripple(pl, cfg);
  REQUIRE(g.edges.size() == 1);
}

TEST_CASE("equal scores break ties toward the lower doc id") {
  Dataset ds;
  ds.feature_dim = 1;
  ds.groups.push_back({"q1",
                       {make_doc("db", {0.0}, 2), make_doc("da", {1.0}, 2),
                        make_doc("dc", {2.0}, 0), make_doc("dd", {3.0}, 0)}});
  RippleConfig cfg;
  cfg.top_fraction = 0.25;  // exactly one top slot
  cfg.bottom_fraction = 0.25;
  PseudoLabeled pl = propagate_pseudo_labels(ds, mask_of({"q1"}, 1.0), cfg);
  BipartiteGraph g = query_expanding_ripple(pl, cfg);
  std::set<std::string> linked;
  for (const auto& e : g.edges) linked.insert(g.page_nodes[e.page]);
  // top slot: da before db; bottom slot: tail of ranking = dd
  REQUIRE(linked.count("da") == 1);
  REQUIRE(linked.count("db") == 0);
}

TEST_CASE("shrinking ripple adds the only possible negative") {
  Dataset ds;
  ds.feature_dim = 1;
  ds.groups.push_back({"q1", {make_doc("p", {0.0}, 3)}});
  ds.groups.push_back({"q2", {make_doc("r", {1.0}, 1)}});
  RippleConfig cfg;
  cfg.negatives_per_page = 1;
  PseudoLabeled pl = propagate_pseudo_labels(ds, mask_of({"q1", "q2"}, 1.0), cfg);
  BipartiteGraph g0 = query_expanding_ripple(pl, cfg);
  BipartiteGraph g = webpage_shrinking_ripple(pl, g0, cfg);
  // p scored 3 >= floor 2: gains negative edge from q2
  bool found = false;
  for (const auto& e : g.edges)
    if (e.origin == EdgeOrigin::negative) {
      REQUIRE(g.query_nodes[e.query] == "q2");
      REQUIRE(g.page_nodes[e.page] == "p");
      REQUIRE(e.score == 0.0);
      found = true;
    }
  REQUIRE(found);
}

TEST_CASE("pages below the relevance floor receive no negatives") {
  Dataset ds;
  ds.feature_dim = 1;
  ds.groups.push_back({"q1", {make_doc("p", {0.0}, 1)}});
  ds.groups.push_back({"q2", {make_doc("r", {1.0}, 1)}});
  RippleConfig cfg;
  PseudoLabeled pl = propagate_pseudo_labels(ds, mask_of({"q1", "q2"}, 1.0), cfg);
  BipartiteGraph g = webpage_shrinking_ripple(pl, query_expanding_ripple(pl, cfg), cfg);
  for (const auto& e : g.edges) REQUIRE(e.origin != EdgeOrigin::negative);
}

TEST_CASE("negative sampling is seeded and uniform over non-neighbors") {
  // 50 queries; q0 holds the one hot page, q1..q49 are non-neighbors
  Dataset ds;
  ds.feature_dim = 1;
  ds.groups.push_back({"q00", {make_doc("hot", {0.0}, 4)}});
  for (int q = 1; q < 50; ++q) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "q%02d", q);
    ds.groups.push_back({buf, {make_doc("f" + std::to_string(q), {1.0}, 1)}});
  }
  RippleConfig cfg;
  cfg.negatives_per_page = 1;
  LabelMask all;
  all.ratio = 1.0;
  for (const auto& g : ds.groups) all.labeled_query_ids.insert(g.query_id);
  PseudoLabeled pl = propagate_pseudo_labels(ds, all, cfg);
  BipartiteGraph base = query_expanding_ripple(pl, cfg);

  cfg.seed = 123;
  BipartiteGraph a = webpage_shrinking_ripple(pl, base, cfg);
  BipartiteGraph b = webpage_shrinking_ripple(pl, base, cfg);
  REQUIRE(a.edges.size() == b.edges.size());
  for (std::size_t i = 0; i < a.edges.size(); ++i) {
    REQUIRE(a.edges[i].query == b.edges[i].query);
    REQUIRE(a.edges[i].page == b.edges[i].page);
  }

  // Monte-Carlo: across reseeded runs the negative for "hot" hits each of the
  // 49 non-neighbors uniformly
  std::map<std::string, int> counts;
  const int runs = 1000;
  std::size_t hot = base.page_index.at("hot");
  for (int s = 0; s < runs; ++s) {
    cfg.seed = static_cast<std::uint64_t>(s);
    BipartiteGraph g = webpage_shrinking_ripple(pl, base, cfg);
    for (const auto& e : g.edges)
      if (e.origin == EdgeOrigin::negative && e.page == hot)
        counts[g.query_nodes[e.query]]++;
  }
  const double p = 1.0 / 49.0;
  const double sigma = std::sqrt(runs * p * (1 - p));
  int total = 0;
  for (auto& [q, c] : counts) {
    REQUIRE(std::abs(c - runs * p) <= 3.0 * sigma);
    total += c;
  }
  REQUIRE(total == runs);
}

TEST_CASE("negatives only use pairs absent from candidates and graph") {
  Rng rng = make_rng(9, "negcheck");
  Dataset ds;
  ds.feature_dim = 2;
  // shared doc pool so some pages serve several queries
  for (int q = 0; q < 8; ++q) {
    QueryGroup g;
    g.query_id = "q" + std::to_string(q);
    for (int d = 0; d < 4; ++d) {
      int shared = static_cast<int>(uniform_index(rng, 10));
      std::string did = "d" + std::to_string(shared);
      bool dup = false;
      for (auto& existing : g.docs) dup = dup || existing.doc_id == did;
      if (dup) continue;
      g.docs.push_back(make_doc(did, {uniform_real(rng), uniform_real(rng)},
                                static_cast<int>(uniform_index(rng, 5))));
    }
    ds.groups.push_back(g);
  }
  LabelMask all;
  all.ratio = 1.0;
  for (const auto& g : ds.groups) all.labeled_query_ids.insert(g.query_id);
  RippleConfig cfg;
  cfg.negatives_per_page = 2;
  auto [pl, g] = build_training_graphs(ds, all, cfg);

  std::set<std::pair<std::string, std::string>> candidate_pairs;
  for (const auto& grp : ds.groups)
    for (const auto& d : grp.docs)
      candidate_pairs.insert({grp.query_id, d.doc_id});
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& e : g.edges) {
    REQUIRE(seen.insert({e.query, e.page}).second);  // no duplicate edges
    if (e.origin == EdgeOrigin::negative)
      REQUIRE(candidate_pairs.count(
                  {g.query_nodes[e.query], g.page_nodes[e.page]}) == 0);
    else
      REQUIRE(candidate_pairs.count(
                  {g.query_nodes[e.query], g.page_nodes[e.page]}) == 1);
  }
}

TEST_CASE("fully labeled data keeps human grades on expanding edges") {
  Dataset ds = ripple_fixture();
  RippleConfig cfg;
  cfg.top_fraction = 0.5;
  cfg.bottom_fraction = 0.5;  // covers every pair
  LabelMask all = mask_of({"q1", "q2"}, 1.0);
  auto [pl, g] = build_training_graphs(ds, all, cfg);
  for (const auto& e : g.edges) {
    if (e.origin == EdgeOrigin::negative) continue;
    REQUIRE(e.origin == EdgeOrigin::human);
    // edge score equals the human grade
    const auto& qid = g.query_nodes[e.query];
    const auto& did = g.page_nodes[e.page];
    for (const auto& grp : ds.groups)
      if (grp.query_id == qid)
        for (const auto& d : grp.docs)
          if (d.doc_id == did) REQUIRE(e.score == *d.label);
  }
}

TEST_CASE("composition equals running the three stages by hand") {
  Dataset ds = ripple_fixture();
  RippleConfig cfg;
  cfg.seed = 5;
  LabelMask m = mask_of({"q1"}, 0.5);
  auto [pl, g] = build_training_graphs(ds, m, cfg);
  PseudoLabeled pl2 = propagate_pseudo_labels(ds, m, cfg);
  BipartiteGraph g2 =
      webpage_shrinking_ripple(pl2, query_expanding_ripple(pl2, cfg), cfg);
  REQUIRE(pl.scores == pl2.scores);
  REQUIRE(g.edges.size() == g2.edges.size());
  std::ostringstream a, b;
  write_edge_list(g, a);
  write_edge_list(g2, b);
  REQUIRE(a.str() == b.str());
}

TEST_CASE("edge list export is sorted and deterministic") {
  Dataset ds = ripple_fixture();
  RippleConfig cfg;
  cfg.seed = 11;
  LabelMask m = mask_of({"q1", "q2"}, 1.0);
  auto [pl, g] = build_training_graphs(ds, m, cfg);
  std::ostringstream a;
  write_edge_list(g, a);
  std::string prev;
  std::istringstream lines(a.str());
  std::string line;
  while (std::getline(lines, line)) {
    REQUIRE(line > prev);
    prev = line;
  }
}
