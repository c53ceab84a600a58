#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mpgraf/config.hpp"
#include "mpgraf/graphformer.hpp"
#include "mpgraf/trainer.hpp"

namespace mpgraf {

// ---- side-by-side comparison ----

struct QueryOutcome {
  std::string query_id;
  std::size_t candidates = 0;
  double ndcg_a = 0;
  double ndcg_b = 0;
  char winner = 'T';  // 'A', 'B' or 'T'
};

/// Aggregate side-by-side judgment. GSB is from A's perspective: a win is
/// Good, a loss Bad, a tie Same.
struct ComparisonReport {
  std::vector<QueryOutcome> queries;
  double delta_ab = 0;
  std::size_t good = 0, same = 0, bad = 0;
  double delta_gsb = 0;
};

inline ComparisonReport aggregate_outcomes(std::vector<QueryOutcome> outcomes) {
  ComparisonReport rep;
  rep.queries = std::move(outcomes);
  if (rep.queries.empty()) return rep;
  for (const auto& q : rep.queries) {
    if (q.winner == 'A') rep.good++;
    else if (q.winner == 'B') rep.bad++;
    else rep.same++;
  }
  const double n = static_cast<double>(rep.queries.size());
  rep.delta_ab = (static_cast<double>(rep.good) -
                  static_cast<double>(rep.bad)) / n;
  rep.delta_gsb = (static_cast<double>(rep.good) -
                   static_cast<double>(rep.bad)) / n;
  return rep;
}

/// Judge a query from per-model NDCG@k values: winner only beyond eps.
inline char judge_winner(double ndcg_a, double ndcg_b, double eps) {
  if (ndcg_a > ndcg_b + eps) return 'A';
  if (ndcg_b > ndcg_a + eps) return 'B';
  return 'T';
}

/// Judge two per-query metric tables (index-aligned); the synthetic stand-in
/// for human side-by-side annotation.
inline ComparisonReport judge_comparison(
    const std::vector<std::string>& query_ids,
    const std::vector<std::size_t>& candidate_counts,
    const std::vector<double>& ndcg_a, const std::vector<double>& ndcg_b,
    double eps = 1e-6) {
  if (query_ids.size() != ndcg_a.size() || ndcg_a.size() != ndcg_b.size())
    throw Error("judge_comparison: length mismatch");
  std::vector<QueryOutcome> outcomes;
  for (std::size_t i = 0; i < query_ids.size(); ++i)
    outcomes.push_back(QueryOutcome{
        query_ids[i],
        candidate_counts.empty() ? 0 : candidate_counts[i], ndcg_a[i],
        ndcg_b[i], judge_winner(ndcg_a[i], ndcg_b[i], eps)});
  return aggregate_outcomes(std::move(outcomes));
}

/// Scores a labeled dataset with two capsules and judges per-query NDCG@k.
/// Both models score the same rippled graph, built from the dataset's own
/// labels (ratio 1).
template <class T = double>
std::vector<QueryOutcome> per_query_outcomes(const Capsule& cap_a,
                                             const Capsule& cap_b,
                                             const Dataset& normalized,
                                             const RippleConfig& rcfg,
                                             std::size_t judge_k = 5,
                                             double eps = 1e-6) {
  for (const auto& g : normalized.groups)
    for (const auto& d : g.docs)
      if (!d.label)
        throw Error("compare: dataset lacks labels (query " + g.query_id +
                    "); the judge needs ground truth");
  LabelMask all;
  all.ratio = 1.0;
  for (const auto& g : normalized.groups)
    all.labeled_query_ids.insert(g.query_id);
  auto [pl, graph] = build_training_graphs(normalized, all, rcfg);

  auto scores_for = [&](const Capsule& cap) {
    if (cap.primary_adapter.empty())
      throw Error("compare: capsule lacks a primary adapter key");
    Graphformer<T> model = Graphformer<T>::from_capsule_config(cap);
    model.apply_capsule(cap);
    DatasetContext<T> ctx =
        DatasetContext<T>::build(cap.primary_adapter, normalized, pl, graph);
    std::vector<std::size_t> ids(ctx.pairs.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    return std::pair(model.score_pairs(ctx, ids), std::move(ctx));
  };
  auto [scores_a, ctx] = scores_for(cap_a);
  auto [scores_b, ctx_b] = scores_for(cap_b);

  std::vector<QueryOutcome> outcomes;
  for (std::size_t gi = 0; gi < normalized.groups.size(); ++gi) {
    const auto& grp = normalized.groups[gi];
    const QuerySlice s = ctx.group_slices[gi];
    std::vector<double> labels(s.length), sa(s.length), sb(s.length);
    for (std::size_t i = 0; i < s.length; ++i) {
      labels[i] = static_cast<double>(*grp.docs[i].label);
      sa[i] = scores_a[s.offset + i];
      sb[i] = scores_b[s.offset + i];
    }
    QueryOutcome q;
    q.query_id = grp.query_id;
    q.candidates = s.length;
    q.ndcg_a = metrics::ndcg_at_k(sa, labels, judge_k);
    q.ndcg_b = metrics::ndcg_at_k(sb, labels, judge_k);
    q.winner = judge_winner(q.ndcg_a, q.ndcg_b, eps);
    outcomes.push_back(std::move(q));
  }
  return outcomes;
}

template <class T = double>
ComparisonReport compare_models(const Capsule& cap_a, const Capsule& cap_b,
                                const Dataset& normalized,
                                const RippleConfig& rcfg,
                                std::size_t judge_k = 5, double eps = 1e-6) {
  return aggregate_outcomes(
      per_query_outcomes<T>(cap_a, cap_b, normalized, rcfg, judge_k, eps));
}

/// Replay-style slicing: partition the outcome list into `days` contiguous
/// slices (dataset order) and aggregate each separately.
inline std::vector<ComparisonReport> slice_outcomes(
    const std::vector<QueryOutcome>& outcomes, std::size_t days) {
  if (days == 0) throw Error("slice_outcomes: days must be >= 1");
  std::vector<ComparisonReport> out;
  const std::size_t n = outcomes.size();
  for (std::size_t d = 0; d < days; ++d) {
    const std::size_t lo = d * n / days;
    const std::size_t hi = (d + 1) * n / days;
    out.push_back(aggregate_outcomes(std::vector<QueryOutcome>(
        outcomes.begin() + lo, outcomes.begin() + hi)));
  }
  return out;
}

/// Long-tail proxy: the quantile of queries with the fewest candidates
/// (LETOR has no search-frequency data).
inline ComparisonReport long_tail_outcomes(
    std::vector<QueryOutcome> outcomes, double quantile) {
  if (!(quantile > 0.0) || quantile > 1.0)
    throw Error("long_tail: quantile must lie in (0,1]");
  std::stable_sort(outcomes.begin(), outcomes.end(),
                   [](const QueryOutcome& a, const QueryOutcome& b) {
                     if (a.candidates != b.candidates)
                       return a.candidates < b.candidates;
                     return a.query_id < b.query_id;
                   });
  const std::size_t keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(quantile * outcomes.size())));
  outcomes.resize(std::min(keep, outcomes.size()));
  return aggregate_outcomes(std::move(outcomes));
}

// ---- experiment pipeline ----

namespace detail {

inline std::string hex_digest(std::uint64_t d) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(d));
  return buf;
}

inline std::string format_ratio(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", r);
  return buf;
}

inline void write_artifact(const std::string& path, std::uint64_t digest,
                           const std::string& body) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  os << "# config_digest=" << hex_digest(digest) << "\n" << body;
}

}  // namespace detail

struct ExperimentResult {
  std::map<std::size_t, double> test_metrics;  // k -> mean NDCG@k
  Capsule capsule;
  RunRecord rec_pretrain, rec_phase_a, rec_phase_b;
  std::string metrics_path, capsule_path, edges_path;
};

template <class T>
struct PreparedTarget {
  DatasetContext<T> ctx;
  std::vector<std::size_t> rest;  // group indices available for training
  std::vector<std::size_t> test;  // held-out group indices
  LabelMask mask;
};

/// Builds the masked target context shared by training and evaluation:
/// whole-dataset graph, labels masked to `ratio` of the non-test queries.
template <class T = double>
PreparedTarget<T> prepare_target(const ExperimentSpec& spec) {
  Dataset target = normalize_features(
      load_dataset(spec.target_path, 0, spec.grade_levels));
  const std::size_t n = target.groups.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  auto [rest, test] = split_group_subset(std::move(idx), spec.test_fraction,
                                         spec.seed, "testsplit");
  // label mask: ratio of the trainable queries
  std::vector<std::size_t> pool = rest;
  Rng rng = make_rng(spec.seed, "mask");
  for (std::size_t i = pool.size(); i > 1; --i)
    std::swap(pool[i - 1], pool[uniform_index(rng, i)]);
  std::size_t count = static_cast<std::size_t>(
      std::llround(spec.ratio * static_cast<double>(pool.size())));
  count = std::max<std::size_t>(1, std::min(count, pool.size()));
  PreparedTarget<T> out;
  out.mask.ratio = spec.ratio;
  for (std::size_t i = 0; i < count; ++i)
    out.mask.labeled_query_ids.insert(target.groups[pool[i]].query_id);

  auto [pl, graph] = build_training_graphs(target, out.mask, spec.ripple);
  out.ctx = DatasetContext<T>::build("target", std::move(target), pl,
                                     std::move(graph));
  out.rest = std::move(rest);
  out.test = std::move(test);
  return out;
}

/// prepare -> graphs -> pretrain -> surgical fine-tune -> evaluate, writing
/// the edge list, run records, metrics row and capsule under spec.out_dir.
/// Any stage failure aborts naming the stage; earlier outputs are retained.
template <class T = double>
ExperimentResult run_experiment(const ExperimentSpec& spec_in) {
  ExperimentSpec spec = spec_in;
  spec.propagate_seed();
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(spec.out_dir);
  const std::uint64_t digest = config_digest(spec);
  const std::string base = std::string(mode_name(spec.model.mode)) + "_" +
                           loss_name(spec.train.loss) + "_r" +
                           detail::format_ratio(spec.ratio);
  ExperimentResult result;

  auto stage = [](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const std::exception& e) {
      throw Error("stage " + std::string(name) + ": " + e.what());
    }
  };

  PreparedTarget<T> prepared = stage("prepare", [&] {
    return prepare_target<T>(spec);
  });
  DatasetContext<T>& ctx = prepared.ctx;
  const std::vector<std::size_t>& rest = prepared.rest;
  const std::vector<std::size_t>& test = prepared.test;

  stage("graphs", [&] {
    std::ostringstream body;
    write_edge_list(ctx.graph, body);
    result.edges_path = spec.out_dir + "/edges_" + base + ".tsv";
    detail::write_artifact(result.edges_path, digest, body.str());
    return 0;
  });

  Capsule pre = stage("pretrain", [&] {
    result.rec_pretrain.phase = "pretrain";
    result.rec_pretrain.seed = spec.seed;
    result.rec_pretrain.config_digest = digest;
    if (spec.pretrain_paths.empty()) {
      Graphformer<T> model(spec.model);
      model.add_adapter("target", ctx.data.feature_dim);
      return model.save_capsule("target");
    }
    std::vector<DatasetContext<T>> sources;
    for (std::size_t i = 0; i < spec.pretrain_paths.size(); ++i) {
      Dataset src = normalize_features(
          load_dataset(spec.pretrain_paths[i], 0, spec.grade_levels));
      LabelMask all;
      all.ratio = 1.0;
      for (const auto& g : src.groups)
        all.labeled_query_ids.insert(g.query_id);
      auto [pl, graph] = build_training_graphs(src, all, spec.ripple);
      sources.push_back(DatasetContext<T>::build(
          "src" + std::to_string(i), std::move(src), pl, std::move(graph)));
    }
    Graphformer<T> model(spec.model);
    std::vector<const DatasetContext<T>*> refs;
    for (auto& s : sources) {
      model.add_adapter(s.key, s.data.feature_dim);
      refs.push_back(&s);
    }
    return pretrain(model, refs, spec.train, &result.rec_pretrain);
  });

  Capsule tuned = stage("finetune", [&] {
    result.rec_phase_a.phase = "phaseA";
    result.rec_phase_a.seed = spec.seed;
    result.rec_phase_a.config_digest = digest;
    result.rec_phase_b.phase = "phaseB";
    result.rec_phase_b.seed = spec.seed;
    result.rec_phase_b.config_digest = digest;
    return surgical_finetune_capsule(pre, ctx, spec.train,
                                     &result.rec_phase_a,
                                     &result.rec_phase_b, {}, &rest);
  });

  stage("evaluate", [&] {
    Graphformer<T> model = Graphformer<T>::from_capsule_config(tuned);
    model.apply_capsule(tuned);
    const auto& groups = test.empty() ? rest : test;
    result.test_metrics = evaluate(model, ctx, groups, {5, 10});
    return 0;
  });

  // artifacts
  {
    std::ostringstream rec;
    result.rec_pretrain.write(rec);
    detail::write_artifact(spec.out_dir + "/run_pretrain_" + base + ".txt",
                           digest, rec.str());
  }
  {
    std::ostringstream rec;
    result.rec_phase_a.write(rec);
    result.rec_phase_b.write(rec);
    detail::write_artifact(spec.out_dir + "/run_finetune_" + base + ".txt",
                           digest, rec.str());
  }
  {
    char row[256];
    std::snprintf(row, sizeof row, "%s\t%s\t%s\t%.9g\t%.9g\n",
                  mode_name(spec.model.mode), loss_name(spec.train.loss),
                  detail::format_ratio(spec.ratio).c_str(),
                  result.test_metrics[5], result.test_metrics[10]);
    result.metrics_path = spec.out_dir + "/metrics_" + base + ".tsv";
    detail::write_artifact(result.metrics_path, digest,
                           "mode\tloss\tratio\tndcg@5\tndcg@10\n" +
                               std::string(row));
  }
  result.capsule_path = spec.out_dir + "/model_" + base + ".capsule";
  write_capsule(tuned, result.capsule_path);
  result.capsule = std::move(tuned);
  return result;
}

// ---- report rendering ----

struct MetricsRow {
  std::string mode, loss, ratio;
  double ndcg5 = 0, ndcg10 = 0;
};

/// Reads every metrics_*.tsv in a run directory; refuses mixed digests.
inline std::vector<MetricsRow> collect_metrics(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("metrics_", 0) == 0 && name.ends_with(".tsv"))
      files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error("report: no metrics files in " + dir);
  std::vector<MetricsRow> rows;
  std::string digest;
  for (const auto& f : files) {
    std::ifstream is(f);
    if (!is) throw Error("report: cannot open " + f);
    std::string line;
    std::getline(is, line);
    if (line.rfind("# config_digest=", 0) != 0)
      throw Error("report: " + f + " lacks a config digest header");
    const std::string d = line.substr(16);
    if (digest.empty()) digest = d;
    else if (digest != d)
      throw Error("report: mixed config digests in " + dir);
    std::getline(is, line);  // column header
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      MetricsRow row;
      ls >> row.mode >> row.loss >> row.ratio >> row.ndcg5 >> row.ndcg10;
      if (ls.fail()) throw Error("report: bad row in " + f);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

/// Renders the offline metrics table: one row per (mode, loss), NDCG@5 and
/// NDCG@10 column groups over the label ratios, mirroring the usual offline
/// comparison layout. Returns (tsv, aligned) renderings.
inline std::pair<std::string, std::string> render_report(
    const std::vector<MetricsRow>& rows) {
  std::set<std::string> ratio_set;
  std::map<std::pair<std::string, std::string>,
           std::map<std::string, std::pair<double, double>>> table;
  for (const auto& r : rows) {
    ratio_set.insert(r.ratio);
    table[{r.mode, r.loss}][r.ratio] = {r.ndcg5, r.ndcg10};
  }
  std::vector<std::string> ratios(ratio_set.begin(), ratio_set.end());
  std::sort(ratios.begin(), ratios.end(), [](const auto& a, const auto& b) {
    return std::stod(a) < std::stod(b);
  });

  std::ostringstream tsv;
  tsv << "mode\tloss";
  for (const auto& r : ratios) tsv << "\tndcg@5/r=" << r;
  for (const auto& r : ratios) tsv << "\tndcg@10/r=" << r;
  tsv << "\n";
  char cell[64];
  for (const auto& [key, cols] : table) {
    tsv << key.first << '\t' << key.second;
    for (int metric = 0; metric < 2; ++metric)
      for (const auto& r : ratios) {
        auto it = cols.find(r);
        if (it == cols.end()) {
          tsv << "\t-";
        } else {
          std::snprintf(cell, sizeof cell, "%.4f",
                        metric == 0 ? it->second.first : it->second.second);
          tsv << '\t' << cell;
        }
      }
    tsv << "\n";
  }

  // aligned, human-readable rendering of the same table
  std::istringstream lines(tsv.str());
  std::vector<std::vector<std::string>> cells;
  std::string line;
  while (std::getline(lines, line)) {
    std::vector<std::string> row;
    std::istringstream ls(line);
    std::string tok;
    while (std::getline(ls, tok, '\t')) row.push_back(tok);
    cells.push_back(std::move(row));
  }
  std::vector<std::size_t> widths;
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (widths.size() <= c) widths.resize(c + 1, 0);
      widths[c] = std::max(widths[c], row[c].size());
    }
  std::ostringstream pretty;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      pretty << std::left << std::setw(static_cast<int>(widths[c]) + 2)
             << row[c];
    }
    pretty << "\n";
  }
  return {tsv.str(), pretty.str()};
}

}  // namespace mpgraf
