// mpgraf command-line interface: dataset preparation, graph construction,
// training, evaluation, side-by-side comparison and report rendering.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "mpgraf/mpgraf.hpp"

namespace fs = std::filesystem;
using namespace mpgraf;

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  std::optional<std::string> loss;
  std::optional<double> ratio;

  void attach(CLI::App* cmd, bool config_required = true) {
    auto* opt = cmd->add_option("--config", config_path,
                                "experiment config file (key = value)");
    if (config_required) opt->required();
    cmd->add_option("--seed", seed, "master seed override");
    cmd->add_option("--out", out, "output directory override");
    cmd->add_option("--mode", mode, "graphformer mode override");
    cmd->add_option("--loss", loss, "training loss override");
    cmd->add_option("--ratio", ratio, "label ratio override");
  }

  ExperimentSpec spec() const {
    ExperimentSpec s =
        config_path.empty() ? ExperimentSpec{} : load_config(config_path);
    if (seed) s.seed = *seed;
    if (out) s.out_dir = *out;
    if (mode) s.model.mode = parse_mode(*mode);
    if (loss) s.train.loss = parse_loss(*loss);
    if (ratio) s.ratio = *ratio;
    s.propagate_seed();
    return s;
  }
};

std::string base_name(const ExperimentSpec& spec) {
  return std::string(mode_name(spec.model.mode)) + "_" +
         loss_name(spec.train.loss) + "_r" +
         mpgraf::detail::format_ratio(spec.ratio);
}

void write_run_record(const std::string& path, std::uint64_t digest,
                      std::initializer_list<const RunRecord*> records) {
  std::ostringstream body;
  for (const RunRecord* r : records) r->write(body);
  mpgraf::detail::write_artifact(path, digest, body.str());
}

int cmd_defaults() {
  ExperimentSpec spec;
  write_config(spec, std::cout);
  return 0;
}

int cmd_synth(const std::string& out_path, std::size_t queries,
              std::size_t docs, std::uint64_t seed, bool easy) {
  SynthConfig cfg;
  if (easy) {
    cfg = easy_synth_config(queries, seed);
    cfg.docs_per_query = docs;
  } else {
    cfg.queries = queries;
    cfg.docs_per_query = docs;
    cfg.seed = seed;
  }
  Dataset ds = synth_dataset(cfg);
  std::ofstream os(out_path);
  if (!os) throw Error("cannot write " + out_path);
  dump_dataset(ds, os);
  std::cout << "wrote " << ds.groups.size() << " queries, "
            << ds.pair_count() << " pairs to " << out_path << "\n";
  return 0;
}

int cmd_dump(const std::string& in_path, const std::string& out_path,
             std::size_t dim) {
  Dataset ds = load_dataset(in_path, dim);
  if (out_path.empty()) {
    dump_dataset(ds, std::cout);
  } else {
    std::ofstream os(out_path);
    if (!os) throw Error("cannot write " + out_path);
    dump_dataset(ds, os);
  }
  return 0;
}

int cmd_prepare(const CommonFlags& flags) {
  ExperimentSpec spec = flags.spec();
  spec.validate();
  fs::create_directories(spec.out_dir);
  const std::uint64_t digest = config_digest(spec);
  PreparedTarget<double> prep = prepare_target(spec);

  std::ostringstream letor;
  dump_dataset(prep.ctx.data, letor);
  mpgraf::detail::write_artifact(spec.out_dir + "/prepared.letor", digest,
                                 letor.str());

  std::ostringstream mask;
  mask << "ratio = " << spec.ratio << "\nseed = " << spec.seed << "\n";
  for (const auto& qid : prep.mask.labeled_query_ids)
    mask << "labeled\t" << qid << "\n";
  mpgraf::detail::write_artifact(spec.out_dir + "/mask.txt", digest,
                                 mask.str());

  std::ostringstream splits;
  for (std::size_t gi : prep.rest)
    splits << "train\t" << prep.ctx.data.groups[gi].query_id << "\n";
  for (std::size_t gi : prep.test)
    splits << "test\t" << prep.ctx.data.groups[gi].query_id << "\n";
  mpgraf::detail::write_artifact(spec.out_dir + "/splits.txt", digest,
                                 splits.str());

  std::cout << "prepared " << prep.ctx.data.groups.size() << " queries ("
            << prep.mask.labeled_query_ids.size() << " labeled, "
            << prep.test.size() << " held out) into " << spec.out_dir
            << "\n";
  return 0;
}

int cmd_graphs(const CommonFlags& flags) {
  ExperimentSpec spec = flags.spec();
  spec.validate();
  fs::create_directories(spec.out_dir);
  PreparedTarget<double> prep = prepare_target(spec);
  std::ostringstream body;
  write_edge_list(prep.ctx.graph, body);
  const std::string path =
      spec.out_dir + "/edges_" + base_name(spec) + ".tsv";
  mpgraf::detail::write_artifact(path, config_digest(spec), body.str());
  std::cout << "wrote " << prep.ctx.graph.edges.size() << " edges to "
            << path << "\n";
  return 0;
}

int cmd_pretrain(const CommonFlags& flags) {
  ExperimentSpec spec = flags.spec();
  spec.validate();
  fs::create_directories(spec.out_dir);
  const std::uint64_t digest = config_digest(spec);

  RunRecord rec;
  rec.phase = "pretrain";
  rec.seed = spec.seed;
  rec.config_digest = digest;

  Capsule cap;
  if (spec.pretrain_paths.empty()) {
    PreparedTarget<double> prep = prepare_target(spec);
    Graphformer<double> model(spec.model);
    model.add_adapter("target", prep.ctx.data.feature_dim);
    cap = model.save_capsule("target");
    std::cout << "no pretrain sources; wrote a fresh initialization\n";
  } else {
    std::vector<DatasetContext<double>> sources;
    for (std::size_t i = 0; i < spec.pretrain_paths.size(); ++i) {
      Dataset src = normalize_features(
          load_dataset(spec.pretrain_paths[i], 0, spec.grade_levels));
      LabelMask all;
      all.ratio = 1.0;
      for (const auto& g : src.groups)
        all.labeled_query_ids.insert(g.query_id);
      auto [pl, graph] = build_training_graphs(src, all, spec.ripple);
      sources.push_back(DatasetContext<double>::build(
          "src" + std::to_string(i), std::move(src), pl, std::move(graph)));
    }
    Graphformer<double> model(spec.model);
    std::vector<const DatasetContext<double>*> refs;
    for (auto& s : sources) {
      model.add_adapter(s.key, s.data.feature_dim);
      refs.push_back(&s);
    }
    cap = pretrain(model, refs, spec.train, &rec);
  }
  const std::string cap_path = spec.out_dir + "/pretrained.capsule";
  write_capsule(cap, cap_path);
  write_run_record(spec.out_dir + "/run_pretrain_" + base_name(spec) + ".txt",
                   digest, {&rec});
  std::cout << "wrote " << cap_path << "\n";
  return 0;
}

int cmd_finetune(const CommonFlags& flags, const std::string& capsule_path) {
  ExperimentSpec spec = flags.spec();
  spec.validate();
  fs::create_directories(spec.out_dir);
  const std::uint64_t digest = config_digest(spec);
  PreparedTarget<double> prep = prepare_target(spec);

  std::string cap_in = capsule_path.empty()
                           ? spec.out_dir + "/pretrained.capsule"
                           : capsule_path;
  Capsule pre;
  if (fs::exists(cap_in)) {
    pre = read_capsule(cap_in);
  } else {
    Graphformer<double> model(spec.model);
    model.add_adapter("target", prep.ctx.data.feature_dim);
    pre = model.save_capsule("target");
    std::cout << "no pretrained capsule at " << cap_in
              << "; fine-tuning from fresh initialization\n";
  }
  RunRecord rec_a, rec_b;
  rec_a.phase = "phaseA";
  rec_b.phase = "phaseB";
  rec_a.seed = rec_b.seed = spec.seed;
  rec_a.config_digest = rec_b.config_digest = digest;
  Capsule tuned = surgical_finetune_capsule(pre, prep.ctx, spec.train, &rec_a,
                                            &rec_b, {}, &prep.rest);
  const std::string out_path =
      spec.out_dir + "/model_" + base_name(spec) + ".capsule";
  write_capsule(tuned, out_path);
  write_run_record(spec.out_dir + "/run_finetune_" + base_name(spec) + ".txt",
                   digest, {&rec_a, &rec_b});
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_evaluate(const CommonFlags& flags, const std::string& capsule_path) {
  ExperimentSpec spec = flags.spec();
  spec.validate();
  fs::create_directories(spec.out_dir);
  PreparedTarget<double> prep = prepare_target(spec);
  const std::string cap_in =
      capsule_path.empty() ? spec.out_dir + "/model_" + base_name(spec) +
                                 ".capsule"
                           : capsule_path;
  Capsule cap = read_capsule(cap_in);
  Graphformer<double> model = Graphformer<double>::from_capsule_config(cap);
  model.apply_capsule(cap);
  const auto& groups = prep.test.empty() ? prep.rest : prep.test;
  auto metrics_map = evaluate(model, prep.ctx, groups, {5, 10});

  // per-pair score dump for the evaluated queries
  {
    std::ostringstream body;
    for (std::size_t gi : groups) {
      const QuerySlice s = prep.ctx.group_slices[gi];
      std::vector<std::size_t> ids(s.length);
      for (std::size_t i = 0; i < s.length; ++i) ids[i] = s.offset + i;
      std::vector<double> scores = model.score_pairs(prep.ctx, ids);
      const auto& grp = prep.ctx.data.groups[gi];
      for (std::size_t i = 0; i < s.length; ++i)
        body << grp.query_id << '\t' << grp.docs[i].doc_id << '\t'
             << mpgraf::detail::format_double(scores[i]) << '\n';
    }
    mpgraf::detail::write_artifact(
        spec.out_dir + "/scores_" + base_name(spec) + ".tsv",
        config_digest(spec), body.str());
  }

  char row[256];
  std::snprintf(row, sizeof row, "%s\t%s\t%s\t%.9g\t%.9g\n",
                mode_name(spec.model.mode), loss_name(spec.train.loss),
                mpgraf::detail::format_ratio(spec.ratio).c_str(),
                metrics_map[5], metrics_map[10]);
  const std::string path =
      spec.out_dir + "/metrics_" + base_name(spec) + ".tsv";
  mpgraf::detail::write_artifact(
      path, config_digest(spec),
      "mode\tloss\tratio\tndcg@5\tndcg@10\n" + std::string(row));
  std::cout << "ndcg@5 = " << metrics_map[5] << "\nndcg@10 = "
            << metrics_map[10] << "\nwrote " << path << "\n";
  return 0;
}

int cmd_run(const CommonFlags& flags) {
  ExperimentSpec spec = flags.spec();
  ExperimentResult result = run_experiment(spec);
  std::cout << "ndcg@5 = " << result.test_metrics[5] << "\nndcg@10 = "
            << result.test_metrics[10] << "\nwrote " << result.metrics_path
            << "\n";
  return 0;
}

int cmd_compare(const CommonFlags& flags, const std::string& a_path,
                const std::string& b_path, std::size_t days,
                double long_tail_quantile) {
  ExperimentSpec spec = flags.spec();
  spec.validate();
  fs::create_directories(spec.out_dir);
  Capsule a = read_capsule(a_path);
  Capsule b = read_capsule(b_path);
  Dataset ds = normalize_features(
      load_dataset(spec.target_path, 0, spec.grade_levels));
  auto outcomes = per_query_outcomes(a, b, ds, spec.ripple);
  ComparisonReport rep = aggregate_outcomes(outcomes);

  char line[256];
  std::ostringstream body;
  body << "a = " << a_path << "\nb = " << b_path << "\n";
  std::snprintf(line, sizeof line,
                "queries=%zu\ndelta_ab=%.9g\ngood=%zu same=%zu bad=%zu\n"
                "delta_gsb=%.9g\n",
                rep.queries.size(), rep.delta_ab, rep.good, rep.same,
                rep.bad, rep.delta_gsb);
  body << line;
  if (days > 1) {
    body << "[days " << days << "]\n";
    auto slices = slice_outcomes(outcomes, days);
    for (std::size_t d = 0; d < slices.size(); ++d) {
      std::snprintf(line, sizeof line,
                    "day=%zu queries=%zu delta_ab=%.9g delta_gsb=%.9g\n", d,
                    slices[d].queries.size(), slices[d].delta_ab,
                    slices[d].delta_gsb);
      body << line;
    }
  }
  if (long_tail_quantile > 0) {
    ComparisonReport lt = long_tail_outcomes(outcomes, long_tail_quantile);
    body << "[long_tail " << long_tail_quantile << "]\n";
    std::snprintf(line, sizeof line,
                  "queries=%zu delta_ab=%.9g delta_gsb=%.9g\n",
                  lt.queries.size(), lt.delta_ab, lt.delta_gsb);
    body << line;
  }
  const std::string path = spec.out_dir + "/compare.txt";
  mpgraf::detail::write_artifact(path, config_digest(spec), body.str());
  std::cout << body.str() << "wrote " << path << "\n";
  return 0;
}

int cmd_report(const std::string& dir) {
  auto rows = collect_metrics(dir);
  auto [tsv, pretty] = render_report(rows);
  std::ofstream os(dir + "/report.tsv");
  if (!os) throw Error("cannot write " + dir + "/report.tsv");
  os << tsv;
  std::cout << pretty;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MPGraf: graphformer learning-to-rank toolkit"};
  app.require_subcommand(1);

  CommonFlags prepare_flags, graphs_flags, pretrain_flags, finetune_flags,
      evaluate_flags, run_flags, compare_flags;

  auto* prepare = app.add_subcommand("prepare",
                                     "parse, normalize and mask the target");
  prepare_flags.attach(prepare);

  auto* graphs = app.add_subcommand("graphs",
                                    "run link rippling, emit the edge list");
  graphs_flags.attach(graphs);

  auto* pre = app.add_subcommand("pretrain", "train on the source datasets");
  pretrain_flags.attach(pre);

  auto* fine = app.add_subcommand("finetune",
                                  "surgical fine-tune on the target");
  finetune_flags.attach(fine);
  std::string finetune_capsule;
  fine->add_option("--capsule", finetune_capsule,
                   "pretrained capsule (default <out>/pretrained.capsule)");

  auto* eval_cmd = app.add_subcommand("evaluate",
                                      "NDCG metrics on held-out queries");
  evaluate_flags.attach(eval_cmd);
  std::string evaluate_capsule;
  eval_cmd->add_option("--capsule", evaluate_capsule,
                       "capsule to score (default <out>/model_*.capsule)");

  auto* run = app.add_subcommand("run", "full pipeline end to end");
  run_flags.attach(run);

  auto* compare = app.add_subcommand("compare",
                                     "side-by-side comparison of two capsules");
  compare_flags.attach(compare);
  std::string cap_a, cap_b;
  std::size_t days = 0;
  double long_tail = 0;
  compare->add_option("--a", cap_a, "capsule A")->required();
  compare->add_option("--b", cap_b, "capsule B")->required();
  compare->add_option("--days", days, "replay mode: N disjoint slices");
  compare->add_option("--long-tail-quantile", long_tail,
                      "also judge the fewest-candidate quantile");

  auto* report = app.add_subcommand("report", "render metrics tables");
  std::string report_dir;
  report->add_option("--out", report_dir, "run directory")->required();

  auto* dump = app.add_subcommand("dump", "re-emit a dataset as text");
  std::string dump_in, dump_out;
  std::size_t dump_dim = 0;
  dump->add_option("--in", dump_in, "input dataset")->required();
  dump->add_option("--out", dump_out, "output file (default stdout)");
  dump->add_option("--dim", dump_dim, "declared feature dimension");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out = "synthetic.letor";
  std::size_t synth_queries = 200, synth_docs = 20;
  std::uint64_t synth_seed = 1;
  bool synth_easy = false;
  synth->add_option("--out", synth_out, "output file");
  synth->add_option("--queries", synth_queries, "number of queries");
  synth->add_option("--docs", synth_docs, "candidates per query");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_flag("--easy", synth_easy, "low-noise, feature-dominant variant");

  auto* defaults = app.add_subcommand("defaults",
                                      "print the default configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_name() == "CallForHelp" ? 0 : 1;
  }

  try {
    if (*prepare) return cmd_prepare(prepare_flags);
    if (*graphs) return cmd_graphs(graphs_flags);
    if (*pre) return cmd_pretrain(pretrain_flags);
    if (*fine) return cmd_finetune(finetune_flags, finetune_capsule);
    if (*eval_cmd) return cmd_evaluate(evaluate_flags, evaluate_capsule);
    if (*run) return cmd_run(run_flags);
    if (*compare)
      return cmd_compare(compare_flags, cap_a, cap_b, days, long_tail);
    if (*report) return cmd_report(report_dir);
    if (*dump) return cmd_dump(dump_in, dump_out, dump_dim);
    if (*synth)
      return cmd_synth(synth_out, synth_queries, synth_docs, synth_seed,
                       synth_easy);
    if (*defaults) return cmd_defaults();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
