#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "mpgraf/graphformer.hpp"
#include "mpgraf/losses.hpp"
#include "mpgraf/optim.hpp"

namespace mpgraf {

struct TrainConfig {
  std::size_t epochs_pretrain = 30;
  std::size_t epochs_phase_a = 5;  // "several epochs" of gnn-only tuning
  std::size_t epochs_phase_b = 30;
  double lr_pretrain = 5e-3;
  double lr_phase_a = 0;  // 0 derives lr_pretrain / 10
  double lr_phase_b = 0;  // 0 derives lr_pretrain / 30
  std::size_t batch_queries = 4;
  LossKind loss = LossKind::neuralndcg;
  std::size_t loss_k = 0;  // 0 = full list
  double tau = 1.0;
  std::uint64_t seed = 0;
  std::size_t patience = 10;
  double val_fraction = 0.2;

  double phase_a_lr() const { return lr_phase_a > 0 ? lr_phase_a : lr_pretrain / 10.0; }
  double phase_b_lr() const { return lr_phase_b > 0 ? lr_phase_b : lr_pretrain / 30.0; }

  void validate() const {
    if (lr_pretrain <= 0) throw Error("train config: lr_pretrain must be > 0");
    if (batch_queries < 1) throw Error("train config: batch_queries must be >= 1");
    if (!(val_fraction >= 0.0) || val_fraction >= 1.0)
      throw Error("train config: val_fraction must lie in [0,1)");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0;
  double ndcg5 = 0;
  double ndcg10 = 0;
  double wall_s = 0;
};

/// Append-only per-epoch log; serialized with a stable key order so runs
/// diff cleanly.
struct RunRecord {
  std::string phase;
  std::uint64_t seed = 0;
  std::uint64_t config_digest = 0;
  std::vector<EpochRecord> epochs;

  void write(std::ostream& os) const {
    char buf[256];
    os << "# config_digest=" << std::hex << config_digest << std::dec << "\n";
    os << "# phase=" << phase << " seed=" << seed << "\n";
    for (const auto& e : epochs) {
      std::snprintf(buf, sizeof buf,
                    "epoch=%zu\tloss=%.9g\tndcg@5=%.9g\tndcg@10=%.9g\twall_s=%.3f\n",
                    e.epoch, e.loss, e.ndcg5, e.ndcg10, e.wall_s);
      os << buf;
    }
  }
};

/// Test/diagnostic hook, called after every optimizer step.
template <class T>
using StepObserver = std::function<void(const std::string& phase,
                                        std::size_t epoch, std::size_t step,
                                        Graphformer<T>& model)>;

/// Deterministic split of a set of group indices into (rest, held-out).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
split_group_subset(std::vector<std::size_t> idx, double held_fraction,
                   std::uint64_t seed, std::string_view tag = "valsplit") {
  const std::size_t n = idx.size();
  Rng rng = make_rng(seed, tag);
  for (std::size_t i = n; i > 1; --i)
    std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
  std::size_t nv = static_cast<std::size_t>(std::llround(held_fraction * n));
  if (nv >= n) nv = n ? n - 1 : 0;
  std::vector<std::size_t> held(idx.begin(), idx.begin() + nv);
  std::vector<std::size_t> rest(idx.begin() + nv, idx.end());
  std::sort(held.begin(), held.end());
  std::sort(rest.begin(), rest.end());
  return {rest, held};
}

/// Deterministic split of [0,n) group indices into (train, validation).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
split_groups(std::size_t n, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return split_group_subset(std::move(idx), val_fraction, seed);
}

/// Mean NDCG@k over the given groups using the dataset's human labels.
/// `scorer(pair_ids)` returns one score per pair id.
template <class T, class Scorer>
std::map<std::size_t, double> evaluate_scorer(
    const DatasetContext<T>& ctx, const std::vector<std::size_t>& groups,
    const std::vector<std::size_t>& ks, Scorer&& scorer) {
  if (groups.empty()) throw Error("evaluate: no groups");
  std::map<std::size_t, double> out;
  for (std::size_t k : ks) out[k] = 0;
  for (std::size_t gi : groups) {
    const QuerySlice s = ctx.group_slices[gi];
    std::vector<std::size_t> ids(s.length);
    for (std::size_t i = 0; i < s.length; ++i) ids[i] = s.offset + i;
    std::vector<double> scores = scorer(ids);
    std::vector<double> labels(s.length);
    const auto& grp = ctx.data.groups[gi];
    for (std::size_t i = 0; i < s.length; ++i) {
      if (!grp.docs[i].label)
        throw Error("evaluate: query " + grp.query_id +
                    " has unlabeled docs; ground truth required");
      labels[i] = static_cast<double>(*grp.docs[i].label);
    }
    for (std::size_t k : ks) out[k] += metrics::ndcg_at_k(scores, labels, k);
  }
  for (std::size_t k : ks) out[k] /= static_cast<double>(groups.size());
  return out;
}

template <class T>
std::map<std::size_t, double> evaluate(Graphformer<T>& model,
                                       const DatasetContext<T>& ctx,
                                       const std::vector<std::size_t>& groups,
                                       const std::vector<std::size_t>& ks) {
  return evaluate_scorer(ctx, groups, ks, [&](const std::vector<std::size_t>& ids) {
    return model.score_pairs(ctx, ids);
  });
}

namespace detail {

template <class T>
std::map<std::string, Tensor<T>> snapshot_params(const ParamStore<T>& store) {
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, p] : store.params) out[name] = p.value;
  return out;
}

template <class T>
void restore_params(ParamStore<T>& store,
                    const std::map<std::string, Tensor<T>>& snap) {
  for (auto& [name, value] : snap) store.at(name).value = value;
}

/// One pass over a dataset's train groups in shuffled batch order; returns
/// the mean batch loss.
template <class T>
double train_epoch(Graphformer<T>& model, Adam<T>& opt,
                   const DatasetContext<T>& ctx,
                   const std::vector<std::size_t>& train_groups,
                   const TrainConfig& cfg, const std::string& phase,
                   std::size_t epoch, const StepObserver<T>& observer) {
  std::vector<std::size_t> order = train_groups;
  Rng rng = make_rng(cfg.seed,
                     "epoch:" + phase + ":" + std::to_string(epoch) + ":" +
                         ctx.key);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[uniform_index(rng, i)]);

  double loss_sum = 0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size();
       start += cfg.batch_queries) {
    const std::size_t stop =
        std::min(order.size(), start + cfg.batch_queries);
    std::vector<std::size_t> ids;
    std::vector<T> targets;
    std::vector<QuerySlice> slices;
    for (std::size_t b = start; b < stop; ++b) {
      const QuerySlice s = ctx.group_slices[order[b]];
      slices.push_back(QuerySlice{ids.size(), s.length});
      for (std::size_t i = 0; i < s.length; ++i) {
        ids.push_back(s.offset + i);
        targets.push_back(ctx.targets[s.offset + i]);
      }
    }
    if (ids.empty()) continue;
    Tape<T> tp;
    Var scores = model.forward(tp, ctx, ids);
    Var loss = batch_ranking_loss(tp, cfg.loss, scores, targets, slices,
                                  cfg.loss_k, cfg.tau);
    model.store().zero_grads();
    tp.backward(loss);
    for (auto& [name, p] : model.store().params) opt.step(p);
    loss_sum += static_cast<double>(tp.val(loss).data[0]);
    ++batches;
    if (observer) observer(phase, epoch, batches - 1, model);
  }
  return batches ? loss_sum / static_cast<double>(batches) : 0.0;
}

inline double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace detail

/// Joint training of all sections over one or more source datasets, cycling
/// the sources in order within every epoch. Early-stops on validation
/// NDCG@10 and restores the best-epoch weights.
template <class T>
Capsule pretrain(Graphformer<T>& model,
                 const std::vector<const DatasetContext<T>*>& sources,
                 const TrainConfig& cfg, RunRecord* record = nullptr,
                 const StepObserver<T>& observer = {}) {
  cfg.validate();
  if (sources.empty()) throw Error("pretrain: no source datasets");
  for (const auto* src : sources)
    if (!model.has_adapter(src->key))
      throw Error("pretrain: model lacks adapter for '" + src->key + "'");

  model.apply_freeze(FreezePlan::all_trainable());
  Adam<T> opt({static_cast<T>(cfg.lr_pretrain)});

  std::vector<std::vector<std::size_t>> train_groups, val_groups;
  for (const auto* src : sources) {
    auto [tr, va] = split_groups(src->data.groups.size(), cfg.val_fraction,
                                 cfg.seed);
    train_groups.push_back(std::move(tr));
    val_groups.push_back(std::move(va));
  }

  double best = -1;
  std::size_t best_epoch = 0, since_best = 0;
  auto best_snap = detail::snapshot_params(model.store());
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = 0; epoch < cfg.epochs_pretrain; ++epoch) {
    double loss = 0;
    for (std::size_t s = 0; s < sources.size(); ++s)
      loss += detail::train_epoch(model, opt, *sources[s], train_groups[s],
                                  cfg, "pretrain", epoch, observer);
    loss /= static_cast<double>(sources.size());
    double n5 = 0, n10 = 0;
    for (std::size_t s = 0; s < sources.size(); ++s) {
      const auto& groups =
          val_groups[s].empty() ? train_groups[s] : val_groups[s];
      auto m = evaluate(model, *sources[s], groups, {5, 10});
      n5 += m[5];
      n10 += m[10];
    }
    n5 /= static_cast<double>(sources.size());
    n10 /= static_cast<double>(sources.size());
    if (record)
      record->epochs.push_back(
          EpochRecord{epoch, loss, n5, n10, detail::elapsed_s(t0)});
    if (n10 > best) {
      best = n10;
      best_epoch = epoch;
      since_best = 0;
      best_snap = detail::snapshot_params(model.store());
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (cfg.epochs_pretrain > 0) {
    detail::restore_params(model.store(), best_snap);
    (void)best_epoch;
  }
  return model.save_capsule(sources.size() == 1 ? sources[0]->key : "");
}

/// Two-phase surgical fine-tuning: tune the GNN section with everything else
/// frozen, then fine-tune all sections jointly. Phase B early-stops on
/// validation NDCG@10; one optimizer spans both phases so frozen sections'
/// moments never advance during phase A.
template <class T>
Capsule surgical_finetune(Graphformer<T>& model,
                          const DatasetContext<T>& target,
                          const TrainConfig& cfg,
                          RunRecord* record_a = nullptr,
                          RunRecord* record_b = nullptr,
                          const StepObserver<T>& observer = {},
                          const std::vector<std::size_t>* group_subset =
                              nullptr) {
  cfg.validate();
  if (!model.has_adapter(target.key))
    throw Error("surgical_finetune: model lacks adapter for '" + target.key +
                "'");
  std::vector<std::size_t> pool;
  if (group_subset) {
    pool = *group_subset;
  } else {
    pool.resize(target.data.groups.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  }
  auto [train, val] =
      split_group_subset(std::move(pool), cfg.val_fraction, cfg.seed);
  const auto& val_groups = val.empty() ? train : val;

  Adam<T> opt({static_cast<T>(cfg.phase_a_lr())});

  model.apply_freeze(FreezePlan::gnn_only());
  auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = 0; epoch < cfg.epochs_phase_a; ++epoch) {
    double loss = detail::train_epoch(model, opt, target, train, cfg,
                                      "phaseA", epoch, observer);
    if (record_a) {
      auto m = evaluate(model, target, val_groups, {5, 10});
      record_a->epochs.push_back(
          EpochRecord{epoch, loss, m[5], m[10], detail::elapsed_s(t0)});
    }
  }

  model.apply_freeze(FreezePlan::all_trainable());
  opt.hyper().lr = static_cast<T>(cfg.phase_b_lr());
  double best = -1;
  std::size_t since_best = 0;
  auto best_snap = detail::snapshot_params(model.store());
  if (cfg.epochs_phase_b > 0) {
    auto m0 = evaluate(model, target, val_groups, {10});
    best = m0[10];
  }
  t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = 0; epoch < cfg.epochs_phase_b; ++epoch) {
    double loss = detail::train_epoch(model, opt, target, train, cfg,
                                      "phaseB", epoch, observer);
    auto m = evaluate(model, target, val_groups, {5, 10});
    if (record_b)
      record_b->epochs.push_back(
          EpochRecord{epoch, loss, m[5], m[10], detail::elapsed_s(t0)});
    if (m[10] > best) {
      best = m[10];
      since_best = 0;
      best_snap = detail::snapshot_params(model.store());
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (cfg.epochs_phase_b > 0)
    detail::restore_params(model.store(), best_snap);
  return model.save_capsule(target.key);
}

/// Capsule-level surgical fine-tune: rebuilds the model from the capsule's
/// config, grafts a fresh adapter for the target when needed, adopts every
/// compatible pre-trained weight, then runs the two phases.
template <class T>
Capsule surgical_finetune_capsule(const Capsule& pretrained,
                                  const DatasetContext<T>& target,
                                  const TrainConfig& cfg,
                                  RunRecord* record_a = nullptr,
                                  RunRecord* record_b = nullptr,
                                  const StepObserver<T>& observer = {},
                                  const std::vector<std::size_t>*
                                      group_subset = nullptr) {
  Graphformer<T> model = Graphformer<T>::from_capsule_config(pretrained);
  if (!model.has_adapter(target.key))
    model.add_adapter(target.key, target.data.feature_dim);
  model.adopt_compatible(pretrained);
  return surgical_finetune(model, target, cfg, record_a, record_b, observer,
                           group_subset);
}

// ---- plain MLP baseline (pointwise over pair features) ----

/// The retained non-graph baseline: an MLP over the raw pair feature vector,
/// trained with any of the ranking losses (RMSE in the reference setup).
template <class T>
class MlpBaseline {
 public:
  MlpBaseline(std::size_t feature_dim, std::vector<std::size_t> hidden,
              std::uint64_t init_seed)
      : feature_dim_(feature_dim) {
    std::size_t in = feature_dim;
    for (std::size_t l = 0; l < hidden.size(); ++l) {
      add_init("mlp.w" + std::to_string(l), {in, hidden[l]}, init_seed);
      store_.add("mlp.b" + std::to_string(l), Tensor<T>({hidden[l]}, T(0)));
      in = hidden[l];
    }
    add_init("mlp.w" + std::to_string(hidden.size()), {in, 1}, init_seed);
    store_.add("mlp.b" + std::to_string(hidden.size()), Tensor<T>({1}, T(0)));
    layers_ = hidden.size();
  }

  Var forward(Tape<T>& tp, const DatasetContext<T>& ctx,
              const std::vector<std::size_t>& pair_ids) {
    Tensor<T> x({pair_ids.size(), feature_dim_});
    for (std::size_t r = 0; r < pair_ids.size(); ++r) {
      const auto& ref = ctx.pairs[pair_ids[r]];
      const auto& f = ctx.data.groups[ref.group].docs[ref.doc].features;
      for (std::size_t j = 0; j < feature_dim_; ++j)
        x.data[r * feature_dim_ + j] = static_cast<T>(f[j]);
    }
    Var h = tp.input(std::move(x));
    for (std::size_t l = 0; l < layers_; ++l)
      h = tp.relu(tp.add(
          tp.matmul(h, tp.param(store_.at("mlp.w" + std::to_string(l)))),
          tp.param(store_.at("mlp.b" + std::to_string(l)))));
    Var out = tp.add(
        tp.matmul(h, tp.param(store_.at("mlp.w" + std::to_string(layers_)))),
        tp.param(store_.at("mlp.b" + std::to_string(layers_))));
    return tp.reshape(out, {tp.val(out).rows()});
  }

  std::vector<double> score_pairs(const DatasetContext<T>& ctx,
                                  const std::vector<std::size_t>& ids) {
    Tape<T> tp;
    Var s = forward(tp, ctx, ids);
    return std::vector<double>(tp.val(s).data.begin(), tp.val(s).data.end());
  }

  /// Same epoch/batch schedule as the graphformer trainer.
  void train(const DatasetContext<T>& ctx,
             const std::vector<std::size_t>& train_groups,
             const TrainConfig& cfg, std::size_t epochs) {
    Adam<T> opt({static_cast<T>(cfg.lr_pretrain)});
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
      std::vector<std::size_t> order = train_groups;
      Rng rng = make_rng(cfg.seed, "mlp-epoch:" + std::to_string(epoch));
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[uniform_index(rng, i)]);
      for (std::size_t start = 0; start < order.size();
           start += cfg.batch_queries) {
        const std::size_t stop =
            std::min(order.size(), start + cfg.batch_queries);
        std::vector<std::size_t> ids;
        std::vector<T> targets;
        std::vector<QuerySlice> slices;
        for (std::size_t b = start; b < stop; ++b) {
          const QuerySlice s = ctx.group_slices[order[b]];
          slices.push_back(QuerySlice{ids.size(), s.length});
          for (std::size_t i = 0; i < s.length; ++i) {
            ids.push_back(s.offset + i);
            targets.push_back(ctx.targets[s.offset + i]);
          }
        }
        if (ids.empty()) continue;
        Tape<T> tp;
        Var scores = forward(tp, ctx, ids);
        Var loss = batch_ranking_loss(tp, cfg.loss, scores, targets, slices,
                                      cfg.loss_k, cfg.tau);
        for (auto& [name, p] : store_.params) p.zero_grad();
        tp.backward(loss);
        for (auto& [name, p] : store_.params) opt.step(p);
      }
    }
  }

  ParamStore<T>& store() { return store_; }

 private:
  void add_init(const std::string& name, Shape shape, std::uint64_t seed) {
    Rng rng = make_rng(seed, "baseline:" + name);
    store_.add(name, detail::xavier_uniform(std::move(shape), rng)
                         .template cast<T>());
  }

  ParamStore<T> store_;
  std::size_t feature_dim_;
  std::size_t layers_;
};

}  // namespace mpgraf
