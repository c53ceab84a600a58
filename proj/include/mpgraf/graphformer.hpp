#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mpgraf/gnn.hpp"
#include "mpgraf/losses.hpp"
#include "mpgraf/rippling.hpp"
#include "mpgraf/tape.hpp"
#include "mpgraf/transformer.hpp"

namespace mpgraf {

enum class Mode { stacking, parallelizing };

inline const char* mode_name(Mode m) {
  return m == Mode::stacking ? "stacking" : "parallelizing";
}
inline Mode parse_mode(const std::string& s) {
  if (s == "stacking") return Mode::stacking;
  if (s == "parallelizing") return Mode::parallelizing;
  throw Error("unknown mode '" + s + "'");
}

struct GraphformerConfig {
  Mode mode = Mode::parallelizing;
  std::size_t gnn_width = 32;   // d
  std::size_t gnn_layers = 2;   // N
  std::size_t tokens = 4;       // T
  std::size_t d_model = 32;
  std::size_t heads = 4;        // H
  std::size_t d_ff = 64;
  std::size_t enc_blocks = 2;   // E
  std::vector<std::size_t> mlp_hidden = {32};
  std::size_t proj_out = 0;     // 0 means d_model
  std::uint64_t init_seed = 1;

  std::size_t proj_width() const { return proj_out ? proj_out : d_model; }
  std::size_t encoder_input_width(std::size_t feature_dim) const {
    return mode == Mode::stacking ? 2 * gnn_width : 2 * feature_dim;
  }
  std::size_t mlp_input_width() const {
    return mode == Mode::stacking ? d_model : proj_width();
  }

  void validate() const {
    if (gnn_width < 1 || gnn_layers < 1 || tokens < 1 || d_model < 1 ||
        enc_blocks < 1)
      throw Error("graphformer config: widths and depths must be positive");
    if (heads < 1 || d_model % heads != 0)
      throw Error("graphformer config: d_model must be divisible by heads");
  }

  /// Stable key=value serialization; the capsule stores this echo.
  std::string canonical() const {
    std::ostringstream os;
    os << "d_ff=" << d_ff << "\nd_model=" << d_model
       << "\nenc_blocks=" << enc_blocks << "\ngnn_layers=" << gnn_layers
       << "\ngnn_width=" << gnn_width << "\nheads=" << heads
       << "\nmlp_hidden=";
    for (std::size_t i = 0; i < mlp_hidden.size(); ++i)
      os << (i ? "," : "") << mlp_hidden[i];
    os << "\nmode=" << mode_name(mode) << "\nproj_out=" << proj_out
       << "\ntokens=" << tokens << "\n";
    return os.str();
  }
};

/// Named parameters partitioned into sections by name prefix
/// ("<section>.<rest>"). std::map keeps iteration deterministic and element
/// addresses stable.
template <class T>
struct ParamStore {
  std::map<std::string, Parameter<T>> params;

  static std::string section_of(const std::string& name) {
    auto dot = name.find('.');
    return dot == std::string::npos ? name : name.substr(0, dot);
  }

  Parameter<T>& add(const std::string& name, Tensor<T> value) {
    auto [it, inserted] = params.try_emplace(name, name, std::move(value));
    if (!inserted) throw Error("parameter '" + name + "' already exists");
    return it->second;
  }
  Parameter<T>* find(const std::string& name) {
    auto it = params.find(name);
    return it == params.end() ? nullptr : &it->second;
  }
  Parameter<T>& at(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw Error("unknown parameter '" + name + "'");
  }
  void zero_grads() {
    for (auto& [_, p] : params) p.zero_grad();
  }
};

/// Per-section trainability flags.
struct FreezePlan {
  std::map<std::string, bool> sections;

  bool trainable(const std::string& section) const {
    auto it = sections.find(section);
    return it == sections.end() ? true : it->second;
  }
  static FreezePlan all_trainable() { return {}; }
  static FreezePlan gnn_only() {
    FreezePlan f;
    f.sections = {{"gnn", true},
                  {"transformer", false},
                  {"mlp", false},
                  {"projection", false}};
    return f;
  }
};

/// Modular checkpoint: named sections of float32 tensors plus a config echo.
/// A value object; loading never touches a model until applied.
struct Capsule {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  std::string config_echo;
  std::string primary_adapter;  // dataset key the capsule was trained against
  std::map<std::string, std::vector<std::pair<std::string, Tensor<float>>>>
      sections;

  std::uint64_t digest() const { return fnv1a64(config_echo); }

  Capsule filtered(const std::set<std::string>& wanted) const {
    Capsule out = *this;
    out.sections.clear();
    for (const auto& s : wanted) {
      auto it = sections.find(s);
      if (it == sections.end())
        throw Error("capsule: section '" + s + "' not present");
      out.sections.insert(*it);
    }
    return out;
  }
};

namespace detail {

inline Tensor<double> xavier_uniform(Shape shape, Rng& rng) {
  const double fan_in = static_cast<double>(shape[0]);
  const double fan_out =
      static_cast<double>(shape.size() > 1 ? shape[1] : shape[0]);
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = uniform_real(rng, -limit, limit);
  return t;
}

}  // namespace detail

/// Everything a model needs to score one dataset: the normalized data, the
/// rippled graph, node features, the flattened pair list, and training
/// targets. Must outlive any Tape built over it.
template <class T>
struct DatasetContext {
  struct PairRef {
    std::size_t group, doc;    // position in the dataset
    std::size_t qnode, pnode;  // graph node indices
  };

  std::string key;  // adapter key
  Dataset data;
  BipartiteGraph graph;
  gnn::PropagationPlan plan;
  Tensor<T> query_feats, page_feats;
  std::vector<PairRef> pairs;
  std::vector<QuerySlice> group_slices;  // pairs-range per group
  std::vector<T> targets;                // pseudo-scores aligned with pairs

  static DatasetContext build(std::string key, Dataset ds,
                              const PseudoLabeled& pl, BipartiteGraph g) {
    DatasetContext ctx;
    ctx.key = std::move(key);
    ctx.data = std::move(ds);
    ctx.graph = std::move(g);
    ctx.plan = gnn::PropagationPlan::build(ctx.graph);
    auto [qf, pf] = gnn::node_raw_features<T>(ctx.data, ctx.graph);
    ctx.query_feats = std::move(qf);
    ctx.page_feats = std::move(pf);
    for (std::size_t gi = 0; gi < ctx.data.groups.size(); ++gi) {
      const auto& grp = ctx.data.groups[gi];
      QuerySlice slice{ctx.pairs.size(), grp.docs.size()};
      for (std::size_t di = 0; di < grp.docs.size(); ++di) {
        const auto& d = grp.docs[di];
        ctx.pairs.push_back(PairRef{gi, di,
                                    ctx.graph.query_index.at(grp.query_id),
                                    ctx.graph.page_index.at(d.doc_id)});
        ctx.targets.push_back(
            static_cast<T>(pl.score_of(grp.query_id, d.doc_id)));
      }
      ctx.group_slices.push_back(slice);
    }
    return ctx;
  }
};

/// The hybrid GNN + Transformer ranker in stacking or parallelizing
/// composition, with named sections {gnn, transformer, mlp, projection} for
/// modular checkpointing.
template <class T>
class Graphformer {
 public:
  explicit Graphformer(GraphformerConfig config) : cfg_(std::move(config)) {
    cfg_.validate();
    store_.add("gnn.alpha_logits", Tensor<T>({cfg_.gnn_layers + 1}, T(0)));
    if (cfg_.mode == Mode::stacking)
      add_init("transformer.input_fc",
               {2 * cfg_.gnn_width, cfg_.tokens * cfg_.d_model});
    for (std::size_t b = 0; b < cfg_.enc_blocks; ++b) {
      const std::string pre = "transformer.block" + std::to_string(b) + ".";
      add_init(pre + "wq", {cfg_.d_model, cfg_.d_model});
      add_init(pre + "wk", {cfg_.d_model, cfg_.d_model});
      add_init(pre + "wv", {cfg_.d_model, cfg_.d_model});
      add_init(pre + "wo", {cfg_.d_model, cfg_.d_model});
      add_init(pre + "ffn_w1", {cfg_.d_model, cfg_.d_ff});
      add_init(pre + "ffn_w2", {cfg_.d_ff, cfg_.d_model});
      store_.add(pre + "ln1_gain", Tensor<T>({cfg_.d_model}, T(1)));
      store_.add(pre + "ln1_bias", Tensor<T>({cfg_.d_model}, T(0)));
      store_.add(pre + "ln2_gain", Tensor<T>({cfg_.d_model}, T(1)));
      store_.add(pre + "ln2_bias", Tensor<T>({cfg_.d_model}, T(0)));
    }
    if (cfg_.mode == Mode::parallelizing)
      add_init("projection.weight",
               {cfg_.proj_width(), 2 * cfg_.gnn_width + cfg_.d_model});
    std::size_t in = cfg_.mlp_input_width();
    for (std::size_t l = 0; l < cfg_.mlp_hidden.size(); ++l) {
      add_init("mlp.w" + std::to_string(l), {in, cfg_.mlp_hidden[l]});
      store_.add("mlp.b" + std::to_string(l),
                 Tensor<T>({cfg_.mlp_hidden[l]}, T(0)));
      in = cfg_.mlp_hidden[l];
    }
    add_init("mlp.w" + std::to_string(cfg_.mlp_hidden.size()), {in, 1});
    store_.add("mlp.b" + std::to_string(cfg_.mlp_hidden.size()),
               Tensor<T>({1}, T(0)));
  }

  const GraphformerConfig& config() const { return cfg_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }

  // ---- per-dataset adapters ----

  void add_adapter(const std::string& key, std::size_t feature_dim) {
    if (adapter_dims_.count(key))
      throw Error("adapter '" + key + "' already exists");
    adapter_dims_[key] = feature_dim;
    add_init("gnn.adapter." + key + ".query", {feature_dim, cfg_.gnn_width});
    add_init("gnn.adapter." + key + ".page", {feature_dim, cfg_.gnn_width});
    if (cfg_.mode == Mode::parallelizing)
      add_init("transformer.adapter." + key + ".input_fc",
               {2 * feature_dim, cfg_.tokens * cfg_.d_model});
  }

  bool has_adapter(const std::string& key) const {
    return adapter_dims_.count(key) > 0;
  }
  const std::map<std::string, std::size_t>& adapters() const {
    return adapter_dims_;
  }

  // ---- forward ----

  /// Pre-regressor representation for the selected pairs: z^S (stacking) or
  /// z^P (parallelizing), one row per pair.
  Var representation(Tape<T>& tp, const DatasetContext<T>& ctx,
                     const std::vector<std::size_t>& pair_ids) {
    auto it = adapter_dims_.find(ctx.key);
    if (it == adapter_dims_.end())
      throw Error("no adapter for dataset '" + ctx.key + "'");
    if (it->second != ctx.data.feature_dim)
      throw Error("adapter '" + ctx.key + "' expects feature dim " +
                  std::to_string(it->second) + ", dataset has " +
                  std::to_string(ctx.data.feature_dim));

    std::vector<std::pair<std::size_t, std::size_t>> nodes;
    nodes.reserve(pair_ids.size());
    for (std::size_t id : pair_ids)
      nodes.emplace_back(ctx.pairs[id].qnode, ctx.pairs[id].pnode);

    Var xg = gnn_pair_representation(tp, ctx, nodes);
    if (cfg_.mode == Mode::stacking)
      return transformer::encode(tp, xg, encoder_for(ctx.key));
    Var xt = transformer::encode(tp, raw_pair_input(tp, ctx, nodes),
                                 encoder_for(ctx.key));
    Var xc = tp.concat(1, {xg, xt});
    return tp.matmul(xc, tp.transpose(tp.param(store_.at("projection.weight"))));
  }

  /// Ranking scores for the selected pairs of a dataset context; rank-1
  /// output aligned with pair_ids.
  Var forward(Tape<T>& tp, const DatasetContext<T>& ctx,
              const std::vector<std::size_t>& pair_ids) {
    return score(tp, representation(tp, ctx, pair_ids));
  }

  /// GNN branch only: propagate, combine and concatenate pair halves.
  Var gnn_pair_representation(
      Tape<T>& tp, const DatasetContext<T>& ctx,
      const std::vector<std::pair<std::size_t, std::size_t>>& nodes) {
    auto [q0, p0] = gnn::init_layer0(
        tp, ctx.query_feats, ctx.page_feats,
        store_.at("gnn.adapter." + ctx.key + ".query"),
        store_.at("gnn.adapter." + ctx.key + ".page"));
    auto states = gnn::run_propagation(tp, ctx.plan, q0, p0, cfg_.gnn_layers);
    auto [qe, pe] = gnn::combine_layers(tp, states,
                                        store_.at("gnn.alpha_logits"));
    return gnn::pair_representation(tp, qe, pe, nodes);
  }

  /// Raw concatenated pair vectors [q_raw || d_raw] for the transformer
  /// branch of the parallelizing mode. Constant inputs.
  Var raw_pair_input(
      Tape<T>& tp, const DatasetContext<T>& ctx,
      const std::vector<std::pair<std::size_t, std::size_t>>& nodes) {
    const std::size_t m = ctx.data.feature_dim;
    Tensor<T> x({nodes.size(), 2 * m});
    for (std::size_t r = 0; r < nodes.size(); ++r) {
      auto [qn, pn] = nodes[r];
      std::copy_n(ctx.query_feats.data.begin() + qn * m, m,
                  x.data.begin() + r * 2 * m);
      std::copy_n(ctx.page_feats.data.begin() + pn * m, m,
                  x.data.begin() + r * 2 * m + m);
    }
    return tp.input(std::move(x));
  }

  /// MLP regressor: relu hidden layers, linear scalar output. z is
  /// [B, mlp_input_width]; result is rank-1 [B].
  Var score(Tape<T>& tp, Var z) {
    Var h = z;
    const std::size_t layers = cfg_.mlp_hidden.size();
    for (std::size_t l = 0; l < layers; ++l) {
      h = tp.relu(tp.add(
          tp.matmul(h, tp.param(store_.at("mlp.w" + std::to_string(l)))),
          tp.param(store_.at("mlp.b" + std::to_string(l)))));
    }
    Var out = tp.add(
        tp.matmul(h, tp.param(store_.at("mlp.w" + std::to_string(layers)))),
        tp.param(store_.at("mlp.b" + std::to_string(layers))));
    return tp.reshape(out, {tp.val(out).rows()});
  }

  /// Convenience: plain scores for the given pairs (no gradients kept).
  std::vector<double> score_pairs(const DatasetContext<T>& ctx,
                                  const std::vector<std::size_t>& pair_ids) {
    Tape<T> tp;
    Var s = forward(tp, ctx, pair_ids);
    std::vector<double> out(tp.val(s).data.begin(), tp.val(s).data.end());
    return out;
  }

  // ---- freezing ----

  void apply_freeze(const FreezePlan& plan) {
    bool any = false;
    for (auto& [name, p] : store_.params) {
      p.trainable = plan.trainable(ParamStore<T>::section_of(name));
      any = any || p.trainable;
    }
    if (!any) throw Error("freeze plan leaves no trainable section");
  }

  // ---- capsules ----

  /// Full config echo including adapter dimensions; identifies parameter
  /// shapes completely.
  std::string config_echo() const {
    std::string echo = cfg_.canonical();
    for (const auto& [key, m] : adapter_dims_)
      echo += "adapter." + key + "=" + std::to_string(m) + "\n";
    return echo;
  }

  Capsule save_capsule(const std::string& primary_adapter = "") const {
    Capsule cap;
    cap.config_echo = config_echo();
    cap.primary_adapter = primary_adapter;
    for (const auto& [name, p] : store_.params)
      cap.sections[ParamStore<T>::section_of(name)].emplace_back(
          name, p.value.template cast<float>());
    return cap;
  }

  /// Strict application: every capsule parameter must exist with matching
  /// shape. Loading a subset of sections leaves the rest untouched.
  void apply_capsule(const Capsule& cap) {
    // validate first so failure mutates nothing
    for (const auto& [section, params] : cap.sections)
      for (const auto& [name, tensor] : params) {
        Parameter<T>* p = store_.find(name);
        if (!p)
          throw Error("capsule: parameter '" + name +
                      "' (section " + section + ") not in model");
        if (p->value.shape != tensor.shape)
          throw Error("capsule: shape mismatch for '" + name + "' (section " +
                      section + "): capsule " + shape_str(tensor.shape) +
                      " vs model " + shape_str(p->value.shape));
      }
    for (const auto& [section, params] : cap.sections)
      for (const auto& [name, tensor] : params)
        store_.at(name).value = tensor.template cast<T>();
  }

  /// Copies every capsule parameter that exists in this model with a
  /// matching shape; anything else (typically other datasets' adapters) is
  /// skipped. Returns the number of parameters copied.
  std::size_t adopt_compatible(const Capsule& cap) {
    std::size_t copied = 0;
    for (const auto& [section, params] : cap.sections)
      for (const auto& [name, tensor] : params) {
        Parameter<T>* p = store_.find(name);
        if (!p || p->value.shape != tensor.shape) continue;
        p->value = tensor.template cast<T>();
        ++copied;
      }
    return copied;
  }

  /// Rebuilds a model (fresh init) matching a capsule's config echo.
  static Graphformer from_capsule_config(const Capsule& cap) {
    GraphformerConfig cfg;
    std::map<std::string, std::size_t> adapters;
    std::istringstream is(cap.config_echo);
    std::string line;
    while (std::getline(is, line)) {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string k = line.substr(0, eq), v = line.substr(eq + 1);
      if (k == "mode") cfg.mode = parse_mode(v);
      else if (k == "gnn_width") cfg.gnn_width = std::stoul(v);
      else if (k == "gnn_layers") cfg.gnn_layers = std::stoul(v);
      else if (k == "tokens") cfg.tokens = std::stoul(v);
      else if (k == "d_model") cfg.d_model = std::stoul(v);
      else if (k == "heads") cfg.heads = std::stoul(v);
      else if (k == "d_ff") cfg.d_ff = std::stoul(v);
      else if (k == "enc_blocks") cfg.enc_blocks = std::stoul(v);
      else if (k == "proj_out") cfg.proj_out = std::stoul(v);
      else if (k == "mlp_hidden") {
        cfg.mlp_hidden.clear();
        std::istringstream hs(v);
        std::string tok;
        while (std::getline(hs, tok, ','))
          if (!tok.empty()) cfg.mlp_hidden.push_back(std::stoul(tok));
      } else if (k.rfind("adapter.", 0) == 0) {
        adapters[k.substr(8)] = std::stoul(v);
      }
    }
    Graphformer model(cfg);
    for (const auto& [key, m] : adapters) model.add_adapter(key, m);
    return model;
  }

  /// Encoder parameter views for a dataset key (the input FC is per-dataset
  /// in parallelizing mode, shared in stacking mode).
  transformer::EncoderParams<T> encoder_for(const std::string& key) {
    transformer::EncoderParams<T> enc;
    enc.tokens = cfg_.tokens;
    enc.d_model = cfg_.d_model;
    enc.heads = cfg_.heads;
    enc.input_fc =
        cfg_.mode == Mode::stacking
            ? &store_.at("transformer.input_fc")
            : &store_.at("transformer.adapter." + key + ".input_fc");
    for (std::size_t b = 0; b < cfg_.enc_blocks; ++b) {
      const std::string pre = "transformer.block" + std::to_string(b) + ".";
      transformer::BlockParams<T> blk;
      blk.wq = &store_.at(pre + "wq");
      blk.wk = &store_.at(pre + "wk");
      blk.wv = &store_.at(pre + "wv");
      blk.wo = &store_.at(pre + "wo");
      blk.ffn_w1 = &store_.at(pre + "ffn_w1");
      blk.ffn_w2 = &store_.at(pre + "ffn_w2");
      blk.ln1_gain = &store_.at(pre + "ln1_gain");
      blk.ln1_bias = &store_.at(pre + "ln1_bias");
      blk.ln2_gain = &store_.at(pre + "ln2_gain");
      blk.ln2_bias = &store_.at(pre + "ln2_bias");
      enc.blocks.push_back(blk);
    }
    return enc;
  }

 private:
  void add_init(const std::string& name, Shape shape) {
    Rng rng = make_rng(cfg_.init_seed, name);
    store_.add(name, detail::xavier_uniform(std::move(shape), rng)
                         .template cast<T>());
  }

  GraphformerConfig cfg_;
  ParamStore<T> store_;
  std::map<std::string, std::size_t> adapter_dims_;
};

// ---- capsule file io (binary, little-endian) ----

namespace capsule_io {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}
inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline void put_f32(std::ostream& os, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(os, v);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw Error("capsule: truncated file");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}
inline std::uint64_t get_u64(std::istream& is) {
  std::uint64_t lo = get_u32(is);
  std::uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}
inline std::string get_str(std::istream& is) {
  std::uint32_t n = get_u32(is);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw Error("capsule: truncated string");
  return s;
}
inline float get_f32(std::istream& is) {
  std::uint32_t v = get_u32(is);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

}  // namespace capsule_io

inline void write_capsule(const Capsule& cap, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("capsule: cannot write " + path);
  using namespace capsule_io;
  os.write("MPGC", 4);
  put_u32(os, cap.version);
  put_u64(os, cap.digest());
  put_str(os, cap.config_echo);
  put_str(os, cap.primary_adapter);
  put_u32(os, static_cast<std::uint32_t>(cap.sections.size()));
  for (const auto& [section, params] : cap.sections) {
    put_str(os, section);
    put_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
      put_str(os, name);
      put_u32(os, static_cast<std::uint32_t>(t.rank()));
      for (std::size_t d : t.shape)
        put_u32(os, static_cast<std::uint32_t>(d));
      for (float v : t.data) put_f32(os, v);
    }
  }
  if (!os) throw Error("capsule: write failed for " + path);
}

/// Reads a capsule, optionally restricted to a subset of sections. Corrupt
/// or mismatched files throw before anything is returned.
inline Capsule read_capsule(const std::string& path,
                            std::optional<std::set<std::string>> sections =
                                std::nullopt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("capsule: cannot open " + path);
  using namespace capsule_io;
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MPGC", 4) != 0)
    throw Error("capsule: bad magic in " + path);
  Capsule cap;
  cap.version = get_u32(is);
  if (cap.version != Capsule::kVersion)
    throw Error("capsule: unsupported version " +
                std::to_string(cap.version));
  const std::uint64_t stored_digest = get_u64(is);
  cap.config_echo = get_str(is);
  cap.primary_adapter = get_str(is);
  if (cap.digest() != stored_digest)
    throw Error("capsule: config digest mismatch in " + path);
  const std::uint32_t nsec = get_u32(is);
  for (std::uint32_t s = 0; s < nsec; ++s) {
    std::string section = get_str(is);
    const std::uint32_t nparams = get_u32(is);
    auto& list = cap.sections[section];
    for (std::uint32_t i = 0; i < nparams; ++i) {
      std::string name = get_str(is);
      const std::uint32_t rank = get_u32(is);
      Shape shape(rank);
      for (auto& d : shape) d = get_u32(is);
      Tensor<float> t(shape);
      for (auto& v : t.data) v = get_f32(is);
      list.emplace_back(std::move(name), std::move(t));
    }
  }
  if (sections) return cap.filtered(*sections);
  return cap;
}

}  // namespace mpgraf
