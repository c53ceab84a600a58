#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "mpgraf/rng.hpp"
#include "mpgraf/tensor.hpp"

namespace mpgraf {

struct Doc {
  std::string doc_id;
  std::vector<double> features;
  std::optional<int> label;  // relevance grade when annotated
};

struct QueryGroup {
  std::string query_id;
  std::vector<Doc> docs;
};

struct Dataset {
  std::vector<QueryGroup> groups;
  std::size_t feature_dim = 0;
  int grade_levels = 5;

  std::size_t pair_count() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.docs.size();
    return n;
  }
};

/// Whole-query labeled/unlabeled split.
struct LabelMask {
  std::set<std::string> labeled_query_ids;
  double ratio = 1.0;

  bool is_labeled(const std::string& qid) const {
    return labeled_query_ids.count(qid) > 0;
  }
};

namespace detail {

inline Error parse_error(std::size_t line_no, const std::string& what) {
  if (line_no == 0) return Error("letor parse: " + what);
  return Error("letor parse: line " + std::to_string(line_no) + ": " + what);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline double parse_double(std::string_view tok, std::size_t line_no) {
  double v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    throw parse_error(line_no, "bad numeric value '" + std::string(tok) + "'");
  if (!std::isfinite(v))
    throw parse_error(line_no, "non-finite value '" + std::string(tok) + "'");
  return v;
}

}  // namespace detail

struct SparsePair {
  int label = 0;
  std::string query_id;
  std::vector<std::pair<std::size_t, double>> features;  // 1-based ids
  std::string comment_doc_id;  // empty when the line carries no usable comment
};

/// Parses one `<label> qid:<id> <k>:<v> ... [# comment]` line without
/// densifying. Feature ids must be 1-based and strictly increasing.
inline SparsePair parse_letor_sparse(std::string_view line,
                                     std::size_t line_no = 0) {
  using detail::parse_error;
  SparsePair out;
  std::string_view body = line;
  std::string_view comment;
  if (auto pos = line.find('#'); pos != std::string_view::npos) {
    body = line.substr(0, pos);
    comment = line.substr(pos + 1);
  }
  auto toks = detail::split_ws(body);
  if (toks.size() < 2) throw parse_error(line_no, "expected label and qid");

  {
    int v = 0;
    auto [p, ec] = std::from_chars(toks[0].data(), toks[0].data() + toks[0].size(), v);
    if (ec != std::errc() || p != toks[0].data() + toks[0].size())
      throw parse_error(line_no, "bad label '" + std::string(toks[0]) + "'");
    if (v < 0) throw parse_error(line_no, "negative label");
    out.label = v;
  }
  if (toks[1].substr(0, 4) != "qid:" || toks[1].size() == 4)
    throw parse_error(line_no, "expected qid:<id>, got '" +
                                   std::string(toks[1]) + "'");
  out.query_id = std::string(toks[1].substr(4));

  std::size_t prev_id = 0;
  for (std::size_t t = 2; t < toks.size(); ++t) {
    auto tok = toks[t];
    auto colon = tok.find(':');
    if (colon == std::string_view::npos)
      throw parse_error(line_no, "expected <id>:<value>, got '" +
                                     std::string(tok) + "'");
    std::size_t id = 0;
    auto key = tok.substr(0, colon);
    auto [p, ec] = std::from_chars(key.data(), key.data() + key.size(), id);
    if (ec != std::errc() || p != key.data() + key.size() || id == 0)
      throw parse_error(line_no, "bad feature id '" + std::string(key) + "'");
    if (id <= prev_id)
      throw parse_error(line_no, "feature ids must be strictly increasing");
    prev_id = id;
    out.features.emplace_back(id,
                              detail::parse_double(tok.substr(colon + 1),
                                                   line_no));
  }

  auto ctoks = detail::split_ws(comment);
  if (ctoks.size() >= 3 && ctoks[0] == "docid" && ctoks[1] == "=")
    out.comment_doc_id = std::string(ctoks[2]);
  else if (!ctoks.empty())
    out.comment_doc_id = std::string(ctoks[0]);
  return out;
}

/// Densified form of parse_letor_sparse: absent ids zero-fill, length =
/// feature_dim.
inline std::tuple<int, std::string, std::vector<double>> parse_letor_line(
    std::string_view line, std::size_t feature_dim, std::size_t line_no = 0) {
  SparsePair sp = parse_letor_sparse(line, line_no);
  std::vector<double> dense(feature_dim, 0.0);
  for (auto& [id, v] : sp.features) {
    if (id > feature_dim)
      throw detail::parse_error(line_no,
                                "feature id " + std::to_string(id) +
                                    " exceeds dimension " +
                                    std::to_string(feature_dim));
    dense[id - 1] = v;
  }
  return {sp.label, std::move(sp.query_id), std::move(dense)};
}

/// Loads a LETOR/SVMLight file, grouping pairs by query id in file order.
/// Blank lines and full-line `#` comments are skipped. When feature_dim is 0
/// the dimension is inferred as the maximum feature id present.
inline Dataset load_dataset_stream(std::istream& in,
                                   std::size_t feature_dim = 0,
                                   int grade_levels = 5) {
  std::vector<SparsePair> pairs;
  std::vector<std::size_t> line_nos;
  std::string line;
  std::size_t line_no = 0;
  std::size_t max_id = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view sv = line;
    std::size_t i = 0;
    while (i < sv.size() && (sv[i] == ' ' || sv[i] == '\t')) ++i;
    if (i == sv.size() || sv[i] == '#') continue;
    SparsePair sp = parse_letor_sparse(sv, line_no);
    if (!sp.features.empty())
      max_id = std::max(max_id, sp.features.back().first);
    pairs.push_back(std::move(sp));
    line_nos.push_back(line_no);
  }
  if (pairs.empty()) throw Error("letor load: empty dataset");
  if (feature_dim == 0) feature_dim = max_id;
  if (max_id > feature_dim)
    throw Error("letor load: feature id " + std::to_string(max_id) +
                " exceeds declared dimension " + std::to_string(feature_dim));

  Dataset ds;
  ds.feature_dim = feature_dim;
  ds.grade_levels = grade_levels;
  std::map<std::string, std::size_t> group_index;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    SparsePair& sp = pairs[k];
    auto [it, inserted] =
        group_index.try_emplace(sp.query_id, ds.groups.size());
    if (inserted) ds.groups.push_back(QueryGroup{sp.query_id, {}});
    QueryGroup& g = ds.groups[it->second];
    Doc d;
    d.doc_id = sp.comment_doc_id.empty()
                   ? "L" + std::to_string(line_nos[k])
                   : sp.comment_doc_id;
    d.label = sp.label;
    d.features.assign(feature_dim, 0.0);
    for (auto& [id, v] : sp.features) d.features[id - 1] = v;
    for (const Doc& other : g.docs)
      if (other.doc_id == d.doc_id)
        throw Error("letor load: duplicate doc id '" + d.doc_id +
                    "' in query " + g.query_id);
    g.docs.push_back(std::move(d));
  }
  return ds;
}

inline Dataset load_dataset(const std::string& path,
                            std::size_t feature_dim = 0,
                            int grade_levels = 5) {
  std::ifstream in(path);
  if (!in) throw Error("letor load: cannot open " + path);
  return load_dataset_stream(in, feature_dim, grade_levels);
}

namespace detail {
inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}
}  // namespace detail

/// Re-emits a dataset in the same text format (dense features, doc id as
/// trailing comment). Docs missing a label are written with grade 0.
inline void dump_dataset(const Dataset& ds, std::ostream& out) {
  for (const auto& g : ds.groups)
    for (const auto& d : g.docs) {
      out << d.label.value_or(0) << " qid:" << g.query_id;
      for (std::size_t i = 0; i < d.features.size(); ++i)
        out << ' ' << (i + 1) << ':' << detail::format_double(d.features[i]);
      out << " # " << d.doc_id << '\n';
    }
}

/// Per-query min-max scaling of each feature dimension into [0,1]; constant
/// dimensions map to 0. Idempotent.
inline Dataset normalize_features(Dataset ds) {
  for (auto& g : ds.groups) {
    if (g.docs.empty()) continue;
    for (std::size_t f = 0; f < ds.feature_dim; ++f) {
      double lo = g.docs[0].features[f], hi = lo;
      for (const auto& d : g.docs) {
        lo = std::min(lo, d.features[f]);
        hi = std::max(hi, d.features[f]);
      }
      const double range = hi - lo;
      for (auto& d : g.docs)
        d.features[f] = range > 0 ? (d.features[f] - lo) / range : 0.0;
    }
  }
  return ds;
}

/// Picks round(ratio * #groups) whole queries (at least one) as the labeled
/// set. Same seed, same mask.
inline LabelMask split_labeled(const Dataset& ds, double ratio,
                               std::uint64_t seed) {
  if (!(ratio > 0.0) || ratio > 1.0)
    throw Error("split_labeled: ratio must be in (0,1], got " +
                std::to_string(ratio));
  const std::size_t n = ds.groups.size();
  std::size_t count = static_cast<std::size_t>(std::llround(ratio * n));
  count = std::max<std::size_t>(1, std::min(count, n));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng = make_rng(seed, "split_labeled");
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = uniform_index(rng, i);
    std::swap(idx[i - 1], idx[j]);
  }
  LabelMask mask;
  mask.ratio = ratio;
  for (std::size_t i = 0; i < count; ++i)
    mask.labeled_query_ids.insert(ds.groups[idx[i]].query_id);
  return mask;
}

}  // namespace mpgraf
