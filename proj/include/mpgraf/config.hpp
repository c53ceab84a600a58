#pragma once

#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mpgraf/graphformer.hpp"
#include "mpgraf/rippling.hpp"
#include "mpgraf/trainer.hpp"

namespace mpgraf {

/// One experiment: datasets, label ratio, model/ripple/train knobs, output.
/// Serialized as line-oriented `key = value` text with [section] headers.
struct ExperimentSpec {
  // [data]
  std::vector<std::string> pretrain_paths;
  std::string target_path;
  double ratio = 0.1;
  double test_fraction = 0.15;
  int grade_levels = 5;
  // [model]
  GraphformerConfig model;
  // [train]
  TrainConfig train;
  // [ripple]
  RippleConfig ripple;
  // [output]
  std::string out_dir = "out";
  std::uint64_t seed = 0;

  /// Seed fan-out: one master seed drives masking, ripples and training.
  void propagate_seed() {
    train.seed = seed;
    ripple.seed = seed;
  }

  void validate() const {
    if (target_path.empty()) throw Error("spec: data.target is required");
    if (!(ratio > 0.0) || ratio > 1.0)
      throw Error("spec: ratio must lie in (0,1]");
    if (!(test_fraction >= 0.0) || test_fraction >= 1.0)
      throw Error("spec: test_fraction must lie in [0,1)");
    model.validate();
    train.validate();
    ripple.validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ','))
    if (!trim(tok).empty()) out.push_back(trim(tok));
  return out;
}

inline std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& tok : split_csv(s)) out.push_back(std::stoul(tok));
  return out;
}

}  // namespace detail

inline void write_config(const ExperimentSpec& s, std::ostream& os) {
  os << "[data]\n";
  os << "target = " << s.target_path << "\n";
  os << "pretrain = ";
  for (std::size_t i = 0; i < s.pretrain_paths.size(); ++i)
    os << (i ? "," : "") << s.pretrain_paths[i];
  os << "\n";
  os << "ratio = " << s.ratio << "\n";
  os << "test_fraction = " << s.test_fraction << "\n";
  os << "grade_levels = " << s.grade_levels << "\n\n";

  os << "[model]\n";
  os << "mode = " << mode_name(s.model.mode) << "\n";
  os << "gnn_width = " << s.model.gnn_width << "\n";
  os << "gnn_layers = " << s.model.gnn_layers << "\n";
  os << "tokens = " << s.model.tokens << "\n";
  os << "d_model = " << s.model.d_model << "\n";
  os << "heads = " << s.model.heads << "\n";
  os << "d_ff = " << s.model.d_ff << "\n";
  os << "enc_blocks = " << s.model.enc_blocks << "\n";
  os << "mlp_hidden = ";
  for (std::size_t i = 0; i < s.model.mlp_hidden.size(); ++i)
    os << (i ? "," : "") << s.model.mlp_hidden[i];
  os << "\n";
  os << "proj_out = " << s.model.proj_out << "\n";
  os << "init_seed = " << s.model.init_seed << "\n\n";

  os << "[train]\n";
  os << "loss = " << loss_name(s.train.loss) << "\n";
  os << "epochs_pretrain = " << s.train.epochs_pretrain << "\n";
  os << "epochs_phase_a = " << s.train.epochs_phase_a << "\n";
  os << "epochs_phase_b = " << s.train.epochs_phase_b << "\n";
  os << "lr_pretrain = " << s.train.lr_pretrain << "\n";
  os << "lr_phase_a = " << s.train.lr_phase_a << "\n";
  os << "lr_phase_b = " << s.train.lr_phase_b << "\n";
  os << "batch_queries = " << s.train.batch_queries << "\n";
  os << "loss_k = " << s.train.loss_k << "\n";
  os << "tau = " << s.train.tau << "\n";
  os << "patience = " << s.train.patience << "\n";
  os << "val_fraction = " << s.train.val_fraction << "\n\n";

  os << "[ripple]\n";
  os << "knn_k = " << s.ripple.knn_k << "\n";
  os << "top_fraction = " << s.ripple.top_fraction << "\n";
  os << "bottom_fraction = " << s.ripple.bottom_fraction << "\n";
  os << "relevance_floor = " << s.ripple.relevance_floor << "\n";
  os << "negatives_per_page = " << s.ripple.negatives_per_page << "\n";
  os << "negative_score = " << s.ripple.negative_score << "\n\n";

  os << "[output]\n";
  os << "out = " << s.out_dir << "\n";
  os << "seed = " << s.seed << "\n";
}

inline ExperimentSpec parse_config(std::istream& is) {
  ExperimentSpec spec;
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = t.substr(1, t.size() - 2);
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw Error("config: line " + std::to_string(line_no) +
                  ": expected key = value");
    std::string key = detail::trim(t.substr(0, eq));
    std::string value = detail::trim(t.substr(eq + 1));
    const std::string qual = section + "." + key;
    try {
      if (qual == "data.target") spec.target_path = value;
      else if (qual == "data.pretrain")
        spec.pretrain_paths = detail::split_csv(value);
      else if (qual == "data.ratio") spec.ratio = std::stod(value);
      else if (qual == "data.test_fraction")
        spec.test_fraction = std::stod(value);
      else if (qual == "data.grade_levels")
        spec.grade_levels = std::stoi(value);
      else if (qual == "model.mode") spec.model.mode = parse_mode(value);
      else if (qual == "model.gnn_width")
        spec.model.gnn_width = std::stoul(value);
      else if (qual == "model.gnn_layers")
        spec.model.gnn_layers = std::stoul(value);
      else if (qual == "model.tokens") spec.model.tokens = std::stoul(value);
      else if (qual == "model.d_model") spec.model.d_model = std::stoul(value);
      else if (qual == "model.heads") spec.model.heads = std::stoul(value);
      else if (qual == "model.d_ff") spec.model.d_ff = std::stoul(value);
      else if (qual == "model.enc_blocks")
        spec.model.enc_blocks = std::stoul(value);
      else if (qual == "model.mlp_hidden")
        spec.model.mlp_hidden = detail::parse_size_list(value);
      else if (qual == "model.proj_out")
        spec.model.proj_out = std::stoul(value);
      else if (qual == "model.init_seed")
        spec.model.init_seed = std::stoull(value);
      else if (qual == "train.loss") spec.train.loss = parse_loss(value);
      else if (qual == "train.epochs_pretrain")
        spec.train.epochs_pretrain = std::stoul(value);
      else if (qual == "train.epochs_phase_a")
        spec.train.epochs_phase_a = std::stoul(value);
      else if (qual == "train.epochs_phase_b")
        spec.train.epochs_phase_b = std::stoul(value);
      else if (qual == "train.lr_pretrain")
        spec.train.lr_pretrain = std::stod(value);
      else if (qual == "train.lr_phase_a")
        spec.train.lr_phase_a = std::stod(value);
      else if (qual == "train.lr_phase_b")
        spec.train.lr_phase_b = std::stod(value);
      else if (qual == "train.batch_queries")
        spec.train.batch_queries = std::stoul(value);
      else if (qual == "train.loss_k") spec.train.loss_k = std::stoul(value);
      else if (qual == "train.tau") spec.train.tau = std::stod(value);
      else if (qual == "train.patience")
        spec.train.patience = std::stoul(value);
      else if (qual == "train.val_fraction")
        spec.train.val_fraction = std::stod(value);
      else if (qual == "ripple.knn_k") spec.ripple.knn_k = std::stoul(value);
      else if (qual == "ripple.top_fraction")
        spec.ripple.top_fraction = std::stod(value);
      else if (qual == "ripple.bottom_fraction")
        spec.ripple.bottom_fraction = std::stod(value);
      else if (qual == "ripple.relevance_floor")
        spec.ripple.relevance_floor = std::stoi(value);
      else if (qual == "ripple.negatives_per_page")
        spec.ripple.negatives_per_page = std::stoul(value);
      else if (qual == "ripple.negative_score")
        spec.ripple.negative_score = std::stoi(value);
      else if (qual == "output.out") spec.out_dir = value;
      else if (qual == "output.seed") spec.seed = std::stoull(value);
      else
        throw Error("config: line " + std::to_string(line_no) +
                    ": unknown key '" + qual + "'");
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      throw Error("config: line " + std::to_string(line_no) +
                  ": bad value for '" + qual + "'");
    }
  }
  spec.propagate_seed();
  return spec;
}

inline ExperimentSpec load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open " + path);
  return parse_config(in);
}

/// Digest of everything except the table axes (loss, mode, ratio), the seed
/// and the output directory: rows that belong in one report share it.
inline std::uint64_t config_digest(const ExperimentSpec& s) {
  ExperimentSpec canon = s;
  canon.train.loss = LossKind::rmse;
  canon.model.mode = Mode::stacking;
  canon.ratio = 0;
  canon.seed = 0;
  canon.train.seed = 0;
  canon.ripple.seed = 0;
  canon.out_dir = "";
  std::ostringstream os;
  write_config(canon, os);
  return fnv1a64(os.str());
}

}  // namespace mpgraf
