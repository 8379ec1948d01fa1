#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "moluq/bayes.hpp"
#include "moluq/error.hpp"
#include "moluq/graphconv.hpp"
#include "moluq/semisup.hpp"

namespace moluq {

// Every run-level knob in one flat struct. Snapshots round-trip through a
// key = value text format; together with the seed they pin a run exactly.
struct RunConfig {
  int version = 1;

  // model architecture
  std::string model = "graphconv";  // graphconv | semisup
  std::string inference = "map";    // map | dropout | svgd
  int radius = 3;                   // message passing steps T
  int hidden = 32;
  int fp_len = 64;
  int n_h = 32;
  double dropout_p = 0.2;

  // supervised training
  int epochs = 30;
  int batch_size = 32;
  double lr = 1e-3;
  double lambda = 1e-2;
  bool adam = true;

  // dropout inference
  int n_mc = 50;

  // svgd inference
  int n_particles = 10;
  double eta = 1e-3;
  double fixed_h = 0.0;  // 0 selects the median heuristic

  // unsupervised embedding phase
  int embed_epochs = 20;
  double embed_lr = 1e-3;
  bool negative_sampling = false;
  int neg_k = 5;

  // data handling
  std::string split = "random";  // random | scaffold
  double train_frac = 0.8;
  double val_frac = 0.0;
  std::string smiles_column = "smiles";
  std::string target_column = "target";

  // active learning
  std::string al_strategy = "active";  // active | random
  std::string al_pool = "random";      // random | scaffold
  double al_test_frac = 0.2;
  double al_init_frac = 0.25;
  double al_batch_frac = 0.025;
  int al_iterations = 10;

  std::uint64_t seed = 1;

  ModelConfig model_config() const {
    ModelConfig m;
    m.T = radius;
    m.hidden = hidden;
    m.fp_len = fp_len;
    m.n_h = n_h;
    m.dropout_p = dropout_p;
    return m;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.lr = lr;
    t.lambda = lambda;
    t.adam = adam;
    t.dropout = inference == "dropout";
    t.seed = seed;
    return t;
  }

  SVGDConfig svgd_config() const {
    SVGDConfig s;
    s.n_particles = n_particles;
    s.epochs = epochs;
    s.batch_size = batch_size;
    s.eta = eta;
    s.lambda = lambda;
    s.adam = adam;
    s.fixed_h = fixed_h;
    s.seed = seed;
    return s;
  }

  EmbedConfig embed_config() const {
    EmbedConfig e;
    e.epochs = embed_epochs;
    e.lr = embed_lr;
    e.negative_sampling = negative_sampling;
    e.neg_k = neg_k;
    e.seed = seed;
    return e;
  }

  void validate() const {
    if (version != 1) fail(Err::BadConfig, "unsupported config version " + std::to_string(version));
    if (model != "graphconv" && model != "semisup")
      fail(Err::BadConfig, "model must be graphconv or semisup, got '" + model + "'");
    if (inference != "map" && inference != "dropout" && inference != "svgd")
      fail(Err::BadConfig, "inference must be map, dropout, or svgd, got '" + inference + "'");
    if (split != "random" && split != "scaffold")
      fail(Err::BadConfig, "split must be random or scaffold, got '" + split + "'");
    if (radius < 0 || hidden < 1 || fp_len < 1 || n_h < 1)
      fail(Err::BadConfig, "architecture sizes must be positive");
    if (dropout_p < 0.0 || dropout_p >= 1.0) fail(Err::BadConfig, "dropout_p must lie in [0,1)");
    if (epochs < 0 || batch_size < 0 || embed_epochs < 0)
      fail(Err::BadConfig, "epoch and batch counts must be non-negative");
    if (lr <= 0.0 || eta <= 0.0 || embed_lr <= 0.0)
      fail(Err::BadConfig, "learning rates must be positive");
    if (lambda < 0.0) fail(Err::BadConfig, "lambda must be non-negative");
    if (n_mc < 1) fail(Err::BadConfig, "n_mc must be at least 1");
    if (n_particles < 1) fail(Err::BadConfig, "n_particles must be at least 1");
    if (fixed_h < 0.0) fail(Err::BadConfig, "fixed_h must be non-negative");
    if (neg_k < 1) fail(Err::BadConfig, "neg_k must be at least 1");
    if (!(train_frac > 0.0) || train_frac > 1.0 || val_frac < 0.0 ||
        train_frac + val_frac > 1.0)
      fail(Err::FractionInvalid, "split fractions must lie in (0,1] with sum <= 1");
    if (al_strategy != "active" && al_strategy != "random")
      fail(Err::BadConfig, "al_strategy must be active or random, got '" + al_strategy + "'");
    if (al_pool != "random" && al_pool != "scaffold")
      fail(Err::BadConfig, "al_pool must be random or scaffold, got '" + al_pool + "'");
    if (!(al_test_frac > 0.0) || al_test_frac >= 1.0 || !(al_init_frac > 0.0) ||
        al_init_frac >= 1.0 || !(al_batch_frac > 0.0) || al_batch_frac > 1.0)
      fail(Err::FractionInvalid, "active-learning fractions out of range");
    if (al_iterations < 0) fail(Err::BadConfig, "al_iterations must be non-negative");
  }
};

namespace detail {

inline std::string trim_config(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

struct ConfigField {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing text");
    return out;
  } catch (const std::exception&) {
    fail(Err::BadConfig, "key '" + key + "' needs an integer, got '" + v + "'");
  }
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing text");
    return out;
  } catch (const std::exception&) {
    fail(Err::BadConfig, "key '" + key + "' needs a real number, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  fail(Err::BadConfig, "key '" + key + "' needs true or false, got '" + v + "'");
}

inline const std::vector<ConfigField>& config_fields() {
  auto int_field = [](const std::string& key, int RunConfig::* member) {
    return ConfigField{key,
                       [member](const RunConfig& c) { return std::to_string(c.*member); },
                       [key, member](RunConfig& c, const std::string& v) {
                         c.*member = static_cast<int>(parse_int(key, v));
                       }};
  };
  auto real_field = [](const std::string& key, double RunConfig::* member) {
    return ConfigField{key,
                       [member](const RunConfig& c) {
                         std::ostringstream os;
                         os.precision(17);
                         os << c.*member;
                         return os.str();
                       },
                       [key, member](RunConfig& c, const std::string& v) {
                         c.*member = parse_real(key, v);
                       }};
  };
  auto bool_field = [](const std::string& key, bool RunConfig::* member) {
    return ConfigField{key,
                       [member](const RunConfig& c) { return c.*member ? "true" : "false"; },
                       [key, member](RunConfig& c, const std::string& v) {
                         c.*member = parse_bool(key, v);
                       }};
  };
  auto text_field = [](const std::string& key, std::string RunConfig::* member) {
    return ConfigField{key, [member](const RunConfig& c) { return c.*member; },
                       [member](RunConfig& c, const std::string& v) { c.*member = v; }};
  };
  static const std::vector<ConfigField> fields = {
      int_field("version", &RunConfig::version),
      text_field("model", &RunConfig::model),
      text_field("inference", &RunConfig::inference),
      int_field("radius", &RunConfig::radius),
      int_field("hidden", &RunConfig::hidden),
      int_field("fp_len", &RunConfig::fp_len),
      int_field("n_h", &RunConfig::n_h),
      real_field("dropout_p", &RunConfig::dropout_p),
      int_field("epochs", &RunConfig::epochs),
      int_field("batch_size", &RunConfig::batch_size),
      real_field("lr", &RunConfig::lr),
      real_field("lambda", &RunConfig::lambda),
      bool_field("adam", &RunConfig::adam),
      int_field("n_mc", &RunConfig::n_mc),
      int_field("n_particles", &RunConfig::n_particles),
      real_field("eta", &RunConfig::eta),
      real_field("fixed_h", &RunConfig::fixed_h),
      int_field("embed_epochs", &RunConfig::embed_epochs),
      real_field("embed_lr", &RunConfig::embed_lr),
      bool_field("negative_sampling", &RunConfig::negative_sampling),
      int_field("neg_k", &RunConfig::neg_k),
      text_field("split", &RunConfig::split),
      real_field("train_frac", &RunConfig::train_frac),
      real_field("val_frac", &RunConfig::val_frac),
      text_field("smiles_column", &RunConfig::smiles_column),
      text_field("target_column", &RunConfig::target_column),
      text_field("al_strategy", &RunConfig::al_strategy),
      text_field("al_pool", &RunConfig::al_pool),
      real_field("al_test_frac", &RunConfig::al_test_frac),
      real_field("al_init_frac", &RunConfig::al_init_frac),
      real_field("al_batch_frac", &RunConfig::al_batch_frac),
      int_field("al_iterations", &RunConfig::al_iterations),
      ConfigField{"seed",
                  [](const RunConfig& c) { return std::to_string(c.seed); },
                  [](RunConfig& c, const std::string& v) {
                    try {
                      std::size_t used = 0;
                      c.seed = std::stoull(v, &used);
                      if (used != v.size()) throw std::invalid_argument("trailing text");
                    } catch (const std::exception&) {
                      fail(Err::BadConfig, "key 'seed' needs an unsigned integer, got '" + v + "'");
                    }
                  }},
  };
  return fields;
}

}  // namespace detail

inline void write_config(const RunConfig& cfg, std::ostream& out) {
  for (const detail::ConfigField& f : detail::config_fields())
    out << f.key << " = " << f.get(cfg) << '\n';
}

inline void save_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(Err::FileNotFound, "cannot write " + path);
  write_config(cfg, out);
}

// Parses key = value lines on top of the defaults. '#' starts a comment;
// blank lines are skipped; unknown keys and malformed values are errors.
inline RunConfig read_config(std::istream& in) {
  RunConfig cfg;
  std::map<std::string, const detail::ConfigField*> by_key;
  for (const detail::ConfigField& f : detail::config_fields()) by_key[f.key] = &f;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string stripped = detail::trim_config(line);
    if (stripped.empty()) continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      fail(Err::BadConfig, "line " + std::to_string(line_no) + " is not key = value: '" +
                               stripped + "'");
    const std::string key = detail::trim_config(stripped.substr(0, eq));
    const std::string value = detail::trim_config(stripped.substr(eq + 1));
    auto it = by_key.find(key);
    if (it == by_key.end()) fail(Err::BadConfig, "unknown config key '" + key + "'");
    it->second->set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Err::FileNotFound, "cannot open " + path);
  return read_config(in);
}

}  // namespace moluq
