#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "moluq/autodiff.hpp"
#include "moluq/error.hpp"
#include "moluq/params.hpp"
#include "moluq/rng.hpp"
#include "moluq/smiles.hpp"
#include "moluq/tensor.hpp"

namespace moluq {

struct ModelConfig {
  int T = 3;                 // message-passing steps
  std::size_t hidden = 32;   // hidden state width
  std::size_t fp_len = 64;   // fingerprint length, 2*hidden by default
  std::size_t n_h = 32;      // head width
  double dropout_p = 0.2;
  std::uint64_t seed = 1;

  void validate() const {
    if (T < 1) fail(Err::BadConfig, "T must be >= 1");
    if (hidden == 0 || fp_len == 0 || n_h == 0) fail(Err::BadConfig, "zero layer width");
    if (dropout_p < 0.0 || dropout_p >= 1.0) fail(Err::BadConfig, "dropout_p outside [0,1)");
  }
};

// Molecule preprocessed for tape emission: directed edges, degree groups,
// per-edge bond features. Degree-0 atoms sit outside the message passing and
// read out through W.0 at every step.
struct CompiledMol {
  Tensor atom_features;       // (n, d_atom)
  Tensor edge_bond_features;  // (2*n_bonds, d_bond), one row per directed edge
  std::vector<std::size_t> src, dst;                 // directed edges w -> v
  std::vector<std::vector<std::size_t>> by_degree;   // [1..5] atom ids
  std::vector<std::size_t> active_ids;               // degree >= 1, group order
  Tensor deg0_features;                              // (n_deg0, d_atom)
  std::size_t n_atoms = 0;
  std::size_t n_deg0 = 0;
  int id = -1;  // caller-assigned dataset index

  std::size_t n_active() const { return active_ids.size(); }
};

inline CompiledMol compile_mol(const smiles::MolGraph& g, int id = -1) {
  if (!g.featurized()) fail(Err::ShapeMismatch, "compile_mol needs a featurized graph");
  CompiledMol m;
  m.id = id;
  m.n_atoms = g.n_atoms();
  m.atom_features = g.atom_features;
  m.edge_bond_features = Tensor(2 * g.n_bonds(), smiles::kBondFeatureDim);
  for (std::size_t e = 0; e < g.n_bonds(); ++e) {
    const auto& b = g.bonds[e];
    const double* feat = g.bond_features.row_ptr(e);
    for (int dir = 0; dir < 2; ++dir) {
      m.src.push_back(static_cast<std::size_t>(dir == 0 ? b.a : b.b));
      m.dst.push_back(static_cast<std::size_t>(dir == 0 ? b.b : b.a));
      double* row = m.edge_bond_features.row_ptr(2 * e + static_cast<std::size_t>(dir));
      for (std::size_t c = 0; c < smiles::kBondFeatureDim; ++c) row[c] = feat[c];
    }
  }
  m.by_degree.assign(smiles::kMaxDegree + 1, {});
  std::vector<std::size_t> deg0;
  for (std::size_t v = 0; v < g.n_atoms(); ++v) {
    const int d = g.atoms[v].degree;
    if (d == 0) deg0.push_back(v);
    else m.by_degree[static_cast<std::size_t>(d)].push_back(v);
  }
  for (std::size_t d = 1; d <= smiles::kMaxDegree; ++d)
    m.active_ids.insert(m.active_ids.end(), m.by_degree[d].begin(), m.by_degree[d].end());
  m.n_deg0 = deg0.size();
  m.deg0_features = Tensor(deg0.size(), smiles::kAtomFeatureDim);
  for (std::size_t i = 0; i < deg0.size(); ++i)
    std::copy(g.atom_features.row_ptr(deg0[i]),
              g.atom_features.row_ptr(deg0[i]) + smiles::kAtomFeatureDim,
              m.deg0_features.row_ptr(i));
  return m;
}

// Multiplicative masks with inverted-dropout scaling: entries are 0 (dropped)
// or 1/(1-p). h_masks cover post-activation hidden states (graph mode only).
struct DropoutMask {
  std::vector<Tensor> h_masks;  // t = 1..T, (n_active, hidden); empty in head-only mode
  Tensor fp_mask;               // (1, fp_len)
  Tensor head1_mask, head2_mask;  // (1, n_h)
};

inline Tensor draw_mask(std::size_t rows, std::size_t cols, double p, RngStream& rng) {
  Tensor t(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (double& v : t.data) v = rng.bernoulli(p) ? 0.0 : keep;
  return t;
}

inline DropoutMask sample_dropout_mask(const CompiledMol& mol, const ModelConfig& cfg,
                                       RngStream& rng, bool mask_hidden_states) {
  DropoutMask m;
  if (mask_hidden_states)
    for (int t = 1; t <= cfg.T; ++t)
      m.h_masks.push_back(draw_mask(mol.n_active(), cfg.hidden, cfg.dropout_p, rng));
  m.fp_mask = draw_mask(1, cfg.fp_len, cfg.dropout_p, rng);
  m.head1_mask = draw_mask(1, cfg.n_h, cfg.dropout_p, rng);
  m.head2_mask = draw_mask(1, cfg.n_h, cfg.dropout_p, rng);
  return m;
}

inline std::string h_name(int t, std::size_t degree) {
  return "H." + std::to_string(t) + "." + std::to_string(degree);
}
inline std::string w_name(int t) { return "W." + std::to_string(t); }

// message-passing weights H.t.d, input width (d_atom|hidden) + d_bond
inline void add_message_params(ParamStore& ps, const ModelConfig& cfg, RngStream& rng,
                               bool trainable = true) {
  for (int t = 1; t <= cfg.T; ++t) {
    const std::size_t in_w =
        (t == 1 ? smiles::kAtomFeatureDim : cfg.hidden) + smiles::kBondFeatureDim;
    for (std::size_t d = 1; d <= smiles::kMaxDegree; ++d)
      ps.add(h_name(t, d), uniform_init(in_w, cfg.hidden, rng), trainable);
  }
}

// readout matrices W.t plus the two-headed MLP
inline void add_readout_head_params(ParamStore& ps, const ModelConfig& cfg, RngStream& rng) {
  ps.add(w_name(0), uniform_init(smiles::kAtomFeatureDim, cfg.fp_len, rng));
  for (int t = 1; t <= cfg.T; ++t) ps.add(w_name(t), uniform_init(cfg.hidden, cfg.fp_len, rng));
  ps.add("head.w1", uniform_init(cfg.fp_len, cfg.n_h, rng));
  ps.add("head.b1", Tensor(1, cfg.n_h));
  ps.add("head.w2", uniform_init(cfg.n_h, cfg.n_h, rng));
  ps.add("head.b2", Tensor(1, cfg.n_h));
  ps.add("head.w3", uniform_init(cfg.n_h, 2, rng));
  ps.add("head.b3", Tensor(1, 2));
}

// Per-step hidden states for the active atoms (degree-group order), plus the
// same states scattered back to full atom order with zero rows for degree-0
// atoms. active[t-1] feeds the readout; full[t-1] feeds the next step.
struct PassValues {
  std::vector<ad::Value> active;
  std::vector<ad::Value> full;
};

inline PassValues emit_message_passing(ad::Tape& tape, const CompiledMol& mol,
                                       const ModelConfig& cfg,
                                       const DropoutMask* mask = nullptr) {
  PassValues out;
  if (mol.n_active() == 0) return out;
  ad::Value prev = tape.constant(mol.atom_features);  // (n, d_atom)
  const ad::Value bond_feats = tape.constant(mol.edge_bond_features);
  for (int t = 1; t <= cfg.T; ++t) {
    const ad::Value gathered = tape.gather_rows(prev, mol.src);
    const ad::Value messages = tape.concat_cols(gathered, bond_feats);
    const ad::Value summed = tape.scatter_add_rows(messages, mol.dst, mol.n_atoms);
    std::vector<ad::Value> parts;
    for (std::size_t d = 1; d <= smiles::kMaxDegree; ++d) {
      if (mol.by_degree[d].empty()) continue;
      const ad::Value rows = tape.gather_rows(summed, mol.by_degree[d]);
      parts.push_back(tape.matmul(rows, tape.param(h_name(t, d))));
    }
    ad::Value h = tape.sigmoid(tape.concat_rows(parts));
    if (mask && !mask->h_masks.empty())
      h = tape.mul(h, tape.constant(mask->h_masks[static_cast<std::size_t>(t - 1)]));
    out.active.push_back(h);
    prev = tape.scatter_add_rows(h, mol.active_ids, mol.n_atoms);
    out.full.push_back(prev);
  }
  return out;
}

// fp = sum over atoms and steps t in 0..T of softmax(W_t readout of h_v^t).
// Each softmax term sums to 1, so sum(fp) = n_atoms * (T+1). The readout is
// shared by the end-to-end model (tape-traced states) and the frozen-state
// model (constant states).
inline ad::Value emit_readout(ad::Tape& tape, const CompiledMol& mol, const ModelConfig& cfg,
                              std::span<const ad::Value> active_states,
                              const DropoutMask* mask = nullptr) {
  const ad::Value w0 = tape.param(w_name(0));
  const ad::Value x = tape.constant(mol.atom_features);
  ad::Value fp = tape.colsum(tape.softmax(tape.matmul(x, w0), 1));  // t = 0, every atom
  if (mol.n_active() == 0) {
    fp = tape.scale(fp, static_cast<double>(cfg.T + 1));
  } else {
    if (active_states.size() != static_cast<std::size_t>(cfg.T))
      fail(Err::ShapeMismatch, "readout needs one state per message-passing step");
    if (mol.n_deg0 > 0) {
      // isolated atoms never gain a learned state; they repeat the W.0 readout
      const ad::Value x0 = tape.constant(mol.deg0_features);
      const ad::Value r0 = tape.colsum(tape.softmax(tape.matmul(x0, w0), 1));
      fp = tape.add(fp, tape.scale(r0, static_cast<double>(cfg.T)));
    }
    for (int t = 1; t <= cfg.T; ++t) {
      const ad::Value logits =
          tape.matmul(active_states[static_cast<std::size_t>(t - 1)], tape.param(w_name(t)));
      fp = tape.add(fp, tape.colsum(tape.softmax(logits, 1)));
    }
  }
  if (mask) fp = tape.mul(fp, tape.constant(mask->fp_mask));
  return fp;
}

inline ad::Value emit_fingerprint(ad::Tape& tape, const CompiledMol& mol, const ModelConfig& cfg,
                                  const DropoutMask* mask = nullptr) {
  const PassValues states = emit_message_passing(tape, mol, cfg, mask);
  return emit_readout(tape, mol, cfg, states.active, mask);
}

struct TwoHead {
  ad::Value mu;  // (1,1)
  ad::Value s;   // (1,1), log of the aleatoric variance
};

inline TwoHead emit_head(ad::Tape& tape, ad::Value fp, const DropoutMask* mask = nullptr) {
  ad::Value h1 = tape.relu(tape.add(tape.matmul(fp, tape.param("head.w1")), tape.param("head.b1")));
  if (mask) h1 = tape.mul(h1, tape.constant(mask->head1_mask));
  ad::Value h2 = tape.relu(tape.add(tape.matmul(h1, tape.param("head.w2")), tape.param("head.b2")));
  if (mask) h2 = tape.mul(h2, tape.constant(mask->head2_mask));
  const ad::Value out = tape.add(tape.matmul(h2, tape.param("head.w3")), tape.param("head.b3"));
  return {tape.take_col(out, 0), tape.take_col(out, 1)};
}

// Surface shared by every trainable regressor: a parameter store whose
// trainable slots define the flat-vector layout, a tape emitter, a dropout
// mask sampler matching the model's mask placement, and a seeded re-init
// that must preserve slot order and shapes.
class Regressor {
 public:
  virtual ~Regressor() = default;

  virtual const ModelConfig& config() const = 0;
  virtual ParamStore& store() = 0;
  virtual TwoHead emit(ad::Tape& tape, const CompiledMol& mol, const DropoutMask* mask) = 0;
  virtual DropoutMask sample_mask(const CompiledMol& mol, RngStream& rng) const = 0;
  virtual void reinit(std::uint64_t seed) = 0;

  // forward-only convenience; fresh tape, finiteness enforced
  std::pair<double, double> predict_one(const CompiledMol& mol,
                                        const DropoutMask* mask = nullptr) {
    ad::Tape tape(&store());
    const TwoHead y = emit(tape, mol, mask);
    const double mu = tape.scalar(y.mu);
    const double s = tape.scalar(y.s);
    if (!std::isfinite(mu) || !std::isfinite(s))
      fail(Err::NonFiniteValue, "prediction diverged for molecule " + std::to_string(mol.id));
    return {mu, s};
  }
};

class GraphConvModel final : public Regressor {
 public:
  GraphConvModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    reinit(seed);
  }

  const ModelConfig& config() const override { return cfg_; }
  ParamStore& store() override { return store_; }
  const ParamStore& store() const { return store_; }

  TwoHead emit(ad::Tape& tape, const CompiledMol& mol, const DropoutMask* mask = nullptr) override {
    return emit_head(tape, emit_fingerprint(tape, mol, cfg_, mask), mask);
  }

  DropoutMask sample_mask(const CompiledMol& mol, RngStream& rng) const override {
    return sample_dropout_mask(mol, cfg_, rng, /*mask_hidden_states=*/true);
  }

  void reinit(std::uint64_t seed) override {
    store_ = ParamStore();
    RngStream rng = substream(seed, "init");
    add_message_params(store_, cfg_, rng);
    add_readout_head_params(store_, cfg_, rng);
  }

 private:
  ModelConfig cfg_;
  ParamStore store_;
};

// Plain forward pass of the message-passing stack in atom order; states[0] is
// the raw feature matrix, states[t] is (n, hidden) with zero rows for
// degree-0 atoms. Used by tests and by the frozen-embedding regressor.
inline std::vector<Tensor> hidden_states(ParamStore& store, const CompiledMol& mol,
                                         const ModelConfig& cfg) {
  ad::Tape tape(&store);
  std::vector<Tensor> out;
  out.push_back(mol.atom_features);
  const PassValues pass = emit_message_passing(tape, mol, cfg);
  for (int t = 1; t <= cfg.T; ++t) {
    if (pass.full.empty()) out.push_back(Tensor(mol.n_atoms, cfg.hidden));
    else out.push_back(tape.val(pass.full[static_cast<std::size_t>(t - 1)]));
  }
  return out;
}

}  // namespace moluq
