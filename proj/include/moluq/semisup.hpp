#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "moluq/autodiff.hpp"
#include "moluq/bayes.hpp"
#include "moluq/error.hpp"
#include "moluq/graphconv.hpp"
#include "moluq/params.hpp"
#include "moluq/rng.hpp"
#include "moluq/tensor.hpp"

namespace moluq {

struct EmbedConfig {
  int epochs = 20;
  double lr = 1e-3;
  bool negative_sampling = false;   // contrast against sampled molecules instead of the corpus
  int neg_k = 5;                    // contrast molecules per term when sampling
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs < 0 || !(lr > 0.0) || !std::isfinite(lr) || neg_k < 1)
      fail(Err::BadConfig, "invalid embedding configuration");
  }
};

struct EmbedResult {
  ParamStore params;               // message-passing weights plus "u", one row per corpus molecule
  std::vector<double> epoch_loss;  // mean per-molecule negative log likelihood
  double final_objective = 0.0;    // corpus log likelihood at the final parameters
};

namespace detail {

// Negative log likelihood of one molecule's learned states identifying their
// owner: softmax over the full corpus, or over {owner, sampled contrasts}
// with the owner in column 0.
inline ad::Value emit_ownership_nll(ad::Tape& tape, const CompiledMol& mol, std::size_t own,
                                    const ModelConfig& mcfg,
                                    const std::vector<std::size_t>* contrast) {
  const PassValues pass = emit_message_passing(tape, mol, mcfg, nullptr);
  ad::Value u = tape.param("u");
  std::size_t own_col = own;
  if (contrast != nullptr) {
    u = tape.gather_rows(u, *contrast);
    own_col = 0;
  }
  ad::Value total{-1};
  for (std::size_t t = 0; t < pass.active.size(); ++t) {
    const ad::Value logits = tape.matmul_nt(pass.active[t], u);
    const ad::Value own_ll = tape.sum(tape.take_col(tape.log_softmax(logits, 1), own_col));
    total = (t == 0) ? own_ll : tape.add(total, own_ll);
  }
  return tape.scale(total, -1.0);
}

}  // namespace detail

// Unsupervised co-training of the message-passing weights and one vector per
// corpus molecule: every learned atom state is asked to identify, through a
// softmax over molecule vectors, which molecule it came from. Molecules
// whose atoms are all isolated have no learned states and contribute
// nothing.
inline EmbedResult train_embeddings(const std::vector<CompiledMol>& corpus,
                                    const ModelConfig& mcfg, const EmbedConfig& ecfg) {
  mcfg.validate();
  ecfg.validate();
  if (corpus.size() < 2)
    fail(Err::CorpusTooSmall, "embedding corpus needs at least 2 molecules, got " +
                                  std::to_string(corpus.size()));
  const std::size_t n = corpus.size();

  EmbedResult res;
  RngStream init_rng = substream(ecfg.seed, "embed-init");
  add_message_params(res.params, mcfg, init_rng);
  res.params.add("u", uniform_init(n, mcfg.hidden, init_rng));

  RngStream neg_rng = substream(ecfg.seed, "embed-negatives");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (int epoch = 0; epoch < ecfg.epochs; ++epoch) {
    RngStream shuffle_rng = substream(ecfg.seed, "embed-shuffle", static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t contributing = 0;
    for (std::size_t m : order) {
      if (corpus[m].n_active() == 0) continue;
      std::vector<std::size_t> contrast;
      if (ecfg.negative_sampling) {
        contrast.push_back(m);
        const std::size_t want = std::min(static_cast<std::size_t>(ecfg.neg_k), n - 1);
        while (contrast.size() < want + 1) {
          const std::size_t j = neg_rng.below(n);
          if (std::find(contrast.begin(), contrast.end(), j) == contrast.end())
            contrast.push_back(j);
        }
      }
      res.params.zero_grad();
      ad::Tape tape(&res.params);
      const ad::Value loss = detail::emit_ownership_nll(
          tape, corpus[m], m, mcfg, ecfg.negative_sampling ? &contrast : nullptr);
      tape.backward(loss);
      res.params.adam_step(ecfg.lr);
      loss_sum += tape.scalar(loss);
      ++contributing;
    }
    res.epoch_loss.push_back(contributing > 0 ? loss_sum / static_cast<double>(contributing)
                                              : 0.0);
  }

  // reported objective always uses the full-corpus softmax
  double total = 0.0;
  for (std::size_t m = 0; m < n; ++m) {
    if (corpus[m].n_active() == 0) continue;
    ad::Tape tape(&res.params);
    total -= tape.scalar(detail::emit_ownership_nll(tape, corpus[m], m, mcfg, nullptr));
  }
  res.final_objective = total;
  return res;
}

// Plain-loop re-evaluation of the corpus log likelihood: forward states, dot
// products against every molecule vector, max-shifted log-sum-exp. Kept free
// of the tape ops so it can cross-check the trainer's reported objective.
inline double evaluate_embedding_objective(ParamStore& params,
                                           const std::vector<CompiledMol>& corpus,
                                           const ModelConfig& mcfg) {
  if (corpus.size() < 2) fail(Err::CorpusTooSmall, "embedding corpus needs at least 2 molecules");
  const Tensor& u = params.value("u");
  if (u.rows != corpus.size())
    fail(Err::LengthMismatch, "molecule vector table does not match the corpus");
  double total = 0.0;
  for (std::size_t m = 0; m < corpus.size(); ++m) {
    const CompiledMol& mol = corpus[m];
    if (mol.n_active() == 0) continue;
    const std::vector<Tensor> states = hidden_states(params, mol, mcfg);
    for (int t = 1; t <= mcfg.T; ++t) {
      const Tensor& st = states[static_cast<std::size_t>(t)];
      for (std::size_t v : mol.active_ids) {
        const double* h = st.row_ptr(v);
        double zmax = -std::numeric_limits<double>::infinity();
        std::vector<double> z(u.rows);
        for (std::size_t c = 0; c < u.rows; ++c) {
          double dot = 0.0;
          const double* ur = u.row_ptr(c);
          for (std::size_t k = 0; k < u.cols; ++k) dot += h[k] * ur[k];
          z[c] = dot;
          zmax = std::max(zmax, dot);
        }
        double lse = 0.0;
        for (double zc : z) lse += std::exp(zc - zmax);
        total += z[m] - (zmax + std::log(lse));
      }
    }
  }
  return total;
}

// Ownership probabilities for one molecule's learned states: one row per
// (step, active atom) pair in step-major degree-group order, one column per
// corpus molecule, each row softmax-normalized.
inline Tensor state_ownership_probs(ParamStore& params, const CompiledMol& mol,
                                    const ModelConfig& mcfg) {
  const Tensor& u = params.value("u");
  const std::vector<Tensor> states = hidden_states(params, mol, mcfg);
  Tensor out(static_cast<std::size_t>(mcfg.T) * mol.n_active(), u.rows);
  std::size_t r = 0;
  for (int t = 1; t <= mcfg.T; ++t) {
    const Tensor& st = states[static_cast<std::size_t>(t)];
    for (std::size_t v : mol.active_ids) {
      const double* h = st.row_ptr(v);
      double* row = out.row_ptr(r++);
      double zmax = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < u.rows; ++c) {
        double dot = 0.0;
        const double* ur = u.row_ptr(c);
        for (std::size_t k = 0; k < u.cols; ++k) dot += h[k] * ur[k];
        row[c] = dot;
        zmax = std::max(zmax, dot);
      }
      double lse = 0.0;
      for (std::size_t c = 0; c < u.rows; ++c) lse += std::exp(row[c] - zmax);
      for (std::size_t c = 0; c < u.rows; ++c) row[c] = std::exp(row[c] - zmax) / lse;
    }
  }
  return out;
}

// Regressor over frozen message-passing weights: hidden states are constants
// computed once per molecule id, so supervised training touches only the
// readout and head. Re-init redraws those while the frozen weights and the
// state cache survive. Caching requires molecule ids to be unique;
// negative ids bypass the cache.
class SemiSupModel final : public Regressor {
 public:
  SemiSupModel(const ModelConfig& cfg, const ParamStore& embed_params, std::uint64_t seed)
      : cfg_(cfg) {
    cfg_.validate();
    for (int t = 1; t <= cfg_.T; ++t)
      for (std::size_t d = 1; d <= smiles::kMaxDegree; ++d) {
        const std::string name = h_name(t, d);
        frozen_.emplace_back(name, embed_params.value(name));
      }
    reinit(seed);
  }

  const ModelConfig& config() const override { return cfg_; }
  ParamStore& store() override { return store_; }

  TwoHead emit(ad::Tape& tape, const CompiledMol& mol, const DropoutMask* mask) override {
    const std::vector<Tensor>& states = states_for(mol);
    std::vector<ad::Value> vals;
    vals.reserve(states.size());
    for (const Tensor& st : states) vals.push_back(tape.constant(st));
    const ad::Value fp = emit_readout(tape, mol, cfg_, vals, mask);
    return emit_head(tape, fp, mask);
  }

  DropoutMask sample_mask(const CompiledMol& mol, RngStream& rng) const override {
    return sample_dropout_mask(mol, cfg_, rng, /*mask_hidden_states=*/false);
  }

  void reinit(std::uint64_t seed) override {
    store_ = ParamStore();
    for (const auto& [name, tensor] : frozen_) store_.add(name, tensor, /*trainable=*/false);
    RngStream rng = substream(seed, "head-init");
    add_readout_head_params(store_, cfg_, rng);
  }

  std::uint64_t frozen_hash() const { return store_.value_hash("H."); }

 private:
  const std::vector<Tensor>& states_for(const CompiledMol& mol) {
    if (mol.id >= 0) {
      auto it = cache_.find(mol.id);
      if (it != cache_.end()) return it->second;
      return cache_.emplace(mol.id, compute_states(mol)).first->second;
    }
    scratch_ = compute_states(mol);
    return scratch_;
  }

  std::vector<Tensor> compute_states(const CompiledMol& mol) {
    ad::Tape tape(&store_);
    const PassValues pass = emit_message_passing(tape, mol, cfg_, nullptr);
    std::vector<Tensor> out;
    out.reserve(pass.active.size());
    for (const ad::Value v : pass.active) out.push_back(tape.val(v));
    return out;
  }

  ModelConfig cfg_;
  ParamStore store_;
  std::vector<std::pair<std::string, Tensor>> frozen_;
  std::unordered_map<int, std::vector<Tensor>> cache_;
  std::vector<Tensor> scratch_;
};

// Supervised training of the readout and head over frozen message-passing
// weights; rejects any run that moved them.
inline TrainReport train_head(SemiSupModel& model, const std::vector<CompiledMol>& mols,
                              std::span<const double> y, const TrainConfig& cfg) {
  const std::uint64_t before = model.frozen_hash();
  TrainReport report = train_map(model, mols, y, cfg);
  if (model.frozen_hash() != before)
    fail(Err::BadConfig, "frozen message-passing weights changed during head training");
  return report;
}

}  // namespace moluq
