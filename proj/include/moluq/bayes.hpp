#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "moluq/autodiff.hpp"
#include "moluq/error.hpp"
#include "moluq/graphconv.hpp"
#include "moluq/params.hpp"
#include "moluq/rng.hpp"
#include "moluq/tensor.hpp"

namespace moluq {

// log-variance outputs are clamped to this band before exponentiation, in
// the loss and at prediction time alike
inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

inline double clamp_log_var(double s) {
  return std::min(kLogVarMax, std::max(kLogVarMin, s));
}

struct PredictiveDistribution {
  double mean = 0.0;
  double epistemic_var = 0.0;
  double aleatoric_var = 0.0;
  double total_var = 0.0;
};

// Pools per-sample predictions (dropout passes or particles) into a mean and
// a variance split: epistemic = population variance of the means, aleatoric
// = average predicted variance. total is formed as the sum of the two parts
// so the decomposition identity is exact by construction.
inline PredictiveDistribution combine_predictions(std::span<const double> mus,
                                                  std::span<const double> ss) {
  if (mus.empty()) fail(Err::EmptyRecords, "no samples to combine");
  if (mus.size() != ss.size())
    fail(Err::LengthMismatch, "mean/log-variance sample counts differ");
  const double n = static_cast<double>(mus.size());
  double mean = 0.0;
  for (double m : mus) mean += m;
  mean /= n;
  double epi = 0.0;
  double alea = 0.0;
  for (std::size_t i = 0; i < mus.size(); ++i) {
    const double d = mus[i] - mean;
    epi += d * d;
    alea += std::exp(clamp_log_var(ss[i]));
  }
  epi /= n;
  alea /= n;
  PredictiveDistribution out{mean, epi, alea, epi + alea};
  if (!std::isfinite(out.mean) || !std::isfinite(out.total_var))
    fail(Err::NonFiniteValue, "predictive distribution diverged");
  return out;
}

// Sum of squared entries over trainable slots; the prior never touches
// frozen weights.
inline double l2_norm_sq(const ParamStore& ps) {
  double acc = 0.0;
  for (const auto& slot : ps.slots()) {
    if (!slot.trainable) continue;
    for (double v : slot.value.data) acc += v * v;
  }
  return acc;
}

// Negative log posterior, constant terms dropped: for each sample
// (y - mu)^2 / (2 exp(s)) + s / 2 with s clamped, plus (lambda/2) |theta|^2
// over the trainable parameters when a store is given.
inline double nlp_loss(std::span<const double> mus, std::span<const double> ss,
                       std::span<const double> ys, const ParamStore* params,
                       double lambda) {
  if (mus.size() != ss.size() || mus.size() != ys.size())
    fail(Err::LengthMismatch, "prediction/target counts differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < mus.size(); ++i) {
    const double s = clamp_log_var(ss[i]);
    const double r = ys[i] - mus[i];
    acc += 0.5 * r * r * std::exp(-s) + 0.5 * s;
  }
  if (params != nullptr && lambda > 0.0) acc += 0.5 * lambda * l2_norm_sq(*params);
  if (!std::isfinite(acc)) fail(Err::NonFiniteLoss, "negative log posterior diverged");
  return acc;
}

// Tape form of the per-sample terms, scaled by `scale`; the L2 prior is
// applied analytically by the trainers so both optimizers share one exact
// gradient expression.
inline ad::Value emit_nll_terms(ad::Tape& tape, std::span<const TwoHead> heads,
                                std::span<const double> ys, double scale) {
  if (heads.empty()) fail(Err::EmptyRecords, "loss over empty batch");
  if (heads.size() != ys.size())
    fail(Err::LengthMismatch, "prediction/target counts differ");
  ad::Value total{-1};
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const ad::Value s = tape.clamp(heads[i].s, kLogVarMin, kLogVarMax);
    const ad::Value res = tape.sub(heads[i].mu, tape.constant(Tensor::scalar(ys[i])));
    const ad::Value fit =
        tape.scale(tape.mul(tape.square(res), tape.exp(tape.scale(s, -1.0))), 0.5);
    const ad::Value term = tape.add(fit, tape.scale(s, 0.5));
    total = (i == 0) ? term : tape.add(total, term);
  }
  return tape.scale(total, scale);
}

// ---------------------------------------------------------------------------
// shared training plumbing

// Epoch-shuffled contiguous minibatches. Trainers that must follow identical
// data orderings draw from the same stream label, so a matched seed gives a
// matched schedule, and the first k epochs of a longer schedule equal the
// schedule built for k epochs.
inline std::vector<std::vector<std::size_t>> make_batch_schedule(std::size_t n,
                                                                 std::size_t batch_size,
                                                                 int epochs,
                                                                 std::uint64_t seed) {
  if (n == 0) fail(Err::EmptyRecords, "batch schedule over an empty dataset");
  if (batch_size == 0 || batch_size > n) batch_size = n;
  RngStream rng = substream(seed, "batches");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<std::vector<std::size_t>> out;
  for (int e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    for (std::size_t lo = 0; lo < n; lo += batch_size) {
      const std::size_t hi = std::min(n, lo + batch_size);
      out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(lo),
                       order.begin() + static_cast<std::ptrdiff_t>(hi));
    }
  }
  return out;
}

struct GradEval {
  double data_loss = 0.0;   // scaled batch NLL
  double objective = 0.0;   // data_loss + (lambda/2) |theta|^2
};

// Gradient of the scaled-batch negative log posterior in the flat trainable
// layout: one backward pass for the data terms, lambda * theta added
// analytically. `masks`, when given, holds one dropout mask per batch entry.
inline GradEval nlp_batch_grad(Regressor& model, const std::vector<CompiledMol>& mols,
                               std::span<const double> y,
                               std::span<const std::size_t> batch, double data_scale,
                               double lambda, const std::vector<DropoutMask>* masks,
                               std::vector<double>& grad_out) {
  if (batch.empty()) fail(Err::EmptyRecords, "gradient over empty batch");
  ParamStore& ps = model.store();
  ps.zero_grad();
  ad::Tape tape(&ps);
  std::vector<TwoHead> heads;
  std::vector<double> yb;
  heads.reserve(batch.size());
  yb.reserve(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const std::size_t i = batch[k];
    heads.push_back(model.emit(tape, mols[i], masks ? &(*masks)[k] : nullptr));
    yb.push_back(y[i]);
  }
  const ad::Value loss = emit_nll_terms(tape, heads, yb, data_scale);
  tape.backward(loss);
  grad_out = ps.flatten_grad(true);
  const std::vector<double> theta = ps.flatten(true);
  double l2 = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    grad_out[i] += lambda * theta[i];
    l2 += theta[i] * theta[i];
  }
  GradEval ev;
  ev.data_loss = tape.scalar(loss);
  ev.objective = ev.data_loss + 0.5 * lambda * l2;
  return ev;
}

// ---------------------------------------------------------------------------
// maximum a posteriori training

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double lambda = 1e-2;   // Gaussian prior precision
  bool adam = true;       // false: plain gradient steps
  bool dropout = false;   // fresh masks each forward pass
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs < 0 || !(lr > 0.0) || !std::isfinite(lr) || lambda < 0.0 ||
        !std::isfinite(lambda))
      fail(Err::BadConfig, "invalid training configuration");
  }
};

struct TrainReport {
  std::vector<double> step_objective;
  double final_objective = 0.0;
};

// Minibatch descent on the negative log posterior over the model's current
// trainable parameters. The update runs through the flat-vector path so a
// one-particle SVGD trajectory can reproduce it exactly.
inline TrainReport train_map(Regressor& model, const std::vector<CompiledMol>& mols,
                             std::span<const double> y, const TrainConfig& cfg) {
  cfg.validate();
  if (mols.size() != y.size()) fail(Err::LengthMismatch, "molecule/target counts differ");
  const auto schedule = make_batch_schedule(mols.size(), cfg.batch_size, cfg.epochs, cfg.seed);
  RngStream mask_rng = substream(cfg.seed, "train-dropout");

  ParamStore& ps = model.store();
  std::vector<double> theta = ps.flatten(true);
  std::vector<double> grad;
  FlatAdam opt(theta.size());
  TrainReport report;
  report.step_objective.reserve(schedule.size());

  for (const auto& batch : schedule) {
    std::vector<DropoutMask> masks;
    if (cfg.dropout) {
      masks.reserve(batch.size());
      for (std::size_t i : batch) masks.push_back(model.sample_mask(mols[i], mask_rng));
    }
    const double scale = static_cast<double>(mols.size()) / static_cast<double>(batch.size());
    const GradEval ev = nlp_batch_grad(model, mols, y, batch, scale, cfg.lambda,
                                       cfg.dropout ? &masks : nullptr, grad);
    if (cfg.adam) {
      const std::vector<double> d = opt.direction(grad);
      for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= cfg.lr * d[i];
    } else {
      for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= cfg.lr * grad[i];
    }
    for (double v : theta)
      if (!std::isfinite(v)) fail(Err::NonFiniteUpdate, "parameter update diverged");
    ps.unflatten(theta, true);
    report.step_objective.push_back(ev.objective);
  }
  report.final_objective =
      report.step_objective.empty() ? 0.0 : report.step_objective.back();
  return report;
}

// ---------------------------------------------------------------------------
// Monte-Carlo dropout inference

inline PredictiveDistribution dropout_predict(Regressor& model, const CompiledMol& mol,
                                              int n_mc, std::uint64_t seed) {
  if (n_mc < 1) fail(Err::BadConfig, "dropout prediction needs at least one pass");
  RngStream rng = substream(seed, "mc-dropout");
  std::vector<double> mus, ss;
  mus.reserve(static_cast<std::size_t>(n_mc));
  ss.reserve(static_cast<std::size_t>(n_mc));
  for (int m = 0; m < n_mc; ++m) {
    const DropoutMask mask = model.sample_mask(mol, rng);
    const auto [mu, s] = model.predict_one(mol, &mask);
    mus.push_back(mu);
    ss.push_back(s);
  }
  return combine_predictions(mus, ss);
}

// ---------------------------------------------------------------------------
// Stein variational gradient descent

struct SVGDConfig {
  int n_particles = 50;
  int epochs = 30;
  std::size_t batch_size = 32;
  double eta = 1e-3;      // step size applied to phi
  double lambda = 1e-2;   // Gaussian prior precision
  bool adam = true;       // precondition the phi direction per particle
  double fixed_h = 0.0;   // 0: median-heuristic bandwidth each step
  std::uint64_t seed = 1;

  void validate() const {
    if (n_particles < 1 || epochs < 0 || !(eta > 0.0) || !std::isfinite(eta) ||
        lambda < 0.0 || !std::isfinite(lambda) || fixed_h < 0.0)
      fail(Err::BadConfig, "invalid SVGD configuration");
  }
};

struct SVGDState {
  std::vector<std::vector<double>> particles;   // flat trainable vectors, equal length
  double last_h = 0.0;                          // bandwidth used by the latest step
};

// phi_i = (1/N) sum_j [ k(th_j, th_i) g_j + (2k/h)(th_i - th_j) ] with the
// RBF kernel k = exp(-|a-b|^2 / h). Bandwidth h = med^2 / log(N+1) from the
// pairwise squared distances, falling back to 1 when the spread is
// degenerate (coincident particles, N = 1). Returns the bandwidth used.
inline double svgd_phi(const std::vector<std::vector<double>>& theta,
                       const std::vector<std::vector<double>>& grad_logp,
                       double fixed_h, std::vector<std::vector<double>>& phi) {
  const std::size_t n = theta.size();
  if (n == 0) fail(Err::EmptyRecords, "no particles");
  if (grad_logp.size() != n) fail(Err::LengthMismatch, "particle/gradient counts differ");
  const std::size_t dim = theta[0].size();
  for (std::size_t i = 0; i < n; ++i)
    if (theta[i].size() != dim || grad_logp[i].size() != dim)
      fail(Err::LengthMismatch, "particle vectors differ in length");

  std::vector<double> sq(n * n, 0.0);
  std::vector<double> pair_sq;
  pair_sq.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = theta[i][d] - theta[j][d];
        d2 += diff * diff;
      }
      sq[i * n + j] = d2;
      sq[j * n + i] = d2;
      pair_sq.push_back(d2);
    }

  double h = fixed_h;
  if (h <= 0.0) {
    if (pair_sq.empty()) {
      h = 1.0;
    } else {
      std::vector<double> v = pair_sq;
      const std::size_t mid = v.size() / 2;
      std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
      double med = v[mid];
      if (v.size() % 2 == 0) {
        const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
        med = 0.5 * (lo + med);
      }
      h = med / std::log(static_cast<double>(n) + 1.0);
    }
    if (!(h > 0.0) || !std::isfinite(h)) h = 1.0;
  }

  phi.assign(n, std::vector<double>(dim, 0.0));
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double>& out = phi[i];
    for (std::size_t j = 0; j < n; ++j) {
      const double k = std::exp(-sq[j * n + i] / h);
      const double coef = 2.0 * k / h;
      const std::vector<double>& g = grad_logp[j];
      const std::vector<double>& tj = theta[j];
      const std::vector<double>& ti = theta[i];
      for (std::size_t d = 0; d < dim; ++d) out[d] += k * g[d] + coef * (ti[d] - tj[d]);
    }
    for (std::size_t d = 0; d < dim; ++d) {
      out[d] *= inv_n;
      if (!std::isfinite(out[d])) fail(Err::NonFiniteUpdate, "SVGD update diverged");
    }
  }
  return h;
}

// Independent seeded re-inits of the model's trainable slots give the
// initial particle cloud; the flat layout is identical across particles.
inline SVGDState init_svgd_particles(Regressor& model, int n_particles, std::uint64_t seed) {
  if (n_particles < 1) fail(Err::BadConfig, "particle count must be positive");
  SVGDState st;
  st.particles.reserve(static_cast<std::size_t>(n_particles));
  for (int i = 0; i < n_particles; ++i) {
    model.reinit(substream(seed, "svgd-particle", static_cast<std::uint64_t>(i)).next_u64());
    st.particles.push_back(model.store().flatten(true));
  }
  return st;
}

struct SVGDReport {
  std::vector<double> step_objective;   // mean over particles per step
  double final_objective = 0.0;
};

// Minibatch SVGD over the posterior: per particle, grad log P is the negated
// scaled-batch NLL gradient minus lambda * theta; particles move along phi.
// With adam preconditioning each particle keeps its own moment state. The
// batch schedule matches train_map for equal seeds, so a one-particle run
// with adam = false reproduces the plain trainer exactly.
inline SVGDReport train_svgd(Regressor& model, SVGDState& state,
                             const std::vector<CompiledMol>& mols,
                             std::span<const double> y, const SVGDConfig& cfg) {
  cfg.validate();
  if (mols.size() != y.size()) fail(Err::LengthMismatch, "molecule/target counts differ");
  if (state.particles.empty()) fail(Err::EmptyRecords, "SVGD state holds no particles");
  const std::size_t n_part = state.particles.size();
  const auto schedule = make_batch_schedule(mols.size(), cfg.batch_size, cfg.epochs, cfg.seed);

  ParamStore& ps = model.store();
  std::vector<std::vector<double>> grads(n_part);
  std::vector<std::vector<double>> phi;
  std::vector<FlatAdam> opts(n_part, FlatAdam(state.particles[0].size()));
  SVGDReport report;
  report.step_objective.reserve(schedule.size());

  for (const auto& batch : schedule) {
    const double scale = static_cast<double>(mols.size()) / static_cast<double>(batch.size());
    double mean_obj = 0.0;
    for (std::size_t p = 0; p < n_part; ++p) {
      ps.unflatten(state.particles[p], true);
      const GradEval ev =
          nlp_batch_grad(model, mols, y, batch, scale, cfg.lambda, nullptr, grads[p]);
      for (double& g : grads[p]) g = -g;
      mean_obj += ev.objective;
    }
    state.last_h = svgd_phi(state.particles, grads, cfg.fixed_h, phi);
    for (std::size_t p = 0; p < n_part; ++p) {
      std::vector<double>& th = state.particles[p];
      if (cfg.adam) {
        for (double& v : phi[p]) v = -v;
        const std::vector<double> d = opts[p].direction(phi[p]);
        for (std::size_t i = 0; i < th.size(); ++i) th[i] -= cfg.eta * d[i];
      } else {
        for (std::size_t i = 0; i < th.size(); ++i) th[i] += cfg.eta * phi[p][i];
      }
      for (double v : th)
        if (!std::isfinite(v)) fail(Err::NonFiniteUpdate, "particle update diverged");
    }
    report.step_objective.push_back(mean_obj / static_cast<double>(n_part));
  }
  report.final_objective =
      report.step_objective.empty() ? 0.0 : report.step_objective.back();
  return report;
}

// Deterministic forward pass per particle, pooled by the same variance
// decomposition as dropout. The store's trainable values are restored on
// exit so prediction has no side effects.
inline PredictiveDistribution svgd_predict(Regressor& model, const SVGDState& state,
                                           const CompiledMol& mol) {
  if (state.particles.empty()) fail(Err::EmptyRecords, "SVGD state holds no particles");
  ParamStore& ps = model.store();
  const std::vector<double> saved = ps.flatten(true);
  std::vector<double> mus, ss;
  mus.reserve(state.particles.size());
  ss.reserve(state.particles.size());
  for (const auto& th : state.particles) {
    ps.unflatten(th, true);
    const auto [mu, s] = model.predict_one(mol, nullptr);
    mus.push_back(mu);
    ss.push_back(s);
  }
  ps.unflatten(saved, true);
  return combine_predictions(mus, ss);
}

}  // namespace moluq
