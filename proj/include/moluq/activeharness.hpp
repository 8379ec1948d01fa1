#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "moluq/bayes.hpp"
#include "moluq/error.hpp"
#include "moluq/evalmetrics.hpp"
#include "moluq/graphconv.hpp"
#include "moluq/rng.hpp"
#include "moluq/semisup.hpp"

namespace moluq {

enum class Strategy { Active, Random };

inline const char* strategy_name(Strategy s) {
  return s == Strategy::Active ? "active" : "random";
}

// Index bookkeeping for one simulated labeling campaign. The test set is
// fixed for the whole run; labeled and unlabeled partition the remainder.
struct PoolState {
  std::vector<std::size_t> labeled, unlabeled, test;
  std::size_t iteration = 0;

  // disjointness + conservation over the full index universe
  void check(std::size_t n_universe) const {
    std::vector<char> seen(n_universe, 0);
    std::size_t total = 0;
    auto mark = [&](const std::vector<std::size_t>& idx) {
      for (std::size_t i : idx) {
        if (i >= n_universe || seen[i]) fail(Err::BadConfig, "pool sets overlap or overflow");
        seen[i] = 1;
        ++total;
      }
    };
    mark(labeled);
    mark(unlabeled);
    mark(test);
    if (total != n_universe) fail(Err::BadConfig, "pool sets do not cover the dataset");
  }
};

struct ActiveConfig {
  double test_frac = 0.2;
  double init_frac = 0.25;   // of the training universe
  double batch_frac = 0.025; // of the training universe
  int n_iterations = 10;     // acquisition rounds; the curve gets one more point

  void validate() const {
    if (!(test_frac > 0.0) || test_frac >= 1.0 || !(init_frac > 0.0) || init_frac > 1.0 ||
        !(batch_frac > 0.0) || batch_frac > 1.0 || n_iterations < 0)
      fail(Err::BadConfig, "invalid active-learning configuration");
  }
};

struct CurvePoint {
  std::size_t iteration = 0;
  std::size_t labeled_count = 0;
  double rmse = 0.0;
  double r2 = 0.0;
};

struct LearningCurve {
  Strategy strategy = Strategy::Active;
  std::uint64_t seed = 0;
  std::vector<CurvePoint> points;
  // per acquisition round: the chosen indices and, for the active strategy,
  // the scored pool (index, epistemic_var) the choice was made from
  std::vector<std::vector<std::size_t>> acquisitions;
  std::vector<std::vector<std::pair<std::size_t, double>>> pool_scores;
};

// Trains a fresh model on the rows in train_idx (seeded by model_seed) and
// fills predictive distributions for the two evaluation index lists. An
// empty eval list asks for no predictions on that side.
using TrainEvalFn = std::function<void(
    const std::vector<std::size_t>& train_idx, const std::vector<std::size_t>& eval_a,
    const std::vector<std::size_t>& eval_b, std::uint64_t model_seed,
    std::vector<PredictiveDistribution>& out_a, std::vector<PredictiveDistribution>& out_b)>;

namespace detail {

inline std::vector<PredictionRecord> to_records(const std::vector<std::size_t>& idx,
                                                const std::vector<PredictiveDistribution>& preds,
                                                const std::vector<double>& y) {
  if (idx.size() != preds.size()) fail(Err::LengthMismatch, "prediction count mismatch");
  std::vector<PredictionRecord> recs;
  recs.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    recs.push_back({static_cast<int>(idx[i]), y[idx[i]], preds[i].mean, preds[i].epistemic_var,
                    preds[i].aleatoric_var, preds[i].total_var});
  return recs;
}

}  // namespace detail

// Random test/initial-pool assignment from the run seed. All three sets are
// kept sorted by dataset index.
inline PoolState make_random_pool(std::size_t n, double test_frac, double init_frac,
                                  std::uint64_t seed) {
  if (n == 0) fail(Err::EmptyRecords, "empty dataset");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  RngStream test_rng = substream(seed, "al-test");
  test_rng.shuffle(order);
  const std::size_t n_test =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(n))));
  PoolState pool;
  pool.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> universe(order.begin() + static_cast<std::ptrdiff_t>(n_test),
                                    order.end());
  if (universe.empty()) fail(Err::BadConfig, "test fraction leaves no training molecules");
  RngStream init_rng = substream(seed, "al-init");
  init_rng.shuffle(universe);
  const std::size_t n_init = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(init_frac * static_cast<double>(universe.size()))));
  pool.labeled.assign(universe.begin(),
                      universe.begin() + static_cast<std::ptrdiff_t>(std::min(n_init, universe.size())));
  pool.unlabeled.assign(universe.begin() + static_cast<std::ptrdiff_t>(std::min(n_init, universe.size())),
                        universe.end());
  std::sort(pool.test.begin(), pool.test.end());
  std::sort(pool.labeled.begin(), pool.labeled.end());
  std::sort(pool.unlabeled.begin(), pool.unlabeled.end());
  return pool;
}

// Scaffold-biased variant: the test set matches make_random_pool for the
// same seed, but the initial labeled pool is filled with whole scaffold
// groups, largest first, until it reaches init_frac of the training
// universe. A single scaffold group cannot bias anything and falls back to
// the random pool.
inline PoolState make_scaffold_biased_pool(const std::vector<std::string>& scaffold_keys,
                                           double test_frac, double init_frac,
                                           std::uint64_t seed) {
  const std::size_t n = scaffold_keys.size();
  PoolState random_pool = make_random_pool(n, test_frac, init_frac, seed);
  std::vector<std::size_t> universe;
  universe.reserve(random_pool.labeled.size() + random_pool.unlabeled.size());
  universe.insert(universe.end(), random_pool.labeled.begin(), random_pool.labeled.end());
  universe.insert(universe.end(), random_pool.unlabeled.begin(), random_pool.unlabeled.end());
  std::sort(universe.begin(), universe.end());
  std::map<std::string, std::vector<std::size_t>> by_key;
  for (std::size_t i : universe) by_key[scaffold_keys[i]].push_back(i);
  if (by_key.size() < 2) return random_pool;  // single-group fallback
  std::vector<std::vector<std::size_t>> groups;
  groups.reserve(by_key.size());
  for (auto& [key, members] : by_key) groups.push_back(std::move(members));
  std::sort(groups.begin(), groups.end(),
            [](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
              if (a.size() != b.size()) return a.size() > b.size();
              return a.front() < b.front();
            });
  const std::size_t want = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(init_frac * static_cast<double>(universe.size()))));
  PoolState pool;
  pool.test = random_pool.test;
  for (const std::vector<std::size_t>& g : groups) {
    auto& side = pool.labeled.size() < want ? pool.labeled : pool.unlabeled;
    side.insert(side.end(), g.begin(), g.end());
  }
  std::sort(pool.labeled.begin(), pool.labeled.end());
  std::sort(pool.unlabeled.begin(), pool.unlabeled.end());
  return pool;
}

// One labeling campaign: retrain from scratch, evaluate on the fixed test
// set, acquire the next batch (highest epistemic variance or uniform
// random), repeat. Ties in the active ranking break toward the smaller
// dataset index. Mid-run pool exhaustion ends the curve cleanly.
inline LearningCurve run_active_learning(const std::vector<CompiledMol>& mols,
                                         const std::vector<double>& y, Strategy strategy,
                                         const ActiveConfig& cfg, const TrainEvalFn& evaluator,
                                         std::uint64_t seed,
                                         const PoolState* initial = nullptr) {
  cfg.validate();
  if (mols.size() != y.size()) fail(Err::LengthMismatch, "molecule/target counts differ");
  if (mols.size() < 40) fail(Err::BadConfig, "active learning needs at least 40 molecules");
  PoolState pool =
      initial ? *initial : make_random_pool(mols.size(), cfg.test_frac, cfg.init_frac, seed);
  pool.check(mols.size());
  if (pool.unlabeled.empty() && cfg.n_iterations > 0)
    fail(Err::PoolExhausted, "no unlabeled molecules to acquire from");
  const std::size_t universe = pool.labeled.size() + pool.unlabeled.size();
  const std::size_t batch = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(cfg.batch_frac * static_cast<double>(universe))));

  LearningCurve curve;
  curve.strategy = strategy;
  curve.seed = seed;
  for (int it = 0;; ++it) {
    const std::uint64_t model_seed =
        substream(seed, "al-model", static_cast<std::uint64_t>(it)).next_u64();
    const bool want_pool = strategy == Strategy::Active && it < cfg.n_iterations &&
                           !pool.unlabeled.empty();
    std::vector<PredictiveDistribution> test_preds, pool_preds;
    evaluator(pool.labeled, pool.test, want_pool ? pool.unlabeled : std::vector<std::size_t>{},
              model_seed, test_preds, pool_preds);
    const std::vector<PredictionRecord> recs = detail::to_records(pool.test, test_preds, y);
    curve.points.push_back({static_cast<std::size_t>(it), pool.labeled.size(), rmse(recs),
                            r2(recs)});
    if (it >= cfg.n_iterations || pool.unlabeled.empty()) break;

    std::vector<std::size_t> chosen;
    if (strategy == Strategy::Active) {
      if (pool_preds.size() != pool.unlabeled.size())
        fail(Err::LengthMismatch, "pool prediction count mismatch");
      std::vector<std::pair<std::size_t, double>> scored;
      scored.reserve(pool.unlabeled.size());
      for (std::size_t i = 0; i < pool.unlabeled.size(); ++i)
        scored.emplace_back(pool.unlabeled[i], pool_preds[i].epistemic_var);
      curve.pool_scores.push_back(scored);
      std::sort(scored.begin(), scored.end(),
                [](const std::pair<std::size_t, double>& a,
                   const std::pair<std::size_t, double>& b) {
                  if (a.second != b.second) return a.second > b.second;
                  return a.first < b.first;
                });
      const std::size_t k = std::min(batch, scored.size());
      for (std::size_t i = 0; i < k; ++i) chosen.push_back(scored[i].first);
    } else {
      std::vector<std::size_t> shuffled = pool.unlabeled;
      RngStream rng = substream(seed, "al-acquire", static_cast<std::uint64_t>(it));
      rng.shuffle(shuffled);
      const std::size_t k = std::min(batch, shuffled.size());
      chosen.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(k));
      curve.pool_scores.emplace_back();
    }
    std::sort(chosen.begin(), chosen.end());
    curve.acquisitions.push_back(chosen);
    std::vector<std::size_t> remaining;
    remaining.reserve(pool.unlabeled.size() - chosen.size());
    std::set_difference(pool.unlabeled.begin(), pool.unlabeled.end(), chosen.begin(),
                        chosen.end(), std::back_inserter(remaining));
    pool.unlabeled = std::move(remaining);
    pool.labeled.insert(pool.labeled.end(), chosen.begin(), chosen.end());
    std::sort(pool.labeled.begin(), pool.labeled.end());
    pool.iteration = static_cast<std::size_t>(it) + 1;
    pool.check(mols.size());
  }
  return curve;
}

inline void write_learning_curves(const std::vector<LearningCurve>& curves, std::ostream& out) {
  out << "iteration,labeled_count,rmse,r2,strategy,seed\n";
  out.precision(17);
  for (const LearningCurve& c : curves)
    for (const CurvePoint& p : c.points)
      out << p.iteration << ',' << p.labeled_count << ',' << p.rmse << ',' << p.r2 << ','
          << strategy_name(c.strategy) << ',' << c.seed << '\n';
}

// Trains on two pooled scaffold families, then contrasts the uncertainty
// the model reports on its own held-out test rows against a structurally
// disjoint probe family.
struct BiasProbeReport {
  std::vector<double> in_domain_var, probe_var;  // total variances
  double in_domain_median = 0.0, probe_median = 0.0;
  double in_domain_rmse = 0.0, probe_rmse = 0.0;
};

inline BiasProbeReport bias_probe(const std::vector<CompiledMol>& mols,
                                  const std::vector<double>& y,
                                  const std::vector<std::size_t>& train_family,
                                  const std::vector<std::size_t>& probe_family,
                                  const TrainEvalFn& evaluator, std::uint64_t seed) {
  if (train_family.empty() || probe_family.empty())
    fail(Err::EmptyFamily, "bias probe needs non-empty train and probe families");
  for (std::size_t i : train_family)
    if (i >= mols.size()) fail(Err::BadConfig, "train family index out of range");
  for (std::size_t i : probe_family)
    if (i >= mols.size()) fail(Err::BadConfig, "probe family index out of range");
  std::vector<std::size_t> shuffled = train_family;
  std::sort(shuffled.begin(), shuffled.end());
  RngStream rng = substream(seed, "bias-split");
  rng.shuffle(shuffled);
  const std::size_t n_train = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(shuffled.size()))));
  if (n_train >= shuffled.size())
    fail(Err::EmptyFamily, "train family too small for an in-domain test split");
  std::vector<std::size_t> train_idx(shuffled.begin(),
                                     shuffled.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test_idx(shuffled.begin() + static_cast<std::ptrdiff_t>(n_train),
                                    shuffled.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  std::vector<std::size_t> probe_idx = probe_family;
  std::sort(probe_idx.begin(), probe_idx.end());

  std::vector<PredictiveDistribution> test_preds, probe_preds;
  evaluator(train_idx, test_idx, probe_idx,
            substream(seed, "bias-model").next_u64(), test_preds, probe_preds);
  BiasProbeReport report;
  for (const PredictiveDistribution& p : test_preds) report.in_domain_var.push_back(p.total_var);
  for (const PredictiveDistribution& p : probe_preds) report.probe_var.push_back(p.total_var);
  report.in_domain_median = median(report.in_domain_var);
  report.probe_median = median(report.probe_var);
  report.in_domain_rmse = rmse(detail::to_records(test_idx, test_preds, y));
  report.probe_rmse = rmse(detail::to_records(probe_idx, probe_preds, y));
  return report;
}

// Standard evaluator over the library's model/inference combinations.
// Semi-supervised runs pass the frozen embedding parameters; every model is
// rebuilt from scratch per call with the given seed.
struct EvaluatorSpec {
  ModelConfig arch;
  bool semisup = false;
  std::string inference = "dropout";  // map | dropout | svgd
  int epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double lambda = 1e-2;
  bool adam = true;
  int n_mc = 30;
  int n_particles = 10;
  double eta = 1e-2;
  double fixed_h = 0.0;
  bool standardize = true;  // train on zero-mean unit-variance targets
  const ParamStore* embed = nullptr;  // required when semisup
};

inline TrainEvalFn make_train_eval(const std::vector<CompiledMol>& mols,
                                   const std::vector<double>& y, const EvaluatorSpec& spec) {
  if (spec.inference != "map" && spec.inference != "dropout" && spec.inference != "svgd")
    fail(Err::BadConfig, "inference must be map, dropout, or svgd");
  if (spec.semisup && spec.embed == nullptr)
    fail(Err::BadConfig, "semi-supervised evaluation needs embedding parameters");
  return [&mols, &y, spec](const std::vector<std::size_t>& train_idx,
                           const std::vector<std::size_t>& eval_a,
                           const std::vector<std::size_t>& eval_b, std::uint64_t model_seed,
                           std::vector<PredictiveDistribution>& out_a,
                           std::vector<PredictiveDistribution>& out_b) {
    if (train_idx.empty()) fail(Err::EmptyRecords, "no training molecules");
    std::vector<CompiledMol> train_mols;
    std::vector<double> train_y;
    train_mols.reserve(train_idx.size());
    for (std::size_t i : train_idx) {
      train_mols.push_back(mols[i]);
      train_y.push_back(y[i]);
    }
    double y_shift = 0.0, y_scale = 1.0;
    if (spec.standardize) {
      for (double v : train_y) y_shift += v;
      y_shift /= static_cast<double>(train_y.size());
      double var = 0.0;
      for (double v : train_y) var += (v - y_shift) * (v - y_shift);
      var /= static_cast<double>(train_y.size());
      if (var > 0.0) y_scale = std::sqrt(var);
      for (double& v : train_y) v = (v - y_shift) / y_scale;
    }
    std::unique_ptr<Regressor> model;
    if (spec.semisup)
      model = std::make_unique<SemiSupModel>(spec.arch, *spec.embed, model_seed);
    else
      model = std::make_unique<GraphConvModel>(spec.arch, model_seed);

    SVGDState svgd_state;
    if (spec.inference == "svgd") {
      SVGDConfig scfg;
      scfg.n_particles = spec.n_particles;
      scfg.epochs = spec.epochs;
      scfg.batch_size = spec.batch_size;
      scfg.eta = spec.eta;
      scfg.lambda = spec.lambda;
      scfg.adam = spec.adam;
      scfg.fixed_h = spec.fixed_h;
      scfg.seed = model_seed;
      svgd_state = init_svgd_particles(*model, scfg.n_particles, model_seed);
      train_svgd(*model, svgd_state, train_mols, train_y, scfg);
      // cool-down stage: a smaller step settles particle oscillation
      SVGDConfig cool = scfg;
      cool.epochs = std::max<std::size_t>(1, spec.epochs / 2);
      cool.eta = spec.eta / 4.0;
      cool.seed = substream(model_seed, "svgd-cool").next_u64();
      train_svgd(*model, svgd_state, train_mols, train_y, cool);
    } else {
      TrainConfig tcfg;
      tcfg.epochs = spec.epochs;
      tcfg.batch_size = spec.batch_size;
      tcfg.lr = spec.lr;
      tcfg.lambda = spec.lambda;
      tcfg.adam = spec.adam;
      tcfg.dropout = spec.inference == "dropout";
      tcfg.seed = model_seed;
      train_map(*model, train_mols, train_y, tcfg);
    }

    auto predict_set = [&](const std::vector<std::size_t>& idx,
                           std::vector<PredictiveDistribution>& out, const char* tag) {
      out.clear();
      out.reserve(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const CompiledMol& mol = mols[idx[i]];
        PredictiveDistribution d;
        if (spec.inference == "svgd") {
          d = svgd_predict(*model, svgd_state, mol);
        } else if (spec.inference == "dropout") {
          const std::uint64_t pred_seed =
              substream(model_seed, tag, static_cast<std::uint64_t>(i)).next_u64();
          d = dropout_predict(*model, mol, spec.n_mc, pred_seed);
        } else {
          const auto [mu, s] = model->predict_one(mol);
          d.mean = mu;
          d.epistemic_var = 0.0;
          d.aleatoric_var = std::exp(clamp_log_var(s));
        }
        // undo standardization; the total is rebuilt from the scaled parts so
        // the decomposition identity stays exact
        d.mean = d.mean * y_scale + y_shift;
        d.epistemic_var *= y_scale * y_scale;
        d.aleatoric_var *= y_scale * y_scale;
        d.total_var = d.epistemic_var + d.aleatoric_var;
        out.push_back(d);
      }
    };
    predict_set(eval_a, out_a, "mc-eval-a");
    predict_set(eval_b, out_b, "mc-eval-b");
  };
}

}  // namespace moluq
