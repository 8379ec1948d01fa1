// Command-line front end: dataset ingestion, run configuration, and one
// subcommand per workflow. Every run writes a self-contained directory whose
// config snapshot plus the seed reproduces it exactly; failures exit nonzero
// after emitting a machine-readable error record.
#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "moluq/activeharness.hpp"
#include "moluq/bayes.hpp"
#include "moluq/config.hpp"
#include "moluq/dataset.hpp"
#include "moluq/error.hpp"
#include "moluq/evalmetrics.hpp"
#include "moluq/graphconv.hpp"
#include "moluq/rng.hpp"
#include "moluq/semisup.hpp"
#include "moluq/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace moluq;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string dataset_path;
  std::string out_dir = "moluq-run";
  std::string model;
  std::string inference;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* sub, CommonFlags& f, bool needs_dataset) {
  sub->add_option("--config", f.config_path, "run configuration file")
      ->check(CLI::ExistingFile);
  auto* ds = sub->add_option("--dataset", f.dataset_path, "input CSV (smiles,target)");
  if (needs_dataset) ds->required();
  sub->add_option("--out-dir", f.out_dir, "run directory (created if missing)");
  sub->add_option("--model", f.model, "override: graphconv | semisup");
  sub->add_option("--inference", f.inference, "override: map | dropout | svgd");
  sub->add_option("--seed", f.seed, "override the run seed")
      ->each([&f](const std::string&) { f.seed_given = true; });
}

RunConfig resolve_config(const CommonFlags& f) {
  RunConfig cfg;
  if (!f.config_path.empty()) cfg = load_config(f.config_path);
  if (!f.model.empty()) cfg.model = f.model;
  if (!f.inference.empty()) cfg.inference = f.inference;
  if (f.seed_given) cfg.seed = f.seed;
  cfg.validate();
  return cfg;
}

fs::path prepare_run_dir(const std::string& out_dir, bool with_checkpoints) {
  const fs::path dir(out_dir);
  fs::create_directories(with_checkpoints ? dir / "checkpoints" : dir);
  return dir;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) fail(Err::FileNotFound, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void emit_error_record(const std::string& out_dir, const std::string& code,
                       const std::string& message) {
  const json rec = {{"error", code}, {"message", message}};
  std::cerr << rec.dump() << '\n';
  if (out_dir.empty()) return;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) return;
  std::ofstream out(fs::path(out_dir) / "error.json");
  if (out) out << rec.dump(2) << '\n';
}

int guarded(const std::string& out_dir, const std::function<int()>& body) {
  try {
    return body();
  } catch (const MoluqError& e) {
    emit_error_record(out_dir, err_name(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    emit_error_record(out_dir, "Internal", e.what());
    return 1;
  }
}

Dataset load_dataset(const CommonFlags& f, const RunConfig& cfg) {
  Dataset ds = load_csv(f.dataset_path, cfg.smiles_column, cfg.target_column);
  if (!ds.rejected.empty())
    std::cerr << "note: rejected " << ds.rejected.size() << " of "
              << ds.rejected.size() + ds.records.size() << " rows\n";
  return ds;
}

SplitIndices make_split(const Dataset& ds, const RunConfig& cfg) {
  SplitIndices sp = cfg.split == "scaffold"
                        ? scaffold_split(scaffold_keys(ds), cfg.train_frac, cfg.val_frac, cfg.seed)
                        : random_split(ds.size(), cfg.train_frac, cfg.val_frac, cfg.seed);
  if (!sp.warning.empty()) std::cerr << "note: " << sp.warning << '\n';
  return sp;
}

// Everything needed to score molecules after training or checkpoint restore.
struct BuiltModel {
  std::unique_ptr<Regressor> model;
  ParamStore embed;  // frozen message weights for semisup
  SVGDState svgd;    // particles when inference is svgd
};

PredictiveDistribution predict_record(const BuiltModel& bm, const RunConfig& cfg,
                                      const CompiledMol& mol) {
  if (cfg.inference == "svgd") return svgd_predict(*bm.model, bm.svgd, mol);
  if (cfg.inference == "dropout") {
    const std::uint64_t s =
        substream(cfg.seed, "predict", static_cast<std::uint64_t>(mol.id)).next_u64();
    return dropout_predict(*bm.model, mol, cfg.n_mc, s);
  }
  const auto [mu, s] = bm.model->predict_one(mol);
  PredictiveDistribution d;
  d.mean = mu;
  d.epistemic_var = 0.0;
  d.aleatoric_var = std::exp(clamp_log_var(s));
  d.total_var = d.epistemic_var + d.aleatoric_var;
  return d;
}

std::vector<PredictionRecord> predict_set(const BuiltModel& bm, const RunConfig& cfg,
                                          const std::vector<CompiledMol>& mols,
                                          const std::vector<double>& y,
                                          const std::vector<std::size_t>& idx) {
  std::vector<PredictionRecord> recs;
  recs.reserve(idx.size());
  for (const std::size_t i : idx) {
    const PredictiveDistribution d = predict_record(bm, cfg, mols[i]);
    recs.push_back({mols[i].id, y[i], d.mean, d.epistemic_var, d.aleatoric_var, d.total_var});
  }
  return recs;
}

void write_predictions_csv(const fs::path& path, const Dataset& ds,
                           const std::vector<PredictionRecord>& recs) {
  std::ofstream out(path);
  if (!out) fail(Err::FileNotFound, "cannot write " + path.string());
  out.precision(17);
  out << "id,smiles,truth,mean,epistemic_var,aleatoric_var,total_var\n";
  for (const PredictionRecord& r : recs) {
    const std::string& smi = ds.records[static_cast<std::size_t>(r.id)].smiles;
    out << r.id << ',' << smi << ',' << r.truth << ',' << r.mean << ',' << r.epistemic_var
        << ',' << r.aleatoric_var << ',' << r.total_var << '\n';
  }
}

std::vector<PredictionRecord> read_predictions_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Err::FileNotFound, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) fail(Err::NoValidRows, "empty predictions file " + path);
  const std::vector<std::string> header = detail::split_csv_line(line);
  const auto col = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (detail::trim(header[i]) == name) return i;
    fail(Err::MissingColumn, "predictions file lacks column '" + name + "'");
  };
  const std::size_t c_id = col("id"), c_truth = col("truth"), c_mean = col("mean");
  const std::size_t c_epi = col("epistemic_var"), c_alea = col("aleatoric_var");
  const std::size_t c_tot = col("total_var");
  const auto num = [&](const std::string& v, const std::string& what) {
    try {
      std::size_t used = 0;
      const double x = std::stod(v, &used);
      if (used != v.size() || !std::isfinite(x)) throw std::invalid_argument("bad");
      return x;
    } catch (const std::exception&) {
      fail(Err::NoValidRows, "unparseable " + what + " value '" + v + "' in " + path);
    }
  };
  std::vector<PredictionRecord> recs;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const std::vector<std::string> parts = detail::split_csv_line(line);
    if (parts.size() < header.size())
      fail(Err::NoValidRows, "short row in predictions file " + path);
    PredictionRecord r;
    r.id = static_cast<int>(num(parts[c_id], "id"));
    r.truth = num(parts[c_truth], "truth");
    r.mean = num(parts[c_mean], "mean");
    r.epistemic_var = num(parts[c_epi], "epistemic_var");
    r.aleatoric_var = num(parts[c_alea], "aleatoric_var");
    r.total_var = num(parts[c_tot], "total_var");
    recs.push_back(r);
  }
  if (recs.empty()) fail(Err::NoValidRows, "no rows in predictions file " + path);
  return recs;
}

void write_curves(const fs::path& dir, const std::vector<PredictionRecord>& recs) {
  std::vector<double> percentiles;
  for (int q = 5; q <= 100; q += 5) percentiles.push_back(q);
  for (const Ranking r : {Ranking::Total, Ranking::Epistemic, Ranking::Aleatoric}) {
    const ConfidenceErrorCurve curve = confidence_error_curve(recs, percentiles, r);
    std::ofstream out(dir / ("curve_" + std::string(ranking_name(r)) + ".csv"));
    out.precision(17);
    out << "percentile,rmse\n";
    for (std::size_t i = 0; i < curve.percentiles.size(); ++i)
      out << curve.percentiles[i] << ',' << curve.rmse_at[i] << '\n';
  }
}

json set_metrics(const std::vector<PredictionRecord>& recs) {
  json m;
  m["n"] = recs.size();
  m["rmse"] = rmse(recs);
  m["r2"] = r2(recs);
  std::vector<double> tot, abs_err;
  for (const PredictionRecord& r : recs) {
    tot.push_back(r.total_var);
    abs_err.push_back(std::fabs(r.truth - r.mean));
  }
  try {
    m["spearman_total_var_abs_err"] = spearman(tot, abs_err);
  } catch (const MoluqError&) {
    m["spearman_total_var_abs_err"] = nullptr;
  }
  return m;
}

// The embedding corpus for semi-supervised runs: train on the given rows,
// reuse an existing checkpoint when present, persist the result otherwise.
ParamStore obtain_embedding(const fs::path& dir, const RunConfig& cfg,
                            const std::vector<CompiledMol>& corpus) {
  const fs::path path = dir / "checkpoints" / "embedding.txt";
  if (fs::exists(path)) return load_embedding(path.string());
  EmbedConfig ecfg = cfg.embed_config();
  ecfg.seed = substream(cfg.seed, "embed").next_u64();
  EmbedResult res = train_embeddings(corpus, cfg.model_config(), ecfg);
  save_embedding(res.params, path.string());
  return std::move(res.params);
}

std::unique_ptr<Regressor> instantiate(const RunConfig& cfg, const ParamStore* embed,
                                       std::uint64_t seed) {
  if (cfg.model == "semisup") return std::make_unique<SemiSupModel>(cfg.model_config(), *embed, seed);
  return std::make_unique<GraphConvModel>(cfg.model_config(), seed);
}

EvaluatorSpec evaluator_spec(const RunConfig& cfg, const ParamStore* embed) {
  EvaluatorSpec spec;
  spec.arch = cfg.model_config();
  spec.semisup = cfg.model == "semisup";
  spec.inference = cfg.inference;
  spec.epochs = cfg.epochs;
  spec.batch_size = static_cast<std::size_t>(cfg.batch_size);
  spec.lr = cfg.lr;
  spec.lambda = cfg.lambda;
  spec.adam = cfg.adam;
  spec.n_mc = cfg.n_mc;
  spec.n_particles = cfg.n_particles;
  spec.eta = cfg.eta;
  spec.fixed_h = cfg.fixed_h;
  spec.embed = embed;
  return spec;
}

int cmd_train(const CommonFlags& flags) {
  const RunConfig cfg = resolve_config(flags);
  const fs::path dir = prepare_run_dir(flags.out_dir, true);
  save_config(cfg, (dir / "config.snapshot").string());

  const Dataset ds = load_dataset(flags, cfg);
  const std::vector<CompiledMol> mols = compile_dataset(ds);
  const std::vector<double> y = target_vector(ds);
  const SplitIndices sp = make_split(ds, cfg);

  std::vector<CompiledMol> train_mols;
  std::vector<double> train_y;
  for (const std::size_t i : sp.train) {
    train_mols.push_back(mols[i]);
    train_y.push_back(y[i]);
  }

  BuiltModel bm;
  if (cfg.model == "semisup") bm.embed = obtain_embedding(dir, cfg, mols);
  bm.model = instantiate(cfg, &bm.embed, substream(cfg.seed, "init").next_u64());

  if (cfg.inference == "svgd") {
    SVGDConfig scfg = cfg.svgd_config();
    scfg.seed = substream(cfg.seed, "train").next_u64();
    bm.svgd = init_svgd_particles(*bm.model, scfg.n_particles,
                                  substream(cfg.seed, "particles").next_u64());
    train_svgd(*bm.model, bm.svgd, train_mols, train_y, scfg);
    save_svgd(bm.svgd, *bm.model, (dir / "checkpoints" / "svgd.txt").string());
  } else {
    TrainConfig tcfg = cfg.train_config();
    tcfg.seed = substream(cfg.seed, "train").next_u64();
    train_map(*bm.model, train_mols, train_y, tcfg);
    save_params(bm.model->store(), (dir / "checkpoints" / "params.txt").string());
  }

  json metrics;
  metrics["command"] = "train";
  metrics["dataset"] = flags.dataset_path;
  metrics["rejected_rows"] = ds.rejected.size();
  metrics["split"] = {{"train", sp.train.size()}, {"val", sp.val.size()}, {"test", sp.test.size()}};
  metrics["train"] = set_metrics(predict_set(bm, cfg, mols, y, sp.train));
  if (!sp.val.empty()) metrics["val"] = set_metrics(predict_set(bm, cfg, mols, y, sp.val));
  if (!sp.test.empty()) {
    const std::vector<PredictionRecord> test_recs = predict_set(bm, cfg, mols, y, sp.test);
    metrics["test"] = set_metrics(test_recs);
    write_predictions_csv(dir / "predictions.csv", ds, test_recs);
    write_curves(dir, test_recs);
  }
  write_json(dir / "metrics.json", metrics);
  std::cout << "trained " << cfg.model << "/" << cfg.inference << " on " << sp.train.size()
            << " molecules; artifacts in " << dir.string() << '\n';
  return 0;
}

int cmd_predict(const CommonFlags& flags, bool all_rows) {
  const RunConfig cfg = resolve_config(flags);
  const fs::path dir = prepare_run_dir(flags.out_dir, true);

  const Dataset ds = load_dataset(flags, cfg);
  const std::vector<CompiledMol> mols = compile_dataset(ds);
  const std::vector<double> y = target_vector(ds);

  BuiltModel bm;
  if (cfg.model == "semisup") {
    const fs::path epath = dir / "checkpoints" / "embedding.txt";
    if (!fs::exists(epath))
      fail(Err::BadCheckpoint, "semisup prediction needs " + epath.string());
    bm.embed = load_embedding(epath.string());
  }
  bm.model = instantiate(cfg, &bm.embed, substream(cfg.seed, "init").next_u64());
  if (cfg.inference == "svgd") {
    bm.svgd = load_svgd(*bm.model, (dir / "checkpoints" / "svgd.txt").string());
  } else {
    restore_into(bm.model->store(), load_params((dir / "checkpoints" / "params.txt").string()));
  }

  std::vector<std::size_t> idx;
  if (all_rows) {
    idx.resize(mols.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  } else {
    idx = make_split(ds, cfg).test;
    if (idx.empty()) fail(Err::FractionInvalid, "config split leaves no test rows; use --all");
  }
  const std::vector<PredictionRecord> recs = predict_set(bm, cfg, mols, y, idx);
  write_predictions_csv(dir / "predictions.csv", ds, recs);

  json metrics;
  metrics["command"] = "predict";
  metrics["dataset"] = flags.dataset_path;
  metrics["predicted"] = set_metrics(recs);
  write_json(dir / "metrics.json", metrics);
  std::cout << "wrote " << recs.size() << " predictions to "
            << (dir / "predictions.csv").string() << '\n';
  return 0;
}

int cmd_evaluate(const CommonFlags& flags, const std::string& predictions_path) {
  const fs::path dir = prepare_run_dir(flags.out_dir, false);
  const std::string path =
      predictions_path.empty() ? (dir / "predictions.csv").string() : predictions_path;
  const std::vector<PredictionRecord> recs = read_predictions_csv(path);

  json metrics;
  metrics["command"] = "evaluate";
  metrics["predictions"] = path;
  metrics["metrics"] = set_metrics(recs);
  std::vector<double> epi, alea, abs_err;
  for (const PredictionRecord& r : recs) {
    epi.push_back(r.epistemic_var);
    alea.push_back(r.aleatoric_var);
    abs_err.push_back(std::fabs(r.truth - r.mean));
  }
  const auto guarded_spearman = [&](const std::vector<double>& v) -> json {
    try {
      return spearman(v, abs_err);
    } catch (const MoluqError&) {
      return nullptr;
    }
  };
  metrics["metrics"]["spearman_epistemic_var_abs_err"] = guarded_spearman(epi);
  metrics["metrics"]["spearman_aleatoric_var_abs_err"] = guarded_spearman(alea);
  write_curves(dir, recs);
  write_json(dir / "metrics.json", metrics);
  std::cout << "evaluated " << recs.size() << " predictions; metrics in "
            << (dir / "metrics.json").string() << '\n';
  return 0;
}

int cmd_active_learn(const CommonFlags& flags) {
  const RunConfig cfg = resolve_config(flags);
  const fs::path dir = prepare_run_dir(flags.out_dir, true);
  save_config(cfg, (dir / "config.snapshot").string());

  const Dataset ds = load_dataset(flags, cfg);
  const std::vector<CompiledMol> mols = compile_dataset(ds);
  const std::vector<double> y = target_vector(ds);

  ParamStore embed;
  if (cfg.model == "semisup") embed = obtain_embedding(dir, cfg, mols);
  const EvaluatorSpec spec = evaluator_spec(cfg, cfg.model == "semisup" ? &embed : nullptr);
  const TrainEvalFn evaluator = make_train_eval(mols, y, spec);

  ActiveConfig acfg;
  acfg.test_frac = cfg.al_test_frac;
  acfg.init_frac = cfg.al_init_frac;
  acfg.batch_frac = cfg.al_batch_frac;
  acfg.n_iterations = cfg.al_iterations;
  const PoolState pool =
      cfg.al_pool == "scaffold"
          ? make_scaffold_biased_pool(scaffold_keys(ds), acfg.test_frac, acfg.init_frac, cfg.seed)
          : make_random_pool(ds.size(), acfg.test_frac, acfg.init_frac, cfg.seed);
  const Strategy strategy =
      cfg.al_strategy == "active" ? Strategy::Active : Strategy::Random;

  const LearningCurve curve =
      run_active_learning(mols, y, strategy, acfg, evaluator, cfg.seed, &pool);

  std::ofstream curve_out(dir / "learning_curve.csv");
  if (!curve_out) fail(Err::FileNotFound, "cannot write learning_curve.csv");
  write_learning_curves({curve}, curve_out);
  curve_out.close();

  json metrics;
  metrics["command"] = "active-learn";
  metrics["dataset"] = flags.dataset_path;
  metrics["strategy"] = strategy_name(strategy);
  metrics["pool"] = cfg.al_pool;
  json points = json::array();
  for (const CurvePoint& p : curve.points)
    points.push_back({{"iteration", p.iteration},
                      {"labeled", p.labeled_count},
                      {"rmse", p.rmse},
                      {"r2", p.r2}});
  metrics["points"] = points;
  write_json(dir / "metrics.json", metrics);
  std::cout << "active learning finished after " << curve.points.size() << " evaluations; curve in "
            << (dir / "learning_curve.csv").string() << '\n';
  return 0;
}

int cmd_embed(const CommonFlags& flags) {
  const RunConfig cfg = resolve_config(flags);
  const fs::path dir = prepare_run_dir(flags.out_dir, true);
  save_config(cfg, (dir / "config.snapshot").string());

  const Dataset ds = load_dataset(flags, cfg);
  const std::vector<CompiledMol> mols = compile_dataset(ds);

  EmbedConfig ecfg = cfg.embed_config();
  ecfg.seed = substream(cfg.seed, "embed").next_u64();
  const EmbedResult res = train_embeddings(mols, cfg.model_config(), ecfg);
  save_embedding(res.params, (dir / "checkpoints" / "embedding.txt").string());

  json metrics;
  metrics["command"] = "embed";
  metrics["dataset"] = flags.dataset_path;
  metrics["corpus"] = mols.size();
  metrics["final_objective"] = res.final_objective;
  metrics["epoch_loss"] = res.epoch_loss;
  write_json(dir / "metrics.json", metrics);
  std::cout << "embedded " << mols.size() << " molecules; checkpoint in "
            << (dir / "checkpoints" / "embedding.txt").string() << '\n';
  return 0;
}

int cmd_bias_probe(const CommonFlags& flags, int probe_group) {
  const RunConfig cfg = resolve_config(flags);
  const fs::path dir = prepare_run_dir(flags.out_dir, true);
  save_config(cfg, (dir / "config.snapshot").string());

  const Dataset ds = load_dataset(flags, cfg);
  const std::vector<CompiledMol> mols = compile_dataset(ds);
  const std::vector<double> y = target_vector(ds);
  const std::vector<std::string> keys = scaffold_keys(ds);

  std::map<std::string, std::vector<std::size_t>> by_key;
  for (std::size_t i = 0; i < keys.size(); ++i) by_key[keys[i]].push_back(i);
  std::vector<std::pair<std::string, std::vector<std::size_t>>> groups(by_key.begin(),
                                                                       by_key.end());
  std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) {
    if (a.second.size() != b.second.size()) return a.second.size() > b.second.size();
    return a.second.front() < b.second.front();
  });
  if (probe_group < 0 || static_cast<std::size_t>(probe_group) >= groups.size())
    fail(Err::BadConfig, "probe group " + std::to_string(probe_group) + " of " +
                             std::to_string(groups.size()) + " scaffold groups");
  if (groups.size() < 2)
    fail(Err::EmptyFamily, "bias probe needs at least two scaffold groups");

  const std::vector<std::size_t>& probe = groups[static_cast<std::size_t>(probe_group)].second;
  std::vector<std::size_t> in_domain;
  for (std::size_t g = 0; g < groups.size(); ++g)
    if (g != static_cast<std::size_t>(probe_group))
      in_domain.insert(in_domain.end(), groups[g].second.begin(), groups[g].second.end());
  std::sort(in_domain.begin(), in_domain.end());

  ParamStore embed;
  if (cfg.model == "semisup") {
    std::vector<CompiledMol> corpus;
    for (const std::size_t i : in_domain) corpus.push_back(mols[i]);
    EmbedConfig ecfg = cfg.embed_config();
    ecfg.seed = substream(cfg.seed, "embed").next_u64();
    EmbedResult res = train_embeddings(corpus, cfg.model_config(), ecfg);
    save_embedding(res.params, (dir / "checkpoints" / "embedding.txt").string());
    embed = std::move(res.params);
  }
  const EvaluatorSpec spec = evaluator_spec(cfg, cfg.model == "semisup" ? &embed : nullptr);
  const TrainEvalFn evaluator = make_train_eval(mols, y, spec);

  const BiasProbeReport rep = bias_probe(mols, y, in_domain, probe, evaluator, cfg.seed);

  json metrics;
  metrics["command"] = "bias-probe";
  metrics["dataset"] = flags.dataset_path;
  metrics["probe_scaffold"] = groups[static_cast<std::size_t>(probe_group)].first;
  metrics["n_probe"] = probe.size();
  metrics["n_in_domain_eval"] = rep.in_domain_var.size();
  metrics["in_domain_median_total_var"] = rep.in_domain_median;
  metrics["probe_median_total_var"] = rep.probe_median;
  metrics["median_ratio"] =
      rep.in_domain_median > 0.0 ? json(rep.probe_median / rep.in_domain_median) : json(nullptr);
  metrics["in_domain_rmse"] = rep.in_domain_rmse;
  metrics["probe_rmse"] = rep.probe_rmse;
  write_json(dir / "metrics.json", metrics);
  std::cout << "bias probe median total variance: probe " << rep.probe_median << " vs in-domain "
            << rep.in_domain_median << '\n';
  return 0;
}

// Central-difference check of the flat posterior gradient on a fixed
// three-molecule batch, every trainable coordinate.
double max_rel_grad_err(Regressor& model, const std::vector<CompiledMol>& mols,
                        const std::vector<double>& y) {
  const std::vector<std::size_t> batch = {0, 1, 2};
  const double lambda = 1e-2;
  std::vector<double> analytic;
  nlp_batch_grad(model, mols, y, batch, 1.0, lambda, nullptr, analytic);

  ParamStore& ps = model.store();
  std::vector<double> theta = ps.flatten(true);
  std::vector<double> scratch;
  const auto objective = [&]() {
    ps.unflatten(theta, true);
    return nlp_batch_grad(model, mols, y, batch, 1.0, lambda, nullptr, scratch).objective;
  };
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    const double up = objective();
    theta[i] = saved - h;
    const double down = objective();
    theta[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::fabs(numeric), std::fabs(analytic[i]), 1e-4});
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
  }
  ps.unflatten(theta, true);
  return worst;
}

int cmd_gradcheck(const CommonFlags& flags) {
  const RunConfig cfg = resolve_config(flags);
  const fs::path dir = prepare_run_dir(flags.out_dir, false);

  Dataset ds;
  ds.name = "gradcheck";
  ds.records = {{"CCO", 0.5}, {"c1ccccc1", -1.2}, {"CC(=O)N", 0.3}};
  const std::vector<CompiledMol> mols = compile_dataset(ds);
  const std::vector<double> y = target_vector(ds);

  ModelConfig arch;
  arch.T = 2;
  arch.hidden = 5;
  arch.fp_len = 7;
  arch.n_h = 4;

  json metrics;
  metrics["command"] = "gradcheck";
  double worst = 0.0;

  {
    GraphConvModel model(arch, substream(cfg.seed, "gradcheck-graphconv").next_u64());
    const double err = max_rel_grad_err(model, mols, y);
    metrics["graphconv_max_rel_err"] = err;
    worst = std::max(worst, err);
  }
  {
    EmbedConfig ecfg;
    ecfg.epochs = 5;
    ecfg.seed = substream(cfg.seed, "gradcheck-embed").next_u64();
    const EmbedResult embed = train_embeddings(mols, arch, ecfg);
    SemiSupModel model(arch, embed.params,
                       substream(cfg.seed, "gradcheck-semisup").next_u64());
    const double err = max_rel_grad_err(model, mols, y);
    metrics["semisup_max_rel_err"] = err;
    worst = std::max(worst, err);
  }

  const bool pass = worst < 1e-4;
  metrics["tolerance"] = 1e-4;
  metrics["max_rel_err"] = worst;
  metrics["pass"] = pass;
  write_json(dir / "metrics.json", metrics);
  std::cout << "gradcheck max relative error " << worst << (pass ? " (pass)" : " (FAIL)") << '\n';
  return pass ? 0 : 1;
}

int cmd_svgd_oracle(const CommonFlags& flags, int n_particles, int steps, double fixed_h) {
  const RunConfig cfg = resolve_config(flags);
  const fs::path dir = prepare_run_dir(flags.out_dir, false);

  if (n_particles < 2) fail(Err::BadConfig, "oracle needs at least two particles");
  if (steps < 1) fail(Err::BadConfig, "oracle needs at least one step");

  const std::size_t dim = 2;
  RngStream rng = substream(cfg.seed, "svgd-oracle");
  std::vector<std::vector<double>> particles(static_cast<std::size_t>(n_particles),
                                             std::vector<double>(dim));
  for (auto& p : particles)
    for (double& v : p) v = 2.0 * rng.normal();

  std::vector<std::vector<double>> grads(particles.size(), std::vector<double>(dim));
  std::vector<std::vector<double>> phi;
  double last_h = 0.0;
  for (int step = 0; step < steps; ++step) {
    const double eta = step < 1000 ? 0.2 : step < 2500 ? 0.05 : 0.02;
    for (std::size_t i = 0; i < particles.size(); ++i)
      for (std::size_t j = 0; j < dim; ++j) grads[i][j] = -particles[i][j];
    last_h = svgd_phi(particles, grads, fixed_h, phi);
    for (std::size_t i = 0; i < particles.size(); ++i)
      for (std::size_t j = 0; j < dim; ++j) particles[i][j] += eta * phi[i][j];
  }

  std::vector<double> mean(dim, 0.0), var(dim, 0.0);
  for (const auto& p : particles)
    for (std::size_t j = 0; j < dim; ++j) mean[j] += p[j];
  for (double& m : mean) m /= static_cast<double>(particles.size());
  for (const auto& p : particles)
    for (std::size_t j = 0; j < dim; ++j) var[j] += (p[j] - mean[j]) * (p[j] - mean[j]);
  for (double& v : var) v /= static_cast<double>(particles.size());

  bool pass_mean = true, pass_var = true;
  for (std::size_t j = 0; j < dim; ++j) {
    pass_mean = pass_mean && std::fabs(mean[j]) <= 0.05;
    pass_var = pass_var && std::fabs(var[j] - 1.0) <= 0.1;
  }
  const bool pass = pass_mean && pass_var;

  json metrics;
  metrics["command"] = "svgd-oracle";
  metrics["particles"] = n_particles;
  metrics["steps"] = steps;
  metrics["fixed_h"] = fixed_h;
  metrics["bandwidth"] = last_h;
  metrics["mean"] = mean;
  metrics["var"] = var;
  metrics["tolerance_mean"] = 0.05;
  metrics["tolerance_var"] = 0.1;
  metrics["pass_mean"] = pass_mean;
  metrics["pass_var"] = pass_var;
  metrics["pass"] = pass;
  write_json(dir / "metrics.json", metrics);
  std::cout << "svgd oracle mean (" << mean[0] << ", " << mean[1] << ") var (" << var[0] << ", "
            << var[1] << ")" << (pass ? " (pass)" : " (FAIL)") << '\n';
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian graph-convolutional regression on molecules"};
  app.require_subcommand(1);

  CommonFlags train_f, predict_f, eval_f, active_f, embed_f, bias_f, grad_f, oracle_f;
  bool predict_all = false;
  std::string eval_predictions;
  int probe_group = 0;
  int oracle_particles = 50;
  int oracle_steps = 4000;
  double oracle_fixed_h = 16.0;

  add_common(app.add_subcommand("train", "train a model and score the held-out split"),
             train_f, true);
  auto* predict_cmd =
      app.add_subcommand("predict", "score molecules with a trained checkpoint");
  add_common(predict_cmd, predict_f, true);
  predict_cmd->add_flag("--all", predict_all, "predict every row instead of the test split");
  auto* eval_cmd = app.add_subcommand("evaluate", "metrics and confidence curves for predictions");
  add_common(eval_cmd, eval_f, false);
  eval_cmd->add_option("--predictions", eval_predictions,
                       "predictions CSV (default: <out-dir>/predictions.csv)");
  add_common(app.add_subcommand("active-learn", "run an acquisition loop and emit its curve"),
             active_f, true);
  add_common(app.add_subcommand("embed", "train unsupervised embeddings over a corpus"),
             embed_f, true);
  auto* bias_cmd =
      app.add_subcommand("bias-probe", "compare uncertainty on a held-out scaffold group");
  add_common(bias_cmd, bias_f, true);
  bias_cmd->add_option("--probe-group", probe_group,
                       "scaffold group to hold out, by descending size (default largest)");
  add_common(app.add_subcommand("gradcheck", "finite-difference check of model gradients"),
             grad_f, false);
  auto* oracle_cmd =
      app.add_subcommand("svgd-oracle", "particle moments against a 2D Gaussian closed form");
  add_common(oracle_cmd, oracle_f, false);
  oracle_cmd->add_option("--particles", oracle_particles, "ensemble size");
  oracle_cmd->add_option("--steps", oracle_steps, "update steps");
  oracle_cmd->add_option("--fixed-h", oracle_fixed_h, "kernel bandwidth (0 = median heuristic)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() != 0)
      emit_error_record("", "BadArguments", e.what());
    return app.exit(e);
  }

  if (app.got_subcommand("train")) return guarded(train_f.out_dir, [&] { return cmd_train(train_f); });
  if (app.got_subcommand("predict"))
    return guarded(predict_f.out_dir, [&] { return cmd_predict(predict_f, predict_all); });
  if (app.got_subcommand("evaluate"))
    return guarded(eval_f.out_dir, [&] { return cmd_evaluate(eval_f, eval_predictions); });
  if (app.got_subcommand("active-learn"))
    return guarded(active_f.out_dir, [&] { return cmd_active_learn(active_f); });
  if (app.got_subcommand("embed")) return guarded(embed_f.out_dir, [&] { return cmd_embed(embed_f); });
  if (app.got_subcommand("bias-probe"))
    return guarded(bias_f.out_dir, [&] { return cmd_bias_probe(bias_f, probe_group); });
  if (app.got_subcommand("gradcheck"))
    return guarded(grad_f.out_dir, [&] { return cmd_gradcheck(grad_f); });
  if (app.got_subcommand("svgd-oracle"))
    return guarded(oracle_f.out_dir, [&] {
      return cmd_svgd_oracle(oracle_f, oracle_particles, oracle_steps, oracle_fixed_h);
    });
  return 0;
}
