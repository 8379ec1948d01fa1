#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "moluq/graphconv.hpp"

using namespace moluq;
using smiles::MolGraph;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.T = 2;
  cfg.hidden = 4;
  cfg.fp_len = 8;
  cfg.n_h = 4;
  cfg.dropout_p = 0.2;
  return cfg;
}

CompiledMol compiled(const char* smi, int id = -1) {
  return compile_mol(smiles::mol_from_smiles(smi), id);
}

double fp_sum(GraphConvModel& model, const CompiledMol& mol) {
  ad::Tape tape(&model.store());
  const ad::Value fp = emit_fingerprint(tape, mol, model.config());
  double s = 0.0;
  for (double v : tape.val(fp).data) s += v;
  return s;
}

Tensor fingerprint_of(GraphConvModel& model, const CompiledMol& mol) {
  ad::Tape tape(&model.store());
  return tape.val(emit_fingerprint(tape, mol, model.config()));
}

// relabel atoms (and shuffle bond storage order) without touching structure
MolGraph permuted(const MolGraph& g, RngStream& rng) {
  std::vector<std::size_t> dest(g.n_atoms());
  std::iota(dest.begin(), dest.end(), 0);
  rng.shuffle(dest);
  MolGraph h;
  h.atoms.resize(g.n_atoms());
  for (std::size_t i = 0; i < g.n_atoms(); ++i) h.atoms[dest[i]] = g.atoms[i];
  h.bonds = g.bonds;
  for (auto& b : h.bonds) {
    b.a = static_cast<int>(dest[static_cast<std::size_t>(b.a)]);
    b.b = static_cast<int>(dest[static_cast<std::size_t>(b.b)]);
    if (rng.bernoulli(0.5)) std::swap(b.a, b.b);
  }
  rng.shuffle(h.bonds);
  smiles::detail::finalize_graph(h, /*recompute_h=*/false);
  smiles::featurize(h);
  return h;
}

}  // namespace

TEST_CASE("parameter bank shapes follow the config") {
  const ModelConfig cfg = tiny_config();
  GraphConvModel model(cfg, 7);
  ParamStore& ps = model.store();
  CHECK(ps.size() == 2 * 5 + 3 + 6);  // H.t.d, W.0..2, head
  CHECK(ps.value("H.1.3").rows == smiles::kAtomFeatureDim + smiles::kBondFeatureDim);
  CHECK(ps.value("H.2.3").rows == cfg.hidden + smiles::kBondFeatureDim);
  CHECK(ps.value("H.2.3").cols == cfg.hidden);
  CHECK(ps.value("W.0").rows == smiles::kAtomFeatureDim);
  CHECK(ps.value("W.2").rows == cfg.hidden);
  CHECK(ps.value("W.2").cols == cfg.fp_len);
  CHECK(ps.value("head.w1").rows == cfg.fp_len);
  CHECK(ps.value("head.w3").cols == 2);

  GraphConvModel same(cfg, 7);
  GraphConvModel other(cfg, 8);
  CHECK(model.store().value_hash() == same.store().value_hash());
  CHECK(model.store().value_hash() != other.store().value_hash());

  ModelConfig bad = cfg;
  bad.T = 0;
  CHECK_THROWS_AS(GraphConvModel(bad, 1), MoluqError);
  bad = cfg;
  bad.dropout_p = 1.0;
  CHECK_THROWS_AS(GraphConvModel(bad, 1), MoluqError);
}

TEST_CASE("fingerprint sums to n_atoms times steps plus one") {
  GraphConvModel model(tiny_config(), 3);  // T = 2
  CHECK_THAT(fp_sum(model, compiled("C")), Catch::Matchers::WithinAbs(3.0, 1e-9));
  CHECK_THAT(fp_sum(model, compiled("[NH4+]")), Catch::Matchers::WithinAbs(3.0, 1e-9));
  CHECK_THAT(fp_sum(model, compiled("CCO")), Catch::Matchers::WithinAbs(9.0, 1e-9));
  CHECK_THAT(fp_sum(model, compiled("C1CC2CCC1C2")), Catch::Matchers::WithinAbs(21.0, 1e-9));

  ModelConfig cfg3 = tiny_config();
  cfg3.T = 3;
  GraphConvModel deep(cfg3, 3);
  CHECK_THAT(fp_sum(deep, compiled("c1ccccc1")), Catch::Matchers::WithinAbs(24.0, 1e-9));
  CHECK_THAT(fp_sum(deep, compiled("c1ccccc1C")), Catch::Matchers::WithinAbs(28.0, 1e-9));
}

TEST_CASE("symmetric atoms share hidden states") {
  const ModelConfig cfg = tiny_config();
  GraphConvModel model(cfg, 11);
  SECTION("two-atom molecule") {
    const CompiledMol mol = compiled("OO");
    const std::vector<Tensor> states = hidden_states(model.store(), mol, cfg);
    REQUIRE(states.size() == 3);
    for (std::size_t t = 1; t < states.size(); ++t)
      for (std::size_t c = 0; c < cfg.hidden; ++c)
        CHECK(states[t].at(0, c) == states[t].at(1, c));
  }
  SECTION("benzene ring") {
    const CompiledMol mol = compiled("c1ccccc1");
    const std::vector<Tensor> states = hidden_states(model.store(), mol, cfg);
    for (std::size_t t = 1; t < states.size(); ++t)
      for (std::size_t v = 1; v < 6; ++v)
        for (std::size_t c = 0; c < cfg.hidden; ++c)
          CHECK(states[t].at(v, c) == states[t].at(0, c));
  }
}

TEST_CASE("relabeling atoms changes nothing observable") {
  const ModelConfig cfg = tiny_config();
  GraphConvModel model(cfg, 5);
  const MolGraph base = smiles::mol_from_smiles("CC(C)c1ccc(CCN)cc1");
  const CompiledMol mol0 = compile_mol(base);
  const Tensor fp0 = fingerprint_of(model, mol0);
  const auto [mu0, s0] = model.predict_one(mol0);

  std::vector<Tensor> states0 = hidden_states(model.store(), mol0, cfg);
  RngStream rng(123);
  for (int trial = 0; trial < 20; ++trial) {
    const MolGraph relabeled = permuted(base, rng);
    const CompiledMol mol1 = compile_mol(relabeled);
    const Tensor fp1 = fingerprint_of(model, mol1);
    REQUIRE(fp1.size() == fp0.size());
    for (std::size_t i = 0; i < fp0.size(); ++i)
      CHECK_THAT(fp1.data[i], Catch::Matchers::WithinAbs(fp0.data[i], 1e-12));
    const auto [mu1, s1] = model.predict_one(mol1);
    CHECK_THAT(mu1, Catch::Matchers::WithinAbs(mu0, 1e-12));
    CHECK_THAT(s1, Catch::Matchers::WithinAbs(s0, 1e-12));

    // hidden-state multiset is preserved: compare sorted row serializations
    std::vector<Tensor> states1 = hidden_states(model.store(), mol1, cfg);
    for (std::size_t t = 1; t < states0.size(); ++t) {
      auto rows_of = [&](const Tensor& m) {
        std::vector<std::vector<double>> rows;
        for (std::size_t r = 0; r < m.rows; ++r)
          rows.emplace_back(m.row_ptr(r), m.row_ptr(r) + m.cols);
        std::sort(rows.begin(), rows.end());
        return rows;
      };
      const auto a = rows_of(states0[t]);
      const auto b = rows_of(states1[t]);
      REQUIRE(a.size() == b.size());
      for (std::size_t r = 0; r < a.size(); ++r)
        for (std::size_t c = 0; c < a[r].size(); ++c)
          CHECK_THAT(a[r][c], Catch::Matchers::WithinAbs(b[r][c], 1e-12));
    }
  }
}

TEST_CASE("one message-passing step only sees direct neighbors") {
  ModelConfig cfg = tiny_config();
  cfg.T = 1;
  GraphConvModel model(cfg, 9);

  MolGraph pentane = smiles::mol_from_smiles("CCCCC");
  const std::vector<Tensor> before = hidden_states(model.store(), compile_mol(pentane), cfg);

  MolGraph changed = pentane;
  changed.atoms[3].element = smiles::Element::N;
  changed.atoms[3].symbol = "N";
  changed.atoms[3].implicit_h = 1;
  smiles::featurize(changed);
  const std::vector<Tensor> after = hidden_states(model.store(), compile_mol(changed), cfg);

  // atoms 0 and 1 are more than one bond from atom 3: identical states
  for (std::size_t c = 0; c < cfg.hidden; ++c) {
    CHECK(after[1].at(0, c) == before[1].at(0, c));
    CHECK(after[1].at(1, c) == before[1].at(1, c));
  }
  // atom 2 is adjacent to atom 3: its state must move
  bool moved = false;
  for (std::size_t c = 0; c < cfg.hidden; ++c)
    moved = moved || after[1].at(2, c) != before[1].at(2, c);
  CHECK(moved);
}

TEST_CASE("dropout masks behave at the edges") {
  const ModelConfig cfg = tiny_config();
  GraphConvModel model(cfg, 13);
  const CompiledMol mol = compiled("c1ccoc1");

  SECTION("p = 0 mask is the identity") {
    ModelConfig zero = cfg;
    zero.dropout_p = 0.0;
    RngStream rng(1);
    const DropoutMask mask = sample_dropout_mask(mol, zero, rng, true);
    const auto [mu_plain, s_plain] = model.predict_one(mol);
    const auto [mu_masked, s_masked] = model.predict_one(mol, &mask);
    CHECK(mu_masked == mu_plain);
    CHECK(s_masked == s_plain);
  }
  SECTION("all-dropped mask leaves only the output bias") {
    DropoutMask dead;
    for (int t = 1; t <= cfg.T; ++t) dead.h_masks.push_back(Tensor(mol.n_active(), cfg.hidden));
    dead.fp_mask = Tensor(1, cfg.fp_len);
    dead.head1_mask = Tensor(1, cfg.n_h);
    dead.head2_mask = Tensor(1, cfg.n_h);
    model.store().value("head.b3") = Tensor(1, 2, {0.7, -0.3});
    const auto [mu, s] = model.predict_one(mol, &dead);
    CHECK(mu == 0.7);
    CHECK(s == -0.3);
  }
  SECTION("zero-weight output layer exposes its bias") {
    GraphConvModel fresh(cfg, 13);
    fresh.store().value("head.w3") = Tensor(cfg.n_h, 2);
    fresh.store().value("head.b3") = Tensor(1, 2, {1.5, -2.0});
    const auto [mu, s] = fresh.predict_one(mol);
    CHECK(mu == 1.5);
    CHECK(s == -2.0);
  }
  SECTION("mask statistics respect the rate") {
    RngStream rng(77);
    int dropped = 0, total = 0;
    for (int i = 0; i < 200; ++i) {
      const DropoutMask m = sample_dropout_mask(mol, cfg, rng, true);
      for (const Tensor* t : {&m.fp_mask, &m.head1_mask, &m.head2_mask})
        for (double v : t->data) {
          ++total;
          if (v == 0.0) ++dropped;
          else CHECK_THAT(v, Catch::Matchers::WithinRel(1.0 / (1.0 - cfg.dropout_p), 1e-12));
        }
    }
    const double rate = static_cast<double>(dropped) / total;
    CHECK(rate > cfg.dropout_p - 0.03);
    CHECK(rate < cfg.dropout_p + 0.03);
  }
}

TEST_CASE("end-to-end gradients match finite differences") {
  const ModelConfig cfg = tiny_config();
  GraphConvModel model(cfg, 21);
  ParamStore& ps = model.store();
  const std::vector<CompiledMol> batch = {compiled("CCO", 0), compiled("c1ccoc1", 1),
                                          compiled("C", 2), compiled("CC(C)C", 3)};
  const std::vector<double> y = {0.3, -1.1, 0.0, 2.0};

  auto loss_value = [&]() {
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      ad::Tape tape(&ps);
      const TwoHead out = model.emit(tape, batch[i]);
      const double mu = tape.scalar(out.mu);
      const double s = tape.scalar(out.s);
      total += (mu - y[i]) * (mu - y[i]) + 0.1 * s * s;
    }
    return total;
  };

  ps.zero_grad();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ad::Tape tape(&ps);
    const TwoHead out = model.emit(tape, batch[i]);
    const ad::Value err = tape.sub(out.mu, tape.constant(Tensor::scalar(y[i])));
    const ad::Value loss =
        tape.add(tape.square(err), tape.scale(tape.square(out.s), 0.1));
    tape.backward(tape.sum(loss));
  }
  const std::vector<double> analytic = ps.flatten_grad(true);
  std::vector<double> theta = ps.flatten(true);
  const double h = 1e-5;
  int checked = 0;
  for (std::size_t i = 0; i < theta.size(); i += 7) {  // stride keeps runtime low
    const double saved = theta[i];
    theta[i] = saved + h;
    ps.unflatten(theta, true);
    const double up = loss_value();
    theta[i] = saved - h;
    ps.unflatten(theta, true);
    const double down = loss_value();
    theta[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::fabs(numeric), std::fabs(analytic[i]), 1e-4});
    INFO("theta[" << i << "] analytic=" << analytic[i] << " numeric=" << numeric);
    CHECK(std::fabs(analytic[i] - numeric) <= 1e-4 * denom);
    ++checked;
  }
  ps.unflatten(theta, true);
  CHECK(checked > 100);
}

TEST_CASE("non-finite predictions are refused") {
  GraphConvModel model(tiny_config(), 2);
  model.store().value("head.b3").data[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(model.predict_one(compiled("CCO")), MoluqError);
  try {
    model.predict_one(compiled("CCO"));
  } catch (const MoluqError& e) {
    CHECK(e.code() == Err::NonFiniteValue);
  }
}

TEST_CASE("compiling an unfeaturized graph is rejected") {
  MolGraph g = smiles::parse_smiles("CCO");
  CHECK_THROWS_AS(compile_mol(g), MoluqError);
}
