#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "moluq/dataset.hpp"
#include "moluq/error.hpp"
#include "moluq/rng.hpp"
#include "moluq/smiles.hpp"

namespace moluq {

// Deterministic structure score standing in for a computed partition
// coefficient: counts carbons, oxygens, nitrogens, aromatic atoms, and rings.
inline double logp_surrogate(const smiles::MolGraph& g) {
  int n_c = 0, n_o = 0, n_n = 0, n_arom = 0;
  for (const smiles::Atom& a : g.atoms) {
    if (a.symbol == "C") ++n_c;
    if (a.symbol == "O") ++n_o;
    if (a.symbol == "N") ++n_n;
    if (a.aromatic) ++n_arom;
  }
  return 0.5 * n_c - 0.7 * n_o - 0.4 * n_n + 0.3 * n_arom + 1.1 * g.n_rings();
}

inline double logp_surrogate(const std::string& smi) {
  return logp_surrogate(smiles::mol_from_smiles(smi));
}

namespace detail {

// Assembles a random parseable SMILES from chain atoms, branches, and
// self-closing ring fragments. Ring digits are reused only after closing,
// so plain concatenation stays valid.
inline std::string random_smiles(RngStream& rng, int min_units, int max_units) {
  static const std::vector<std::string> kRings = {
      "c1ccccc1", "c1ccncc1", "c1ccsc1", "C1CCCCC1", "C1CCOC1", "C1CC1",
  };
  auto chain_atom = [&rng]() -> std::string {
    const std::uint64_t r = rng.below(10);
    if (r < 6) return "C";
    if (r < 8) return "O";
    if (r < 9) return "N";
    return "S";
  };
  const int units = min_units + static_cast<int>(rng.below(
                                    static_cast<std::uint64_t>(max_units - min_units + 1)));
  std::string out = chain_atom();
  bool last_was_plain_atom = true;
  for (int u = 1; u < units; ++u) {
    const std::uint64_t pick = rng.below(100);
    if (pick < 55) {
      if (pick < 8 && last_was_plain_atom && out.back() == 'C') out += '=';
      out += chain_atom();
      last_was_plain_atom = true;
    } else if (pick < 75) {
      out += kRings[static_cast<std::size_t>(rng.below(kRings.size()))];
      last_was_plain_atom = false;
    } else {
      out += '(';
      out += chain_atom();
      if (rng.below(2) == 0) out += chain_atom();
      out += ')';
      last_was_plain_atom = false;
    }
  }
  return out;
}

inline bool parses(const std::string& smi) {
  try {
    smiles::mol_from_smiles(smi);
    return true;
  } catch (const MoluqError&) {
    return false;
  }
}

}  // namespace detail

// n unique random molecules with target = structure score plus noise whose
// scale ramps with molecule size: small molecules are measured tightly,
// large ones loosely. Mirrors a solubility table in shape and size.
inline Dataset make_esol_like(std::size_t n, std::uint64_t seed) {
  Dataset ds;
  ds.name = "synthetic-esol-like";
  ds.units = "log units";
  RngStream gen = substream(seed, "synth-structures");
  RngStream noise = substream(seed, "synth-noise");
  std::set<std::string> seen;
  std::size_t guard = 0;
  while (ds.records.size() < n) {
    if (++guard > 200 * n + 1000) fail(Err::BadConfig, "generator failed to reach n molecules");
    const std::string smi = detail::random_smiles(gen, 2, 9);
    if (!detail::parses(smi) || !seen.insert(smi).second) continue;
    const smiles::MolGraph g = smiles::mol_from_smiles(smi);
    const double t =
        std::clamp((static_cast<double>(g.n_atoms()) - 3.0) / 17.0, 0.0, 1.0);
    const double sigma = 0.1 + 0.9 * t;
    ds.records.push_back({smi, logp_surrogate(g) + sigma * noise.normal()});
  }
  return ds;
}

struct HeteroscedasticSet {
  Dataset data;
  std::vector<double> true_var;  // per-record noise variance
};

// One controlling feature: chain length k = 1..n_lengths. The noise scale
// ramps linearly from 0.1 at the shortest chain to 1.0 at the longest, with
// per_length noisy observations of each length across two chain motifs.
inline HeteroscedasticSet make_sigma_ramp(std::size_t per_length, int n_lengths,
                                          std::uint64_t seed) {
  if (per_length < 1 || n_lengths < 2) fail(Err::BadConfig, "ramp needs >= 2 lengths");
  HeteroscedasticSet out;
  out.data.name = "synthetic-sigma-ramp";
  RngStream noise = substream(seed, "ramp-noise");
  for (int k = 1; k <= n_lengths; ++k) {
    const double t = static_cast<double>(k - 1) / static_cast<double>(n_lengths - 1);
    const double sigma = 0.1 + 0.9 * t;
    const std::string chain(static_cast<std::size_t>(k), 'C');
    const std::vector<std::string> motifs = {chain, chain + "O"};
    for (std::size_t rep = 0; rep < per_length; ++rep) {
      for (const std::string& smi : motifs) {
        const double y = logp_surrogate(smi) + sigma * noise.normal();
        out.data.records.push_back({smi, y});
        out.true_var.push_back(sigma * sigma);
      }
    }
  }
  return out;
}

struct ClusteredSet {
  Dataset data;
  std::vector<int> cluster;  // 0 = saturated chains, 1 = aromatic cores
};

// Two structurally separated families with family-dependent targets. Used by
// the active-learning experiments: a model trained on one family is blind to
// the other and should report high epistemic variance there.
inline ClusteredSet make_two_clusters(std::size_t per_cluster, std::uint64_t seed) {
  if (per_cluster < 1) fail(Err::BadConfig, "cluster size must be positive");
  ClusteredSet out;
  out.data.name = "synthetic-two-clusters";
  RngStream noise = substream(seed, "cluster-noise");
  auto add = [&](const std::string& smi, int cluster) {
    out.data.records.push_back({smi, logp_surrogate(smi) + 0.1 * noise.normal()});
    out.cluster.push_back(cluster);
  };
  std::set<std::string> seen;
  const std::vector<std::string> tails = {"", "O", "N", "(C)C", "OC", "NC"};
  std::size_t made = 0;
  for (std::size_t i = 0; made < per_cluster; ++i) {
    if (i > 10 * tails.size()) fail(Err::BadConfig, "per_cluster exceeds the chain family");
    const std::size_t k = 1 + i % 10;
    const std::string smi = std::string(k, 'C') + tails[(i / 10) % tails.size()];
    if (!seen.insert(smi).second) continue;
    add(smi, 0);
    ++made;
  }
  made = 0;
  const std::vector<std::string> cores = {"c1ccccc1", "c1ccncc1", "c1ccsc1"};
  for (std::size_t i = 0; made < per_cluster; ++i) {
    if (i > 8 * cores.size() * tails.size())
      fail(Err::BadConfig, "per_cluster exceeds the aromatic family");
    const std::size_t k = i % 8;
    const std::string smi =
        cores[(i / 8) % cores.size()] + std::string(k, 'C') + tails[(i / 24) % tails.size()];
    if (!detail::parses(smi) || !seen.insert(smi).second) continue;
    add(smi, 1);
    ++made;
  }
  return out;
}

struct FamilySet {
  Dataset data;
  std::vector<int> family;  // scaffold family id 0..2

  std::vector<std::size_t> members(int fam) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < family.size(); ++i)
      if (family[i] == fam) idx.push_back(i);
    return idx;
  }
};

// Three scaffold families (benzene, cyclohexane, thiophene cores) decorated
// with varying side chains; the target is the noiseless structure score.
// Sulfur appears only in the third family, so a model trained on the first
// two never sees that element.
inline FamilySet make_three_families(std::size_t per_family, std::uint64_t seed) {
  if (per_family < 1) fail(Err::BadConfig, "family size must be positive");
  (void)seed;  // enumeration is deterministic; kept for interface symmetry
  FamilySet out;
  out.data.name = "synthetic-three-families";
  const std::vector<std::string> cores = {"c1ccccc1", "C1CCCCC1", "c1ccsc1"};
  const std::vector<std::string> tails = {"", "O", "N", "C(C)C", "OC", "CN", "CO"};
  for (int fam = 0; fam < 3; ++fam) {
    std::set<std::string> seen;
    std::size_t made = 0;
    for (std::size_t i = 0; made < per_family; ++i) {
      if (i > 10 * tails.size()) fail(Err::BadConfig, "per_family exceeds the template family");
      const std::size_t a = i % 10;
      const std::string smi =
          std::string(a, 'C') + cores[static_cast<std::size_t>(fam)] + tails[(i / 10) % tails.size()];
      if (!detail::parses(smi) || !seen.insert(smi).second) continue;
      out.data.records.push_back({smi, logp_surrogate(smi)});
      out.family.push_back(fam);
      ++made;
    }
  }
  return out;
}

}  // namespace moluq
