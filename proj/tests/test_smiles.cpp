#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "moluq/smiles.hpp"

using namespace moluq::smiles;
using moluq::Err;
using moluq::MoluqError;

namespace {

Err code_of(const std::string& smi) {
  try {
    parse_smiles(smi);
  } catch (const MoluqError& e) {
    return e.code();
  }
  FAIL("expected parse of '" << smi << "' to throw");
  return Err::EmptyInput;
}

int total_implicit_h(const MolGraph& g) {
  int n = 0;
  for (const auto& a : g.atoms) n += a.implicit_h;
  return n;
}

int aromatic_atoms(const MolGraph& g) {
  int n = 0;
  for (const auto& a : g.atoms) n += a.aromatic ? 1 : 0;
  return n;
}

using AtomSig = std::tuple<int, bool, int, int, int>;  // element, aromatic, charge, implicit_h, degree
using BondSig = std::pair<int, bool>;                  // order, in_ring

std::multiset<AtomSig> atom_signature(const MolGraph& g) {
  std::multiset<AtomSig> s;
  for (const auto& a : g.atoms)
    s.insert({static_cast<int>(a.element), a.aromatic, a.formal_charge, a.implicit_h, a.degree});
  return s;
}

std::multiset<BondSig> bond_signature(const MolGraph& g) {
  std::multiset<BondSig> s;
  for (const auto& b : g.bonds) s.insert({static_cast<int>(b.order), b.in_ring});
  return s;
}

}  // namespace

TEST_CASE("hand-counted molecule table") {
  struct Row {
    const char* smi;
    int atoms, bonds, rings, implicit_h, aromatics;
  };
  // implicit H totals counted by hand from valence rules
  const Row rows[] = {
      {"C", 1, 0, 0, 4, 0},
      {"CC", 2, 1, 0, 6, 0},
      {"C=C", 2, 1, 0, 4, 0},
      {"C#C", 2, 1, 0, 2, 0},
      {"C#N", 2, 1, 0, 1, 0},
      {"CCO", 3, 2, 0, 6, 0},
      {"OO", 2, 1, 0, 2, 0},
      {"CC(=O)O", 4, 3, 0, 4, 0},
      {"c1ccccc1", 6, 6, 1, 6, 6},
      {"c1ccccc1C", 7, 7, 1, 8, 6},
      {"C1CC1", 3, 3, 1, 6, 0},
      {"C1CCCCC1", 6, 6, 1, 12, 0},
      {"c1ccc2ccccc2c1", 10, 11, 2, 8, 10},
      {"C1=CC=CC=C1", 6, 6, 1, 6, 0},
      {"c1ccoc1", 5, 5, 1, 4, 5},
      {"c1cc[nH]c1", 5, 5, 1, 5, 5},
      {"c1ccncc1", 6, 6, 1, 5, 6},
      {"c1ccsc1", 5, 5, 1, 4, 5},
      {"CC(C)C", 4, 3, 0, 10, 0},
      {"CC(C)(C)C", 5, 4, 0, 12, 0},
      {"ClC(Cl)(Cl)Cl", 5, 4, 0, 0, 0},
      {"FC(F)F", 4, 3, 0, 1, 0},
      {"O=C=O", 3, 2, 0, 0, 0},
      {"S=C=S", 3, 2, 0, 0, 0},
      {"CS(=O)(=O)O", 5, 4, 0, 4, 0},
      {"[NH4+]", 1, 0, 0, 4, 0},
      {"[CH3-]", 1, 0, 0, 3, 0},
      {"[O-]C(=O)C", 4, 3, 0, 3, 0},
      {"N1CCOCC1", 6, 6, 1, 9, 0},
      {"C%10CC%10", 3, 3, 1, 6, 0},
      {"B(O)(O)O", 4, 3, 0, 3, 0},
      {"P(O)(O)O", 4, 3, 0, 3, 0},
      {"C1CCC2(CC1)CCCC2", 10, 11, 2, 18, 0},
      {"CBr", 2, 1, 0, 3, 0},
      {"CI", 2, 1, 0, 3, 0},
      {"BrCBr", 3, 2, 0, 2, 0},
      {"CCN(CC)CC", 7, 6, 0, 15, 0},
      {"c1cnc2[nH]ccc2c1", 9, 10, 2, 6, 9},
      {"[Si](C)(C)(C)C", 5, 4, 0, 12, 0},
      {"C=1CC=1", 3, 3, 1, 4, 0},
      {"N(=O)O", 3, 2, 0, 1, 0},
      {"CN1CCCC1", 6, 6, 1, 11, 0},
      {"[nH]1cccc1", 5, 5, 1, 5, 5},
  };
  for (const Row& r : rows) {
    INFO("molecule " << r.smi);
    const MolGraph g = parse_smiles(r.smi);
    CHECK(static_cast<int>(g.n_atoms()) == r.atoms);
    CHECK(static_cast<int>(g.n_bonds()) == r.bonds);
    CHECK(g.n_rings() == r.rings);
    CHECK(total_implicit_h(g) == r.implicit_h);
    CHECK(aromatic_atoms(g) == r.aromatics);
  }
}

TEST_CASE("per-atom details of a few molecules") {
  SECTION("toluene") {
    const MolGraph g = parse_smiles("c1ccccc1C");
    REQUIRE(g.n_atoms() == 7);
    const Atom& attachment = g.atoms[5];  // ring atom bonded to the methyl
    CHECK(attachment.degree == 3);
    CHECK(attachment.implicit_h == 0);
    CHECK(attachment.aromatic);
    const Atom& methyl = g.atoms[6];
    CHECK(methyl.degree == 1);
    CHECK(methyl.implicit_h == 3);
    CHECK_FALSE(methyl.aromatic);
    int ring_bonds = 0;
    for (const auto& b : g.bonds) ring_bonds += b.in_ring ? 1 : 0;
    CHECK(ring_bonds == 6);  // the exocyclic bond is not in a ring
  }
  SECTION("charged bracket atom") {
    const MolGraph g = parse_smiles("c1cc[n+](C)c1");
    const Atom& n = g.atoms[3];
    CHECK(n.symbol == "N");
    CHECK(n.aromatic);
    CHECK(n.formal_charge == 1);
    CHECK(n.implicit_h == 0);
    CHECK(n.degree == 3);
  }
  SECTION("multi-charge forms") {
    CHECK(parse_smiles("[O-2]").atoms[0].formal_charge == -2);
    CHECK(parse_smiles("[N++]").atoms[0].formal_charge == 2);
    CHECK(parse_smiles("[O--]").atoms[0].formal_charge == -2);
    CHECK(parse_smiles("[N+3]").atoms[0].formal_charge == 3);
  }
  SECTION("bridged bicycle marks every ring bond") {
    // norbornane: all 8 bonds sit on cycles
    const MolGraph g = parse_smiles("C1CC2CCC1C2");
    CHECK(g.n_rings() == 2);
    for (const auto& b : g.bonds) CHECK(b.in_ring);
  }
  SECTION("elements map to feature categories") {
    CHECK(parse_smiles("B").atoms[0].element == Element::Other);
    CHECK(parse_smiles("[Na+]").atoms[0].element == Element::Other);
    CHECK(parse_smiles("P").atoms[0].element == Element::P);
    CHECK(parse_smiles("Cl").atoms[0].element == Element::Cl);
  }
}

TEST_CASE("parse errors carry codes and positions") {
  CHECK(code_of("") == Err::EmptyInput);
  CHECK(code_of("   ") == Err::EmptyInput);
  CHECK(code_of("C(") == Err::UnmatchedParenthesis);
  CHECK(code_of("C(C(C)") == Err::UnmatchedParenthesis);
  CHECK(code_of("C)") == Err::UnmatchedParenthesis);
  CHECK(code_of("C1CC") == Err::UnmatchedRingClosure);
  CHECK(code_of("C12CC1") == Err::UnmatchedRingClosure);
  CHECK(code_of("C11") == Err::UnmatchedRingClosure);   // closes on itself
  CHECK(code_of("C1C1") == Err::UnmatchedRingClosure);  // duplicates the chain bond
  CHECK(code_of("C=1CC#1") == Err::UnmatchedRingClosure);
  CHECK(code_of("CX") == Err::UnknownToken);
  CHECK(code_of("C.C") == Err::UnknownToken);
  CHECK(code_of("[13C]") == Err::UnknownToken);
  CHECK(code_of("[C@H](C)O") == Err::UnknownToken);
  CHECK(code_of("C/C=C/C") == Err::UnknownToken);
  CHECK(code_of("[C") == Err::UnknownToken);
  CHECK(code_of("[Xe]") == Err::UnknownToken);
  CHECK(code_of("=C") == Err::UnknownToken);
  CHECK(code_of("C=") == Err::UnknownToken);
  CHECK(code_of("C=-C") == Err::UnknownToken);
  CHECK(code_of("(C)") == Err::UnknownToken);
  CHECK(code_of("C(C)(C)(C)(C)(C)C") == Err::DegreeOverflow);

  try {
    parse_smiles("CX");
  } catch (const MoluqError& e) {
    CHECK(std::string(e.what()).find("position 1") != std::string::npos);
  }
  try {
    parse_smiles("CC(C)[Q]");
  } catch (const MoluqError& e) {
    CHECK(std::string(e.what()).find("position") != std::string::npos);
  }
}

TEST_CASE("whitespace is trimmed, inner whitespace rejected") {
  const MolGraph g = parse_smiles("  CCO \n");
  CHECK(g.n_atoms() == 3);
  CHECK(g.source_smiles == "CCO");
  CHECK(code_of("CC O") == Err::UnknownToken);
}

TEST_CASE("feature matrix shape and one-hot structure") {
  const char* corpus[] = {"CCO", "c1ccccc1", "CC(=O)[O-]", "[NH4+]", "C1CC1",
                          "c1cc[n+](C)c1", "[SH6]", "C#N", "[Si](C)(C)(C)C"};
  for (const char* smi : corpus) {
    INFO("molecule " << smi);
    MolGraph g = mol_from_smiles(smi);
    REQUIRE(g.atom_features.rows == g.n_atoms());
    REQUIRE(g.atom_features.cols == 23);
    REQUIRE(g.bond_features.rows == g.n_bonds());
    if (g.n_bonds() > 0) REQUIRE(g.bond_features.cols == 5);
    for (std::size_t v = 0; v < g.n_atoms(); ++v) {
      const double* row = g.atom_features.row_ptr(v);
      int element_hot = 0, degree_hot = 0, h_hot = 0;
      for (int j = 0; j < 10; ++j) element_hot += row[j] == 1.0 ? 1 : 0;
      for (int j = 10; j < 16; ++j) degree_hot += row[j] == 1.0 ? 1 : 0;
      for (int j = 16; j < 21; ++j) h_hot += row[j] == 1.0 ? 1 : 0;
      CHECK(element_hot == 1);
      CHECK(degree_hot == 1);
      CHECK(h_hot == 1);
      CHECK(row[21] >= -1.0);
      CHECK(row[21] <= 1.0);
      CHECK((row[22] == 0.0 || row[22] == 1.0));
    }
    for (std::size_t e = 0; e < g.n_bonds(); ++e) {
      const double* row = g.bond_features.row_ptr(e);
      int order_hot = 0;
      for (int j = 0; j < 4; ++j) order_hot += row[j] == 1.0 ? 1 : 0;
      CHECK(order_hot == 1);
      CHECK((row[4] == 0.0 || row[4] == 1.0));
    }
  }
}

TEST_CASE("feature columns encode what they claim") {
  MolGraph benzene = mol_from_smiles("c1ccccc1");
  for (std::size_t v = 0; v < 6; ++v) {
    const double* row = benzene.atom_features.row_ptr(v);
    CHECK(row[0] == 1.0);       // carbon
    CHECK(row[10 + 2] == 1.0);  // degree 2
    CHECK(row[16 + 1] == 1.0);  // one implicit H
    CHECK(row[21] == 0.0);
    CHECK(row[22] == 1.0);  // aromatic
  }
  for (std::size_t e = 0; e < 6; ++e) {
    const double* row = benzene.bond_features.row_ptr(e);
    CHECK(row[3] == 1.0);  // aromatic order
    CHECK(row[4] == 1.0);  // in ring
  }

  MolGraph ammonium = mol_from_smiles("[NH4+]");
  const double* row = ammonium.atom_features.row_ptr(0);
  CHECK(row[1] == 1.0);       // nitrogen
  CHECK(row[10 + 0] == 1.0);  // isolated
  CHECK(row[16 + 4] == 1.0);  // four hydrogens
  CHECK(row[21] == 0.5);      // +1 scaled by half

  // clipping and capping
  MolGraph hot = mol_from_smiles("[N+3]");
  CHECK(hot.atom_features.at(0, 21) == 1.0);
  MolGraph hexa = mol_from_smiles("[SH6]");
  CHECK(hexa.atom_features.at(0, 16 + 4) == 1.0);  // H count capped at 4
  MolGraph anion = mol_from_smiles("[O-2]");
  CHECK(anion.atom_features.at(0, 21) == -1.0);

  MolGraph triple = mol_from_smiles("C#N");
  CHECK(triple.bond_features.at(0, 2) == 1.0);  // triple bond slot
  CHECK(triple.bond_features.at(0, 4) == 0.0);
}

TEST_CASE("scaffold keys collapse substituents and survive relabeling") {
  const auto key = [](const char* smi) { return murcko_scaffold(parse_smiles(smi)); };

  SECTION("acyclic molecules have no scaffold") {
    CHECK(key("C") == "");
    CHECK(key("CCCC") == "");
    CHECK(key("CC(=O)O") == "");
    CHECK(key("[NH4+]") == "");
  }
  SECTION("substituents do not change the scaffold") {
    const std::string benzene = key("c1ccccc1");
    CHECK(benzene != "");
    CHECK(key("c1ccccc1C") == benzene);
    CHECK(key("c1ccccc1CCN(C)C") == benzene);
    CHECK(key("Cc1ccc(O)cc1") == benzene);
    CHECK(key("FC(F)(F)c1ccccc1") == benzene);
  }
  SECTION("relabeling leaves the key alone") {
    CHECK(key("c1ccccc1CC") == key("CCc1ccccc1"));
    CHECK(key("c1ccncc1") == key("n1ccccc1"));
    CHECK(key("c1ccncc1") == key("c1cnccc1"));
    CHECK(key("c1ccc2ccccc2c1") == key("c2ccc1ccccc1c2"));
    CHECK(key("C1CCC2(CC1)CCCC2") == key("C1CCCC12CCCCC2"));
  }
  SECTION("different skeletons get different keys") {
    CHECK(key("c1ccccc1") != key("C1CCCCC1"));        // aromatic vs saturated
    CHECK(key("c1ccccc1") != key("c1ccncc1"));        // heteroatom
    CHECK(key("c1ccncc1") != key("c1cncnc1"));        // heteroatom position
    CHECK(key("c1ccc2ccccc2c1") != key("c1ccccc1-c1ccccc1"));  // fused vs linked
    CHECK(key("C1CC1") != key("C1CCC1"));             // ring size
    CHECK(key("C1=CC=CC=C1") != key("c1ccccc1"));     // bond orders differ
  }
  SECTION("linkers are part of the scaffold") {
    const std::string dpm = key("c1ccccc1Cc1ccccc1");
    CHECK(dpm != key("c1ccccc1-c1ccccc1"));
    CHECK(key("c1ccccc1C(CC)c1ccccc1") == dpm);  // substituent on the linker prunes away
    CHECK(key("c1ccccc1C(c1ccccc1)O") == dpm);   // hydroxyl prunes too
  }
  SECTION("scaffolding is idempotent, including through text form") {
    const char* mols[] = {"c1ccccc1CCN",  "CC1CCC(CC(C)C)CC1", "c1cnc2[nH]ccc2c1",
                          "O=C(O)c1ccccc1", "C1CCC2(CC1)CCCC2", "c1cc[n+](CC)c1"};
    for (const char* smi : mols) {
      INFO("molecule " << smi);
      const MolGraph g = parse_smiles(smi);
      const MolGraph s = scaffold_graph(g);
      REQUIRE(s.n_atoms() > 0);
      CHECK(murcko_scaffold(s) == murcko_scaffold(g));
      const std::string text = write_smiles(s);
      INFO("scaffold text " << text);
      CHECK(murcko_scaffold(parse_smiles(text)) == murcko_scaffold(g));
    }
  }
}

TEST_CASE("scaffold graph prunes exactly the acyclic fringe") {
  const MolGraph g = parse_smiles("CCc1ccc(CC(=O)O)cc1");
  const MolGraph s = scaffold_graph(g);
  CHECK(s.n_atoms() == 6);
  CHECK(s.n_bonds() == 6);
  CHECK(s.n_rings() == 1);
  for (const auto& a : s.atoms) {
    CHECK(a.aromatic);
    CHECK(a.implicit_h == 1);  // recomputed after pruning
  }
}

TEST_CASE("written text reparses to an equivalent graph") {
  const char* corpus[] = {
      "C",        "CCO",         "CC(C)(C)C",     "c1ccccc1",     "c1ccccc1C",
      "c1ccoc1",  "c1cc[nH]c1",  "CC(=O)[O-]",    "[NH4+]",       "C1CCCCC1",
      "C1CC2CCC1C2",             "c1ccc2ccccc2c1", "CS(=O)(=O)O", "c1cc[n+](C)c1",
      "C1CCC2(CC1)CCCC2",        "c1cnc2[nH]ccc2c1", "C#N",       "O=C=O",
      "B(O)(O)O", "CCN(CC)CC",   "C1=CC=CC=C1",   "[Si](C)(C)(C)C"};
  for (const char* smi : corpus) {
    INFO("molecule " << smi);
    const MolGraph g = parse_smiles(smi);
    const std::string text = write_smiles(g);
    INFO("rewritten as " << text);
    const MolGraph h = parse_smiles(text);
    CHECK(atom_signature(g) == atom_signature(h));
    CHECK(bond_signature(g) == bond_signature(h));
    CHECK(g.n_rings() == h.n_rings());
  }
}
