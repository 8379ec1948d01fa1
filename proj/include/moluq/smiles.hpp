#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "moluq/error.hpp"
#include "moluq/rng.hpp"
#include "moluq/tensor.hpp"

namespace moluq::smiles {

enum class Element { C, N, O, S, F, Cl, Br, I, P, Other };

constexpr int kAtomFeatureDim = 23;  // 10 element + 6 degree + 5 implicit-H + charge + aromatic
constexpr int kBondFeatureDim = 5;   // 4 order + in-ring
constexpr int kMaxDegree = 5;        // degree-indexed weight banks cover 1..5

enum class BondOrder { Single, Double, Triple, Aromatic };

struct Atom {
  Element element = Element::Other;
  std::string symbol;  // parsed symbol; kept for valence lookup and re-emission
  int formal_charge = 0;
  bool aromatic = false;
  int implicit_h = 0;
  int degree = 0;
  bool explicit_h = false;  // bracket atom: implicit_h was declared, not derived
};

struct Bond {
  int a = -1, b = -1;
  BondOrder order = BondOrder::Single;
  bool in_ring = false;
};

struct MolGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  // adjacency[v] = list of (neighbor atom index, bond index); symmetric
  std::vector<std::vector<std::pair<int, int>>> adjacency;
  Tensor atom_features;  // (n_atoms x 23) once featurized
  Tensor bond_features;  // (n_bonds x 5)
  std::string source_smiles;

  std::size_t n_atoms() const { return atoms.size(); }
  std::size_t n_bonds() const { return bonds.size(); }
  bool featurized() const { return atom_features.rows == atoms.size() && !atoms.empty(); }

  int count_components() const {
    std::vector<char> seen(atoms.size(), 0);
    int comps = 0;
    std::vector<int> stack;
    for (std::size_t s = 0; s < atoms.size(); ++s) {
      if (seen[s]) continue;
      ++comps;
      stack.push_back(static_cast<int>(s));
      seen[s] = 1;
      while (!stack.empty()) {
        const int u = stack.back();
        stack.pop_back();
        for (auto [v, e] : adjacency[static_cast<std::size_t>(u)])
          if (!seen[static_cast<std::size_t>(v)]) {
            seen[static_cast<std::size_t>(v)] = 1;
            stack.push_back(v);
          }
      }
    }
    return comps;
  }

  // cyclomatic ring count
  int n_rings() const {
    return static_cast<int>(bonds.size()) - static_cast<int>(atoms.size()) + count_components();
  }
};

inline double bond_order_value(BondOrder o) {
  switch (o) {
    case BondOrder::Single: return 1.0;
    case BondOrder::Double: return 2.0;
    case BondOrder::Triple: return 3.0;
    case BondOrder::Aromatic: return 1.5;
  }
  return 1.0;
}

inline int default_valence(const std::string& symbol) {
  static const std::map<std::string, int> table = {
      {"B", 3},  {"C", 4}, {"N", 3},  {"O", 2},  {"P", 3},
      {"S", 2},  {"F", 1}, {"Cl", 1}, {"Br", 1}, {"I", 1}};
  auto it = table.find(symbol);
  return it == table.end() ? 0 : it->second;
}

inline Element element_from_symbol(const std::string& symbol) {
  if (symbol == "C") return Element::C;
  if (symbol == "N") return Element::N;
  if (symbol == "O") return Element::O;
  if (symbol == "S") return Element::S;
  if (symbol == "F") return Element::F;
  if (symbol == "Cl") return Element::Cl;
  if (symbol == "Br") return Element::Br;
  if (symbol == "I") return Element::I;
  if (symbol == "P") return Element::P;
  return Element::Other;
}

namespace detail {

inline bool organic_subset(const std::string& symbol) {
  return symbol == "B" || symbol == "C" || symbol == "N" || symbol == "O" || symbol == "P" ||
         symbol == "S" || symbol == "F" || symbol == "Cl" || symbol == "Br" || symbol == "I";
}

inline bool aromatic_capable(const std::string& symbol) {
  return symbol == "B" || symbol == "C" || symbol == "N" || symbol == "O" || symbol == "S" ||
         symbol == "P";
}

// Tarjan bridge finding, iterative. Bonds not on any bridge lie on a cycle.
inline void mark_ring_bonds(MolGraph& g) {
  const std::size_t n = g.atoms.size();
  std::vector<int> disc(n, -1), low(n, 0), parent_edge(n, -1);
  int timer = 0;
  struct Frame {
    int u;
    std::size_t next_edge;
  };
  for (std::size_t s = 0; s < n; ++s) {
    if (disc[s] != -1) continue;
    std::vector<Frame> stack{{static_cast<int>(s), 0}};
    disc[s] = low[s] = timer++;
    while (!stack.empty()) {
      Frame& f = stack.back();
      const auto u = static_cast<std::size_t>(f.u);
      if (f.next_edge < g.adjacency[u].size()) {
        auto [v, e] = g.adjacency[u][f.next_edge++];
        if (e == parent_edge[u]) continue;
        if (disc[static_cast<std::size_t>(v)] == -1) {
          disc[static_cast<std::size_t>(v)] = low[static_cast<std::size_t>(v)] = timer++;
          parent_edge[static_cast<std::size_t>(v)] = e;
          stack.push_back({v, 0});
        } else {
          low[u] = std::min(low[u], disc[static_cast<std::size_t>(v)]);
          g.bonds[static_cast<std::size_t>(e)].in_ring = true;  // back edge closes a cycle
        }
      } else {
        stack.pop_back();
        if (!stack.empty()) {
          const auto p = static_cast<std::size_t>(stack.back().u);
          low[p] = std::min(low[p], low[u]);
          const int pe = parent_edge[u];
          // tree edge on a cycle iff some back edge spans it
          if (low[u] <= disc[p]) g.bonds[static_cast<std::size_t>(pe)].in_ring = true;
        }
      }
    }
  }
}

inline void finalize_graph(MolGraph& g, bool recompute_h) {
  g.adjacency.assign(g.atoms.size(), {});
  for (std::size_t e = 0; e < g.bonds.size(); ++e) {
    const Bond& b = g.bonds[e];
    g.adjacency[static_cast<std::size_t>(b.a)].emplace_back(b.b, static_cast<int>(e));
    g.adjacency[static_cast<std::size_t>(b.b)].emplace_back(b.a, static_cast<int>(e));
  }
  for (std::size_t v = 0; v < g.atoms.size(); ++v) {
    g.atoms[v].degree = static_cast<int>(g.adjacency[v].size());
    if (g.atoms[v].degree > kMaxDegree)
      fail(Err::DegreeOverflow, "atom " + std::to_string(v) + " has " +
                                    std::to_string(g.atoms[v].degree) + " heavy neighbors");
  }
  for (auto& b : g.bonds) b.in_ring = false;
  mark_ring_bonds(g);
  if (recompute_h) {
    for (std::size_t v = 0; v < g.atoms.size(); ++v) {
      Atom& a = g.atoms[v];
      if (a.explicit_h) continue;  // bracket atoms keep their declared count
      double order_sum = 0.0;
      for (auto [w, e] : g.adjacency[v]) order_sum += bond_order_value(g.bonds[static_cast<std::size_t>(e)].order);
      const int used = static_cast<int>(std::floor(order_sum));
      a.implicit_h = std::max(0, default_valence(a.symbol) - used);
    }
  }
}

struct Parser {
  std::string_view text;
  std::size_t pos = 0;

  [[noreturn]] void die(Err code, const std::string& what) const {
    fail(code, what + " at position " + std::to_string(pos) + " in '" + std::string(text) + "'");
  }

  bool done() const { return pos >= text.size(); }
  char peek() const { return text[pos]; }

  // returns (symbol, aromatic); empty symbol if no atom at cursor
  std::pair<std::string, bool> try_bare_atom() {
    const char c = text[pos];
    if (c == 'C' && pos + 1 < text.size() && text[pos + 1] == 'l') {
      pos += 2;
      return {"Cl", false};
    }
    if (c == 'B' && pos + 1 < text.size() && text[pos + 1] == 'r') {
      pos += 2;
      return {"Br", false};
    }
    switch (c) {
      case 'B': case 'C': case 'N': case 'O': case 'P': case 'S': case 'F': case 'I':
        ++pos;
        return {std::string(1, c), false};
      case 'b': case 'c': case 'n': case 'o': case 's': case 'p':
        ++pos;
        return {std::string(1, static_cast<char>(std::toupper(c))), true};
      default:
        return {"", false};
    }
  }

  Atom parse_bracket_atom() {
    ++pos;  // '['
    if (done()) die(Err::UnknownToken, "unterminated bracket atom");
    if (std::isdigit(static_cast<unsigned char>(peek())))
      die(Err::UnknownToken, "isotopes not supported");
    Atom a;
    // two-letter symbols first
    bool matched = false;
    static const char* two[] = {"Cl", "Br", "Si", "Se", "As", "Na", "Li"};
    for (const char* s : two) {
      if (text.compare(pos, 2, s) == 0) {
        a.symbol = s;
        pos += 2;
        matched = true;
        break;
      }
    }
    if (!matched) {
      const char c = peek();
      if (std::isupper(static_cast<unsigned char>(c))) {
        a.symbol = std::string(1, c);
        if (!organic_subset(a.symbol) && a.symbol != "K")
          die(Err::UnknownToken, "unsupported element '" + std::string(1, c) + "'");
        ++pos;
      } else if (c == 'b' || c == 'c' || c == 'n' || c == 'o' || c == 's' || c == 'p') {
        a.symbol = std::string(1, static_cast<char>(std::toupper(c)));
        a.aromatic = true;
        ++pos;
      } else {
        die(Err::UnknownToken, "expected element symbol in bracket");
      }
    }
    a.element = element_from_symbol(a.symbol);
    a.explicit_h = true;
    a.implicit_h = 0;
    if (!done() && peek() == '@') die(Err::UnknownToken, "stereochemistry not supported");
    if (!done() && peek() == 'H') {
      ++pos;
      a.implicit_h = 1;
      if (!done() && std::isdigit(static_cast<unsigned char>(peek()))) {
        a.implicit_h = peek() - '0';
        ++pos;
      }
    }
    if (!done() && (peek() == '+' || peek() == '-')) {
      const char sc = peek();
      int count = 1;
      ++pos;
      if (!done() && std::isdigit(static_cast<unsigned char>(peek()))) {
        count = peek() - '0';
        ++pos;
      } else {
        while (!done() && peek() == sc) {
          ++count;
          ++pos;
        }
      }
      a.formal_charge = sc == '+' ? count : -count;
    }
    if (done() || peek() != ']') die(Err::UnknownToken, "expected ']'");
    ++pos;
    return a;
  }
};

}  // namespace detail

inline MolGraph parse_smiles(std::string_view input) {
  std::string_view text = input;
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
  if (text.empty()) fail(Err::EmptyInput, "empty SMILES");

  detail::Parser p{text};
  MolGraph g;
  g.source_smiles = std::string(text);

  int prev = -1;
  char pending_bond = 0;
  std::vector<int> branch_stack;
  struct OpenRing {
    int atom;
    char bond;
    std::size_t pos;
  };
  std::map<int, OpenRing> open_rings;

  auto add_atom = [&](Atom a) {
    g.atoms.push_back(std::move(a));
    const int idx = static_cast<int>(g.atoms.size()) - 1;
    if (prev >= 0) {
      Bond b;
      b.a = prev;
      b.b = idx;
      switch (pending_bond) {
        case 0:
          b.order = (g.atoms[static_cast<std::size_t>(prev)].aromatic &&
                     g.atoms[static_cast<std::size_t>(idx)].aromatic)
                        ? BondOrder::Aromatic
                        : BondOrder::Single;
          break;
        case '-': b.order = BondOrder::Single; break;
        case '=': b.order = BondOrder::Double; break;
        case '#': b.order = BondOrder::Triple; break;
        case ':': b.order = BondOrder::Aromatic; break;
      }
      g.bonds.push_back(b);
    }
    prev = idx;
    pending_bond = 0;
  };

  auto close_or_open_ring = [&](int number) {
    if (prev < 0) p.die(Err::UnknownToken, "ring closure before any atom");
    auto it = open_rings.find(number);
    if (it == open_rings.end()) {
      open_rings[number] = {prev, pending_bond, p.pos};
      pending_bond = 0;
      return;
    }
    const OpenRing open = it->second;
    open_rings.erase(it);
    if (open.atom == prev)
      p.die(Err::UnmatchedRingClosure, "ring bond " + std::to_string(number) + " closes on itself");
    char bond_char = 0;
    if (open.bond && pending_bond && open.bond != pending_bond)
      p.die(Err::UnmatchedRingClosure,
            "conflicting bond symbols on ring closure " + std::to_string(number));
    bond_char = open.bond ? open.bond : pending_bond;
    for (const Bond& b : g.bonds)
      if ((b.a == open.atom && b.b == prev) || (b.a == prev && b.b == open.atom))
        p.die(Err::UnmatchedRingClosure,
              "duplicate bond via ring closure " + std::to_string(number));
    Bond b;
    b.a = open.atom;
    b.b = prev;
    switch (bond_char) {
      case 0:
        b.order = (g.atoms[static_cast<std::size_t>(open.atom)].aromatic &&
                   g.atoms[static_cast<std::size_t>(prev)].aromatic)
                      ? BondOrder::Aromatic
                      : BondOrder::Single;
        break;
      case '-': b.order = BondOrder::Single; break;
      case '=': b.order = BondOrder::Double; break;
      case '#': b.order = BondOrder::Triple; break;
      case ':': b.order = BondOrder::Aromatic; break;
    }
    g.bonds.push_back(b);
    pending_bond = 0;
  };

  while (!p.done()) {
    const char c = p.peek();
    if (c == '(') {
      if (prev < 0) p.die(Err::UnknownToken, "branch before any atom");
      branch_stack.push_back(prev);
      ++p.pos;
    } else if (c == ')') {
      if (branch_stack.empty()) p.die(Err::UnmatchedParenthesis, "unopened ')'");
      prev = branch_stack.back();
      branch_stack.pop_back();
      ++p.pos;
    } else if (c == '-' || c == '=' || c == '#' || c == ':') {
      if (prev < 0) p.die(Err::UnknownToken, "bond symbol before any atom");
      if (pending_bond) p.die(Err::UnknownToken, "two bond symbols in a row");
      pending_bond = c;
      ++p.pos;
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      close_or_open_ring(c - '0');
      ++p.pos;
    } else if (c == '%') {
      if (p.pos + 2 >= text.size() || !std::isdigit(static_cast<unsigned char>(text[p.pos + 1])) ||
          !std::isdigit(static_cast<unsigned char>(text[p.pos + 2])))
        p.die(Err::UnknownToken, "'%' needs two digits");
      const int number = (text[p.pos + 1] - '0') * 10 + (text[p.pos + 2] - '0');
      p.pos += 1;  // report position of the number on error
      close_or_open_ring(number);
      p.pos += 2;
    } else if (c == '[') {
      Atom a = p.parse_bracket_atom();
      add_atom(std::move(a));
    } else {
      auto [symbol, aromatic] = p.try_bare_atom();
      if (symbol.empty()) p.die(Err::UnknownToken, std::string("unexpected '") + c + "'");
      Atom a;
      a.symbol = symbol;
      a.element = element_from_symbol(symbol);
      a.aromatic = aromatic;
      add_atom(std::move(a));
    }
  }
  if (pending_bond)
    fail(Err::UnknownToken, "dangling bond symbol in '" + std::string(text) + "'");
  if (!branch_stack.empty())
    fail(Err::UnmatchedParenthesis, "unclosed '(' in '" + std::string(text) + "'");
  if (!open_rings.empty())
    fail(Err::UnmatchedRingClosure, "dangling ring closure " +
                                        std::to_string(open_rings.begin()->first) + " in '" +
                                        std::string(text) + "'");
  detail::finalize_graph(g, /*recompute_h=*/true);
  return g;
}

inline void featurize(MolGraph& g) {
  g.atom_features = Tensor(g.atoms.size(), kAtomFeatureDim);
  for (std::size_t v = 0; v < g.atoms.size(); ++v) {
    const Atom& a = g.atoms[v];
    double* row = g.atom_features.row_ptr(v);
    row[static_cast<int>(a.element)] = 1.0;
    row[10 + std::min(a.degree, kMaxDegree)] = 1.0;
    row[16 + std::min(a.implicit_h, 4)] = 1.0;
    const double q = std::clamp(static_cast<double>(a.formal_charge), -2.0, 2.0);
    row[21] = q / 2.0;
    row[22] = a.aromatic ? 1.0 : 0.0;
  }
  g.bond_features = Tensor(g.bonds.size(), kBondFeatureDim);
  for (std::size_t e = 0; e < g.bonds.size(); ++e) {
    const Bond& b = g.bonds[e];
    double* row = g.bond_features.row_ptr(e);
    row[static_cast<int>(b.order)] = 1.0;
    row[4] = b.in_ring ? 1.0 : 0.0;
  }
}

inline MolGraph mol_from_smiles(std::string_view text) {
  MolGraph g = parse_smiles(text);
  featurize(g);
  return g;
}

// Ring systems plus linkers: iteratively strip degree-1 atoms, keep the rest.
// Implicit hydrogens of non-bracket atoms are recomputed for the pruned graph.
inline MolGraph scaffold_graph(const MolGraph& g) {
  std::vector<char> keep(g.atoms.size(), 1);
  std::vector<int> deg(g.atoms.size(), 0);
  for (std::size_t v = 0; v < g.atoms.size(); ++v) deg[v] = static_cast<int>(g.adjacency[v].size());
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t v = 0; v < g.atoms.size(); ++v) {
      if (keep[v] && deg[v] <= 1) {  // isolated leftovers vanish too
        keep[v] = 0;
        changed = true;
        for (auto [w, e] : g.adjacency[v])
          if (keep[static_cast<std::size_t>(w)]) --deg[static_cast<std::size_t>(w)];
        deg[v] = 0;
      }
    }
  }
  MolGraph s;
  std::vector<int> remap(g.atoms.size(), -1);
  for (std::size_t v = 0; v < g.atoms.size(); ++v) {
    if (!keep[v]) continue;
    remap[v] = static_cast<int>(s.atoms.size());
    Atom a = g.atoms[v];
    a.explicit_h = a.explicit_h && a.formal_charge != 0;  // recompute H unless charge pins it
    s.atoms.push_back(std::move(a));
  }
  for (const Bond& b : g.bonds) {
    if (remap[static_cast<std::size_t>(b.a)] < 0 || remap[static_cast<std::size_t>(b.b)] < 0) continue;
    Bond nb = b;
    nb.a = remap[static_cast<std::size_t>(b.a)];
    nb.b = remap[static_cast<std::size_t>(b.b)];
    s.bonds.push_back(nb);
  }
  if (!s.atoms.empty()) detail::finalize_graph(s, /*recompute_h=*/true);
  return s;
}

namespace detail {

inline std::uint64_t mix_hash(std::uint64_t h, std::uint64_t x) {
  h ^= x + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

// Morgan-style rank refinement over (symbol, aromatic, charge, bond orders).
inline std::vector<int> refined_ranks(const MolGraph& g) {
  const std::size_t n = g.atoms.size();
  std::vector<std::uint64_t> inv(n);
  for (std::size_t v = 0; v < n; ++v) {
    const Atom& a = g.atoms[v];
    std::uint64_t h = fnv1a64(a.symbol);
    h = mix_hash(h, a.aromatic ? 7 : 3);
    h = mix_hash(h, static_cast<std::uint64_t>(a.formal_charge + 8));
    std::vector<int> orders;
    for (auto [w, e] : g.adjacency[v])
      orders.push_back(static_cast<int>(g.bonds[static_cast<std::size_t>(e)].order));
    std::sort(orders.begin(), orders.end());
    for (int o : orders) h = mix_hash(h, static_cast<std::uint64_t>(o + 1));
    inv[v] = h;
  }
  for (std::size_t round = 0; round < n + 2; ++round) {
    std::vector<std::uint64_t> next(n);
    for (std::size_t v = 0; v < n; ++v) {
      std::vector<std::pair<int, std::uint64_t>> nb;
      for (auto [w, e] : g.adjacency[v])
        nb.emplace_back(static_cast<int>(g.bonds[static_cast<std::size_t>(e)].order),
                        inv[static_cast<std::size_t>(w)]);
      std::sort(nb.begin(), nb.end());
      std::uint64_t h = mix_hash(inv[v], 0x51ed);
      for (auto& [o, wh] : nb) {
        h = mix_hash(h, static_cast<std::uint64_t>(o + 1));
        h = mix_hash(h, wh);
      }
      next[v] = h;
    }
    if (next == inv) break;
    inv = std::move(next);
  }
  std::vector<std::uint64_t> sorted(inv);
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<int> rank(n);
  for (std::size_t v = 0; v < n; ++v)
    rank[v] = static_cast<int>(std::lower_bound(sorted.begin(), sorted.end(), inv[v]) - sorted.begin());
  return rank;
}

inline std::string encode_from(const MolGraph& g, const std::vector<int>& rank, std::size_t root) {
  const std::size_t n = g.atoms.size();
  std::vector<int> number(n, -1);
  std::vector<std::size_t> order;
  number[root] = 0;
  order.push_back(root);
  for (std::size_t head = 0; head < order.size(); ++head) {
    const std::size_t u = order[head];
    std::vector<std::pair<std::pair<int, int>, int>> nb;  // ((rank, bond order), atom)
    for (auto [w, e] : g.adjacency[u]) {
      if (number[static_cast<std::size_t>(w)] != -1) continue;
      nb.push_back({{rank[static_cast<std::size_t>(w)],
                     static_cast<int>(g.bonds[static_cast<std::size_t>(e)].order)},
                    w});
    }
    std::sort(nb.begin(), nb.end());
    for (auto& [key, w] : nb) {
      if (number[static_cast<std::size_t>(w)] != -1) continue;
      number[static_cast<std::size_t>(w)] = static_cast<int>(order.size());
      order.push_back(static_cast<std::size_t>(w));
    }
  }
  if (order.size() != n) return {};  // disconnected scaffold: caller encodes per component
  std::string out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t v = order[i];
    const Atom& a = g.atoms[v];
    out += a.symbol;
    if (a.aromatic) out += '\'';
    if (a.formal_charge) out += (a.formal_charge > 0 ? "+" : "") + std::to_string(a.formal_charge);
    std::vector<std::pair<int, int>> edges;
    for (auto [w, e] : g.adjacency[v]) {
      const int wn = number[static_cast<std::size_t>(w)];
      if (wn < static_cast<int>(i))
        edges.emplace_back(wn, static_cast<int>(g.bonds[static_cast<std::size_t>(e)].order));
    }
    std::sort(edges.begin(), edges.end());
    for (auto [wn, o] : edges) out += "(" + std::to_string(wn) + "," + std::to_string(o) + ")";
    out += ';';
  }
  return out;
}

inline std::string canonical_component_key(const MolGraph& g) {
  if (g.atoms.empty()) return {};
  const std::vector<int> rank = refined_ranks(g);
  std::string best;
  for (std::size_t v = 0; v < g.atoms.size(); ++v) {
    std::string enc = encode_from(g, rank, v);
    if (enc.empty()) continue;
    if (best.empty() || enc < best) best = std::move(enc);
  }
  return best;
}

}  // namespace detail

// Canonical text key of the molecule's ring-and-linker skeleton; "" for
// acyclic molecules. Keys are invariant to atom relabeling and to acyclic
// substituents hanging off the scaffold.
inline std::string murcko_scaffold(const MolGraph& g) {
  MolGraph s = scaffold_graph(g);
  if (s.atoms.empty()) return {};
  if (s.count_components() == 1) return detail::canonical_component_key(s);
  // multi-fragment input: canonical key per component, sorted
  std::vector<char> seen(s.atoms.size(), 0);
  std::vector<std::string> keys;
  for (std::size_t start = 0; start < s.atoms.size(); ++start) {
    if (seen[start]) continue;
    std::vector<int> comp;
    std::vector<int> stack{static_cast<int>(start)};
    seen[start] = 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      comp.push_back(u);
      for (auto [w, e] : s.adjacency[static_cast<std::size_t>(u)])
        if (!seen[static_cast<std::size_t>(w)]) {
          seen[static_cast<std::size_t>(w)] = 1;
          stack.push_back(w);
        }
    }
    std::sort(comp.begin(), comp.end());
    MolGraph sub;
    std::vector<int> remap(s.atoms.size(), -1);
    for (int v : comp) {
      remap[static_cast<std::size_t>(v)] = static_cast<int>(sub.atoms.size());
      sub.atoms.push_back(s.atoms[static_cast<std::size_t>(v)]);
    }
    for (const Bond& b : s.bonds) {
      if (remap[static_cast<std::size_t>(b.a)] < 0 || remap[static_cast<std::size_t>(b.b)] < 0) continue;
      Bond nb = b;
      nb.a = remap[static_cast<std::size_t>(b.a)];
      nb.b = remap[static_cast<std::size_t>(b.b)];
      sub.bonds.push_back(nb);
    }
    detail::finalize_graph(sub, false);
    keys.push_back(detail::canonical_component_key(sub));
  }
  std::sort(keys.begin(), keys.end());
  std::string out;
  for (const auto& k : keys) out += k + "|";
  return out;
}

namespace detail {

inline std::string atom_token(const MolGraph& g, std::size_t v) {
  const Atom& a = g.atoms[v];
  double order_sum = 0.0;
  for (auto [w, e] : g.adjacency[v]) order_sum += bond_order_value(g.bonds[static_cast<std::size_t>(e)].order);
  const int organic_h = std::max(0, default_valence(a.symbol) - static_cast<int>(std::floor(order_sum)));
  const bool bare_ok = organic_subset(a.symbol) && a.formal_charge == 0 &&
                       a.implicit_h == organic_h && (!a.aromatic || aromatic_capable(a.symbol));
  std::string sym = a.symbol;
  if (a.aromatic && aromatic_capable(a.symbol))
    for (auto& c : sym) c = static_cast<char>(std::tolower(c));
  if (bare_ok) return sym;
  std::string out = "[" + sym;
  if (a.implicit_h == 1) out += "H";
  else if (a.implicit_h > 1) out += "H" + std::to_string(a.implicit_h);
  if (a.formal_charge == 1) out += "+";
  else if (a.formal_charge == -1) out += "-";
  else if (a.formal_charge > 1) out += "+" + std::to_string(a.formal_charge);
  else if (a.formal_charge < -1) out += "-" + std::to_string(-a.formal_charge);
  return out + "]";
}

inline std::string bond_token(const MolGraph& g, const Bond& b) {
  const bool both_aromatic = g.atoms[static_cast<std::size_t>(b.a)].aromatic &&
                             g.atoms[static_cast<std::size_t>(b.b)].aromatic;
  switch (b.order) {
    case BondOrder::Single: return both_aromatic ? "-" : "";
    case BondOrder::Double: return "=";
    case BondOrder::Triple: return "#";
    case BondOrder::Aromatic: return both_aromatic ? "" : ":";
  }
  return "";
}

}  // namespace detail

// Deterministic (not canonical) SMILES emission; parse(write_smiles(g))
// reproduces elements, aromatic flags, charges, H counts and bonds.
// Multi-fragment graphs are not emittable (the grammar has no '.').
inline std::string write_smiles(const MolGraph& g) {
  if (g.atoms.empty()) return {};
  if (g.count_components() != 1)
    fail(Err::ShapeMismatch, "write_smiles needs a connected graph");
  const std::size_t n = g.atoms.size();
  std::vector<char> visited(n, 0);
  std::vector<char> edge_used(g.bonds.size(), 0);
  // ring-closure digits per atom, discovered on back edges
  std::vector<std::vector<std::pair<int, int>>> closures(n);  // (digit, bond index)
  int next_digit = 1;

  // DFS spanning tree; children in adjacency order for determinism
  struct Frame {
    std::size_t v;
    std::size_t next = 0;
    std::vector<std::pair<int, int>> children;  // (atom, bond)
  };
  std::vector<int> parent_bond(n, -1);
  std::vector<std::vector<std::pair<int, int>>> tree_children(n);
  {
    std::vector<Frame> stack{{0}};
    visited[0] = 1;
    while (!stack.empty()) {
      Frame& f = stack.back();
      const std::size_t v = f.v;
      if (f.next < g.adjacency[v].size()) {
        auto [w, e] = g.adjacency[v][f.next++];
        if (edge_used[static_cast<std::size_t>(e)]) continue;
        edge_used[static_cast<std::size_t>(e)] = 1;
        if (!visited[static_cast<std::size_t>(w)]) {
          visited[static_cast<std::size_t>(w)] = 1;
          parent_bond[static_cast<std::size_t>(w)] = e;
          tree_children[v].emplace_back(w, e);
          stack.push_back({static_cast<std::size_t>(w)});
        } else {
          const int digit = next_digit++;
          closures[v].emplace_back(digit, e);
          closures[static_cast<std::size_t>(w)].emplace_back(digit, e);
        }
      } else {
        stack.pop_back();
      }
    }
  }

  std::vector<char> closure_emitted(g.bonds.size(), 0);
  std::string out;
  auto emit = [&](auto&& self, std::size_t v) -> void {
    out += detail::atom_token(g, v);
    for (auto [digit, e] : closures[v]) {
      if (!closure_emitted[static_cast<std::size_t>(e)]) {
        out += detail::bond_token(g, g.bonds[static_cast<std::size_t>(e)]);
        closure_emitted[static_cast<std::size_t>(e)] = 1;
      }
      if (digit > 99) fail(Err::ShapeMismatch, "too many ring closures");
      if (digit > 9) out += "%" + std::to_string(digit);
      else out += static_cast<char>('0' + digit);
    }
    const auto& kids = tree_children[v];
    for (std::size_t i = 0; i < kids.size(); ++i) {
      auto [w, e] = kids[i];
      const bool last = i + 1 == kids.size();
      if (!last) out += "(";
      out += detail::bond_token(g, g.bonds[static_cast<std::size_t>(e)]);
      self(self, static_cast<std::size_t>(w));
      if (!last) out += ")";
    }
  };
  emit(emit, 0);
  return out;
}

}  // namespace moluq::smiles
