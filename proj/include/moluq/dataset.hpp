#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "moluq/error.hpp"
#include "moluq/graphconv.hpp"
#include "moluq/rng.hpp"
#include "moluq/smiles.hpp"

namespace moluq {

struct DataRecord {
  std::string smiles;
  double target = 0.0;
};

struct RejectedRow {
  std::size_t line = 0;  // 1-based line number in the source file
  std::string content;
  std::string reason;
};

// Labeled molecule table. Every stored record has a parseable SMILES and a
// finite target; rejected rows are kept for reporting. Row order is file order.
struct Dataset {
  std::string name;
  std::string units;
  std::vector<DataRecord> records;
  std::vector<RejectedRow> rejected;

  std::size_t size() const { return records.size(); }
};

namespace detail {

// Splits one CSV line; double quotes group fields, "" inside quotes escapes.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace detail

// Reads a header-first CSV into a Dataset. Rows with an unparseable SMILES,
// a non-finite or unparseable target, or too few fields are rejected with a
// recorded reason instead of aborting the load.
inline Dataset load_csv(const std::string& path, const std::string& smiles_column = "smiles",
                        const std::string& target_column = "target") {
  std::ifstream in(path);
  if (!in) fail(Err::FileNotFound, "cannot open " + path);
  Dataset ds;
  ds.name = path;
  std::string line;
  if (!std::getline(in, line)) fail(Err::MissingColumn, path + " has no header row");
  const std::vector<std::string> header = detail::split_csv_line(line);
  std::size_t smiles_idx = header.size(), target_idx = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string h = detail::trim(header[i]);
    if (h == smiles_column) smiles_idx = i;
    if (h == target_column) target_idx = i;
  }
  if (smiles_idx == header.size())
    fail(Err::MissingColumn, path + " lacks column '" + smiles_column + "'");
  if (target_idx == header.size())
    fail(Err::MissingColumn, path + " lacks column '" + target_column + "'");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const std::vector<std::string> fields = detail::split_csv_line(line);
    if (fields.size() <= std::max(smiles_idx, target_idx)) {
      ds.rejected.push_back({line_no, line, "too few fields"});
      continue;
    }
    const std::string smi = detail::trim(fields[smiles_idx]);
    const std::string tgt = detail::trim(fields[target_idx]);
    double y = 0.0;
    try {
      std::size_t used = 0;
      y = std::stod(tgt, &used);
      if (used != tgt.size()) throw std::invalid_argument("trailing text");
    } catch (const std::exception&) {
      ds.rejected.push_back({line_no, line, "unparseable target '" + tgt + "'"});
      continue;
    }
    if (!std::isfinite(y)) {
      ds.rejected.push_back({line_no, line, "non-finite target"});
      continue;
    }
    try {
      smiles::mol_from_smiles(smi);
    } catch (const MoluqError& e) {
      ds.rejected.push_back({line_no, line, e.what()});
      continue;
    }
    ds.records.push_back({smi, y});
  }
  if (ds.records.empty()) fail(Err::NoValidRows, path + " yielded no valid rows");
  return ds;
}

inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(Err::FileNotFound, "cannot write " + path);
  out << "smiles,target\n";
  out.precision(17);
  for (const DataRecord& r : ds.records) out << r.smiles << ',' << r.target << '\n';
}

// Compiles every record; mol ids are the dataset row indices, which the
// state cache and acquisition tie-breaks rely on.
inline std::vector<CompiledMol> compile_dataset(const Dataset& ds) {
  std::vector<CompiledMol> mols;
  mols.reserve(ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    mols.push_back(
        compile_mol(smiles::mol_from_smiles(ds.records[i].smiles), static_cast<int>(i)));
  return mols;
}

inline std::vector<double> target_vector(const Dataset& ds) {
  std::vector<double> y;
  y.reserve(ds.records.size());
  for (const DataRecord& r : ds.records) y.push_back(r.target);
  return y;
}

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
  std::string warning;  // non-empty when a fallback path was taken
};

namespace detail {

inline void check_fractions(double train_frac, double val_frac) {
  if (!(train_frac > 0.0) || train_frac > 1.0 || val_frac < 0.0 || val_frac > 1.0 ||
      train_frac + val_frac > 1.0)
    fail(Err::FractionInvalid, "train_frac " + std::to_string(train_frac) + " + val_frac " +
                                   std::to_string(val_frac) + " must lie in (0,1] with sum <= 1");
}

}  // namespace detail

// Disjoint exhaustive partition: train and val take rounded shares of a
// seeded shuffle, test absorbs the remainder.
inline SplitIndices random_split(std::size_t n, double train_frac, double val_frac,
                                 std::uint64_t seed) {
  detail::check_fractions(train_frac, val_frac);
  if (n == 0) fail(Err::EmptyRecords, "cannot split an empty dataset");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  RngStream rng = substream(seed, "split");
  rng.shuffle(order);
  const auto nd = static_cast<double>(n);
  std::size_t n_train = static_cast<std::size_t>(std::llround(train_frac * nd));
  std::size_t n_val = static_cast<std::size_t>(std::llround(val_frac * nd));
  n_train = std::min(n_train, n);
  n_val = std::min(n_val, n - n_train);
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                 order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return out;
}

inline std::vector<std::string> scaffold_keys(const Dataset& ds) {
  std::vector<std::string> keys;
  keys.reserve(ds.records.size());
  for (const DataRecord& r : ds.records)
    keys.push_back(smiles::murcko_scaffold(smiles::mol_from_smiles(r.smiles)));
  return keys;
}

// Groups rows by scaffold key, shuffles the groups, then fills train and val
// with whole groups; the rest is test. Each group lands on exactly one side.
// A single-scaffold dataset cannot be group-split and falls back to a random
// split, reported through the warning field.
inline SplitIndices scaffold_split(const std::vector<std::string>& keys, double train_frac,
                                   double val_frac, std::uint64_t seed) {
  detail::check_fractions(train_frac, val_frac);
  const std::size_t n = keys.size();
  if (n == 0) fail(Err::EmptyRecords, "cannot split an empty dataset");
  std::map<std::string, std::vector<std::size_t>> by_key;
  for (std::size_t i = 0; i < n; ++i) by_key[keys[i]].push_back(i);
  if (by_key.size() < 2) {
    SplitIndices out = random_split(n, train_frac, val_frac, seed);
    out.warning = "single scaffold group; fell back to a random split";
    return out;
  }
  std::vector<std::vector<std::size_t>> groups;
  groups.reserve(by_key.size());
  for (auto& [key, members] : by_key) groups.push_back(std::move(members));
  RngStream rng = substream(seed, "scaffold-split");
  rng.shuffle(groups);
  const auto nd = static_cast<double>(n);
  const std::size_t want_train = static_cast<std::size_t>(std::llround(train_frac * nd));
  const std::size_t want_val = static_cast<std::size_t>(std::llround(val_frac * nd));
  SplitIndices out;
  for (const std::vector<std::size_t>& g : groups) {
    if (out.train.size() < want_train)
      out.train.insert(out.train.end(), g.begin(), g.end());
    else if (out.val.size() < want_val)
      out.val.insert(out.val.end(), g.begin(), g.end());
    else
      out.test.insert(out.test.end(), g.begin(), g.end());
  }
  return out;
}

inline SplitIndices scaffold_split(const Dataset& ds, double train_frac, double val_frac,
                                   std::uint64_t seed) {
  return scaffold_split(scaffold_keys(ds), train_frac, val_frac, seed);
}

}  // namespace moluq
