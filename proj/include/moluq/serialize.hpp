#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "moluq/bayes.hpp"
#include "moluq/error.hpp"
#include "moluq/graphconv.hpp"
#include "moluq/params.hpp"
#include "moluq/tensor.hpp"

namespace moluq {

inline constexpr const char* kParamsTag = "moluq-params-v1";
inline constexpr const char* kSvgdTag = "moluq-svgd-v1";
inline constexpr const char* kEmbedTag = "semisup-v1";

namespace detail {

// Hexadecimal float text round-trips every finite double bit-for-bit.
inline std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

inline double parse_hex_double(const std::string& s) {
  const char* p = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(p, &end);
  if (end != p + s.size() || s.empty())
    fail(Err::BadCheckpoint, "bad float literal '" + s + "'");
  return v;
}

inline std::string next_token(std::istream& in, const std::string& what) {
  std::string tok;
  if (!(in >> tok)) fail(Err::BadCheckpoint, "truncated checkpoint, expected " + what);
  return tok;
}

inline std::size_t next_size(std::istream& in, const std::string& what) {
  const std::string tok = next_token(in, what);
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(tok, &used);
    if (used != tok.size()) throw std::invalid_argument("trailing text");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    fail(Err::BadCheckpoint, what + " must be an unsigned integer, got '" + tok + "'");
  }
}

inline void expect_token(std::istream& in, const std::string& want) {
  const std::string got = next_token(in, "'" + want + "'");
  if (got != want) fail(Err::BadCheckpoint, "expected '" + want + "', got '" + got + "'");
}

}  // namespace detail

// Writes every slot in insertion order so a reloaded store flattens to the
// same vector layout. Values are hexfloat; gradients and moments are not
// part of a checkpoint.
inline void write_params(const ParamStore& ps, std::ostream& out) {
  out << kParamsTag << '\n';
  out << "tensors " << ps.slots().size() << '\n';
  for (const ParamStore::Slot& s : ps.slots()) {
    out << "tensor " << s.name << ' ' << s.value.rows << ' ' << s.value.cols << ' '
        << (s.trainable ? 1 : 0) << '\n';
    for (std::size_t i = 0; i < s.value.rows; ++i) {
      const double* row = s.value.row_ptr(i);
      for (std::size_t j = 0; j < s.value.cols; ++j) {
        if (j) out << ' ';
        out << detail::hex_double(row[j]);
      }
      out << '\n';
    }
  }
}

inline ParamStore read_params(std::istream& in) {
  detail::expect_token(in, kParamsTag);
  detail::expect_token(in, "tensors");
  const std::size_t count = detail::next_size(in, "tensor count");
  ParamStore ps;
  for (std::size_t k = 0; k < count; ++k) {
    detail::expect_token(in, "tensor");
    const std::string name = detail::next_token(in, "tensor name");
    const std::size_t rows = detail::next_size(in, "rows");
    const std::size_t cols = detail::next_size(in, "cols");
    const std::size_t trainable = detail::next_size(in, "trainable flag");
    if (trainable > 1) fail(Err::BadCheckpoint, "trainable flag must be 0 or 1");
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < rows * cols; ++i)
      t.data[i] = detail::parse_hex_double(detail::next_token(in, "value of " + name));
    ps.add(name, std::move(t), trainable == 1);
  }
  return ps;
}

// Copies checkpoint values into a live store by name. Shapes and trainable
// flags must agree slot for slot, so a checkpoint can only restore the model
// architecture it came from.
inline void restore_into(ParamStore& dst, const ParamStore& src) {
  if (dst.slots().size() != src.slots().size())
    fail(Err::BadCheckpoint, "checkpoint has " + std::to_string(src.slots().size()) +
                                 " tensors, model has " + std::to_string(dst.slots().size()));
  for (std::size_t i = 0; i < src.slots().size(); ++i) {
    const ParamStore::Slot& s = src.slots()[i];
    ParamStore::Slot& d = dst.slot(static_cast<int>(i));
    if (s.name != d.name || s.trainable != d.trainable || s.value.rows != d.value.rows ||
        s.value.cols != d.value.cols)
      fail(Err::BadCheckpoint, "checkpoint slot '" + s.name + "' does not match model slot '" +
                                   d.name + "'");
    d.value = s.value;
  }
}

inline void save_params(const ParamStore& ps, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(Err::FileNotFound, "cannot write " + path);
  write_params(ps, out);
}

inline ParamStore load_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Err::FileNotFound, "cannot open " + path);
  return read_params(in);
}

// Embedding checkpoints carry the message-passing weights and the corpus
// identifier matrix under a distinct tag so they cannot be confused with a
// trained model.
inline void write_embedding(const ParamStore& ps, std::ostream& out) {
  out << kEmbedTag << '\n';
  write_params(ps, out);
}

inline ParamStore read_embedding(std::istream& in) {
  detail::expect_token(in, kEmbedTag);
  ParamStore ps = read_params(in);
  if (!ps.has("u")) fail(Err::BadCheckpoint, "embedding checkpoint lacks the u matrix");
  return ps;
}

inline void save_embedding(const ParamStore& ps, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(Err::FileNotFound, "cannot write " + path);
  write_embedding(ps, out);
}

inline ParamStore load_embedding(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Err::FileNotFound, "cannot open " + path);
  return read_embedding(in);
}

// A particle ensemble is stored as one full ParamStore per particle. The
// model's live parameters are restored after writing.
inline void write_svgd(const SVGDState& state, Regressor& model, std::ostream& out) {
  if (state.particles.empty()) fail(Err::BadCheckpoint, "no particles to save");
  const std::vector<double> saved = model.store().flatten(true);
  out << kSvgdTag << '\n';
  out << "particles " << state.particles.size() << '\n';
  out << "last_h " << detail::hex_double(state.last_h) << '\n';
  for (std::size_t i = 0; i < state.particles.size(); ++i) {
    model.store().unflatten(state.particles[i], true);
    out << "particle " << i << '\n';
    write_params(model.store(), out);
  }
  model.store().unflatten(saved, true);
}

inline SVGDState read_svgd(Regressor& model, std::istream& in) {
  detail::expect_token(in, kSvgdTag);
  detail::expect_token(in, "particles");
  const std::size_t n = detail::next_size(in, "particle count");
  if (n == 0) fail(Err::BadCheckpoint, "particle count must be positive");
  detail::expect_token(in, "last_h");
  SVGDState state;
  state.last_h = detail::parse_hex_double(detail::next_token(in, "last_h"));
  const std::vector<double> saved = model.store().flatten(true);
  for (std::size_t i = 0; i < n; ++i) {
    detail::expect_token(in, "particle");
    const std::size_t idx = detail::next_size(in, "particle index");
    if (idx != i) fail(Err::BadCheckpoint, "particle blocks out of order");
    ParamStore ps = read_params(in);
    const std::vector<double> flat = ps.flatten(true);
    if (flat.size() != saved.size()) {
      model.store().unflatten(saved, true);
      fail(Err::BadCheckpoint, "particle " + std::to_string(i) + " has " +
                                   std::to_string(flat.size()) + " trainable values, model has " +
                                   std::to_string(saved.size()));
    }
    state.particles.push_back(flat);
  }
  model.store().unflatten(saved, true);
  return state;
}

inline void save_svgd(const SVGDState& state, Regressor& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(Err::FileNotFound, "cannot write " + path);
  write_svgd(state, model, out);
}

inline SVGDState load_svgd(Regressor& model, const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Err::FileNotFound, "cannot open " + path);
  return read_svgd(model, in);
}

}  // namespace moluq
