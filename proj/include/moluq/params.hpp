#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "moluq/error.hpp"
#include "moluq/rng.hpp"
#include "moluq/tensor.hpp"

namespace moluq {

// Named parameter slots with parallel gradient and Adam-moment storage.
// Slot order is insertion order; flatten/unflatten walk slots in that order,
// row-major within each slot. SVGD particles rely on this being stable.
class ParamStore {
 public:
  struct Slot {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m;  // Adam first moment
    Tensor v;  // Adam second moment
    bool trainable = true;
  };

  int add(const std::string& name, Tensor init, bool trainable = true) {
    if (by_name_.count(name)) fail(Err::BadConfig, "duplicate param slot " + name);
    Slot s;
    s.name = name;
    s.grad = Tensor(init.rows, init.cols);
    s.m = Tensor(init.rows, init.cols);
    s.v = Tensor(init.rows, init.cols);
    s.value = std::move(init);
    s.trainable = trainable;
    slots_.push_back(std::move(s));
    const int id = static_cast<int>(slots_.size()) - 1;
    by_name_.emplace(name, id);
    return id;
  }

  bool has(const std::string& name) const { return by_name_.count(name) != 0; }

  int index_of(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) fail(Err::BadConfig, "unknown param slot " + name);
    return it->second;
  }

  Slot& slot(int i) { return slots_[static_cast<std::size_t>(i)]; }
  const Slot& slot(int i) const { return slots_[static_cast<std::size_t>(i)]; }
  Slot& slot(const std::string& name) { return slots_[static_cast<std::size_t>(index_of(name))]; }
  const Slot& slot(const std::string& name) const {
    return slots_[static_cast<std::size_t>(index_of(name))];
  }

  Tensor& value(const std::string& name) { return slot(name).value; }
  const Tensor& value(const std::string& name) const { return slot(name).value; }

  std::size_t size() const { return slots_.size(); }

  void zero_grad() {
    for (auto& s : slots_) std::fill(s.grad.data.begin(), s.grad.data.end(), 0.0);
  }

  std::size_t flat_size(bool trainable_only = false) const {
    std::size_t n = 0;
    for (const auto& s : slots_)
      if (!trainable_only || s.trainable) n += s.value.size();
    return n;
  }

  std::vector<double> flatten(bool trainable_only = false) const {
    std::vector<double> out;
    out.reserve(flat_size(trainable_only));
    for (const auto& s : slots_) {
      if (trainable_only && !s.trainable) continue;
      out.insert(out.end(), s.value.data.begin(), s.value.data.end());
    }
    return out;
  }

  void unflatten(std::span<const double> flat, bool trainable_only = false) {
    if (flat.size() != flat_size(trainable_only))
      fail(Err::LengthMismatch, "unflatten got " + std::to_string(flat.size()) + " values, store holds " +
                                    std::to_string(flat_size(trainable_only)));
    std::size_t off = 0;
    for (auto& s : slots_) {
      if (trainable_only && !s.trainable) continue;
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                flat.begin() + static_cast<std::ptrdiff_t>(off + s.value.size()),
                s.value.data.begin());
      off += s.value.size();
    }
  }

  std::vector<double> flatten_grad(bool trainable_only = false) const {
    std::vector<double> out;
    out.reserve(flat_size(trainable_only));
    for (const auto& s : slots_) {
      if (trainable_only && !s.trainable) continue;
      out.insert(out.end(), s.grad.data.begin(), s.grad.data.end());
    }
    return out;
  }

  void check_grads_finite() const {
    for (const auto& s : slots_)
      if (!s.grad.all_finite()) fail(Err::NonFiniteGradient, "gradient of " + s.name);
  }

  // FNV over the raw value bytes; used by freezing contracts.
  std::uint64_t value_hash(const std::string& prefix = "") const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& s : slots_) {
      if (!prefix.empty() && s.name.compare(0, prefix.size(), prefix) != 0) continue;
      for (double d : s.value.data) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(d));
        std::memcpy(&bits, &d, sizeof(bits));
        for (int b = 0; b < 8; ++b) {
          h ^= (bits >> (8 * b)) & 0xffu;
          h *= 1099511628211ULL;
        }
      }
    }
    return h;
  }

  std::uint64_t adam_t = 0;

  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    ++adam_t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t));
    for (auto& s : slots_) {
      if (!s.trainable) continue;
      for (std::size_t i = 0; i < s.value.size(); ++i) {
        const double g = s.grad.data[i];
        s.m.data[i] = beta1 * s.m.data[i] + (1.0 - beta1) * g;
        s.v.data[i] = beta2 * s.v.data[i] + (1.0 - beta2) * g * g;
        const double mh = s.m.data[i] / bc1;
        const double vh = s.v.data[i] / bc2;
        // grouped exactly as the flat-vector optimizer applies it, so the two
        // code paths produce bitwise identical trajectories
        const double step = mh / (std::sqrt(vh) + eps);
        s.value.data[i] -= lr * step;
      }
    }
  }

  const std::vector<Slot>& slots() const { return slots_; }

 private:
  std::vector<Slot> slots_;
  std::unordered_map<std::string, int> by_name_;
};

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); fan_in = rows for x*W layouts
inline Tensor uniform_init(std::size_t rows, std::size_t cols, RngStream& rng) {
  Tensor t(rows, cols);
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

// Adam moments over a flat parameter vector. direction() returns the
// preconditioned step; the caller picks the sign (ascent or descent).
// Elementwise, so it matches ParamStore::adam_step trajectories bitwise when
// fed the same gradient sequence.
struct FlatAdam {
  std::vector<double> m, v;
  std::uint64_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit FlatAdam(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}

  std::vector<double> direction(const std::vector<double>& g) {
    if (m.size() != g.size()) fail(Err::LengthMismatch, "FlatAdam dimension");
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    std::vector<double> d(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      d[i] = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
    return d;
  }
};

}  // namespace moluq
