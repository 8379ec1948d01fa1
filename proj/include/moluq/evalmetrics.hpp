#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "moluq/error.hpp"

namespace moluq {

struct PredictionRecord {
  int id = 0;
  double truth = 0.0;
  double mean = 0.0;
  double epistemic_var = 0.0;
  double aleatoric_var = 0.0;
  double total_var = 0.0;
};

enum class Ranking { Total, Epistemic, Aleatoric };

inline const char* ranking_name(Ranking r) {
  switch (r) {
    case Ranking::Total: return "total";
    case Ranking::Epistemic: return "epistemic";
    default: return "aleatoric";
  }
}

inline double ranking_var(const PredictionRecord& rec, Ranking r) {
  switch (r) {
    case Ranking::Total: return rec.total_var;
    case Ranking::Epistemic: return rec.epistemic_var;
    default: return rec.aleatoric_var;
  }
}

inline double rmse(std::span<const PredictionRecord> records) {
  if (records.empty()) fail(Err::EmptyRecords, "RMSE over empty records");
  double acc = 0.0;
  for (const auto& r : records) {
    const double d = r.truth - r.mean;
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(records.size()));
}

inline double r2(std::span<const PredictionRecord> records) {
  if (records.empty()) fail(Err::EmptyRecords, "R2 over empty records");
  double mean_truth = 0.0;
  for (const auto& r : records) mean_truth += r.truth;
  mean_truth /= static_cast<double>(records.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (const auto& r : records) {
    ss_res += (r.truth - r.mean) * (r.truth - r.mean);
    ss_tot += (r.truth - mean_truth) * (r.truth - mean_truth);
  }
  if (ss_tot == 0.0) fail(Err::DegenerateInput, "R2 undefined when every truth is equal");
  return 1.0 - ss_res / ss_tot;
}

// 1-based ranks with ties sharing the average of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double shared = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

// Rank correlation over average ranks; equals the Pearson correlation of the
// rank vectors. Formed as sum(dx dy) / sqrt(sum(dx^2) sum(dy^2)) so tie-free
// integer-rank cases stay exact.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(Err::LengthMismatch, "rank correlation input lengths differ");
  if (x.size() < 3) fail(Err::LengthMismatch, "rank correlation needs at least 3 points");
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = rx[i] - mx;
    const double dy = ry[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    fail(Err::DegenerateInput, "rank correlation undefined for a constant argument");
  return sxy / std::sqrt(sxx * syy);
}

struct ConfidenceErrorCurve {
  Ranking ranking = Ranking::Total;
  std::vector<double> percentiles;
  std::vector<double> rmse_at;  // parallel to percentiles
};

// Confidence = low variance under the chosen ranking; rmse_at[q] covers the
// ceil(q% * n) most confident records, variance ties broken by id ascending.
// Each subset accumulates in storage order, so the 100% point reproduces
// rmse() bit for bit.
inline ConfidenceErrorCurve confidence_error_curve(std::span<const PredictionRecord> records,
                                                   std::span<const double> percentiles,
                                                   Ranking ranking) {
  if (records.empty()) fail(Err::EmptyRecords, "confidence curve over empty records");
  for (std::size_t i = 0; i < percentiles.size(); ++i) {
    if (!(percentiles[i] > 0.0) || percentiles[i] > 100.0)
      fail(Err::BadConfig, "percentiles must lie in (0, 100]");
    if (i > 0 && percentiles[i] <= percentiles[i - 1])
      fail(Err::BadConfig, "percentiles must ascend");
  }
  const std::size_t n = records.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double va = ranking_var(records[a], ranking);
    const double vb = ranking_var(records[b], ranking);
    if (va != vb) return va < vb;
    return records[a].id < records[b].id;
  });

  ConfidenceErrorCurve curve;
  curve.ranking = ranking;
  curve.percentiles.assign(percentiles.begin(), percentiles.end());
  std::vector<std::size_t> chosen;
  for (const double q : percentiles) {
    std::size_t k = static_cast<std::size_t>(
        std::ceil(q * static_cast<double>(n) / 100.0));
    k = std::max<std::size_t>(1, std::min(n, k));
    chosen.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(chosen.begin(), chosen.end());
    double acc = 0.0;
    for (const std::size_t i : chosen) {
      const double d = records[i].truth - records[i].mean;
      acc += d * d;
    }
    curve.rmse_at.push_back(std::sqrt(acc / static_cast<double>(k)));
  }
  return curve;
}

inline std::vector<double> default_percentiles() {
  return {10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0};
}

inline double median(std::vector<double> v) {
  if (v.empty()) fail(Err::EmptyRecords, "median of nothing");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  if (v.size() % 2 == 1) return v[mid];
  const double hi = v[mid];
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

}  // namespace moluq
