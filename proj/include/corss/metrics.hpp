#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "corss/types.hpp"

namespace corss {

struct SpikeTrain {
  int source_id = 0;
  std::vector<std::int64_t> spike_samples;  // strictly increasing
  double sample_rate = 1.0;

  std::size_t size() const { return spike_samples.size(); }
};

/// Agreement between two event trains: mr = 2 n_common / (n_a + n_b).
struct MatchResult {
  std::int64_t n_common = 0;
  std::int64_t n_a = 0;
  std::int64_t n_b = 0;
  double mr = 1.0;
};

struct LatencyReport {
  std::int64_t block_size = 0;
  double mean_s = 0.0;
  double std_s = 0.0;
  double max_s = 0.0;
  double realtime_ratio = 0.0;  // mean processing time / block duration
};

/// Size of a maximum one-to-one matching between two sorted index lists
/// where matched events differ by at most `tolerance` samples.
///
/// Two-pointer sweep: the earliest unmatched event is either paired with the
/// earliest unmatched event of the other train or cannot be paired at all.
inline std::int64_t count_common(std::span<const std::int64_t> a, std::span<const std::int64_t> b,
                                 double tolerance) {
  std::size_t i = 0, j = 0;
  std::int64_t common = 0;
  while (i < a.size() && j < b.size()) {
    const auto diff = static_cast<double>(a[i] - b[j]);
    if (std::abs(diff) <= tolerance) {
      ++common;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return common;
}

inline MatchResult match_events(std::span<const std::int64_t> a, std::span<const std::int64_t> b,
                                double tolerance_samples) {
  MatchResult r;
  r.n_a = static_cast<std::int64_t>(a.size());
  r.n_b = static_cast<std::int64_t>(b.size());
  if (r.n_a + r.n_b == 0) return r;  // vacuous agreement
  r.n_common = count_common(a, b, tolerance_samples);
  r.mr = 2.0 * static_cast<double>(r.n_common) / static_cast<double>(r.n_a + r.n_b);
  return r;
}

inline MatchResult matching_rate(const SpikeTrain& a, const SpikeTrain& b, double tolerance_ms) {
  if (a.sample_rate != b.sample_rate) {
    throw Error(ErrorCode::invalid_argument, "spike trains have different sample rates");
  }
  if (!(tolerance_ms >= 0.0)) {
    throw Error(ErrorCode::invalid_argument, "tolerance must be non-negative");
  }
  return match_events(a.spike_samples, b.spike_samples, tolerance_ms * a.sample_rate / 1000.0);
}

/// Percent RMSE after scaling both series by 1/max(ref).
inline double rmse_percent(std::span<const double> est, std::span<const double> ref) {
  if (est.size() != ref.size() || ref.empty()) {
    throw Error(ErrorCode::shape_error, "rmse needs equal non-empty lengths, got " +
                                            std::to_string(est.size()) + " and " +
                                            std::to_string(ref.size()));
  }
  const double peak = *std::max_element(ref.begin(), ref.end());
  if (!(peak > 0.0)) {
    throw Error(ErrorCode::undefined_normalization, "reference envelope has no positive peak");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = (ref[i] - est[i]) / peak;
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(ref.size())) * 100.0;
}

inline double pearson_corr(std::span<const double> est, std::span<const double> ref) {
  if (est.size() != ref.size() || ref.size() < 2) {
    throw Error(ErrorCode::shape_error, "correlation needs equal lengths >= 2");
  }
  const auto n = static_cast<double>(ref.size());
  const double me = std::accumulate(est.begin(), est.end(), 0.0) / n;
  const double mr = std::accumulate(ref.begin(), ref.end(), 0.0) / n;
  double see = 0.0, srr = 0.0, ser = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double de = est[i] - me, dr = ref[i] - mr;
    see += de * de;
    srr += dr * dr;
    ser += de * dr;
  }
  if (!(see > 0.0) || !(srr > 0.0)) {
    throw Error(ErrorCode::undefined_correlation, "correlation of a constant series");
  }
  return std::clamp(ser / std::sqrt(see * srr), -1.0, 1.0);
}

/// Normalized Amari performance index of G = W M A; 0 iff G is a scaled
/// permutation, 1 for a matrix with all magnitudes equal.
inline double amari_index(const Eigen::Ref<const Matrix>& g) {
  if (g.rows() != g.cols() || g.rows() == 0) {
    throw Error(ErrorCode::shape_error, "Amari index needs a square matrix");
  }
  const Eigen::Index n = g.rows();
  const Matrix a = g.cwiseAbs();
  if ((a.rowwise().maxCoeff().array() <= 0.0).any() ||
      (a.colwise().maxCoeff().array() <= 0.0).any()) {
    throw Error(ErrorCode::degenerate_matrix, "zero row or column");
  }
  if (n == 1) return 0.0;
  double rows = 0.0, cols = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) rows += a.row(i).sum() / a.row(i).maxCoeff() - 1.0;
  for (Eigen::Index j = 0; j < n; ++j) cols += a.col(j).sum() / a.col(j).maxCoeff() - 1.0;
  const double denom = static_cast<double>(n) * static_cast<double>(n - 1);
  return 0.5 * (rows / denom + cols / denom);
}

inline LatencyReport latency_stats(std::span<const double> timings_s, std::int64_t block_size,
                                   double sample_rate) {
  if (timings_s.empty()) throw Error(ErrorCode::empty_input, "no block timings");
  if (block_size < 1 || !(sample_rate > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "block size and sample rate must be positive");
  }
  LatencyReport r;
  r.block_size = block_size;
  const auto n = static_cast<double>(timings_s.size());
  r.mean_s = std::accumulate(timings_s.begin(), timings_s.end(), 0.0) / n;
  r.max_s = *std::max_element(timings_s.begin(), timings_s.end());
  if (timings_s.size() > 1) {
    double ss = 0.0;
    for (double t : timings_s) ss += (t - r.mean_s) * (t - r.mean_s);
    r.std_s = std::sqrt(ss / (n - 1.0));
  }
  r.realtime_ratio = r.mean_s / (static_cast<double>(block_size) / sample_rate);
  return r;
}

/// One-to-one pairing of estimated trains with reference trains, taken
/// greedily in order of decreasing matching rate.
struct TrainPair {
  std::size_t reference = 0;
  std::size_t estimate = 0;
  MatchResult match;
};

inline std::vector<TrainPair> best_assignment(const std::vector<SpikeTrain>& estimates,
                                              const std::vector<SpikeTrain>& references,
                                              double tolerance_ms) {
  std::vector<TrainPair> all;
  for (std::size_t r = 0; r < references.size(); ++r) {
    for (std::size_t e = 0; e < estimates.size(); ++e) {
      all.push_back({r, e, matching_rate(estimates[e], references[r], tolerance_ms)});
    }
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const TrainPair& x, const TrainPair& y) { return x.match.mr > y.match.mr; });
  std::vector<bool> ref_used(references.size()), est_used(estimates.size());
  std::vector<TrainPair> out;
  for (const auto& p : all) {
    if (ref_used[p.reference] || est_used[p.estimate]) continue;
    ref_used[p.reference] = est_used[p.estimate] = true;
    out.push_back(p);
  }
  std::sort(out.begin(), out.end(),
            [](const TrainPair& x, const TrainPair& y) { return x.reference < y.reference; });
  return out;
}

}  // namespace corss
