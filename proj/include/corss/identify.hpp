#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <vector>

#include "corss/metrics.hpp"
#include "corss/types.hpp"

namespace corss {

/// Sliding-window RMS magnitude. Frame i covers samples
/// [i*hop, i*hop + window) clipped to the signal.
struct Envelope {
  std::vector<double> values;
  double window_ms = 250.0;
  double hop_ms = 50.0;
  double sample_rate = 1.0;

  std::int64_t hop_samples() const;
  std::int64_t window_samples() const;
  /// Sample index at the center of frame i.
  std::int64_t frame_center(std::size_t i) const {
    return static_cast<std::int64_t>(i) * hop_samples() + window_samples() / 2;
  }
};

struct TriggerTrain {
  std::vector<std::int64_t> onset_samples;
  double sample_rate = 1.0;
};

inline std::int64_t ms_to_samples(double ms, double sample_rate) {
  return std::max<std::int64_t>(1, std::llround(ms * sample_rate / 1000.0));
}

inline std::int64_t Envelope::hop_samples() const { return ms_to_samples(hop_ms, sample_rate); }
inline std::int64_t Envelope::window_samples() const {
  return ms_to_samples(window_ms, sample_rate);
}

struct SpikeDetectConfig {
  double k_sigma = 8.0;
  double refractory_ms = 20.0;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double m = *mid;
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
  return m;
}

/// Linear-interpolated percentile, p in [0, 100].
inline double percentile(std::vector<double> v, double p) {
  if (v.empty()) throw Error(ErrorCode::empty_input, "percentile of empty series");
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Peaks of the squared, median/MAD-normalized source with |z| > k_sigma,
/// thinned so that no two spikes are closer than the refractory period (the
/// larger peak wins). Indices are offset by `start_index`.
inline SpikeTrain detect_spikes(std::span<const double> source, double k_sigma,
                                double refractory_ms, double sample_rate,
                                std::int64_t start_index = 0) {
  if (!(k_sigma > 0.0) || !(refractory_ms > 0.0) || !(sample_rate > 0.0)) {
    throw Error(ErrorCode::invalid_argument,
                "k_sigma, refractory_ms and sample_rate must be positive");
  }
  SpikeTrain out;
  out.sample_rate = sample_rate;
  const std::size_t n = source.size();
  if (n == 0) return out;

  std::vector<double> buf(source.begin(), source.end());
  const double med = median_of(buf);
  for (auto& x : buf) x = std::abs(x - med);
  double scale = 1.4826 * median_of(buf);
  double thr = k_sigma * k_sigma;
  if (!(scale > 0.0)) {
    // more than half the samples sit exactly at the median: the floor is flat,
    // so any excursion from it is a candidate
    scale = 1.0;
    thr = 0.0;
  }

  std::vector<double> q(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = (source[i] - med) / scale;
    q[i] = z * z;
  }
  std::vector<std::size_t> cand;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(q[i] > thr)) continue;
    if (i > 0 && q[i] < q[i - 1]) continue;
    if (i + 1 < n && q[i] <= q[i + 1]) continue;
    cand.push_back(i);
  }
  std::stable_sort(cand.begin(), cand.end(),
                   [&](std::size_t a, std::size_t b) { return q[a] > q[b]; });

  const double refractory = refractory_ms * sample_rate / 1000.0;
  std::set<std::size_t> kept;
  for (std::size_t i : cand) {
    auto it = kept.lower_bound(i);
    if (it != kept.end() && static_cast<double>(*it - i) < refractory) continue;
    if (it != kept.begin() && static_cast<double>(i - *std::prev(it)) < refractory) continue;
    kept.insert(i);
  }
  out.spike_samples.reserve(kept.size());
  for (std::size_t i : kept) out.spike_samples.push_back(static_cast<std::int64_t>(i) + start_index);
  return out;
}

inline double excess_kurtosis(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const auto n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d2 = (v - mean) * (v - mean);
    m2 += d2;
    m4 += d2 * d2;
  }
  m2 /= n;
  m4 /= n;
  if (!(m2 > 0.0)) return 0.0;
  return m4 / (m2 * m2) - 3.0;
}

struct PulseSelectConfig {
  double min_kurtosis = 5.0;
  std::int64_t min_spikes = 10;
  SpikeDetectConfig detect;
  double duplicate_mr = 0.9;
  double duplicate_tolerance_ms = 0.5;
};

/// Rows of `sources` (n_sources x T) that look like pulse trains. Returns
/// ascending row indices.
inline std::vector<int> select_pulse_sources(const Eigen::Ref<const Matrix>& sources,
                                             double sample_rate,
                                             const PulseSelectConfig& cfg = {}) {
  struct Candidate {
    int index;
    double kurtosis;
    SpikeTrain train;
  };
  std::vector<Candidate> cands;
  std::vector<double> row(static_cast<std::size_t>(sources.cols()));
  for (Eigen::Index i = 0; i < sources.rows(); ++i) {
    for (Eigen::Index t = 0; t < sources.cols(); ++t) row[static_cast<std::size_t>(t)] = sources(i, t);
    const double k = excess_kurtosis(row);
    if (!(k >= cfg.min_kurtosis)) continue;
    SpikeTrain train = detect_spikes(row, cfg.detect.k_sigma, cfg.detect.refractory_ms, sample_rate);
    if (static_cast<std::int64_t>(train.size()) < cfg.min_spikes) continue;
    cands.push_back({static_cast<int>(i), k, std::move(train)});
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Candidate& a, const Candidate& b) { return a.kurtosis > b.kurtosis; });
  std::vector<const Candidate*> kept;
  for (const auto& c : cands) {
    const bool dup = std::any_of(kept.begin(), kept.end(), [&](const Candidate* k) {
      return matching_rate(c.train, k->train, cfg.duplicate_tolerance_ms).mr >= cfg.duplicate_mr;
    });
    if (!dup) kept.push_back(&c);
  }
  std::vector<int> out;
  for (const auto* c : kept) out.push_back(c->index);
  std::sort(out.begin(), out.end());
  return out;
}

inline Envelope compute_envelope(std::span<const double> source, double window_ms, double hop_ms,
                                 double sample_rate) {
  if (!(hop_ms > 0.0) || !(window_ms >= hop_ms) || !(sample_rate > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "envelope needs window_ms >= hop_ms > 0");
  }
  Envelope env{{}, window_ms, hop_ms, sample_rate};
  const auto n = static_cast<std::int64_t>(source.size());
  if (n == 0) return env;
  const std::int64_t win = env.window_samples();
  const std::int64_t hop = env.hop_samples();

  // prefix sums of squares keep each frame O(1)
  std::vector<double> cum(static_cast<std::size_t>(n) + 1, 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = source[static_cast<std::size_t>(i)];
    cum[static_cast<std::size_t>(i) + 1] = cum[static_cast<std::size_t>(i)] + x * x;
  }
  auto rms = [&](std::int64_t lo, std::int64_t hi) {
    const double s = cum[static_cast<std::size_t>(hi)] - cum[static_cast<std::size_t>(lo)];
    return std::sqrt(std::max(s, 0.0) / static_cast<double>(hi - lo));
  };
  if (win > n) {
    env.values.push_back(rms(0, n));
    return env;
  }
  const std::int64_t frames = (n + hop - 1) / hop;
  env.values.reserve(static_cast<std::size_t>(frames));
  for (std::int64_t f = 0; f < frames; ++f) {
    const std::int64_t lo = f * hop;
    env.values.push_back(rms(lo, std::min(lo + win, n)));
  }
  return env;
}

/// Upward crossings of onset_fraction * P95(env). Onsets are reported at the
/// sample index of the crossing frame's center.
inline TriggerTrain detect_triggers(const Envelope& env, double onset_fraction,
                                    double min_interval_ms) {
  if (!(onset_fraction > 0.0 && onset_fraction < 1.0) || !(min_interval_ms >= 0.0)) {
    throw Error(ErrorCode::invalid_argument, "onset_fraction must lie in (0, 1)");
  }
  TriggerTrain out;
  out.sample_rate = env.sample_rate;
  if (env.values.size() < 2) return out;
  const auto [lo, hi] = std::minmax_element(env.values.begin(), env.values.end());
  if (!(*hi > *lo)) return out;

  const double thr = onset_fraction * percentile(env.values, 95.0);
  const double min_gap = min_interval_ms * env.sample_rate / 1000.0;
  for (std::size_t i = 1; i < env.values.size(); ++i) {
    if (!(env.values[i - 1] < thr && env.values[i] >= thr)) continue;
    const std::int64_t at = env.frame_center(i);
    if (!out.onset_samples.empty() &&
        static_cast<double>(at - out.onset_samples.back()) < min_gap) {
      continue;
    }
    out.onset_samples.push_back(at);
  }
  return out;
}

/// Score of a candidate respiratory source: variance of the slowly smoothed,
/// mean-normalized envelope. Gated bursts score high; stationary noise and
/// short periodic transients (ECG) average out.
inline double respiratory_score(const Envelope& env, double smoothing_s = 1.0) {
  const auto n = env.values.size();
  if (n < 2) return 0.0;
  const double mean = std::accumulate(env.values.begin(), env.values.end(), 0.0) /
                      static_cast<double>(n);
  if (!(mean > 0.0)) return 0.0;
  const auto frames_per_s = 1000.0 / env.hop_ms;
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(smoothing_s * frames_per_s)));
  std::vector<double> cum(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) cum[i + 1] = cum[i] + env.values[i] / mean;
  std::vector<double> sm(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= k / 2 ? i - k / 2 : 0;
    const std::size_t hi = std::min(n, lo + k);
    sm[i] = (cum[hi] - cum[lo]) / static_cast<double>(hi - lo);
  }
  const double m = std::accumulate(sm.begin(), sm.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double v : sm) var += (v - m) * (v - m);
  return var / static_cast<double>(n);
}

struct EnvelopeConfig {
  double window_ms = 250.0;
  double hop_ms = 50.0;
  double onset_fraction = 0.2;
  double min_interval_ms = 1500.0;
  double smoothing_s = 1.0;
};

/// Row of `sources` most likely to carry the respiratory EMG.
inline int select_respiratory_source(const Eigen::Ref<const Matrix>& sources, double sample_rate,
                                     const EnvelopeConfig& cfg = {}) {
  if (sources.rows() == 0 || sources.cols() == 0) {
    throw Error(ErrorCode::empty_input, "no sources to select from");
  }
  int best = 0;
  double best_score = -1.0;
  std::vector<double> row(static_cast<std::size_t>(sources.cols()));
  for (Eigen::Index i = 0; i < sources.rows(); ++i) {
    for (Eigen::Index t = 0; t < sources.cols(); ++t) row[static_cast<std::size_t>(t)] = sources(i, t);
    const double s =
        respiratory_score(compute_envelope(row, cfg.window_ms, cfg.hop_ms, sample_rate), cfg.smoothing_s);
    if (s > best_score) {
      best_score = s;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace corss
