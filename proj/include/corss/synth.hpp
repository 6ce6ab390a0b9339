#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "corss/identify.hpp"
#include "corss/metrics.hpp"
#include "corss/types.hpp"

namespace corss {

enum class Task { semg_decomposition, emgdi_monitoring };

inline std::string to_string(Task t) {
  return t == Task::semg_decomposition ? "semg" : "emgdi";
}

inline Task parse_task(const std::string& s) {
  if (s == "semg" || s == "semg-decomposition") return Task::semg_decomposition;
  if (s == "emgdi" || s == "emgdi-monitoring") return Task::emgdi_monitoring;
  throw Error(ErrorCode::invalid_spec, "unknown task '" + s + "'");
}

struct SynthSpec {
  Task task = Task::semg_decomposition;
  int n_ch = 16;
  int n_sources = 6;
  double duration_s = 30.0;
  double sample_rate = 2000.0;
  std::uint64_t seed = 0;
  double firing_rate_lo_hz = 8.0;
  double firing_rate_hi_hz = 20.0;
  bool force_ramp = true;          // 2 s ramp + 3 s hold cycles of firing rate
  double breath_rate_bpm = 15.0;
  double ecg_rate_bpm = 72.0;
  double ecg_gain = 10.0;          // QRS peak relative to EMGdi RMS
  double snr_db = 20.0;            // +inf disables sensor noise
  double max_condition = 20.0;
  std::optional<Matrix> mixing;    // overrides the random mixing matrix

  static SynthSpec mu_default(std::uint64_t seed = 0) {
    SynthSpec s;
    s.seed = seed;
    return s;
  }

  static SynthSpec emgdi_default(std::uint64_t seed = 0) {
    SynthSpec s;
    s.task = Task::emgdi_monitoring;
    s.n_ch = 8;
    s.n_sources = 2;
    s.duration_s = 120.0;
    s.sample_rate = 1000.0;
    s.seed = seed;
    return s;
  }

  std::int64_t samples() const { return std::llround(duration_s * sample_rate); }

  void validate() const {
    auto bad = [](const std::string& m) { throw Error(ErrorCode::invalid_spec, m); };
    if (n_ch < 1 || n_sources < 1) bad("channel and source counts must be positive");
    if (task == Task::emgdi_monitoring && n_sources != 2) bad("emgdi recordings have exactly 2 sources");
    if (n_sources > n_ch) {
      bad(std::to_string(n_sources) + " sources exceed " + std::to_string(n_ch) + " channels");
    }
    if (!(duration_s > 0.0) || !(sample_rate > 0.0) || samples() < 1) bad("duration and rate must be positive");
    if (!(firing_rate_lo_hz > 0.0) || !(firing_rate_hi_hz >= firing_rate_lo_hz)) bad("bad firing rate range");
    if (!(breath_rate_bpm > 0.0) || !(ecg_rate_bpm > 0.0)) bad("rates must be positive");
    if (!(ecg_gain >= 0.0) || std::isnan(snr_db) || snr_db == -std::numeric_limits<double>::infinity()) {
      bad("bad ecg gain or snr");
    }
    if (!(max_condition >= 1.0)) bad("max_condition must be >= 1");
    if (mixing && (mixing->rows() != n_ch || mixing->cols() != n_sources || !mixing->allFinite())) {
      bad("mixing override must be a finite n_ch x n_sources matrix");
    }
  }
};

struct GroundTruth {
  Task task = Task::semg_decomposition;
  double sample_rate = 1.0;
  Matrix mixing;
  std::vector<SpikeTrain> spike_trains;   // semg task
  std::vector<double> gating_curve;       // emgdi task, one value per sample
  TriggerTrain breath_onsets;             // emgdi task
  TriggerTrain ecg_onsets;                // emgdi task
  Matrix sources;                         // latent s, n_sources x T (not serialized)
};

struct Recording {
  MultichannelBlock data;
  GroundTruth truth;
};

inline double condition_number(const Matrix& a) {
  Eigen::JacobiSVD<Matrix> svd(a);
  const auto& s = svd.singularValues();
  const double lo = s[s.size() - 1];
  return lo > 0.0 ? s[0] / lo : std::numeric_limits<double>::infinity();
}

namespace detail {

inline Matrix random_mixing(const SynthSpec& spec, std::mt19937_64& rng) {
  if (spec.mixing) return *spec.mixing;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Matrix a(spec.n_ch, spec.n_sources);
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = gauss(rng);
    if (condition_number(a) <= spec.max_condition) return a;
  }
  throw Error(ErrorCode::invalid_spec, "no mixing matrix within the condition bound");
}

template <class Row>
void normalize_unit_std(Row&& row) {
  const double mean = row.mean();
  const double sd = std::sqrt((row.array() - mean).square().mean());
  if (sd > 0.0) row /= sd;
}

inline void mix_and_add_noise(Recording& rec, const SynthSpec& spec, std::mt19937_64& rng) {
  rec.data.samples = rec.truth.mixing * rec.truth.sources;
  if (std::isinf(spec.snr_db)) return;
  const double power = rec.data.samples.squaredNorm() / static_cast<double>(rec.data.samples.size());
  const double sigma = std::sqrt(power / std::pow(10.0, spec.snr_db / 10.0));
  std::normal_distribution<double> gauss(0.0, sigma);
  for (Eigen::Index t = 0; t < rec.data.samples.cols(); ++t)
    for (Eigen::Index i = 0; i < rec.data.samples.rows(); ++i) rec.data.samples(i, t) += gauss(rng);
}

// Cascaded second-order sections, direct form II transposed.
struct Biquad {
  double b0, b1, b2, a1, a2;
  double z1 = 0.0, z2 = 0.0;

  double step(double x) {
    const double y = b0 * x + z1;
    z1 = b1 * x - a1 * y + z2;
    z2 = b2 * x - a2 * y;
    return y;
  }
};

inline Biquad rbj_section(bool highpass, double f0, double q, double fs) {
  const double w = 2.0 * std::numbers::pi * f0 / fs;
  const double alpha = std::sin(w) / (2.0 * q);
  const double c = std::cos(w);
  const double a0 = 1.0 + alpha;
  const double g = highpass ? (1.0 + c) / 2.0 : (1.0 - c) / 2.0;
  const double b1 = highpass ? -(1.0 + c) : (1.0 - c);
  return {g / a0, b1 / a0, g / a0, -2.0 * c / a0, (1.0 - alpha) / a0};
}

/// 4th-order Butterworth high-pass at lo followed by 4th-order low-pass at hi.
inline std::vector<double> butter_bandpass(const std::vector<double>& x, double lo, double hi,
                                           double fs) {
  constexpr double q1 = 0.54119610014619701, q2 = 1.3065629648763764;
  std::vector<Biquad> chain{rbj_section(true, lo, q1, fs), rbj_section(true, lo, q2, fs),
                            rbj_section(false, hi, q1, fs), rbj_section(false, hi, q2, fs)};
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = x[i];
    for (auto& s : chain) v = s.step(v);
    y[i] = v;
  }
  return y;
}

}  // namespace detail

/// Biphasic difference-of-Gaussians action potential shape. The main lobe sits
/// at `offset` samples, i.e. at the spike time once convolved.
struct MuapKernel {
  std::vector<double> taps;
  std::int64_t offset = 0;
};

inline MuapKernel make_muap_kernel(double support_ms, double width_ms, double fs) {
  auto len = static_cast<std::int64_t>(support_ms * fs / 1000.0) | 1;
  MuapKernel k;
  k.offset = len / 4;
  const double s1 = width_ms * fs / 1000.0, s2 = 1.5 * s1, d = 2.5 * s1;
  for (std::int64_t i = 0; i < len; ++i) {
    const double t = static_cast<double>(i - k.offset);
    k.taps.push_back(std::exp(-0.5 * (t / s1) * (t / s1)) -
                     0.45 * std::exp(-0.5 * ((t - d) / s2) * ((t - d) / s2)));
  }
  return k;
}

/// Places `kernel` at every spike (main lobe on the spike sample).
inline Eigen::RowVectorXd render_train(const std::vector<std::int64_t>& spikes,
                                       const MuapKernel& kernel, std::int64_t n) {
  Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(n);
  for (auto sp : spikes) {
    for (std::size_t j = 0; j < kernel.taps.size(); ++j) {
      const std::int64_t t = sp - kernel.offset + static_cast<std::int64_t>(j);
      if (t >= 0 && t < n) s[t] += kernel.taps[j];
    }
  }
  return s;
}

/// Firing-rate multiplier: repeating 2 s linear ramp from 0.6 to 1, then 3 s hold.
inline double force_profile(double t) {
  const double phase = std::fmod(t, 5.0);
  return phase < 2.0 ? 0.6 + 0.4 * phase / 2.0 : 1.0;
}

inline Recording gen_mu_recording(const SynthSpec& spec) {
  spec.validate();
  if (spec.task != Task::semg_decomposition) {
    throw Error(ErrorCode::invalid_spec, "gen_mu_recording needs the semg task");
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double fs = spec.sample_rate;
  const std::int64_t n = spec.samples();
  const auto min_isi = static_cast<std::int64_t>(std::ceil(0.020 * fs));

  Recording rec;
  rec.truth.task = spec.task;
  rec.truth.sample_rate = fs;
  rec.truth.sources = Matrix::Zero(spec.n_sources, n);
  for (int i = 0; i < spec.n_sources; ++i) {
    const double rate = spec.firing_rate_lo_hz + (spec.firing_rate_hi_hz - spec.firing_rate_lo_hz) * unit(rng);
    SpikeTrain train{i, {}, fs};
    double t = unit(rng) / rate;
    std::int64_t last = -min_isi;
    while (true) {
      auto at = std::max(static_cast<std::int64_t>(t * fs), last + min_isi);
      if (at >= n) break;
      train.spike_samples.push_back(at);
      last = at;
      const double r = spec.force_ramp ? rate * force_profile(t) : rate;
      t = static_cast<double>(at) / fs + (1.0 + 0.1 * gauss(rng)) / r;
    }
    const double support = 5.0 + 10.0 * unit(rng);
    const double width = 0.6 + 0.6 * unit(rng);
    rec.truth.sources.row(i) = render_train(train.spike_samples, make_muap_kernel(support, width, fs), n);
    detail::normalize_unit_std(rec.truth.sources.row(i));
    rec.truth.spike_trains.push_back(std::move(train));
  }
  rec.truth.mixing = detail::random_mixing(spec, rng);
  rec.data.sample_rate = fs;
  rec.data.start_index = 0;
  detail::mix_and_add_noise(rec, spec, rng);
  return rec;
}

/// Raised-cosine bursts of 0.4 breath periods, first onset at period/8.
inline std::vector<double> gating_curve(double breath_rate_bpm, std::int64_t n, double fs,
                                        std::vector<std::int64_t>* onsets = nullptr) {
  const double period = 60.0 / breath_rate_bpm;
  const double burst = 0.4 * period;
  const double duration = static_cast<double>(n) / fs;
  std::vector<double> g(static_cast<std::size_t>(n), 0.0);
  for (int k = 0;; ++k) {
    const double start = k * period + period / 8.0;
    if (start + burst > duration) break;
    const auto first = static_cast<std::int64_t>(std::ceil(start * fs));
    if (onsets) onsets->push_back(first);
    for (std::int64_t i = first; i < n; ++i) {
      const double u = (static_cast<double>(i) / fs - start) / burst;
      if (u >= 1.0) break;
      g[static_cast<std::size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * u));
    }
  }
  return g;
}

inline Recording gen_emgdi_recording(const SynthSpec& spec) {
  spec.validate();
  if (spec.task != Task::emgdi_monitoring) {
    throw Error(ErrorCode::invalid_spec, "gen_emgdi_recording needs the emgdi task");
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double fs = spec.sample_rate;
  const std::int64_t n = spec.samples();

  Recording rec;
  rec.truth.task = spec.task;
  rec.truth.sample_rate = fs;
  rec.truth.breath_onsets.sample_rate = fs;
  rec.truth.ecg_onsets.sample_rate = fs;
  rec.truth.gating_curve = gating_curve(spec.breath_rate_bpm, n, fs, &rec.truth.breath_onsets.onset_samples);

  std::vector<double> noise(static_cast<std::size_t>(n));
  for (auto& v : noise) v = gauss(rng);
  const double hi = std::min(150.0, 0.45 * fs);
  auto emg = detail::butter_bandpass(noise, 20.0, hi, fs);
  Eigen::Map<Eigen::RowVectorXd> emg_row(emg.data(), n);
  detail::normalize_unit_std(emg_row);
  for (std::int64_t i = 0; i < n; ++i) emg[static_cast<std::size_t>(i)] *= rec.truth.gating_curve[static_cast<std::size_t>(i)];
  const double emg_rms = std::sqrt(emg_row.squaredNorm() / static_cast<double>(n));

  // QRS-like template: R wave flanked by Q and S dips, +/-50 ms support
  const auto half = static_cast<std::int64_t>(std::llround(0.05 * fs));
  std::vector<double> qrs;
  double qrs_peak = 0.0;
  for (std::int64_t j = -half; j <= half; ++j) {
    const double t = static_cast<double>(j) / fs;
    const double v = std::exp(-0.5 * std::pow(t / 0.008, 2)) -
                     0.25 * std::exp(-0.5 * std::pow((t + 0.02) / 0.006, 2)) -
                     0.3 * std::exp(-0.5 * std::pow((t - 0.02) / 0.006, 2));
    qrs.push_back(v);
    qrs_peak = std::max(qrs_peak, std::abs(v));
  }
  const double ecg_scale = spec.ecg_gain * emg_rms / qrs_peak;
  Eigen::RowVectorXd ecg = Eigen::RowVectorXd::Zero(n);
  const double rr = 60.0 / spec.ecg_rate_bpm;
  for (double t = 0.3; t < spec.duration_s; t += rr * (1.0 + 0.03 * gauss(rng))) {
    const auto c = static_cast<std::int64_t>(t * fs);
    if (c >= n) break;
    rec.truth.ecg_onsets.onset_samples.push_back(c);
    for (std::int64_t j = -half; j <= half; ++j) {
      if (c + j >= 0 && c + j < n) ecg[c + j] += ecg_scale * qrs[static_cast<std::size_t>(j + half)];
    }
  }

  rec.truth.sources.resize(2, n);
  rec.truth.sources.row(0) = emg_row;
  rec.truth.sources.row(1) = ecg;
  rec.truth.mixing = detail::random_mixing(spec, rng);
  rec.data.sample_rate = fs;
  rec.data.start_index = 0;
  detail::mix_and_add_noise(rec, spec, rng);
  return rec;
}

inline Recording generate(const SynthSpec& spec) {
  return spec.task == Task::semg_decomposition ? gen_mu_recording(spec) : gen_emgdi_recording(spec);
}

/// RMS envelope of the true gating curve, framed like compute_envelope.
inline Envelope reference_envelope(const GroundTruth& truth, double window_ms, double hop_ms) {
  if (truth.gating_curve.empty()) {
    throw Error(ErrorCode::unavailable_metric, "ground truth has no gating curve");
  }
  return compute_envelope(truth.gating_curve, window_ms, hop_ms, truth.sample_rate);
}

}  // namespace corss
