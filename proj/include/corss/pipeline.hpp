#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "corss/identify.hpp"
#include "corss/metrics.hpp"
#include "corss/nonlinearity.hpp"
#include "corss/schedule.hpp"
#include "corss/separate.hpp"
#include "corss/synth.hpp"
#include "corss/types.hpp"
#include "corss/whiten.hpp"

namespace corss {

enum class Algorithm { orica, corss };

inline std::string to_string(Algorithm a) { return a == Algorithm::orica ? "orica" : "corss"; }

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "orica") return Algorithm::orica;
  if (s == "corss") return Algorithm::corss;
  throw Error(ErrorCode::invalid_argument, "unknown algorithm '" + s + "'");
}

struct PipelineConfig {
  std::int64_t block_size = 200;
  Algorithm algorithm = Algorithm::corss;
  ForgettingSchedule whiten_schedule;
  ForgettingSchedule separate_schedule;
  NonlinearityConfig nonlinearity;
  Normalization normalization = Normalization::orthonormal;
  BlockRule block_rule = BlockRule::recursive;
  bool remove_mean = true;
  Task task = Task::semg_decomposition;
  std::int64_t checkpoint_every_blocks = 0;  // 0: every 5 s of signal
  std::int64_t burn_in_samples = -1;         // -1: 25 * n_ch^2
  PulseSelectConfig pulses;
  EnvelopeConfig envelope;

  /// Tuned defaults per task. Both algorithms share the schedules so that a
  /// comparison isolates the update rule and the nonlinearity.
  static PipelineConfig preset(Task task, Algorithm algorithm) {
    PipelineConfig c;
    c.task = task;
    c.algorithm = algorithm;
    const auto sched = task == Task::semg_decomposition
                           ? ForgettingSchedule::power_decay(0.1, 0.4, 1e-3)
                           : ForgettingSchedule::power_decay(0.1, 0.6, 1e-4);
    c.whiten_schedule = sched;
    c.separate_schedule = sched;
    c.nonlinearity = algorithm == Algorithm::corss ? NonlinearityConfig::constrained(1.0, 4.0)
                                                   : NonlinearityConfig::baseline();
    return c;
  }

  void validate() const {
    if (block_size < 1) throw Error(ErrorCode::invalid_argument, "block size must be >= 1");
    whiten_schedule.validate();
    separate_schedule.validate();
    nonlinearity.validate();
  }

  std::int64_t burn_in(Eigen::Index n_ch) const {
    return burn_in_samples >= 0 ? burn_in_samples : 25 * n_ch * n_ch;
  }

  std::int64_t checkpoint_blocks(double sample_rate) const {
    if (checkpoint_every_blocks > 0) return checkpoint_every_blocks;
    return std::max<std::int64_t>(1, std::llround(5.0 * sample_rate / static_cast<double>(block_size)));
  }
};

struct BlockOutput {
  std::int64_t block_index = 0;
  MultichannelBlock sources;
  double elapsed_s = 0.0;      // whitening + separation only
  std::int64_t skipped = 0;    // samples skipped in this block
  Vector row_norms;            // of W after the block
  Matrix global;               // W * M after the block
};

/// Task-level outputs computed over the accumulated sources.
struct Identification {
  Task task = Task::semg_decomposition;
  std::int64_t samples_seen = 0;
  std::int64_t from_sample = 0;  // burn-in excluded before this index
  // semg
  std::vector<int> selected;
  std::vector<SpikeTrain> spike_trains;
  // emgdi
  int respiratory_source = -1;
  Envelope envelope;
  TriggerTrain triggers;
};

inline Identification identify_sources(const PipelineConfig& cfg,
                                       const Eigen::Ref<const Matrix>& sources,
                                       double sample_rate, std::int64_t from_sample) {
  Identification id;
  id.task = cfg.task;
  id.samples_seen = sources.cols();
  if (sources.cols() == 0) return id;
  if (from_sample >= sources.cols()) from_sample = 0;
  id.from_sample = from_sample;
  const auto tail = sources.rightCols(sources.cols() - from_sample);

  if (cfg.task == Task::semg_decomposition) {
    id.selected = select_pulse_sources(tail, sample_rate, cfg.pulses);
    std::vector<double> row(static_cast<std::size_t>(tail.cols()));
    for (int i : id.selected) {
      for (Eigen::Index t = 0; t < tail.cols(); ++t) row[static_cast<std::size_t>(t)] = tail(i, t);
      auto train = detect_spikes(row, cfg.pulses.detect.k_sigma, cfg.pulses.detect.refractory_ms,
                                 sample_rate, from_sample);
      train.source_id = i;
      id.spike_trains.push_back(std::move(train));
    }
    return id;
  }

  id.respiratory_source = select_respiratory_source(tail, sample_rate, cfg.envelope);
  std::vector<double> row(static_cast<std::size_t>(sources.cols()));
  for (Eigen::Index t = 0; t < sources.cols(); ++t)
    row[static_cast<std::size_t>(t)] = sources(id.respiratory_source, t);
  id.envelope = compute_envelope(row, cfg.envelope.window_ms, cfg.envelope.hop_ms, sample_rate);

  // triggers only from frames that start after the burn-in
  const auto hop = id.envelope.hop_samples();
  const auto first = static_cast<std::size_t>((from_sample + hop - 1) / hop);
  if (first < id.envelope.values.size()) {
    Envelope sub = id.envelope;
    sub.values.assign(id.envelope.values.begin() + static_cast<std::ptrdiff_t>(first),
                      id.envelope.values.end());
    id.triggers = detect_triggers(sub, cfg.envelope.onset_fraction, cfg.envelope.min_interval_ms);
    for (auto& s : id.triggers.onset_samples) s += static_cast<std::int64_t>(first) * hop;
  }
  id.triggers.sample_rate = sample_rate;
  return id;
}

/// One streaming run. Blocks must arrive in order with consistent channel
/// count and sample rate; only the last block may be shorter than block_size.
class Pipeline {
 public:
  Pipeline(PipelineConfig config, Eigen::Index n_ch, double sample_rate)
      : cfg_(std::move(config)), sample_rate_(sample_rate) {
    cfg_.validate();
    if (!(sample_rate > 0.0)) throw Error(ErrorCode::invalid_argument, "sample rate must be positive");
    whitener_ = whitener_init(n_ch, cfg_.whiten_schedule, cfg_.remove_mean);
    separator_ = separator_init(n_ch, cfg_.separate_schedule, cfg_.nonlinearity,
                                cfg_.normalization, cfg_.block_rule);
  }

  const PipelineConfig& config() const { return cfg_; }
  const WhitenerState& whitener() const { return whitener_; }
  const SeparatorState& separator() const { return separator_; }
  Eigen::Map<const Matrix> sources() const {
    const Eigen::Index n = whitener_.channels();
    return {store_.data(), n, static_cast<Eigen::Index>(store_.size()) / n};
  }
  double sample_rate() const { return sample_rate_; }
  std::int64_t samples_seen() const {
    return static_cast<std::int64_t>(store_.size()) / whitener_.channels();
  }
  std::int64_t blocks_seen() const { return blocks_; }
  std::int64_t burn_in() const { return cfg_.burn_in(whitener_.channels()); }
  const std::vector<Identification>& checkpoints() const { return checkpoints_; }

  BlockOutput process(const MultichannelBlock& block) {
    const Eigen::Index n = whitener_.channels();
    if (block.channels() != n) {
      throw Error(ErrorCode::stream_corrupt, "block " + std::to_string(blocks_) + " has " +
                                                 std::to_string(block.channels()) +
                                                 " channels, stream has " + std::to_string(n));
    }
    if (block.sample_rate != sample_rate_) {
      throw Error(ErrorCode::stream_corrupt, "block " + std::to_string(blocks_) + " changes the sample rate");
    }
    if (ended_) {
      throw Error(ErrorCode::stream_corrupt,
                  "block " + std::to_string(blocks_) + " follows a short final block");
    }
    if (block.length() < 1 || block.length() > cfg_.block_size) {
      throw Error(ErrorCode::stream_corrupt, "block " + std::to_string(blocks_) + " has length " +
                                                 std::to_string(block.length()));
    }
    if (block.length() < cfg_.block_size) ended_ = true;

    BlockOutput out;
    out.block_index = blocks_;
    const std::int64_t skipped_before = separator_.skipped_samples;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const MultichannelBlock white = whiten_block(whitener_, block);
      if (cfg_.algorithm == Algorithm::corss) {
        out.sources = corss_block_update(separator_, white);
      } else {
        out.sources = MultichannelBlock{Matrix(n, block.length()), block.start_index, block.sample_rate};
        for (Eigen::Index j = 0; j < white.length(); ++j)
          out.sources.samples.col(j) = orica_update(separator_, white.samples.col(j));
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::divergence) throw;
      throw Error(ErrorCode::divergence, "block " + std::to_string(blocks_) + ": " + e.what());
    }
    const auto t1 = std::chrono::steady_clock::now();
    out.elapsed_s = std::max(std::chrono::duration<double>(t1 - t0).count(), 1e-9);
    out.skipped = separator_.skipped_samples - skipped_before;
    out.row_norms = separator_.unmixing.rowwise().norm();
    out.global = separator_.unmixing * whitener_.whitening;

    const auto* first = out.sources.samples.data();
    store_.insert(store_.end(), first, first + out.sources.samples.size());
    ++blocks_;
    if (blocks_ % cfg_.checkpoint_blocks(sample_rate_) == 0) checkpoints_.push_back(identify());
    return out;
  }

  /// Identification over everything seen so far, excluding the burn-in.
  Identification identify() const {
    return identify_sources(cfg_, sources(), sample_rate_, burn_in());
  }

 private:
  PipelineConfig cfg_;
  double sample_rate_;
  WhitenerState whitener_;
  SeparatorState separator_;
  std::vector<double> store_;  // column-major n_ch x samples
  std::int64_t blocks_ = 0;
  bool ended_ = false;
  std::vector<Identification> checkpoints_;
};

inline std::vector<MultichannelBlock> split_blocks(const MultichannelBlock& rec, std::int64_t block_size) {
  if (block_size < 1) throw Error(ErrorCode::invalid_argument, "block size must be >= 1");
  std::vector<MultichannelBlock> out;
  for (Eigen::Index s = 0; s < rec.length(); s += block_size) {
    const Eigen::Index len = std::min<Eigen::Index>(block_size, rec.length() - s);
    out.push_back({rec.samples.middleCols(s, len), rec.start_index + s, rec.sample_rate});
  }
  return out;
}

struct RunResult {
  std::vector<BlockOutput> outputs;
  WhitenerState whitener;
  SeparatorState separator;
  Matrix sources;
  Identification identification;
  std::vector<Identification> checkpoints;
  std::int64_t burn_in = 0;
};

using BlockSink = std::function<void(const BlockOutput&)>;

/// Runs the whole stream. With a sink, outputs are handed over as produced
/// and not retained in the result.
inline RunResult run_stream(const PipelineConfig& config, const std::vector<MultichannelBlock>& input,
                            Eigen::Index n_ch, double sample_rate, const BlockSink& sink = {}) {
  Pipeline p(config, n_ch, sample_rate);
  RunResult r;
  for (const auto& block : input) {
    auto out = p.process(block);
    if (sink) {
      sink(out);
    } else {
      r.outputs.push_back(std::move(out));
    }
  }
  r.whitener = p.whitener();
  r.separator = p.separator();
  r.sources = p.sources();
  r.identification = p.identify();
  r.checkpoints = p.checkpoints();
  r.burn_in = p.burn_in();
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation against synthetic ground truth

inline SpikeTrain trim_before(const SpikeTrain& t, std::int64_t from) {
  SpikeTrain out{t.source_id, {}, t.sample_rate};
  for (auto s : t.spike_samples)
    if (s >= from) out.spike_samples.push_back(s);
  return out;
}

inline SpikeTrain as_spike_train(const TriggerTrain& t) { return {0, t.onset_samples, t.sample_rate}; }

struct DecompositionScore {
  std::vector<double> per_source_mr;  // indexed by true source, 0 when unassigned
  std::vector<int> assigned_output;   // output row per true source, -1 when unassigned
  int recovered = 0;                  // true sources with mr >= threshold
  double mean_mr = 0.0;
};

inline DecompositionScore score_decomposition(const std::vector<SpikeTrain>& estimated,
                                              const GroundTruth& truth, std::int64_t from_sample,
                                              double tolerance_ms = 0.5, double threshold = 0.9) {
  if (truth.spike_trains.empty()) {
    throw Error(ErrorCode::unavailable_metric, "ground truth has no spike trains");
  }
  std::vector<SpikeTrain> refs, ests;
  for (const auto& t : truth.spike_trains) refs.push_back(trim_before(t, from_sample));
  for (const auto& t : estimated) ests.push_back(trim_before(t, from_sample));
  DecompositionScore s;
  s.per_source_mr.assign(refs.size(), 0.0);
  s.assigned_output.assign(refs.size(), -1);
  for (const auto& p : best_assignment(ests, refs, tolerance_ms)) {
    s.per_source_mr[p.reference] = p.match.mr;
    s.assigned_output[p.reference] = ests[p.estimate].source_id;
  }
  for (double m : s.per_source_mr) {
    s.mean_mr += m;
    if (m >= threshold) ++s.recovered;
  }
  s.mean_mr /= static_cast<double>(refs.size());
  return s;
}

struct EnvelopeScore {
  double corr = 0.0;
  double rmse_percent = 0.0;
  double gain = 1.0;       // least-squares amplitude fit of estimate onto reference
  MatchResult triggers;    // against true breath onsets
};

/// Least-squares g minimizing |g*est - ref|.
inline double fit_gain(std::span<const double> est, std::span<const double> ref) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    num += est[i] * ref[i];
    den += est[i] * est[i];
  }
  return den > 0.0 ? num / den : 0.0;
}

inline EnvelopeScore score_envelope(const Envelope& est, const Envelope& ref,
                                    std::size_t from_frame) {
  if (est.values.size() != ref.values.size()) {
    throw Error(ErrorCode::shape_error, "envelope lengths differ");
  }
  if (from_frame + 2 > ref.values.size()) from_frame = 0;
  const std::span<const double> e(est.values.data() + from_frame, est.values.size() - from_frame);
  const std::span<const double> r(ref.values.data() + from_frame, ref.values.size() - from_frame);
  EnvelopeScore s;
  s.corr = pearson_corr(e, r);
  s.gain = fit_gain(e, r);
  std::vector<double> scaled(e.begin(), e.end());
  for (auto& v : scaled) v *= s.gain;
  s.rmse_percent = rmse_percent(scaled, r);
  return s;
}

inline EnvelopeScore score_monitoring(const Identification& id, const GroundTruth& truth,
                                      const EnvelopeConfig& cfg, double trigger_tolerance_ms = 300.0) {
  const Envelope ref = reference_envelope(truth, cfg.window_ms, cfg.hop_ms);
  const auto hop = ref.hop_samples();
  auto s = score_envelope(id.envelope, ref, static_cast<std::size_t>((id.from_sample + hop - 1) / hop));
  TriggerTrain true_onsets = truth.breath_onsets;
  SpikeTrain onsets = trim_before(as_spike_train(true_onsets), id.from_sample);
  s.triggers = matching_rate(as_spike_train(id.triggers), onsets, trigger_tolerance_ms);
  return s;
}

// ---------------------------------------------------------------------------
// Convergence traces

struct TracePoint {
  std::int64_t block_index = 0;
  std::int64_t sample_end = 0;   // samples processed at this checkpoint
  double time_s = 0.0;
  double amari = std::nan("");
  double corr = std::nan("");
  double rmse_percent = std::nan("");
  double mean_mr = std::nan("");
};

struct TraceOptions {
  std::int64_t every_blocks = 1;
  double window_s = 10.0;      // trailing window for envelope and spike metrics
  EnvelopeConfig envelope;
  SpikeDetectConfig detect;
  double tolerance_ms = 0.5;
};

/// Metric time series over checkpoints. Amari index is reported when the
/// mixing matrix is square; envelope CORR and RMSE for monitoring truth; mean
/// best-match MR per true source for decomposition truth.
inline std::vector<TracePoint> convergence_trace(const std::vector<BlockOutput>& outputs,
                                                 const std::optional<GroundTruth>& truth,
                                                 const TraceOptions& opt = {}) {
  if (!truth) throw Error(ErrorCode::unavailable_metric, "convergence trace needs ground truth");
  if (opt.every_blocks < 1) throw Error(ErrorCode::invalid_argument, "every_blocks must be >= 1");
  std::vector<TracePoint> trace;
  if (outputs.empty()) return trace;
  const double fs = outputs.front().sources.sample_rate;
  const Eigen::Index n = outputs.front().sources.channels();
  const bool square = truth->mixing.rows() == truth->mixing.cols();

  // concatenated sources; block outputs are contiguous
  std::int64_t total = 0;
  for (const auto& o : outputs) total += o.sources.length();
  Matrix all(n, total);
  std::vector<std::int64_t> ends;
  {
    std::int64_t at = 0;
    for (const auto& o : outputs) {
      all.middleCols(at, o.sources.length()) = o.sources.samples;
      at += o.sources.length();
      ends.push_back(at);
    }
  }
  const auto window = std::max<std::int64_t>(1, std::llround(opt.window_s * fs));

  for (std::size_t b = 0; b < outputs.size(); ++b) {
    if ((static_cast<std::int64_t>(b) + 1) % opt.every_blocks != 0 && b + 1 != outputs.size()) continue;
    TracePoint p;
    p.block_index = outputs[b].block_index;
    p.sample_end = ends[b];
    p.time_s = static_cast<double>(p.sample_end) / fs;
    if (square) p.amari = amari_index(outputs[b].global * truth->mixing);

    const std::int64_t lo = std::max<std::int64_t>(0, p.sample_end - window);
    const auto seg = all.middleCols(lo, p.sample_end - lo);
    if (!truth->gating_curve.empty()) {
      const int row = select_respiratory_source(seg, fs, opt.envelope);
      std::vector<double> est(static_cast<std::size_t>(seg.cols()));
      for (Eigen::Index t = 0; t < seg.cols(); ++t) est[static_cast<std::size_t>(t)] = seg(row, t);
      const std::span<const double> g(truth->gating_curve.data() + lo, static_cast<std::size_t>(seg.cols()));
      const auto e = compute_envelope(est, opt.envelope.window_ms, opt.envelope.hop_ms, fs);
      const auto r = compute_envelope(g, opt.envelope.window_ms, opt.envelope.hop_ms, fs);
      try {
        const auto s = score_envelope(e, r, 0);
        p.corr = s.corr;
        p.rmse_percent = s.rmse_percent;
      } catch (const Error& err) {
        if (err.code() != ErrorCode::undefined_correlation &&
            err.code() != ErrorCode::undefined_normalization && err.code() != ErrorCode::shape_error)
          throw;
      }
    } else if (!truth->spike_trains.empty()) {
      std::vector<SpikeTrain> ests;
      std::vector<double> row(static_cast<std::size_t>(seg.cols()));
      for (Eigen::Index i = 0; i < seg.rows(); ++i) {
        for (Eigen::Index t = 0; t < seg.cols(); ++t) row[static_cast<std::size_t>(t)] = seg(i, t);
        ests.push_back(detect_spikes(row, opt.detect.k_sigma, opt.detect.refractory_ms, fs, lo));
      }
      double sum = 0.0;
      for (const auto& ref : truth->spike_trains) {
        SpikeTrain r = trim_before(ref, lo);
        std::erase_if(r.spike_samples, [&](std::int64_t s) { return s >= p.sample_end; });
        double best = 0.0;
        for (const auto& e : ests) best = std::max(best, matching_rate(e, r, opt.tolerance_ms).mr);
        sum += best;
      }
      p.mean_mr = sum / static_cast<double>(truth->spike_trains.size());
    }
    trace.push_back(p);
  }
  return trace;
}

}  // namespace corss
