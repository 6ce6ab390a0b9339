#pragma once

#include <cmath>
#include <cstdint>

#include "corss/schedule.hpp"
#include "corss/types.hpp"

namespace corss {

/// Entries of M or W above this magnitude are reported as divergence.
inline constexpr double kDivergenceLimit = 1e6;

/// Online recursive pre-whitening. `whitening` tracks C^{-1/2} of the
/// (optionally mean-removed) input through the rank-one recursion
///
///   M <- M + l/(1-l) [I - v v^T / (1 + l (v^T v - 1))] M,   v = M x
///
/// applied once per sample with l = schedule.value(n).
struct WhitenerState {
  Matrix whitening;
  Vector running_mean;
  std::int64_t sample_count = 0;
  ForgettingSchedule schedule;
  bool remove_mean = true;

  Eigen::Index channels() const { return whitening.rows(); }

  /// Pure application of the current transform; does not advance the state.
  Vector apply(const Eigen::Ref<const Vector>& x) const {
    return remove_mean ? Vector(whitening * (x - running_mean)) : Vector(whitening * x);
  }
};

inline WhitenerState whitener_init(Eigen::Index n_ch, const ForgettingSchedule& schedule,
                                   bool remove_mean = true) {
  if (n_ch < 2) {
    throw Error(ErrorCode::invalid_channel_count,
                "whitening needs at least 2 channels, got " + std::to_string(n_ch));
  }
  schedule.validate();
  WhitenerState state;
  state.whitening = Matrix::Identity(n_ch, n_ch);
  state.running_mean = Vector::Zero(n_ch);
  state.schedule = schedule;
  state.remove_mean = remove_mean;
  return state;
}

/// Returns v computed with the pre-update M (and pre-update mean), then
/// advances M and the running mean by one sample.
inline Vector whiten_sample(WhitenerState& state, const Eigen::Ref<const Vector>& x) {
  if (x.size() != state.channels()) {
    throw Error(ErrorCode::shape_error, "sample has " + std::to_string(x.size()) +
                                            " channels, whitener expects " +
                                            std::to_string(state.channels()));
  }
  if (!x.allFinite()) {
    throw Error(ErrorCode::non_finite_sample,
                "non-finite input at sample " + std::to_string(state.sample_count));
  }
  const double lambda = state.schedule.value(state.sample_count + 1);
  if (!(lambda >= 0.0 && lambda < 1.0)) {
    throw Error(ErrorCode::schedule_out_of_range,
                "lambda = " + std::to_string(lambda) + " outside [0, 1)");
  }

  Vector v = state.apply(x);
  if (lambda > 0.0) {
    const double q = 1.0 + lambda * (v.squaredNorm() - 1.0);
    const double step = lambda / (1.0 - lambda);
    // (I - v v^T / q) M == M - v (v^T M) / q
    const Eigen::RowVectorXd vt_m = v.transpose() * state.whitening;
    state.whitening += step * (state.whitening - (v / q) * vt_m);
    if (state.remove_mean) state.running_mean += lambda * (x - state.running_mean);
  }
  ++state.sample_count;

  if (!state.whitening.allFinite() ||
      state.whitening.cwiseAbs().maxCoeff() > kDivergenceLimit) {
    throw Error(ErrorCode::divergence,
                "whitening matrix diverged at sample " + std::to_string(state.sample_count));
  }
  return v;
}

inline MultichannelBlock whiten_block(WhitenerState& state, const MultichannelBlock& block) {
  if (block.channels() != state.channels()) {
    throw Error(ErrorCode::shape_error, "block has " + std::to_string(block.channels()) +
                                            " channels, whitener expects " +
                                            std::to_string(state.channels()));
  }
  MultichannelBlock out{Matrix(block.channels(), block.length()), block.start_index,
                        block.sample_rate};
  for (Eigen::Index j = 0; j < block.length(); ++j) {
    out.samples.col(j) = whiten_sample(state, block.samples.col(j));
  }
  return out;
}

}  // namespace corss
