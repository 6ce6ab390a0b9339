#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "corss/nonlinearity.hpp"
#include "corss/schedule.hpp"
#include "corss/types.hpp"
#include "corss/whiten.hpp"

namespace corss {

/// How W is re-conditioned after each update. The recursions only fix W up
/// to a growing scale (the prod 1/(1-l) factor), so some normalization is
/// needed for long streams. `orthonormal` applies W <- (W W^T)^{-1/2} W,
/// which also leaves every row at unit norm.
enum class Normalization { none, unit_rows, orthonormal };

/// Per-sample weight in the block update.
///
/// recursive:  y f^T * l / (1 + l (f^T y - 1))   (block form of the per-sample rule)
/// as_printed: y f^T / (l + f^T y)
enum class BlockRule { recursive, as_printed };

inline std::string to_string(Normalization n) {
  switch (n) {
    case Normalization::none: return "none";
    case Normalization::unit_rows: return "unit-rows";
    case Normalization::orthonormal: return "orthonormal";
  }
  return "unknown";
}

inline std::string to_string(BlockRule rule) {
  return rule == BlockRule::recursive ? "recursive" : "as-printed";
}

struct SeparatorState {
  Matrix unmixing;
  std::int64_t sample_count = 0;
  ForgettingSchedule schedule;
  NonlinearityConfig nonlinearity;
  Normalization normalization = Normalization::orthonormal;
  BlockRule block_rule = BlockRule::recursive;
  // Samples excluded because their update denominator was within kSingularEps of 0.
  std::int64_t skipped_samples = 0;

  Eigen::Index channels() const { return unmixing.rows(); }
};

inline constexpr double kSingularEps = 1e-12;

struct BlockUpdateReport {
  std::int64_t skipped = 0;
  bool degenerate = false;  // every sample skipped, W left unchanged
};

inline SeparatorState separator_init(Eigen::Index n_ch, const ForgettingSchedule& schedule,
                                     const NonlinearityConfig& nl,
                                     Normalization normalization = Normalization::orthonormal,
                                     BlockRule rule = BlockRule::recursive) {
  if (n_ch < 2) {
    throw Error(ErrorCode::invalid_channel_count,
                "separation needs at least 2 channels, got " + std::to_string(n_ch));
  }
  schedule.validate();
  nl.validate();
  SeparatorState state;
  state.unmixing = Matrix::Identity(n_ch, n_ch);
  state.schedule = schedule;
  state.nonlinearity = nl;
  state.normalization = normalization;
  state.block_rule = rule;
  return state;
}

namespace detail {

inline void normalize(Matrix& w, Normalization mode, std::int64_t at_sample) {
  switch (mode) {
    case Normalization::none:
      break;
    case Normalization::unit_rows:
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        const double norm = w.row(i).norm();
        if (!(norm > 0.0) || !std::isfinite(norm)) {
          throw Error(ErrorCode::divergence,
                      "unmixing row collapsed at sample " + std::to_string(at_sample));
        }
        w.row(i) /= norm;
      }
      break;
    case Normalization::orthonormal: {
      Eigen::SelfAdjointEigenSolver<Matrix> eig(w * w.transpose());
      const Vector d = eig.eigenvalues();
      if (eig.info() != Eigen::Success || !(d.minCoeff() > 0.0) || !d.allFinite()) {
        throw Error(ErrorCode::divergence,
                    "unmixing matrix became singular at sample " + std::to_string(at_sample));
      }
      const Matrix& e = eig.eigenvectors();
      w = e * d.cwiseSqrt().cwiseInverse().asDiagonal() * e.transpose() * w;
      break;
    }
  }
}

inline void check_divergence(const Matrix& w, std::int64_t at_sample) {
  if (!w.allFinite() || w.cwiseAbs().maxCoeff() > kDivergenceLimit) {
    throw Error(ErrorCode::divergence,
                "unmixing matrix diverged at sample " + std::to_string(at_sample));
  }
}

}  // namespace detail

/// Per-sample recursive update (baseline rule). Returns y = W v with the
/// pre-update W, then
///
///   W <- W + l/(1-l) [I - y f(y)^T / (1 + l (f(y)^T y - 1))] W
///
/// A sample whose denominator is within kSingularEps of zero is counted in
/// skipped_samples and leaves W unchanged.
inline Vector orica_update(SeparatorState& state, const Eigen::Ref<const Vector>& v) {
  if (v.size() != state.channels()) {
    throw Error(ErrorCode::shape_error, "whitened sample has " + std::to_string(v.size()) +
                                            " channels, separator expects " +
                                            std::to_string(state.channels()));
  }
  if (!v.allFinite()) {
    throw Error(ErrorCode::non_finite_sample,
                "non-finite whitened sample at " + std::to_string(state.sample_count));
  }
  const double lambda = state.schedule.value(state.sample_count + 1);
  if (!(lambda >= 0.0 && lambda < 1.0)) {
    throw Error(ErrorCode::schedule_out_of_range,
                "lambda = " + std::to_string(lambda) + " outside [0, 1)");
  }

  Vector y = state.unmixing * v;
  ++state.sample_count;
  if (lambda == 0.0) return y;

  const Vector f = eval_nonlinearity(state.nonlinearity, y);
  const double q = 1.0 + lambda * (f.dot(y) - 1.0);
  if (std::abs(q) < kSingularEps) {
    ++state.skipped_samples;
    return y;
  }
  const double step = lambda / (1.0 - lambda);
  // [I - y f^T / q] W == W - y (f^T W) / q
  const Eigen::RowVectorXd ft_w = f.transpose() * state.unmixing;
  state.unmixing += step * (state.unmixing - (y / q) * ft_w);
  detail::normalize(state.unmixing, state.normalization, state.sample_count);
  detail::check_divergence(state.unmixing, state.sample_count);
  return y;
}

/// Block update. Every y_l uses the block-initial W; then
///
///   W <- (prod_l 1/(1-l_l)) [I - sum_l c_l y_l f(y_l)^T] W
///
/// with c_l given by state.block_rule. The sum is accumulated in sample
/// order so the result is bit-reproducible.
inline MultichannelBlock corss_block_update(SeparatorState& state, const MultichannelBlock& block,
                                            BlockUpdateReport* report = nullptr) {
  if (block.channels() != state.channels()) {
    throw Error(ErrorCode::shape_error, "block has " + std::to_string(block.channels()) +
                                            " channels, separator expects " +
                                            std::to_string(state.channels()));
  }
  if (block.length() < 1) throw Error(ErrorCode::shape_error, "block length must be >= 1");
  if (!block.samples.allFinite()) {
    throw Error(ErrorCode::non_finite_sample,
                "non-finite whitened block at sample " + std::to_string(state.sample_count));
  }

  const Eigen::Index n = state.channels();
  MultichannelBlock out{state.unmixing * block.samples, block.start_index, block.sample_rate};

  Matrix accum = Matrix::Zero(n, n);
  double scale = 1.0;
  BlockUpdateReport local;
  for (Eigen::Index l = 0; l < block.length(); ++l) {
    const double lambda = state.schedule.value(state.sample_count + 1 + l);
    if (!(lambda >= 0.0 && lambda < 1.0)) {
      throw Error(ErrorCode::schedule_out_of_range,
                  "lambda = " + std::to_string(lambda) + " outside [0, 1)");
    }
    scale /= (1.0 - lambda);
    const auto y = out.samples.col(l);
    const Vector f = eval_nonlinearity(state.nonlinearity, y);
    const double fy = f.dot(y);

    double weight = 0.0;
    if (state.block_rule == BlockRule::recursive) {
      const double q = 1.0 + lambda * (fy - 1.0);
      if (std::abs(q) < kSingularEps) {
        ++local.skipped;
        continue;
      }
      weight = lambda / q;
    } else {
      const double q = lambda + fy;
      if (std::abs(q) < kSingularEps) {
        ++local.skipped;
        continue;
      }
      weight = 1.0 / q;
    }
    if (weight != 0.0) accum.noalias() += (weight * y) * f.transpose();
  }

  state.sample_count += block.length();
  state.skipped_samples += local.skipped;
  if (local.skipped == block.length()) {
    local.degenerate = true;
  } else {
    state.unmixing = scale * (state.unmixing - accum * state.unmixing);
    detail::normalize(state.unmixing, state.normalization, state.sample_count);
    detail::check_divergence(state.unmixing, state.sample_count);
  }
  if (report) *report = local;
  return out;
}

}  // namespace corss
