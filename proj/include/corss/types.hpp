#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace corss {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Failure categories shared by every module. The CLI prints the token from
/// to_string() as the first field of its one-line error message.
enum class ErrorCode {
  invalid_channel_count,
  non_finite_sample,
  schedule_out_of_range,
  shape_error,
  divergence,
  invalid_nonlinearity,
  undefined_normalization,
  undefined_correlation,
  degenerate_matrix,
  empty_input,
  invalid_spec,
  invalid_argument,
  stream_corrupt,
  unavailable_metric,
  io_error,
  parse_error,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_channel_count: return "invalid-channel-count";
    case ErrorCode::non_finite_sample: return "non-finite-sample";
    case ErrorCode::schedule_out_of_range: return "schedule-out-of-range";
    case ErrorCode::shape_error: return "shape-error";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::invalid_nonlinearity: return "invalid-nonlinearity";
    case ErrorCode::undefined_normalization: return "undefined-normalization";
    case ErrorCode::undefined_correlation: return "undefined-correlation";
    case ErrorCode::degenerate_matrix: return "degenerate-matrix";
    case ErrorCode::empty_input: return "empty-input";
    case ErrorCode::invalid_spec: return "invalid-spec";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::stream_corrupt: return "stream-corrupt";
    case ErrorCode::unavailable_metric: return "unavailable-metric";
    case ErrorCode::io_error: return "io-error";
    case ErrorCode::parse_error: return "parse-error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// A window of n_ch x L samples; column j is the sample taken at
/// (start_index + j) / sample_rate seconds.
struct MultichannelBlock {
  Matrix samples;
  std::int64_t start_index = 0;
  double sample_rate = 1.0;

  Eigen::Index channels() const { return samples.rows(); }
  Eigen::Index length() const { return samples.cols(); }
  double start_time() const { return static_cast<double>(start_index) / sample_rate; }
  double timestamp(Eigen::Index column) const {
    return static_cast<double>(start_index + column) / sample_rate;
  }
};

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

}  // namespace corss
