#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "corss/types.hpp"

namespace corss {

/// Forgetting factor lambda_n shared by the whitening and unmixing
/// recursions. Sample indices are 1-based: value(1) is used for the first
/// sample a state ever sees.
struct ForgettingSchedule {
  enum class Mode { constant, power_decay };

  Mode mode = Mode::power_decay;
  double lambda0 = 0.05;
  double gamma = 0.6;
  double lambda_min = 0.001;

  static ForgettingSchedule constant(double lambda) {
    return {Mode::constant, lambda, 0.0, 0.0};
  }

  static ForgettingSchedule power_decay(double lambda0, double gamma, double lambda_min) {
    return {Mode::power_decay, lambda0, gamma, lambda_min};
  }

  /// Throws schedule_out_of_range unless 0 <= lambda_min <= lambda0 < 1 and
  /// gamma >= 0. lambda0 == 0 is accepted and freezes the recursion.
  void validate() const {
    auto finite = std::isfinite(lambda0) && std::isfinite(gamma) && std::isfinite(lambda_min);
    if (!finite || lambda0 < 0.0 || lambda0 >= 1.0) {
      throw Error(ErrorCode::schedule_out_of_range,
                  "lambda0 must lie in [0, 1), got " + std::to_string(lambda0));
    }
    if (mode == Mode::power_decay && (gamma < 0.0 || lambda_min < 0.0 || lambda_min > lambda0)) {
      throw Error(ErrorCode::schedule_out_of_range,
                  "power-decay needs gamma >= 0 and 0 <= lambda_min <= lambda0");
    }
  }

  double value(std::int64_t n) const {
    if (mode == Mode::constant) return lambda0;
    auto k = static_cast<double>(std::max<std::int64_t>(n, 1));
    return std::max(lambda0 / std::pow(k, gamma), lambda_min);
  }
};

inline std::string to_string(ForgettingSchedule::Mode mode) {
  return mode == ForgettingSchedule::Mode::constant ? "constant" : "power-decay";
}

}  // namespace corss
