#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <unsupported/Eigen/NonLinearOptimization>

#include "corss/types.hpp"

namespace corss {

/// Score function f(.) used by the unmixing updates.
///
/// baseline_tanh:        f(y) = tanh(y)
/// constrained_sigmoid:  f(y) = 1 - 2 / (1 + a0 exp(-a1 y))
///
/// The sigmoid 1/(1 + a0 exp(-a1 y)) is a fitted stand-in for the target
/// source CDF; with a0 = 1, a1 = 2 the constrained form equals -tanh(y).
struct NonlinearityConfig {
  enum class Kind { baseline_tanh, constrained_sigmoid };

  Kind kind = Kind::constrained_sigmoid;
  double a0 = 1.0;
  double a1 = 4.0;

  static NonlinearityConfig baseline() { return {Kind::baseline_tanh, 1.0, 1.0}; }
  static NonlinearityConfig constrained(double a0, double a1) {
    return {Kind::constrained_sigmoid, a0, a1};
  }

  void validate() const {
    if (!(a0 > 0.0) || !(a1 > 0.0) || !std::isfinite(a0) || !std::isfinite(a1)) {
      throw Error(ErrorCode::invalid_nonlinearity,
                  "a0 and a1 must be positive, got a0=" + std::to_string(a0) +
                      " a1=" + std::to_string(a1));
    }
  }

  double operator()(double y) const {
    if (kind == Kind::baseline_tanh) return std::tanh(y);
    // 1 - 2/(1 + e^z) == tanh(z/2) with z = ln(a0) - a1 y; saturates instead
    // of overflowing for large |y|.
    return std::tanh(0.5 * (std::log(a0) - a1 * y));
  }
};

inline std::string to_string(NonlinearityConfig::Kind kind) {
  return kind == NonlinearityConfig::Kind::baseline_tanh ? "baseline-tanh"
                                                         : "constrained-sigmoid";
}

inline Vector eval_nonlinearity(const NonlinearityConfig& nl, const Eigen::Ref<const Vector>& y) {
  Vector out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) out[i] = nl(y[i]);
  return out;
}

struct SigmoidFit {
  double a0 = 1.0;
  double a1 = 1.0;
  double rms_residual = 0.0;
};

namespace detail {

// Residuals of the sigmoid 1/(1 + e^p e^{-e^q c}) against an empirical CDF,
// parameterized in logs so a0, a1 stay positive.
struct CdfResidual {
  using Scalar = double;
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

  const std::vector<double>& points;
  const std::vector<double>& cdf;

  int inputs() const { return 2; }
  int values() const { return static_cast<int>(points.size()); }

  int operator()(const Eigen::VectorXd& x, Eigen::VectorXd& fvec) const {
    const double a0 = std::exp(x[0]), a1 = std::exp(x[1]);
    for (std::size_t i = 0; i < points.size(); ++i) {
      fvec[static_cast<Eigen::Index>(i)] = 1.0 / (1.0 + a0 * std::exp(-a1 * points[i])) - cdf[i];
    }
    return 0;
  }

  int df(const Eigen::VectorXd& x, Eigen::MatrixXd& jac) const {
    const double a0 = std::exp(x[0]), a1 = std::exp(x[1]);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double e = a0 * std::exp(-a1 * points[i]);
      const double s = 1.0 / (1.0 + e);
      const double ds = s * s * e;  // -d s / d(e)
      const auto r = static_cast<Eigen::Index>(i);
      jac(r, 0) = -ds;                     // d/dp, de/dp = e
      jac(r, 1) = ds * a1 * points[i];     // d/dq, de/dq = -a1 c e
    }
    return 0;
  }
};

}  // namespace detail

/// Least-squares fit of 1/(1 + a0 exp(-a1 c)) to the empirical CDF of a
/// standardized template source. The template is scaled to zero mean and unit
/// variance first, matching the scale of separated components.
inline SigmoidFit fit_sigmoid_to_cdf(const std::vector<double>& template_source,
                                     std::size_t max_points = 2000) {
  if (template_source.size() < 8) {
    throw Error(ErrorCode::invalid_argument, "template source needs at least 8 samples");
  }
  const auto n = static_cast<double>(template_source.size());
  double mean = 0.0;
  for (double v : template_source) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : template_source) var += (v - mean) * (v - mean);
  var /= n;
  if (!(var > 0.0)) throw Error(ErrorCode::invalid_argument, "template source is constant");
  const double sd = std::sqrt(var);

  std::vector<double> sorted(template_source.size());
  std::transform(template_source.begin(), template_source.end(), sorted.begin(),
                 [&](double v) { return (v - mean) / sd; });
  std::sort(sorted.begin(), sorted.end());

  const std::size_t m = std::min(max_points, sorted.size());
  std::vector<double> points(m), cdf(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double q = (static_cast<double>(k) + 0.5) / static_cast<double>(m);
    const auto idx = static_cast<std::size_t>(q * static_cast<double>(sorted.size()));
    points[k] = sorted[std::min(idx, sorted.size() - 1)];
    cdf[k] = q;
  }

  detail::CdfResidual functor{points, cdf};
  Eigen::LevenbergMarquardt<detail::CdfResidual> lm(functor);
  Eigen::VectorXd x(2);
  x << 0.0, std::log(1.7);  // logistic with unit variance
  lm.minimize(x);

  Eigen::VectorXd residual(static_cast<Eigen::Index>(m));
  functor(x, residual);
  return {std::exp(x[0]), std::exp(x[1]), std::sqrt(residual.squaredNorm() / static_cast<double>(m))};
}

}  // namespace corss
