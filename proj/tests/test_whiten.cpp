#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>

#include "corss/whiten.hpp"
#include "support/oracles.hpp"

using namespace corss;
using Catch::Matchers::WithinAbs;

namespace {

double cov_residual(const Matrix& v) { return (oracle::sample_cov(v) - Matrix::Identity(v.rows(), v.rows())).norm(); }

Matrix whiten_all(WhitenerState& st, const Matrix& x) {
  Matrix v(x.rows(), x.cols());
  for (Eigen::Index t = 0; t < x.cols(); ++t) v.col(t) = whiten_sample(st, x.col(t));
  return v;
}

}  // namespace

TEST_CASE("whitener_init starts from identity", "[whiten]") {
  auto s2 = whitener_init(2, ForgettingSchedule::constant(0.01));
  CHECK(s2.whitening == Matrix::Identity(2, 2));
  CHECK(s2.sample_count == 0);

  auto s8 = whitener_init(8, ForgettingSchedule::power_decay(0.05, 0.6, 0.001));
  CHECK(s8.whitening == Matrix::Identity(8, 8));

  try {
    whitener_init(1, ForgettingSchedule::constant(0.01));
    FAIL("expected invalid-channel-count");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::invalid_channel_count);
  }
}

TEST_CASE("schedule validation", "[whiten]") {
  auto code_of = [](const ForgettingSchedule& s) {
    try {
      s.validate();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::io_error;  // sentinel: no throw
  };
  CHECK(code_of(ForgettingSchedule::constant(1.2)) == ErrorCode::schedule_out_of_range);
  CHECK(code_of(ForgettingSchedule::constant(1.0)) == ErrorCode::schedule_out_of_range);
  CHECK(code_of(ForgettingSchedule::constant(-0.1)) == ErrorCode::schedule_out_of_range);
  CHECK(code_of(ForgettingSchedule::power_decay(0.1, -1.0, 0.0)) == ErrorCode::schedule_out_of_range);
  CHECK(code_of(ForgettingSchedule::power_decay(0.1, 0.5, 0.2)) == ErrorCode::schedule_out_of_range);
  CHECK(code_of(ForgettingSchedule::constant(0.0)) == ErrorCode::io_error);

  const auto p = ForgettingSchedule::power_decay(0.05, 0.6, 0.001);
  CHECK(p.value(1) == 0.05);
  CHECK_THAT(p.value(10), WithinAbs(0.05 / std::pow(10.0, 0.6), 1e-15));
  CHECK(p.value(100000000) == 0.001);
}

TEST_CASE("lambda zero freezes the whitening matrix", "[whiten]") {
  std::mt19937_64 rng(3);
  auto st = whitener_init(3, ForgettingSchedule::constant(0.0));
  st.whitening = oracle::random_matrix(3, 3, rng);
  const Matrix m0 = st.whitening;
  for (int i = 0; i < 50; ++i) {
    const Vector x = oracle::random_matrix(3, 1, rng);
    const Vector v = whiten_sample(st, x);
    CHECK(v == Vector(m0 * x));
  }
  CHECK(st.whitening == m0);
  CHECK(st.sample_count == 50);
}

TEST_CASE("unit-norm output gives denominator one", "[whiten]") {
  const double lambda = 0.1;
  auto st = whitener_init(3, ForgettingSchedule::constant(lambda), false);
  Vector x(3);
  x << 0.6, 0.0, 0.8;
  const Vector v = whiten_sample(st, x);
  CHECK(v == x);
  const Matrix expected = Matrix::Identity(3, 3) + lambda / (1 - lambda) * (Matrix::Identity(3, 3) - x * x.transpose());
  CHECK((st.whitening - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("output is the pre-update transform applied to the input", "[whiten]") {
  std::mt19937_64 rng(11);
  auto st = whitener_init(4, ForgettingSchedule::power_decay(0.05, 0.6, 0.001), true);
  const Matrix x = oracle::random_matrix(4, 300, rng).array() + 2.0;
  for (Eigen::Index t = 0; t < x.cols(); ++t) {
    const Matrix m = st.whitening;
    const Vector mean = st.running_mean;
    const Vector v = whiten_sample(st, x.col(t));
    CHECK(v == Vector(m * (x.col(t) - mean)));
  }
}

TEST_CASE("running mean tracks a DC offset", "[whiten]") {
  std::mt19937_64 rng(5);
  auto st = whitener_init(3, ForgettingSchedule::power_decay(0.05, 0.6, 0.001), true);
  Matrix x = oracle::random_matrix(3, 20000, rng);
  x.row(0).array() += 5.0;
  x.row(2).array() -= 3.0;
  const Matrix v = whiten_all(st, x);
  CHECK_THAT(st.running_mean[0], WithinAbs(5.0, 0.2));
  CHECK_THAT(st.running_mean[1], WithinAbs(0.0, 0.2));
  CHECK_THAT(st.running_mean[2], WithinAbs(-3.0, 0.2));
  CHECK(cov_residual(v.rightCols(5000)) < 0.15);
}

TEST_CASE("4-channel Gaussian stream whitens to sampling-noise level", "[whiten]") {
  // The residual of an exact whitener evaluated on N samples has expected
  // Frobenius size about sqrt((n^2 + n) / N); the online estimate must be at
  // that level and no worse than 1.5x the batch oracle on the same window.
  const Eigen::Index n = 4, total = 20000, window = 5000;
  const double sampling_level = std::sqrt(static_cast<double>(n * n + n) / static_cast<double>(window));
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    const Matrix x = oracle::gaussian_stream(n, total, rng, 20.0);
    auto st = whitener_init(n, ForgettingSchedule::constant(0.005), true);
    const Matrix v = whiten_all(st, x);
    const double online = cov_residual(v.rightCols(window));
    const double batch = cov_residual(oracle::batch_whiten(x).whitened.rightCols(window));
    INFO("seed " << seed << " online " << online << " batch " << batch);
    CHECK(online < sampling_level);
    CHECK(online <= 1.5 * batch);
  }
}

TEST_CASE("residual at stream end is below the residual at 10%", "[whiten]") {
  const Eigen::Index n = 4, total = 20000, window = total / 10;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const Matrix x = oracle::gaussian_stream(n, total, rng, 20.0);
    auto st = whitener_init(n, ForgettingSchedule::power_decay(0.05, 0.6, 0.001), true);
    const Matrix v = whiten_all(st, x);
    const double first = cov_residual(v.leftCols(window));
    const double last = cov_residual(v.rightCols(window));
    INFO("seed " << seed << " first " << first << " last " << last);
    CHECK(last < first);
  }
}

TEST_CASE("whiten_block equals per-sample calls bit for bit", "[whiten]") {
  std::mt19937_64 rng(9);
  const Matrix x = oracle::gaussian_stream(3, 101, rng, 10.0);
  auto a = whitener_init(3, ForgettingSchedule::power_decay(0.05, 0.6, 0.001));
  auto b = a;

  const MultichannelBlock one{x.leftCols(1), 0, 1000.0};
  const auto out1 = whiten_block(a, one);
  CHECK(out1.samples.col(0) == whiten_sample(b, x.col(0)));
  CHECK(a.whitening == b.whitening);

  const MultichannelBlock hundred{x.rightCols(100), 1, 1000.0};
  const auto out100 = whiten_block(a, hundred);
  for (Eigen::Index t = 0; t < 100; ++t) CHECK(out100.samples.col(t) == whiten_sample(b, x.col(t + 1)));
  CHECK(a.whitening == b.whitening);
  CHECK(a.running_mean == b.running_mean);
  CHECK(out100.start_index == 1);
  CHECK(out100.samples.rows() == 3);
  CHECK(out100.samples.cols() == 100);
}

TEST_CASE("per-step drift on white input is O(lambda)", "[whiten]") {
  // dM = s (I - v v^T / q) M with s = l/(1-l). The middle factor has
  // eigenvalues 1 (n-1 times) and 1 - |v|^2/q, so
  //   |dM|_F <= s |M|_2 sqrt(n - 1 + (1 - |v|^2/q)^2).
  // For n = 4 Gaussian input |v|^2 stays below ~25 over 1000 draws, which
  // bounds the constant at c = 30.
  const double lambda = 0.01, s = lambda / (1 - lambda), c = 30.0;
  const Eigen::Index n = 4;
  std::mt19937_64 rng(21);
  auto st = whitener_init(n, ForgettingSchedule::constant(lambda), false);
  double max_drift = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Vector x = oracle::random_matrix(n, 1, rng);
    const Matrix before = st.whitening;
    const double m2 = Eigen::JacobiSVD<Matrix>(before).singularValues()[0];
    const Vector v = whiten_sample(st, x);
    const double r = v.squaredNorm() / (1.0 + lambda * (v.squaredNorm() - 1.0));
    const double drift = (st.whitening - before).norm();
    CHECK(drift <= s * m2 * std::sqrt(static_cast<double>(n - 1) + (1 - r) * (1 - r)) * (1 + 1e-12));
    max_drift = std::max(max_drift, drift);
  }
  CHECK(max_drift <= s * c);
  CHECK((st.whitening - Matrix::Identity(n, n)).norm() < 0.5);
}

TEST_CASE("same stream gives a bit-identical trajectory", "[whiten]") {
  std::mt19937_64 rng(4);
  const Matrix x = oracle::gaussian_stream(5, 3000, rng, 20.0);
  auto a = whitener_init(5, ForgettingSchedule::power_decay(0.05, 0.6, 0.001));
  auto b = a;
  CHECK(whiten_all(a, x) == whiten_all(b, x));
  CHECK(a.whitening == b.whitening);
}

TEST_CASE("whitening errors", "[whiten]") {
  auto st = whitener_init(2, ForgettingSchedule::constant(0.01));
  auto code_of = [&](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::io_error;
  };
  Vector bad(2);
  bad << 1.0, std::numeric_limits<double>::quiet_NaN();
  CHECK(code_of([&] { whiten_sample(st, bad); }) == ErrorCode::non_finite_sample);
  bad << 1.0, std::numeric_limits<double>::infinity();
  CHECK(code_of([&] { whiten_sample(st, bad); }) == ErrorCode::non_finite_sample);
  CHECK(code_of([&] { whiten_sample(st, Vector::Ones(3)); }) == ErrorCode::shape_error);
  CHECK(code_of([&] { whiten_block(st, {Matrix::Ones(3, 4), 0, 1.0}); }) == ErrorCode::shape_error);

  // zero input: v = 0, q = 1 - l, so M grows by 1/(1-l) = 100 per sample
  auto runaway = whitener_init(2, ForgettingSchedule::constant(0.99), false);
  CHECK(code_of([&] {
          for (int i = 0; i < 10; ++i) whiten_sample(runaway, Vector::Zero(2));
        }) == ErrorCode::divergence);
}
