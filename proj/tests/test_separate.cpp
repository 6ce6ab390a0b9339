#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "corss/metrics.hpp"
#include "corss/pipeline.hpp"
#include "corss/separate.hpp"
#include "corss/synth.hpp"
#include "support/oracles.hpp"

using namespace corss;
using Catch::Matchers::WithinAbs;

namespace {

template <class Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::io_error;  // sentinel: no throw
}

double sigmoid_direct(double a0, double a1, double y) { return 1.0 - 2.0 / (1.0 + a0 * std::exp(-a1 * y)); }

struct LaplacianRun {
  double batch = 0.0;
  double at_10 = 0.0;
  double at_end = 0.0;
};

// Two Laplacian sources, random 2x2 mixing, 50 000 samples, constant
// lambda 0.002 for whitening and separation. block == 0 runs the per-sample
// rule, otherwise the block rule with that length.
LaplacianRun laplacian_run(std::uint64_t seed, Eigen::Index block) {
  const Eigen::Index total = 50000;
  std::mt19937_64 rng(seed);
  const Matrix s = oracle::laplacian_sources(2, total, rng);
  const Matrix a = oracle::random_matrix(2, 2, rng);
  const Matrix x = a * s;

  LaplacianRun r;
  const auto bw = oracle::batch_whiten(x);
  r.batch = amari_index(oracle::batch_infomax(bw.whitened) * bw.transform * a);

  const auto sched = ForgettingSchedule::constant(0.002);
  auto ws = whitener_init(2, sched);
  auto ss = separator_init(2, sched, NonlinearityConfig::constrained(1.0, 2.0));
  const Eigen::Index step = block == 0 ? 1 : block;
  for (Eigen::Index t = 0; t < total; t += step) {
    const Eigen::Index len = std::min(step, total - t);
    const auto v = whiten_block(ws, {x.middleCols(t, len), t, 1.0});
    if (block == 0) {
      orica_update(ss, v.samples.col(0));
    } else {
      corss_block_update(ss, v);
    }
    if (t < total / 10 && t + len >= total / 10) r.at_10 = amari_index(ss.unmixing * ws.whitening * a);
  }
  r.at_end = amari_index(ss.unmixing * ws.whitening * a);
  return r;
}

}  // namespace

TEST_CASE("separator_init starts from identity", "[separate]") {
  auto s2 = separator_init(2, ForgettingSchedule::constant(0.01), NonlinearityConfig::baseline());
  CHECK(s2.unmixing == Matrix::Identity(2, 2));
  CHECK(s2.sample_count == 0);
  auto s8 = separator_init(8, ForgettingSchedule::power_decay(0.05, 0.6, 0.001), NonlinearityConfig::constrained(1, 2));
  CHECK(s8.unmixing == Matrix::Identity(8, 8));

  CHECK(code_of([] { separator_init(2, ForgettingSchedule::constant(1.2), NonlinearityConfig::baseline()); }) ==
        ErrorCode::schedule_out_of_range);
  CHECK(code_of([] { separator_init(1, ForgettingSchedule::constant(0.01), NonlinearityConfig::baseline()); }) ==
        ErrorCode::invalid_channel_count);
  CHECK(code_of([] { separator_init(2, ForgettingSchedule::constant(0.01), NonlinearityConfig::constrained(0, 2)); }) ==
        ErrorCode::invalid_nonlinearity);
  CHECK(code_of([] { separator_init(2, ForgettingSchedule::constant(0.01), NonlinearityConfig::constrained(1, -1)); }) ==
        ErrorCode::invalid_nonlinearity);
}

TEST_CASE("nonlinearity values", "[separate]") {
  const auto c12 = NonlinearityConfig::constrained(1, 2);
  CHECK(c12(0.0) == 0.0);
  CHECK_THAT(c12(1.0), WithinAbs(-0.76159415595576488812, 1e-15));
  CHECK_THAT(NonlinearityConfig::constrained(2, 1)(0.0), WithinAbs(1.0 / 3.0, 1e-15));
  CHECK(NonlinearityConfig::baseline()(0.7) == std::tanh(0.7));

  for (double a0 : {0.5, 1.0, 3.0})
    for (double a1 : {0.5, 2.0, 4.0})
      for (double y = -5.0; y <= 5.0; y += 0.37)
        CHECK_THAT(NonlinearityConfig::constrained(a0, a1)(y), WithinAbs(sigmoid_direct(a0, a1, y), 1e-14));

  Vector y(3);
  y << -1.0, 0.0, 2.0;
  const Vector f = eval_nonlinearity(c12, y);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(f[i] == c12(y[i]));
}

TEST_CASE("constrained sigmoid with a0=1, a1=2 is -tanh", "[separate]") {
  const auto nl = NonlinearityConfig::constrained(1, 2);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double y = -10.0 + 20.0 * i / 9999.0;
    worst = std::max(worst, std::abs(nl(y) + std::tanh(y)));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("odd symmetry holds only for a0 = 1", "[separate]") {
  const auto odd = NonlinearityConfig::constrained(1, 4);
  for (double y = 0.0; y <= 10.0; y += 0.01) CHECK(std::abs(odd(-y) + odd(y)) <= 1e-15);
  const auto skew = NonlinearityConfig::constrained(2, 4);
  CHECK(std::abs(skew(-0.3) + skew(0.3)) > 1e-3);
}

TEST_CASE("nonlinearity saturates without overflow", "[separate]") {
  for (double a0 : {1e-300, 1.0, 1e300}) {
    const auto nl = NonlinearityConfig::constrained(a0, 50.0);
    for (double y : {-1e300, -1e6, 1e6, 1e300}) {
      const double f = nl(y);
      CHECK(std::isfinite(f));
      CHECK(std::abs(f) <= 1.0);
    }
  }
}

TEST_CASE("sigmoid fit recovers a logistic CDF", "[separate]") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(1e-12, 1.0 - 1e-12);
  std::vector<double> x(50000);
  for (auto& v : x) {
    const double p = u(rng);
    v = 3.0 + 2.0 * std::log(p / (1 - p));
  }
  // the standardized logistic has CDF 1/(1 + exp(-pi c / sqrt 3))
  const auto fit = fit_sigmoid_to_cdf(x);
  CHECK_THAT(fit.a0, WithinAbs(1.0, 0.05));
  CHECK_THAT(fit.a1, WithinAbs(M_PI / std::sqrt(3.0), 0.05));
  CHECK(fit.rms_residual < 0.01);

  CHECK(code_of([] { fit_sigmoid_to_cdf({1, 2, 3}); }) == ErrorCode::invalid_argument);
  CHECK(code_of([] { fit_sigmoid_to_cdf(std::vector<double>(20, 1.0)); }) == ErrorCode::invalid_argument);
}

TEST_CASE("per-sample rule with lambda zero is a no-op", "[separate]") {
  std::mt19937_64 rng(2);
  auto st = separator_init(3, ForgettingSchedule::constant(0.0), NonlinearityConfig::constrained(1, 4),
                           Normalization::none);
  st.unmixing = oracle::random_matrix(3, 3, rng);
  const Matrix w0 = st.unmixing;
  for (int i = 0; i < 20; ++i) {
    const Vector v = oracle::random_matrix(3, 1, rng);
    CHECK(orica_update(st, v) == Vector(w0 * v));
  }
  CHECK(st.unmixing == w0);
}

TEST_CASE("zero input scales W by 1/(1-lambda)", "[separate]") {
  const double lambda = 0.2;
  std::mt19937_64 rng(8);
  auto st = separator_init(3, ForgettingSchedule::constant(lambda), NonlinearityConfig::constrained(1, 4),
                           Normalization::none);
  st.unmixing = oracle::random_matrix(3, 3, rng);
  const Matrix w0 = st.unmixing;
  CHECK(orica_update(st, Vector::Zero(3)) == Vector::Zero(3));
  CHECK((st.unmixing - w0 / (1 - lambda)).cwiseAbs().maxCoeff() < 1e-14);

  // with orthonormal normalization a pure rescale leaves (WW^T)^{-1/2}W unchanged
  auto on = separator_init(3, ForgettingSchedule::constant(lambda), NonlinearityConfig::constrained(1, 4));
  orica_update(on, Vector::Zero(3));
  CHECK((on.unmixing - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("block rule as printed, L=1, lambda=0.5, f(y)^T y = 1", "[separate]") {
  // baseline tanh: f(y)^T y = y tanh y = 1 at y = 1.19967864...
  const double ystar = oracle::solve_ytanhy(1.0);
  CHECK_THAT(ystar, WithinAbs(1.19967864, 1e-8));
  auto st = separator_init(2, ForgettingSchedule::constant(0.5), NonlinearityConfig::baseline(), Normalization::none,
                           BlockRule::as_printed);
  Matrix v(2, 1);
  v << ystar, 0.0;
  const auto out = corss_block_update(st, {v, 0, 1.0});
  const Vector y = out.samples.col(0);
  const Vector f = y.array().tanh();
  CHECK_THAT(f.dot(y), WithinAbs(1.0, 1e-14));
  const Matrix expected = 2.0 * (Matrix::Identity(2, 2) - y * f.transpose() / 1.5);
  CHECK((st.unmixing - expected).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(st.sample_count == 1);
}

TEST_CASE("block of zeros scales W by the product of 1/(1-lambda)", "[separate]") {
  const auto sched = ForgettingSchedule::power_decay(0.1, 0.5, 0.001);
  for (auto rule : {BlockRule::recursive, BlockRule::as_printed}) {
    auto st = separator_init(3, sched, NonlinearityConfig::constrained(1, 4), Normalization::none, rule);
    st.sample_count = 7;
    const auto out = corss_block_update(st, {Matrix::Zero(3, 25), 0, 1.0});
    CHECK(out.samples == Matrix::Zero(3, 25));
    double scale = 1.0;
    for (int l = 0; l < 25; ++l) scale /= 1.0 - sched.value(8 + l);
    CHECK((st.unmixing - scale * Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12 * scale);
    CHECK(st.sample_count == 32);
  }
}

TEST_CASE("recursive block rule at L=1 equals the per-sample rule", "[separate]") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    auto a = separator_init(4, ForgettingSchedule::power_decay(0.2, 0.5, 0.01), NonlinearityConfig::constrained(1, 4),
                            Normalization::none);
    a.unmixing = Matrix::Identity(4, 4) + 0.3 * oracle::random_matrix(4, 4, rng);
    a.sample_count = trial;
    auto b = a;
    const Matrix v = oracle::random_matrix(4, 1, rng);
    const Vector y1 = orica_update(a, v.col(0));
    const auto y2 = corss_block_update(b, {v, 0, 1.0});
    CHECK(y1 == Vector(y2.samples.col(0)));
    CHECK((a.unmixing - b.unmixing).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("block update is a pure function of state and block", "[separate]") {
  std::mt19937_64 rng(13);
  auto a = separator_init(5, ForgettingSchedule::power_decay(0.1, 0.4, 0.001), NonlinearityConfig::constrained(1, 4));
  a.unmixing = Matrix::Identity(5, 5) + 0.2 * oracle::random_matrix(5, 5, rng);
  const MultichannelBlock block{oracle::random_matrix(5, 200, rng), 0, 1.0};
  auto b = a;
  const auto ya = corss_block_update(a, block);
  const auto yb = corss_block_update(b, block);
  CHECK(ya.samples == yb.samples);
  CHECK(a.unmixing == b.unmixing);
}

TEST_CASE("singular denominators are skipped and reported", "[separate]") {
  // -tanh: f(y)^T y = -y tanh y. Recursive rule: 1 + l(f^T y - 1) = 0 at
  // l = 0.5 when y tanh y = 1.
  const double y1 = oracle::solve_ytanhy(1.0);
  Matrix v(2, 1);
  v << y1, 0.0;
  {
    auto st = separator_init(2, ForgettingSchedule::constant(0.5), NonlinearityConfig::constrained(1, 2));
    orica_update(st, v.col(0));
    CHECK(st.skipped_samples == 1);
    CHECK(st.unmixing == Matrix::Identity(2, 2));
    CHECK(st.sample_count == 1);
  }
  {
    auto st = separator_init(2, ForgettingSchedule::constant(0.5), NonlinearityConfig::constrained(1, 2));
    BlockUpdateReport rep;
    corss_block_update(st, {v, 0, 1.0}, &rep);
    CHECK(rep.skipped == 1);
    CHECK(rep.degenerate);
    CHECK(st.unmixing == Matrix::Identity(2, 2));
  }
  // As printed: l + f^T y = 0 at l = 0.5 when y tanh y = 0.5. A block made
  // only of such samples is degenerate; mixing in a regular sample is not.
  const double yh = oracle::solve_ytanhy(0.5);
  Matrix vb(2, 3);
  vb << yh, -yh, 0.0, 0.0, 0.0, yh;
  {
    auto st = separator_init(2, ForgettingSchedule::constant(0.5), NonlinearityConfig::constrained(1, 2),
                             Normalization::orthonormal, BlockRule::as_printed);
    BlockUpdateReport rep;
    corss_block_update(st, {vb, 0, 1.0}, &rep);
    CHECK(rep.skipped == 3);
    CHECK(rep.degenerate);
    CHECK(st.unmixing == Matrix::Identity(2, 2));
    CHECK(st.skipped_samples == 3);
    CHECK(st.sample_count == 3);
  }
  {
    Matrix mixed = vb;
    mixed.col(1) << 0.3, 0.1;
    auto st = separator_init(2, ForgettingSchedule::constant(0.5), NonlinearityConfig::constrained(1, 2),
                             Normalization::orthonormal, BlockRule::as_printed);
    BlockUpdateReport rep;
    corss_block_update(st, {mixed, 0, 1.0}, &rep);
    CHECK(rep.skipped == 2);
    CHECK_FALSE(rep.degenerate);
  }
}

TEST_CASE("separation errors", "[separate]") {
  auto st = separator_init(2, ForgettingSchedule::constant(0.01), NonlinearityConfig::constrained(1, 4));
  CHECK(code_of([&] { orica_update(st, Vector::Ones(3)); }) == ErrorCode::shape_error);
  CHECK(code_of([&] { corss_block_update(st, {Matrix::Ones(3, 5), 0, 1.0}); }) == ErrorCode::shape_error);
  CHECK(code_of([&] { corss_block_update(st, {Matrix(2, 0), 0, 1.0}); }) == ErrorCode::shape_error);
  Vector nan(2);
  nan << 0.0, std::nan("");
  CHECK(code_of([&] { orica_update(st, nan); }) == ErrorCode::non_finite_sample);
  Matrix bad = Matrix::Ones(2, 4);
  bad(1, 2) = std::numeric_limits<double>::infinity();
  CHECK(code_of([&] { corss_block_update(st, {bad, 0, 1.0}); }) == ErrorCode::non_finite_sample);

  // without normalization a zero stream grows W by 1/(1-l) per sample
  auto grow = separator_init(2, ForgettingSchedule::constant(0.5), NonlinearityConfig::constrained(1, 4),
                             Normalization::none);
  CHECK(code_of([&] {
          for (int i = 0; i < 40; ++i) orica_update(grow, Vector::Zero(2));
        }) == ErrorCode::divergence);
}

TEST_CASE("normalization modes", "[separate]") {
  std::mt19937_64 rng(30);
  const Matrix w = oracle::random_matrix(4, 4, rng);
  Matrix u = w;
  detail::normalize(u, Normalization::unit_rows, 0);
  for (Eigen::Index i = 0; i < 4; ++i) CHECK_THAT(u.row(i).norm(), WithinAbs(1.0, 1e-14));
  Matrix o = w;
  detail::normalize(o, Normalization::orthonormal, 0);
  CHECK((o * o.transpose() - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-12);
  // same row space as W: o = P w with P symmetric positive definite
  const Matrix p = o * w.inverse();
  CHECK((p - p.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (p + p.transpose())).eigenvalues().minCoeff() > 0.0);

  Matrix singular = Matrix::Ones(3, 3);
  CHECK(code_of([&] { detail::normalize(singular, Normalization::orthonormal, 5); }) == ErrorCode::divergence);
  Matrix zero_row = Matrix::Identity(3, 3);
  zero_row.row(1).setZero();
  CHECK(code_of([&] { detail::normalize(zero_row, Normalization::unit_rows, 5); }) == ErrorCode::divergence);
}

TEST_CASE("Laplacian mixture: Amari index falls below 0.3 and below its 10% value", "[separate]") {
  for (Eigen::Index block : {Eigen::Index{0}, Eigen::Index{200}}) {
    for (std::uint64_t seed = 100; seed < 105; ++seed) {
      const auto r = laplacian_run(seed, block);
      INFO((block == 0 ? "per-sample" : "block 200") << " seed " << seed << " at 10% " << r.at_10 << " end "
                                                      << r.at_end << " batch " << r.batch);
      CHECK(r.at_end < 0.3);
      CHECK(r.at_end < r.at_10);
    }
  }
}

TEST_CASE("Laplacian mixture: online Amari index within 2x of the batch oracle", "[batch-ratio]") {
  for (Eigen::Index block : {Eigen::Index{0}, Eigen::Index{200}}) {
    for (std::uint64_t seed = 100; seed < 105; ++seed) {
      const auto r = laplacian_run(seed, block);
      INFO((block == 0 ? "per-sample" : "block 200") << " seed " << seed << " end " << r.at_end << " batch "
                                                      << r.batch << " ratio " << r.at_end / r.batch);
      CHECK(r.at_end <= 2.0 * r.batch);
    }
  }
}

TEST_CASE("recovery quality is equivariant under permuted mixing rows", "[separate]") {
  auto spec = SynthSpec::mu_default(1);
  const auto base = generate(spec);
  const auto cfg = PipelineConfig::preset(Task::semg_decomposition, Algorithm::corss);

  auto sorted_mr = [&](const Recording& rec) {
    const auto run = run_stream(cfg, split_blocks(rec.data, cfg.block_size), rec.data.channels(), rec.data.sample_rate);
    auto s = score_decomposition(run.identification.spike_trains, rec.truth, run.burn_in);
    std::sort(s.per_source_mr.begin(), s.per_source_mr.end());
    return s.per_source_mr;
  };
  const auto ref = sorted_mr(base);

  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<int> perm(static_cast<std::size_t>(spec.n_ch));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Recording permuted = base;
    for (int c = 0; c < spec.n_ch; ++c) {
      permuted.data.samples.row(c) = base.data.samples.row(perm[static_cast<std::size_t>(c)]);
      permuted.truth.mixing.row(c) = base.truth.mixing.row(perm[static_cast<std::size_t>(c)]);
    }
    const auto got = sorted_mr(permuted);
    REQUIRE(got.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      INFO("trial " << trial << " rank " << i);
      CHECK_THAT(got[i], WithinAbs(ref[i], 0.05));
    }
  }
}
