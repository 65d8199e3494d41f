#include "oracles.hpp"

#include "ntk/errors.hpp"
#include "ntk/estimators.hpp"

#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

using namespace ntk;

namespace {

EstimatorConfig config(Index m, std::uint64_t seed) {
  EstimatorConfig cfg;
  cfg.m = m;
  cfg.seed = seed;
  return cfg;
}

std::shared_ptr<const DenseOperator> dense(const DenseMatrix& a) {
  return std::make_shared<const DenseOperator>(a);
}

template <class F>
oracle::MeanSe monte_carlo(int seeds, F&& estimate) {
  std::vector<double> xs;
  xs.reserve(seeds);
  for (int s = 0; s < seeds; ++s) xs.push_back(estimate(static_cast<std::uint64_t>(s)));
  return oracle::mean_se(xs);
}

/// All 2^dim sign vectors as columns.
DenseMatrix sign_vectors(Index dim) {
  const Index count = Index{1} << dim;
  DenseMatrix out(dim, count);
  for (Index k = 0; k < count; ++k) {
    for (Index i = 0; i < dim; ++i) out(i, k) = (k >> i) & 1 ? 1.0 : -1.0;
  }
  return out;
}

/// Every (first, second) pair of sign vectors, as two aligned column blocks.
std::pair<DenseMatrix, DenseMatrix> all_pairs(Index dim) {
  const DenseMatrix s = sign_vectors(dim);
  const Index k = s.cols();
  DenseMatrix first(dim, k * k), second(dim, k * k);
  for (Index a = 0; a < k; ++a) {
    for (Index b = 0; b < k; ++b) {
      first.col(a * k + b) = s.col(a);
      second.col(a * k + b) = s.col(b);
    }
  }
  return {first, second};
}

}  // namespace

TEST_CASE("hutchpp is exact on low-rank PSD operators") {
  const DenseMatrix u = oracle::gaussian(16, 2, 1);
  const auto op = dense(u * u.transpose());
  for (Index m : {6, 9, 12, 30}) {
    const auto rec = hutchpp_trace(*op, config(m, 3));
    CHECK(oracle::rel_diff(rec.value, u.squaredNorm()) <= 1e-10);
  }
}

TEST_CASE("hutchpp of the zero operator") {
  const auto op = dense(DenseMatrix::Zero(10, 10));
  CHECK(hutchpp_trace(*op, config(9, 1)).value == 0.0);
}

TEST_CASE("hutchpp is unbiased on the identity") {
  const auto op = dense(DenseMatrix::Identity(32, 32));
  for (double split : {kCanonicalSplit, kSixthSplit, 0.45}) {
    auto stats = monte_carlo(2000, [&](std::uint64_t s) {
      auto cfg = config(12, s);
      cfg.split = split;
      return hutchpp_trace(*op, cfg).value;
    });
    CHECK(std::abs(stats.mean - 32.0) <= 3.0 * stats.se + 1e-12);
  }
}

TEST_CASE("hutchpp spends exactly m matvecs") {
  const DenseMatrix u = oracle::gaussian(40, 3, 2);
  const auto low_rank = dense(u * u.transpose());
  const auto full = dense(oracle::psd_with_spectrum(Vector::LinSpaced(40, 1.0, 40.0), 3));
  for (const auto* op : {low_rank.get(), full.get()}) {
    for (Index m : {3, 4, 10, 31, 60}) {
      for (double split : {kCanonicalSplit, kSixthSplit}) {
        auto cfg = config(m, 7);
        cfg.split = split;
        const auto before = op->matvec_count();
        const auto rec = hutchpp_trace(*op, cfg);
        CHECK(op->matvec_count() - before == static_cast<std::uint64_t>(m));
        CHECK(rec.matvec_cost == static_cast<double>(m));
      }
    }
  }
}

TEST_CASE("hutchpp argument checks") {
  const auto op = dense(DenseMatrix::Identity(4, 4));
  CHECK_THROWS_AS(hutchpp_trace(*op, config(2, 0)), std::invalid_argument);
  auto cfg = config(9, 0);
  cfg.split = 1.0;
  CHECK_THROWS_AS(hutchpp_trace(*op, cfg), std::invalid_argument);
}

TEST_CASE("estimators are deterministic in the seed") {
  const auto op = dense(oracle::psd_with_spectrum(Vector::LinSpaced(20, 1.0, 2.0), 1));
  CHECK(hutchpp_trace(*op, config(9, 5)).value == hutchpp_trace(*op, config(9, 5)).value);
  CHECK(hutchpp_trace(*op, config(9, 5)).value != hutchpp_trace(*op, config(9, 6)).value);
  CHECK(hutchinson_trace(*op, config(4, 5)).value == hutchinson_trace(*op, config(4, 5)).value);
}

TEST_CASE("hutchinson") {
  SUBCASE("zero operator") {
    CHECK(hutchinson_trace(*dense(DenseMatrix::Zero(5, 5)), config(3, 1)).value == 0.0);
  }
  SUBCASE("unbiased on diag(1..8)") {
    const auto op = dense(Vector::LinSpaced(8, 1.0, 8.0).asDiagonal().toDenseMatrix());
    auto stats = monte_carlo(5000, [&](std::uint64_t s) {
      return hutchinson_trace(*op, config(8, s)).value;
    });
    // Rademacher probes are exact on diagonal matrices
    CHECK(std::abs(stats.mean - 36.0) <= 3.0 * stats.se + 1e-9);
  }
  SUBCASE("unbiased on a dense operator") {
    const DenseMatrix a = oracle::psd_with_spectrum(Vector::LinSpaced(16, 0.1, 3.0), 2);
    const auto op = dense(a);
    for (auto dist : {ProbeDistribution::rademacher, ProbeDistribution::gaussian}) {
      auto stats = monte_carlo(5000, [&](std::uint64_t s) {
        auto cfg = config(2, s);
        cfg.distribution = dist;
        return hutchinson_trace(*op, cfg).value;
      });
      CHECK(std::abs(stats.mean - a.trace()) <= 3.0 * stats.se);
    }
  }
  SUBCASE("orthonormal basis with m = n is exact") {
    const DenseMatrix a = oracle::gaussian(12, 12, 3);
    auto cfg = config(12, 4);
    cfg.orthonormal_basis = true;
    CHECK(oracle::rel_diff(hutchinson_trace(*dense(a), cfg).value, a.trace()) <= 1e-12);
  }
}

TEST_CASE("one-sided trace on a linear model") {
  const DenseMatrix x = oracle::gaussian(6, 4, 1);
  DenseJacobian ctx(x);
  const double exact = x.squaredNorm();
  for (auto mode : {AdMode::reverse, AdMode::forward}) {
    for (bool orth : {false, true}) {
      CAPTURE(orth);
      auto stats = monte_carlo(2000, [&](std::uint64_t s) {
        auto cfg = config(2, s);
        cfg.orthogonalize_probes = orth;
        return one_sided_trace(ctx, mode, cfg).value;
      });
      CHECK(std::abs(stats.mean - exact) <= 3.0 * stats.se);
    }
  }
}

TEST_CASE("one-sided trace is exact once the sketch spans the probe space") {
  const DenseMatrix x = oracle::gaussian(6, 4, 2);
  DenseJacobian ctx(x);
  // forward: d = 4 <= m/2; reverse: d = 6 <= m/2
  CHECK(oracle::rel_diff(one_sided_trace(ctx, AdMode::forward, config(8, 1)).value,
                         x.squaredNorm()) <= 1e-10);
  CHECK(oracle::rel_diff(one_sided_trace(ctx, AdMode::reverse, config(13, 1)).value,
                         x.squaredNorm()) <= 1e-10);
}

TEST_CASE("one-sided trace uses one AD mode and m calls") {
  const ModelConfig model = GruConfig{.input_dim = 2, .hidden_dim = 3, .timesteps = 3, .batch = 2};
  const auto ctx = make_context(model, init_params(model, 1), make_inputs(model, 2));
  for (Index m : {2, 7, 20}) {
    for (bool orth : {false, true}) {
      auto cfg = config(m, 3);
      cfg.orthogonalize_probes = orth;
      const auto r = one_sided_trace(*ctx, AdMode::reverse, cfg);
      CHECK(r.jvp_calls == 0);
      CHECK(r.vjp_calls == static_cast<std::uint64_t>(m));
      CHECK(r.matvec_cost == 0.5 * static_cast<double>(m));
      const auto f = one_sided_trace(*ctx, AdMode::forward, cfg);
      CHECK(f.vjp_calls == 0);
      CHECK(f.jvp_calls == static_cast<std::uint64_t>(m));
    }
  }
  CHECK_THROWS_AS(one_sided_trace(*ctx, AdMode::forward, config(1, 0)), std::invalid_argument);
}

TEST_CASE("product estimator by exhaustive enumeration") {
  DenseMatrix j[4];
  for (int i = 0; i < 4; ++i) j[i] = oracle::gaussian(3, 2, 10 + i);
  DenseJacobian c1(j[0]), c2(j[1]), c3(j[2]), c4(j[3]);
  const ContextQuad quad{&c1, &c2, &c3, &c4};
  const double exact =
      (j[0] * j[1].transpose() * j[3] * j[2].transpose()).trace();

  const auto [u, v] = all_pairs(3);
  REQUIRE(u.cols() == 64);
  CHECK(std::abs(prop1_samples(quad, AdMode::reverse, u, v).mean() - exact) <=
        1e-12 * std::abs(exact));
  const auto [p, q] = all_pairs(2);
  CHECK(std::abs(prop1_samples(quad, AdMode::forward, p, q).mean() - exact) <=
        1e-12 * std::abs(exact));
}

TEST_CASE("product estimator with equal factors gives the squared norm") {
  const DenseMatrix j = oracle::gaussian(4, 3, 3);
  DenseJacobian c(j);
  const ContextQuad quad{&c, &c, &c, &c};
  const DenseMatrix k = j * j.transpose();
  const auto [u, v] = all_pairs(4);
  CHECK(oracle::rel_diff(prop1_samples(quad, AdMode::reverse, u, v).mean(), k.squaredNorm()) <=
        1e-12);
  const auto [p, q] = all_pairs(3);
  CHECK(oracle::rel_diff(prop1_samples(quad, AdMode::forward, p, q).mean(), k.squaredNorm()) <=
        1e-12);
}

TEST_CASE("product estimator with a zero factor") {
  DenseJacobian zero(DenseMatrix::Zero(3, 2));
  DenseJacobian j(oracle::gaussian(3, 2, 1));
  const auto [u, v] = all_pairs(3);
  CHECK(prop1_samples({&j, &zero, &j, &j}, AdMode::reverse, u, v).isZero(0.0));
  CHECK(prop1_product_trace({&j, &j, &zero, &j}, AdMode::forward, config(10, 1)).value == 0.0);
}

TEST_CASE("product estimator is unbiased and mode pure") {
  DenseMatrix j[4];
  for (int i = 0; i < 4; ++i) j[i] = oracle::gaussian(5, 4, 20 + i);
  DenseJacobian c1(j[0]), c2(j[1]), c3(j[2]), c4(j[3]);
  const double exact = (j[0] * j[1].transpose() * j[3] * j[2].transpose()).trace();
  for (auto mode : {AdMode::reverse, AdMode::forward}) {
    auto stats = monte_carlo(3000, [&](std::uint64_t s) {
      return prop1_product_trace({&c1, &c2, &c3, &c4}, mode, config(1, s)).value;
    });
    CHECK(std::abs(stats.mean - exact) <= 3.0 * stats.se);
  }
  const auto r = prop1_product_trace({&c1, &c2, &c3, &c4}, AdMode::reverse, config(40, 1));
  CHECK(r.jvp_calls == 0);
  CHECK(r.vjp_calls > 0);
  const auto f = prop1_product_trace({&c1, &c2, &c3, &c4}, AdMode::forward, config(40, 1));
  CHECK(f.vjp_calls == 0);
  CHECK(f.jvp_calls > 0);
  DenseJacobian wrong(DenseMatrix::Zero(6, 4));
  CHECK_THROWS_AS(prop1_product_trace({&c1, &c2, &c3, &wrong}, AdMode::reverse, config(4, 1)),
                  std::invalid_argument);
}

TEST_CASE("frobenius norm") {
  const DenseMatrix x = oracle::gaussian(6, 4, 1);
  const auto op = oracle::linear_ntk(x);
  const double exact = (x * x.transpose()).squaredNorm();
  // sketch width clamps to n = 6, which makes Hutch++ exact
  CHECK(oracle::rel_diff(frobenius_norm_sq(op, config(30, 1), MetricMethod::hutchpp).value, exact) <=
        1e-10);
  for (auto method : {MetricMethod::one_sided_reverse, MetricMethod::one_sided_forward}) {
    auto stats = monte_carlo(2000, [&](std::uint64_t s) {
      return frobenius_norm_sq(op, config(1, s), method).value;
    });
    CHECK(std::abs(stats.mean - exact) <= 3.0 * stats.se);
  }
  const auto zero = oracle::linear_ntk(DenseMatrix::Zero(5, 2));
  CHECK(frobenius_norm_sq(zero, config(9, 1), MetricMethod::hutchpp).value == 0.0);
}

TEST_CASE("frobenius norm of a rank-one kernel is the squared trace") {
  const DenseMatrix u = oracle::gaussian(20, 1, 4);
  const auto op = oracle::linear_ntk(u);
  const double tr = hutchpp_trace(*op, config(6, 1)).value;
  const double norm = frobenius_norm_sq(op, config(6, 1), MetricMethod::hutchpp).value;
  CHECK(oracle::rel_diff(norm, tr * tr) <= 1e-10);
}

TEST_CASE("self-alignment is one") {
  const ModelConfig model = MlpConfig{.input_dim = 3, .hidden_dim = 5, .num_layers = 3, .batch = 4};
  ContextPtr ctx = make_context(model, init_params(model, 1), make_inputs(model, 2));
  const auto op = std::make_shared<const NtkOperator>(ctx);
  for (auto method :
       {MetricMethod::hutchpp, MetricMethod::one_sided_reverse, MetricMethod::one_sided_forward}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto rec = alignment(op, op, config(9, seed), method);
      CHECK(std::abs(rec.value - 1.0) <= 1e-10);
    }
  }
}

TEST_CASE("alignment of two linear kernels") {
  const DenseMatrix x = oracle::gaussian(8, 3, 1);
  const DenseMatrix y = oracle::gaussian(8, 3, 2);
  const DenseMatrix kx = x * x.transpose();
  const DenseMatrix ky = y * y.transpose();
  const double exact = (kx * ky).trace() / (kx.norm() * ky.norm());
  const auto a = oracle::linear_ntk(x);
  const auto b = oracle::linear_ntk(y);
  const auto rec = alignment(a, b, config(30, 1), MetricMethod::hutchpp);
  CHECK(oracle::rel_diff(rec.value, exact) <= 1e-10);
  CHECK(rec.clamped == rec.value);
  for (auto method : {MetricMethod::one_sided_reverse, MetricMethod::one_sided_forward}) {
    const auto est = alignment(a, b, config(4000, 3), method);
    CHECK(std::abs(est.value - exact) <= 0.1);
  }
}

TEST_CASE("kernels with orthogonal ranges are not aligned") {
  DenseMatrix x = DenseMatrix::Zero(5, 2), y = DenseMatrix::Zero(5, 2);
  x.row(0) << 1.0, 2.0;
  y.row(1) << -3.0, 0.5;
  const auto rec =
      alignment(oracle::linear_ntk(x), oracle::linear_ntk(y), config(9, 1), MetricMethod::hutchpp);
  CHECK(std::abs(rec.value) <= 1e-14);
  CHECK_THROWS_AS(alignment(oracle::linear_ntk(x), oracle::linear_ntk(DenseMatrix::Ones(4, 2)),
                            config(9, 1), MetricMethod::hutchpp),
                  std::invalid_argument);
}

TEST_CASE("effective rank") {
  SUBCASE("rank one") {
    const auto op = oracle::linear_ntk(oracle::gaussian(12, 1, 1));
    CHECK(std::abs(effective_rank(op, config(6, 1), MetricMethod::hutchpp).value - 1.0) <= 1e-10);
  }
  SUBCASE("identity") {
    const auto op = oracle::linear_ntk(DenseMatrix::Identity(16, 16));
    CHECK(std::abs(effective_rank(op, config(48, 1), MetricMethod::hutchpp).value - 16.0) <= 1e-10);
  }
  SUBCASE("diag(1, 1, 0, 0)") {
    DenseMatrix j = DenseMatrix::Zero(4, 4);
    j(0, 0) = j(1, 1) = 1.0;
    const auto op = oracle::linear_ntk(j);
    const auto rec = effective_rank(op, config(9, 1), MetricMethod::hutchpp);
    CHECK(std::abs(rec.value - 2.0) <= 1e-12);
    CHECK(rec.clamped == rec.value);
    CHECK_FALSE(rec.was_clamped);
  }
  SUBCASE("zero kernel is degenerate") {
    const auto op = oracle::linear_ntk(DenseMatrix::Zero(4, 2));
    CHECK_THROWS_AS(effective_rank(op, config(9, 1), MetricMethod::hutchpp), DegenerateKernelError);
  }
  SUBCASE("one-sided effective rank converges") {
    const DenseMatrix x = oracle::gaussian(10, 4, 3);
    const DenseMatrix k = x * x.transpose();
    const double exact = k.trace() * k.trace() / k.squaredNorm();
    const auto op = oracle::linear_ntk(x);
    for (auto method : {MetricMethod::one_sided_reverse, MetricMethod::one_sided_forward}) {
      CHECK(std::abs(effective_rank(op, config(4000, 2), method).value - exact) <= 0.05 * exact);
    }
  }
}

TEST_CASE("metric records report AD cost") {
  const ModelConfig model = MlpConfig{.input_dim = 2, .hidden_dim = 3, .num_layers = 2, .batch = 3};
  ContextPtr ctx = make_context(model, init_params(model, 1), make_inputs(model, 2));
  const auto op = std::make_shared<const NtkOperator>(ctx);
  const auto norm = frobenius_norm_sq(op, config(6, 1), MetricMethod::hutchpp);
  // each product matvec is two NTK applications
  CHECK(norm.matvec_cost == 12.0);
  const auto rev = effective_rank(op, config(5, 1), MetricMethod::one_sided_reverse);
  CHECK(rev.jvp_calls == 0);
  const auto fwd = alignment(op, op, config(5, 1), MetricMethod::one_sided_forward);
  CHECK(fwd.vjp_calls == 0);
}

TEST_CASE("names") {
  for (auto e : {Estimator::hutchpp, Estimator::hutchinson, Estimator::rhutch, Estimator::fhutch,
                 Estimator::prop1_reverse, Estimator::prop1_forward}) {
    CHECK(parse_estimator(to_string(e)) == e);
  }
  CHECK(parse_estimator("prop1") == Estimator::prop1_reverse);
  CHECK_THROWS_AS(parse_estimator("xtrace"), std::invalid_argument);
  CHECK(split_preset("sixth") == kSixthSplit);
  CHECK_THROWS_AS(split_preset("half"), std::invalid_argument);
}
