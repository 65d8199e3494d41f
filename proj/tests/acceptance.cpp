// One PASS/FAIL line per acceptance criterion; exits nonzero on any failure.
#include "oracles.hpp"

#include "ntk/autodiff.hpp"
#include "ntk/bench/mnist.hpp"
#include "ntk/bench/presets.hpp"
#include "ntk/bench/sweep.hpp"
#include "ntk/bench/train.hpp"
#include "ntk/estimators.hpp"
#include "ntk/model.hpp"
#include "ntk/ntk_operator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <exception>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace ntk;
using namespace ntk::bench;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

int failures = 0;
std::set<int> selected;  // empty: run everything

void criterion(int id, const char* title, const std::function<void(Outcome&)>& body) {
  if (!selected.empty() && !selected.count(id)) return;
  Outcome out;
  const auto start = std::chrono::steady_clock::now();
  try {
    body(out);
  } catch (const std::exception& e) {
    out.pass = false;
    out.detail << "[exception: " << e.what() << "] ";
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!out.pass) ++failures;
  std::printf("%s %d %s: %s(%.1f s)\n", out.pass ? "PASS" : "FAIL", id, title,
              out.detail.str().c_str(), secs);
  std::fflush(stdout);
}

EstimatorConfig est_config(Index m, std::uint64_t seed) {
  EstimatorConfig cfg;
  cfg.m = m;
  cfg.seed = seed;
  return cfg;
}

std::shared_ptr<const JacobianContext> model_context(const ModelConfig& config, std::uint64_t seed) {
  return make_context(config, init_params(config, derive_seed(seed, 0)),
                      make_inputs(config, derive_seed(seed, 1)));
}

double median(std::vector<double> xs) { return percentile(std::move(xs), 0.5); }

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return sxy / sxx;
}

/// Best median error reachable within `budget` seconds of median wall time.
double best_error_within(const SweepResult& r, Estimator e, double budget) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : r.curves) {
    if (c.estimator == e && c.wall_time.median <= budget) best = std::min(best, c.rel_error.median);
  }
  return best;
}

double slowest(const SweepResult& r, Estimator e) {
  double t = 0.0;
  for (const auto& c : r.curves) {
    if (c.estimator == e) t = std::max(t, c.wall_time.median);
  }
  return t;
}

/// Closed-form NTK of the two-layer classifier h = W2 tanh(W1 x + b1) + b2,
/// indexed (sample, output) with the output fastest.
DenseMatrix two_layer_ntk(const ParamVector& params, const DenseMatrix& x) {
  const auto t = unflatten(params);
  const DenseMatrix& w1 = t[0].value;
  const Vector b1 = t[1].value.col(0);
  const DenseMatrix& w2 = t[2].value;
  const Index batch = x.rows();
  const Index out = w2.rows();
  const DenseMatrix z = (w1 * x.transpose()).colwise() + b1;
  const DenseMatrix s = z.array().tanh().matrix();
  const DenseMatrix d = (1.0 - s.array().square()).matrix();
  const DenseMatrix xx = (x * x.transpose()).array() + 1.0;
  const DenseMatrix ss = (s.transpose() * s).array() + 1.0;
  DenseMatrix k(batch * out, batch * out);
  for (Index a = 0; a < batch; ++a) {
    for (Index b = 0; b < batch; ++b) {
      const DenseMatrix mid = w2 * d.col(a).cwiseProduct(d.col(b)).asDiagonal() * w2.transpose();
      k.block(a * out, b * out, out, out) = xx(a, b) * mid;
      k.block(a * out, b * out, out, out).diagonal().array() += ss(a, b);
    }
  }
  return k;
}

void parameter_counts(Outcome& o) {
  const Index mlp = param_count(find_preset("mlp-fig2").model);
  const Index gru = param_count(find_preset("gru-fig3").model);
  o.detail << "mlp P=" << mlp << ", gru P=" << gru << " ";
  o.require(mlp == 64704, "mlp P == 64704");
  o.require(gru == 14592, "gru P == 14592");
}

void state_sizes(Outcome& o) {
  const Index mlp = state_dim(find_preset("mlp-fig2").model);
  const Index gru = state_dim(find_preset("gru-fig3").model);
  const Index mnist = state_dim(find_preset("mnist-fig4").model);
  o.detail << "n=" << mlp << "/" << gru << "/" << mnist << " ";
  o.require(mlp == 3200, "mlp n == 3200");
  o.require(gru == 48000, "gru n == 48000");
  o.require(mnist == 5120, "mnist n == 5120");
}

void ad_correctness(Outcome& o) {
  for (const char* name : {"mlp-fig2-tiny", "gru-fig3-tiny"}) {
    const ModelConfig& config = find_preset(name).model;
    const auto params = init_params(config, 1);
    const auto inputs = make_inputs(config, 2);
    const auto ctx = make_context(config, params, inputs);
    const Index n = ctx->state_dim();
    const Index p = ctx->param_dim();
    double worst_adjoint = 0.0;
    for (std::uint64_t k = 0; k < 100; ++k) {
      const Vector tp = oracle::gaussian_vector(p, 100 + 2 * k);
      const Vector v = oracle::gaussian_vector(n, 101 + 2 * k);
      const Vector jp = ctx->jvp(tp);
      const Vector jtv = ctx->vjp(v);
      const double lhs = jp.dot(v);
      const double rhs = tp.dot(jtv);
      const double scale = std::max(jp.norm() * v.norm(), tp.norm() * jtv.norm());
      worst_adjoint = std::max(worst_adjoint, std::abs(lhs - rhs) / scale);
    }
    double worst_fd = 0.0;
    for (std::uint64_t k = 0; k < 10; ++k) {
      const Vector tp = oracle::gaussian_vector(p, 500 + k);
      const Vector fd = oracle::fd_directional(config, params, inputs, tp, 1e-5);
      worst_fd = std::max(worst_fd, oracle::rel_diff(ctx->jvp(tp), fd));
    }
    o.detail << name << " adjoint " << worst_adjoint << " fd " << worst_fd << "; ";
    o.require(worst_adjoint <= 1e-10, std::string(name) + " adjoint <= 1e-10");
    o.require(worst_fd <= 1e-5, std::string(name) + " fd <= 1e-5");
  }
}

void oracle_equivalence(Outcome& o) {
  const std::vector<std::pair<std::string, ModelConfig>> models = {
      {"mlp", find_preset("mlp-fig2-tiny").model},
      {"gru", GruConfig{.input_dim = 2, .hidden_dim = 8, .timesteps = 4, .batch = 4}}};
  for (const auto& [name, config] : models) {
    const ContextPtr ctx = model_context(config, 3);
    const auto op = std::make_shared<const NtkOperator>(ctx);
    const Index n = op->dim();
    const Index p = ctx->param_dim();
    const double exact = exact_trace(*op);
    const double dense = dense_ntk(*op).trace();
    const double dense_err = oracle::rel_diff(dense, exact);

    EstimatorConfig full = est_config(3 * n, 4);
    const double hpp = oracle::rel_diff(hutchpp_trace(*op, full).value, exact);
    EstimatorConfig ortho = est_config(n, 5);
    ortho.orthonormal_basis = true;
    const double hutch = oracle::rel_diff(hutchinson_trace(*op, ortho).value, exact);
    const double rev =
        oracle::rel_diff(one_sided_trace(*ctx, AdMode::reverse, est_config(2 * n, 6)).value, exact);
    const double fwd =
        oracle::rel_diff(one_sided_trace(*ctx, AdMode::forward, est_config(2 * p, 7)).value, exact);
    o.detail << name << " n=" << n << ": dense " << dense_err << ", hutch++ " << hpp
             << ", hutchinson " << hutch << ", rhutch " << rev << ", fhutch " << fwd << "; ";
    o.require(n <= 256, name + " n <= 256");
    o.require(dense_err <= 1e-12, name + " dense trace");
    o.require(hpp <= 1e-9, name + " hutch++");
    o.require(hutch <= 1e-9, name + " hutchinson orthonormal basis");
    o.require(rev <= 1e-9, name + " rhutch full basis");
    o.require(fwd <= 1e-9, name + " fhutch full basis");
  }
}

void unbiasedness(Outcome& o) {
  constexpr int kSeeds = 5000;
  auto within = [&](const std::string& name, double exact, auto&& sample) {
    std::vector<double> xs;
    xs.reserve(kSeeds);
    for (int s = 0; s < kSeeds; ++s) xs.push_back(sample(static_cast<std::uint64_t>(s)));
    const auto ms = oracle::mean_se(xs);
    const double z = std::abs(ms.mean - exact) / ms.se;
    o.detail << name << " z=" << z << ", ";
    o.require(z <= 3.0, name + " within 3 SE");
  };

  const DenseMatrix a = oracle::gaussian(16, 16, 41);
  const DenseOperator op(a);
  within("hutchinson", a.trace(),
         [&](std::uint64_t s) { return hutchinson_trace(op, est_config(4, s)).value; });

  const DenseMatrix j = oracle::gaussian(16, 12, 42);
  const DenseJacobian ctx(j);
  const double jj = j.squaredNorm();
  for (auto mode : {AdMode::reverse, AdMode::forward}) {
    within(mode == AdMode::reverse ? "one-sided reverse" : "one-sided forward", jj,
           [&](std::uint64_t s) {
             EstimatorConfig cfg = est_config(4, s);
             cfg.orthogonalize_probes = false;
             return one_sided_trace(ctx, mode, cfg).value;
           });
  }

  std::deque<DenseJacobian> js;
  for (std::uint64_t k = 0; k < 4; ++k) js.emplace_back(oracle::gaussian(16, 16, 43 + k));
  const ContextQuad quad{&js[0], &js[1], &js[2], &js[3]};
  const double target = (js[0].matrix() * js[1].matrix().transpose() * js[3].matrix() *
                         js[2].matrix().transpose())
                            .trace();
  for (auto mode : {AdMode::reverse, AdMode::forward}) {
    within(mode == AdMode::reverse ? "prop1 reverse" : "prop1 forward", target,
           [&](std::uint64_t s) { return prop1_product_trace(quad, mode, est_config(4, s)).value; });
  }

  // every (u, v) pair of sign vectors on a 3-dimensional probe space
  DenseMatrix signs(3, 8);
  for (Index k = 0; k < 8; ++k) {
    for (Index i = 0; i < 3; ++i) signs(i, k) = (k >> i) & 1 ? 1.0 : -1.0;
  }
  DenseMatrix first(3, 64), second(3, 64);
  for (Index k = 0; k < 64; ++k) {
    first.col(k) = signs.col(k / 8);
    second.col(k) = signs.col(k % 8);
  }
  std::deque<DenseJacobian> small;
  for (std::uint64_t k = 0; k < 4; ++k) small.emplace_back(oracle::gaussian(3, 3, 60 + k));
  const ContextQuad q3{&small[0], &small[1], &small[2], &small[3]};
  const double t3 = (small[0].matrix() * small[1].matrix().transpose() * small[3].matrix() *
                     small[2].matrix().transpose())
                        .trace();
  for (auto mode : {AdMode::reverse, AdMode::forward}) {
    const double mean = prop1_samples(q3, mode, first, second).mean();
    const double err = oracle::rel_diff(mean, t3);
    o.detail << (mode == AdMode::reverse ? "enum reverse " : "enum forward ") << err << " ";
    o.require(err <= 1e-12, "exhaustive enumeration");
  }
}

void variance_scaling(Outcome& o) {
  constexpr Index kDim = 512;
  constexpr int kSeeds = 200;
  Vector spectrum(kDim);
  for (Index i = 0; i < kDim; ++i) spectrum(i) = std::pow(static_cast<double>(i + 1), -1.5);
  const DenseOperator op(oracle::psd_with_spectrum(spectrum, 71));
  const double exact = spectrum.sum();
  const std::vector<double> budgets = {24, 48, 96, 192, 384};
  std::vector<double> hpp, hutch;
  for (double m : budgets) {
    std::vector<double> e1, e2;
    for (int s = 0; s < kSeeds; ++s) {
      const auto cfg = est_config(static_cast<Index>(m), 1000 + s);
      e1.push_back(std::abs(hutchpp_trace(op, cfg).value - exact) / exact);
      e2.push_back(std::abs(hutchinson_trace(op, cfg).value - exact) / exact);
    }
    hpp.push_back(median(e1));
    hutch.push_back(median(e2));
  }
  const double s1 = loglog_slope(budgets, hpp);
  const double s2 = loglog_slope(budgets, hutch);
  o.detail << "hutch++ slope " << s1 << ", hutchinson slope " << s2 << " ";
  o.require(s1 <= -0.8, "hutch++ slope <= -0.8");
  o.require(s2 >= -0.7 && s2 <= -0.3, "hutchinson slope in [-0.7, -0.3]");
}

SweepResult mlp_fig2_hutchpp() {
  ExperimentSpec spec;
  spec.name = "mlp-fig2";
  spec.model = find_preset("mlp-fig2").model;
  spec.sweeps = {{Estimator::hutchpp, {600}}};
  spec.repeats = 50;
  return run_trace_sweep(spec);
}

void mode_purity(Outcome& o) {
  for (const auto& preset : presets()) {
    for (auto mode : {AdMode::reverse, AdMode::forward}) {
      const auto ctx = model_context(preset.model, 9);
      const auto r = one_sided_trace(*ctx, mode, est_config(6, 1));
      const bool pure = mode == AdMode::reverse
                            ? ctx->jvp_calls() == 0 && ctx->vjp_calls() == 6
                            : ctx->vjp_calls() == 0 && ctx->jvp_calls() == 6;
      o.require(pure && r.jvp_calls == ctx->jvp_calls() && r.vjp_calls == ctx->vjp_calls(),
                preset.name + (mode == AdMode::reverse ? " rhutch" : " fhutch"));
    }
  }
  o.detail << presets().size() << " presets ";
}

void mode_ordering(Outcome& o) {
  auto sweep = [](const ModelConfig& model) {
    ExperimentSpec spec;
    spec.model = model;
    spec.sweeps = {{Estimator::rhutch, {10, 25, 50, 100}}, {Estimator::fhutch, {10, 25, 50, 100}}};
    spec.repeats = 50;
    return run_trace_sweep(spec);
  };
  auto compare = [&](const char* name, const SweepResult& r, bool reverse_wins) {
    const double budget = std::min(slowest(r, Estimator::rhutch), slowest(r, Estimator::fhutch));
    const double rev = best_error_within(r, Estimator::rhutch, budget);
    const double fwd = best_error_within(r, Estimator::fhutch, budget);
    o.detail << name << " at " << budget << " s: rhutch " << rev << ", fhutch " << fwd << "; ";
    o.require(reverse_wins ? rev <= fwd : fwd <= rev, std::string(name) + " ordering");
  };
  const auto& gru = find_preset("gru-fig3-tiny").model;
  o.require(param_count(gru) < state_dim(gru), "gru-fig3-tiny keeps P < n");
  compare("mlp-fig2", sweep(find_preset("mlp-fig2").model), true);
  compare("gru-fig3-tiny", sweep(gru), false);
}

void metric_correctness(Outcome& o) {
  const ModelConfig mlp = find_preset("mlp-fig2-tiny").model;
  const auto op = std::make_shared<const NtkOperator>(model_context(mlp, 11));
  double worst_self = 0.0;
  for (auto method :
       {MetricMethod::hutchpp, MetricMethod::one_sided_reverse, MetricMethod::one_sided_forward}) {
    worst_self = std::max(worst_self, std::abs(alignment(op, op, est_config(30, 2), method).value - 1.0));
  }
  o.detail << "self-alignment " << worst_self << ", ";
  o.require(worst_self <= 1e-10, "alignment(op, op) == 1");

  DenseMatrix diag = DenseMatrix::Zero(4, 4);
  diag(0, 0) = diag(1, 1) = 1.0;
  const auto diag_op = oracle::linear_ntk(diag);
  const double er = effective_rank(diag_op, est_config(12, 3), MetricMethod::hutchpp).value;
  o.detail << "effrank(diag(1,1,0,0)) " << er << ", ";
  o.require(std::abs(er - 2.0) <= 1e-12, "effective rank of diag(1,1,0,0)");

  // tiny trained-vs-untrained classifier on synthetic digits
  const auto& config = std::get<MlpConfig>(find_preset("mnist-fig4-tiny").model);
  const auto data = synthetic_mnist(2000 + config.batch, 12);
  TrainConfig tc;
  tc.seed = 13;
  const auto trained = train_mnist_mlp(config, data.slice(0, 2000), tc);
  const auto held_out = data.slice(2000, config.batch);
  const DenseMatrix x = held_out.images;
  auto kernel = [&](const ParamVector& p) {
    return std::make_shared<const NtkOperator>(
        ContextPtr(make_context(config, p, held_out.inputs(0, config.batch))));
  };
  const auto k0 = kernel(trained.initial);
  const auto kf = kernel(trained.final);
  const DenseMatrix d0 = two_layer_ntk(trained.initial, x);
  const DenseMatrix df = two_layer_ntk(trained.final, x);
  const double oracle_err = oracle::rel_diff(dense_ntk(*kf), df);
  o.detail << "closed-form kernel " << oracle_err << ", ";
  o.require(oracle_err <= 1e-10, "closed-form NTK matches operator");

  const double exact_norm = df.squaredNorm();
  const double exact_align = (d0 * df).trace() / (d0.norm() * df.norm());
  const double exact_effrank = df.trace() * df.trace() / df.squaredNorm();
  std::vector<double> e_trace, e_norm, e_align, e_effrank;
  for (std::uint64_t s = 0; s < 50; ++s) {
    auto cfg = est_config(60, 2000 + s);
    cfg.split = kSixthSplit;
    e_trace.push_back(oracle::rel_diff(hutchpp_trace(*kf, cfg).value, df.trace()));
    e_norm.push_back(
        oracle::rel_diff(frobenius_norm_sq(kf, cfg, MetricMethod::hutchpp).value, exact_norm));
    e_align.push_back(
        oracle::rel_diff(alignment(k0, kf, cfg, MetricMethod::hutchpp).value, exact_align));
    e_effrank.push_back(
        oracle::rel_diff(effective_rank(kf, cfg, MetricMethod::hutchpp).value, exact_effrank));
  }
  const double mn = median(e_norm), ma = median(e_align), me = median(e_effrank);
  o.detail << "n=" << state_dim(config) << " alignment " << exact_align << "; median rel err norm "
           << mn << ", alignment " << ma << ", effrank " << me << " (trace " << median(e_trace)
           << ") ";
  o.require(mn <= 1e-2, "norm within 1e-2");
  o.require(ma <= 1e-2, "alignment within 1e-2");
  o.require(me <= 1e-2, "effective rank within 1e-2");
}

}  // namespace

/// Optional arguments select criteria by number, e.g. `acceptance 7 11`.
int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  criterion(1, "parameter-count fidelity", parameter_counts);
  criterion(2, "state-size fidelity", state_sizes);
  criterion(3, "AD correctness", ad_correctness);
  criterion(4, "oracle equivalence", oracle_equivalence);
  criterion(5, "unbiasedness", unbiasedness);
  criterion(6, "variance scaling", variance_scaling);

  SweepResult fig2;
  criterion(7, "mlp-fig2 Hutch++ accuracy at 600 matvecs", [&](Outcome& o) {
    fig2 = mlp_fig2_hutchpp();
    const double med = fig2.curves.at(0).rel_error.median;
    o.detail << "exact " << fig2.exact << ", median rel err " << med << " ";
    o.require(med <= 1e-4, "median relative error <= 1e-4");
  });
  criterion(8, "mode purity", mode_purity);
  criterion(9, "RHutch/FHutch ordering at equal wall time", mode_ordering);
  criterion(10, "metric correctness", metric_correctness);
  criterion(11, "Hutch++ faster than the exact trace", [&](Outcome& o) {
    if (fig2.curves.empty()) fig2 = mlp_fig2_hutchpp();
    const double t = fig2.curves.at(0).wall_time.median;
    o.detail << "hutch++ " << t << " s, exact " << fig2.exact_wall_time << " s, speedup "
             << fig2.exact_wall_time / t << "x ";
    o.require(t < fig2.exact_wall_time, "hutch++ wall time < exact wall time");
  });

  std::printf("%s: %d criteria failed\n", failures == 0 ? "PASS" : "FAIL", failures);
  return failures == 0 ? 0 : 1;
}
