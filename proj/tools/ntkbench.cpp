// ntkbench: NTK trace and metric estimation experiments from the command line.

#include "ntk/autodiff.hpp"
#include "ntk/errors.hpp"
#include "ntk/bench/mnist.hpp"
#include "ntk/bench/presets.hpp"
#include "ntk/bench/report.hpp"
#include "ntk/bench/sweep.hpp"
#include "ntk/bench/train.hpp"
#include "ntk/estimators.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace ntk;
using namespace ntk::bench;

struct Options {
  std::string model;
  std::string preset;
  std::vector<Index> budgets;
  int repeats = 0;  // 0: command default
  std::uint64_t seed = 0;
  std::uint64_t model_seed = 0;
  std::vector<std::string> estimators;
  std::string probes = "rademacher";
  std::string split = "canonical";
  std::string out;
  std::string init = "torch_default";
  std::string normalize = "estimate";
  bool exact = false;
  bool allow_large_exact = false;
  bool no_orthogonalize = false;
  bool redact_timing = false;

  // MNIST
  std::string data_dir = "data/mnist";
  bool synthetic = false;
  int epochs = 3;
  double lr = 0.1;
  Index batch_size = 64;
  Index train_count = 0;  // 0: whole training split
};

const Preset& resolve_preset(const Options& o, std::string_view fallback) {
  std::string name = o.preset;
  if (name.empty()) {
    if (o.model == "mlp") name = "mlp-fig2";
    else if (o.model == "gru") name = "gru-fig3";
    else name = fallback;
  }
  const Preset& p = find_preset(name);
  const bool is_gru = std::holds_alternative<GruConfig>(p.model);
  if ((o.model == "mlp" && is_gru) || (o.model == "gru" && !is_gru)) {
    throw std::invalid_argument("preset '" + name + "' is not a " + o.model + " model");
  }
  return p;
}

bool is_mnist(const Preset& p) { return p.name.rfind("mnist", 0) == 0; }

double parse_split(const std::string& s) {
  if (s == "canonical" || s == "sixth") return split_preset(s);
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size() || !(v > 0.0 && v < 1.0)) {
    throw std::invalid_argument("--split must be in (0, 1) or canonical/sixth, got " + s);
  }
  return v;
}

std::vector<Index> default_budgets(Index n, std::vector<Index> candidates) {
  std::vector<Index> out;
  for (Index m : candidates) {
    if (m < n) out.push_back(m);
  }
  if (out.empty()) out.push_back(std::max<Index>(3, n / 2));
  return out;
}

ExperimentSpec make_spec(const Options& o, const Preset& preset, Quantity q,
                         std::vector<std::string> default_estimators,
                         std::vector<Index> default_m, int default_repeats) {
  ExperimentSpec spec;
  spec.name = preset.name + "_" + std::string(to_string(q));
  spec.model = preset.model;
  spec.quantity = q;
  spec.repeats = o.repeats > 0 ? o.repeats : default_repeats;
  spec.seed = o.seed;
  spec.model_seed = o.model_seed;
  spec.init = parse_init_scheme(o.init);
  spec.distribution = parse_probe_distribution(o.probes);
  spec.split = parse_split(o.split);
  spec.orthogonalize_probes = !o.no_orthogonalize;
  if (o.normalize == "estimate") spec.normalization = ErrorNormalization::estimate;
  else if (o.normalize == "exact") spec.normalization = ErrorNormalization::exact;
  else throw std::invalid_argument("--normalize must be estimate or exact");
  spec.allow_large_exact = o.allow_large_exact;

  const auto names = o.estimators.empty() ? default_estimators : o.estimators;
  const auto budgets = o.budgets.empty() ? default_budgets(state_dim(preset.model), default_m)
                                         : o.budgets;
  for (const auto& name : names) spec.sweeps.push_back({parse_estimator(name), budgets});
  return spec;
}

void print_result(const SweepResult& r) {
  std::printf("%s: n = %lld, exact = %.12g (%.3f s)\n", r.name.c_str(),
              static_cast<long long>(r.dim), r.exact, r.exact_wall_time);
  std::printf("%-14s %7s %12s %12s %12s %11s %9s\n", "estimator", "m", "err_p25", "err_median",
              "err_p75", "time_s", "runtime%");
  for (const auto& p : r.curves) {
    std::printf("%-14s %7lld %12.3e %12.3e %12.3e %11.4f %8.2f%%\n",
                std::string(to_string(p.estimator)).c_str(), static_cast<long long>(p.m),
                p.rel_error.p25, p.rel_error.median, p.rel_error.p75, p.wall_time.median,
                100.0 * p.runtime_fraction);
  }
  for (const auto& s : r.speedups) {
    std::printf("error <= %.0e: %s m=%lld, %.4f s, speedup %.1fx\n", s.threshold,
                std::string(to_string(s.estimator)).c_str(), static_cast<long long>(s.m),
                s.wall_time, s.speedup);
  }
}

void write_outputs(const Options& o, const SweepResult& r) {
  if (o.out.empty()) return;
  emit_all(r, o.out, {o.redact_timing});
  std::printf("wrote %s/%s{.csv,_summary.csv,_speedup.csv,.svg}\n", o.out.c_str(), r.name.c_str());
}

struct MnistRun {
  MlpConfig config;
  TrainResult trained;
  MnistDataset test;
};

MnistRun train_for_preset(const Options& o, const Preset& preset) {
  MnistRun run;
  run.config = std::get<MlpConfig>(preset.model);
  MnistDataset train;
  if (o.synthetic) {
    const Index count = o.train_count > 0 ? o.train_count : 4000;
    train = synthetic_mnist(count + run.config.batch, derive_seed(o.model_seed, 7));
    run.test = train.slice(count, run.config.batch);
    train = train.slice(0, count);
  } else {
    train = load_mnist(o.data_dir, "train");
    if (o.train_count > 0) train = train.slice(0, std::min(o.train_count, train.size()));
    run.test = load_mnist(o.data_dir, "t10k").slice(0, run.config.batch);
  }
  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.lr = o.lr;
  tc.batch_size = o.batch_size;
  tc.seed = o.model_seed;
  tc.init = parse_init_scheme(o.init);
  run.trained = train_mnist_mlp(run.config, train, tc);
  std::printf("trained %s on %lld examples: test accuracy %.2f%% on %lld held-out images\n",
              preset.name.c_str(), static_cast<long long>(train.size()),
              100.0 * accuracy(run.config, run.trained.final, run.test),
              static_cast<long long>(run.test.size()));
  return run;
}

Subject mnist_subject(const MnistRun& run, Quantity q) {
  const StateTensor inputs = run.test.inputs(0, run.test.size());
  auto kernel = [&](const ParamVector& params) {
    ContextPtr ctx = make_context(run.config, params, inputs);
    return std::make_shared<const NtkOperator>(std::move(ctx));
  };
  Subject s;
  s.first = kernel(q == Quantity::alignment ? run.trained.initial : run.trained.final);
  if (q == Quantity::alignment) s.second = kernel(run.trained.final);
  return s;
}

int cmd_trace(const Options& o) {
  const Preset& preset = resolve_preset(o, "mlp-fig2");
  auto spec = make_spec(o, preset, Quantity::trace, {"hutchpp"}, {60}, 1);
  if (o.exact) {
    const auto r = run_trace_sweep(spec);
    print_result(r);
    write_outputs(o, r);
    return 0;
  }
  const Subject subject = make_subject(spec);
  SweepResult r;
  r.name = spec.name;
  r.dim = subject.first->dim();
  r.exact = std::numeric_limits<double>::quiet_NaN();
  for (const auto& s : spec.sweeps) {
    for (Index m : s.budgets) {
      for (int rep = 0; rep < spec.repeats; ++rep) {
        EstimatorConfig cfg;
        cfg.m = m;
        cfg.seed = spec.seed + static_cast<std::uint64_t>(rep);
        cfg.distribution = spec.distribution;
        cfg.split = spec.split;
        cfg.orthogonalize_probes = spec.orthogonalize_probes;
        EstimateRecord rec;
        switch (s.estimator) {
          case Estimator::hutchpp: rec = hutchpp_trace(*subject.first, cfg); break;
          case Estimator::hutchinson: rec = hutchinson_trace(*subject.first, cfg); break;
          case Estimator::rhutch:
            rec = one_sided_trace(subject.first->context(), AdMode::reverse, cfg);
            break;
          case Estimator::fhutch:
            rec = one_sided_trace(subject.first->context(), AdMode::forward, cfg);
            break;
          default: throw std::invalid_argument("prop1 does not estimate tr(NTK); use norm/align/effrank");
        }
        std::printf("%-10s m=%-6lld seed=%-6llu trace=%.12g cost=%g jvp=%llu vjp=%llu time=%.4fs\n",
                    std::string(to_string(rec.estimator)).c_str(), static_cast<long long>(m),
                    static_cast<unsigned long long>(cfg.seed), rec.value, rec.matvec_cost,
                    static_cast<unsigned long long>(rec.jvp_calls),
                    static_cast<unsigned long long>(rec.vjp_calls), rec.wall_time);
        r.rows.push_back({rec.estimator, m, cfg.seed, rec, r.exact, r.exact});
      }
    }
  }
  if (!o.out.empty()) {
    std::filesystem::create_directories(o.out);
    emit_csv(r, std::filesystem::path(o.out) / (r.name + ".csv"), {o.redact_timing});
  }
  return 0;
}

int cmd_bench(const Options& o) {
  const Preset& preset = resolve_preset(o, "mlp-fig2");
  const auto spec = make_spec(o, preset, Quantity::trace, {"hutchpp", "rhutch", "fhutch"},
                              {10, 20, 50, 100, 200, 500, 1000, 2000}, 50);
  const auto r = run_trace_sweep(spec);
  print_result(r);
  if (preset.reference_exact_seconds > 0.0) {
    std::printf("reference exact time: %.2f s (other hardware)\n",
                preset.reference_exact_seconds);
  }
  write_outputs(o, r);
  return 0;
}

int cmd_metric(const Options& o, Quantity q) {
  const Preset& preset = resolve_preset(o, "mlp-fig2-tiny");
  const auto spec = make_spec(o, preset, q, {"hutchpp"}, {15, 30, 60, 120, 240}, 50);
  SweepResult r;
  if (is_mnist(preset)) {
    const auto run = train_for_preset(o, preset);
    r = run_metric_experiment(mnist_subject(run, q), spec);
  } else {
    r = run_metric_experiment(spec);
  }
  print_result(r);
  write_outputs(o, r);
  return 0;
}

int cmd_train(const Options& o) {
  const Preset& preset = resolve_preset(o, "mnist-fig4");
  if (!is_mnist(preset)) throw std::invalid_argument("train-mnist needs an mnist-* preset");
  const auto run = train_for_preset(o, preset);
  const auto& losses = run.trained.step_losses;
  if (!o.out.empty()) {
    std::filesystem::create_directories(o.out);
    std::string csv = "step,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) {
      csv += std::to_string(i) + "," + std::to_string(losses[i]) + "\n";
    }
    const auto path = std::filesystem::path(o.out) / (preset.name + "_train_loss.csv");
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    std::fwrite(csv.data(), 1, csv.size(), f);
    std::fclose(f);
    std::printf("wrote %s\n", path.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Matrix-free estimation of empirical NTK trace, norm, alignment and effective rank"};
  app.set_config("--config", "", "TOML-style file with option values; flags override it");
  app.require_subcommand(1);

  Options o;
  app.add_option("--model", o.model, "Model family")->check(CLI::IsMember({"mlp", "gru"}));
  app.add_option("--preset", o.preset, "Experiment preset (mlp-fig2, mlp-fig2-tiny, gru-fig3, "
                                       "gru-fig3-tiny, mnist-fig4, mnist-fig4-tiny)");
  app.add_option("--m", o.budgets, "Budgets, comma separated")->delimiter(',');
  app.add_option("--repeats", o.repeats, "Seeds per budget")->check(CLI::PositiveNumber);
  app.add_option("--seed", o.seed, "Probe seed of the first repeat");
  app.add_option("--model-seed", o.model_seed, "Seed for parameters and inputs");
  app.add_option("--estimator", o.estimators,
                 "hutchpp, hutchinson, rhutch, fhutch, prop1 (comma separated)")
      ->delimiter(',');
  app.add_option("--probes", o.probes, "Probe distribution")
      ->check(CLI::IsMember({"rademacher", "gaussian"}));
  app.add_option("--split", o.split, "Hutch++ sketch fraction, or canonical / sixth");
  app.add_option("--out", o.out, "Output directory for CSV and SVG files");
  app.add_option("--init", o.init, "Weight initialization")
      ->check(CLI::IsMember({"torch_default", "unit_variance"}));
  app.add_option("--normalize", o.normalize, "Relative error denominator: estimate or exact")
      ->check(CLI::IsMember({"estimate", "exact"}));
  app.add_flag("--exact", o.exact, "Compute the exact baseline for the trace command");
  app.add_flag("--allow-large-exact", o.allow_large_exact,
               "Allow the n-matvec exact baseline above the size cap");
  app.add_flag("--no-orthogonalize", o.no_orthogonalize,
               "Plain Hutchinson probes in the one-sided estimators");
  app.add_flag("--redact-timing", o.redact_timing, "Write 0 for wall times in the row CSV");
  app.add_option("--data", o.data_dir, "Directory with the MNIST IDX files");
  app.add_flag("--synthetic", o.synthetic, "Use the offline synthetic digit stand-in");
  app.add_option("--epochs", o.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  app.add_option("--lr", o.lr, "SGD learning rate");
  app.add_option("--batch-size", o.batch_size, "SGD minibatch size")->check(CLI::PositiveNumber);
  app.add_option("--train-count", o.train_count, "Use only the first N training examples");

  auto* trace = app.add_subcommand("trace", "Estimate tr(NTK); --exact adds the baseline");
  auto* norm = app.add_subcommand("norm", "Sweep estimates of ||NTK||_F^2");
  auto* align = app.add_subcommand("align", "Sweep estimates of kernel alignment");
  auto* effrank = app.add_subcommand("effrank", "Sweep estimates of effective rank");
  auto* bench = app.add_subcommand("bench", "Trace sweep with percentiles and speedups");
  auto* train = app.add_subcommand("train-mnist", "Train the MNIST classifier");
  for (auto* sub : {trace, norm, align, effrank, bench, train}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*trace) return cmd_trace(o);
    if (*norm) return cmd_metric(o, Quantity::frobenius_sq);
    if (*align) return cmd_metric(o, Quantity::alignment);
    if (*effrank) return cmd_metric(o, Quantity::effective_rank);
    if (*bench) return cmd_bench(o);
    if (*train) return cmd_train(o);
  } catch (const std::exception& e) {
    std::cerr << "ntkbench: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
