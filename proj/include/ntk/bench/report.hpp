#pragma once

#include "ntk/bench/sweep.hpp"

#include <filesystem>
#include <string>

namespace ntk::bench {

inline constexpr const char* kCsvHeader =
    "estimator,m,seed,estimate,exact,rel_error,matvec_cost,jvp_calls,vjp_calls,wall_time_s";

struct CsvOptions {
  /// Writes 0 for wall_time_s so that reruns produce identical bytes.
  bool redact_timing = false;
};

/// One row per (estimator, m, seed), LF line endings. Throws
/// std::invalid_argument for a result without rows.
std::string format_csv(const SweepResult& result, const CsvOptions& options = {});
/// Per-(estimator, m) percentiles plus the exact baseline.
std::string format_summary_csv(const SweepResult& result);
/// Fastest estimator per accuracy level with its speedup over the exact pass.
std::string format_speedup_csv(const SweepResult& result);
/// Log-log median relative error against median wall time, one curve per
/// estimator, with a p25-p75 error band. Static SVG, no script.
std::string format_svg(const SweepResult& result);

/// Write the strings above; throw IoError when the file cannot be written.
void emit_csv(const SweepResult& result, const std::filesystem::path& path,
              const CsvOptions& options = {});
void emit_svg(const SweepResult& result, const std::filesystem::path& path);

/// <dir>/<name>.csv, <name>_summary.csv, <name>_speedup.csv and <name>.svg.
void emit_all(const SweepResult& result, const std::filesystem::path& dir,
              const CsvOptions& options = {});

}  // namespace ntk::bench
