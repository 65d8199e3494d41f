#include "ntk/bench/report.hpp"

#include "ntk/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace ntk::bench {

namespace {

std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << content;
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

void require_rows(const SweepResult& result) {
  if (result.rows.empty()) throw std::invalid_argument("refusing to write an empty sweep");
}

// Plot helpers. Values are floored so zero errors stay on a log axis.
constexpr double kErrorFloor = 1e-16;
constexpr double kTimeFloor = 1e-6;

struct LogAxis {
  double lo, hi;  // decades
  double pixel_lo, pixel_hi;

  double operator()(double v, double floor) const {
    const double t = (std::log10(std::max(v, floor)) - lo) / (hi - lo);
    return pixel_lo + t * (pixel_hi - pixel_lo);
  }
};

LogAxis make_axis(double vmin, double vmax, double floor, double p0, double p1) {
  double lo = std::floor(std::log10(std::max(vmin, floor)));
  double hi = std::ceil(std::log10(std::max(vmax, floor)));
  if (hi <= lo) hi = lo + 1;
  return {lo, hi, p0, p1};
}

const char* colour(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  return palette[i % std::size(palette)];
}

}  // namespace

std::string format_csv(const SweepResult& result, const CsvOptions& options) {
  require_rows(result);
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& row : result.rows) {
    out += std::string(to_string(row.estimator)) + "," + std::to_string(row.m) + "," +
           std::to_string(row.seed) + "," + num(row.record.value) + "," + num(row.exact) + "," +
           num(row.rel_error) + "," + num(row.record.matvec_cost) + "," +
           std::to_string(row.record.jvp_calls) + "," + std::to_string(row.record.vjp_calls) + "," +
           num(options.redact_timing ? 0.0 : row.record.wall_time) + "\n";
  }
  return out;
}

std::string format_summary_csv(const SweepResult& result) {
  require_rows(result);
  std::string out =
      "estimator,m,err_p25,err_median,err_p75,time_p25_s,time_median_s,time_p75_s,matvec_cost,"
      "runtime_fraction\n";
  out += "exact," + std::to_string(result.dim) + ",0,0,0," + num(result.exact_wall_time) + "," +
         num(result.exact_wall_time) + "," + num(result.exact_wall_time) + "," +
         std::to_string(result.dim) + ",1\n";
  for (const auto& p : result.curves) {
    out += std::string(to_string(p.estimator)) + "," + std::to_string(p.m) + "," +
           num(p.rel_error.p25) + "," + num(p.rel_error.median) + "," + num(p.rel_error.p75) + "," +
           num(p.wall_time.p25) + "," + num(p.wall_time.median) + "," + num(p.wall_time.p75) +
           "," + num(p.matvec_cost) + "," + num(p.runtime_fraction) + "\n";
  }
  return out;
}

std::string format_speedup_csv(const SweepResult& result) {
  require_rows(result);
  std::string out = "accuracy,rel_error_threshold,estimator,m,wall_time_s,exact_wall_time_s,speedup\n";
  for (const auto& s : result.speedups) {
    out += num(1.0 - s.threshold) + "," + num(s.threshold) + "," +
           std::string(to_string(s.estimator)) + "," + std::to_string(s.m) + "," +
           num(s.wall_time) + "," + num(result.exact_wall_time) + "," + num(s.speedup) + "\n";
  }
  return out;
}

std::string format_svg(const SweepResult& result) {
  require_rows(result);
  constexpr double width = 720, height = 480;
  constexpr double left = 80, right = 160, top = 40, bottom = 60;

  std::map<Estimator, std::vector<const CurvePoint*>> series;
  double tmin = INFINITY, tmax = 0, emin = INFINITY, emax = 0;
  for (const auto& p : result.curves) {
    series[p.estimator].push_back(&p);
    tmin = std::min(tmin, p.wall_time.median);
    tmax = std::max(tmax, p.wall_time.median);
    emin = std::min(emin, p.rel_error.p25);
    if (std::isfinite(p.rel_error.p75)) emax = std::max(emax, p.rel_error.p75);
  }
  for (auto& [e, pts] : series) {
    std::sort(pts.begin(), pts.end(), [](const auto* a, const auto* b) {
      return a->wall_time.median < b->wall_time.median;
    });
  }
  const LogAxis x = make_axis(tmin, tmax, kTimeFloor, left, width - right);
  const LogAxis y = make_axis(emin, emax, kErrorFloor, height - bottom, top);

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\" font-family=\"sans-serif\" "
      << "font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << left << "\" y=\"24\" font-size=\"14\">" << result.name << ": "
      << to_string(result.quantity) << ", n = " << result.dim
      << ", exact pass " << num(result.exact_wall_time) << " s</text>\n";

  // decade grid and labels
  for (int d = static_cast<int>(x.lo); d <= static_cast<int>(x.hi); ++d) {
    const double px = x(std::pow(10.0, d), 0.0);
    svg << "<line x1=\"" << px << "\" y1=\"" << top << "\" x2=\"" << px << "\" y2=\""
        << height - bottom << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << px << "\" y=\"" << height - bottom + 16
        << "\" text-anchor=\"middle\">1e" << d << "</text>\n";
  }
  for (int d = static_cast<int>(y.lo); d <= static_cast<int>(y.hi); ++d) {
    const double py = y(std::pow(10.0, d), 0.0);
    svg << "<line x1=\"" << left << "\" y1=\"" << py << "\" x2=\"" << width - right << "\" y2=\""
        << py << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << left - 6 << "\" y=\"" << py + 4 << "\" text-anchor=\"end\">1e" << d
        << "</text>\n";
  }
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << width - left - right
      << "\" height=\"" << height - top - bottom << "\" fill=\"none\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << (left + width - right) / 2 << "\" y=\"" << height - 16
      << "\" text-anchor=\"middle\">median wall time (s)</text>\n";
  svg << "<text transform=\"translate(20," << (top + height - bottom) / 2
      << ") rotate(-90)\" text-anchor=\"middle\">relative error</text>\n";

  std::size_t index = 0;
  for (const auto& [e, pts] : series) {
    const char* c = colour(index);
    svg << "<polygon fill=\"" << c << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (const auto* p : pts) {
      svg << x(p->wall_time.median, kTimeFloor) << "," << y(p->rel_error.p75, kErrorFloor) << " ";
    }
    for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
      svg << x((*it)->wall_time.median, kTimeFloor) << "," << y((*it)->rel_error.p25, kErrorFloor)
          << " ";
    }
    svg << "\"/>\n";
    svg << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
    for (const auto* p : pts) {
      svg << x(p->wall_time.median, kTimeFloor) << "," << y(p->rel_error.median, kErrorFloor)
          << " ";
    }
    svg << "\"/>\n";
    for (const auto* p : pts) {
      svg << "<circle cx=\"" << x(p->wall_time.median, kTimeFloor) << "\" cy=\""
          << y(p->rel_error.median, kErrorFloor) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
    }
    const double ly = top + 16 + 20 * static_cast<double>(index);
    svg << "<line x1=\"" << width - right + 12 << "\" y1=\"" << ly << "\" x2=\""
        << width - right + 36 << "\" y2=\"" << ly << "\" stroke=\"" << c
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << width - right + 42 << "\" y=\"" << ly + 4 << "\">" << to_string(e)
        << "</text>\n";
    ++index;
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_csv(const SweepResult& result, const std::filesystem::path& path,
              const CsvOptions& options) {
  write_file(path, format_csv(result, options));
}

void emit_svg(const SweepResult& result, const std::filesystem::path& path) {
  write_file(path, format_svg(result));
}

void emit_all(const SweepResult& result, const std::filesystem::path& dir,
              const CsvOptions& options) {
  require_rows(result);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  emit_csv(result, dir / (result.name + ".csv"), options);
  write_file(dir / (result.name + "_summary.csv"), format_summary_csv(result));
  write_file(dir / (result.name + "_speedup.csv"), format_speedup_csv(result));
  emit_svg(result, dir / (result.name + ".svg"));
}

}  // namespace ntk::bench
