#include "ntk/linalg.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ntk {

std::string_view to_string(ProbeDistribution d) {
  return d == ProbeDistribution::rademacher ? "rademacher" : "gaussian";
}

ProbeDistribution parse_probe_distribution(std::string_view name) {
  if (name == "rademacher") return ProbeDistribution::rademacher;
  if (name == "gaussian") return ProbeDistribution::gaussian;
  throw std::invalid_argument("unknown probe distribution '" + std::string(name) + "'");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(seed ^ mix(stream));
}

DenseMatrix draw_probes(Index dim, const ProbeSpec& spec) {
  if (dim < 1) throw std::invalid_argument("draw_probes: dim must be >= 1");
  if (spec.count < 1) throw std::invalid_argument("draw_probes: count must be >= 1");

  std::mt19937_64 gen(spec.seed);
  DenseMatrix out(dim, spec.count);
  double* data = out.data();
  const Index total = dim * spec.count;

  if (spec.distribution == ProbeDistribution::rademacher) {
    for (Index i = 0; i < total; ++i) data[i] = (gen() >> 63) ? 1.0 : -1.0;
    return out;
  }

  auto uniform = [&gen] {
    // (0, 1), never exactly 0 so the log below is finite
    return (static_cast<double>(gen() >> 11) + 0.5) * 0x1.0p-53;
  };
  for (Index i = 0; i < total; i += 2) {
    const double radius = std::sqrt(-2.0 * std::log(uniform()));
    const double angle = 2.0 * std::numbers::pi * uniform();
    data[i] = radius * std::cos(angle);
    if (i + 1 < total) data[i + 1] = radius * std::sin(angle);
  }
  return out;
}

DenseMatrix thin_qr(const DenseMatrix& a) {
  const Index rows = a.rows();
  const Index cols = a.cols();
  if (rows < cols) {
    throw std::invalid_argument("thin_qr: expected rows >= cols, got " + std::to_string(rows) +
                                "x" + std::to_string(cols));
  }

  DenseMatrix work = a;
  DenseMatrix reflectors = DenseMatrix::Zero(rows, cols);
  std::vector<double> taus;
  std::vector<double> signs;
  double largest_pivot = 0.0;
  Index rank = 0;

  for (Index j = 0; j < cols; ++j) {
    // Column pivoting on the trailing block: bring the largest remaining
    // column to position j.
    Index best = j;
    double best_norm = -1.0;
    for (Index c = j; c < cols; ++c) {
      const double nrm = work.col(c).tail(rows - j).squaredNorm();
      if (nrm > best_norm) {
        best_norm = nrm;
        best = c;
      }
    }
    if (best != j) work.col(j).swap(work.col(best));

    const double pivot = std::sqrt(best_norm);
    if (j == 0) largest_pivot = pivot;
    if (pivot == 0.0 || pivot <= kRankTolerance * largest_pivot) break;

    auto x = work.col(j).tail(rows - j);
    const double alpha = x(0);
    double beta = alpha;
    double tau = 0.0;
    auto v = reflectors.col(j).tail(rows - j);
    v.setZero();
    v(0) = 1.0;
    if (rows - j > 1 && x.tail(rows - j - 1).squaredNorm() > 0.0) {
      beta = alpha >= 0.0 ? -pivot : pivot;
      tau = (beta - alpha) / beta;
      v.tail(rows - j - 1) = x.tail(rows - j - 1) / (alpha - beta);
    }
    if (tau != 0.0 && j + 1 < cols) {
      auto trailing = work.block(j, j + 1, rows - j, cols - j - 1);
      const Eigen::RowVectorXd w = v.transpose() * trailing;
      trailing.noalias() -= tau * v * w;
    }
    x.setZero();
    x(0) = beta;
    taus.push_back(tau);
    signs.push_back(beta < 0.0 ? -1.0 : 1.0);
    rank = j + 1;
  }

  DenseMatrix q = DenseMatrix::Identity(rows, rank);
  for (Index j = rank - 1; j >= 0; --j) {
    const double tau = taus[static_cast<std::size_t>(j)];
    if (tau == 0.0) continue;
    auto v = reflectors.col(j).tail(rows - j);
    auto block = q.bottomRows(rows - j);
    const Eigen::RowVectorXd w = v.transpose() * block;
    block.noalias() -= tau * v * w;
  }
  for (Index j = 0; j < rank; ++j) q.col(j) *= signs[static_cast<std::size_t>(j)];
  return q;
}

DenseMatrix project_complement(const DenseMatrix& q, const DenseMatrix& t) {
  if (q.rows() != t.rows()) {
    throw std::invalid_argument("project_complement: row mismatch (" + std::to_string(q.rows()) +
                                " vs " + std::to_string(t.rows()) + ")");
  }
  if (q.cols() == 0) return t;
  DenseMatrix coeffs = q.transpose() * t;
  DenseMatrix out = t;
  out.noalias() -= q * coeffs;
  return out;
}

double frobenius_sq(const DenseMatrix& a) { return a.squaredNorm(); }

}  // namespace ntk
