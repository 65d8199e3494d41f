#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string_view>

namespace ntk {

/// Column-major, double precision. Every matrix in the library uses this type.
using DenseMatrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class ProbeDistribution { rademacher, gaussian };

std::string_view to_string(ProbeDistribution d);
ProbeDistribution parse_probe_distribution(std::string_view name);

struct ProbeSpec {
  ProbeDistribution distribution = ProbeDistribution::rademacher;
  Index count = 1;
  std::uint64_t seed = 0;
};

/// Mixes `stream` into `seed` (SplitMix64 finalizer). Used to derive
/// independent per-repeat and per-phase seeds from one master seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// dim x spec.count probe matrix.
///
/// The stream is std::mt19937_64 seeded with `spec.seed`, consumed column by
/// column. Rademacher entries take the sign from the top bit of one draw;
/// Gaussian entries come in Box-Muller pairs from two 53-bit uniforms. The
/// generator is fully specified by the C++ standard and the mapping is done
/// here, so streams do not depend on the standard library's distributions.
DenseMatrix draw_probes(Index dim, const ProbeSpec& spec);

/// Orthonormal basis of range(a) by Householder QR with column pivoting.
///
/// Columns whose pivot falls below 1e-12 times the largest pivot are dropped,
/// so the result has numerical-rank many columns. Signs are fixed so that the
/// triangular factor has a positive diagonal. Requires rows >= cols.
DenseMatrix thin_qr(const DenseMatrix& a);

/// Relative pivot threshold used by thin_qr.
inline constexpr double kRankTolerance = 1e-12;

/// (I - Q Q^T) T for Q with orthonormal columns.
DenseMatrix project_complement(const DenseMatrix& q, const DenseMatrix& t);

double frobenius_sq(const DenseMatrix& a);

}  // namespace ntk
