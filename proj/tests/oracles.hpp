// Independent reference computations for the tests. Nothing here calls the
// AD engine or the estimators.
#pragma once

#include "ntk/autodiff.hpp"
#include "ntk/linalg.hpp"
#include "ntk/model.hpp"
#include "ntk/ntk_operator.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <memory>
#include <vector>

namespace oracle {

using ntk::DenseMatrix;
using ntk::Index;
using ntk::Vector;

inline DenseMatrix gaussian(Index rows, Index cols, std::uint64_t seed) {
  return ntk::draw_probes(rows, {ntk::ProbeDistribution::gaussian, cols, seed});
}

inline Vector gaussian_vector(Index n, std::uint64_t seed) { return gaussian(n, 1, seed).col(0); }

inline double rel_diff(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

inline double rel_diff(const DenseMatrix& a, const DenseMatrix& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

/// Central-difference directional derivative of the forward pass.
inline Vector fd_directional(const ntk::ModelConfig& config, const ntk::ParamVector& params,
                             const ntk::StateTensor& inputs, const Vector& p, double eps) {
  ntk::ParamVector plus = params, minus = params;
  plus.data += eps * p;
  minus.data -= eps * p;
  return (ntk::forward(config, plus, inputs).data - ntk::forward(config, minus, inputs).data) /
         (2.0 * eps);
}

/// n x P Jacobian by central differences along each coordinate.
inline DenseMatrix fd_jacobian(const ntk::ModelConfig& config, const ntk::ParamVector& params,
                               const ntk::StateTensor& inputs, double eps = 1e-6) {
  const Index p = params.data.size();
  const Index n = ntk::forward(config, params, inputs).size();
  DenseMatrix j(n, p);
  for (Index k = 0; k < p; ++k) {
    j.col(k) = fd_directional(config, params, inputs, Vector::Unit(p, k), eps);
  }
  return j;
}

inline std::shared_ptr<const ntk::DenseJacobian> dense_context(const DenseMatrix& j) {
  return std::make_shared<const ntk::DenseJacobian>(j);
}

inline std::shared_ptr<const ntk::NtkOperator> linear_ntk(const DenseMatrix& x) {
  return std::make_shared<const ntk::NtkOperator>(dense_context(x));
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size() - 1);
  return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

/// Symmetric PSD matrix with the given eigenvalues and a random eigenbasis.
inline DenseMatrix psd_with_spectrum(const Vector& eigenvalues, std::uint64_t seed) {
  const Index n = eigenvalues.size();
  Eigen::HouseholderQR<DenseMatrix> qr(gaussian(n, n, seed));
  const DenseMatrix q = qr.householderQ();
  return q * eigenvalues.asDiagonal() * q.transpose();
}

/// Square root factor J with J J^T = a for symmetric PSD a.
inline DenseMatrix psd_factor(const DenseMatrix& a) {
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(a);
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

}  // namespace oracle
