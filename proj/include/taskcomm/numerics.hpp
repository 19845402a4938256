#pragma once

// Dense complex linear-algebra kernels shared by all precoding modules.
//
// Matrices are Eigen::MatrixXcd. Functions that expect a Hermitian argument
// read the lower triangle only (Cholesky / self-adjoint eigensolver), so a
// caller holding a numerically almost-Hermitian matrix gets a consistent
// answer without symmetrizing first.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <string>

#include "taskcomm/errors.hpp"

namespace taskcomm {

using cd = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;

inline bool all_finite(const CMatrix& a) { return a.allFinite(); }

inline void require_finite(const CMatrix& a, const std::string& what) {
  if (!a.allFinite()) throw NumericError("non-finite entries in " + what);
}

inline void require_square(const CMatrix& a, const std::string& what) {
  if (a.rows() != a.cols())
    throw DimensionMismatch(what + " must be square, got " + std::to_string(a.rows()) +
                            "x" + std::to_string(a.cols()));
}

/// PSD tolerance scaled to the matrix: 1e-10 * trace / dim.
inline double psd_tolerance(const CMatrix& a) {
  if (a.rows() == 0) return 0.0;
  return 1e-10 * std::abs(a.trace().real()) / static_cast<double>(a.rows());
}

inline CMatrix hermitian_part(const CMatrix& a) { return 0.5 * (a + a.adjoint()); }

/// log det(A) for Hermitian positive definite A via Cholesky.
inline double logdet_hpd(const CMatrix& a) {
  require_square(a, "logdet_hpd argument");
  if (a.rows() == 0) return 0.0;
  Eigen::LLT<CMatrix> llt(a);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite("logdet_hpd");
  const CMatrix& l = llt.matrixLLT();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    const double d = l(i, i).real();
    if (!(d > 0.0) || !std::isfinite(d)) throw NotPositiveDefinite("logdet_hpd");
    acc += 2.0 * std::log(d);
  }
  return acc;
}

/// Solves A X = B for Hermitian positive definite A.
inline CMatrix hermitian_solve(const CMatrix& a, const CMatrix& b) {
  require_square(a, "hermitian_solve matrix");
  if (a.rows() != b.rows())
    throw DimensionMismatch("hermitian_solve: A is " + std::to_string(a.rows()) +
                            "-dimensional but B has " + std::to_string(b.rows()) + " rows");
  Eigen::LLT<CMatrix> llt(a);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite("hermitian_solve");
  CMatrix x = llt.solve(b);
  require_finite(x, "hermitian_solve result");
  return x;
}

inline CMatrix hermitian_inverse(const CMatrix& a) {
  return hermitian_solve(a, CMatrix::Identity(a.rows(), a.cols()));
}

/// Kronecker product; entry (i*B.rows()+k, j*B.cols()+l) = A(i,j) * B(k,l).
inline CMatrix kron(const CMatrix& a, const CMatrix& b) {
  CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// Column-stacking vectorization, returned as a column vector (rows*cols x 1).
inline CVector vec(const CMatrix& a) {
  return Eigen::Map<const CVector>(a.data(), a.size());
}

/// Inverse of vec.
inline CMatrix devec(const CMatrix& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols)
    throw DimensionMismatch("devec: " + std::to_string(v.size()) + " entries cannot fill " +
                            std::to_string(rows) + "x" + std::to_string(cols));
  CMatrix out(rows, cols);
  Eigen::Map<CVector>(out.data(), out.size()) = Eigen::Map<const CVector>(v.data(), v.size());
  return out;
}

/// Hermitian square root of a PSD matrix; negative eigenvalues are clamped to zero.
inline CMatrix matrix_sqrt_psd(const CMatrix& a) {
  require_square(a, "matrix_sqrt_psd argument");
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(a);
  if (eig.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  RVector s = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const CMatrix& q = eig.eigenvectors();
  return q * s.cast<cd>().asDiagonal() * q.adjoint();
}

/// Eigenvalues of a Hermitian matrix in ascending order.
inline RVector hermitian_eigenvalues(const CMatrix& a) {
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(a, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  return eig.eigenvalues();
}

/// max_i sum_j |a_ij|, an upper bound on the spectral radius.
inline double max_abs_row_sum(const CMatrix& a) {
  require_square(a, "max_abs_row_sum argument");
  if (a.rows() == 0) return 0.0;
  return a.cwiseAbs().rowwise().sum().maxCoeff();
}

/// Block-diagonal assembly of a list of (possibly rectangular) blocks.
template <typename Range>
CMatrix block_diagonal(const Range& blocks) {
  Eigen::Index rows = 0, cols = 0;
  for (const CMatrix& b : blocks) {
    rows += b.rows();
    cols += b.cols();
  }
  CMatrix out = CMatrix::Zero(rows, cols);
  Eigen::Index r = 0, c = 0;
  for (const CMatrix& b : blocks) {
    out.block(r, c, b.rows(), b.cols()) = b;
    r += b.rows();
    c += b.cols();
  }
  return out;
}

}  // namespace taskcomm
