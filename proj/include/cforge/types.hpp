#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Core>

namespace cforge {

using TokenId = std::int32_t;

// Dense row-major storage for per-position tensors; rows are sequence positions.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Embedding = RowMatrix<double>;
using Vec = Vector<double>;
using Mat = Matrix<double>;

/// Squared Frobenius distance between two equally shaped dense expressions.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar squared_distance(const Eigen::MatrixBase<DerivedA>& a,
                                           const Eigen::MatrixBase<DerivedB>& b) {
  return (a - b).squaredNorm();
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

}  // namespace cforge
