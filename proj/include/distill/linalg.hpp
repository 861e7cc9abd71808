#pragma once

#include <Eigen/Dense>

namespace distill {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// A point in data space R^d.
using Point = Eigen::VectorXd;

/// Column-stacked batch of points, one column per sample (d x n).
using PointBatch = Eigen::MatrixXd;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace distill
