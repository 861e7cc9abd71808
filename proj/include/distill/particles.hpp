#pragma once

#include "distill/linalg.hpp"

namespace distill {

/// Parametric generator q: renders x = mu + factor * z with z ~ N(0, I).
/// The factor is unconstrained; only factor * factor^T is identifiable.
struct ParticleGaussian {
  Point mu;
  Eigen::MatrixXd factor;

  Eigen::Index dim() const { return mu.size(); }
  Eigen::MatrixXd covariance() const { return factor * factor.transpose(); }
  bool finite() const { return mu.allFinite() && factor.allFinite(); }
};

/// Parametric stand-in for the fine-tuned score model in the Gaussian lab.
struct EstimatorGaussian {
  Point mu;
  Eigen::MatrixXd factor;

  Eigen::Index dim() const { return mu.size(); }
};

/// M independently optimized points, one column each.
struct ParticleCloud {
  PointBatch points;

  Eigen::Index dim() const { return points.rows(); }
  Eigen::Index count() const { return points.cols(); }
  bool finite() const { return points.allFinite(); }
};

/// Packs (mu, factor) into one vector: mu first, then the factor column-major.
inline Eigen::VectorXd pack(const Point& mu, const Eigen::MatrixXd& factor) {
  Eigen::VectorXd v(mu.size() + factor.size());
  v.head(mu.size()) = mu;
  v.tail(factor.size()) = factor.reshaped();
  return v;
}

inline void unpack(const Eigen::VectorXd& v, Point& mu, Eigen::MatrixXd& factor) {
  const Eigen::Index d = mu.size();
  mu = v.head(d);
  factor = v.tail(d * d).reshaped(d, d);
}

}  // namespace distill
