#pragma once

#include <Eigen/Dense>

#include "vulnmatch/rng.hpp"

namespace vulnmatch {
namespace testutil {

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> randm(
    Eigen::Index rows, Eigen::Index cols, RngStream& rng, double scale = 1.0) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = static_cast<Scalar>(rng.next_gaussian() * scale);
    }
  }
  return m;
}

}  // namespace testutil
}  // namespace vulnmatch
