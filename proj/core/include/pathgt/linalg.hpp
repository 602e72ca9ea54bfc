#pragma once

#include <Eigen/Core>

namespace pathgt {

// Row-major throughout: rows are samples (or sample x token pairs),
// columns are features, matching the (B*P, d) layout used by the model.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using MatD = Mat<double>;
using MatF = Mat<float>;

} // namespace pathgt
