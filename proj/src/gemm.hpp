#pragma once

#include <Eigen/Core>
#include <cstddef>

namespace ucs::detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C (+)= op(A) * op(B) on row-major buffers. op(A) is m x k, op(B) is k x n.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  using CMap = Eigen::Map<const RowMatrix<T>>;
  using Map = Eigen::Map<RowMatrix<T>>;
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  Map cm(c, M, N);
  if (!accumulate) cm.setZero();
  if (!trans_a && !trans_b) {
    cm.noalias() += CMap(a, M, K) * CMap(b, K, N);
  } else if (trans_a && !trans_b) {
    cm.noalias() += CMap(a, K, M).transpose() * CMap(b, K, N);
  } else if (!trans_a && trans_b) {
    cm.noalias() += CMap(a, M, K) * CMap(b, N, K).transpose();
  } else {
    cm.noalias() += CMap(a, K, M).transpose() * CMap(b, N, K).transpose();
  }
}

}  // namespace ucs::detail
