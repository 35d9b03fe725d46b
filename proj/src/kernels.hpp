#pragma once

#include <cstddef>

#include <Eigen/Core>

// Row-major GEMM wrappers over Eigen. All of them accumulate into C.
namespace histofuse::kernels {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

inline Eigen::Index ix(std::size_t v) { return static_cast<Eigen::Index>(v); }

// C[m,n] += A[m,k] · B[k,n]
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    if (m == 0 || n == 0 || k == 0) return;
    Map(c, ix(m), ix(n)).noalias() += ConstMap(a, ix(m), ix(k)) * ConstMap(b, ix(k), ix(n));
}

// C[m,n] += A[m,k] · B[n,k]^T
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    if (m == 0 || n == 0 || k == 0) return;
    Map(c, ix(m), ix(n)).noalias() += ConstMap(a, ix(m), ix(k)) * ConstMap(b, ix(n), ix(k)).transpose();
}

// C[m,n] += A[k,m]^T · B[k,n]
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    if (m == 0 || n == 0 || k == 0) return;
    Map(c, ix(m), ix(n)).noalias() += ConstMap(a, ix(k), ix(m)).transpose() * ConstMap(b, ix(k), ix(n));
}

}  // namespace histofuse::kernels
