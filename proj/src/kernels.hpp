#pragma once

// Dense kernels with a fixed per-element accumulation order: every output
// element sums its terms in ascending index order regardless of how many rows
// are processed, so results do not depend on batch composition.

#include <cstddef>

namespace codedlf::kernels {

// C[M,N] = A[M,K] * B[K,N]   (or += when accumulate)
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate);

// C[K,N] += A[M,K]^T * G[M,N]
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* g,
                 double* c);

// dst[cols, rows] = src[rows, cols]^T
void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst);

}  // namespace codedlf::kernels
