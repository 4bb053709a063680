#pragma once

#include <cstddef>

namespace segdetail {

// C = alpha * op(A) * op(B) + beta * C, row-major.
// A is MxK (or KxM when trans_a), B is KxN (or NxK when trans_b).
// Backed by a serial BLAS so repeated calls with identical inputs are
// bit-identical.
void gemm(bool trans_a, bool trans_b, int m, int n, int k,
          float alpha, const float* a, int lda, const float* b, int ldb,
          float beta, float* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k,
          double alpha, const double* a, int lda, const double* b, int ldb,
          double beta, double* c, int ldc);

}  // namespace segdetail
