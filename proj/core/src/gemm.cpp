#include "segdetail/gemm.hpp"

#include <cblas.h>

namespace segdetail {
namespace {

// Force a single BLAS thread; the threaded backend does not guarantee a
// fixed summation order.
struct BlasInit {
    BlasInit() { openblas_set_num_threads(1); }
};
const BlasInit blas_init;

CBLAS_TRANSPOSE tr(bool t) { return t ? CblasTrans : CblasNoTrans; }

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k,
          float alpha, const float* a, int lda, const float* b, int ldb,
          float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, tr(trans_a), tr(trans_b), m, n, k,
                alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k,
          double alpha, const double* a, int lda, const double* b, int ldb,
          double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, tr(trans_a), tr(trans_b), m, n, k,
                alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace segdetail
