#pragma once

#include <cblas.h>

#include "flowvip/tensor.hpp"

namespace flowvip::detail {

// Row-major C = alpha * op(A) * op(B) + beta * C.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, Scalar alpha, const Scalar* a,
                 int lda, const Scalar* b, int ldb, Scalar beta, Scalar* c, int ldc) {
  if (m == 0 || n == 0) return;
  const auto ta = trans_a ? CblasTrans : CblasNoTrans;
  const auto tb = trans_b ? CblasTrans : CblasNoTrans;
#ifdef FLOWVIP_FLOAT32
  cblas_sgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
#else
  cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
#endif
}

}  // namespace flowvip::detail
