#include "omniseg/tensor.hpp"

#include <cblas.h>
#ifdef _OPENMP
#include <omp.h>
#endif

#include <cstdlib>
#include <string>

extern "C" void openblas_set_num_threads(int);

namespace omniseg {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

int init_parallelism() {
    int workers = 0;
    if (const char* env = std::getenv("OMNISEG_NUM_WORKERS")) {
        workers = std::atoi(env);
    }
#ifdef _OPENMP
    if (workers <= 0) workers = omp_get_max_threads();
    omp_set_num_threads(workers);
#else
    if (workers <= 0) workers = 1;
#endif
    openblas_set_num_threads(workers);
    return workers;
}

}  // namespace omniseg
