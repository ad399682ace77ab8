#pragma once
// Minimal NCHW tensor plus a typed wrapper over BLAS GEMM. Everything the
// network does reduces to these.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace omniseg {

template <class T>
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_), v(static_cast<size_t>(n_) * c_ * h_ * w_, T(0)) {}

    size_t size() const { return v.size(); }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    size_t idx(int in, int ic, int iy, int ix) const {
        return ((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix;
    }
    T& at(int in, int ic, int iy, int ix) { return v[idx(in, ic, iy, ix)]; }
    const T& at(int in, int ic, int iy, int ix) const { return v[idx(in, ic, iy, ix)]; }

    // Pointer to the (n, c) spatial plane.
    T* plane(int in, int ic) { return v.data() + (static_cast<size_t>(in) * c + ic) * h * w; }
    const T* plane(int in, int ic) const {
        return v.data() + (static_cast<size_t>(in) * c + ic) * h * w;
    }

    bool same_shape(const Tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    void fill(T x) { std::fill(v.begin(), v.end(), x); }

    // View of one sample as a 1xCxHxW tensor (copy).
    Tensor<T> sample(int in) const {
        Tensor<T> out(1, c, h, w);
        std::copy(v.begin() + static_cast<size_t>(in) * c * h * w,
                  v.begin() + static_cast<size_t>(in + 1) * c * h * w, out.v.begin());
        return out;
    }
};

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc);

// Caps worker parallelism (BLAS + OpenMP) from OMNISEG_NUM_WORKERS; call once
// at process start. Returns the effective worker count.
int init_parallelism();

}  // namespace omniseg
