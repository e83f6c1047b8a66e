#pragma once

// Dense loops shared by the op implementations. Not part of the public API.

#include <cmath>
#include <cstddef>
#include <vector>

#include "saanet/config.hpp"

SAANET_BEGIN_NAMESPACE
namespace kernels {

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* __restrict a,
                    const Real* __restrict b, Real* __restrict c) {
    for (std::size_t i = 0; i < m; ++i) {
        Real* __restrict crow = c + i * n;
        const Real* __restrict arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const Real av = arow[p];
            const Real* __restrict brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] += A^T * B with A stored [k x m], B [k x n]
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* __restrict a,
                    const Real* __restrict b, Real* __restrict c) {
    for (std::size_t p = 0; p < k; ++p) {
        const Real* __restrict arow = a + p * m;
        const Real* __restrict brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const Real av = arow[i];
            Real* __restrict crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline std::vector<Real> transposed(const Real* src, std::size_t rows, std::size_t cols) {
    std::vector<Real> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
    return out;
}

// C[m x n] += A[m x k] * B^T with B stored [n x k]
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
    const auto bt = transposed(b, n, k);
    gemm_nn(m, n, k, a, bt.data(), c);
}

struct BilinearCorner {
    long x = 0;
    long y = 0;
    Real weight = 0;
    bool valid = false;
};

struct BilinearStencil {
    BilinearCorner c[4];  // (x0,y0) (x1,y0) (x0,y1) (x1,y1)
    Real fx = 0;
    Real fy = 0;
};

inline BilinearStencil bilinear_stencil(Real px, Real py, std::size_t height, std::size_t width) {
    BilinearStencil s;
    // Far outside (or non-finite): every neighbour is padding.
    if (!(px > Real(-2) && py > Real(-2) && px < Real(width + 1) && py < Real(height + 1))) return s;
    const Real x0f = std::floor(px);
    const Real y0f = std::floor(py);
    s.fx = px - x0f;
    s.fy = py - y0f;
    const long x0 = static_cast<long>(x0f);
    const long y0 = static_cast<long>(y0f);
    const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
    const Real ws[4] = {(1 - s.fx) * (1 - s.fy), s.fx * (1 - s.fy), (1 - s.fx) * s.fy, s.fx * s.fy};
    for (int i = 0; i < 4; ++i) {
        s.c[i].x = xs[i];
        s.c[i].y = ys[i];
        s.c[i].weight = ws[i];
        s.c[i].valid = xs[i] >= 0 && ys[i] >= 0 && xs[i] < static_cast<long>(width) &&
                       ys[i] < static_cast<long>(height);
    }
    return s;
}

}  // namespace kernels
SAANET_END_NAMESPACE
