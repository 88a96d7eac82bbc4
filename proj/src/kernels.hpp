#pragma once

// Dense float32 kernels. Products are summed in float over runs of at most
// 256 terms and the partial sums accumulated in double. Internal to the library.

#include <cstddef>
#include <vector>

namespace ssnet::kernels {

/// C[M,N] += A[M,K] * B[K,N]; all row-major.
void gemm_nn(const float* a, const float* b, double* c, std::size_t m, std::size_t k, std::size_t n);

/// C[M,N] += A[K,M]^T * B[K,N].
void gemm_tn(const float* a, const float* b, double* c, std::size_t m, std::size_t k, std::size_t n);

/// Row-major transpose of a [rows, cols] matrix.
std::vector<float> transpose(const float* a, std::size_t rows, std::size_t cols);

std::vector<float> to_float(const std::vector<double>& v);

struct ConvGeometry {
    std::size_t batch, in_ch, height, width;
    std::size_t out_ch, kh, kw;
    std::size_t stride, padding;
    std::size_t out_h, out_w;

    std::size_t patch() const { return in_ch * kh * kw; }
    std::size_t pixels() const { return out_h * out_w; }
};

/// Unfolds one sample x[Cin,H,W] into columns [Cin*kh*kw, Ho*Wo], zero padded.
std::vector<float> im2col(const float* x, const ConvGeometry& g);

/// Folds column gradients of one sample back onto dx[Cin,H,W] (accumulating).
void col2im(const double* cols, float* dx, const ConvGeometry& g);

} // namespace ssnet::kernels
