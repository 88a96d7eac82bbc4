#include "kernels.hpp"

#include <algorithm>

namespace ssnet::kernels {

namespace {

using v8f = float __attribute__((vector_size(32)));
constexpr std::size_t panel = 8;   // columns per packed panel
constexpr std::size_t tile_rows = 8;
constexpr std::size_t k_chunk = 256; // float partial sums are flushed to double after this many terms

template <std::size_t Rows>
void micro(const float* a, std::size_t lda, const float* b, std::size_t ldb, std::size_t k0, std::size_t k1, double* c,
           std::size_t ldc, std::size_t cols)
{
    v8f acc[Rows] = {};
    for (std::size_t kk = k0; kk < k1; ++kk) {
        v8f bv;
        __builtin_memcpy(&bv, b + kk * ldb, sizeof bv);
        for (std::size_t r = 0; r < Rows; ++r) acc[r] += a[r * lda + kk] * bv;
    }
    if (cols == panel) {
        for (std::size_t r = 0; r < Rows; ++r)
            for (std::size_t j = 0; j < panel; ++j) c[r * ldc + j] += static_cast<double>(acc[r][j]);
    } else {
        for (std::size_t r = 0; r < Rows; ++r)
            for (std::size_t j = 0; j < cols; ++j) c[r * ldc + j] += static_cast<double>(acc[r][j]);
    }
}

void micro_any(std::size_t rows, const float* a, std::size_t lda, const float* b, std::size_t ldb, std::size_t k0,
               std::size_t k1, double* c, std::size_t ldc, std::size_t cols)
{
    switch (rows) {
    case 1: micro<1>(a, lda, b, ldb, k0, k1, c, ldc, cols); break;
    case 2: micro<2>(a, lda, b, ldb, k0, k1, c, ldc, cols); break;
    case 3: micro<3>(a, lda, b, ldb, k0, k1, c, ldc, cols); break;
    case 4: micro<4>(a, lda, b, ldb, k0, k1, c, ldc, cols); break;
    case 5: micro<5>(a, lda, b, ldb, k0, k1, c, ldc, cols); break;
    case 6: micro<6>(a, lda, b, ldb, k0, k1, c, ldc, cols); break;
    case 7: micro<7>(a, lda, b, ldb, k0, k1, c, ldc, cols); break;
    default: micro<8>(a, lda, b, ldb, k0, k1, c, ldc, cols); break;
    }
}

} // namespace

void gemm_nn(const float* a, const float* b, double* c, std::size_t m, std::size_t k, std::size_t n)
{
    if (m == 0 || n == 0 || k == 0) return;
    const std::size_t full = n / panel;
    const std::size_t tail = n - full * panel;
    // The ragged last panel is copied into a zero-padded [K,8] buffer.
    std::vector<float> tail_buf;
    if (tail) {
        tail_buf.assign(k * panel, 0.0f);
        for (std::size_t kk = 0; kk < k; ++kk)
            for (std::size_t j = 0; j < tail; ++j) tail_buf[kk * panel + j] = b[kk * n + full * panel + j];
    }
    for (std::size_t k0 = 0; k0 < k; k0 += k_chunk) {
        const std::size_t k1 = std::min(k, k0 + k_chunk);
        for (std::size_t i0 = 0; i0 < m; i0 += tile_rows) {
            const std::size_t rows = std::min(tile_rows, m - i0);
            const float* ai = a + i0 * k;
            double* ci = c + i0 * n;
            for (std::size_t p = 0; p < full; ++p)
                micro_any(rows, ai, k, b + p * panel, n, k0, k1, ci + p * panel, n, panel);
            if (tail) micro_any(rows, ai, k, tail_buf.data(), panel, k0, k1, ci + full * panel, n, tail);
        }
    }
}

void gemm_tn(const float* a, const float* b, double* c, std::size_t m, std::size_t k, std::size_t n)
{
    const auto at = transpose(a, k, m);
    gemm_nn(at.data(), b, c, m, k, n);
}

std::vector<float> transpose(const float* a, std::size_t rows, std::size_t cols)
{
    std::vector<float> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
    return out;
}

std::vector<float> to_float(const std::vector<double>& v)
{
    return std::vector<float>(v.begin(), v.end());
}

namespace {

// Calls f(row, oy, ox_begin, ox_end, y, x_offset) for every in-bounds run of a
// column-buffer row, where source column x = ox * stride + x_offset.
template <typename F>
void for_each_run(const ConvGeometry& g, F&& f)
{
    const auto h = static_cast<std::ptrdiff_t>(g.height);
    const auto w = static_cast<std::ptrdiff_t>(g.width);
    const auto s = static_cast<std::ptrdiff_t>(g.stride);
    const auto pad = static_cast<std::ptrdiff_t>(g.padding);
    const auto ow = static_cast<std::ptrdiff_t>(g.out_w);
    for (std::size_t c = 0; c < g.in_ch; ++c)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const std::size_t row = (c * g.kh + ky) * g.kw + kx;
                const auto x_off = static_cast<std::ptrdiff_t>(kx) - pad;
                // ox in [lo, hi) keeps 0 <= ox*s + x_off < w.
                std::ptrdiff_t lo = x_off >= 0 ? 0 : (-x_off + s - 1) / s;
                std::ptrdiff_t hi = w - x_off <= 0 ? 0 : (w - x_off + s - 1) / s;
                lo = std::min(lo, ow);
                hi = std::min(hi, ow);
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto y = static_cast<std::ptrdiff_t>(oy) * s + static_cast<std::ptrdiff_t>(ky) - pad;
                    if (y < 0 || y >= h) continue;
                    f(c, row, oy, lo, hi, y, x_off);
                }
            }
}

} // namespace

std::vector<float> im2col(const float* x, const ConvGeometry& g)
{
    const std::size_t pix = g.pixels();
    std::vector<float> cols(g.patch() * pix, 0.0f);
    const auto s = static_cast<std::ptrdiff_t>(g.stride);
    for_each_run(g, [&](std::size_t c, std::size_t row, std::size_t oy, std::ptrdiff_t lo, std::ptrdiff_t hi,
                        std::ptrdiff_t y, std::ptrdiff_t x_off) {
        const float* src = x + (c * g.height + static_cast<std::size_t>(y)) * g.width;
        float* dst = cols.data() + row * pix + oy * g.out_w;
        for (std::ptrdiff_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * s + x_off];
    });
    return cols;
}

void col2im(const double* cols, float* dx, const ConvGeometry& g)
{
    const std::size_t pix = g.pixels();
    const auto s = static_cast<std::ptrdiff_t>(g.stride);
    std::vector<double> acc(g.in_ch * g.height * g.width, 0.0);
    for_each_run(g, [&](std::size_t c, std::size_t row, std::size_t oy, std::ptrdiff_t lo, std::ptrdiff_t hi,
                        std::ptrdiff_t y, std::ptrdiff_t x_off) {
        double* dst = acc.data() + (c * g.height + static_cast<std::size_t>(y)) * g.width;
        const double* src = cols + row * pix + oy * g.out_w;
        for (std::ptrdiff_t ox = lo; ox < hi; ++ox) dst[ox * s + x_off] += src[ox];
    });
    for (std::size_t i = 0; i < acc.size(); ++i) dx[i] += static_cast<float>(acc[i]);
}

} // namespace ssnet::kernels
