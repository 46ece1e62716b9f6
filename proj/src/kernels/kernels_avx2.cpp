// Compiled with -mavx2 -mfma. Only reached through avx2_table() after the
// dispatcher has confirmed CPU support.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "msrepaint/kernels.hpp"

namespace msrepaint::kernels {
namespace {

void axpby(double a, const double* x, double b, const double* y, double* out, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a), vb = _mm256_set1_pd(b);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d r = _mm256_add_pd(_mm256_mul_pd(va, _mm256_loadu_pd(x + i)),
                                        _mm256_mul_pd(vb, _mm256_loadu_pd(y + i)));
        _mm256_storeu_pd(out + i, r);
    }
    for (; i < n; ++i) out[i] = a * x[i] + b * y[i];
}

void select(const std::uint8_t* mask, const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    const __m256i zero = _mm256_setzero_si256();
    for (; i + 4 <= n; i += 4) {
        std::int32_t m4;
        std::memcpy(&m4, mask + i, 4);
        const __m256i wide = _mm256_cvtepu8_epi64(_mm_cvtsi32_si128(m4));
        const __m256d take_b = _mm256_castsi256_pd(_mm256_cmpeq_epi64(wide, zero));
        const __m256d r = _mm256_blendv_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), take_b);
        _mm256_storeu_pd(out + i, r);
    }
    for (; i < n; ++i) out[i] = mask[i] ? a[i] : b[i];
}

void median3(const double* a, const double* b, const double* c, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d va = _mm256_loadu_pd(a + i), vb = _mm256_loadu_pd(b + i),
                      vc = _mm256_loadu_pd(c + i);
        const __m256d lo = _mm256_min_pd(va, vb), hi = _mm256_max_pd(va, vb);
        _mm256_storeu_pd(out + i, _mm256_max_pd(lo, _mm256_min_pd(hi, vc)));
    }
    for (; i < n; ++i) out[i] = std::max(std::min(a[i], b[i]), std::min(std::max(a[i], b[i]), c[i]));
}

// Output tile: kCo output channels x (kVec * 8) pixels of one row.
template <int kCo, int kVec>
inline void conv_tile(const Conv3x3Args& p, int co, int y, int x0) {
    const int wp = p.width + 2;
    const std::size_t plane = std::size_t(p.height + 2) * wp;
    const std::size_t out_plane = std::size_t(p.height) * p.width;
    __m256 acc[kCo][kVec];
    for (int j = 0; j < kCo; ++j)
        for (int v = 0; v < kVec; ++v) {
            float* o = p.output + (co + j) * out_plane + std::size_t(y) * p.width + x0 + 8 * v;
            __m256 init = p.bias ? _mm256_set1_ps(p.bias[co + j]) : _mm256_setzero_ps();
            if (p.accumulate) init = _mm256_add_ps(init, _mm256_loadu_ps(o));
            acc[j][v] = init;
        }
    for (int ci = 0; ci < p.cin; ++ci) {
        const float* base = p.input_padded + ci * plane + std::size_t(y) * wp + x0;
        const float* wbase = p.weights + (std::size_t(co) * p.cin + ci) * 9;
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const float* row = base + ky * wp + kx;
                __m256 in[kVec];
                for (int v = 0; v < kVec; ++v) in[v] = _mm256_loadu_ps(row + 8 * v);
                for (int j = 0; j < kCo; ++j) {
                    const __m256 w = _mm256_broadcast_ss(wbase + std::size_t(j) * p.cin * 9 + ky * 3 + kx);
                    for (int v = 0; v < kVec; ++v) acc[j][v] = _mm256_fmadd_ps(w, in[v], acc[j][v]);
                }
            }
    }
    for (int j = 0; j < kCo; ++j)
        for (int v = 0; v < kVec; ++v)
            _mm256_storeu_ps(p.output + (co + j) * out_plane + std::size_t(y) * p.width + x0 + 8 * v,
                             acc[j][v]);
}

inline void conv_pixel(const Conv3x3Args& p, int co, int y, int x) {
    const int wp = p.width + 2;
    const std::size_t plane = std::size_t(p.height + 2) * wp;
    float acc = p.bias ? p.bias[co] : 0.0f;
    const float* w = p.weights + std::size_t(co) * p.cin * 9;
    for (int ci = 0; ci < p.cin; ++ci) {
        const float* in = p.input_padded + ci * plane;
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx)
                acc = std::fma(w[ci * 9 + ky * 3 + kx], in[(y + ky) * wp + x + kx], acc);
    }
    float& o = p.output[std::size_t(co) * p.height * p.width + std::size_t(y) * p.width + x];
    o = p.accumulate ? o + acc : acc;
}

template <int kCo>
void conv_rows(const Conv3x3Args& p, int co) {
    for (int y = 0; y < p.height; ++y) {
        int x = 0;
        for (; x + 16 <= p.width; x += 16) conv_tile<kCo, 2>(p, co, y, x);
        for (; x + 8 <= p.width; x += 8) conv_tile<kCo, 1>(p, co, y, x);
        for (; x < p.width; ++x)
            for (int j = 0; j < kCo; ++j) conv_pixel(p, co + j, y, x);
    }
}

void conv3x3(const Conv3x3Args& p) {
    int co = 0;
    for (; co + 4 <= p.cout; co += 4) conv_rows<4>(p, co);
    for (; co < p.cout; ++co) conv_rows<1>(p, co);
}

inline float hsum(__m256 v) {
    const __m128 lo = _mm256_castps256_ps128(v), hi = _mm256_extractf128_ps(v, 1);
    __m128 s = _mm_add_ps(lo, hi);
    s = _mm_hadd_ps(s, s);
    s = _mm_hadd_ps(s, s);
    return _mm_cvtss_f32(s);
}

void conv3x3_weight_grad(const Conv3x3WeightGradArgs& p) {
    const int wp = p.width + 2;
    const std::size_t plane = std::size_t(p.height + 2) * wp;
    for (int co = 0; co < p.cout; ++co) {
        const float* g = p.grad_output + std::size_t(co) * p.height * p.width;
        for (int ci = 0; ci < p.cin; ++ci) {
            const float* in = p.input_padded + ci * plane;
            __m256 acc[9];
            for (auto& a : acc) a = _mm256_setzero_ps();
            float tail[9] = {};
            for (int y = 0; y < p.height; ++y) {
                const float* grow = g + std::size_t(y) * p.width;
                int x = 0;
                for (; x + 8 <= p.width; x += 8) {
                    const __m256 gv = _mm256_loadu_ps(grow + x);
                    for (int ky = 0; ky < 3; ++ky) {
                        const float* row = in + (y + ky) * wp + x;
                        acc[ky * 3 + 0] = _mm256_fmadd_ps(gv, _mm256_loadu_ps(row + 0), acc[ky * 3 + 0]);
                        acc[ky * 3 + 1] = _mm256_fmadd_ps(gv, _mm256_loadu_ps(row + 1), acc[ky * 3 + 1]);
                        acc[ky * 3 + 2] = _mm256_fmadd_ps(gv, _mm256_loadu_ps(row + 2), acc[ky * 3 + 2]);
                    }
                }
                for (; x < p.width; ++x)
                    for (int k = 0; k < 9; ++k)
                        tail[k] = std::fma(grow[x], in[(y + k / 3) * wp + x + k % 3], tail[k]);
            }
            float* dw = p.grad_weights + (std::size_t(co) * p.cin + ci) * 9;
            for (int k = 0; k < 9; ++k) dw[k] += hsum(acc[k]) + tail[k];
        }
    }
}

// Cephes-style exp for float lanes; relative error about 2 ulp.
inline __m256 exp256(__m256 x) {
    x = _mm256_min_ps(_mm256_max_ps(x, _mm256_set1_ps(-87.3f)), _mm256_set1_ps(88.3f));
    __m256 fx = _mm256_fmadd_ps(x, _mm256_set1_ps(1.44269504088896341f), _mm256_set1_ps(0.5f));
    fx = _mm256_floor_ps(fx);
    x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(0.693359375f), x);
    x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(-2.12194440e-4f), x);
    const __m256 z = _mm256_mul_ps(x, x);
    __m256 y = _mm256_set1_ps(1.9875691500e-4f);
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
    y = _mm256_fmadd_ps(y, z, _mm256_add_ps(x, _mm256_set1_ps(1.0f)));
    const __m256i pow2n =
        _mm256_slli_epi32(_mm256_add_epi32(_mm256_cvttps_epi32(fx), _mm256_set1_epi32(127)), 23);
    return _mm256_mul_ps(y, _mm256_castsi256_ps(pow2n));
}

inline __m256 sigmoid256(__m256 x) {
    const __m256 one = _mm256_set1_ps(1.0f);
    const __m256 e = exp256(_mm256_sub_ps(_mm256_setzero_ps(), x));
    return _mm256_div_ps(one, _mm256_add_ps(one, e));
}

void silu(const float* x, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_loadu_ps(x + i);
        _mm256_storeu_ps(out + i, _mm256_mul_ps(v, sigmoid256(v)));
    }
    for (; i < n; ++i) out[i] = x[i] / (1.0f + std::exp(-x[i]));
}

void silu_backward(const float* x, const float* grad_out, float* grad_in, std::size_t n) {
    const __m256 one = _mm256_set1_ps(1.0f);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_loadu_ps(x + i);
        const __m256 s = sigmoid256(v);
        const __m256 d = _mm256_fmadd_ps(_mm256_mul_ps(v, s), _mm256_sub_ps(one, s), s);
        _mm256_storeu_ps(grad_in + i, _mm256_mul_ps(_mm256_loadu_ps(grad_out + i), d));
    }
    for (; i < n; ++i) {
        const float s = 1.0f / (1.0f + std::exp(-x[i]));
        grad_in[i] = grad_out[i] * (s + x[i] * s * (1.0f - s));
    }
}

}  // namespace

const KernelTable* avx2_table() {
    static const KernelTable t{"avx2", axpby, select, median3, conv3x3, conv3x3_weight_grad,
                               silu, silu_backward};
    return &t;
}

}  // namespace msrepaint::kernels
