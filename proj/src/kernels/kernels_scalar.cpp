#include <algorithm>
#include <cmath>

#include "msrepaint/kernels.hpp"

namespace msrepaint::kernels {
namespace {

void axpby(double a, const double* x, double b, const double* y, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i] + b * y[i];
}

void select(const std::uint8_t* mask, const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = mask[i] ? a[i] : b[i];
}

void median3(const double* a, const double* b, const double* c, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        out[i] = std::max(std::min(a[i], b[i]), std::min(std::max(a[i], b[i]), c[i]));
}

void conv3x3(const Conv3x3Args& p) {
    const int wp = p.width + 2;
    const std::size_t plane = std::size_t(p.height + 2) * wp;
    for (int co = 0; co < p.cout; ++co) {
        float* out = p.output + std::size_t(co) * p.height * p.width;
        const float* w = p.weights + std::size_t(co) * p.cin * 9;
        for (int y = 0; y < p.height; ++y)
            for (int x = 0; x < p.width; ++x) {
                float acc = p.bias ? p.bias[co] : 0.0f;
                for (int ci = 0; ci < p.cin; ++ci) {
                    const float* in = p.input_padded + ci * plane;
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx)
                            acc += w[ci * 9 + ky * 3 + kx] * in[(y + ky) * wp + x + kx];
                }
                float& o = out[y * p.width + x];
                o = p.accumulate ? o + acc : acc;
            }
    }
}

void conv3x3_weight_grad(const Conv3x3WeightGradArgs& p) {
    const int wp = p.width + 2;
    const std::size_t plane = std::size_t(p.height + 2) * wp;
    for (int co = 0; co < p.cout; ++co) {
        const float* g = p.grad_output + std::size_t(co) * p.height * p.width;
        for (int ci = 0; ci < p.cin; ++ci) {
            const float* in = p.input_padded + ci * plane;
            float* dw = p.grad_weights + (std::size_t(co) * p.cin + ci) * 9;
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    float acc = 0.0f;
                    for (int y = 0; y < p.height; ++y)
                        for (int x = 0; x < p.width; ++x)
                            acc += g[y * p.width + x] * in[(y + ky) * wp + x + kx];
                    dw[ky * 3 + kx] += acc;
                }
        }
    }
}

void silu(const float* x, float* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] / (1.0f + std::exp(-x[i]));
}

void silu_backward(const float* x, const float* grad_out, float* grad_in, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const float s = 1.0f / (1.0f + std::exp(-x[i]));
        grad_in[i] = grad_out[i] * (s + x[i] * s * (1.0f - s));
    }
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable t{"scalar", axpby, select, median3, conv3x3, conv3x3_weight_grad,
                               silu, silu_backward};
    return t;
}

}  // namespace msrepaint::kernels
