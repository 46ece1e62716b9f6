#pragma once

// Data-parallel inner loops. Every kernel has a portable scalar reference in
// kernels_scalar.cpp; kernels_avx2.cpp provides AVX2/FMA variants that are
// picked at runtime when the CPU supports them. The two tables are checked
// against each other in tests/test_kernels.cpp.

#include <cstddef>
#include <cstdint>
#include <string>

namespace msrepaint::kernels {

/// 3x3 convolution, stride 1, on a zero-padded input.
struct Conv3x3Args {
    const float* input_padded = nullptr;  ///< [cin][height + 2][width + 2]
    const float* weights = nullptr;       ///< [cout][cin][3][3]
    const float* bias = nullptr;          ///< [cout], may be null
    float* output = nullptr;              ///< [cout][height][width]
    int cin = 0, cout = 0, height = 0, width = 0;
    bool accumulate = false;  ///< add into output instead of overwriting
};

/// grad_weights[co][ci][k] += sum_p grad_output[co][p] * shifted_input[ci][k][p]
struct Conv3x3WeightGradArgs {
    const float* input_padded = nullptr;  ///< [cin][height + 2][width + 2]
    const float* grad_output = nullptr;   ///< [cout][height][width]
    float* grad_weights = nullptr;        ///< [cout][cin][3][3]
    int cin = 0, cout = 0, height = 0, width = 0;
};

struct KernelTable {
    const char* name;

    /// out = a * x + b * y
    void (*axpby)(double a, const double* x, double b, const double* y, double* out, std::size_t n);
    /// out = mask ? a : b  (exact copy, no arithmetic)
    void (*select)(const std::uint8_t* mask, const double* a, const double* b, double* out,
                   std::size_t n);
    /// per-element median of three
    void (*median3)(const double* a, const double* b, const double* c, double* out, std::size_t n);

    void (*conv3x3)(const Conv3x3Args& args);
    void (*conv3x3_weight_grad)(const Conv3x3WeightGradArgs& args);

    /// out = x * sigmoid(x)
    void (*silu)(const float* x, float* out, std::size_t n);
    /// grad_in = grad_out * d/dx silu(x)
    void (*silu_backward)(const float* x, const float* grad_out, float* grad_in, std::size_t n);
};

enum class Isa { Scalar, Avx2 };

const KernelTable& scalar_table();
/// Null when the binary was built without AVX2 support.
const KernelTable* avx2_table();

bool isa_supported(Isa isa);
/// Table for a specific ISA; throws ParameterError when unsupported.
const KernelTable& table(Isa isa);

/// Active table. Defaults to the best supported ISA; the MSREPAINT_ISA
/// environment variable ("scalar" / "avx2") overrides at first use.
const KernelTable& active();
void set_active(Isa isa);
Isa active_isa();
std::string isa_name(Isa isa);

}  // namespace msrepaint::kernels
