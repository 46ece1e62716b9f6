#include <atomic>
#include <cstdlib>
#include <string>

#include "msrepaint/errors.hpp"
#include "msrepaint/kernels.hpp"

namespace msrepaint::kernels {

#ifndef MSREPAINT_HAVE_AVX2
const KernelTable* avx2_table() { return nullptr; }
#endif

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Isa best_isa() {
    if (const char* env = std::getenv("MSREPAINT_ISA")) {
        const std::string want(env);
        if (want == "scalar") return Isa::Scalar;
        if (want == "avx2" && isa_supported(Isa::Avx2)) return Isa::Avx2;
    }
    return isa_supported(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<const KernelTable*>& slot() {
    static std::atomic<const KernelTable*> s{&table(best_isa())};
    return s;
}

}  // namespace

bool isa_supported(Isa isa) {
    if (isa == Isa::Scalar) return true;
    static const bool avx2 = avx2_table() != nullptr && cpu_has_avx2();
    return avx2;
}

const KernelTable& table(Isa isa) {
    if (!isa_supported(isa)) throw ParameterError("kernel ISA '" + isa_name(isa) + "' not supported here");
    return isa == Isa::Avx2 ? *avx2_table() : scalar_table();
}

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

void set_active(Isa isa) { slot().store(&table(isa), std::memory_order_release); }

Isa active_isa() { return &active() == &scalar_table() ? Isa::Scalar : Isa::Avx2; }

std::string isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

}  // namespace msrepaint::kernels
