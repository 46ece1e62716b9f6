#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace msrepaint {

/// Counter-based generator (Philox4x32-10). A stream is identified by the
/// seed plus a tuple of keys such as (slice, timestep, repeat); draws within
/// a stream are a pure function of that identity and the draw position, so
/// serial and parallel execution see identical numbers.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {});

    std::uint32_t next_u32();
    std::uint64_t next_u64();
    /// Uniform in the open interval (0, 1), 53-bit resolution.
    double uniform();
    /// Standard normal (Box-Muller).
    double normal();
    /// Uniform integer in [0, n), n > 0, without modulo bias.
    std::uint64_t below(std::uint64_t n);

    void fill_normal(std::span<double> out);
    void fill_normal(std::span<float> out);

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

    static std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> counter,
                                               std::array<std::uint32_t, 2> key);

private:
    void refill();

    std::array<std::uint32_t, 2> key_{};
    std::array<std::uint32_t, 4> counter_{};
    std::array<std::uint32_t, 4> block_{};
    int used_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// SplitMix64 finalizer, used to derive child seeds from (seed, index).
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace msrepaint
