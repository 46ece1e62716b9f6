#include "msrepaint/rng.hpp"

#include <cmath>
#include <numbers>

namespace msrepaint {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    return mix64(mix64(seed) ^ (index * 0xD1B54A32D192ED03ull));
}

CounterRng::CounterRng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
    key_ = {std::uint32_t(seed), std::uint32_t(seed >> 32)};
    std::uint64_t h = 0x6A09E667F3BCC909ull;
    for (std::uint64_t k : stream) h = mix64(h ^ k);
    counter_ = {0, 0, std::uint32_t(h), std::uint32_t(h >> 32)};
}

std::array<std::uint32_t, 4> CounterRng::philox(std::array<std::uint32_t, 4> c,
                                                std::array<std::uint32_t, 2> k) {
    constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
    constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = std::uint64_t(kM0) * c[0];
        const std::uint64_t p1 = std::uint64_t(kM1) * c[2];
        c = {std::uint32_t(p1 >> 32) ^ c[1] ^ k[0], std::uint32_t(p1),
             std::uint32_t(p0 >> 32) ^ c[3] ^ k[1], std::uint32_t(p0)};
        k[0] += kW0;
        k[1] += kW1;
    }
    return c;
}

void CounterRng::refill() {
    block_ = philox(counter_, key_);
    if (++counter_[0] == 0) ++counter_[1];
    used_ = 0;
}

std::uint32_t CounterRng::next_u32() {
    if (used_ == 4) refill();
    return block_[std::size_t(used_++)];
}

std::uint64_t CounterRng::next_u64() {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
}

double CounterRng::uniform() {
    return (double(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

double CounterRng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double theta = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::uint64_t CounterRng::below(std::uint64_t n) {
    const std::uint64_t limit = (~std::uint64_t(0)) - (~std::uint64_t(0)) % n;
    for (;;) {
        const std::uint64_t v = next_u64();
        if (v < limit) return v % n;
    }
}

void CounterRng::fill_normal(std::span<double> out) {
    for (double& v : out) v = normal();
}

void CounterRng::fill_normal(std::span<float> out) {
    for (float& v : out) v = float(normal());
}

}  // namespace msrepaint
