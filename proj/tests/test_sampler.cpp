#include <doctest.h>

#include <cmath>
#include <random>

#include "msrepaint/errors.hpp"
#include "msrepaint/rng.hpp"
#include "msrepaint/sampler.hpp"

using namespace msrepaint;

namespace {

// Returns a fixed noise field regardless of input.
class FixedEps final : public Denoiser {
public:
    FixedEps(int T, std::vector<double> eps) : T_(T), eps_(std::move(eps)) {}
    int max_timestep() const override { return T_; }
    std::string describe() const override { return "fixed"; }

protected:
    void predict_eps(const SliceBatch&, std::span<double> out) const override {
        std::copy(eps_.begin(), eps_.end(), out.begin());
    }

private:
    int T_;
    std::vector<double> eps_;
};

class NanDenoiser final : public Denoiser {
public:
    int max_timestep() const override { return 1000; }
    std::string describe() const override { return "nan"; }

protected:
    void predict_eps(const SliceBatch&, std::span<double> out) const override {
        std::fill(out.begin(), out.end(), std::nan(""));
    }
};

SliceBatch random_batch(int b, int c, int h, int w, std::mt19937_64& g) {
    SliceBatch s(b, c, h, w);
    std::normal_distribution<double> n;
    for (auto& v : s.images) v = n(g);
    return s;
}

std::vector<std::uint8_t> random_mask(std::size_t n, std::mt19937_64& g, double p) {
    std::bernoulli_distribution d(p);
    std::vector<std::uint8_t> m(n);
    for (auto& v : m) v = d(g);
    return m;
}

SamplerConfig short_config(int T, int stride, int repeats = 2) {
    SamplerConfig c;
    c.subsequence = build_subsequence(T, stride);
    c.repaint_repeats = repeats;
    c.seed = 123;
    return c;
}

}  // namespace

TEST_CASE("DDIM subsequences and step counts") {
    const auto seq = build_subsequence(1000, 10);
    CHECK(seq.size() == 100);
    CHECK(seq.front() == 1000);
    CHECK(seq.back() == 10);
    SamplerConfig c;
    c.subsequence = seq;
    c.truncation_tau = 40;
    CHECK(c.suffix(40) == std::vector<int>{40, 30, 20, 10});
    CHECK(reverse_step_count(c) == 100);
    CHECK(reverse_step_count(c, 40) == 4);
    CHECK(build_subsequence(50, 80) == std::vector<int>{50});
    CHECK(build_subsequence(10, 3) == std::vector<int>{10, 7, 4});
    CHECK_THROWS_AS(build_subsequence(10, 0), ParameterError);
    c.truncation_tau = 45;
    CHECK_THROWS_AS(c.validate(1000), ParameterError);
    c.truncation_tau.reset();
    c.repaint_repeats = 0;
    CHECK_THROWS_AS(c.validate(1000), ParameterError);
}

TEST_CASE("repaint_mix_x0 is an exact per-voxel select broadcast over channels") {
    std::mt19937_64 g(2);
    const auto a = random_batch(1, 3, 4, 5, g).images, b = random_batch(1, 3, 4, 5, g).images;
    const auto m = random_mask(20, g, 0.4);
    const auto out = repaint_mix_x0(a, b, m, 3);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < 20; ++p) CHECK(out[c * 20 + p] == (m[p] ? a[c * 20 + p] : b[c * 20 + p]));
    CHECK_THROWS_AS(repaint_mix_x0(a, b, m, 2), ShapeError);
}

TEST_CASE("one DDIM jump to t = 0 with the true noise recovers x0") {
    const NoiseSchedule sched(1000);
    std::mt19937_64 g(4);
    std::uniform_int_distribution<int> td(1, 1000);
    double worst = 0.0;
    for (int k = 0; k < 200; ++k) {
        SliceBatch x0 = random_batch(1, 2, 4, 4, g);
        const auto eps = random_batch(1, 2, 4, 4, g).images;
        const int t = td(g);
        SliceBatch xt = x0;
        xt.images = q_sample(x0.images, t, eps, sched);
        const FixedEps oracle(1000, eps);
        const SliceBatch out = ddim_step(xt, t, 0, oracle, sched);
        for (std::size_t i = 0; i < out.images.size(); ++i)
            worst = std::max(worst, std::fabs(out.images[i] - x0.images[i]));
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("ddim_step edge cases") {
    const NoiseSchedule sched(100);
    std::mt19937_64 g(5);
    const SliceBatch x = random_batch(2, 1, 3, 3, g);
    const FixedEps zero(100, std::vector<double>(x.images.size(), 0.0));
    CHECK(ddim_step(x, 50, 50, zero, sched).images == x.images);
    CHECK_THROWS_AS(ddim_step(x, 10, 20, zero, sched), ParameterError);
    CHECK_THROWS_AS(ddim_step(x, 0, 0, zero, sched), ParameterError);
    const NanDenoiser nan;
    const NoiseSchedule s1000(1000);
    CHECK_THROWS_AS(ddim_step(x, 10, 0, nan, s1000), NumericalError);
}

TEST_CASE("repaint output equals the input outside M^repaint") {
    const NoiseSchedule sched(100);
    const AnalyticGaussianDenoiser den(sched);
    std::mt19937_64 g(6);
    for (int trial = 0; trial < 10; ++trial) {
        SliceBatch known = random_batch(4, 2, 6, 5, g);
        known.masks = random_mask(known.masks.size(), g, 0.2);
        const auto repaint = random_mask(known.masks.size(), g, 0.3);
        RepaintInput in{&known, repaint, {}, 0};
        const SliceBatch out = repaint_ddim_sample(in, short_config(100, 20), den, sched);
        bool changed = false;
        for (int b = 0; b < known.batch; ++b)
            for (int c = 0; c < known.channels; ++c)
                for (std::size_t p = 0; p < known.pixels(); ++p) {
                    const double o = out.plane(b, c)[p], k = known.plane(b, c)[p];
                    if (!repaint[std::size_t(b) * known.pixels() + p])
                        REQUIRE(o == k);
                    else
                        changed |= o != k;
                }
        CHECK(changed);
    }
}

TEST_CASE("empty repaint mask is a bit-exact no-op") {
    const NoiseSchedule sched(100);
    const AnalyticGaussianDenoiser den(sched);
    std::mt19937_64 g(7);
    const SliceBatch known = random_batch(3, 3, 4, 4, g);
    const std::vector<std::uint8_t> none(known.masks.size(), 0);
    const SliceBatch out = repaint_ddim_sample({&known, none, {}, 0}, short_config(100, 10), den, sched);
    CHECK(out.images == known.images);
}

TEST_CASE("sampling is deterministic and independent of the thread count") {
    const NoiseSchedule sched(100);
    const AnalyticGaussianDenoiser den(sched, 0.2, 0.8);
    std::mt19937_64 g(8);
    const SliceBatch known = random_batch(6, 2, 5, 5, g);
    const auto repaint = random_mask(known.masks.size(), g, 0.5);
    SamplerConfig c = short_config(100, 10);
    const SliceBatch a = repaint_ddim_sample({&known, repaint, {}, 0}, c, den, sched);
    c.threads = 4;
    const SliceBatch b = repaint_ddim_sample({&known, repaint, {}, 0}, c, den, sched);
    CHECK(a.images == b.images);
    c.seed = 124;
    const SliceBatch d = repaint_ddim_sample({&known, repaint, {}, 0}, c, den, sched);
    CHECK(a.images != d.images);
    // Per-item keys decouple an item's noise from its position in the stack.
    const SliceBatch e = repaint_ddim_sample({&known, repaint, {0, 1, 2, 3, 4, 5}, 0}, short_config(100, 10), den, sched);
    CHECK(a.images == e.images);
}

TEST_CASE("dropped channels stay zero") {
    const NoiseSchedule sched(100);
    const AnalyticGaussianDenoiser den(sched);
    std::mt19937_64 g(9);
    SliceBatch known = random_batch(2, 3, 4, 4, g);
    known.channel_present = {1, 0, 1, 1, 1, 0};
    known.zero_dropped();
    const std::vector<std::uint8_t> all(known.masks.size(), 1);
    const SliceBatch out = repaint_ddim_sample({&known, all, {}, 0}, short_config(100, 10), den, sched);
    for (double v : out.plane(0, 1)) CHECK(v == 0.0);
    for (double v : out.plane(1, 2)) CHECK(v == 0.0);
}

TEST_CASE("sampler input validation") {
    const NoiseSchedule sched(100);
    const AnalyticGaussianDenoiser den(sched);
    std::mt19937_64 g(10);
    SliceBatch known = random_batch(1, 1, 3, 3, g);
    std::vector<std::uint8_t> rep(9, 2);
    CHECK_THROWS_AS(repaint_ddim_sample({&known, rep, {}, 0}, short_config(100, 10), den, sched), ParameterError);
    rep.resize(4);
    CHECK_THROWS_AS(repaint_ddim_sample({&known, rep, {}, 0}, short_config(100, 10), den, sched), ShapeError);
    const std::vector<std::uint8_t> all(9, 1);
    const NoiseSchedule s1000(1000);
    const NanDenoiser nan;
    CHECK_THROWS_AS(repaint_ddim_sample({&known, all, {}, 0}, short_config(1000, 100), nan, s1000), NumericalError);
    known.timesteps[0] = 0;
    CHECK_THROWS_AS(den.denoise(known), ParameterError);
}

TEST_CASE("analytic denoiser posterior mean") {
    const NoiseSchedule sched(1000);
    const double mu = 0.3, sigma = 0.5;
    const AnalyticGaussianDenoiser den(sched, mu, sigma);
    for (int t : {1, 100, 700, 1000}) {
        const double ab = sched.effective_alpha_bar(t), x = 0.9;
        const double expect = (sigma * sigma * std::sqrt(ab) * x + (1 - ab) * mu) / (ab * sigma * sigma + 1 - ab);
        CHECK(den.posterior_mean(x, t) == doctest::Approx(expect).epsilon(1e-12));
        SliceBatch b(1, 1, 1, 1);
        b.images[0] = x;
        b.timesteps[0] = t;
        const double eps = den.denoise(b)[0];
        CHECK((x - std::sqrt(1 - ab) * eps) / std::sqrt(ab) == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("full-mask generation with the analytic prior is N(0, 1) (small sample)") {
    const NoiseSchedule sched(1000);
    const AnalyticGaussianDenoiser den(sched);
    const int n = 400;
    SliceBatch known(n, 1, 4, 4);
    const std::vector<std::uint8_t> all(known.masks.size(), 1);
    const SliceBatch out = repaint_ddim_sample({&known, all, {}, 0}, short_config(1000, 10, 1), den, sched);
    double s = 0, s2 = 0;
    for (double v : out.images) {
        s += v;
        s2 += v * v;
    }
    const double m = s / double(out.images.size()), var = s2 / double(out.images.size()) - m * m;
    CHECK(std::fabs(m) < 0.05);
    CHECK(var == doctest::Approx(1.0).epsilon(0.08));
}

TEST_CASE("truncated inversion keeps the input outside M^repaint and starts at tau") {
    const NoiseSchedule sched(1000);
    const AnalyticGaussianDenoiser den(sched);
    std::mt19937_64 g(11);
    const SliceBatch known = random_batch(2, 2, 4, 4, g);
    const auto repaint = random_mask(known.masks.size(), g, 0.5);
    SamplerConfig c = short_config(1000, 10);
    c.truncation_tau = 40;
    const SliceBatch out = truncated_inversion({&known, repaint, {}, 7}, 40, c, den, sched);
    for (int b = 0; b < 2; ++b)
        for (int ch = 0; ch < 2; ++ch)
            for (std::size_t p = 0; p < 16; ++p)
                if (!repaint[std::size_t(b) * 16 + p]) REQUIRE(out.plane(b, ch)[p] == known.plane(b, ch)[p]);
    CHECK_THROWS_AS(truncated_inversion({&known, repaint, {}, 7}, 45, c, den, sched), ParameterError);
}

TEST_CASE("checkerboard select against a loop oracle") {
    std::mt19937_64 g(9);
    const auto a = random_batch(1, 2, 6, 7, g).images, b = random_batch(1, 2, 6, 7, g).images;
    std::vector<std::uint8_t> m(42);
    for (std::size_t y = 0; y < 6; ++y)
        for (std::size_t x = 0; x < 7; ++x) m[y * 7 + x] = (x + y) % 2;
    const auto out = repaint_mix_x0(a, b, m, 2);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t y = 0; y < 6; ++y)
            for (std::size_t x = 0; x < 7; ++x) {
                const std::size_t i = c * 42 + y * 7 + x;
                CHECK(out[i] == ((x + y) % 2 ? a[i] : b[i]));
            }
}

TEST_CASE("repeat count changes voxels only inside M^repaint") {
    const NoiseSchedule sched(100);
    const AnalyticGaussianDenoiser den(sched);
    std::mt19937_64 g(10);
    SliceBatch known = random_batch(3, 2, 6, 6, g);
    const auto m = random_mask(3 * 36, g, 0.4);
    known.masks = m;
    const SliceBatch r1 = repaint_ddim_sample({&known, m, {}, 0}, short_config(100, 10, 1), den, sched);
    const SliceBatch r2 = repaint_ddim_sample({&known, m, {}, 0}, short_config(100, 10, 2), den, sched);
    std::size_t differ = 0;
    for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 2; ++c)
            for (std::size_t p = 0; p < 36; ++p) {
                const std::size_t i = std::size_t(b) * 72 + std::size_t(c) * 36 + p;
                if (!m[std::size_t(b) * 36 + p]) REQUIRE(r1.images[i] == r2.images[i]);
                else differ += r1.images[i] != r2.images[i];
            }
    CHECK(differ > 0);
}

TEST_CASE("half-image repaint: outside exact, inside follows the prior") {
    const NoiseSchedule sched(1000);
    const AnalyticGaussianDenoiser den(sched);
    const int n = 2000;
    std::mt19937_64 g(11);
    SliceBatch known = random_batch(n, 1, 4, 4, g);
    std::vector<std::uint8_t> half(known.masks.size());
    for (std::size_t i = 0; i < half.size(); ++i) half[i] = (i % 16) < 8;
    known.masks = half;
    // r = 1: with a per-voxel prior, extra passes re-noise from the posterior
    // mean and shrink the variance, so only the single-pass sampler is
    // distributed exactly per the prior.
    const SliceBatch out = repaint_ddim_sample({&known, half, {}, 0}, short_config(1000, 10, 1), den, sched);
    double s = 0, s2 = 0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < half.size(); ++i) {
        if (!half[i]) {
            REQUIRE(out.images[i] == known.images[i]);
            continue;
        }
        s += out.images[i];
        s2 += out.images[i] * out.images[i];
        ++cnt;
    }
    const double mean = s / double(cnt), var = s2 / double(cnt) - mean * mean;
    CHECK(std::fabs(mean) < 0.05);
    CHECK(var == doctest::Approx(1.0).epsilon(0.1));
}
