#include <doctest.h>

#include <algorithm>
#include <random>

#include "msrepaint/errors.hpp"
#include "msrepaint/multiview.hpp"
#include "test_helpers.hpp"

using namespace msrepaint;

namespace {

Volume vol1(std::vector<float> v) {
    const Shape3 s{v.size(), 1, 1};
    return Volume(s, std::move(v));
}

MultiContrastVolume two_contrasts(Shape3 s, std::mt19937_64& g) {
    MultiContrastVolume m;
    m.add("t1", testutil::random_volume(s, g, 0.0f, 100.0f));
    m.add("flair", testutil::random_volume(s, g, 10.0f, 20.0f));
    return m;
}

SamplerConfig cfg(int T, int stride, std::optional<int> tau) {
    SamplerConfig c;
    c.subsequence = build_subsequence(T, stride);
    c.truncation_tau = tau;
    c.repaint_repeats = 2;
    c.seed = 77;
    return c;
}

}  // namespace

TEST_CASE("median fusion examples") {
    const Volume m = median_fuse(vol1({1, 5, 3, -1}), vol1({2, 4, 3, -2}), vol1({3, 6, 0, -3}));
    CHECK(m.storage() == std::vector<float>{2, 5, 3, -2});
    CHECK_THROWS_AS(median_fuse(vol1({1}), vol1({1, 2}), vol1({1})), ShapeError);
}

TEST_CASE("median fusion matches a sort oracle and is permutation invariant") {
    std::mt19937_64 g(1);
    const Shape3 s{100, 100, 10};
    const Volume a = testutil::random_volume(s, g), b = testutil::random_volume(s, g), c = testutil::random_volume(s, g);
    const Volume m = median_fuse(a, b, c);
    for (std::size_t i = 0; i < m.size(); ++i) {
        std::array<float, 3> v{a[i], b[i], c[i]};
        std::sort(v.begin(), v.end());
        REQUIRE(m[i] == v[1]);
        REQUIRE(m[i] >= std::min({a[i], b[i], c[i]}));
        REQUIRE(m[i] <= std::max({a[i], b[i], c[i]}));
    }
    CHECK(median_fuse(c, a, b) == m);
    CHECK(median_fuse(b, c, a) == m);
    CHECK(median_fuse(a, c, b) == m);
}

TEST_CASE("repaint mask constructors") {
    MaskVolume lesions(Shape3{3, 3, 3});
    lesions(1, 1, 1) = 1;
    const auto f = RepaintMasks::filling(lesions);
    CHECK(count_foreground(f.target) == 0);
    CHECK(f.repaint == lesions);
    const auto s = RepaintMasks::synthesis(lesions);
    CHECK(s.target == lesions);
    CHECK(s.repaint == lesions);

    MaskVolume target = lesions;
    target(0, 0, 0) = 1;
    target(2, 2, 2) = 1;
    CHECK(superset_violations(lesions, target) == 2);
    try {
        RepaintMasks::evolution(target, lesions);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("2 target voxels") != std::string::npos);
    }
    MaskVolume grown = target;
    grown(0, 1, 0) = 1;
    CHECK_NOTHROW(RepaintMasks::evolution(target, grown));
}

TEST_CASE("empty repaint mask returns the input bit-exactly") {
    std::mt19937_64 g(2);
    const Shape3 s{8, 7, 6};
    const auto in = two_contrasts(s, g);
    const NoiseSchedule sched(100);
    const AnalyticGaussianDenoiser den(sched);
    const auto r = run_multiview(in, RepaintMasks::filling(MaskVolume(s)), cfg(100, 10, 40), den, sched);
    for (std::size_t c = 0; c < 2; ++c) CHECK(r.fused.channel(c).volume == in.channel(c).volume);
}

TEST_CASE("voxels outside the repaint mask are preserved; inside they change") {
    std::mt19937_64 g(3);
    const Shape3 s{9, 8, 7};
    const auto in = two_contrasts(s, g);
    const MaskVolume mask = testutil::random_mask(s, g, 0.2);
    const NoiseSchedule sched(100);
    const AnalyticGaussianDenoiser den(sched);
    MultiviewOptions o;
    o.keep_views = true;
    const auto r = run_multiview(in, RepaintMasks::synthesis(mask), cfg(100, 10, 40), den, sched, o);
    REQUIRE(r.views.size() == 3);
    std::size_t changed = 0;
    for (std::size_t c = 0; c < 2; ++c) {
        const auto& out = r.fused.channel(c).volume;
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (!mask[i]) REQUIRE(out[i] == in.channel(c).volume[i]);
            else changed += out[i] != in.channel(c).volume[i];
            // Fused value is the median of the three view results.
            std::array<float, 3> v{r.views[0].volume.channel(c).volume[i], r.views[1].volume.channel(c).volume[i],
                                   r.views[2].volume.channel(c).volume[i]};
            std::sort(v.begin(), v.end());
            REQUIRE(out[i] == v[1]);
        }
    }
    CHECK(changed > count_foreground(mask));
}

TEST_CASE("without truncation the output is the axial pass alone") {
    std::mt19937_64 g(4);
    const Shape3 s{6, 6, 5};
    const auto in = two_contrasts(s, g);
    const MaskVolume mask = testutil::random_mask(s, g, 0.3);
    const NoiseSchedule sched(50);
    const AnalyticGaussianDenoiser den(sched);
    MultiviewOptions o;
    o.keep_views = true;
    const auto none = run_multiview(in, RepaintMasks::synthesis(mask), cfg(50, 5, std::nullopt), den, sched, o);
    REQUIRE(none.views.size() == 1);
    for (std::size_t c = 0; c < 2; ++c) CHECK(none.fused.channel(c).volume == none.views[0].volume.channel(c).volume);

    o.all_views = false;
    const auto axial_only = run_multiview(in, RepaintMasks::synthesis(mask), cfg(50, 5, 20), den, sched, o);
    for (std::size_t c = 0; c < 2; ++c) CHECK(axial_only.fused.channel(c).volume == none.fused.channel(c).volume);
}

TEST_CASE("multiview runs are seed-deterministic and thread-independent") {
    std::mt19937_64 g(5);
    const Shape3 s{7, 6, 5};
    const auto in = two_contrasts(s, g);
    const MaskVolume mask = testutil::random_mask(s, g, 0.3);
    const NoiseSchedule sched(50);
    const AnalyticGaussianDenoiser den(sched);
    auto c1 = cfg(50, 5, 20);
    auto c4 = c1;
    c4.threads = 4;
    const auto a = run_multiview(in, RepaintMasks::synthesis(mask), c1, den, sched);
    const auto b = run_multiview(in, RepaintMasks::synthesis(mask), c4, den, sched);
    CHECK(a.fused.channel(0).volume == b.fused.channel(0).volume);
    c1.seed = 78;
    const auto d = run_multiview(in, RepaintMasks::synthesis(mask), c1, den, sched);
    CHECK_FALSE(a.fused.channel(0).volume == d.fused.channel(0).volume);
}

TEST_CASE("absent contrasts stay zero and geometry is checked") {
    std::mt19937_64 g(6);
    const Shape3 s{5, 5, 4};
    MultiContrastVolume in;
    in.add("t1", testutil::random_volume(s, g, 0.0f, 1.0f));
    in.add_missing("t2", s);
    const MaskVolume mask = testutil::random_mask(s, g, 0.5);
    const NoiseSchedule sched(20);
    const AnalyticGaussianDenoiser den(sched);
    const auto r = run_multiview(in, RepaintMasks::synthesis(mask), cfg(20, 5, 10), den, sched);
    CHECK_FALSE(r.fused.channel(1).present);
    for (float v : r.fused.channel(1).volume.data()) REQUIRE(v == 0.0f);
    CHECK_THROWS_AS(run_multiview(in, RepaintMasks::synthesis(MaskVolume(Shape3{5, 5, 5})), cfg(20, 5, 10), den, sched),
                    ShapeError);
}
