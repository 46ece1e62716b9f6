#include <doctest.h>

#include <cmath>
#include <random>

#include "msrepaint/components.hpp"
#include "msrepaint/errors.hpp"
#include "msrepaint/phantom.hpp"
#include "test_helpers.hpp"

using namespace msrepaint;

namespace {

PhantomConfig small(std::uint64_t seed, int lesions = 4) {
    PhantomConfig c;
    c.shape = {24, 24, 24};
    c.lesion_count = lesions;
    c.radius_min = 1.5;
    c.radius_max = 2.5;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("no lesions gives identical lesioned and reference volumes") {
    const Phantom p = make_phantom(small(1, 0));
    CHECK(count_foreground(p.lesions) == 0);
    CHECK(count_foreground(p.nawm) == 0);
    for (std::size_t c = 0; c < p.lesioned.channel_count(); ++c)
        CHECK(p.lesioned.channel(c).volume == p.reference.channel(c).volume);
}

TEST_CASE("phantom structure") {
    for (std::uint64_t seed : {2u, 3u, 4u}) {
        for (TissueLayout layout : {TissueLayout::Concentric, TissueLayout::Blobs}) {
            PhantomConfig cfg = small(seed);
            cfg.layout = layout;
            const Phantom p = make_phantom(cfg);
            CAPTURE(seed);
            REQUIRE(p.lesioned.channel_count() == 3);
            CHECK(p.lesioned.channel(0).name == "t1");
            // Lesions are disjoint spheres: at most lesion_count face-connected
            // pieces, bounded total volume.
            const auto comps = connected_components(p.lesions, Connectivity::Faces);
            CHECK(comps.size() >= 1);
            CHECK(comps.size() <= std::size_t(cfg.lesion_count));
            const double n = double(count_foreground(p.lesions));
            CHECK(n >= 4.0 / 3.0 * M_PI * std::pow(cfg.radius_min, 3) * cfg.lesion_count * 0.5);
            CHECK(n <= 4.0 / 3.0 * M_PI * std::pow(cfg.radius_max, 3) * cfg.lesion_count * 1.5);
            for (std::size_t i = 0; i < p.lesions.size(); ++i) {
                if (p.lesions[i]) REQUIRE(p.tissue[i] != Background);
                if (p.nawm[i]) {
                    REQUIRE(!p.lesions[i]);
                    REQUIRE(p.tissue[i] == WhiteMatter);
                }
            }
            CHECK(count_foreground(p.nawm) > 0);
            // Every NAWM voxel is within distance 2 of a lesion.
            const MaskVolume near = dilate(p.lesions, 2);
            for (std::size_t i = 0; i < p.nawm.size(); ++i)
                if (p.nawm[i]) REQUIRE(near[i]);
            for (std::size_t c = 0; c < 3; ++c) {
                const auto& a = p.lesioned.channel(c).volume;
                const auto& b = p.reference.channel(c).volume;
                std::size_t diff = 0;
                for (std::size_t i = 0; i < a.size(); ++i) {
                    if (!p.lesions[i]) REQUIRE(a[i] == b[i]);
                    else diff += a[i] != b[i];
                }
                CHECK(diff == count_foreground(p.lesions));
            }
        }
    }
}

TEST_CASE("lesion contrast direction follows the profile") {
    const Phantom p = make_phantom(small(5, 6));
    for (std::size_t c = 0; c < 3; ++c) {
        const auto& prof = default_contrast_profiles()[c];
        double ls = 0, ns = 0;
        std::size_t ln = 0, nn = 0;
        const auto& v = p.lesioned.channel(c).volume;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (p.lesions[i]) ls += v[i], ++ln;
            if (p.nawm[i]) ns += v[i], ++nn;
        }
        const double diff = ls / double(ln) - ns / double(nn);
        CHECK((prof.lesion_offset > 0 ? diff > 0 : diff < 0));
    }
}

TEST_CASE("phantom generation is deterministic in its config") {
    const Phantom a = make_phantom(small(7)), b = make_phantom(small(7)), c = make_phantom(small(8));
    CHECK(a.lesions == b.lesions);
    CHECK(a.tissue == b.tissue);
    CHECK(a.lesioned.channel(2).volume == b.lesioned.channel(2).volume);
    CHECK_FALSE(a.lesioned.channel(2).volume == c.lesioned.channel(2).volume);
}

TEST_CASE("gamma transform") {
    Volume v(Shape3{3, 1, 1}, std::vector<float>{0.0f, 0.5f, 1.0f});
    const Volume g = gamma_transform(v, 1.5);
    CHECK(g[0] == 0.0f);
    CHECK(g[2] == 1.0f);
    CHECK(g[1] == doctest::Approx(0.353553).epsilon(1e-6));
    CHECK(gamma_transform(v, 1.0) == v);

    std::mt19937_64 gen(1);
    const Volume r = testutil::random_volume({50, 10, 2}, gen, 2.0f, 7.0f);
    const Volume rg = gamma_transform(r, 1.25);
    float lo = r[0], hi = r[0];
    for (float x : r.data()) lo = std::min(lo, x), hi = std::max(hi, x);
    for (std::size_t i = 0; i < r.size(); ++i) {
        REQUIRE(rg[i] <= r[i] + 1e-5f);  // gamma > 1 pulls values down
        for (std::size_t j = 0; j < 20; ++j)
            if (r[i] < r[j]) REQUIRE(rg[i] <= rg[j]);
    }
    MaskVolume m(r.shape());
    m[3] = 1;
    const Volume rm = gamma_transform(r, 1.25, m);
    for (std::size_t i = 0; i < r.size(); ++i) REQUIRE(rm[i] == (i == 3 ? rg[i] : r[i]));

    const Volume flat(Shape3{4, 1, 1}, {1.0, 1.0, 1.0}, Orientation::Axial, 3.0f);
    CHECK(gamma_transform(flat, 1.5) == flat);
    CHECK_THROWS_AS(gamma_transform(v, 0.0), ParameterError);
}

TEST_CASE("rmse normalized by nawm mean") {
    Volume ref(Shape3{4, 4, 1}, {1.0, 1.0, 1.0}, Orientation::Axial, 2.0f);
    Volume fill = ref;
    MaskVolume mask(ref.shape()), nawm(ref.shape());
    mask[0] = mask[1] = 1;
    nawm[5] = nawm[6] = 1;
    fill[0] += 0.5f;
    fill[1] -= 0.5f;
    CHECK(rmse_in_mask(fill, ref, mask, nawm) == doctest::Approx(0.5 / 2.0));
    fill[10] = 100.0f;  // outside the mask: no effect
    CHECK(rmse_in_mask(fill, ref, mask, nawm) == doctest::Approx(0.25));
    CHECK_THROWS_AS(rmse_in_mask(fill, ref, MaskVolume(ref.shape()), nawm), UndefinedMetricError);
    CHECK_THROWS_AS(rmse_in_mask(fill, ref, mask, MaskVolume(ref.shape())), UndefinedMetricError);
    Volume zero(ref.shape());
    CHECK_THROWS_AS(rmse_in_mask(fill, zero, mask, nawm), UndefinedMetricError);
}

TEST_CASE("constant fill baseline") {
    Volume v(Shape3{4, 1, 1}, std::vector<float>{9.0f, 1.0f, 3.0f, 5.0f});
    MaskVolume mask(v.shape()), nawm(v.shape());
    mask[0] = 1;
    nawm[1] = nawm[2] = 1;
    const Volume f = constant_nawm_fill(v, mask, nawm);
    CHECK(f.storage() == std::vector<float>{2.0f, 1.0f, 3.0f, 5.0f});
}

TEST_CASE("interslice total variation") {
    const Shape3 s{3, 4, 5};
    MaskVolume all(s, {1.0, 1.0, 1.0}, Orientation::Axial, 1);
    Volume c(s, {1.0, 1.0, 1.0}, Orientation::Axial, 4.0f);
    for (int a = 0; a < 3; ++a) CHECK(interslice_tv(c, a, all) == 0.0);

    Volume alt(s);
    for (std::size_t z = 0; z < s.nz; ++z)
        for (std::size_t y = 0; y < s.ny; ++y)
            for (std::size_t x = 0; x < s.nx; ++x) alt(x, y, z) = (z % 2) ? 1.0f : -1.0f;
    CHECK(interslice_tv(alt, 2, all) == doctest::Approx(2.0));
    CHECK(interslice_tv(alt, 0, all) == 0.0);
    CHECK(interslice_tv(alt, 2, MaskVolume(s)) == 0.0);

    std::mt19937_64 g(9);
    const Volume r = testutil::random_volume(s, g);
    const MaskVolume m = testutil::random_mask(s, g, 0.6);
    for (int axis = 0; axis < 3; ++axis) {
        double sum = 0;
        std::size_t n = 0;
        for (std::size_t z = 0; z < s.nz; ++z)
            for (std::size_t y = 0; y < s.ny; ++y)
                for (std::size_t x = 0; x < s.nx; ++x) {
                    std::size_t q[3] = {x, y, z};
                    ++q[axis];
                    if (q[0] >= s.nx || q[1] >= s.ny || q[2] >= s.nz) continue;
                    if (!m(x, y, z) || !m(q[0], q[1], q[2])) continue;
                    sum += std::fabs(double(r(x, y, z)) - r(q[0], q[1], q[2]));
                    ++n;
                }
        CHECK(interslice_tv(r, axis, m) == doctest::Approx(sum / double(n)).epsilon(1e-12));
    }
}

TEST_CASE("dilation by a sphere") {
    MaskVolume m(Shape3{7, 7, 7});
    m(3, 3, 3) = 1;
    CHECK(count_foreground(dilate(m, 1)) == 7);
    CHECK(count_foreground(dilate(m, 2)) == 33);
    CHECK(dilate(m, 0) == m);
}

TEST_CASE("invalid phantom configs") {
    PhantomConfig c = small(1);
    c.shape = {6, 24, 24};
    CHECK_THROWS_AS(make_phantom(c), GenerationError);
    c = small(1);
    c.radius_max = 8.0;
    CHECK_THROWS_AS(make_phantom(c), GenerationError);
    c = small(1);
    c.lesion_count = 400;
    c.radius_min = c.radius_max = 2.5;
    CHECK_THROWS_AS(make_phantom(c), GenerationError);
    c = small(1);
    c.radius_min = 3.0;
    c.radius_max = 2.0;
    CHECK_THROWS_AS(make_phantom(c), ParameterError);
    c = small(1);
    c.lesion_count = -1;
    CHECK_THROWS_AS(make_phantom(c), ParameterError);
}
