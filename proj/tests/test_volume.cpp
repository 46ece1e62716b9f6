#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>

#include "msrepaint/components.hpp"
#include "msrepaint/nifti.hpp"
#include "msrepaint/volume.hpp"
#include "test_helpers.hpp"

using namespace msrepaint;

TEST_CASE("reorient follows the canonical axis table") {
    std::mt19937_64 gen(1);
    const Shape3 s{5, 7, 3};
    Volume v(s, std::array<double, 3>{1.0, 2.0, 3.0});
    for (std::size_t z = 0; z < s.nz; ++z)
        for (std::size_t y = 0; y < s.ny; ++y)
            for (std::size_t x = 0; x < s.nx; ++x) v(x, y, z) = float(100 * x + 10 * y + z);

    for (Orientation o : {Orientation::Axial, Orientation::Coronal, Orientation::Sagittal}) {
        const Volume r = reorient(v, o);
        const auto axes = canonical_axes(o);
        CHECK(r.orientation() == o);
        CHECK(r.shape()[0] == s[axes[0]]);
        CHECK(r.shape()[1] == s[axes[1]]);
        CHECK(r.shape()[2] == s[axes[2]]);
        CHECK(r.spacing()[2] == v.spacing()[std::size_t(axes[2])]);
        // stored (i, j, k) holds canonical coordinate c[axes[0]] = i, ...
        for (std::size_t k = 0; k < r.shape().nz; ++k)
            for (std::size_t j = 0; j < r.shape().ny; ++j)
                for (std::size_t i = 0; i < r.shape().nx; ++i) {
                    std::size_t c[3];
                    c[axes[0]] = i;
                    c[axes[1]] = j;
                    c[axes[2]] = k;
                    REQUIRE(r(i, j, k) == v(c[0], c[1], c[2]));
                }
        CHECK(reorient(r, Orientation::Axial) == v);
        for (Orientation o2 : {Orientation::Axial, Orientation::Coronal, Orientation::Sagittal})
            CHECK(reorient(reorient(r, o2), Orientation::Axial) == v);
    }
}

TEST_CASE("slice k is the contiguous block along the last stored axis") {
    Volume v({2, 3, 4});
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = float(i);
    const auto s = v.slice(2);
    CHECK(s.size() == 6);
    CHECK(s[0] == 12.0f);
    CHECK(s[5] == 17.0f);
}

TEST_CASE("grid rejects empty shapes and mismatched payloads") {
    CHECK_THROWS_AS(Volume({0, 2, 2}), ShapeError);
    CHECK_THROWS_AS(Volume({2, 2, 2}, std::vector<float>(7)), ShapeError);
}

TEST_CASE("percentile matches a sort-based oracle") {
    std::mt19937_64 gen(7);
    for (int trial = 0; trial < 20; ++trial) {
        const Volume v = testutil::random_volume({std::size_t(3 + trial), 4, 5}, gen, -10.0f, 30.0f);
        std::vector<double> sorted(v.data().begin(), v.data().end());
        std::sort(sorted.begin(), sorted.end());
        for (double p : {0.0, 1.0, 37.5, 50.0, 99.0, 100.0}) {
            const double rank = p / 100.0 * double(sorted.size() - 1);
            const std::size_t lo = std::size_t(rank);
            const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
            const double expected = sorted[lo] + (rank - double(lo)) * (sorted[hi] - sorted[lo]);
            CHECK(percentile(v.data(), p) == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("normalize maps the clamped percentile range onto [-1, 1]") {
    std::mt19937_64 gen(3);
    const Volume v = testutil::random_volume({8, 8, 8}, gen, 50.0f, 400.0f);
    const auto [n, b] = normalize(v);
    CHECK(b.low == doctest::Approx(percentile(v.data(), 1.0)));
    CHECK(b.high == doctest::Approx(percentile(v.data(), 99.0)));
    for (float x : n.data()) {
        CHECK(x >= -1.0f);
        CHECK(x <= 1.0f);
    }
    const Volume back = denormalize(n, b);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double clamped = std::clamp(double(v[i]), b.low, b.high);
        REQUIRE(std::fabs(back[i] - clamped) <= 1e-6 * (b.high - b.low) + 1e-4);
    }
}

TEST_CASE("constant volume normalizes to zeros") {
    Volume v({4, 4, 4}, {1, 1, 1}, Orientation::Axial, 3.5f);
    const auto [n, b] = normalize(v);
    CHECK(b.low == 3.5);
    CHECK(b.high == 3.5);
    for (float x : n.data()) CHECK(x == 0.0f);
    const Volume back = denormalize(n, b);
    for (float x : back.data()) CHECK(x == 3.5f);
}

TEST_CASE("multicontrast volume keeps absent channels as zeros") {
    MultiContrastVolume mc;
    mc.add("t1", Volume({4, 4, 4}, {1, 1, 1}, Orientation::Axial, 2.0f));
    mc.add_missing("flair", {4, 4, 4});
    CHECK(mc.channel_count() == 2);
    CHECK(mc.presence() == std::vector<bool>{true, false});
    CHECK(mc.find("flair") == 1);
    CHECK(mc.find("t2") == -1);
    CHECK_THROWS_AS(mc.add("t2", Volume({4, 4, 5})), ShapeError);
    mc.normalize_all();
    for (float x : mc.channel(1).volume.data()) CHECK(x == 0.0f);
}

// ------------------------------------------------------------------ NIfTI

TEST_CASE("NIfTI float and uint8 round trips") {
    const auto dir = testutil::scratch_dir("nifti");
    std::mt19937_64 gen(11);
    Volume v = testutil::random_volume({6, 5, 4}, gen);
    v = Volume(v.shape(), v.storage(), std::array<double, 3>{0.5, 1.0, 2.0});
    nifti::write(dir / "v.nii", v);
    const Volume r = nifti::read(dir / "v.nii");
    CHECK(r == v);
    CHECK(r.spacing() == v.spacing());

    const MaskVolume m = testutil::random_mask({6, 5, 4}, gen, 0.3);
    nifti::write(dir / "m.nii", m);
    CHECK(nifti::read_mask(dir / "m.nii") == m);

    // Non-axial volumes are written in canonical order.
    nifti::write(dir / "c.nii", reorient(v, Orientation::Sagittal));
    CHECK(nifti::read(dir / "c.nii") == v);
}

namespace {

std::string header_bytes(const std::filesystem::path& p) { return testutil::read_bytes(p); }

void write_bytes(const std::filesystem::path& p, const std::string& b) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(b.data(), std::streamsize(b.size()));
}

template <class T>
void poke(std::string& b, std::size_t off, T v) {
    std::memcpy(b.data() + off, &v, sizeof(T));
}

std::string field_of(const std::filesystem::path& p) {
    try {
        nifti::read(p);
    } catch (const FormatError& e) {
        return e.field();
    }
    return "";
}

}  // namespace

TEST_CASE("NIfTI reader names the offending header field") {
    const auto dir = testutil::scratch_dir("nifti_bad");
    nifti::write(dir / "ok.nii", Volume({4, 4, 4}));
    const std::string good = header_bytes(dir / "ok.nii");

    std::string b = good;
    poke<std::int32_t>(b, 0, 100);
    write_bytes(dir / "a.nii", b);
    CHECK(field_of(dir / "a.nii") == "sizeof_hdr");

    b = good;
    poke<std::int32_t>(b, 0, std::int32_t(__builtin_bswap32(348u)));
    write_bytes(dir / "be.nii", b);
    CHECK(field_of(dir / "be.nii") == "sizeof_hdr");

    b = good;
    b[345] = 'i';
    write_bytes(dir / "magic.nii", b);
    CHECK(field_of(dir / "magic.nii") == "magic");

    b = good;
    poke<std::int16_t>(b, 40, 2);
    write_bytes(dir / "dim.nii", b);
    CHECK(field_of(dir / "dim.nii") == "dim");

    b = good.substr(0, good.size() - 10);
    write_bytes(dir / "short.nii", b);
    CHECK_THROWS_AS(nifti::read(dir / "short.nii"), FormatError);

    b = good;
    poke<std::int16_t>(b, 70, 4);  // int16
    poke<std::int16_t>(b, 72, 16);
    write_bytes(dir / "i16.nii", b);
    CHECK_THROWS_AS(nifti::read(dir / "i16.nii"), UnsupportedTypeError);

    CHECK_THROWS_AS(nifti::read(dir / "missing.nii"), Error);
}

TEST_CASE("read_mask rejects non-binary float payloads") {
    const auto dir = testutil::scratch_dir("nifti_mask");
    Volume v({3, 3, 3});
    v[4] = 1.0f;
    nifti::write(dir / "ok.nii", v);
    CHECK(count_foreground(nifti::read_mask(dir / "ok.nii")) == 1);
    v[5] = 0.5f;
    nifti::write(dir / "bad.nii", v);
    CHECK_THROWS_AS(nifti::read_mask(dir / "bad.nii"), FormatError);
}

TEST_CASE("scl_slope is applied") {
    const auto dir = testutil::scratch_dir("nifti_slope");
    Volume v({2, 2, 2}, {1, 1, 1}, Orientation::Axial, 3.0f);
    nifti::write(dir / "v.nii", v);
    std::string b = header_bytes(dir / "v.nii");
    poke<float>(b, 112, 2.0f);
    poke<float>(b, 116, 1.0f);
    write_bytes(dir / "s.nii", b);
    const Volume scaled = nifti::read(dir / "s.nii");
    for (float x : scaled.data()) CHECK(x == 7.0f);
}

// ------------------------------------------------------------------ components

namespace {

// Breadth-first flood fill oracle.
std::vector<std::vector<std::size_t>> flood_fill(const MaskVolume& m, int conn) {
    const Shape3& s = m.shape();
    std::vector<int> seen(m.size(), 0);
    std::vector<std::vector<std::size_t>> comps;
    for (std::size_t start = 0; start < m.size(); ++start) {
        if (!m[start] || seen[start]) continue;
        std::vector<std::size_t> comp;
        std::deque<std::size_t> q{start};
        seen[start] = 1;
        while (!q.empty()) {
            const std::size_t v = q.front();
            q.pop_front();
            comp.push_back(v);
            const long x = long(v % s.nx), y = long((v / s.nx) % s.ny), z = long(v / (s.nx * s.ny));
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nz = std::abs(dx) + std::abs(dy) + std::abs(dz);
                        if (nz == 0 || (conn == 6 && nz > 1) || (conn == 18 && nz > 2)) continue;
                        const long xx = x + dx, yy = y + dy, zz = z + dz;
                        if (xx < 0 || yy < 0 || zz < 0 || xx >= long(s.nx) || yy >= long(s.ny) || zz >= long(s.nz))
                            continue;
                        const std::size_t w = m.index(std::size_t(xx), std::size_t(yy), std::size_t(zz));
                        if (m[w] && !seen[w]) {
                            seen[w] = 1;
                            q.push_back(w);
                        }
                    }
        }
        std::sort(comp.begin(), comp.end());
        comps.push_back(comp);
    }
    return comps;
}

}  // namespace

TEST_CASE("connected components agree with a flood-fill oracle") {
    std::mt19937_64 gen(5);
    for (int trial = 0; trial < 60; ++trial) {
        const MaskVolume m = testutil::random_mask({8, 7, 6}, gen, 0.15 + 0.01 * (trial % 20));
        for (int conn : {6, 18, 26}) {
            const auto got = connected_components(m, connectivity_from_int(conn));
            const auto want = flood_fill(m, conn);
            REQUIRE(got.size() == want.size());
            for (std::size_t i = 0; i < got.size(); ++i) REQUIRE(got[i].voxels == want[i]);
        }
    }
}

TEST_CASE("component labels partition the foreground") {
    std::mt19937_64 gen(9);
    const MaskVolume m = testutil::random_mask({10, 10, 10}, gen, 0.3);
    const auto labels = label_components(m, Connectivity::Faces);
    const auto comps = connected_components(m, Connectivity::Faces);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK((labels[i] == 0) == (m[i] == 0));
    std::size_t total = 0;
    for (std::size_t c = 0; c < comps.size(); ++c) {
        total += comps[c].size();
        for (std::size_t v : comps[c].voxels) REQUIRE(labels[v] == c + 1);
        if (c > 0) CHECK(comps[c].voxels.front() > comps[c - 1].voxels.front());
    }
    CHECK(total == count_foreground(m));
}

TEST_CASE("diagonal neighbours depend on connectivity") {
    MaskVolume m({3, 3, 3});
    m(0, 0, 0) = 1;
    m(1, 1, 0) = 1;  // edge neighbour
    m(2, 2, 1) = 1;  // corner neighbour of (1, 1, 0)
    CHECK(connected_components(m, Connectivity::Faces).size() == 3);
    CHECK(connected_components(m, Connectivity::Edges).size() == 2);
    CHECK(connected_components(m, Connectivity::Corners).size() == 1);
    CHECK(connected_components(MaskVolume({4, 4, 4})).empty());
    CHECK_THROWS_AS(connectivity_from_int(8), ParameterError);
}

TEST_CASE("hand-built uint8 NIfTI mask with one voxel set") {
    // Minimal single-file header written byte by byte.
    std::string b(352 + 27, '\0');
    poke<std::int32_t>(b, 0, 348);
    const std::int16_t dim[8] = {3, 3, 3, 3, 1, 1, 1, 1};
    for (int i = 0; i < 8; ++i) poke<std::int16_t>(b, 40 + 2 * std::size_t(i), dim[i]);
    poke<std::int16_t>(b, 70, 2);  // DT_UNSIGNED_CHAR
    poke<std::int16_t>(b, 72, 8);
    for (int i = 0; i < 8; ++i) poke<float>(b, 76 + 4 * std::size_t(i), 1.0f);
    poke<float>(b, 108, 352.0f);
    std::memcpy(b.data() + 344, "n+1", 4);
    b[352 + 1 + 3 * (2 + 3 * 1)] = 1;  // voxel (1, 2, 1)
    const auto dir = testutil::scratch_dir("nifti_hand");
    write_bytes(dir / "m.nii", b);
    const MaskVolume m = nifti::read_mask(dir / "m.nii");
    CHECK(m.shape() == Shape3{3, 3, 3});
    CHECK(count_foreground(m) == 1);
    CHECK(m(1, 2, 1) == 1);
}
