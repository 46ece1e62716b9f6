#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "msrepaint/errors.hpp"
#include "msrepaint/network.hpp"
#include "test_helpers.hpp"

using namespace msrepaint;

namespace {

ConvNetConfig tiny() {
    ConvNetConfig c;
    c.image_channels = 2;
    c.base_width = 4;
    c.time_embedding = 8;
    c.time_hidden = 8;
    c.schedule_steps = 100;
    return c;
}

std::vector<float> random_input(int c, int h, int w, std::mt19937& g) {
    std::normal_distribution<float> n;
    std::vector<float> in(std::size_t(c + 1) * h * w);
    for (std::size_t i = 0; i < in.size(); ++i) in[i] = n(g);
    for (std::size_t i = std::size_t(c) * h * w; i < in.size(); ++i) in[i] = in[i] > 0.5f ? 1.0f : 0.0f;
    return in;
}

double half_sq(const std::vector<float>& o, const std::vector<float>& target) {
    double l = 0;
    for (std::size_t i = 0; i < o.size(); ++i) l += 0.5 * (double(o[i]) - target[i]) * (double(o[i]) - target[i]);
    return l;
}

}  // namespace

TEST_CASE("timestep embedding is sin then cos of geometric frequencies") {
    const auto e = timestep_embedding(37, 8);
    for (int i = 0; i < 4; ++i) {
        const double f = std::pow(10000.0, -i / 4.0);
        CHECK(e[std::size_t(i)] == doctest::Approx(std::sin(37 * f)).epsilon(1e-5));
        CHECK(e[std::size_t(i + 4)] == doctest::Approx(std::cos(37 * f)).epsilon(1e-5));
    }
}

TEST_CASE("fresh network predicts zero noise") {
    ConvDenoiser net(tiny(), 3);
    std::mt19937 g(1);
    const auto out = net.forward(random_input(2, 6, 6, g), 6, 6, 50);
    CHECK(out.size() == 2 * 36);
    for (float v : out) CHECK(v == 0.0f);
}

TEST_CASE("analytic gradients match central finite differences") {
    ConvDenoiser net(tiny(), 5);
    std::mt19937 g(2);
    std::normal_distribution<float> n(0.0f, 0.3f);
    for (float& w : net.parameter("out.w").value) w = n(g);
    for (float& w : net.parameter("out.b").value) w = n(g);
    const int h = 6, w = 5, t = 40;  // odd width exercises padding
    const auto in = random_input(2, h, w, g);
    std::vector<float> target(std::size_t(2) * h * w);
    for (auto& v : target) v = n(g);

    net.zero_grad();
    net.forward_backward(in, h, w, t, [&](std::span<const float> o, std::span<float> grad) {
        for (std::size_t i = 0; i < o.size(); ++i) grad[i] = o[i] - target[i];
    });

    std::size_t checked = 0;
    for (auto& p : net.parameters()) {
        CAPTURE(p.name);
        const std::size_t stride = std::max<std::size_t>(1, p.size() / 7);
        for (std::size_t i = 0; i < p.size(); i += stride) {
            const float keep = p.value[i];
            const float eps = 1e-2f;
            p.value[i] = keep + eps;
            const double lp = half_sq(net.forward(in, h, w, t), target);
            p.value[i] = keep - eps;
            const double lm = half_sq(net.forward(in, h, w, t), target);
            p.value[i] = keep;
            const double numeric = (lp - lm) / (2.0 * eps);
            CAPTURE(i);
            CHECK(p.grad[i] == doctest::Approx(numeric).epsilon(3e-2).scale(1.0 + std::fabs(numeric)));
            ++checked;
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("odd slice sizes are supported") {
    ConvDenoiser net(tiny(), 7);
    for (float& w : net.parameter("out.w").value) w = 0.01f;
    std::mt19937 g(3);
    for (auto [h, w] : {std::pair{7, 9}, std::pair{1, 1}, std::pair{3, 2}}) {
        const auto out = net.forward(random_input(2, h, w, g), h, w, 10);
        CHECK(out.size() == std::size_t(2 * h * w));
        for (float v : out) CHECK(std::isfinite(v));
    }
}

TEST_CASE("denoise agrees with forward and checks the channel count") {
    ConvDenoiser net(tiny(), 9);
    std::mt19937 g(4);
    std::normal_distribution<float> n(0.0f, 0.2f);
    for (float& w : net.parameter("out.w").value) w = n(g);
    const auto in = random_input(2, 4, 4, g);
    SliceBatch b(1, 2, 4, 4);
    for (std::size_t i = 0; i < 32; ++i) b.images[i] = in[i];
    for (std::size_t i = 0; i < 16; ++i) b.masks[i] = std::uint8_t(in[32 + i]);
    b.timesteps[0] = 33;
    const auto eps = net.denoise(b);
    const auto ref = net.forward(in, 4, 4, 33);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(eps[i] == double(ref[i]));
    SliceBatch wrong(1, 3, 4, 4);
    wrong.timesteps[0] = 5;
    CHECK_THROWS_AS(net.denoise(wrong), ShapeError);
}

TEST_CASE("checkpoint round trip and corruption") {
    const auto dir = testutil::scratch_dir("ckpt");
    ConvNetConfig cfg = tiny();
    cfg.contrast_names = {"t1", "flair"};
    ConvDenoiser net(cfg, 11);
    std::mt19937 g(5);
    std::normal_distribution<float> n(0.0f, 0.2f);
    for (float& w : net.parameter("out.w").value) w = n(g);
    net.save(dir / "m.ckpt");
    const ConvDenoiser back = ConvDenoiser::load(dir / "m.ckpt");
    CHECK(back.config() == cfg);
    const auto in = random_input(2, 5, 5, g);
    CHECK(back.forward(in, 5, 5, 20) == net.forward(in, 5, 5, 20));

    std::string bytes = testutil::read_bytes(dir / "m.ckpt");
    {
        std::string b = bytes;
        b[0] = 'X';
        std::ofstream(dir / "bad.ckpt", std::ios::binary).write(b.data(), std::streamsize(b.size()));
        try {
            ConvDenoiser::load(dir / "bad.ckpt");
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.field() == "magic");
        }
    }
    {
        const std::string b = bytes.substr(0, bytes.size() - 8);
        std::ofstream(dir / "short.ckpt", std::ios::binary).write(b.data(), std::streamsize(b.size()));
        CHECK_THROWS_AS(ConvDenoiser::load(dir / "short.ckpt"), FormatError);
    }
    cfg.contrast_names = {"t1"};
    CHECK_THROWS_AS(ConvDenoiser(cfg, 1), ParameterError);
}
