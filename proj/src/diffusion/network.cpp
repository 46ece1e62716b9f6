#include "msrepaint/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "msrepaint/errors.hpp"
#include "msrepaint/kernels.hpp"
#include "msrepaint/rng.hpp"

namespace msrepaint {

namespace {

constexpr char kCheckpointMagic[4] = {'M', 'S', 'R', 'W'};
constexpr std::uint32_t kCheckpointVersion = 1;

void pad_into(const float* src, int channels, int h, int w, float* dst) {
    const int wp = w + 2;
    for (int c = 0; c < channels; ++c) {
        float* plane = dst + std::size_t(c) * (h + 2) * wp;
        for (int y = 0; y < h; ++y)
            std::memcpy(plane + std::size_t(y + 1) * wp + 1, src + (std::size_t(c) * h + y) * w,
                        sizeof(float) * std::size_t(w));
    }
}

std::size_t padded_size(int channels, int h, int w) { return std::size_t(channels) * (h + 2) * (w + 2); }

void add_channel_bias(float* data, const float* bias, int channels, std::size_t pixels) {
    for (int c = 0; c < channels; ++c) {
        float* p = data + c * pixels;
        for (std::size_t i = 0; i < pixels; ++i) p[i] += bias[c];
    }
}

void dense(const Parameter& w, const Parameter& b, const float* in, float* out) {
    const int n_out = w.shape[0], n_in = w.shape[1];
    for (int o = 0; o < n_out; ++o) {
        float acc = b.value[std::size_t(o)];
        for (int i = 0; i < n_in; ++i) acc += w.value[std::size_t(o) * n_in + i] * in[i];
        out[o] = acc;
    }
}

// Accumulates parameter gradients; gin (may be null) receives W^T gout.
void dense_backward(Parameter& w, Parameter& b, const float* in, const float* gout, float* gin) {
    const int n_out = w.shape[0], n_in = w.shape[1];
    for (int o = 0; o < n_out; ++o) {
        b.grad[std::size_t(o)] += gout[o];
        for (int i = 0; i < n_in; ++i) {
            w.grad[std::size_t(o) * n_in + i] += gout[o] * in[i];
            if (gin) gin[i] += w.value[std::size_t(o) * n_in + i] * gout[o];
        }
    }
}

void conv_forward(const Parameter& w, const Parameter& b, const float* in_pad, int h, int wd, float* out) {
    kernels::Conv3x3Args a;
    a.input_padded = in_pad;
    a.weights = w.value.data();
    a.bias = b.value.data();
    a.output = out;
    a.cout = w.shape[0];
    a.cin = w.shape[1];
    a.height = h;
    a.width = wd;
    kernels::active().conv3x3(a);
}

// Parameter gradients are accumulated; when gin is non-null it is
// overwritten with dLoss/d(input) (unpadded).
void conv_backward(Parameter& w, Parameter& b, const float* in_pad, const float* gout, int h, int wd,
                   float* gin) {
    const int cout = w.shape[0], cin = w.shape[1];
    const std::size_t pixels = std::size_t(h) * wd;
    for (int co = 0; co < cout; ++co) {
        float acc = 0.0f;
        for (std::size_t i = 0; i < pixels; ++i) acc += gout[co * pixels + i];
        b.grad[std::size_t(co)] += acc;
    }
    kernels::Conv3x3WeightGradArgs g;
    g.input_padded = in_pad;
    g.grad_output = gout;
    g.grad_weights = w.grad.data();
    g.cin = cin;
    g.cout = cout;
    g.height = h;
    g.width = wd;
    kernels::active().conv3x3_weight_grad(g);
    if (!gin) return;

    // Input gradient is a 3x3 convolution of the padded output gradient with
    // the channel-transposed, spatially flipped kernel.
    std::vector<float> flipped(std::size_t(cin) * cout * 9);
    for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci)
            for (int k = 0; k < 9; ++k)
                flipped[(std::size_t(ci) * cout + co) * 9 + (8 - k)] = w.value[(std::size_t(co) * cin + ci) * 9 + k];
    std::vector<float> gpad(padded_size(cout, h, wd), 0.0f);
    pad_into(gout, cout, h, wd, gpad.data());
    kernels::Conv3x3Args a;
    a.input_padded = gpad.data();
    a.weights = flipped.data();
    a.output = gin;
    a.cin = cout;
    a.cout = cin;
    a.height = h;
    a.width = wd;
    kernels::active().conv3x3(a);
}

void silu(const std::vector<float>& x, std::vector<float>& out) {
    out.resize(x.size());
    kernels::active().silu(x.data(), out.data(), x.size());
}

void silu_backward_inplace(const std::vector<float>& pre, std::vector<float>& grad) {
    kernels::active().silu_backward(pre.data(), grad.data(), grad.data(), grad.size());
}

}  // namespace

std::vector<float> timestep_embedding(int t, int dim) {
    std::vector<float> e(std::size_t(dim), 0.0f);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        e[std::size_t(i)] = float(std::sin(double(t) * freq));
        e[std::size_t(i + half)] = float(std::cos(double(t) * freq));
    }
    return e;
}

struct ConvDenoiser::Activations {
    int h = 0, w = 0, h2 = 0, w2 = 0;
    std::vector<float> emb, pre_h, hid, p1, p2, p3;
    std::vector<float> x_pad, a1, s1_pad, a2, s2, d_pad, a3, s3_pad, a4, s4, c_pad, a5, s5_pad, a6, s6_pad, out;
};

ConvDenoiser::ConvDenoiser(const ConvNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.image_channels < 1 || cfg.base_width < 1 || cfg.time_embedding < 2 || cfg.time_hidden < 1 ||
        cfg.schedule_steps < 1)
        throw ParameterError("invalid network configuration");
    if (!cfg.contrast_names.empty() && int(cfg.contrast_names.size()) != cfg.image_channels)
        throw ParameterError("network: contrast_names must list one name per image channel");
    const int c = cfg.image_channels, f1 = cfg.base_width, f2 = 2 * cfg.base_width;
    const int e = cfg.time_embedding, hd = cfg.time_hidden;
    auto add = [&](const std::string& name, std::vector<int> shape) {
        Parameter p;
        p.name = name;
        p.shape = std::move(shape);
        std::size_t n = 1;
        for (int d : p.shape) n *= std::size_t(d);
        p.value.assign(n, 0.0f);
        p.grad.assign(n, 0.0f);
        p.m.assign(n, 0.0f);
        p.v.assign(n, 0.0f);
        index_[name] = params_.size();
        params_.push_back(std::move(p));
    };
    auto conv = [&](const std::string& name, int cout, int cin) {
        add(name + ".w", {cout, cin, 3, 3});
        add(name + ".b", {cout});
    };
    auto linear = [&](const std::string& name, int out, int in) {
        add(name + ".w", {out, in});
        add(name + ".b", {out});
    };
    linear("time.fc1", hd, e);
    linear("time.proj1", f1, hd);
    linear("time.proj2", f2, hd);
    linear("time.proj3", f1, hd);
    conv("enc1", f1, c + 1);
    conv("enc2", f1, f1);
    conv("mid1", f2, f1);
    conv("mid2", f2, f2);
    conv("dec1", f1, f2 + f1);
    conv("dec2", f1, f1);
    conv("out", c, f1);

    // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); the output conv starts at zero.
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = params_[i];
        if (p.name.rfind("out.", 0) == 0) continue;
        const std::string layer = p.name.substr(0, p.name.rfind('.'));
        const Parameter& w = params_[index_.at(layer + ".w")];
        int fan_in = w.shape[1];
        if (w.shape.size() == 4) fan_in *= 9;
        const double bound = 1.0 / std::sqrt(double(fan_in));
        CounterRng rng(seed, {0x1417ull, i});
        for (float& v : p.value) v = float((2.0 * rng.uniform() - 1.0) * bound);
    }
}

std::size_t ConvDenoiser::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
}

Parameter& ConvDenoiser::parameter(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParameterError("no parameter named '" + name + "'");
    return params_[it->second];
}

std::string ConvDenoiser::describe() const {
    std::ostringstream os;
    os << "conv-denoiser(width=" << cfg_.base_width << ", params=" << parameter_count() << ")";
    return os.str();
}

void ConvDenoiser::zero_grad() {
    for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0f);
}

void ConvDenoiser::run(std::span<const float> input, int height, int width, int t, Activations& a) const {
    const int c = cfg_.image_channels, f1 = cfg_.base_width, f2 = 2 * f1;
    auto P = [&](const char* name) -> const Parameter& { return params_[index_.at(name)]; };
    a.h = height + (height & 1);
    a.w = width + (width & 1);
    a.h2 = a.h / 2;
    a.w2 = a.w / 2;
    const std::size_t full = std::size_t(a.h) * a.w, half = std::size_t(a.h2) * a.w2;

    a.emb = timestep_embedding(t, cfg_.time_embedding);
    a.pre_h.assign(std::size_t(cfg_.time_hidden), 0.0f);
    dense(P("time.fc1.w"), P("time.fc1.b"), a.emb.data(), a.pre_h.data());
    silu(a.pre_h, a.hid);
    a.p1.assign(std::size_t(f1), 0.0f);
    a.p2.assign(std::size_t(f2), 0.0f);
    a.p3.assign(std::size_t(f1), 0.0f);
    dense(P("time.proj1.w"), P("time.proj1.b"), a.hid.data(), a.p1.data());
    dense(P("time.proj2.w"), P("time.proj2.b"), a.hid.data(), a.p2.data());
    dense(P("time.proj3.w"), P("time.proj3.b"), a.hid.data(), a.p3.data());

    a.x_pad.assign(padded_size(c + 1, a.h, a.w), 0.0f);
    for (int ch = 0; ch < c + 1; ++ch) {
        float* plane = a.x_pad.data() + std::size_t(ch) * (a.h + 2) * (a.w + 2);
        for (int y = 0; y < height; ++y)
            std::memcpy(plane + std::size_t(y + 1) * (a.w + 2) + 1,
                        input.data() + (std::size_t(ch) * height + y) * width, sizeof(float) * std::size_t(width));
    }

    std::vector<float> tmp;
    a.a1.assign(f1 * full, 0.0f);
    conv_forward(P("enc1.w"), P("enc1.b"), a.x_pad.data(), a.h, a.w, a.a1.data());
    add_channel_bias(a.a1.data(), a.p1.data(), f1, full);
    silu(a.a1, tmp);
    a.s1_pad.assign(padded_size(f1, a.h, a.w), 0.0f);
    pad_into(tmp.data(), f1, a.h, a.w, a.s1_pad.data());

    a.a2.assign(f1 * full, 0.0f);
    conv_forward(P("enc2.w"), P("enc2.b"), a.s1_pad.data(), a.h, a.w, a.a2.data());
    silu(a.a2, a.s2);

    tmp.assign(f1 * half, 0.0f);
    for (int ch = 0; ch < f1; ++ch)
        for (int y = 0; y < a.h2; ++y)
            for (int x = 0; x < a.w2; ++x) {
                const float* s = a.s2.data() + ch * full + std::size_t(2 * y) * a.w + 2 * x;
                tmp[ch * half + std::size_t(y) * a.w2 + x] = 0.25f * (s[0] + s[1] + s[a.w] + s[a.w + 1]);
            }
    a.d_pad.assign(padded_size(f1, a.h2, a.w2), 0.0f);
    pad_into(tmp.data(), f1, a.h2, a.w2, a.d_pad.data());

    a.a3.assign(f2 * half, 0.0f);
    conv_forward(P("mid1.w"), P("mid1.b"), a.d_pad.data(), a.h2, a.w2, a.a3.data());
    add_channel_bias(a.a3.data(), a.p2.data(), f2, half);
    silu(a.a3, tmp);
    a.s3_pad.assign(padded_size(f2, a.h2, a.w2), 0.0f);
    pad_into(tmp.data(), f2, a.h2, a.w2, a.s3_pad.data());

    a.a4.assign(f2 * half, 0.0f);
    conv_forward(P("mid2.w"), P("mid2.b"), a.s3_pad.data(), a.h2, a.w2, a.a4.data());
    silu(a.a4, a.s4);

    tmp.assign((f2 + f1) * full, 0.0f);
    for (int ch = 0; ch < f2; ++ch)
        for (int y = 0; y < a.h; ++y)
            for (int x = 0; x < a.w; ++x)
                tmp[ch * full + std::size_t(y) * a.w + x] = a.s4[ch * half + std::size_t(y / 2) * a.w2 + x / 2];
    std::copy(a.s2.begin(), a.s2.end(), tmp.begin() + std::ptrdiff_t(f2 * full));
    a.c_pad.assign(padded_size(f2 + f1, a.h, a.w), 0.0f);
    pad_into(tmp.data(), f2 + f1, a.h, a.w, a.c_pad.data());

    a.a5.assign(f1 * full, 0.0f);
    conv_forward(P("dec1.w"), P("dec1.b"), a.c_pad.data(), a.h, a.w, a.a5.data());
    add_channel_bias(a.a5.data(), a.p3.data(), f1, full);
    silu(a.a5, tmp);
    a.s5_pad.assign(padded_size(f1, a.h, a.w), 0.0f);
    pad_into(tmp.data(), f1, a.h, a.w, a.s5_pad.data());

    a.a6.assign(f1 * full, 0.0f);
    conv_forward(P("dec2.w"), P("dec2.b"), a.s5_pad.data(), a.h, a.w, a.a6.data());
    silu(a.a6, tmp);
    a.s6_pad.assign(padded_size(f1, a.h, a.w), 0.0f);
    pad_into(tmp.data(), f1, a.h, a.w, a.s6_pad.data());

    a.out.assign(c * full, 0.0f);
    conv_forward(P("out.w"), P("out.b"), a.s6_pad.data(), a.h, a.w, a.out.data());
}

std::vector<float> ConvDenoiser::forward(std::span<const float> input, int height, int width, int t) const {
    const int c = cfg_.image_channels;
    if (input.size() != std::size_t(c + 1) * height * width) throw ShapeError("conv denoiser: input size mismatch");
    Activations a;
    run(input, height, width, t, a);
    std::vector<float> out(std::size_t(c) * height * width);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < height; ++y)
            std::memcpy(out.data() + (std::size_t(ch) * height + y) * width,
                        a.out.data() + (std::size_t(ch) * a.h + y) * a.w, sizeof(float) * std::size_t(width));
    return out;
}

std::vector<float> ConvDenoiser::forward_backward(
    std::span<const float> input, int height, int width, int t,
    const std::function<void(std::span<const float>, std::span<float>)>& loss_grad) {
    const int c = cfg_.image_channels, f1 = cfg_.base_width, f2 = 2 * f1;
    if (input.size() != std::size_t(c + 1) * height * width) throw ShapeError("conv denoiser: input size mismatch");
    auto P = [&](const char* name) -> Parameter& { return params_[index_.at(name)]; };
    Activations a;
    run(input, height, width, t, a);
    const std::size_t full = std::size_t(a.h) * a.w, half = std::size_t(a.h2) * a.w2;

    std::vector<float> eps(std::size_t(c) * height * width), geps(eps.size(), 0.0f);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < height; ++y)
            std::memcpy(eps.data() + (std::size_t(ch) * height + y) * width,
                        a.out.data() + (std::size_t(ch) * a.h + y) * a.w, sizeof(float) * std::size_t(width));
    loss_grad(eps, geps);
    std::vector<float> gout(c * full, 0.0f);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < height; ++y)
            std::memcpy(gout.data() + (std::size_t(ch) * a.h + y) * a.w,
                        geps.data() + (std::size_t(ch) * height + y) * width, sizeof(float) * std::size_t(width));

    std::vector<float> g6(f1 * full), g5(f1 * full), gc((f2 + f1) * full), g4(f2 * half, 0.0f), g3(f2 * half),
        gd(f1 * half), g2(f1 * full), g1(f1 * full);
    conv_backward(P("out.w"), P("out.b"), a.s6_pad.data(), gout.data(), a.h, a.w, g6.data());
    silu_backward_inplace(a.a6, g6);
    conv_backward(P("dec2.w"), P("dec2.b"), a.s5_pad.data(), g6.data(), a.h, a.w, g5.data());
    silu_backward_inplace(a.a5, g5);
    std::vector<float> gp3(std::size_t(f1), 0.0f), gp2(std::size_t(f2), 0.0f), gp1(std::size_t(f1), 0.0f);
    for (int ch = 0; ch < f1; ++ch)
        for (std::size_t i = 0; i < full; ++i) gp3[std::size_t(ch)] += g5[ch * full + i];
    conv_backward(P("dec1.w"), P("dec1.b"), a.c_pad.data(), g5.data(), a.h, a.w, gc.data());

    for (int ch = 0; ch < f2; ++ch)
        for (int y = 0; y < a.h; ++y)
            for (int x = 0; x < a.w; ++x)
                g4[ch * half + std::size_t(y / 2) * a.w2 + x / 2] += gc[ch * full + std::size_t(y) * a.w + x];
    std::copy(gc.begin() + std::ptrdiff_t(f2 * full), gc.end(), g2.begin());

    silu_backward_inplace(a.a4, g4);
    conv_backward(P("mid2.w"), P("mid2.b"), a.s3_pad.data(), g4.data(), a.h2, a.w2, g3.data());
    silu_backward_inplace(a.a3, g3);
    for (int ch = 0; ch < f2; ++ch)
        for (std::size_t i = 0; i < half; ++i) gp2[std::size_t(ch)] += g3[ch * half + i];
    conv_backward(P("mid1.w"), P("mid1.b"), a.d_pad.data(), g3.data(), a.h2, a.w2, gd.data());
    for (int ch = 0; ch < f1; ++ch)
        for (int y = 0; y < a.h; ++y)
            for (int x = 0; x < a.w; ++x)
                g2[ch * full + std::size_t(y) * a.w + x] += 0.25f * gd[ch * half + std::size_t(y / 2) * a.w2 + x / 2];

    silu_backward_inplace(a.a2, g2);
    conv_backward(P("enc2.w"), P("enc2.b"), a.s1_pad.data(), g2.data(), a.h, a.w, g1.data());
    silu_backward_inplace(a.a1, g1);
    for (int ch = 0; ch < f1; ++ch)
        for (std::size_t i = 0; i < full; ++i) gp1[std::size_t(ch)] += g1[ch * full + i];
    conv_backward(P("enc1.w"), P("enc1.b"), a.x_pad.data(), g1.data(), a.h, a.w, nullptr);

    std::vector<float> ghid(std::size_t(cfg_.time_hidden), 0.0f);
    dense_backward(P("time.proj1.w"), P("time.proj1.b"), a.hid.data(), gp1.data(), ghid.data());
    dense_backward(P("time.proj2.w"), P("time.proj2.b"), a.hid.data(), gp2.data(), ghid.data());
    dense_backward(P("time.proj3.w"), P("time.proj3.b"), a.hid.data(), gp3.data(), ghid.data());
    silu_backward_inplace(a.pre_h, ghid);
    dense_backward(P("time.fc1.w"), P("time.fc1.b"), a.emb.data(), ghid.data(), nullptr);
    return eps;
}

void ConvDenoiser::predict_eps(const SliceBatch& batch, std::span<double> out) const {
    if (batch.channels != cfg_.image_channels)
        throw ShapeError("conv denoiser expects " + std::to_string(cfg_.image_channels) + " channels, got " +
                         std::to_string(batch.channels));
    const std::size_t px = batch.pixels();
    std::vector<float> input(std::size_t(batch.channels + 1) * px);
    for (int b = 0; b < batch.batch; ++b) {
        const auto img = batch.image(b);
        for (std::size_t i = 0; i < img.size(); ++i) input[i] = float(img[i]);
        const auto m = batch.mask(b);
        for (std::size_t i = 0; i < px; ++i) input[img.size() + i] = float(m[i]);
        const auto eps = forward(input, batch.height, batch.width, batch.timesteps[std::size_t(b)]);
        auto dst = out.subspan(b * batch.item_size(), batch.item_size());
        for (std::size_t i = 0; i < eps.size(); ++i) dst[i] = double(eps[i]);
    }
}

void ConvDenoiser::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
    auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    const nlohmann::json meta = {{"image_channels", cfg_.image_channels},   {"base_width", cfg_.base_width},
                                 {"time_embedding", cfg_.time_embedding},   {"time_hidden", cfg_.time_hidden},
                                 {"schedule_steps", cfg_.schedule_steps},   {"schedule_offset", cfg_.schedule_offset},
                                 {"contrast_names", cfg_.contrast_names}};
    const std::string meta_text = meta.dump();
    out.write(kCheckpointMagic, 4);
    u32(kCheckpointVersion);
    u32(std::uint32_t(meta_text.size()));
    out.write(meta_text.data(), std::streamsize(meta_text.size()));
    u32(std::uint32_t(params_.size()));
    for (const auto& p : params_) {
        const auto len = std::uint16_t(p.name.size());
        out.write(reinterpret_cast<const char*>(&len), 2);
        out.write(p.name.data(), len);
        u32(std::uint32_t(p.shape.size()));
        for (int d : p.shape) u32(std::uint32_t(d));
        out.write(reinterpret_cast<const char*>(p.value.data()), std::streamsize(p.value.size() * sizeof(float)));
    }
    if (!out) throw Error("short write to checkpoint '" + path.string() + "'");
}

ConvDenoiser ConvDenoiser::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
    const std::vector<char> buf{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    std::size_t pos = 0;
    auto need = [&](std::size_t n, const char* field) {
        if (pos + n > buf.size()) throw FormatError(field, path.string() + ": checkpoint truncated");
    };
    auto u32 = [&](const char* field) {
        need(4, field);
        std::uint32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    };
    need(4, "magic");
    if (std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) throw FormatError("magic", path.string() + ": not a checkpoint");
    pos = 4;
    const std::uint32_t version = u32("version");
    if (version != kCheckpointVersion)
        throw FormatError("version", path.string() + ": unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t meta_len = u32("meta");
    need(meta_len, "meta");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(buf.begin() + std::ptrdiff_t(pos), buf.begin() + std::ptrdiff_t(pos + meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("meta", path.string() + ": " + e.what());
    }
    pos += meta_len;
    ConvNetConfig cfg;
    try {
        cfg.image_channels = meta.at("image_channels").get<int>();
        cfg.base_width = meta.at("base_width").get<int>();
        cfg.time_embedding = meta.at("time_embedding").get<int>();
        cfg.time_hidden = meta.at("time_hidden").get<int>();
        cfg.schedule_steps = meta.at("schedule_steps").get<int>();
        cfg.schedule_offset = meta.at("schedule_offset").get<double>();
        cfg.contrast_names = meta.value("contrast_names", std::vector<std::string>{});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("meta", path.string() + ": " + e.what());
    }
    ConvDenoiser net(cfg);

    const std::uint32_t count = u32("records");
    if (count != net.params_.size())
        throw FormatError("records", path.string() + ": expected " + std::to_string(net.params_.size()) +
                                         " parameter records, found " + std::to_string(count));
    for (std::uint32_t r = 0; r < count; ++r) {
        need(2, "name");
        std::uint16_t len;
        std::memcpy(&len, buf.data() + pos, 2);
        pos += 2;
        need(len, "name");
        const std::string name(buf.data() + pos, len);
        pos += len;
        Parameter& p = net.parameter(name);
        const std::uint32_t ndim = u32("shape");
        std::vector<int> shape;
        for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(int(u32("shape")));
        if (shape != p.shape) throw FormatError("shape", path.string() + ": shape mismatch for '" + name + "'");
        need(p.value.size() * sizeof(float), "payload");
        std::memcpy(p.value.data(), buf.data() + pos, p.value.size() * sizeof(float));
        pos += p.value.size() * sizeof(float);
    }
    return net;
}

}  // namespace msrepaint
