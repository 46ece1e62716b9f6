#include "msrepaint/volume.hpp"

#include <algorithm>

namespace msrepaint {

std::string to_string(Orientation o) {
    switch (o) {
        case Orientation::Axial: return "axial";
        case Orientation::Coronal: return "coronal";
        case Orientation::Sagittal: return "sagittal";
    }
    return "unknown";
}

Orientation orientation_from_string(const std::string& name) {
    if (name == "axial") return Orientation::Axial;
    if (name == "coronal") return Orientation::Coronal;
    if (name == "sagittal") return Orientation::Sagittal;
    throw ParameterError("unknown orientation '" + name + "'");
}

std::array<int, 3> canonical_axes(Orientation o) {
    switch (o) {
        case Orientation::Axial: return {0, 1, 2};
        case Orientation::Coronal: return {0, 2, 1};
        case Orientation::Sagittal: return {1, 2, 0};
    }
    return {0, 1, 2};
}

std::string to_string(const Shape3& s) {
    return "(" + std::to_string(s.nx) + ", " + std::to_string(s.ny) + ", " + std::to_string(s.nz) + ")";
}

void require_finite(const Volume& v, const std::string& context) {
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!std::isfinite(v[i]))
            throw NumericalError(context + ": non-finite intensity at linear index " + std::to_string(i));
}

void require_binary(const MaskVolume& m, const std::string& context) {
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i] > 1)
            throw FormatError("mask", context + ": value " + std::to_string(int(m[i])) +
                                          " at linear index " + std::to_string(i) + " is not 0 or 1");
}

std::size_t count_foreground(const MaskVolume& m) {
    return static_cast<std::size_t>(std::count_if(m.data().begin(), m.data().end(),
                                                  [](std::uint8_t v) { return v != 0; }));
}

template <class T>
Grid<T> reorient(const Grid<T>& v, Orientation target) {
    if (v.orientation() == target) return v;
    const auto src_axes = canonical_axes(v.orientation());
    const auto dst_axes = canonical_axes(target);
    const Shape3& s = v.shape();
    const std::array<std::size_t, 3> src_dims{s.nx, s.ny, s.nz};
    const std::array<std::size_t, 3> src_stride{1, s.nx, s.nx * s.ny};

    // perm[i]: stored source axis that becomes stored destination axis i.
    std::array<int, 3> perm{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (src_axes[j] == dst_axes[i]) perm[i] = j;

    const Shape3 dst_shape{src_dims[perm[0]], src_dims[perm[1]], src_dims[perm[2]]};
    const std::array<double, 3> dst_spacing{v.spacing()[perm[0]], v.spacing()[perm[1]],
                                            v.spacing()[perm[2]]};
    std::vector<T> out(v.size());
    const std::size_t s0 = src_stride[perm[0]], s1 = src_stride[perm[1]], s2 = src_stride[perm[2]];
    std::size_t o = 0;
    for (std::size_t k = 0; k < dst_shape.nz; ++k)
        for (std::size_t j = 0; j < dst_shape.ny; ++j) {
            const std::size_t base = k * s2 + j * s1;
            for (std::size_t i = 0; i < dst_shape.nx; ++i) out[o++] = v[base + i * s0];
        }
    return Grid<T>(dst_shape, std::move(out), dst_spacing, target);
}

template Grid<float> reorient(const Grid<float>&, Orientation);
template Grid<double> reorient(const Grid<double>&, Orientation);
template Grid<std::uint8_t> reorient(const Grid<std::uint8_t>&, Orientation);

double percentile(std::span<const float> values, double p) {
    if (values.empty()) throw ParameterError("percentile of an empty sample");
    std::vector<float> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * double(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - double(lo);
    return double(sorted[lo]) + frac * (double(sorted[hi]) - double(sorted[lo]));
}

double normalize_value(double x, const IntensityBounds& b) {
    if (!(b.high > b.low)) return 0.0;
    const double c = std::clamp(x, b.low, b.high);
    return 2.0 * (c - b.low) / (b.high - b.low) - 1.0;
}

double denormalize_value(double x, const IntensityBounds& b) {
    if (!(b.high > b.low)) return b.low;
    return b.low + (x + 1.0) * 0.5 * (b.high - b.low);
}

std::pair<Volume, IntensityBounds> normalize(const Volume& v, double p_low, double p_high) {
    if (!(p_low < p_high)) throw ParameterError("normalize: p_low must be < p_high");
    IntensityBounds b{percentile(v.data(), p_low), percentile(v.data(), p_high)};
    Volume out = v;
    for (float& x : out.storage()) x = static_cast<float>(normalize_value(x, b));
    return {std::move(out), b};
}

Volume denormalize(const Volume& v, const IntensityBounds& b) {
    Volume out = v;
    for (float& x : out.storage()) x = static_cast<float>(denormalize_value(x, b));
    return out;
}

void MultiContrastVolume::add(std::string name, Volume v, bool present) {
    if (!channels_.empty() && !v.same_geometry(channels_.front().volume))
        throw ShapeError("contrast '" + name + "' shape " + to_string(v.shape()) +
                         " does not match " + to_string(shape()));
    channels_.push_back({std::move(name), std::move(v), present, {}});
}

void MultiContrastVolume::add_missing(std::string name, const Shape3& shape,
                                      std::array<double, 3> spacing) {
    Orientation o = channels_.empty() ? Orientation::Axial : orientation();
    add(std::move(name), Volume(shape, spacing, o, 0.0f), false);
}

std::vector<bool> MultiContrastVolume::presence() const {
    std::vector<bool> p;
    for (const auto& c : channels_) p.push_back(c.present);
    return p;
}

int MultiContrastVolume::find(const std::string& name) const {
    for (std::size_t i = 0; i < channels_.size(); ++i)
        if (channels_[i].name == name) return int(i);
    return -1;
}

const Shape3& MultiContrastVolume::shape() const {
    if (channels_.empty()) throw ShapeError("multicontrast volume has no channels");
    return channels_.front().volume.shape();
}

std::array<double, 3> MultiContrastVolume::spacing() const {
    if (channels_.empty()) throw ShapeError("multicontrast volume has no channels");
    return channels_.front().volume.spacing();
}

Orientation MultiContrastVolume::orientation() const {
    if (channels_.empty()) throw ShapeError("multicontrast volume has no channels");
    return channels_.front().volume.orientation();
}

void MultiContrastVolume::normalize_all(double p_low, double p_high) {
    for (auto& c : channels_) {
        if (!c.present) continue;
        auto [nv, b] = normalize(c.volume, p_low, p_high);
        c.volume = std::move(nv);
        c.bounds = b;
    }
}

MultiContrastVolume MultiContrastVolume::denormalized() const {
    MultiContrastVolume out = *this;
    for (auto& c : out.channels_)
        if (c.present) c.volume = denormalize(c.volume, c.bounds);
    return out;
}

}  // namespace msrepaint
