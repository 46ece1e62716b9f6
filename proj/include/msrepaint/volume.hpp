#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msrepaint/errors.hpp"

namespace msrepaint {

/// Names the axis a volume is currently sliced along. Slices are always
/// taken along the last (slowest) stored axis, so slice k is a contiguous
/// block of shape[0] * shape[1] samples.
enum class Orientation : std::uint8_t { Axial = 0, Coronal = 1, Sagittal = 2 };

std::string to_string(Orientation o);
Orientation orientation_from_string(const std::string& name);

/// For each stored axis, the canonical axis (0 = x, 1 = y, 2 = z) it holds.
std::array<int, 3> canonical_axes(Orientation o);

struct Shape3 {
    std::size_t nx = 1, ny = 1, nz = 1;

    std::size_t size() const noexcept { return nx * ny * nz; }
    std::size_t operator[](int axis) const noexcept {
        return axis == 0 ? nx : (axis == 1 ? ny : nz);
    }
    friend bool operator==(const Shape3&, const Shape3&) = default;
};

std::string to_string(const Shape3& s);

/// Dense 3D grid stored x-fastest: index = x + nx * (y + ny * z).
template <class T>
class Grid {
public:
    Grid() = default;
    Grid(Shape3 shape, std::array<double, 3> spacing = {1.0, 1.0, 1.0},
         Orientation orientation = Orientation::Axial, T fill = T{})
        : shape_(shape), spacing_(spacing), orientation_(orientation),
          data_(shape.size(), fill) {
        if (shape.nx == 0 || shape.ny == 0 || shape.nz == 0)
            throw ShapeError("grid shape components must be >= 1, got " + to_string(shape));
    }
    Grid(Shape3 shape, std::vector<T> data, std::array<double, 3> spacing = {1.0, 1.0, 1.0},
         Orientation orientation = Orientation::Axial)
        : shape_(shape), spacing_(spacing), orientation_(orientation), data_(std::move(data)) {
        if (shape.nx == 0 || shape.ny == 0 || shape.nz == 0)
            throw ShapeError("grid shape components must be >= 1, got " + to_string(shape));
        if (data_.size() != shape.size())
            throw ShapeError("grid payload size does not match shape " + to_string(shape));
    }

    const Shape3& shape() const noexcept { return shape_; }
    const std::array<double, 3>& spacing() const noexcept { return spacing_; }
    Orientation orientation() const noexcept { return orientation_; }
    std::size_t size() const noexcept { return data_.size(); }

    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return x + shape_.nx * (y + shape_.ny * z);
    }
    T& operator()(std::size_t x, std::size_t y, std::size_t z) noexcept { return data_[index(x, y, z)]; }
    const T& operator()(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return data_[index(x, y, z)];
    }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    std::size_t slice_count() const noexcept { return shape_.nz; }
    std::size_t slice_size() const noexcept { return shape_.nx * shape_.ny; }
    std::span<T> slice(std::size_t k) noexcept {
        return std::span<T>(data_).subspan(k * slice_size(), slice_size());
    }
    std::span<const T> slice(std::size_t k) const noexcept {
        return std::span<const T>(data_).subspan(k * slice_size(), slice_size());
    }

    /// Same geometry, new payload type.
    template <class U>
    Grid<U> like(U fill = U{}) const {
        return Grid<U>(shape_, spacing_, orientation_, fill);
    }

    bool same_geometry(const Grid& other) const noexcept {
        return shape_ == other.shape_ && orientation_ == other.orientation_;
    }
    template <class U>
    bool same_geometry(const Grid<U>& other) const noexcept {
        return shape_ == other.shape() && orientation_ == other.orientation();
    }

    friend bool operator==(const Grid& a, const Grid& b) {
        return a.shape_ == b.shape_ && a.orientation_ == b.orientation_ && a.data_ == b.data_;
    }

private:
    Shape3 shape_{};
    std::array<double, 3> spacing_{1.0, 1.0, 1.0};
    Orientation orientation_ = Orientation::Axial;
    std::vector<T> data_;
};

using Volume = Grid<float>;
using MaskVolume = Grid<std::uint8_t>;
/// Working precision for the sampler state.
using VolumeD = Grid<double>;

/// Throws ShapeError unless the shapes and orientations agree.
template <class A, class B>
void require_same_geometry(const Grid<A>& a, const Grid<B>& b, const std::string& context) {
    if (!(a.shape() == b.shape()) || a.orientation() != b.orientation())
        throw ShapeError(context + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

/// Throws NumericalError when any sample is NaN or infinite.
void require_finite(const Volume& v, const std::string& context);
/// Throws FormatError when any value is outside {0, 1}.
void require_binary(const MaskVolume& m, const std::string& context);

std::size_t count_foreground(const MaskVolume& m);

/// Pure axis permutation into the target view. Metadata (shape, spacing,
/// orientation) is permuted consistently; no resampling happens.
template <class T>
Grid<T> reorient(const Grid<T>& v, Orientation target);

/// Per-contrast intensity bounds used to map raw intensities to [-1, 1].
struct IntensityBounds {
    double low = 0.0;
    double high = 0.0;
    friend bool operator==(const IntensityBounds&, const IntensityBounds&) = default;
};

/// Clamp to the [p_low, p_high] percentile range and map affinely to [-1, 1].
/// A constant volume maps to all zeros with bounds (c, c).
std::pair<Volume, IntensityBounds> normalize(const Volume& v, double p_low = 1.0,
                                             double p_high = 99.0);
/// Inverse of normalize on the clamped range.
Volume denormalize(const Volume& v, const IntensityBounds& bounds);
double denormalize_value(double x, const IntensityBounds& bounds);
double normalize_value(double x, const IntensityBounds& bounds);

/// Linear-interpolated percentile (0..100) of the samples.
double percentile(std::span<const float> values, double p);

struct ContrastChannel {
    std::string name;
    Volume volume;
    bool present = true;
    IntensityBounds bounds{};
};

/// Ordered contrasts (e.g. t1, t2, flair) sharing one grid. Absent contrasts
/// keep a zero volume so channel indices stay stable.
class MultiContrastVolume {
public:
    MultiContrastVolume() = default;

    void add(std::string name, Volume v, bool present = true);
    void add_missing(std::string name, const Shape3& shape,
                     std::array<double, 3> spacing = {1.0, 1.0, 1.0});

    std::size_t channel_count() const noexcept { return channels_.size(); }
    const ContrastChannel& channel(std::size_t c) const { return channels_.at(c); }
    ContrastChannel& channel(std::size_t c) { return channels_.at(c); }
    const std::vector<ContrastChannel>& channels() const noexcept { return channels_; }
    std::vector<ContrastChannel>& channels() noexcept { return channels_; }
    std::vector<bool> presence() const;
    /// Index of the named contrast or -1.
    int find(const std::string& name) const;

    const Shape3& shape() const;
    std::array<double, 3> spacing() const;
    Orientation orientation() const;

    /// Normalizes every present contrast in place, recording its bounds.
    void normalize_all(double p_low = 1.0, double p_high = 99.0);
    /// Maps every present contrast back to raw intensities using its bounds.
    MultiContrastVolume denormalized() const;

private:
    std::vector<ContrastChannel> channels_;
};

}  // namespace msrepaint
