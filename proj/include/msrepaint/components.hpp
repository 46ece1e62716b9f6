#pragma once

#include <vector>

#include "msrepaint/volume.hpp"

namespace msrepaint {

enum class Connectivity : int { Faces = 6, Edges = 18, Corners = 26 };

Connectivity connectivity_from_int(int n);

/// One connected component as ascending linear voxel indices.
struct Component {
    std::vector<std::size_t> voxels;

    std::size_t size() const noexcept { return voxels.size(); }
    friend bool operator==(const Component&, const Component&) = default;
};

/// Labels the foreground of `mask`. Components are ordered by their minimum
/// linear index and together partition the foreground.
std::vector<Component> connected_components(const MaskVolume& mask,
                                            Connectivity connectivity = Connectivity::Corners);

/// Label image: 0 background, 1..N in the order returned by connected_components.
Grid<std::uint32_t> label_components(const MaskVolume& mask,
                                     Connectivity connectivity = Connectivity::Corners);

}  // namespace msrepaint
