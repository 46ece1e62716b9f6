#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "msrepaint/volume.hpp"

namespace msrepaint {

struct Image8 {
    int width = 0, height = 0;
    std::vector<std::uint8_t> pixels;  ///< row-major, top row first
};

/// Renders slice `index` of `v` in `view`. Columns follow the view's first
/// stored axis and rows its second. With lo = level - window / 2 and
/// hi = level + window / 2 a voxel maps to round(255 * clamp((v - lo) /
/// (hi - lo), 0, 1)). Without a window the volume's [min, max] is used, and
/// a level alone recentres that range. A degenerate range renders 128.
/// Throws ParameterError for an out-of-range slice or a non-positive window.
Image8 render_slice(const Volume& v, Orientation view, std::size_t index, std::optional<double> window = std::nullopt,
                    std::optional<double> level = std::nullopt);

/// Binary P5 PGM.
void write_pgm(const std::filesystem::path& path, const Image8& img);

}  // namespace msrepaint
