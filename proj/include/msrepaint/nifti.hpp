#pragma once

#include <filesystem>

#include "msrepaint/volume.hpp"

namespace msrepaint::nifti {

inline constexpr std::int32_t kHeaderSize = 348;
inline constexpr std::int32_t kVoxOffset = 352;
inline constexpr std::int16_t kDtUint8 = 2;
inline constexpr std::int16_t kDtFloat32 = 16;

/// Reads a single-file NIfTI-1 volume (float32 or uint8 payload). uint8 data
/// is widened to float. Raises FormatError naming the offending header field
/// and UnsupportedTypeError for other datatypes.
Volume read(const std::filesystem::path& path);

/// Reads a mask. Accepts uint8 payloads, and float32 payloads whose values
/// are exactly 0 or 1.
MaskVolume read_mask(const std::filesystem::path& path);

/// Writes float32 (datatype 16). Volumes in a non-axial view are permuted
/// back to the canonical axis order first.
void write(const std::filesystem::path& path, const Volume& v);
/// Writes uint8 (datatype 2).
void write(const std::filesystem::path& path, const MaskVolume& m);

}  // namespace msrepaint::nifti
