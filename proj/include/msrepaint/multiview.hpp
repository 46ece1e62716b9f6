#pragma once

#include <optional>

#include "msrepaint/denoiser.hpp"
#include "msrepaint/sampler.hpp"
#include "msrepaint/volume.hpp"

namespace msrepaint {

/// Conditioning mask fed to the denoiser (target) and the region the sampler
/// may modify (repaint).
struct RepaintMasks {
    MaskVolume target;
    MaskVolume repaint;

    /// target = 0, repaint = lesions.
    static RepaintMasks filling(const MaskVolume& lesions);
    /// target = repaint = mask.
    static RepaintMasks synthesis(const MaskVolume& mask);
    /// Requires repaint to contain target; throws ValidationError with the
    /// number of offending voxels otherwise.
    static RepaintMasks evolution(const MaskVolume& target, const MaskVolume& repaint);
};

/// Number of voxels set in `inner` but not in `outer`.
std::size_t superset_violations(const MaskVolume& outer, const MaskVolume& inner);

struct ViewResult {
    Orientation view = Orientation::Axial;
    MultiContrastVolume volume;  ///< raw intensities, canonical orientation
};

struct MultiviewOptions {
    bool all_views = true;  ///< false: axial pass only
    double p_low = 1.0, p_high = 99.0;
    bool keep_views = false;  ///< return the per-view volumes as well
};

struct MultiviewResult {
    MultiContrastVolume fused;       ///< raw intensities
    std::vector<ViewResult> views;   ///< filled when keep_views is set
};

/// Axial repaint pass over the full subsequence, then (when all_views and a
/// truncation tau are set) truncated refinements of the axial result in the
/// coronal and sagittal views, fused by per-voxel median. Without a tau the
/// axial result passes through unchanged. Outside the repaint mask the
/// output equals the input exactly.
MultiviewResult run_multiview(const MultiContrastVolume& input, const RepaintMasks& masks, const SamplerConfig& cfg,
                              const Denoiser& denoiser, const NoiseSchedule& schedule,
                              const MultiviewOptions& options = {});

/// Per-voxel median of three volumes.
Volume median_fuse(const Volume& a, const Volume& b, const Volume& c);
VolumeD median_fuse(const VolumeD& a, const VolumeD& b, const VolumeD& c);

}  // namespace msrepaint
