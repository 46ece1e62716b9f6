#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msrepaint/volume.hpp"

namespace msrepaint {

enum class TissueLayout { Concentric, Blobs };
TissueLayout tissue_layout_from_string(const std::string& s);
std::string to_string(TissueLayout l);

/// Tissue labels of the phantom.
enum Tissue : std::uint8_t { Background = 0, Csf = 1, GreyMatter = 2, WhiteMatter = 3 };

struct TissueStats {
    double mean = 0.0;
    double std = 0.0;
};

struct ContrastProfile {
    std::string name;
    TissueStats csf, gm, wm;
    /// Lesion mean = wm.mean + lesion_offset * wm.std; the lesion keeps the
    /// white-matter noise.
    double lesion_offset = 0.0;

    double lesion_mean() const { return wm.mean + lesion_offset * wm.std; }
};

/// T1w-like (hypointense lesions), T2w-like and FLAIR-like (hyperintense).
std::vector<ContrastProfile> default_contrast_profiles();

struct PhantomConfig {
    Shape3 shape{32, 32, 32};
    TissueLayout layout = TissueLayout::Concentric;
    std::vector<ContrastProfile> contrasts = default_contrast_profiles();
    int lesion_count = 6;
    double radius_min = 1.5, radius_max = 3.0;
    double gamma = 1.0;
    std::uint64_t seed = 0;

    /// Throws ParameterError for invalid values and GenerationError when the
    /// lesion radii cannot fit in the grid.
    void validate() const;
};

struct Phantom {
    MultiContrastVolume lesioned;
    MultiContrastVolume reference;  ///< lesion-free
    MaskVolume lesions;
    MaskVolume nawm;
    Grid<std::uint8_t> tissue;      ///< Tissue labels
};

/// Deterministic in cfg. Lesions are non-overlapping spheres centred in white
/// matter; lesioned and reference differ only inside the lesion mask. The
/// gamma transform is applied to the lesion voxels of the lesioned image,
/// using the unit mapping of that image's full intensity range.
Phantom make_phantom(const PhantomConfig& cfg);

/// Voxelwise lo + (hi - lo) * u^gamma with u = (x - lo) / (hi - lo) and
/// [lo, hi] the volume's intensity range. A constant volume is returned as is.
Volume gamma_transform(const Volume& v, double gamma);
/// Same mapping (range taken over the whole volume) applied only where mask is set.
Volume gamma_transform(const Volume& v, double gamma, const MaskVolume& mask);

/// Sphere dilation of radius `r` voxels.
MaskVolume dilate(const MaskVolume& m, int r);
/// dilate(lesions, 2) minus lesions, restricted to white matter.
MaskVolume nawm_shell(const MaskVolume& lesions, const Grid<std::uint8_t>& tissue);

/// RMSE over mask voxels divided by the mean reference intensity over nawm.
/// Empty mask, empty nawm or a zero normalizer raise UndefinedMetricError.
double rmse_in_mask(const Volume& filled, const Volume& reference, const MaskVolume& mask, const MaskVolume& nawm);

/// Mean |v(p) - v(p + e_axis)| over adjacent pairs with both voxels in mask
/// (canonical axes, 0 = x). Returns 0 when there is no such pair.
double interslice_tv(const Volume& v, int axis, const MaskVolume& mask);

/// Baseline: every mask voxel set to the mean of v over nawm.
Volume constant_nawm_fill(const Volume& v, const MaskVolume& mask, const MaskVolume& nawm);

}  // namespace msrepaint
