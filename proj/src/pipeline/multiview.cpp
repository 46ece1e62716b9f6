#include "msrepaint/multiview.hpp"

#include <algorithm>

#include "msrepaint/errors.hpp"
#include "msrepaint/kernels.hpp"

namespace msrepaint {

std::size_t superset_violations(const MaskVolume& outer, const MaskVolume& inner) {
    require_same_geometry(outer, inner, "superset check");
    std::size_t n = 0;
    for (std::size_t i = 0; i < outer.size(); ++i)
        if (inner[i] && !outer[i]) ++n;
    return n;
}

RepaintMasks RepaintMasks::filling(const MaskVolume& lesions) {
    require_binary(lesions, "lesion mask");
    return {lesions.like<std::uint8_t>(0), lesions};
}

RepaintMasks RepaintMasks::synthesis(const MaskVolume& mask) {
    require_binary(mask, "target mask");
    return {mask, mask};
}

RepaintMasks RepaintMasks::evolution(const MaskVolume& target, const MaskVolume& repaint) {
    require_binary(target, "target mask");
    require_binary(repaint, "repaint mask");
    const std::size_t bad = superset_violations(repaint, target);
    if (bad)
        throw ValidationError("repaint mask must contain the target mask: " + std::to_string(bad) +
                              " target voxels lie outside the repaint mask");
    return {target, repaint};
}

VolumeD median_fuse(const VolumeD& a, const VolumeD& b, const VolumeD& c) {
    require_same_geometry(a, b, "median_fuse");
    require_same_geometry(a, c, "median_fuse");
    VolumeD out = a;
    kernels::active().median3(a.data().data(), b.data().data(), c.data().data(), out.data().data(), out.size());
    return out;
}

Volume median_fuse(const Volume& a, const Volume& b, const Volume& c) {
    require_same_geometry(a, b, "median_fuse");
    require_same_geometry(a, c, "median_fuse");
    auto widen = [](const Volume& v) {
        return VolumeD(v.shape(), std::vector<double>(v.data().begin(), v.data().end()), v.spacing(), v.orientation());
    };
    const VolumeD m = median_fuse(widen(a), widen(b), widen(c));
    Volume out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = float(m[i]);
    return out;
}

namespace {

// Normalized per-contrast working volumes in one view.
struct Stack {
    std::vector<VolumeD> channels;
    std::vector<bool> present;
};

SliceBatch to_batch(const Stack& s, const MaskVolume& target) {
    const Shape3& sh = target.shape();
    SliceBatch b(int(sh.nz), int(s.channels.size()), int(sh.ny), int(sh.nx));
    const std::size_t px = target.slice_size();
    for (std::size_t k = 0; k < sh.nz; ++k) {
        for (std::size_t c = 0; c < s.channels.size(); ++c) {
            const auto src = s.channels[c].slice(k);
            std::copy(src.begin(), src.end(), b.plane(int(k), int(c)).begin());
            b.channel_present[k * s.channels.size() + c] = s.present[c] ? 1 : 0;
        }
        const auto m = target.slice(k);
        std::copy(m.begin(), m.end(), b.mask(int(k)).begin());
    }
    (void)px;
    return b;
}

Stack from_batch(const SliceBatch& b, const Stack& like) {
    Stack out = like;
    for (std::size_t c = 0; c < out.channels.size(); ++c)
        for (std::size_t k = 0; k < out.channels[c].slice_count(); ++k) {
            const auto src = b.plane(int(k), int(c));
            std::copy(src.begin(), src.end(), out.channels[c].slice(k).begin());
        }
    return out;
}

Stack reorient(const Stack& s, Orientation o) {
    Stack out;
    out.present = s.present;
    for (const auto& v : s.channels) out.channels.push_back(msrepaint::reorient(v, o));
    return out;
}

Stack run_view(const Stack& canonical, const RepaintMasks& masks, Orientation view, std::optional<int> tau,
               const SamplerConfig& cfg, const Denoiser& denoiser, const NoiseSchedule& schedule) {
    const Stack in_view = reorient(canonical, view);
    const MaskVolume target = msrepaint::reorient(masks.target, view);
    const MaskVolume repaint = msrepaint::reorient(masks.repaint, view);
    const SliceBatch known = to_batch(in_view, target);
    RepaintInput input;
    input.known = &known;
    input.repaint = repaint.data();
    input.pass_tag = 0x5EED0000ull + std::uint64_t(view);
    SliceBatch out;
    try {
        out = tau ? truncated_inversion(input, *tau, cfg, denoiser, schedule)
                  : repaint_ddim_sample(input, cfg, denoiser, schedule);
    } catch (const Error& e) {
        throw SamplingError(to_string(view) + " view: " + e.what());
    }
    return reorient(from_batch(out, in_view), Orientation::Axial);
}

}  // namespace

MultiviewResult run_multiview(const MultiContrastVolume& input, const RepaintMasks& masks, const SamplerConfig& cfg,
                              const Denoiser& denoiser, const NoiseSchedule& schedule,
                              const MultiviewOptions& options) {
    if (input.channel_count() == 0) throw ShapeError("run_multiview: no contrasts");
    const MultiContrastVolume canonical_input = [&] {
        MultiContrastVolume c;
        for (const auto& ch : input.channels())
            c.add(ch.name, reorient(ch.volume, Orientation::Axial), ch.present);
        return c;
    }();
    const MaskVolume target = reorient(masks.target, Orientation::Axial);
    const MaskVolume repaint = reorient(masks.repaint, Orientation::Axial);
    require_same_geometry(canonical_input.channel(0).volume, target, "run_multiview target mask");
    require_same_geometry(canonical_input.channel(0).volume, repaint, "run_multiview repaint mask");
    require_binary(target, "target mask");
    require_binary(repaint, "repaint mask");
    cfg.validate(schedule.steps());
    const RepaintMasks canon_masks{target, repaint};

    MultiContrastVolume norm = canonical_input;
    norm.normalize_all(options.p_low, options.p_high);
    Stack stack;
    for (const auto& ch : norm.channels()) {
        stack.channels.emplace_back(ch.volume.shape(),
                                    std::vector<double>(ch.volume.data().begin(), ch.volume.data().end()),
                                    ch.volume.spacing(), Orientation::Axial);
        if (!ch.present) std::fill(stack.channels.back().storage().begin(), stack.channels.back().storage().end(), 0.0);
        stack.present.push_back(ch.present);
    }

    const Stack axial = run_view(stack, canon_masks, Orientation::Axial, std::nullopt, cfg, denoiser, schedule);
    Stack fused = axial;
    std::vector<std::pair<Orientation, Stack>> views{{Orientation::Axial, axial}};
    if (options.all_views && cfg.truncation_tau) {
        const Stack coronal =
            run_view(axial, canon_masks, Orientation::Coronal, cfg.truncation_tau, cfg, denoiser, schedule);
        const Stack sagittal =
            run_view(axial, canon_masks, Orientation::Sagittal, cfg.truncation_tau, cfg, denoiser, schedule);
        for (std::size_t c = 0; c < fused.channels.size(); ++c)
            fused.channels[c] = median_fuse(axial.channels[c], coronal.channels[c], sagittal.channels[c]);
        if (options.keep_views) {
            views.emplace_back(Orientation::Coronal, coronal);
            views.emplace_back(Orientation::Sagittal, sagittal);
        }
    }

    // Back to raw intensities; voxels outside the repaint mask are copied
    // from the input untouched.
    auto to_raw = [&](const Stack& s) {
        MultiContrastVolume out;
        for (std::size_t c = 0; c < s.channels.size(); ++c) {
            const auto& src = canonical_input.channel(c);
            Volume v = src.volume;
            if (src.present) {
                const IntensityBounds& b = norm.channel(c).bounds;
                for (std::size_t i = 0; i < v.size(); ++i)
                    if (repaint[i]) v[i] = float(denormalize_value(s.channels[c][i], b));
            }
            out.add(src.name, std::move(v), src.present);
            out.channel(c).bounds = norm.channel(c).bounds;
        }
        return out;
    };

    MultiviewResult result;
    result.fused = to_raw(fused);
    if (options.keep_views)
        for (const auto& [o, s] : views) result.views.push_back({o, to_raw(s)});
    return result;
}

}  // namespace msrepaint
