#pragma once

#include <optional>
#include <span>
#include <vector>

#include "msrepaint/denoiser.hpp"
#include "msrepaint/schedule.hpp"

namespace msrepaint {

/// Descending DDIM timesteps T, T - stride, ... (floor(T / stride) entries).
/// The reverse transition after the last entry targets t = 0. A stride
/// larger than T yields the single entry {T}.
std::vector<int> build_subsequence(int T, int stride);

struct SamplerConfig {
    std::vector<int> subsequence;         ///< strictly decreasing, within [1, T]
    std::optional<int> truncation_tau;    ///< start of truncated passes; must be in subsequence
    int repaint_repeats = 2;              ///< total passes per timestep
    std::uint64_t seed = 0;
    int threads = 1;                      ///< worker cap for slice-parallel passes
    /// When set, x0 estimates are clamped to [-clip, clip] before mixing.
    std::optional<double> clip_x0;

    void validate(int T) const;
    /// Subsequence entries <= tau.
    std::vector<int> suffix(int tau) const;
};

/// Elementwise x0_hat * M + x0_true * (1 - M), as an exact per-voxel select.
/// `mask` has one entry per pixel and is broadcast over channels.
void repaint_mix_x0(std::span<const double> x0_hat, std::span<const double> x0_true,
                    std::span<const std::uint8_t> mask, std::size_t channels, std::span<double> out);
std::vector<double> repaint_mix_x0(std::span<const double> x0_hat, std::span<const double> x0_true,
                                   std::span<const std::uint8_t> mask, std::size_t channels = 1);

/// One deterministic (eta = 0) DDIM transition for every item of x_t:
/// x0_hat = predict_x0(x_t, eps_hat, t_from); out = sqrt(abar_to) x0_hat +
/// sqrt(1 - abar_to) eps_hat. The batch masks are the denoiser's target
/// conditioning. t_from == t_to returns x_t unchanged.
SliceBatch ddim_step(const SliceBatch& x_t, int t_from, int t_to, const Denoiser& denoiser,
                     const NoiseSchedule& schedule);

/// Inputs to a repaint pass over a stack of slices.
struct RepaintInput {
    const SliceBatch* known = nullptr;              ///< x0_true; its masks are M^target
    std::span<const std::uint8_t> repaint;          ///< M^repaint, B * H * W
    std::vector<std::uint64_t> item_keys;           ///< RNG key per item (defaults to item index)
    std::uint64_t pass_tag = 0;                     ///< separates RNG streams of different passes
};

/// Dual-mask repaint DDIM sampler. Starting at `start` (a subsequence entry;
/// the first entry when unset) from q_sample(x0_true, start, noise), for every
/// remaining timestep t: r times { eps_hat = phi(M^target, x_t; t); x0_hat;
/// x0' = mix(x0_hat, x0_true, M^repaint); re-noise x_t = q_sample(x0', t)
/// between passes }, then advance with the DDIM update from x0'. The result
/// is mix(x0_final, x0_true, M^repaint): voxels outside M^repaint are copied
/// from x0_true. Items whose repaint mask is empty are copied unchanged.
SliceBatch repaint_ddim_sample(const RepaintInput& input, const SamplerConfig& cfg, const Denoiser& denoiser,
                               const NoiseSchedule& schedule, std::optional<int> start = std::nullopt);

/// Re-noises x_start to tau and runs the repaint sampler over the
/// subsequence suffix <= tau, using x_start as x0_true.
SliceBatch truncated_inversion(const RepaintInput& input, int tau, const SamplerConfig& cfg,
                               const Denoiser& denoiser, const NoiseSchedule& schedule);

/// Number of reverse transitions a pass starting at `start` performs.
std::size_t reverse_step_count(const SamplerConfig& cfg, std::optional<int> start = std::nullopt);

}  // namespace msrepaint
