#include "msrepaint/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "msrepaint/errors.hpp"
#include "msrepaint/kernels.hpp"
#include "msrepaint/parallel.hpp"
#include "msrepaint/rng.hpp"

namespace msrepaint {

std::vector<int> build_subsequence(int T, int stride) {
    if (T < 1) throw ParameterError("subsequence: T must be >= 1");
    if (stride < 1) throw ParameterError("subsequence: stride must be >= 1, got " + std::to_string(stride));
    if (stride > T) return {T};
    std::vector<int> seq;
    for (int k = 0; k < T / stride; ++k) seq.push_back(T - k * stride);
    return seq;
}

void SamplerConfig::validate(int T) const {
    if (subsequence.empty()) throw ParameterError("sampler: empty subsequence");
    for (std::size_t i = 0; i < subsequence.size(); ++i) {
        if (subsequence[i] < 1 || subsequence[i] > T)
            throw ParameterError("sampler: subsequence entry " + std::to_string(subsequence[i]) + " outside [1, T]");
        if (i > 0 && subsequence[i] >= subsequence[i - 1])
            throw ParameterError("sampler: subsequence must be strictly decreasing");
    }
    if (truncation_tau && std::find(subsequence.begin(), subsequence.end(), *truncation_tau) == subsequence.end())
        throw ParameterError("sampler: truncation tau " + std::to_string(*truncation_tau) +
                             " is not a subsequence entry");
    if (repaint_repeats < 1) throw ParameterError("sampler: repaint_repeats must be >= 1");
    if (threads < 1) throw ParameterError("sampler: threads must be >= 1");
    if (clip_x0 && !(*clip_x0 > 0.0)) throw ParameterError("sampler: clip_x0 must be positive");
}

std::vector<int> SamplerConfig::suffix(int tau) const {
    if (std::find(subsequence.begin(), subsequence.end(), tau) == subsequence.end())
        throw ParameterError("sampler: tau " + std::to_string(tau) + " is not a subsequence entry");
    std::vector<int> out;
    for (int t : subsequence)
        if (t <= tau) out.push_back(t);
    return out;
}

std::size_t reverse_step_count(const SamplerConfig& cfg, std::optional<int> start) {
    return start ? cfg.suffix(*start).size() : cfg.subsequence.size();
}

void repaint_mix_x0(std::span<const double> x0_hat, std::span<const double> x0_true,
                    std::span<const std::uint8_t> mask, std::size_t channels, std::span<double> out) {
    if (x0_hat.size() != x0_true.size() || out.size() != x0_hat.size() || mask.size() * channels != x0_hat.size())
        throw ShapeError("repaint_mix_x0: shape mismatch");
    const auto& k = kernels::active();
    for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t off = c * mask.size();
        k.select(mask.data(), x0_hat.data() + off, x0_true.data() + off, out.data() + off, mask.size());
    }
}

std::vector<double> repaint_mix_x0(std::span<const double> x0_hat, std::span<const double> x0_true,
                                   std::span<const std::uint8_t> mask, std::size_t channels) {
    std::vector<double> out(x0_hat.size());
    repaint_mix_x0(x0_hat, x0_true, mask, channels, out);
    return out;
}

SliceBatch ddim_step(const SliceBatch& x_t, int t_from, int t_to, const Denoiser& denoiser,
                     const NoiseSchedule& schedule) {
    schedule.require_timestep(t_from, 1);
    schedule.require_timestep(t_to, 0);
    if (t_to > t_from) throw ParameterError("ddim_step: t_to must not exceed t_from");
    if (t_to == t_from) return x_t;
    SliceBatch in = x_t;
    std::fill(in.timesteps.begin(), in.timesteps.end(), t_from);
    const auto eps = denoiser.denoise(in);
    const auto x0 = predict_x0_from_eps(in.images, eps, t_from, schedule);
    SliceBatch out = in;
    std::fill(out.timesteps.begin(), out.timesteps.end(), t_to);
    kernels::active().axpby(schedule.sqrt_alpha_bar(t_to), x0.data(), schedule.sqrt_one_minus_alpha_bar(t_to),
                            eps.data(), out.images.data(), out.images.size());
    for (std::size_t i = 0; i < out.images.size(); ++i)
        if (!std::isfinite(out.images[i]))
            throw NumericalError("ddim_step: non-finite value at timestep " + std::to_string(t_from));
    out.zero_dropped();
    return out;
}

namespace {

constexpr std::uint64_t kInitialNoise = ~std::uint64_t(0);

void require_finite(std::span<const double> v, int t, const char* what) {
    for (double x : v)
        if (!std::isfinite(x))
            throw NumericalError(std::string("repaint sampler: non-finite ") + what + " at timestep " +
                                 std::to_string(t));
}

}  // namespace

SliceBatch repaint_ddim_sample(const RepaintInput& input, const SamplerConfig& cfg, const Denoiser& denoiser,
                               const NoiseSchedule& schedule, std::optional<int> start) {
    if (!input.known) throw ParameterError("repaint sampler: no input batch");
    const SliceBatch& known = *input.known;
    known.validate();
    cfg.validate(schedule.steps());
    if (input.repaint.size() != known.masks.size())
        throw ShapeError("repaint sampler: repaint mask does not match the slice stack");
    if (!input.item_keys.empty() && input.item_keys.size() != std::size_t(known.batch))
        throw ShapeError("repaint sampler: one RNG key per item required");
    for (std::uint8_t m : input.repaint)
        if (m > 1) throw ParameterError("repaint sampler: repaint mask values must be 0 or 1");

    const std::vector<int> steps = start ? cfg.suffix(*start) : cfg.subsequence;
    const std::size_t px = known.pixels(), n = known.item_size();
    const auto& k = kernels::active();
    SliceBatch result = known;

    parallel_for(std::size_t(known.batch), cfg.threads, [&](std::size_t item) {
        const int b = int(item);
        const auto repaint = input.repaint.subspan(item * px, px);
        if (std::none_of(repaint.begin(), repaint.end(), [](std::uint8_t v) { return v != 0; })) return;
        const std::uint64_t key = input.item_keys.empty() ? item : input.item_keys[item];

        SliceBatch x(1, known.channels, known.height, known.width);
        const auto x0_true = known.image(b);
        std::copy(known.mask(b).begin(), known.mask(b).end(), x.masks.begin());
        for (int c = 0; c < known.channels; ++c) x.channel_present[std::size_t(c)] = known.present(b, c) ? 1 : 0;

        std::vector<double> noise(n), eps(n), x0_hat(n), x0_mix(n);
        {
            CounterRng rng(cfg.seed, {input.pass_tag, key, std::uint64_t(steps.front()), kInitialNoise});
            rng.fill_normal(noise);
            q_sample(x0_true, steps.front(), noise, schedule, x.images);
            x.zero_dropped();
        }

        for (std::size_t si = 0; si < steps.size(); ++si) {
            const int t = steps[si];
            const int t_next = si + 1 < steps.size() ? steps[si + 1] : 0;
            x.timesteps[0] = t;
            for (int rep = 0; rep < cfg.repaint_repeats; ++rep) {
                denoiser.denoise(x, eps);
                predict_x0_from_eps(x.images, eps, t, schedule, x0_hat);
                if (cfg.clip_x0)
                    for (double& v : x0_hat) v = std::clamp(v, -*cfg.clip_x0, *cfg.clip_x0);
                repaint_mix_x0(x0_hat, x0_true, repaint, std::size_t(known.channels), x0_mix);
                require_finite(x0_mix, t, "x0 estimate");
                if (rep + 1 < cfg.repaint_repeats) {
                    CounterRng rng(cfg.seed, {input.pass_tag, key, std::uint64_t(t), std::uint64_t(rep)});
                    rng.fill_normal(noise);
                    q_sample(x0_mix, t, noise, schedule, x.images);
                    x.zero_dropped();
                }
            }
            k.axpby(schedule.sqrt_alpha_bar(t_next), x0_mix.data(), schedule.sqrt_one_minus_alpha_bar(t_next),
                    eps.data(), x.images.data(), n);
            x.zero_dropped();
            require_finite(x.images, t, "sample");
        }
        repaint_mix_x0(x0_mix, x0_true, repaint, std::size_t(known.channels), result.image(b));
    });
    result.zero_dropped();
    return result;
}

SliceBatch truncated_inversion(const RepaintInput& input, int tau, const SamplerConfig& cfg,
                               const Denoiser& denoiser, const NoiseSchedule& schedule) {
    return repaint_ddim_sample(input, cfg, denoiser, schedule, tau);
}

}  // namespace msrepaint
