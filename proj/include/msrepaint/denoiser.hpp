#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msrepaint/schedule.hpp"

namespace msrepaint {

/// A stack of B multicontrast 2D slices with their conditioning masks: the
/// unit of denoiser input and output. Layout is item-major, then channel,
/// then row (height), then column (width).
struct SliceBatch {
    int batch = 0, channels = 0, height = 0, width = 0;
    std::vector<double> images;             ///< B * C * H * W
    std::vector<std::uint8_t> masks;        ///< B * H * W, values {0, 1}
    std::vector<int> timesteps;             ///< B
    std::vector<std::uint8_t> channel_present;  ///< B * C

    SliceBatch() = default;
    SliceBatch(int b, int c, int h, int w);

    std::size_t pixels() const noexcept { return std::size_t(height) * width; }
    std::size_t item_size() const noexcept { return std::size_t(channels) * pixels(); }

    std::span<double> image(int b) { return std::span<double>(images).subspan(b * item_size(), item_size()); }
    std::span<const double> image(int b) const {
        return std::span<const double>(images).subspan(b * item_size(), item_size());
    }
    std::span<double> plane(int b, int c) {
        return std::span<double>(images).subspan(b * item_size() + c * pixels(), pixels());
    }
    std::span<const double> plane(int b, int c) const {
        return std::span<const double>(images).subspan(b * item_size() + c * pixels(), pixels());
    }
    std::span<std::uint8_t> mask(int b) { return std::span<std::uint8_t>(masks).subspan(b * pixels(), pixels()); }
    std::span<const std::uint8_t> mask(int b) const {
        return std::span<const std::uint8_t>(masks).subspan(b * pixels(), pixels());
    }
    bool present(int b, int c) const { return channel_present[std::size_t(b) * channels + c] != 0; }

    /// Checks sizes, mask values, the at-least-one-channel rule and that
    /// dropped channels are exactly zero. Throws ShapeError / ParameterError.
    void validate() const;
    /// Zeroes every dropped channel.
    void zero_dropped();
};

/// Noise-prediction interface: eps_hat = phi(M, x_t; t).
class Denoiser {
public:
    virtual ~Denoiser() = default;

    /// Validates the batch, then predicts the noise for every item.
    /// Timesteps outside [1, T] raise ParameterError; non-finite output
    /// raises NumericalError.
    std::vector<double> denoise(const SliceBatch& batch) const;
    void denoise(const SliceBatch& batch, std::span<double> out) const;

    virtual int max_timestep() const = 0;
    virtual std::string describe() const = 0;

protected:
    virtual void predict_eps(const SliceBatch& batch, std::span<double> out) const = 0;
};

/// Exact minimum-MSE noise predictor for an independent per-voxel Gaussian
/// prior x0 ~ N(mu, sigma^2). Its x0 estimate is the posterior mean
///   E[x0 | x_t] = (sigma^2 sqrt(abar) x_t + (1 - abar) mu) / (abar sigma^2 + 1 - abar),
/// which gives closed-form references for sampler tests.
class AnalyticGaussianDenoiser final : public Denoiser {
public:
    AnalyticGaussianDenoiser(const NoiseSchedule& schedule, double mu = 0.0, double sigma = 1.0);

    double posterior_mean(double x_t, int t) const;
    int max_timestep() const override { return schedule_.steps(); }
    std::string describe() const override;

protected:
    void predict_eps(const SliceBatch& batch, std::span<double> out) const override;

private:
    const NoiseSchedule& schedule_;
    double mu_, sigma_;
};

}  // namespace msrepaint
