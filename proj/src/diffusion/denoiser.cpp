#include "msrepaint/denoiser.hpp"

#include <cmath>
#include <sstream>

#include "msrepaint/errors.hpp"

namespace msrepaint {

SliceBatch::SliceBatch(int b, int c, int h, int w)
    : batch(b), channels(c), height(h), width(w),
      images(std::size_t(b) * c * h * w, 0.0), masks(std::size_t(b) * h * w, 0),
      timesteps(std::size_t(b), 1), channel_present(std::size_t(b) * c, 1) {
    if (b < 0 || c < 1 || h < 1 || w < 1) throw ShapeError("slice batch dimensions must be positive");
}

void SliceBatch::validate() const {
    if (images.size() != std::size_t(batch) * item_size() || masks.size() != std::size_t(batch) * pixels() ||
        timesteps.size() != std::size_t(batch) || channel_present.size() != std::size_t(batch) * channels)
        throw ShapeError("slice batch buffers do not match its dimensions");
    for (std::uint8_t m : masks)
        if (m > 1) throw ParameterError("slice batch mask values must be 0 or 1");
    for (int b = 0; b < batch; ++b) {
        bool any = false;
        for (int c = 0; c < channels; ++c) {
            if (present(b, c)) {
                any = true;
                continue;
            }
            for (double v : plane(b, c))
                if (v != 0.0)
                    throw ParameterError("dropped channel " + std::to_string(c) + " of item " +
                                         std::to_string(b) + " is not zero");
        }
        if (!any) throw ParameterError("item " + std::to_string(b) + " has no channel present");
    }
}

void SliceBatch::zero_dropped() {
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < channels; ++c)
            if (!present(b, c)) std::fill(plane(b, c).begin(), plane(b, c).end(), 0.0);
}

std::vector<double> Denoiser::denoise(const SliceBatch& batch) const {
    std::vector<double> out(batch.images.size());
    denoise(batch, out);
    return out;
}

void Denoiser::denoise(const SliceBatch& batch, std::span<double> out) const {
    batch.validate();
    if (out.size() != batch.images.size()) throw ShapeError("denoise: output buffer size mismatch");
    for (int t : batch.timesteps)
        if (t < 1 || t > max_timestep())
            throw ParameterError("denoise: timestep " + std::to_string(t) + " outside [1, " +
                                 std::to_string(max_timestep()) + "]");
    predict_eps(batch, out);
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!std::isfinite(out[i]))
            throw NumericalError("denoise: non-finite noise estimate at element " + std::to_string(i));
}

AnalyticGaussianDenoiser::AnalyticGaussianDenoiser(const NoiseSchedule& schedule, double mu, double sigma)
    : schedule_(schedule), mu_(mu), sigma_(sigma) {
    if (!(sigma >= 0.0)) throw ParameterError("analytic denoiser: sigma must be >= 0");
}

double AnalyticGaussianDenoiser::posterior_mean(double x_t, int t) const {
    const double ab = schedule_.effective_alpha_bar(t);
    const double var = sigma_ * sigma_;
    return (var * std::sqrt(ab) * x_t + (1.0 - ab) * mu_) / (ab * var + 1.0 - ab);
}

std::string AnalyticGaussianDenoiser::describe() const {
    std::ostringstream os;
    os << "analytic-gaussian(mu=" << mu_ << ", sigma=" << sigma_ << ")";
    return os.str();
}

void AnalyticGaussianDenoiser::predict_eps(const SliceBatch& batch, std::span<double> out) const {
    for (int b = 0; b < batch.batch; ++b) {
        const int t = batch.timesteps[std::size_t(b)];
        const double sa = schedule_.sqrt_alpha_bar(t);
        const double s1 = schedule_.sqrt_one_minus_alpha_bar(t);
        for (int c = 0; c < batch.channels; ++c) {
            const auto x = batch.plane(b, c);
            auto o = out.subspan(b * batch.item_size() + c * batch.pixels(), batch.pixels());
            for (std::size_t i = 0; i < x.size(); ++i)
                o[i] = (x[i] - sa * posterior_mean(x[i], t)) / s1;
        }
    }
}

}  // namespace msrepaint
