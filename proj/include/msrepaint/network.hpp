#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "msrepaint/denoiser.hpp"

namespace msrepaint {

/// Shape hyperparameters of the time-embedded encoder-decoder.
struct ConvNetConfig {
    int image_channels = 3;   ///< contrasts; the mask adds one input channel
    int base_width = 24;      ///< features at full resolution; 2x at half resolution
    int time_embedding = 32;  ///< sinusoidal embedding size
    int time_hidden = 64;
    int schedule_steps = 1000;
    double schedule_offset = NoiseSchedule::kDefaultOffset;
    std::vector<std::string> contrast_names;  ///< channel order, informational
    friend bool operator==(const ConvNetConfig&, const ConvNetConfig&) = default;
};

/// One learnable tensor with its gradient and Adam moments.
struct Parameter {
    std::string name;
    std::vector<int> shape;
    std::vector<float> value, grad, m, v;
    std::size_t size() const noexcept { return value.size(); }
};

/// Two-level encoder-decoder with a skip connection:
///
///   [x_t | M] -> conv -> conv ----------------------------(skip)-+
///                          \-> avgpool -> conv -> conv -> upsample -> concat -> conv -> conv -> conv -> eps
///
/// Every conv is 3x3 with SiLU except the last. A sinusoidal embedding of t
/// goes through a hidden layer and is added as a per-channel bias after the
/// first conv of each level. Odd slice sizes are zero-padded to even.
class ConvDenoiser final : public Denoiser {
public:
    explicit ConvDenoiser(const ConvNetConfig& cfg, std::uint64_t seed = 0);

    const ConvNetConfig& config() const noexcept { return cfg_; }
    std::size_t parameter_count() const;
    std::vector<Parameter>& parameters() noexcept { return params_; }
    const std::vector<Parameter>& parameters() const noexcept { return params_; }
    Parameter& parameter(const std::string& name);

    int max_timestep() const override { return cfg_.schedule_steps; }
    std::string describe() const override;

    /// Forward + backward for one item. grad_eps holds dLoss/d(eps_hat)
    /// (C * H * W); parameter gradients are accumulated. Returns eps_hat.
    std::vector<float> forward_backward(std::span<const float> input, int height, int width, int t,
                                        const std::function<void(std::span<const float>, std::span<float>)>& loss_grad);

    /// Forward only, float input [C + 1][H][W] -> eps [C][H][W].
    std::vector<float> forward(std::span<const float> input, int height, int width, int t) const;

    void zero_grad();

    void save(const std::filesystem::path& path) const;
    static ConvDenoiser load(const std::filesystem::path& path);

protected:
    void predict_eps(const SliceBatch& batch, std::span<double> out) const override;

private:
    struct Activations;
    void run(std::span<const float> input, int height, int width, int t, Activations& act) const;

    ConvNetConfig cfg_;
    std::vector<Parameter> params_;
    std::map<std::string, std::size_t> index_;
};

/// Sinusoidal timestep embedding (sin half, then cos half).
std::vector<float> timestep_embedding(int t, int dim);

}  // namespace msrepaint
