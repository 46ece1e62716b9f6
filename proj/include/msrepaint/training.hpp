#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "msrepaint/network.hpp"
#include "msrepaint/rng.hpp"
#include "msrepaint/volume.hpp"

namespace msrepaint {

struct TrainConfig {
    double lesion_weight = 10.0;  ///< loss multiplier inside the lesion mask
    double learning_rate = 3e-4;
    int batch_size = 32;
    int epochs = 300;
    double dropout_prob = 0.25;  ///< per contrast
    std::uint64_t seed = 0;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    /// Decay of the weight moving average copied into the network at the
    /// end of training; 0 keeps the final weights.
    double ema_decay = 0.999;

    /// Throws ParameterError on out-of-range values.
    void validate() const;
};

/// One normalized multicontrast slice and its aligned lesion mask.
struct TrainingSlice {
    Orientation view = Orientation::Axial;
    std::size_t index = 0;  ///< slice index along the view's slicing axis
    int channels = 0, height = 0, width = 0;
    std::vector<float> image;          ///< C * H * W, normalized
    std::vector<std::uint8_t> mask;    ///< H * W
    std::vector<std::uint8_t> present; ///< C
};

/// Extracts axial, coronal and sagittal slices from a raw volume and its
/// lesion mask. Each present contrast is normalized on the whole volume; a
/// voxel is foreground when any present contrast is nonzero in raw units;
/// slices with foreground fraction below `min_foreground` are skipped.
std::vector<TrainingSlice> extract_training_slices(const MultiContrastVolume& raw, const MaskVolume& mask,
                                                   double min_foreground = 0.05);

/// Zeroes each channel of each item independently with probability p. When
/// every channel of an item would be dropped, one channel chosen uniformly is
/// kept. Channels already absent stay absent and never count as kept.
SliceBatch apply_contrast_dropout(const SliceBatch& batch, double p, CounterRng& rng);

struct StepResult {
    double loss = 0.0;          ///< weighted mean squared error
    double weighted_sum = 0.0;  ///< sum of w * (eps - eps_hat)^2 over counted elements
    std::size_t count = 0;      ///< counted elements (present channels x pixels)
};

/// Weighted epsilon loss  sum w (eps - eps_hat)^2 / count  with
/// w = 1 + (lesion_weight - 1) * M, dropped channels excluded. Computed from
/// predictions alone, usable as a reference for the training path.
StepResult weighted_eps_loss(const SliceBatch& batch, std::span<const double> true_eps,
                             std::span<const double> eps_hat, double lesion_weight);

/// Owns the optimizer state for a ConvDenoiser.
class Trainer {
public:
    Trainer(ConvDenoiser& net, TrainConfig cfg);

    /// Forward/backward on one batch and one Adam update. batch.images hold
    /// x_t. Throws NumericalError when the loss is not finite.
    StepResult training_step(const SliceBatch& batch, std::span<const double> true_eps);

    /// Accumulates gradients without updating; returns the unnormalized sums.
    StepResult accumulate(const SliceBatch& batch, std::span<const double> true_eps);
    /// Applies one Adam update from gradients accumulated over `count` elements.
    void apply_update(std::size_t count);

    const TrainConfig& config() const noexcept { return cfg_; }
    long step_count() const noexcept { return step_; }

private:
    ConvDenoiser& net_;
    TrainConfig cfg_;
    long step_ = 0;
};

struct EpochReport {
    int epoch = 0;
    double mean_loss = 0.0;
};

/// Full loop over `slices` for cfg.epochs epochs: shuffle, batch, draw
/// timesteps uniformly in [1, T] and noise, q-sample, apply contrast
/// dropout, step. With ema_decay > 0 the network ends up holding the
/// moving average of its weights. Deterministic given cfg.seed. Non-finite losses abort
/// with the epoch and batch index in the message.
std::vector<EpochReport> train(ConvDenoiser& net, const std::vector<TrainingSlice>& slices,
                               const NoiseSchedule& schedule, const TrainConfig& cfg,
                               const std::function<void(const EpochReport&)>& on_epoch = {});

}  // namespace msrepaint
