#include "msrepaint/training.hpp"

#include <cmath>
#include <map>
#include <numeric>

#include "msrepaint/errors.hpp"

namespace msrepaint {

void TrainConfig::validate() const {
    if (!(lesion_weight >= 1.0)) throw ParameterError("lesion_weight must be >= 1");
    if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be > 0");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ParameterError("ema_decay must be in [0, 1)");
    if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
    if (epochs < 0) throw ParameterError("epochs must be >= 0");
    if (!(dropout_prob >= 0.0 && dropout_prob < 1.0)) throw ParameterError("dropout_prob must be in [0, 1)");
}

std::vector<TrainingSlice> extract_training_slices(const MultiContrastVolume& raw, const MaskVolume& mask,
                                                   double min_foreground) {
    require_same_geometry(raw.channel(0).volume, mask, "extract_training_slices");
    MultiContrastVolume norm = raw;
    norm.normalize_all();
    const int channels = int(raw.channel_count());

    MaskVolume foreground = mask.like<std::uint8_t>(0);
    for (const auto& ch : raw.channels()) {
        if (!ch.present) continue;
        for (std::size_t i = 0; i < foreground.size(); ++i)
            if (ch.volume[i] != 0.0f) foreground[i] = 1;
    }

    std::vector<TrainingSlice> out;
    for (Orientation view : {Orientation::Axial, Orientation::Coronal, Orientation::Sagittal}) {
        const MaskVolume fg = reorient(foreground, view);
        const MaskVolume m = reorient(mask, view);
        std::vector<Volume> vols;
        for (const auto& ch : norm.channels()) vols.push_back(reorient(ch.volume, view));
        const std::size_t px = fg.slice_size();
        for (std::size_t k = 0; k < fg.slice_count(); ++k) {
            const auto f = fg.slice(k);
            const double frac = double(std::count(f.begin(), f.end(), std::uint8_t(1))) / double(px);
            if (frac < min_foreground || frac == 0.0) continue;
            TrainingSlice s;
            s.view = view;
            s.index = k;
            s.channels = channels;
            s.height = int(fg.shape().ny);
            s.width = int(fg.shape().nx);
            s.image.resize(std::size_t(channels) * px);
            for (int c = 0; c < channels; ++c) {
                const auto src = vols[std::size_t(c)].slice(k);
                std::copy(src.begin(), src.end(), s.image.begin() + std::ptrdiff_t(c * px));
            }
            const auto ms = m.slice(k);
            s.mask.assign(ms.begin(), ms.end());
            for (const auto& ch : raw.channels()) s.present.push_back(ch.present ? 1 : 0);
            out.push_back(std::move(s));
        }
    }
    return out;
}

SliceBatch apply_contrast_dropout(const SliceBatch& batch, double p, CounterRng& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout probability must be in [0, 1)");
    SliceBatch out = batch;
    if (p == 0.0) return out;
    for (int b = 0; b < out.batch; ++b) {
        std::vector<int> available;
        for (int c = 0; c < out.channels; ++c)
            if (out.present(b, c)) available.push_back(c);
        if (available.size() <= 1) continue;
        std::vector<int> kept;
        for (int c : available)
            if (rng.uniform() >= p) kept.push_back(c);
        if (kept.empty()) kept.push_back(available[rng.below(available.size())]);
        for (int c : available) {
            if (std::find(kept.begin(), kept.end(), c) != kept.end()) continue;
            out.channel_present[std::size_t(b) * out.channels + c] = 0;
            auto plane = out.plane(b, c);
            std::fill(plane.begin(), plane.end(), 0.0);
        }
    }
    return out;
}

StepResult weighted_eps_loss(const SliceBatch& batch, std::span<const double> true_eps,
                             std::span<const double> eps_hat, double lesion_weight) {
    if (true_eps.size() != batch.images.size() || eps_hat.size() != batch.images.size())
        throw ShapeError("loss: eps size does not match the batch");
    StepResult r;
    const std::size_t px = batch.pixels();
    for (int b = 0; b < batch.batch; ++b) {
        const auto m = batch.mask(b);
        for (int c = 0; c < batch.channels; ++c) {
            if (!batch.present(b, c)) continue;
            const std::size_t off = b * batch.item_size() + c * px;
            for (std::size_t i = 0; i < px; ++i) {
                const double w = 1.0 + (lesion_weight - 1.0) * m[i];
                const double d = true_eps[off + i] - eps_hat[off + i];
                r.weighted_sum += w * d * d;
            }
            r.count += px;
        }
    }
    r.loss = r.count ? r.weighted_sum / double(r.count) : 0.0;
    return r;
}

Trainer::Trainer(ConvDenoiser& net, TrainConfig cfg) : net_(net), cfg_(cfg) { cfg_.validate(); }

StepResult Trainer::accumulate(const SliceBatch& batch, std::span<const double> true_eps) {
    batch.validate();
    if (true_eps.size() != batch.images.size()) throw ShapeError("training_step: eps size does not match the batch");
    if (batch.channels != net_.config().image_channels) throw ShapeError("training_step: channel count mismatch");
    StepResult total;
    const std::size_t px = batch.pixels();
    std::size_t count = 0;
    for (int b = 0; b < batch.batch; ++b)
        for (int c = 0; c < batch.channels; ++c)
            if (batch.present(b, c)) count += px;
    // Gradients are scaled by the batch element count so one update equals
    // the gradient of the batch mean.
    const double scale = count ? 2.0 / double(count) : 0.0;

    std::vector<float> input(std::size_t(batch.channels + 1) * px);
    for (int b = 0; b < batch.batch; ++b) {
        const auto img = batch.image(b);
        for (std::size_t i = 0; i < img.size(); ++i) input[i] = float(img[i]);
        const auto m = batch.mask(b);
        for (std::size_t i = 0; i < px; ++i) input[img.size() + i] = float(m[i]);
        const auto eps = true_eps.subspan(b * batch.item_size(), batch.item_size());
        net_.forward_backward(input, batch.height, batch.width, batch.timesteps[std::size_t(b)],
                              [&](std::span<const float> eps_hat, std::span<float> grad) {
                                  for (int c = 0; c < batch.channels; ++c) {
                                      if (!batch.present(b, c)) continue;
                                      for (std::size_t i = 0; i < px; ++i) {
                                          const std::size_t k = c * px + i;
                                          const double w = 1.0 + (cfg_.lesion_weight - 1.0) * m[i];
                                          const double d = double(eps_hat[k]) - eps[k];
                                          total.weighted_sum += w * d * d;
                                          grad[k] = float(scale * w * d);
                                      }
                                      total.count += px;
                                  }
                              });
    }
    total.loss = total.count ? total.weighted_sum / double(total.count) : 0.0;
    if (!std::isfinite(total.loss)) throw NumericalError("training loss is not finite");
    return total;
}

void Trainer::apply_update(std::size_t) {
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, double(step_));
    const auto b1 = float(cfg_.beta1), b2 = float(cfg_.beta2);
    for (auto& p : net_.parameters()) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            const float g = p.grad[i];
            p.m[i] = b1 * p.m[i] + (1.0f - b1) * g;
            p.v[i] = b2 * p.v[i] + (1.0f - b2) * g * g;
            const double mhat = p.m[i] / c1, vhat = p.v[i] / c2;
            p.value[i] -= float(cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.adam_eps));
        }
    }
    net_.zero_grad();
}

StepResult Trainer::training_step(const SliceBatch& batch, std::span<const double> true_eps) {
    net_.zero_grad();
    const StepResult r = accumulate(batch, true_eps);
    apply_update(r.count);
    return r;
}

std::vector<EpochReport> train(ConvDenoiser& net, const std::vector<TrainingSlice>& slices,
                               const NoiseSchedule& schedule, const TrainConfig& cfg,
                               const std::function<void(const EpochReport&)>& on_epoch) {
    cfg.validate();
    if (slices.empty()) throw ParameterError("train: no training slices");
    if (schedule.steps() != net.config().schedule_steps)
        throw ParameterError("train: schedule length does not match the network configuration");
    Trainer trainer(net, cfg);
    std::vector<EpochReport> reports;
    std::vector<std::vector<float>> shadow;
    if (cfg.ema_decay > 0.0)
        for (const auto& p : net.parameters()) shadow.push_back(p.value);

    // Slices of different sizes cannot share a batch; group by (H, W).
    std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < slices.size(); ++i) groups[{slices[i].height, slices[i].width}].push_back(i);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        CounterRng order_rng(cfg.seed, {0xE90C4ull, std::uint64_t(epoch)});
        std::vector<std::vector<std::size_t>> batches;
        for (auto& [dims, members] : groups) {
            std::vector<std::size_t> idx = members;
            order_rng.shuffle(idx);
            for (std::size_t s = 0; s < idx.size(); s += std::size_t(cfg.batch_size))
                batches.emplace_back(idx.begin() + std::ptrdiff_t(s),
                                     idx.begin() + std::ptrdiff_t(std::min(idx.size(), s + std::size_t(cfg.batch_size))));
        }
        order_rng.shuffle(batches);

        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const auto& members = batches[bi];
            const TrainingSlice& first = slices[members.front()];
            SliceBatch batch(int(members.size()), first.channels, first.height, first.width);
            std::vector<double> eps(batch.images.size());
            CounterRng rng(cfg.seed, {0xBA7C4ull, std::uint64_t(epoch), bi});
            for (int b = 0; b < batch.batch; ++b) {
                const TrainingSlice& s = slices[members[std::size_t(b)]];
                const int t = 1 + int(rng.below(std::uint64_t(schedule.steps())));
                batch.timesteps[std::size_t(b)] = t;
                auto e = std::span<double>(eps).subspan(b * batch.item_size(), batch.item_size());
                rng.fill_normal(e);
                std::vector<double> x0(s.image.begin(), s.image.end());
                q_sample(x0, t, e, schedule, batch.image(b));
                std::copy(s.mask.begin(), s.mask.end(), batch.mask(b).begin());
                for (int c = 0; c < batch.channels; ++c)
                    batch.channel_present[std::size_t(b) * batch.channels + c] = s.present[std::size_t(c)];
            }
            batch.zero_dropped();
            batch = apply_contrast_dropout(batch, cfg.dropout_prob, rng);
            StepResult r;
            try {
                r = trainer.training_step(batch, eps);
            } catch (const NumericalError& e) {
                throw NumericalError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(bi) + ")");
            }
            loss_sum += r.weighted_sum;
            loss_count += r.count;
            if (!shadow.empty()) {
                // Short warm-up so early weights do not dominate.
                const double steps = double(trainer.step_count());
                const float d = float(std::min(cfg.ema_decay, (1.0 + steps) / (10.0 + steps)));
                auto& params = net.parameters();
                for (std::size_t k = 0; k < params.size(); ++k)
                    for (std::size_t i = 0; i < shadow[k].size(); ++i)
                        shadow[k][i] = d * shadow[k][i] + (1.0f - d) * params[k].value[i];
            }
        }
        EpochReport rep{epoch, loss_count ? loss_sum / double(loss_count) : 0.0};
        reports.push_back(rep);
        if (on_epoch) on_epoch(rep);
    }
    if (!shadow.empty()) {
        auto& params = net.parameters();
        for (std::size_t k = 0; k < params.size(); ++k) params[k].value = shadow[k];
    }
    return reports;
}

}  // namespace msrepaint
