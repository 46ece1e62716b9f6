#pragma once

#include <span>
#include <vector>

namespace msrepaint {

/// Cosine noise schedule. Timestep 0 is the clean image and T is maximal
/// noise.
///
/// Two tables are kept. alpha_bar(t) is the closed form f(t) / f(0) with
/// f(t) = cos^2(((t / T) + s) / (1 + s) * pi / 2), so alpha_bar(T) = 0.
/// effective_alpha_bar(t) equals it except where the per-step noise ratio
/// 1 - abar_t / abar_{t-1} would exceed the 0.999 clip; there it is the
/// clipped cumulative product, which keeps every entry strictly positive.
/// All forward/reverse arithmetic uses the effective table.
class NoiseSchedule {
public:
    static constexpr double kDefaultOffset = 0.008;
    static constexpr double kMaxBeta = 0.999;

    NoiseSchedule(int T, double s = kDefaultOffset);

    int steps() const noexcept { return T_; }
    double offset() const noexcept { return s_; }

    double alpha_bar(int t) const;
    double effective_alpha_bar(int t) const;
    /// 1 - effective_alpha_bar(t) / effective_alpha_bar(t - 1), t >= 1.
    double beta(int t) const;

    double sqrt_alpha_bar(int t) const;
    double sqrt_one_minus_alpha_bar(int t) const;

    std::span<const double> alpha_bar_table() const noexcept { return closed_; }

    void require_timestep(int t, int lowest = 0) const;

private:
    int T_;
    double s_;
    std::vector<double> closed_;
    std::vector<double> effective_;
};

/// sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps
void q_sample(std::span<const double> x0, int t, std::span<const double> eps,
              const NoiseSchedule& sched, std::span<double> out);
std::vector<double> q_sample(std::span<const double> x0, int t, std::span<const double> eps,
                             const NoiseSchedule& sched);

/// (x_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t), 1 <= t <= T
void predict_x0_from_eps(std::span<const double> x_t, std::span<const double> eps_hat, int t,
                         const NoiseSchedule& sched, std::span<double> out);
std::vector<double> predict_x0_from_eps(std::span<const double> x_t,
                                        std::span<const double> eps_hat, int t,
                                        const NoiseSchedule& sched);

}  // namespace msrepaint
