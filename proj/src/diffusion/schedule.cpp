#include "msrepaint/schedule.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "msrepaint/errors.hpp"
#include "msrepaint/kernels.hpp"

namespace msrepaint {

NoiseSchedule::NoiseSchedule(int T, double s) : T_(T), s_(s) {
    if (T < 1) throw ParameterError("schedule: T must be >= 1, got " + std::to_string(T));
    if (!(s > 0.0) || !std::isfinite(s)) throw ParameterError("schedule: offset s must be > 0");

    auto f = [&](int t) {
        const double c = std::cos(((double(t) / double(T)) + s) / (1.0 + s) * std::numbers::pi / 2.0);
        return c * c;
    };
    const double f0 = f(0);
    closed_.resize(std::size_t(T) + 1);
    effective_.resize(std::size_t(T) + 1);
    closed_[0] = effective_[0] = 1.0;
    for (int t = 1; t <= T; ++t) {
        // cos(pi/2) is not exactly zero in floating point.
        closed_[t] = t == T ? 0.0 : f(t) / f0;
        const double floor_ratio = 1.0 - kMaxBeta;
        effective_[t] = closed_[t] / effective_[t - 1] < floor_ratio ? effective_[t - 1] * floor_ratio
                                                                     : closed_[t];
    }
}

void NoiseSchedule::require_timestep(int t, int lowest) const {
    if (t < lowest || t > T_)
        throw ParameterError("timestep " + std::to_string(t) + " outside [" + std::to_string(lowest) +
                             ", " + std::to_string(T_) + "]");
}

double NoiseSchedule::alpha_bar(int t) const {
    require_timestep(t);
    return closed_[std::size_t(t)];
}

double NoiseSchedule::effective_alpha_bar(int t) const {
    require_timestep(t);
    return effective_[std::size_t(t)];
}

double NoiseSchedule::beta(int t) const {
    require_timestep(t, 1);
    return 1.0 - effective_[std::size_t(t)] / effective_[std::size_t(t) - 1];
}

double NoiseSchedule::sqrt_alpha_bar(int t) const { return std::sqrt(effective_alpha_bar(t)); }

double NoiseSchedule::sqrt_one_minus_alpha_bar(int t) const {
    return std::sqrt(1.0 - effective_alpha_bar(t));
}

void q_sample(std::span<const double> x0, int t, std::span<const double> eps,
              const NoiseSchedule& sched, std::span<double> out) {
    if (x0.size() != eps.size() || out.size() != x0.size())
        throw ShapeError("q_sample: x0 has " + std::to_string(x0.size()) + " samples, eps " +
                         std::to_string(eps.size()));
    sched.require_timestep(t);
    if (t == 0) {
        std::copy(x0.begin(), x0.end(), out.begin());
        return;
    }
    kernels::active().axpby(sched.sqrt_alpha_bar(t), x0.data(), sched.sqrt_one_minus_alpha_bar(t),
                            eps.data(), out.data(), out.size());
}

std::vector<double> q_sample(std::span<const double> x0, int t, std::span<const double> eps,
                             const NoiseSchedule& sched) {
    std::vector<double> out(x0.size());
    q_sample(x0, t, eps, sched, out);
    return out;
}

void predict_x0_from_eps(std::span<const double> x_t, std::span<const double> eps_hat, int t,
                         const NoiseSchedule& sched, std::span<double> out) {
    if (x_t.size() != eps_hat.size() || out.size() != x_t.size())
        throw ShapeError("predict_x0_from_eps: size mismatch");
    sched.require_timestep(t, 1);
    const double inv = 1.0 / sched.sqrt_alpha_bar(t);
    kernels::active().axpby(inv, x_t.data(), -sched.sqrt_one_minus_alpha_bar(t) * inv,
                            eps_hat.data(), out.data(), out.size());
}

std::vector<double> predict_x0_from_eps(std::span<const double> x_t,
                                        std::span<const double> eps_hat, int t,
                                        const NoiseSchedule& sched) {
    std::vector<double> out(x_t.size());
    predict_x0_from_eps(x_t, eps_hat, t, sched, out);
    return out;
}

}  // namespace msrepaint
