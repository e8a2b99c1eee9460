#include "ipldm/schedule.hpp"

#include "ipldm/ops.hpp"

namespace ipldm {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw DomainError("schedule requires T >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw DomainError("schedule requires 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(static_cast<std::size_t>(T));
    s.alpha_bar.resize(static_cast<std::size_t>(T) + 1);
    s.alpha_bar[0] = 1.0;
    for (int t = 0; t < T; ++t) {
        double frac = T == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(T - 1);
        s.beta[static_cast<std::size_t>(t)] = beta_start + (beta_end - beta_start) * frac;
        s.alpha_bar[static_cast<std::size_t>(t) + 1] =
            s.alpha_bar[static_cast<std::size_t>(t)] *
            (1.0 - s.beta[static_cast<std::size_t>(t)]);
    }
    return s;
}

Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    if (t < 0 || t > sched.T)
        throw DomainError("q_sample: t=" + std::to_string(t) + " outside [0, " +
                          std::to_string(sched.T) + "]");
    require_same_shape(z0, eps, "q_sample");
    double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
    return add(mul_scalar(z0, static_cast<float>(std::sqrt(ab))),
               mul_scalar(eps, static_cast<float>(std::sqrt(1.0 - ab))));
}

}  // namespace ipldm
