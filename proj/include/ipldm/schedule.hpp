#pragma once

#include "ipldm/tensor.hpp"

namespace ipldm {

// Linear-beta DDPM schedule. alpha_bar[0] = 1 and alpha_bar[t] is the
// cumulative product of (1 - beta[s]) for s < t; strictly decreasing.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // [T]
    std::vector<double> alpha_bar;  // [T+1]
};

NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

// sqrt(alpha_bar[t]) * z0 + sqrt(1 - alpha_bar[t]) * eps, exactly.
Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched);

}  // namespace ipldm
