#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ipldm/ops.hpp"

// Central-finite-difference oracle, independent of the tape: perturbs every
// input element and compares the quotient against the autograd gradient.
template <typename T>
struct GradCheckResult {
    bool ok = true;
    std::string detail;
};

template <typename T>
GradCheckResult<T> gradcheck(
    const std::function<ipldm::TensorT<T>(std::vector<ipldm::TensorT<T>>&)>& fn,
    std::vector<ipldm::TensorT<T>> inputs, T h, T tol) {
    using ipldm::TensorT;
    for (auto& in : inputs) in.set_requires_grad(true);

    auto loss = fn(inputs);
    ipldm::backward(loss);

    GradCheckResult<T> res;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto& in = inputs[k];
        for (int64_t i = 0; i < in.numel(); ++i) {
            T saved = in.data()[i];
            in.data()[i] = saved + h;
            T lp = fn(inputs).item();
            in.data()[i] = saved - h;
            T lm = fn(inputs).item();
            in.data()[i] = saved;
            T fd = (lp - lm) / (T(2) * h);
            T got = in.has_grad() ? in.grad_data()[i] : T(0);
            T scale = std::max(T(1), std::max(std::abs(fd), std::abs(got)));
            if (std::abs(fd - got) > tol * scale) {
                res.ok = false;
                res.detail = "input " + std::to_string(k) + " element " + std::to_string(i) +
                             ": autograd " + std::to_string(got) + " vs fd " +
                             std::to_string(fd);
                return res;
            }
        }
    }
    return res;
}
