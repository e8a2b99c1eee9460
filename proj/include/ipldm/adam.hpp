#pragma once

#include "ipldm/tensor.hpp"

namespace ipldm {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list. Moment buffers mirror the
// parameter shapes; update arithmetic runs in double per element.
template <typename T>
class AdamT {
public:
    AdamT(std::vector<TensorT<T>> params, AdamConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(p.numel(), 0.0);
        }
    }

    int64_t step_count() const { return step_count_; }
    const AdamConfig& config() const { return cfg_; }
    std::vector<TensorT<T>>& params() { return params_; }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() {
        for (std::size_t i = 0; i < params_.size(); ++i)
            if (!params_[i].has_grad())
                throw ContractError("adam_step: parameter " + std::to_string(i) +
                                    " has no gradient");
        ++step_count_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            T* p = params_[i].data();
            const T* g = params_[i].grad_data();
            double* m = m_[i].data();
            double* v = v_[i].data();
            int64_t n = params_[i].numel();
            for (int64_t j = 0; j < n; ++j) {
                double gj = static_cast<double>(g[j]);
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
                double mhat = m[j] / bc1;
                double vhat = v[j] / bc2;
                p[j] = static_cast<T>(static_cast<double>(p[j]) -
                                      cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon));
            }
        }
    }

private:
    std::vector<TensorT<T>> params_;
    AdamConfig cfg_;
    int64_t step_count_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

using Adam = AdamT<float>;

}  // namespace ipldm
