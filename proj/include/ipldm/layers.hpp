#pragma once

#include <map>
#include <string>

#include "ipldm/conv.hpp"
#include "ipldm/ops.hpp"

namespace ipldm {

// Ordered named-parameter registry; the order defines optimizer and
// checkpoint layout.
struct ParamList {
    std::vector<std::pair<std::string, Tensor>> items;

    void add(const std::string& name, const Tensor& t) { items.emplace_back(name, t); }

    Tensor* find(const std::string& name) {
        for (auto& [n, t] : items)
            if (n == name) return &t;
        return nullptr;
    }

    std::vector<Tensor> tensors() const {
        std::vector<Tensor> out;
        for (const auto& [n, t] : items) out.push_back(t);
        return out;
    }

    void set_requires_grad(bool rg) {
        for (auto& [n, t] : items) t.set_requires_grad(rg);
    }
};

struct Conv2dLayer {
    Tensor w, b;
    int stride = 1, padding = 0;
    PadMode mode = PadMode::Zero;

    Conv2dLayer() = default;
    Conv2dLayer(int64_t cin, int64_t cout, int64_t k, int stride_, int padding_, Rng& rng,
                PadMode mode_ = PadMode::Zero)
        : stride(stride_), padding(padding_), mode(mode_) {
        float std_dev = std::sqrt(2.0f / static_cast<float>(cin * k * k));
        w = Tensor::randn({cout, cin, k, k}, rng, std_dev);
        b = Tensor::zeros({cout});
        w.set_requires_grad();
        b.set_requires_grad();
    }

    Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, padding, mode); }

    void collect(ParamList& out, const std::string& prefix) const {
        out.add(prefix + ".w", w);
        out.add(prefix + ".b", b);
    }
};

struct LinearLayer {
    Tensor w, b;

    LinearLayer() = default;
    LinearLayer(int64_t in, int64_t out, Rng& rng) {
        float std_dev = std::sqrt(2.0f / static_cast<float>(in));
        w = Tensor::randn({out, in}, rng, std_dev);
        b = Tensor::zeros({out});
        w.set_requires_grad();
        b.set_requires_grad();
    }

    Tensor operator()(const Tensor& x) const { return linear(x, w, b); }

    void collect(ParamList& out, const std::string& prefix) const {
        out.add(prefix + ".w", w);
        out.add(prefix + ".b", b);
    }
};

struct GroupNormLayer {
    Tensor gamma, beta;
    int64_t groups = 1;

    GroupNormLayer() = default;
    GroupNormLayer(int64_t channels, int64_t groups_) : groups(groups_) {
        gamma = Tensor::full({channels}, 1.0f);
        beta = Tensor::zeros({channels});
        gamma.set_requires_grad();
        beta.set_requires_grad();
    }

    Tensor operator()(const Tensor& x) const { return group_norm(x, groups, gamma, beta); }

    void collect(ParamList& out, const std::string& prefix) const {
        out.add(prefix + ".g", gamma);
        out.add(prefix + ".b", beta);
    }
};

// Instance norm with learned affine; works on [N,C,H,W] and [N,D].
struct InstanceNormLayer {
    Tensor gamma, beta;

    InstanceNormLayer() = default;
    explicit InstanceNormLayer(int64_t channels) {
        gamma = Tensor::full({channels}, 1.0f);
        beta = Tensor::zeros({channels});
        gamma.set_requires_grad();
        beta.set_requires_grad();
    }

    Tensor operator()(const Tensor& x) const { return instance_norm(x, gamma, beta); }

    void collect(ParamList& out, const std::string& prefix) const {
        out.add(prefix + ".g", gamma);
        out.add(prefix + ".b", beta);
    }
};

}  // namespace ipldm
