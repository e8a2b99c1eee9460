#pragma once

#include "ipldm/adam.hpp"
#include "ipldm/layers.hpp"

namespace ipldm {

// Spatial latent produced by the visual encoder; f = H/h = W/w.
struct LatentGrid {
    Tensor values;  // [c,h,w]
    int downsample_factor = 1;
};

struct AEConfig {
    int resolution = 64;
    int f = 4;  // downsample factor, {2,4,8}
    int c = 4;  // latent channels
    int base = 16;
    PadMode pad = PadMode::Zero;
};

// Pixel-space autoencoder: log2(f) stride-2 stages down, mirrored up with
// nearest upsampling. Deterministic latent, no KL term anywhere.
class Autoencoder {
public:
    Autoencoder() = default;
    Autoencoder(AEConfig cfg, Rng& rng);

    const AEConfig& config() const { return cfg_; }

    // [N,1,H,W] -> [N,c,H/f,W/f]
    Tensor encode_batch(const Tensor& images) const;
    // [N,c,h,w] -> [N,1,H,W]; clamped to [0,1] unless raw.
    Tensor decode_batch(const Tensor& latents, bool raw = false) const;

    LatentGrid encode(const Tensor& image) const;  // [1,H,W]
    Tensor decode(const LatentGrid& latent) const;

    void collect(ParamList& out) const;

private:
    AEConfig cfg_;
    int n_down_ = 2;

    Conv2dLayer stem_;
    struct Block {
        GroupNormLayer norm;
        Conv2dLayer conv;
    };
    std::vector<Block> enc_down_;
    Block enc_mid_, enc_head_;
    Conv2dLayer dec_in_;
    Block dec_mid_;
    std::vector<Block> dec_up_;
    Block dec_out_;
};

struct AeStepResult {
    double total = 0.0, l1 = 0.0, edge = 0.0;
};

// One optimizer step of L1 + edge-gradient L1 reconstruction.
AeStepResult ae_train_step(const Autoencoder& ae, const Tensor& images, double edge_weight,
                           Adam& opt);

}  // namespace ipldm
