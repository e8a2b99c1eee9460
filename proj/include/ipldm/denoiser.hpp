#pragma once

#include "ipldm/adam.hpp"
#include "ipldm/autoenc.hpp"
#include "ipldm/conditioning.hpp"
#include "ipldm/layers.hpp"
#include "ipldm/schedule.hpp"

namespace ipldm {

struct DenoiserConfig {
    int in_channels = 4;
    int base = 32;        // channels at full latent resolution
    int level1_mult = 2;  // channel multiplier after the downsample
    int cond_dim = 64;    // age-embedding width d (attention key/value dim)
    int time_dim = 128;
    int groups = 8;
};

// Residual block with timestep injection.
struct ResBlock {
    GroupNormLayer norm1, norm2;
    Conv2dLayer conv1, conv2, skip;
    LinearLayer time_proj;
    bool has_skip = false;

    ResBlock() = default;
    ResBlock(int cin, int cout, int time_dim, int groups, Rng& rng);
    Tensor operator()(const Tensor& x, const Tensor& temb) const;
    void collect(ParamList& out, const std::string& prefix) const;
};

// Cross-attention over the age embedding: Q from flattened feature maps,
// K and V projected from the conditioning vector.
struct CrossAttnBlock {
    GroupNormLayer norm;
    LinearLayer wq, wk, wv, wo;
    int channels = 0;

    CrossAttnBlock() = default;
    CrossAttnBlock(int channels, int cond_dim, Rng& rng);
    Tensor operator()(const Tensor& x, const Tensor& cond) const;
    void collect(ParamList& out, const std::string& prefix) const;
};

// [N, dim] sinusoidal embedding of integer timesteps (constant).
Tensor sinusoidal_time_embedding(const std::vector<int>& t, int dim);

// Two-level U-Net over latents with cross-attention at the downsampled
// resolution and in the middle block. Encoder taps line up with the control
// branch residuals.
class DenoiserUNet {
public:
    DenoiserUNet() = default;
    DenoiserUNet(DenoiserConfig cfg, Rng& rng);

    const DenoiserConfig& config() const { return cfg_; }

    // control, when present, holds 5 residual tensors matching
    // [conv_in, level0 block, downsample, level1 block, middle].
    Tensor forward(const Tensor& z, const std::vector<int>& t_idx, const Tensor& cond,
                   const std::vector<Tensor>* control = nullptr) const;

    // Encoder feature taps on the same wiring the control branch copies.
    std::vector<Tensor> encoder_taps(const Tensor& z, const Tensor& temb,
                                     const Tensor& cond) const;

    Tensor time_embed(const std::vector<int>& t_idx) const;

    void collect_encoder(ParamList& out) const;
    void collect_decoder(ParamList& out) const;
    void collect(ParamList& out) const;

    // Structural pieces the control branch clones.
    LinearLayer time_l1, time_l2;
    Conv2dLayer conv_in;
    ResBlock rb0;
    Conv2dLayer down;
    ResBlock rb1;
    CrossAttnBlock attn1;
    ResBlock mid_rb1, mid_rb2;
    CrossAttnBlock mid_attn;

private:
    DenoiserConfig cfg_;
    ResBlock d3_, d2_, d1_, d0_;
    CrossAttnBlock attn_d3_, attn_d2_;
    Conv2dLayer up_conv_;
    GroupNormLayer out_norm_;
    Conv2dLayer out_conv_;
};

// Learned 1x1 fusion of the noised latent with the source latent,
// initialized to pass the noised half through unchanged.
struct FusionConv {
    Conv2dLayer conv;

    FusionConv() = default;
    FusionConv(int latent_c, Rng& rng);
    Tensor operator()(const Tensor& z_t, const Tensor& z_src) const;
    void collect(ParamList& out) const;
};

struct PretrainStepResult {
    double loss = 0.0;
};

// Eq.-(4)-style denoiser pretraining: each latent is noised and denoised
// conditioned on its own age; updates the denoiser and the age encoder.
PretrainStepResult pretrain_step(const DenoiserUNet& unet, const AgeEncoder& age,
                                 const Autoencoder& ae, const Tensor& images,
                                 const std::vector<double>& normalized_ages,
                                 const NoiseSchedule& sched, Adam& opt, Rng& rng);

// Optional control hook for sampling: returns the residual taps for a given
// (fused) input, timestep vector and condition batch.
using ControlFn =
    std::function<std::vector<Tensor>(const Tensor&, const std::vector<int>&, const Tensor&)>;

// Ancestral DDPM sampling from Z_T ~ N(0,I), fusing the source latent at
// every step when fusion is given.
Tensor ddpm_sample_batch(const DenoiserUNet& unet, const FusionConv* fusion,
                         const Tensor& z_src, const Tensor& cond, const ControlFn* control,
                         const NoiseSchedule& sched, Rng& rng);

}  // namespace ipldm
