#pragma once

#include <optional>

#include "ipldm/config.hpp"
#include "ipldm/denoiser.hpp"

namespace ipldm {

// Identity control branch: a trainable copy of the pretrained denoiser
// encoder, fed the identity grid through a zero-initialized 1x1 convolution,
// with per-tap zero convolutions gating its residuals into the base decoder.
class ControlBranch {
public:
    ControlBranch() = default;
    // encoder_copy starts bit-identical to the pretrained denoiser encoder;
    // every zero-convolution weight and bias starts at exactly 0.
    ControlBranch(const DenoiserUNet& unet, int id_channels, Rng& rng);

    std::vector<Tensor> residuals(const Tensor& zin, const std::vector<int>& t_idx,
                                  const Tensor& cond, const Tensor& zid) const;

    void collect(ParamList& out) const;

    LinearLayer time_l1, time_l2;
    Conv2dLayer conv_in;
    ResBlock rb0;
    Conv2dLayer down;
    ResBlock rb1;
    CrossAttnBlock attn1;
    ResBlock mid_rb1, mid_rb2;
    CrossAttnBlock mid_attn;
    Conv2dLayer zero_in;
    std::vector<Conv2dLayer> zero_out;  // one per tap
};

// Base denoiser with control residuals injected per Eq.-(5)-style gating.
Tensor controlled_forward(const DenoiserUNet& unet, const ControlBranch& ctrl,
                          const Tensor& zin, const std::vector<int>& t_idx,
                          const Tensor& cond, const Tensor& zid);

// Everything a trained pipeline needs in one place.
struct ModelBundle {
    RunConfig cfg;
    NoiseSchedule sched;
    Autoencoder ae;
    AgeEncoder age;
    IdentityNet irl;
    DenoiserUNet unet;
    FusionConv fusion;
    std::optional<ControlBranch> control;
};

struct JointStepResult {
    double loss = 0.0;
};

struct PairBatch {
    Tensor sources, targets;            // [N,1,H,W]
    std::vector<double> target_ages_norm;
};

PairBatch to_pair_batch(const std::vector<std::pair<PhantomRecord, PhantomRecord>>& pairs,
                        ProfileRange range);

// Eq.-(6)-style joint step: noise the target latent, fuse the source latent,
// denoise with the control branch, and update only the trainable set
// (base decoder, fusion conv, control branch).
JointStepResult joint_train_step(ModelBundle& bundle, const PairBatch& batch,
                                 Adam& opt, Rng& rng);

// Full age transformation: encode the source, sample the target latent
// conditioned on the target age (and the source identity grid), decode.
Tensor transform_age(const ModelBundle& bundle, const Tensor& source_image,
                     double target_age, Rng& rng);

}  // namespace ipldm
