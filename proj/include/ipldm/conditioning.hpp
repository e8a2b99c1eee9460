#pragma once

#include "ipldm/adam.hpp"
#include "ipldm/autoenc.hpp"
#include "ipldm/layers.hpp"
#include "ipldm/phantom.hpp"

namespace ipldm {

struct AgeEmbedding {
    Tensor vector;  // [d], d = denoiser cross-attention key/value width
    double normalized_age = 0.0;
};

// Four-layer MLP with ReLU and instance-adaptive normalization over a
// [0,1]-normalized age.
class AgeEncoder {
public:
    AgeEncoder() = default;
    AgeEncoder(int dim, Rng& rng);

    int dim() const { return dim_; }

    // [N,1] normalized ages -> [N,d]
    Tensor forward_batch(const Tensor& normalized_ages) const;

    AgeEmbedding encode(double age, ProfileRange range) const;

    static double normalize_age(double age, ProfileRange range);

    void collect(ParamList& out) const;

private:
    int dim_ = 0;
    LinearLayer l1_, l2_, l3_, l4_;
    InstanceNormLayer n1_, n2_, n3_;
};

struct IdentityFeatures {
    Tensor grid;       // [c_id,h,w], spatial dims match the latent grid
    Tensor embedding;  // [e], projector output
};

// Identity bottleneck: encoder phi and decoder phi-bar over latents, plus an
// MLP projector producing the contrastive embeddings.
class IdentityNet {
public:
    IdentityNet() = default;
    IdentityNet(int latent_c, int latent_hw, int id_channels, int embed_dim, Rng& rng);

    // [N,c,h,w] -> [N,c_id,h,w]
    Tensor encode_grid(const Tensor& latents) const;
    // [N,c_id,h,w] -> [N,c,h,w]
    Tensor decode_grid(const Tensor& grids) const;
    // [N,c_id,h,w] -> [N,e]
    Tensor project(const Tensor& grids) const;

    IdentityFeatures encode(const LatentGrid& latent) const;

    // Embeddings the identity loss sees: projector output when use_projector,
    // else the flattened grid.
    Tensor loss_embedding(const Tensor& grids, bool use_projector) const;

    void collect(ParamList& out) const;

private:
    int id_channels_ = 0, embed_dim_ = 0;
    Conv2dLayer enc1_, enc2_, enc3_;
    GroupNormLayer enc_n1_, enc_n2_;
    Conv2dLayer dec1_, dec2_, dec3_;
    GroupNormLayer dec_n1_, dec_n2_;
    LinearLayer proj1_, proj2_;
};

// Eq.-style losses over embedding batches [B,e] (1-d vectors accepted).
Tensor triplet_loss(const Tensor& ea, const Tensor& ep, const Tensor& en, double margin);
Tensor cosine_loss(const Tensor& ea, const Tensor& ep);
Tensor collapse_reg(const Tensor& ea, const Tensor& ep, double gamma);
// Sum of the three contrastive terms.
Tensor identity_loss(const Tensor& ea, const Tensor& ep, const Tensor& en, double margin,
                     double gamma);

struct TripletTensors {
    Tensor anchors, positives, negatives;  // [B,1,H,W] image stacks
};

TripletTensors to_triplet_tensors(const std::vector<TripletSample>& batch);

struct IrlStepResult {
    double total = 0.0, triplet = 0.0, cosine = 0.0, collapse = 0.0, recon = 0.0;
};

// Encodes the triplet through the frozen autoencoder, applies the identity
// losses (per il/ip flags) plus the latent-reconstruction L1, and steps the
// IRL parameters only.
IrlStepResult irl_train_step(const IdentityNet& net, const Autoencoder& ae,
                             const TripletTensors& batch, double margin, double gamma,
                             bool use_identity_loss, bool use_projector, Adam& opt);

}  // namespace ipldm
