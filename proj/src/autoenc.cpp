#include "ipldm/autoenc.hpp"

namespace ipldm {

namespace {

int64_t gn_groups(int64_t channels) { return channels >= 8 ? 8 : 1; }

}  // namespace

Autoencoder::Autoencoder(AEConfig cfg, Rng& rng) : cfg_(cfg) {
    n_down_ = cfg.f == 2 ? 1 : (cfg.f == 4 ? 2 : 3);
    int b = cfg.base;

    stem_ = Conv2dLayer(1, b, 3, 1, 1, rng, cfg.pad);
    int ch = b;
    for (int i = 0; i < n_down_; ++i) {
        Block blk;
        blk.norm = GroupNormLayer(ch, gn_groups(ch));
        blk.conv = Conv2dLayer(ch, 2 * ch, 3, 2, 1, rng, cfg.pad);
        enc_down_.push_back(blk);
        ch *= 2;
    }
    enc_mid_.norm = GroupNormLayer(ch, gn_groups(ch));
    enc_mid_.conv = Conv2dLayer(ch, ch, 3, 1, 1, rng, cfg.pad);
    enc_head_.norm = GroupNormLayer(ch, gn_groups(ch));
    enc_head_.conv = Conv2dLayer(ch, cfg.c, 3, 1, 1, rng, cfg.pad);

    dec_in_ = Conv2dLayer(cfg.c, ch, 3, 1, 1, rng, cfg.pad);
    dec_mid_.norm = GroupNormLayer(ch, gn_groups(ch));
    dec_mid_.conv = Conv2dLayer(ch, ch, 3, 1, 1, rng, cfg.pad);
    for (int i = 0; i < n_down_; ++i) {
        Block blk;
        blk.norm = GroupNormLayer(ch, gn_groups(ch));
        blk.conv = Conv2dLayer(ch, ch / 2, 3, 1, 1, rng, cfg.pad);
        dec_up_.push_back(blk);
        ch /= 2;
    }
    dec_out_.norm = GroupNormLayer(ch, gn_groups(ch));
    dec_out_.conv = Conv2dLayer(ch, 1, 3, 1, 1, rng, cfg.pad);
    // Start reconstructions mid-gray so the output clamp never saturates at init.
    dec_out_.conv.b.data()[0] = 0.5f;
}

Tensor Autoencoder::encode_batch(const Tensor& images) const {
    if (images.ndim() != 4 || images.dim(1) != 1)
        throw DimError("encode expects [N,1,H,W], got " + shape_str(images.shape()));
    if (images.dim(2) % cfg_.f || images.dim(3) % cfg_.f)
        throw DimError("image resolution not divisible by downsample factor " +
                       std::to_string(cfg_.f));
    Tensor h = stem_(images);
    for (const auto& blk : enc_down_) h = blk.conv(silu(blk.norm(h)));
    h = enc_mid_.conv(silu(enc_mid_.norm(h)));
    return enc_head_.conv(silu(enc_head_.norm(h)));
}

Tensor Autoencoder::decode_batch(const Tensor& latents, bool raw) const {
    if (latents.ndim() != 4 || latents.dim(1) != cfg_.c)
        throw DimError("decode expects [N," + std::to_string(cfg_.c) + ",h,w], got " +
                       shape_str(latents.shape()));
    Tensor h = dec_in_(latents);
    h = dec_mid_.conv(silu(dec_mid_.norm(h)));
    for (const auto& blk : dec_up_) h = blk.conv(silu(blk.norm(upsample_nearest2(h))));
    h = dec_out_.conv(silu(dec_out_.norm(h)));
    return raw ? h : clamp01(h);
}

LatentGrid Autoencoder::encode(const Tensor& image) const {
    if (image.ndim() != 3 || image.dim(0) != 1)
        throw DimError("encode expects [1,H,W], got " + shape_str(image.shape()));
    NoGrad ng;
    Tensor batched = reshape(image, {1, 1, image.dim(1), image.dim(2)});
    Tensor z = encode_batch(batched);
    return LatentGrid{reshape(z, {z.dim(1), z.dim(2), z.dim(3)}), cfg_.f};
}

Tensor Autoencoder::decode(const LatentGrid& latent) const {
    if (latent.values.ndim() != 3)
        throw DimError("decode expects a [c,h,w] latent");
    NoGrad ng;
    Tensor z = reshape(latent.values,
                       {1, latent.values.dim(0), latent.values.dim(1), latent.values.dim(2)});
    Tensor img = decode_batch(z);
    return reshape(img, {1, img.dim(2), img.dim(3)});
}

void Autoencoder::collect(ParamList& out) const {
    stem_.collect(out, "ae.enc.stem");
    for (std::size_t i = 0; i < enc_down_.size(); ++i) {
        enc_down_[i].norm.collect(out, "ae.enc.down" + std::to_string(i) + ".norm");
        enc_down_[i].conv.collect(out, "ae.enc.down" + std::to_string(i) + ".conv");
    }
    enc_mid_.norm.collect(out, "ae.enc.mid.norm");
    enc_mid_.conv.collect(out, "ae.enc.mid.conv");
    enc_head_.norm.collect(out, "ae.enc.head.norm");
    enc_head_.conv.collect(out, "ae.enc.head.conv");
    dec_in_.collect(out, "ae.dec.in");
    dec_mid_.norm.collect(out, "ae.dec.mid.norm");
    dec_mid_.conv.collect(out, "ae.dec.mid.conv");
    for (std::size_t i = 0; i < dec_up_.size(); ++i) {
        dec_up_[i].norm.collect(out, "ae.dec.up" + std::to_string(i) + ".norm");
        dec_up_[i].conv.collect(out, "ae.dec.up" + std::to_string(i) + ".conv");
    }
    dec_out_.norm.collect(out, "ae.dec.out.norm");
    dec_out_.conv.collect(out, "ae.dec.out.conv");
}

AeStepResult ae_train_step(const Autoencoder& ae, const Tensor& images, double edge_weight,
                           Adam& opt) {
    if (images.numel() == 0 || images.dim(0) == 0)
        throw ContractError("ae_train_step: empty batch");
    Tensor recon = ae.decode_batch(ae.encode_batch(images), /*raw=*/true);
    Tensor l1 = l1_loss(recon, images);
    Tensor edge = add(l1_loss(diff_h(recon), diff_h(images)),
                      l1_loss(diff_v(recon), diff_v(images)));
    Tensor loss = add(l1, mul_scalar(edge, static_cast<float>(edge_weight)));
    AeStepResult res;
    res.l1 = l1.item();
    res.edge = edge.item();
    res.total = loss.item();
    if (!std::isfinite(res.total))
        throw NumericAbort("ae_train_step: non-finite loss");
    opt.zero_grad();
    backward(loss);
    opt.step();
    return res;
}

}  // namespace ipldm
