#include "ipldm/denoiser.hpp"

namespace ipldm {

ResBlock::ResBlock(int cin, int cout, int time_dim, int groups, Rng& rng) {
    norm1 = GroupNormLayer(cin, cin % groups ? 1 : groups);
    conv1 = Conv2dLayer(cin, cout, 3, 1, 1, rng);
    time_proj = LinearLayer(time_dim, cout, rng);
    norm2 = GroupNormLayer(cout, cout % groups ? 1 : groups);
    conv2 = Conv2dLayer(cout, cout, 3, 1, 1, rng);
    has_skip = cin != cout;
    if (has_skip) skip = Conv2dLayer(cin, cout, 1, 1, 0, rng);
}

Tensor ResBlock::operator()(const Tensor& x, const Tensor& temb) const {
    Tensor h = conv1(silu(norm1(x)));
    h = add_spatial(h, time_proj(silu(temb)));
    h = conv2(silu(norm2(h)));
    return add(h, has_skip ? skip(x) : x);
}

void ResBlock::collect(ParamList& out, const std::string& prefix) const {
    norm1.collect(out, prefix + ".n1");
    conv1.collect(out, prefix + ".c1");
    time_proj.collect(out, prefix + ".t");
    norm2.collect(out, prefix + ".n2");
    conv2.collect(out, prefix + ".c2");
    if (has_skip) skip.collect(out, prefix + ".skip");
}

CrossAttnBlock::CrossAttnBlock(int channels_, int cond_dim, Rng& rng)
    : channels(channels_) {
    norm = GroupNormLayer(channels, channels % 8 ? 1 : 8);
    wq = LinearLayer(channels, channels, rng);
    wk = LinearLayer(cond_dim, channels, rng);
    wv = LinearLayer(cond_dim, channels, rng);
    wo = LinearLayer(channels, channels, rng);
}

Tensor CrossAttnBlock::operator()(const Tensor& x, const Tensor& cond) const {
    if (cond.ndim() != 2 || cond.dim(0) != x.dim(0))
        throw DimError("cross-attention: condition batch mismatch");
    int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor xn = norm(x);
    std::vector<Tensor> outs;
    outs.reserve(static_cast<std::size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        Tensor tokens = transpose2d(reshape(select_batch(xn, i), {c, h * w}));  // [hw,c]
        Tensor cnd = reshape(select_batch(cond, i), {1, cond.dim(1)});
        Tensor q = linear(tokens, wq.w, wq.b);
        Tensor k = linear(cnd, wk.w, wk.b);
        Tensor v = linear(cnd, wv.w, wv.b);
        Tensor att = linear(attention(q, k, v), wo.w, wo.b);
        outs.push_back(reshape(transpose2d(att), {c, h, w}));
    }
    return add(x, stack_batch(outs));
}

void CrossAttnBlock::collect(ParamList& out, const std::string& prefix) const {
    norm.collect(out, prefix + ".n");
    wq.collect(out, prefix + ".q");
    wk.collect(out, prefix + ".k");
    wv.collect(out, prefix + ".v");
    wo.collect(out, prefix + ".o");
}

Tensor sinusoidal_time_embedding(const std::vector<int>& t, int dim) {
    int64_t n = static_cast<int64_t>(t.size());
    int64_t half = dim / 2;
    Tensor emb = Tensor::zeros({n, dim});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < half; ++j) {
            double freq = std::exp(-std::log(10000.0) * static_cast<double>(j) /
                                   static_cast<double>(half - 1));
            double arg = static_cast<double>(t[static_cast<std::size_t>(i)]) * freq;
            emb.data()[i * dim + j] = static_cast<float>(std::sin(arg));
            emb.data()[i * dim + half + j] = static_cast<float>(std::cos(arg));
        }
    return emb;
}

DenoiserUNet::DenoiserUNet(DenoiserConfig cfg, Rng& rng) : cfg_(cfg) {
    int b = cfg.base, c1 = cfg.base * cfg.level1_mult;
    time_l1 = LinearLayer(cfg.time_dim, cfg.time_dim, rng);
    time_l2 = LinearLayer(cfg.time_dim, cfg.time_dim, rng);
    conv_in = Conv2dLayer(cfg.in_channels, b, 3, 1, 1, rng);
    rb0 = ResBlock(b, b, cfg.time_dim, cfg.groups, rng);
    down = Conv2dLayer(b, b, 3, 2, 1, rng);
    rb1 = ResBlock(b, c1, cfg.time_dim, cfg.groups, rng);
    attn1 = CrossAttnBlock(c1, cfg.cond_dim, rng);
    mid_rb1 = ResBlock(c1, c1, cfg.time_dim, cfg.groups, rng);
    mid_attn = CrossAttnBlock(c1, cfg.cond_dim, rng);
    mid_rb2 = ResBlock(c1, c1, cfg.time_dim, cfg.groups, rng);
    d3_ = ResBlock(c1 + c1, c1, cfg.time_dim, cfg.groups, rng);
    attn_d3_ = CrossAttnBlock(c1, cfg.cond_dim, rng);
    d2_ = ResBlock(c1 + b, c1, cfg.time_dim, cfg.groups, rng);
    attn_d2_ = CrossAttnBlock(c1, cfg.cond_dim, rng);
    up_conv_ = Conv2dLayer(c1, c1, 3, 1, 1, rng);
    d1_ = ResBlock(c1 + b, b, cfg.time_dim, cfg.groups, rng);
    d0_ = ResBlock(b + b, b, cfg.time_dim, cfg.groups, rng);
    out_norm_ = GroupNormLayer(b, b % cfg.groups ? 1 : cfg.groups);
    out_conv_ = Conv2dLayer(b, cfg.in_channels, 3, 1, 1, rng);
}

Tensor DenoiserUNet::time_embed(const std::vector<int>& t_idx) const {
    Tensor emb = sinusoidal_time_embedding(t_idx, cfg_.time_dim);
    return time_l2(silu(time_l1(emb)));
}

std::vector<Tensor> DenoiserUNet::encoder_taps(const Tensor& z, const Tensor& temb,
                                               const Tensor& cond) const {
    std::vector<Tensor> taps;
    Tensor s0 = conv_in(z);
    Tensor s1 = rb0(s0, temb);
    Tensor s2 = down(s1);
    Tensor s3 = attn1(rb1(s2, temb), cond);
    Tensor m = mid_rb2(mid_attn(mid_rb1(s3, temb), cond), temb);
    return {s0, s1, s2, s3, m};
}

Tensor DenoiserUNet::forward(const Tensor& z, const std::vector<int>& t_idx,
                             const Tensor& cond, const std::vector<Tensor>* control) const {
    if (z.ndim() != 4 || z.dim(1) != cfg_.in_channels)
        throw DimError("denoiser expects [N," + std::to_string(cfg_.in_channels) +
                       ",h,w], got " + shape_str(z.shape()));
    if (z.dim(2) % 2 || z.dim(3) % 2)
        throw DimError("denoiser latent dims must be even");
    if (static_cast<int64_t>(t_idx.size()) != z.dim(0))
        throw DimError("denoiser: timestep count does not match batch");
    if (control && control->size() != 5)
        throw DimError("denoiser: expected 5 control residuals");

    Tensor temb = time_embed(t_idx);
    auto taps = encoder_taps(z, temb, cond);
    Tensor s0 = taps[0], s1 = taps[1], s2 = taps[2], s3 = taps[3], m = taps[4];
    if (control) {
        s0 = add(s0, (*control)[0]);
        s1 = add(s1, (*control)[1]);
        s2 = add(s2, (*control)[2]);
        s3 = add(s3, (*control)[3]);
        m = add(m, (*control)[4]);
    }
    Tensor x = attn_d3_(d3_(concat_channels(m, s3), temb), cond);
    x = attn_d2_(d2_(concat_channels(x, s2), temb), cond);
    x = up_conv_(upsample_nearest2(x));
    x = d1_(concat_channels(x, s1), temb);
    x = d0_(concat_channels(x, s0), temb);
    return out_conv_(silu(out_norm_(x)));
}

void DenoiserUNet::collect_encoder(ParamList& out) const {
    time_l1.collect(out, "unet.time.l1");
    time_l2.collect(out, "unet.time.l2");
    conv_in.collect(out, "unet.enc.in");
    rb0.collect(out, "unet.enc.rb0");
    down.collect(out, "unet.enc.down");
    rb1.collect(out, "unet.enc.rb1");
    attn1.collect(out, "unet.enc.attn1");
    mid_rb1.collect(out, "unet.mid.rb1");
    mid_attn.collect(out, "unet.mid.attn");
    mid_rb2.collect(out, "unet.mid.rb2");
}

void DenoiserUNet::collect_decoder(ParamList& out) const {
    d3_.collect(out, "unet.dec.d3");
    attn_d3_.collect(out, "unet.dec.attn3");
    d2_.collect(out, "unet.dec.d2");
    attn_d2_.collect(out, "unet.dec.attn2");
    up_conv_.collect(out, "unet.dec.up");
    d1_.collect(out, "unet.dec.d1");
    d0_.collect(out, "unet.dec.d0");
    out_norm_.collect(out, "unet.dec.out_norm");
    out_conv_.collect(out, "unet.dec.out_conv");
}

void DenoiserUNet::collect(ParamList& out) const {
    collect_encoder(out);
    collect_decoder(out);
}

FusionConv::FusionConv(int latent_c, Rng& rng) {
    conv = Conv2dLayer(2 * latent_c, latent_c, 1, 1, 0, rng);
    // Channel-select initialization: identity on the noised half, zero on the
    // source half, so joint training starts from the pretrained behavior.
    std::fill(conv.w.data(), conv.w.data() + conv.w.numel(), 0.0f);
    for (int o = 0; o < latent_c; ++o)
        conv.w.data()[(o * 2 * latent_c + o)] = 1.0f;
    std::fill(conv.b.data(), conv.b.data() + conv.b.numel(), 0.0f);
}

Tensor FusionConv::operator()(const Tensor& z_t, const Tensor& z_src) const {
    require_same_shape(z_t, z_src, "fuse_source");
    return conv(concat_channels(z_t, z_src));
}

void FusionConv::collect(ParamList& out) const { conv.collect(out, "fuse.conv"); }

PretrainStepResult pretrain_step(const DenoiserUNet& unet, const AgeEncoder& age,
                                 const Autoencoder& ae, const Tensor& images,
                                 const std::vector<double>& normalized_ages,
                                 const NoiseSchedule& sched, Adam& opt, Rng& rng) {
    int64_t n = images.dim(0);
    if (static_cast<int64_t>(normalized_ages.size()) != n)
        throw ContractError("pretrain_step: age count does not match batch");
    Tensor z0;
    {
        NoGrad ng;
        z0 = ae.encode_batch(images).detach();
    }
    std::vector<int> t_idx(static_cast<std::size_t>(n));
    for (auto& t : t_idx) t = static_cast<int>(rng.uniform_int(1, sched.T));
    Tensor eps = Tensor::randn(z0.shape(), rng);
    Tensor zt = Tensor::zeros(z0.shape());
    int64_t stride = z0.numel() / n;
    for (int64_t i = 0; i < n; ++i) {
        double ab = sched.alpha_bar[static_cast<std::size_t>(t_idx[static_cast<std::size_t>(i)])];
        float sa = static_cast<float>(std::sqrt(ab));
        float sb = static_cast<float>(std::sqrt(1.0 - ab));
        for (int64_t j = 0; j < stride; ++j)
            zt.data()[i * stride + j] =
                sa * z0.data()[i * stride + j] + sb * eps.data()[i * stride + j];
    }

    Tensor ages = Tensor::zeros({n, 1});
    for (int64_t i = 0; i < n; ++i)
        ages.data()[i] = static_cast<float>(normalized_ages[static_cast<std::size_t>(i)]);
    Tensor cond = age.forward_batch(ages);
    Tensor eps_hat = unet.forward(zt, t_idx, cond, nullptr);
    Tensor loss = mse_loss(eps_hat, eps);
    PretrainStepResult res;
    res.loss = loss.item();
    if (!std::isfinite(res.loss)) throw NumericAbort("pretrain_step: non-finite loss");
    opt.zero_grad();
    backward(loss);
    opt.step();
    return res;
}

Tensor ddpm_sample_batch(const DenoiserUNet& unet, const FusionConv* fusion,
                         const Tensor& z_src, const Tensor& cond, const ControlFn* control,
                         const NoiseSchedule& sched, Rng& rng) {
    NoGrad ng;
    int64_t n = z_src.dim(0);
    Tensor z = Tensor::randn(z_src.shape(), rng);
    for (int t = sched.T; t >= 1; --t) {
        std::vector<int> t_idx(static_cast<std::size_t>(n), t);
        Tensor zin = fusion ? (*fusion)(z, z_src) : z;
        std::vector<Tensor> residuals;
        const std::vector<Tensor>* res_ptr = nullptr;
        if (control) {
            residuals = (*control)(zin, t_idx, cond);
            res_ptr = &residuals;
        }
        Tensor eps_hat = unet.forward(zin, t_idx, cond, res_ptr);

        double beta = sched.beta[static_cast<std::size_t>(t - 1)];
        double ab_t = sched.alpha_bar[static_cast<std::size_t>(t)];
        double ab_prev = sched.alpha_bar[static_cast<std::size_t>(t - 1)];
        double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
        double eps_coef = beta / std::sqrt(1.0 - ab_t);
        double sigma = t > 1 ? std::sqrt((1.0 - ab_prev) / (1.0 - ab_t) * beta) : 0.0;

        Tensor next = Tensor::zeros(z.shape());
        for (int64_t i = 0; i < z.numel(); ++i) {
            double mean = (static_cast<double>(z.data()[i]) -
                           eps_coef * static_cast<double>(eps_hat.data()[i])) *
                          inv_sqrt_alpha;
            double noise = t > 1 ? sigma * rng.normal() : 0.0;
            next.data()[i] = static_cast<float>(mean + noise);
        }
        z = next;
    }
    return z;
}

}  // namespace ipldm
