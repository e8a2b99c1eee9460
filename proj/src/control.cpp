#include "ipldm/control.hpp"

namespace ipldm {

namespace {

Tensor clone_param(const Tensor& t) {
    Tensor c = t.detach();
    c.set_requires_grad(true);
    return c;
}

Conv2dLayer clone_conv(const Conv2dLayer& src) {
    Conv2dLayer c = src;
    c.w = clone_param(src.w);
    c.b = clone_param(src.b);
    return c;
}

LinearLayer clone_linear(const LinearLayer& src) {
    LinearLayer c = src;
    c.w = clone_param(src.w);
    c.b = clone_param(src.b);
    return c;
}

GroupNormLayer clone_norm(const GroupNormLayer& src) {
    GroupNormLayer c = src;
    c.gamma = clone_param(src.gamma);
    c.beta = clone_param(src.beta);
    return c;
}

ResBlock clone_resblock(const ResBlock& src) {
    ResBlock c = src;
    c.norm1 = clone_norm(src.norm1);
    c.conv1 = clone_conv(src.conv1);
    c.time_proj = clone_linear(src.time_proj);
    c.norm2 = clone_norm(src.norm2);
    c.conv2 = clone_conv(src.conv2);
    if (src.has_skip) c.skip = clone_conv(src.skip);
    return c;
}

CrossAttnBlock clone_attn(const CrossAttnBlock& src) {
    CrossAttnBlock c = src;
    c.norm = clone_norm(src.norm);
    c.wq = clone_linear(src.wq);
    c.wk = clone_linear(src.wk);
    c.wv = clone_linear(src.wv);
    c.wo = clone_linear(src.wo);
    return c;
}

Conv2dLayer zero_conv(int cin, int cout, Rng& rng) {
    Conv2dLayer c(cin, cout, 1, 1, 0, rng);
    std::fill(c.w.data(), c.w.data() + c.w.numel(), 0.0f);
    std::fill(c.b.data(), c.b.data() + c.b.numel(), 0.0f);
    return c;
}

}  // namespace

ControlBranch::ControlBranch(const DenoiserUNet& unet, int id_channels, Rng& rng) {
    time_l1 = clone_linear(unet.time_l1);
    time_l2 = clone_linear(unet.time_l2);
    conv_in = clone_conv(unet.conv_in);
    rb0 = clone_resblock(unet.rb0);
    down = clone_conv(unet.down);
    rb1 = clone_resblock(unet.rb1);
    attn1 = clone_attn(unet.attn1);
    mid_rb1 = clone_resblock(unet.mid_rb1);
    mid_attn = clone_attn(unet.mid_attn);
    mid_rb2 = clone_resblock(unet.mid_rb2);

    int b = unet.config().base, c1 = unet.config().base * unet.config().level1_mult;
    zero_in = zero_conv(id_channels, b, rng);
    zero_out.push_back(zero_conv(b, b, rng));
    zero_out.push_back(zero_conv(b, b, rng));
    zero_out.push_back(zero_conv(b, b, rng));
    zero_out.push_back(zero_conv(c1, c1, rng));
    zero_out.push_back(zero_conv(c1, c1, rng));
}

std::vector<Tensor> ControlBranch::residuals(const Tensor& zin,
                                             const std::vector<int>& t_idx,
                                             const Tensor& cond, const Tensor& zid) const {
    Tensor temb = time_l2(silu(time_l1(sinusoidal_time_embedding(
        t_idx, static_cast<int>(time_l1.w.dim(1))))));
    Tensor hint = zid;
    // Identity grid enters once, pooled down if its resolution exceeds the
    // latent's.
    while (hint.dim(2) > zin.dim(2)) hint = avg_pool2d(hint, 2);
    if (hint.dim(2) != zin.dim(2) || hint.dim(3) != zin.dim(3))
        throw DimError("control: identity grid resolution does not match latent");
    Tensor s0 = add(conv_in(zin), zero_in(hint));
    Tensor s1 = rb0(s0, temb);
    Tensor s2 = down(s1);
    Tensor s3 = attn1(rb1(s2, temb), cond);
    Tensor m = mid_rb2(mid_attn(mid_rb1(s3, temb), cond), temb);
    return {zero_out[0](s0), zero_out[1](s1), zero_out[2](s2), zero_out[3](s3),
            zero_out[4](m)};
}

void ControlBranch::collect(ParamList& out) const {
    time_l1.collect(out, "ctrl.time.l1");
    time_l2.collect(out, "ctrl.time.l2");
    conv_in.collect(out, "ctrl.enc.in");
    rb0.collect(out, "ctrl.enc.rb0");
    down.collect(out, "ctrl.enc.down");
    rb1.collect(out, "ctrl.enc.rb1");
    attn1.collect(out, "ctrl.enc.attn1");
    mid_rb1.collect(out, "ctrl.mid.rb1");
    mid_attn.collect(out, "ctrl.mid.attn");
    mid_rb2.collect(out, "ctrl.mid.rb2");
    zero_in.collect(out, "ctrl.zero_in");
    for (std::size_t i = 0; i < zero_out.size(); ++i)
        zero_out[i].collect(out, "ctrl.zero_out" + std::to_string(i));
}

Tensor controlled_forward(const DenoiserUNet& unet, const ControlBranch& ctrl,
                          const Tensor& zin, const std::vector<int>& t_idx,
                          const Tensor& cond, const Tensor& zid) {
    auto res = ctrl.residuals(zin, t_idx, cond, zid);
    return unet.forward(zin, t_idx, cond, &res);
}

PairBatch to_pair_batch(const std::vector<std::pair<PhantomRecord, PhantomRecord>>& pairs,
                        ProfileRange range) {
    if (pairs.empty()) throw ContractError("empty pair batch");
    std::vector<Tensor> src, tgt;
    PairBatch batch;
    for (const auto& [a, b] : pairs) {
        src.push_back(a.image);
        tgt.push_back(b.image);
        batch.target_ages_norm.push_back(AgeEncoder::normalize_age(b.age, range));
    }
    batch.sources = stack_batch(src);
    batch.targets = stack_batch(tgt);
    return batch;
}

JointStepResult joint_train_step(ModelBundle& bundle, const PairBatch& batch, Adam& opt,
                                 Rng& rng) {
    if (bundle.cfg.cn && !bundle.control)
        throw ContractError("joint_train_step: control branch missing with cn enabled");
    int64_t n = batch.sources.dim(0);
    Tensor zA, zB, zid, cond;
    {
        NoGrad ng;
        zA = bundle.ae.encode_batch(batch.sources).detach();
        zB = bundle.ae.encode_batch(batch.targets).detach();
        if (bundle.cfg.cn) zid = bundle.irl.encode_grid(zA).detach();
        Tensor ages = Tensor::zeros({n, 1});
        for (int64_t i = 0; i < n; ++i)
            ages.data()[i] = static_cast<float>(batch.target_ages_norm[static_cast<std::size_t>(i)]);
        cond = bundle.age.forward_batch(ages).detach();
    }

    std::vector<int> t_idx(static_cast<std::size_t>(n));
    for (auto& t : t_idx) t = static_cast<int>(rng.uniform_int(1, bundle.sched.T));
    Tensor eps = Tensor::randn(zB.shape(), rng);
    Tensor zt = Tensor::zeros(zB.shape());
    int64_t stride = zB.numel() / n;
    for (int64_t i = 0; i < n; ++i) {
        double ab = bundle.sched.alpha_bar[static_cast<std::size_t>(
            t_idx[static_cast<std::size_t>(i)])];
        float sa = static_cast<float>(std::sqrt(ab));
        float sb = static_cast<float>(std::sqrt(1.0 - ab));
        for (int64_t j = 0; j < stride; ++j)
            zt.data()[i * stride + j] =
                sa * zB.data()[i * stride + j] + sb * eps.data()[i * stride + j];
    }

    Tensor zin = bundle.cfg.cc ? bundle.fusion(zt, zA) : zt;
    Tensor eps_hat = bundle.cfg.cn
                         ? controlled_forward(bundle.unet, *bundle.control, zin, t_idx, cond, zid)
                         : bundle.unet.forward(zin, t_idx, cond, nullptr);
    Tensor loss = mse_loss(eps_hat, eps);
    JointStepResult res;
    res.loss = loss.item();
    if (!std::isfinite(res.loss)) throw NumericAbort("joint_train_step: non-finite loss");
    opt.zero_grad();
    backward(loss);
    // Zero-conv inputs can be outside the first-step graph.
    for (auto& p : opt.params()) p.ensure_grad();
    opt.step();
    return res;
}

Tensor transform_age(const ModelBundle& bundle, const Tensor& source_image,
                     double target_age, Rng& rng) {
    ProfileRange range = profile_range(bundle.cfg.profile_enum());
    AgeEmbedding emb = bundle.age.encode(target_age, range);  // validates the age
    NoGrad ng;
    LatentGrid zA = bundle.ae.encode(source_image);
    Tensor zA4 = reshape(zA.values, {1, zA.values.dim(0), zA.values.dim(1), zA.values.dim(2)});
    Tensor cond = reshape(emb.vector, {1, emb.vector.dim(0)});

    ControlFn control_fn;
    const ControlFn* control = nullptr;
    Tensor zid;
    if (bundle.cfg.cn) {
        if (!bundle.control) throw ContractError("transform_age: control branch missing");
        IdentityFeatures feats = bundle.irl.encode(zA);
        zid = reshape(feats.grid, {1, feats.grid.dim(0), feats.grid.dim(1), feats.grid.dim(2)});
        control_fn = [&bundle, zid](const Tensor& zin, const std::vector<int>& t,
                                    const Tensor& c) {
            return bundle.control->residuals(zin, t, c, zid);
        };
        control = &control_fn;
    }
    Tensor z0 = ddpm_sample_batch(bundle.unet, bundle.cfg.cc ? &bundle.fusion : nullptr, zA4,
                                  cond, control, bundle.sched, rng);
    Tensor img = bundle.ae.decode_batch(z0);
    return reshape(img, {1, img.dim(2), img.dim(3)});
}

}  // namespace ipldm
