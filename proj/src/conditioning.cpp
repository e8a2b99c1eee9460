#include "ipldm/conditioning.hpp"

namespace ipldm {

AgeEncoder::AgeEncoder(int dim, Rng& rng) : dim_(dim) {
    l1_ = LinearLayer(1, dim, rng);
    l2_ = LinearLayer(dim, dim, rng);
    l3_ = LinearLayer(dim, dim, rng);
    l4_ = LinearLayer(dim, dim, rng);
    n1_ = InstanceNormLayer(dim);
    n2_ = InstanceNormLayer(dim);
    n3_ = InstanceNormLayer(dim);
}

double AgeEncoder::normalize_age(double age, ProfileRange range) {
    if (age < range.age_min || age > range.age_max)
        throw DomainError("age " + std::to_string(age) + " outside profile range [" +
                          std::to_string(range.age_min) + ", " +
                          std::to_string(range.age_max) + "]");
    return (age - range.age_min) / (range.age_max - range.age_min);
}

Tensor AgeEncoder::forward_batch(const Tensor& normalized_ages) const {
    if (normalized_ages.ndim() != 2 || normalized_ages.dim(1) != 1)
        throw DimError("age encoder expects [N,1] normalized ages");
    Tensor h = relu(n1_(l1_(normalized_ages)));
    h = relu(n2_(l2_(h)));
    h = relu(n3_(l3_(h)));
    return l4_(h);
}

AgeEmbedding AgeEncoder::encode(double age, ProfileRange range) const {
    double na = normalize_age(age, range);
    NoGrad ng;
    Tensor in = Tensor::from({1, 1}, {static_cast<float>(na)});
    Tensor out = forward_batch(in);
    return AgeEmbedding{reshape(out, {out.dim(1)}), na};
}

void AgeEncoder::collect(ParamList& out) const {
    l1_.collect(out, "age.l1");
    l2_.collect(out, "age.l2");
    l3_.collect(out, "age.l3");
    l4_.collect(out, "age.l4");
    n1_.collect(out, "age.n1");
    n2_.collect(out, "age.n2");
    n3_.collect(out, "age.n3");
}

IdentityNet::IdentityNet(int latent_c, int latent_hw, int id_channels, int embed_dim,
                         Rng& rng)
    : id_channels_(id_channels), embed_dim_(embed_dim) {
    const int hidden = 32;
    enc1_ = Conv2dLayer(latent_c, hidden, 3, 1, 1, rng);
    enc_n1_ = GroupNormLayer(hidden, 8);
    enc2_ = Conv2dLayer(hidden, hidden, 3, 1, 1, rng);
    enc_n2_ = GroupNormLayer(hidden, 8);
    enc3_ = Conv2dLayer(hidden, id_channels, 3, 1, 1, rng);
    dec1_ = Conv2dLayer(id_channels, hidden, 3, 1, 1, rng);
    dec_n1_ = GroupNormLayer(hidden, 8);
    dec2_ = Conv2dLayer(hidden, hidden, 3, 1, 1, rng);
    dec_n2_ = GroupNormLayer(hidden, 8);
    dec3_ = Conv2dLayer(hidden, latent_c, 3, 1, 1, rng);
    proj1_ = LinearLayer(static_cast<int64_t>(id_channels) * latent_hw, 256, rng);
    proj2_ = LinearLayer(256, embed_dim, rng);
}

Tensor IdentityNet::encode_grid(const Tensor& latents) const {
    if (latents.ndim() != 4) throw DimError("identity encoder expects [N,c,h,w]");
    Tensor h = relu(enc_n1_(enc1_(latents)));
    h = relu(enc_n2_(enc2_(h)));
    return enc3_(h);
}

Tensor IdentityNet::decode_grid(const Tensor& grids) const {
    Tensor h = relu(dec_n1_(dec1_(grids)));
    h = relu(dec_n2_(dec2_(h)));
    return dec3_(h);
}

Tensor IdentityNet::project(const Tensor& grids) const {
    Tensor flat = reshape(grids, {grids.dim(0), grids.numel() / grids.dim(0)});
    return proj2_(relu(proj1_(flat)));
}

IdentityFeatures IdentityNet::encode(const LatentGrid& latent) const {
    NoGrad ng;
    Tensor z = reshape(latent.values,
                       {1, latent.values.dim(0), latent.values.dim(1), latent.values.dim(2)});
    Tensor grid = encode_grid(z);
    Tensor emb = project(grid);
    return IdentityFeatures{reshape(grid, {grid.dim(1), grid.dim(2), grid.dim(3)}),
                            reshape(emb, {emb.dim(1)})};
}

Tensor IdentityNet::loss_embedding(const Tensor& grids, bool use_projector) const {
    if (use_projector) return project(grids);
    return reshape(grids, {grids.dim(0), grids.numel() / grids.dim(0)});
}

void IdentityNet::collect(ParamList& out) const {
    enc1_.collect(out, "irl.enc1");
    enc_n1_.collect(out, "irl.enc_n1");
    enc2_.collect(out, "irl.enc2");
    enc_n2_.collect(out, "irl.enc_n2");
    enc3_.collect(out, "irl.enc3");
    dec1_.collect(out, "irl.dec1");
    dec_n1_.collect(out, "irl.dec_n1");
    dec2_.collect(out, "irl.dec2");
    dec_n2_.collect(out, "irl.dec_n2");
    dec3_.collect(out, "irl.dec3");
    proj1_.collect(out, "irl.proj1");
    proj2_.collect(out, "irl.proj2");
}

namespace {

Tensor as_batch(const Tensor& e) {
    if (e.ndim() == 1) return reshape(e, {1, e.dim(0)});
    if (e.ndim() == 2) return e;
    throw DimError("embedding must be [e] or [B,e]");
}

void check_nonzero_rows(const Tensor& e, const char* what) {
    for (int64_t r = 0; r < e.dim(0); ++r) {
        double norm = 0.0;
        for (int64_t c = 0; c < e.dim(1); ++c) {
            double v = e.data()[r * e.dim(1) + c];
            norm += v * v;
        }
        if (norm == 0.0) throw DomainError(std::string(what) + ": zero embedding vector");
    }
}

}  // namespace

Tensor triplet_loss(const Tensor& ea_in, const Tensor& ep_in, const Tensor& en_in,
                    double margin) {
    if (margin < 0.0) throw DomainError("triplet margin must be >= 0");
    Tensor ea = as_batch(ea_in), ep = as_batch(ep_in), en = as_batch(en_in);
    require_same_shape(ea, ep, "triplet_loss");
    require_same_shape(ea, en, "triplet_loss");
    Tensor d_pos = sum_rows(square(sub(ea, ep)));
    Tensor d_neg = sum_rows(square(sub(ea, en)));
    Tensor z = add_scalar(sub(d_pos, d_neg), static_cast<float>(margin));
    return mean(relu(z));
}

Tensor cosine_loss(const Tensor& ea_in, const Tensor& ep_in) {
    Tensor ea = as_batch(ea_in), ep = as_batch(ep_in);
    require_same_shape(ea, ep, "cosine_loss");
    check_nonzero_rows(ea, "cosine_loss");
    check_nonzero_rows(ep, "cosine_loss");
    Tensor dot = sum_rows(mul(ea, ep));
    Tensor na = sqrt(sum_rows(square(ea)));
    Tensor nb = sqrt(sum_rows(square(ep)));
    Tensor cos = div(dot, mul(na, nb));
    return mean(add_scalar(neg(cos), 1.0f));
}

Tensor collapse_reg(const Tensor& ea_in, const Tensor& ep_in, double gamma) {
    Tensor ea = as_batch(ea_in), ep = as_batch(ep_in);
    require_same_shape(ea, ep, "collapse_reg");
    if (ea.dim(0) < 2) throw ContractError("collapse_reg requires a batch of >= 2");
    int64_t b = ea.dim(0), e = ea.dim(1);
    Tensor za = standardize_cols(ea);
    Tensor zp = standardize_cols(ep);
    Tensor corr = mul_scalar(matmul(transpose2d(za), zp), 1.0f / static_cast<float>(b));
    Tensor eye = Tensor::zeros({e, e});
    for (int64_t i = 0; i < e; ++i) eye.data()[i * e + i] = 1.0f;
    return mul_scalar(sum(square(sub(corr, eye))), static_cast<float>(gamma));
}

Tensor identity_loss(const Tensor& ea, const Tensor& ep, const Tensor& en, double margin,
                     double gamma) {
    return add(add(triplet_loss(ea, ep, en, margin), cosine_loss(ea, ep)),
               collapse_reg(ea, ep, gamma));
}

TripletTensors to_triplet_tensors(const std::vector<TripletSample>& batch) {
    if (batch.empty()) throw ContractError("empty triplet batch");
    std::vector<Tensor> a, p, n;
    for (const auto& t : batch) {
        if (t.anchor.subject_id != t.positive.subject_id ||
            t.anchor.subject_id == t.negative.subject_id)
            throw ContractError("triplet batch violates subject constraints");
        a.push_back(t.anchor.image);
        p.push_back(t.positive.image);
        n.push_back(t.negative.image);
    }
    return TripletTensors{stack_batch(a), stack_batch(p), stack_batch(n)};
}

IrlStepResult irl_train_step(const IdentityNet& net, const Autoencoder& ae,
                             const TripletTensors& batch, double margin, double gamma,
                             bool use_identity_loss, bool use_projector, Adam& opt) {
    Tensor za, zp, zn;
    {
        NoGrad ng;  // autoencoder frozen
        za = ae.encode_batch(batch.anchors).detach();
        zp = ae.encode_batch(batch.positives).detach();
        zn = ae.encode_batch(batch.negatives).detach();
    }
    Tensor ga = net.encode_grid(za);
    Tensor gp = net.encode_grid(zp);
    Tensor gn = net.encode_grid(zn);

    Tensor recon = mul_scalar(add(add(l1_loss(net.decode_grid(ga), za),
                                      l1_loss(net.decode_grid(gp), zp)),
                                  l1_loss(net.decode_grid(gn), zn)),
                              1.0f / 3.0f);
    IrlStepResult res;
    Tensor loss = recon;
    if (use_identity_loss) {
        Tensor ea = net.loss_embedding(ga, use_projector);
        Tensor ep = net.loss_embedding(gp, use_projector);
        Tensor en = net.loss_embedding(gn, use_projector);
        Tensor lt = triplet_loss(ea, ep, en, margin);
        Tensor lo = cosine_loss(ea, ep);
        Tensor lc = collapse_reg(ea, ep, gamma);
        res.triplet = lt.item();
        res.cosine = lo.item();
        res.collapse = lc.item();
        loss = add(add(add(lt, lo), lc), recon);
    }
    res.recon = recon.item();
    res.total = loss.item();
    if (!std::isfinite(res.total)) throw NumericAbort("irl_train_step: non-finite loss");
    opt.zero_grad();
    backward(loss);
    // Projector may sit outside the graph when use_projector is false.
    for (auto& p : opt.params()) p.ensure_grad();
    opt.step();
    return res;
}

}  // namespace ipldm
