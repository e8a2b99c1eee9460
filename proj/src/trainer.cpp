#include "ipldm/trainer.hpp"

#include <cstring>

namespace ipldm {

namespace {

uint64_t stream_seed(uint64_t seed, const char* tag) {
    uint64_t h = 1469598103934665603ULL;
    for (const char* p = tag; *p; ++p) {
        h ^= static_cast<unsigned char>(*p);
        h *= 1099511628211ULL;
    }
    return splitmix64(seed ^ h);
}

// Parameter namespaces each stage owns in the checkpoint.
std::vector<std::string> stage_prefixes(const std::string& stage) {
    if (stage == "ae") return {"ae."};
    if (stage == "irl") return {"irl."};
    if (stage == "unet") return {"unet.", "age."};
    if (stage == "control") return {"unet.", "fuse.", "ctrl."};
    throw ContractError("unknown stage '" + stage + "'");
}

}  // namespace

ModelBundle Trainer::make_bundle(const RunConfig& cfg) {
    cfg.validate();
    ModelBundle b;
    b.cfg = cfg;
    b.sched = make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);

    AEConfig ae_cfg;
    ae_cfg.resolution = cfg.resolution;
    ae_cfg.f = cfg.latent_f;
    ae_cfg.c = cfg.latent_c;
    ae_cfg.base = cfg.ae_base;
    Rng ae_rng(stream_seed(cfg.seed, "init-ae"));
    b.ae = Autoencoder(ae_cfg, ae_rng);

    Rng age_rng(stream_seed(cfg.seed, "init-age"));
    b.age = AgeEncoder(cfg.cond_dim, age_rng);

    int latent_hw = (cfg.resolution / cfg.latent_f) * (cfg.resolution / cfg.latent_f);
    Rng irl_rng(stream_seed(cfg.seed, "init-irl"));
    b.irl = IdentityNet(cfg.latent_c, latent_hw, cfg.id_channels, cfg.embed_dim, irl_rng);

    DenoiserConfig dn_cfg;
    dn_cfg.in_channels = cfg.latent_c;
    dn_cfg.base = cfg.unet_base;
    dn_cfg.cond_dim = cfg.cond_dim;
    dn_cfg.time_dim = cfg.time_dim;
    Rng unet_rng(stream_seed(cfg.seed, "init-unet"));
    b.unet = DenoiserUNet(dn_cfg, unet_rng);

    Rng fuse_rng(stream_seed(cfg.seed, "init-fuse"));
    b.fusion = FusionConv(cfg.latent_c, fuse_rng);
    return b;
}

Embedder Trainer::projector_embedder(const ModelBundle& bundle) {
    const IdentityNet* irl = &bundle.irl;
    const Autoencoder* ae = &bundle.ae;
    return [irl, ae](const Tensor& image) {
        IdentityFeatures feats = irl->encode(ae->encode(image));
        std::vector<double> out(static_cast<std::size_t>(feats.embedding.numel()));
        for (int64_t i = 0; i < feats.embedding.numel(); ++i)
            out[static_cast<std::size_t>(i)] = feats.embedding.data()[i];
        return out;
    };
}

Trainer::Trainer(RunConfig cfg) : cfg_(std::move(cfg)), bundle_(make_bundle(cfg_)) {}

const Dataset& Trainer::train_data() {
    if (!data_ready_) {
        train_ds_ = generate_dataset(cfg_.n_subjects, {cfg_.scans_min, cfg_.scans_max},
                                     cfg_.profile_enum(), cfg_.resolution, cfg_.seed);
        data_ready_ = true;
    }
    return train_ds_;
}

void Trainer::require_stages(const std::string& stage,
                             const std::vector<std::string>& deps) const {
    for (const auto& dep : deps)
        if (!stages_done_.count(dep))
            throw ContractError("ordered-stage error: stage '" + stage + "' requires '" +
                                dep + "' to be trained first");
}

void Trainer::set_trainable_for(const std::string& stage) {
    ParamList ae_p, age_p, irl_p, unet_enc, unet_dec, fuse_p, ctrl_p;
    bundle_.ae.collect(ae_p);
    bundle_.age.collect(age_p);
    bundle_.irl.collect(irl_p);
    bundle_.unet.collect_encoder(unet_enc);
    bundle_.unet.collect_decoder(unet_dec);
    bundle_.fusion.collect(fuse_p);
    if (bundle_.control) bundle_.control->collect(ctrl_p);

    ae_p.set_requires_grad(stage == "ae");
    irl_p.set_requires_grad(stage == "irl");
    age_p.set_requires_grad(stage == "unet");
    unet_enc.set_requires_grad(stage == "unet");
    unet_dec.set_requires_grad(stage == "unet" || stage == "control");
    fuse_p.set_requires_grad(stage == "control");
    ctrl_p.set_requires_grad(stage == "control");
}

std::vector<Tensor> Trainer::trainable_params(const std::string& stage) const {
    ParamList params;
    if (stage == "ae") {
        bundle_.ae.collect(params);
    } else if (stage == "irl") {
        bundle_.irl.collect(params);
    } else if (stage == "unet") {
        bundle_.unet.collect(params);
        bundle_.age.collect(params);
    } else if (stage == "control") {
        bundle_.unet.collect_decoder(params);
        bundle_.fusion.collect(params);
        if (bundle_.control) bundle_.control->collect(params);
    }
    return params.tensors();
}

StageResult Trainer::run_stage(const std::string& stage) {
    const Dataset& ds = train_data();
    ProfileRange range = profile_range(cfg_.profile_enum());
    StageResult result;
    result.stage = stage;

    if (stage == "ae") {
        set_trainable_for(stage);
        AdamConfig ac;
        ac.lr = cfg_.ae_lr;
        Adam opt(trainable_params(stage), ac);
        Rng rng(stream_seed(cfg_.seed, "ae-batch"));
        for (int step = 0; step < cfg_.ae_steps; ++step) {
            std::vector<Tensor> imgs;
            for (int b = 0; b < cfg_.ae_batch; ++b)
                imgs.push_back(ds.records[static_cast<std::size_t>(rng.uniform_int(
                                              0, static_cast<int64_t>(ds.records.size()) - 1))]
                                   .image);
            auto res = ae_train_step(bundle_.ae, stack_batch(imgs), cfg_.edge_weight, opt);
            result.losses.push_back(res.total);
        }
        stages_done_.insert("ae");
    } else if (stage == "irl") {
        require_stages(stage, {"ae"});
        set_trainable_for(stage);
        AdamConfig ac;
        ac.lr = cfg_.irl_lr;
        Adam opt(trainable_params(stage), ac);
        Rng rng(stream_seed(cfg_.seed, "irl-batch"));
        for (int step = 0; step < cfg_.irl_steps; ++step) {
            std::vector<TripletSample> batch;
            for (int b = 0; b < cfg_.irl_batch; ++b) batch.push_back(sample_triplet(ds, rng));
            auto res = irl_train_step(bundle_.irl, bundle_.ae, to_triplet_tensors(batch),
                                      cfg_.margin, cfg_.gamma_collapse, cfg_.il, cfg_.ip, opt);
            result.losses.push_back(res.total);
        }
        stages_done_.insert("irl");
    } else if (stage == "unet") {
        require_stages(stage, {"ae"});
        set_trainable_for(stage);
        AdamConfig ac;
        ac.lr = cfg_.unet_lr;
        Adam opt(trainable_params(stage), ac);
        Rng rng(stream_seed(cfg_.seed, "unet-batch"));
        for (int step = 0; step < cfg_.unet_steps; ++step) {
            std::vector<Tensor> imgs;
            std::vector<double> ages;
            for (int b = 0; b < cfg_.unet_batch; ++b) {
                const auto& rec = ds.records[static_cast<std::size_t>(rng.uniform_int(
                    0, static_cast<int64_t>(ds.records.size()) - 1))];
                imgs.push_back(rec.image);
                ages.push_back(AgeEncoder::normalize_age(rec.age, range));
            }
            auto res = pretrain_step(bundle_.unet, bundle_.age, bundle_.ae, stack_batch(imgs),
                                     ages, bundle_.sched, opt, rng);
            result.losses.push_back(res.loss);
        }
        stages_done_.insert("unet");
    } else if (stage == "control") {
        require_stages(stage, {"ae", "irl", "unet"});
        if (cfg_.cn && !bundle_.control) {
            Rng ctrl_rng(stream_seed(cfg_.seed, "init-ctrl"));
            bundle_.control.emplace(bundle_.unet, cfg_.id_channels, ctrl_rng);
        }
        set_trainable_for(stage);
        AdamConfig ac;
        ac.lr = cfg_.ctrl_lr;
        Adam opt(trainable_params(stage), ac);
        Rng rng(stream_seed(cfg_.seed, "ctrl-batch"));
        for (int step = 0; step < cfg_.ctrl_steps; ++step) {
            std::vector<std::pair<PhantomRecord, PhantomRecord>> pairs;
            for (int b = 0; b < cfg_.ctrl_batch; ++b) pairs.push_back(sample_pair(ds, rng));
            auto res = joint_train_step(bundle_, to_pair_batch(pairs, range), opt, rng);
            result.losses.push_back(res.loss);
        }
        stages_done_.insert("control");
    } else {
        throw ContractError("unknown stage '" + stage + "'");
    }
    return result;
}

Checkpoint Trainer::to_checkpoint() const {
    Checkpoint cp;
    cp.config = cfg_.to_map();
    cp.stages_done = stages_done_;
    ParamList params;
    bundle_.ae.collect(params);
    bundle_.age.collect(params);
    bundle_.irl.collect(params);
    bundle_.unet.collect(params);
    bundle_.fusion.collect(params);
    if (bundle_.control) bundle_.control->collect(params);
    for (const auto& [name, t] : params.items) cp.set_tensor(name, t.detach());
    return cp;
}

void Trainer::apply_checkpoint(const Checkpoint& cp) {
    RunConfig cp_cfg = RunConfig::from_map(cp.config);
    for (const auto& stage : cp.stages_done)
        if (cp_cfg.stage_hash(stage) != cfg_.stage_hash(stage))
            throw ContractError("config hash mismatch for completed stage '" + stage +
                                "'; refusing to reuse checkpoint");

    if (cp.stages_done.count("control") && cfg_.cn && !bundle_.control) {
        Rng ctrl_rng(stream_seed(cfg_.seed, "init-ctrl"));
        bundle_.control.emplace(bundle_.unet, cfg_.id_channels, ctrl_rng);
    }
    ParamList params;
    bundle_.ae.collect(params);
    bundle_.age.collect(params);
    bundle_.irl.collect(params);
    bundle_.unet.collect(params);
    bundle_.fusion.collect(params);
    if (bundle_.control) bundle_.control->collect(params);
    for (auto& [name, t] : params.items) {
        const Tensor* src = cp.find(name);
        if (!src) throw ContractError("checkpoint missing tensor '" + name + "'");
        if (src->shape() != t.shape())
            throw ContractError("checkpoint tensor '" + name + "' has shape " +
                                shape_str(src->shape()) + ", expected " +
                                shape_str(t.shape()));
        std::memcpy(t.data(), src->data(), sizeof(float) * static_cast<std::size_t>(t.numel()));
    }
    stages_done_ = cp.stages_done;
}

void Trainer::import_stage(const Trainer& other, const std::string& stage) {
    if (!other.stages_done_.count(stage))
        throw ContractError("import_stage: source has not completed '" + stage + "'");
    if (other.cfg_.stage_hash(stage) != cfg_.stage_hash(stage))
        throw ContractError("import_stage: config hash mismatch for '" + stage + "'");

    ParamList mine, theirs;
    auto collect_all = [](const ModelBundle& b, ParamList& out) {
        b.ae.collect(out);
        b.age.collect(out);
        b.irl.collect(out);
        b.unet.collect(out);
        b.fusion.collect(out);
        if (b.control) b.control->collect(out);
    };
    collect_all(bundle_, mine);
    collect_all(other.bundle_, theirs);
    for (const auto& prefix : stage_prefixes(stage)) {
        for (auto& [name, t] : mine.items) {
            if (name.rfind(prefix, 0) != 0) continue;
            Tensor* src = theirs.find(name);
            if (!src) throw ContractError("import_stage: source missing '" + name + "'");
            std::memcpy(t.data(), src->data(),
                        sizeof(float) * static_cast<std::size_t>(t.numel()));
        }
    }
    stages_done_.insert(stage);
}

ModelBundle load_bundle(const std::string& checkpoint_path) {
    Checkpoint cp = Checkpoint::load(checkpoint_path);
    RunConfig cfg = RunConfig::from_map(cp.config);
    for (const char* stage : {"ae", "irl", "unet", "control"})
        if (!cp.stages_done.count(stage))
            throw ContractError("checkpoint " + checkpoint_path + " is missing stage '" +
                                stage + "'; train it first");
    Trainer t(cfg);
    t.apply_checkpoint(cp);
    return std::move(t.bundle());
}

}  // namespace ipldm
