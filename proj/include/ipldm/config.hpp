#pragma once

#include <map>
#include <string>

#include "ipldm/phantom.hpp"

namespace ipldm {

// Full run configuration. Parsed from plain-text key=value files; unknown
// keys are rejected and every numeric field is range-checked.
struct RunConfig {
    std::string profile = "elderly";
    int resolution = 64;
    uint64_t seed = 1;
    std::string out_dir = "out";

    // Dataset
    int n_subjects = 40;
    int scans_min = 1;
    int scans_max = 5;

    // Autoencoder
    int latent_f = 4;
    int latent_c = 4;
    int ae_base = 16;
    int ae_steps = 2000;
    int ae_batch = 16;
    double ae_lr = 2e-3;
    double edge_weight = 0.5;

    // Identity representation learning
    int id_channels = 4;
    int embed_dim = 128;
    int irl_steps = 1000;
    int irl_batch = 16;
    double irl_lr = 1e-3;
    double margin = 0.2;
    double gamma_collapse = 0.005;

    // Denoiser pretraining
    int unet_base = 32;
    int cond_dim = 64;
    int time_dim = 128;
    int unet_steps = 3000;
    int unet_batch = 16;
    double unet_lr = 1e-3;

    // Joint (manipulation) stage
    int ctrl_steps = 3000;
    int ctrl_batch = 8;
    double ctrl_lr = 3e-4;

    // Noise schedule
    int timesteps = 200;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    // Ablation flags (Table-3 style nesting: cn=>cc, il=>cn, ip=>il)
    bool cc = true;
    bool cn = true;
    bool il = true;
    bool ip = true;

    // Evaluation
    int eval_subjects = 10;
    int eval_max_pairs = 60;

    Profile profile_enum() const { return profile_from_name(profile); }

    // Throws DomainError on any violated range or flag-nesting rule.
    void validate() const;

    std::map<std::string, std::string> to_map() const;
    static RunConfig from_map(const std::map<std::string, std::string>& kv);
    static RunConfig load_file(const std::string& path);

    // Scales stage hyperparameters up to the published training recipe.
    void apply_paper_scale();

    // Hash over the keys a pipeline stage actually consumes, so compatible
    // checkpoints can be shared across configs that differ elsewhere.
    uint64_t stage_hash(const std::string& stage) const;
};

}  // namespace ipldm
