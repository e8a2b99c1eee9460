#pragma once

#include "ipldm/image_io.hpp"
#include "ipldm/metrics.hpp"
#include "ipldm/trainer.hpp"

namespace ipldm {

// Pluggable generator so the evaluation harness can be exercised with
// oracle stubs: (source record, target age, per-pair seed) -> image.
using Generator = std::function<Tensor(const PhantomRecord&, double, uint64_t)>;

struct EvalOptions {
    int max_pairs = 60;
    uint64_t seed = 0;
};

struct PairEval {
    int64_t subject_id = 0;
    double source_age = 0.0, target_age = 0.0;
    double ssim = 0.0, psnr = 0.0, rmse = 0.0;
    bool psnr_inf = false;
};

struct BinEval {
    std::string label;
    int count_real = 0, count_gen = 0;
    bool valid = false;  // needs >= 2 samples on both sides
    double fid = 0.0, kid = 0.0;
};

struct EvalReport {
    std::vector<PairEval> pairs;
    double mean_ssim = 0.0, mean_psnr = 0.0, mean_rmse = 0.0;
    int psnr_inf_count = 0;
    double fid_overall = 0.0, kid_overall = 0.0;
    std::vector<BinEval> bins;
    double ari = 0.0;
    int n_subjects = 0;
    uint64_t feature_seed = 0;
};

// Enumerates intra-subject cross-age pairs (both directions, round-robin
// across subjects up to max_pairs), generates each target, and computes the
// full metric set. Generation parallelizes across pairs; aggregation order is
// fixed by pair index.
EvalReport evaluate_generator(const Dataset& holdout, const Generator& gen,
                              const Embedder& judge, const EvalOptions& opts);

// Production generator: the full age-transformation pipeline of a bundle.
Generator bundle_generator(const ModelBundle& bundle);

void write_report_json(const std::string& path, const EvalReport& report);
// Table-2-shaped per-bin CSV: one row for FID, one for KID.
void write_report_csv(const std::string& path, const EvalReport& report,
                      Profile profile);

// Rank correlation with average ranks on ties.
double spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

struct AblationRow {
    char preset = 'A';
    bool cc = true, cn = false, il = false, ip = false;
    EvalReport report;
};

// Trains presets A-D with shared seeds (sharing the flag-independent ae/unet
// stages and compatible irl variants), evaluates them with one shared judge,
// and returns the rows in preset order.
std::vector<AblationRow> run_ablation(const RunConfig& base,
                                      const std::function<void(const std::string&)>& log);

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);
void write_ablation_json(const std::string& path, const std::vector<AblationRow>& rows);

}  // namespace ipldm
