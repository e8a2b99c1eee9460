#pragma once

#include <set>

#include "ipldm/checkpoint.hpp"
#include "ipldm/control.hpp"
#include "ipldm/metrics.hpp"

namespace ipldm {

struct StageResult {
    std::string stage;
    std::vector<double> losses;  // one total loss per step
};

// Staged training driver over one ModelBundle: ae -> (irl, unet) -> control.
// Stage ordering is enforced; checkpoints refuse to load across configs whose
// stage-relevant fields differ.
class Trainer {
public:
    explicit Trainer(RunConfig cfg);

    const RunConfig& config() const { return cfg_; }
    ModelBundle& bundle() { return bundle_; }
    const ModelBundle& bundle() const { return bundle_; }
    const std::set<std::string>& stages_done() const { return stages_done_; }

    const Dataset& train_data();

    // Runs one stage loop; throws ContractError on ordering violations and
    // NumericAbort on non-finite losses.
    StageResult run_stage(const std::string& stage);

    Checkpoint to_checkpoint() const;
    void apply_checkpoint(const Checkpoint& cp);

    // Copies one completed stage's parameters (and marker) from another
    // trainer whose stage-relevant config matches.
    void import_stage(const Trainer& other, const std::string& stage);

    // Builds a fresh, deterministically initialized bundle for a config.
    static ModelBundle make_bundle(const RunConfig& cfg);

    // Judge embedder over a bundle's identity projector.
    static Embedder projector_embedder(const ModelBundle& bundle);

private:
    void require_stages(const std::string& stage,
                        const std::vector<std::string>& deps) const;
    void set_trainable_for(const std::string& stage);
    std::vector<Tensor> trainable_params(const std::string& stage) const;

    RunConfig cfg_;
    ModelBundle bundle_;
    std::set<std::string> stages_done_;
    bool data_ready_ = false;
    Dataset train_ds_;
};

// Loads a full bundle (all stages must be complete) from a checkpoint file.
ModelBundle load_bundle(const std::string& checkpoint_path);

}  // namespace ipldm
