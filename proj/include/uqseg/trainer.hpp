#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uqseg/losses.hpp"
#include "uqseg/metrics.hpp"
#include "uqseg/net.hpp"
#include "uqseg/rng.hpp"
#include "uqseg/synthdata.hpp"

namespace uqseg {

enum class RunKind { CM1, CM2, UM1, UM2 };
enum class TargetRefresh { step, epoch };
enum class UncLossMask { tumor, dilated, global };

RunKind run_kind_from_string(const std::string& s);
std::string run_kind_name(RunKind k);

struct TrainConfig {
    RunKind run_kind = RunKind::CM1;
    int epochs = 30;
    int train_batches_per_epoch = 16;
    int val_batches_per_epoch = 4;
    int batch_size = 2;
    Dims patch_dims{32, 32, 32};
    double lr_start = 0.001;
    LossWeights weights;
    uint64_t seed = 0;
    TargetRefresh target_refresh = TargetRefresh::step;
    UncLossMask unc_loss_mask = UncLossMask::tumor;
    int unc_mask_dilation = 3;
    int depth = 3;
    int base_width = 8;
    int threads = 0;  // 0 = min(batch_size, hardware cores)
    int summary_window = 20;
    std::string out_dir;  // empty runs fully in memory

    // uncertainty losses are active only for CM1/UM1
    bool unc_active() const { return run_kind == RunKind::CM1 || run_kind == RunKind::UM1; }
    // lambdas forced to zero for the ablation runs CM2/UM2
    LossWeights effective_weights() const;
    void validate() const;
};

// lr_start * (1 - t / epochs); Error(usage) outside [0, epochs]
double lr_at(int epoch, const TrainConfig& cfg);

// One adaptive-moment update (decay 0.9 / 0.999, eps 1e-8, bias-corrected
// with 1-based step t). Values are rounded through f32 after each update so
// checkpoints reproduce the trajectory bit-exactly.
void adam_update(double& p, double& m, double& v, double g, double lr, int64_t t);

struct TrainState {
    Parameters params;
    Gradients moment1, moment2;
    int64_t step_count = 0;
    int epoch = 0;  // completed epochs
    Rng rng;
};

struct PatchSample {
    Tensor image;
    LabelVolume labels;
    // epoch-frozen uncertainty target (same layout as the patch); empty in
    // per-step refresh mode
    std::vector<double> frozen_target;
};

using Batch = std::vector<PatchSample>;

// Binds a config to a dataset: derives the net shape, the combined-tumor
// label set and the per-case tumor voxel index used for biased cropping.
class TrainRun {
public:
    TrainRun(const TrainConfig& cfg, const Dataset& data);

    TrainState init_state() const;
    Batch sample_batch(TrainState& state) const;
    LossBreakdown train_step(TrainState& state, const Batch& batch) const;

    // validation metrics for the current parameters, one row per case
    std::vector<CaseMetrics> evaluate_validation(const TrainState& state) const;

    // rebuild the frozen per-case targets (epoch refresh mode)
    void refresh_epoch_targets(const TrainState& state);

    const NetConfig& net_config() const { return net_cfg_; }
    const TrainConfig& config() const { return cfg_; }
    const Dataset& data() const { return data_; }

    void save_state(const TrainState& state, const std::string& dir) const;
    TrainState load_state(const std::string& dir) const;

    // FNV-1a over the f32 bytes of every tensor in the given partitions
    uint64_t param_digest(const TrainState& state, bool trunk_and_seg_only) const;

private:
    TrainConfig cfg_;
    const Dataset& data_;
    NetConfig net_cfg_;
    std::vector<uint16_t> tumor_set_;
    std::vector<std::vector<uint64_t>> tumor_voxels_;  // per train case
    std::vector<std::vector<double>> epoch_targets_;   // per train case, epoch mode only

    PatchSample crop_case(const CaseData& c, size_t case_idx, uint32_t ox, uint32_t oy,
                          uint32_t oz) const;
    LossBreakdown step_losses(const TrainState& state, const Batch& batch, Gradients& grads) const;
};

struct FitResult {
    TrainState state;
    RunSummary summary;
    std::vector<std::map<std::string, double>> epoch_rows;
};

// Full training loop: epochs x train batches, per-epoch validation, one
// checkpoint directory per epoch, metrics.csv / digests.csv / summary.json
// under cfg.out_dir when set. resume_checkpoint restarts from a saved state.
FitResult fit(const TrainConfig& cfg, const Dataset& data, const std::string& resume_checkpoint = {});

}  // namespace uqseg
