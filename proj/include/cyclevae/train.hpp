#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cyclevae/data.hpp"
#include "cyclevae/losses.hpp"
#include "cyclevae/model.hpp"
#include "cyclevae/optim.hpp"
#include "cyclevae/rng.hpp"

namespace cyclevae {

struct TrainConfig {
    int iterations = 1;
    int batch_size = 64;
    AdamConfig adam;
    LossWeights weights;
    std::uint64_t seed = 0;
    int checkpoint_every = 0;    // 0 writes only the final checkpoint
    std::string output_dir;      // empty disables checkpoint and log files

    /// Throws ConfigError on non-positive iterations or batch size, or on
    /// invalid optimizer or loss-weight settings.
    void validate() const;
};

struct TrainRecord {
    int iteration = 0;  // 1-based
    Real forward_total = 0.0;
    Real forward_recon = 0.0;
    Real forward_kl = 0.0;
    Real reverse = 0.0;
    Real wall_ms = 0.0;
};

/// Per-iteration loss trace. The text format is one header line
/// "# iteration forward_total forward_recon forward_kl reverse wall_ms"
/// followed by one space-separated record per line, losses printed with
/// enough digits to round-trip doubles exactly.
struct TrainLog {
    std::vector<TrainRecord> records;

    void save(const std::string& path) const;
    static TrainLog load(const std::string& path);

    /// Field-by-field equality of every record, ignoring wall_ms. Wall
    /// clock is the one field two identical runs cannot share.
    bool same_losses(const TrainLog& other) const;
};

/// One forward-cycle step: backpropagates the swapped-reconstruction plus
/// KL objective and updates every parameter, encoder and decoder alike.
ForwardCycleMetrics train_step_forward(const PairBatch& batch, ModelParams& params,
                                       AdamState& state, const TrainConfig& config,
                                       Rng& rng);

/// One reverse-cycle step: draws the shared prior sample, backpropagates
/// the pairwise loss scaled by reverse_weight, and updates the encoder
/// parameters only. Decoder tensors are left bitwise untouched. Returns
/// the unweighted loss value.
Real train_step_reverse(const Tensor& x1, const Tensor& x2, ModelParams& params,
                        AdamState& state, const TrainConfig& config, Rng& rng);

struct FitResult {
    ModelParams params;
    TrainLog log;
};

/// Alternating training: per iteration exactly one forward step on a
/// same-class pair batch, then one reverse step on two independent
/// batches. Fully reproducible from config.seed. When output_dir is set,
/// writes model.cvae plus a .state resume sidecar at the checkpoint
/// cadence and a final train_log.txt.
FitResult fit(const LabeledImageDataset& dataset, const ModelConfig& model_config,
              const TrainConfig& train_config);

/// Continues a run recorded by a checkpoint's .state sidecar until
/// train_config.iterations. The restored parameters, moments, and rng
/// stream make the remaining trace match an uninterrupted run exactly.
/// The returned log holds only the iterations executed here.
FitResult resume_fit(const LabeledImageDataset& dataset,
                     const std::string& checkpoint_path,
                     const TrainConfig& train_config);

/// Full-precision resume sidecar (parameters, moments, step counts, rng
/// state, completed iteration count) for `checkpoint_path + ".state"`.
void save_train_state(const std::string& checkpoint_path, const ModelParams& params,
                      const AdamState& state, const Rng& rng, int completed_iterations);

struct TrainState {
    ModelParams params;
    AdamState opt_state;
    std::string rng_state;
    int completed_iterations = 0;
};

TrainState load_train_state(const std::string& checkpoint_path);

}  // namespace cyclevae
