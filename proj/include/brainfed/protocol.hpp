#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "brainfed/fusion.hpp"
#include "brainfed/message.hpp"
#include "brainfed/synthdata.hpp"

namespace brainfed {

enum class Modality : int { Image = 0, Text = 1 };

/// Which parts of the three-tier synchronization run each epoch.
///   None       - clients never pull from the global model.
///   RetainCopy - intermediate tier copied from global, advanced kept local.
///   RetainDfl  - advanced tier adaptively fused, intermediate kept local.
///   Full       - intermediate copied and advanced adaptively fused.
enum class SyncMode : int { None = 0, RetainCopy = 1, RetainDfl = 2, Full = 3 };

std::string sync_mode_name(SyncMode mode);
SyncMode sync_mode_from_name(const std::string& name);

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    double learning_rate = 3e-4;
    double momentum = 0.9;
    // Shadow decay sized for short runs: at ~1.6k minibatch steps a 0.999
    // decay would lag the live weights by most of the run, so the default
    // keeps the lag-to-run-length ratio of long training schedules.
    double ema_alpha = 0.9;
    bool ema_per_epoch = false;  // default: shadow updated after every minibatch
    std::size_t dfl_steps = 5;   // capped at the number of available batches
    // Fusion-weight gradients are damped twice over (loss gradient times the
    // small global-local parameter gap), so the step size is large; clipping
    // bounds every update.
    double dfl_learning_rate = 1e3;
    LossConfig loss_cfg;
    std::size_t hidden_dim = 64;
    std::size_t num_residual_blocks = 4;
    std::size_t advanced_count_override = 0;  // 0 = default partition (last two layers)
    SyncMode sync_mode = SyncMode::Full;
    std::size_t workers = 1;
    std::size_t num_subjects = 0;  // 0 = every subject in the dataset
    std::uint64_t seed = 1;
    bool shuffle_batches = true;

    void validate() const;
    std::size_t layer_count() const { return num_residual_blocks + 3; }
    LayerPartition partition() const;
};

/// One modality lane of a client: live parameters, their EMA shadow, the
/// fusion weights, and SGD momentum buffers.
struct ModelState {
    ParamSet params;
    ParamSet ema_shadow;
    FusionWeights fusion_w;
    ParamSet momentum;
};

struct ClientState {
    std::uint16_t subject_id = 0;
    std::size_t sample_count = 0;
    ModelState image;
    ModelState text;
    Rng rng;

    ModelState& lane(Modality m) { return m == Modality::Image ? image : text; }
    const ModelState& lane(Modality m) const { return m == Modality::Image ? image : text; }
};

struct GlobalState {
    ParamSet image_shared;  // layers [foundational_end, total) only
    ParamSet text_shared;
    std::uint32_t epoch = 0;

    ParamSet& lane(Modality m) { return m == Modality::Image ? image_shared : text_shared; }
    const ParamSet& lane(Modality m) const { return m == Modality::Image ? image_shared : text_shared; }
};

struct ClientEpochMetrics {
    std::uint16_t subject_id = 0;
    double train_loss_image = 0.0;
    double train_loss_text = 0.0;
};

struct EpochResult {
    std::vector<ClientState> clients;
    GlobalState global;
    std::vector<ClientEpochMetrics> metrics;
    MessageLog log;
};

struct TrainingReport {
    std::vector<ClientState> clients;
    GlobalState global;
    std::vector<std::vector<ClientEpochMetrics>> epoch_metrics;  // [epoch][client]
    MessageLog log;
};

/// Elementwise alpha * shadow + (1 - alpha) * live.
ParamSet ema_update(const ParamSet& shadow, const ParamSet& live, double alpha);

/// Data-proportional average of shared-tier parameter sets, accumulated in
/// ascending upload order: sum_s k_s theta'_s with k_s = count_s / sum counts.
ParamSet aggregate(const std::vector<std::pair<ParamSet, std::size_t>>& uploads);

/// One synchronization + local-training cycle over every client, then global
/// aggregation. Pure: inputs are untouched, new states are returned, so a
/// thrown error leaves the caller at the epoch-start state. With cfg.workers
/// greater than one, clients run concurrently; results are bit-identical to
/// the sequential schedule.
EpochResult run_epoch(const std::vector<ClientState>& clients, const GlobalState& global,
                      const Corpus& corpus, const TrainConfig& cfg);

using EpochObserver =
    std::function<void(std::size_t epoch, const std::vector<ClientState>&, const GlobalState&)>;

/// Full cyclical run: common-seed shared tiers, per-subject foundational
/// tiers, cfg.epochs epochs, message audit log. The observer (if any) sees
/// the committed state after each epoch.
TrainingReport run_training(const Corpus& corpus, const TrainConfig& cfg,
                            const EpochObserver& observer = {});

/// Full parameter stack for global-model inference: the subject's
/// foundational layers followed by the global shared tiers.
ParamSet compose_global(const std::vector<const Layer*>& subject_foundational,
                        const ParamSet& global_shared);
ParamSet compose_global(const ClientState& client, const GlobalState& global, Modality modality,
                        const LayerPartition& partition);

/// Checkpoint files for one epoch: global_ep{N}.bgck, client{S}_ep{N}.bgck,
/// fusion{S}_ep{N}.bgck. Image and text lanes share one file with "img/" and
/// "txt/" layer-name prefixes.
void save_run_checkpoints(const std::string& dir, const std::vector<ClientState>& clients,
                          const GlobalState& global, std::size_t epoch);

ParamSet merge_prefixed(const ParamSet& img, const ParamSet& txt);
std::pair<ParamSet, ParamSet> split_prefixed(const ParamSet& merged);

ParamSet fusion_weights_as_paramset(const FusionWeights& w);
FusionWeights fusion_weights_from_paramset(const ParamSet& ps, double learning_rate);

}  // namespace brainfed
