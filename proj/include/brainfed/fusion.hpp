#pragma once

#include "brainfed/losses.hpp"
#include "brainfed/network.hpp"

namespace brainfed {

/// One training batch for a single modality.
struct Batch {
    Tensor inputs;   // [B x d]
    Tensor targets;  // [B x E]
};

/// Per-element aggregation weights over the advanced tier: one tensor per
/// advanced layer for the weight and one for the bias, each in [0,1].
/// Initialized to all-ones ("adopt the global").
struct FusionWeights {
    struct Entry {
        std::string layer_name;
        Tensor weight_w;
        Tensor bias_w;
    };
    std::vector<Entry> entries;
    double learning_rate = 1e3;
    std::size_t span = 0;  // advanced layer count m

    static FusionWeights ones_for(const ParamSet& params, const LayerPartition& partition,
                                  double learning_rate = 1e3);

    /// Clamp every element into [0,1].
    void clip();
    double min_element() const;
    double max_element() const;
};

/// Three-tier synchronization: foundational layers keep the local values,
/// intermediate layers take the global values verbatim, advanced layers blend
///   fused = local + (global - local) (.) w.
/// `global_params` may be a full stack or only the shared tiers
/// [foundational_end, total); inputs are untouched.
ParamSet fuse(const ParamSet& local, const ParamSet& global_params, const LayerPartition& partition,
              const FusionWeights& w);

/// Gradient-trains the fusion weights against frozen local/global parameters:
/// each step fuses, runs the modality loss on one batch, and descends
///   grad_w = grad_advanced_params (.) (global - local),
/// clipping back into [0,1]. Batches are cycled in order.
FusionWeights train_weights(const ParamSet& local, const ParamSet& global_params,
                            const LayerPartition& partition, const FusionWeights& w,
                            const std::vector<Batch>& batches, const LossConfig& loss_cfg,
                            std::size_t steps);

}  // namespace brainfed
