#include "brainfed/fusion.hpp"

#include <algorithm>

namespace brainfed {

namespace {

// Index of the layer in `global_params` matching local layer index i.
// Accepts a full-length stack (offset 0) or a shared-tier-only stack
// (offset foundational_end).
std::size_t global_offset(const ParamSet& local, const ParamSet& global_params,
                          const LayerPartition& partition) {
    if (global_params.size() == local.size()) return 0;
    if (global_params.size() == local.size() - partition.foundational_end) {
        return partition.foundational_end;
    }
    throw dim_error("fuse: global stack has " + std::to_string(global_params.size()) +
                    " layers; expected " + std::to_string(local.size()) + " or " +
                    std::to_string(local.size() - partition.foundational_end));
}

void check_span(const FusionWeights& w, const ParamSet& local, const LayerPartition& partition) {
    if (w.span != partition.advanced_count() || w.entries.size() != w.span) {
        throw contract_error("fusion weights: span " + std::to_string(w.span) +
                             " does not cover the advanced tier of size " +
                             std::to_string(partition.advanced_count()));
    }
    for (std::size_t i = 0; i < w.span; ++i) {
        const Layer& layer = local.layers[partition.intermediate_end + i];
        const FusionWeights::Entry& entry = w.entries[i];
        if (!entry.weight_w.same_shape(layer.weight) || !entry.bias_w.same_shape(layer.bias)) {
            throw dim_error("fusion weights: entry '" + entry.layer_name +
                            "' does not match layer '" + layer.name + "'");
        }
    }
}

}  // namespace

FusionWeights FusionWeights::ones_for(const ParamSet& params, const LayerPartition& partition,
                                      double lr) {
    validate_partition(params, partition);
    FusionWeights w;
    w.learning_rate = lr;
    w.span = partition.advanced_count();
    for (std::size_t i = partition.intermediate_end; i < partition.total; ++i) {
        const Layer& layer = params.layers[i];
        w.entries.push_back({layer.name, Tensor::full(layer.weight.shape, 1.0),
                             Tensor::full(layer.bias.shape, 1.0)});
    }
    return w;
}

void FusionWeights::clip() {
    for (Entry& entry : entries) {
        for (double& v : entry.weight_w.data) v = std::clamp(v, 0.0, 1.0);
        for (double& v : entry.bias_w.data) v = std::clamp(v, 0.0, 1.0);
    }
}

double FusionWeights::min_element() const {
    double m = 1.0;
    for (const Entry& entry : entries) {
        for (double v : entry.weight_w.data) m = std::min(m, v);
        for (double v : entry.bias_w.data) m = std::min(m, v);
    }
    return m;
}

double FusionWeights::max_element() const {
    double m = 0.0;
    for (const Entry& entry : entries) {
        for (double v : entry.weight_w.data) m = std::max(m, v);
        for (double v : entry.bias_w.data) m = std::max(m, v);
    }
    return m;
}

ParamSet fuse(const ParamSet& local, const ParamSet& global_params, const LayerPartition& partition,
              const FusionWeights& w) {
    validate_partition(local, partition);
    const std::size_t offset = global_offset(local, global_params, partition);
    check_shape_compatible(local, global_params, partition.foundational_end, partition.total, offset);
    check_span(w, local, partition);

    ParamSet fused = local;
    // Intermediate tier: global verbatim.
    for (std::size_t i = partition.foundational_end; i < partition.intermediate_end; ++i) {
        fused.layers[i].weight = global_params.layers[i - offset].weight;
        fused.layers[i].bias = global_params.layers[i - offset].bias;
    }
    // Advanced tier: local + (global - local) (.) w. The clip endpoints are
    // handled exactly: w = 1 adopts the global value bit-for-bit (complete
    // overwrite) and w = 0 keeps the local value bit-for-bit.
    auto blend = [](double loc, double glob, double wv) {
        if (wv == 1.0) return glob;
        if (wv == 0.0) return loc;
        return loc + (glob - loc) * wv;
    };
    for (std::size_t k = 0; k < w.span; ++k) {
        const std::size_t i = partition.intermediate_end + k;
        const Layer& loc = local.layers[i];
        const Layer& glob = global_params.layers[i - offset];
        Layer& out = fused.layers[i];
        for (std::size_t j = 0; j < out.weight.data.size(); ++j) {
            out.weight.data[j] =
                blend(loc.weight.data[j], glob.weight.data[j], w.entries[k].weight_w.data[j]);
        }
        for (std::size_t j = 0; j < out.bias.data.size(); ++j) {
            out.bias.data[j] = blend(loc.bias.data[j], glob.bias.data[j], w.entries[k].bias_w.data[j]);
        }
    }
    return fused;
}

FusionWeights train_weights(const ParamSet& local, const ParamSet& global_params,
                            const LayerPartition& partition, const FusionWeights& w,
                            const std::vector<Batch>& batches, const LossConfig& loss_cfg,
                            std::size_t steps) {
    if (steps < 1) throw contract_error("train_weights: steps must be >= 1");
    if (batches.empty()) throw contract_error("train_weights: batches must be nonempty");
    validate_partition(local, partition);
    const std::size_t offset = global_offset(local, global_params, partition);
    check_shape_compatible(local, global_params, partition.foundational_end, partition.total, offset);

    FusionWeights current = w;
    check_span(current, local, partition);

    for (std::size_t step = 0; step < steps; ++step) {
        const Batch& batch = batches[step % batches.size()];
        const ParamSet fused = fuse(local, global_params, partition, current);
        auto [pred, cache] = forward(fused, batch.inputs);
        const LossValue loss = modality_loss(pred, batch.targets, loss_cfg);
        const ParamSet grads = backward(fused, cache, loss.grad_pred);

        // d loss / d w = d loss / d fused_param (.) (global - local), advanced tier only.
        for (std::size_t k = 0; k < current.span; ++k) {
            const std::size_t i = partition.intermediate_end + k;
            const Layer& loc = local.layers[i];
            const Layer& glob = global_params.layers[i - offset];
            const Layer& g = grads.layers[i];
            FusionWeights::Entry& entry = current.entries[k];
            const double eta = current.learning_rate;
            for (std::size_t j = 0; j < entry.weight_w.data.size(); ++j) {
                entry.weight_w.data[j] -=
                    eta * g.weight.data[j] * (glob.weight.data[j] - loc.weight.data[j]);
            }
            for (std::size_t j = 0; j < entry.bias_w.data.size(); ++j) {
                entry.bias_w.data[j] -= eta * g.bias.data[j] * (glob.bias.data[j] - loc.bias.data[j]);
            }
        }
        current.clip();
    }
    return current;
}

}  // namespace brainfed
