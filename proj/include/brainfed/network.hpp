#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "brainfed/tensor.hpp"

namespace brainfed {

/// How a layer transforms its input activation.
enum class LayerKind : std::uint8_t {
    Linear = 0,     // y = x W^T + b
    Residual = 1,   // y = x + act(x W^T + b)
    ActLinear = 2,  // y = act(x W^T + b)
};

struct Layer {
    std::string name;
    LayerKind kind = LayerKind::Linear;
    Tensor weight;  // [out x in]
    Tensor bias;    // [out]
};

/// Ordered, named list of layers. Holds a full model, a shared-tier slice of
/// one, or any hand-built stack the forward walk can evaluate.
struct ParamSet {
    std::vector<Layer> layers;
    std::optional<int> subject_dim_tag;

    std::size_t size() const { return layers.size(); }
    bool operator==(const ParamSet& other) const;
};

/// Index boundaries splitting a ParamSet into foundational / intermediate /
/// advanced tiers. Advanced tier size m = total - intermediate_end.
struct LayerPartition {
    std::size_t foundational_end = 0;
    std::size_t intermediate_end = 0;
    std::size_t total = 0;

    LayerPartition() = default;
    LayerPartition(std::size_t f_end, std::size_t i_end, std::size_t tot);

    std::size_t advanced_count() const { return total - intermediate_end; }
};

enum class Tier : int { Foundational = 0, Intermediate = 1, Advanced = 2 };

struct NetworkConfig {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 64;
    std::size_t num_residual_blocks = 4;
    std::size_t output_tokens = 4;
    std::size_t token_dim = 8;

    std::size_t output_dim() const { return output_tokens * token_dim; }
    std::size_t layer_count() const { return num_residual_blocks + 3; }
    LayerPartition default_partition() const;
    void validate() const;
};

/// Activations recorded by forward() for the matching backward(). Carries a
/// fingerprint of the parameters it was computed with; backward refuses a
/// cache from different parameters.
struct ForwardCache {
    std::vector<Tensor> inputs;    // activation entering each layer
    std::vector<Tensor> preacts;   // x W^T + b per layer (empty for Linear)
    std::uint64_t params_digest = 0;
    std::size_t batch = 0;
};

/// Smooth gelu approximation used everywhere an activation is needed:
///   act(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
double smooth_act(double x);
double smooth_act_grad(double x);

/// Fresh parameters for the config: weights gaussian scaled by 1/sqrt(fan_in),
/// biases zero. Layer list: fc_in (d->h), res1..resR (h->h residual),
/// fc_hidden (h->h with activation), fc_out (h->tokens*c).
ParamSet init(const NetworkConfig& config, Rng& rng);

std::uint64_t params_digest(const ParamSet& params);

/// Deterministic forward pass over the layer stack; batch is [B x d].
std::pair<Tensor, ForwardCache> forward(const ParamSet& params, const Tensor& batch);

/// Exact gradients of <grad_out, pred> w.r.t. every parameter tensor.
/// Returned ParamSet mirrors the input layer-by-layer (same names/kinds,
/// gradient values in weight/bias).
ParamSet backward(const ParamSet& params, const ForwardCache& cache, const Tensor& grad_out);

void validate_partition(const ParamSet& params, const LayerPartition& partition);

/// Live references to the requested tier's layers, in order.
std::vector<Layer*> slice_view(ParamSet& params, const LayerPartition& partition, Tier tier);
std::vector<const Layer*> slice_view(const ParamSet& params, const LayerPartition& partition, Tier tier);

/// [begin, end) layer index range of a tier.
std::pair<std::size_t, std::size_t> tier_range(const LayerPartition& partition, Tier tier);

/// Layer names and tensor shapes must match over [begin, end); offset maps
/// indices of `a` onto `b` (b_index = a_index - offset), so a shared-tier-only
/// ParamSet can be compared against a full one. Throws dim_error naming the
/// first offending layer.
void check_shape_compatible(const ParamSet& a, const ParamSet& b, std::size_t begin, std::size_t end,
                            std::size_t offset);

/// Kind implied by a canonical layer name ("fc_in", "res3", "fc_hidden",
/// "fc_out"), with an optional "img/" or "txt/" prefix. Unknown names load
/// as plain Linear.
LayerKind infer_kind(const std::string& name);

}  // namespace brainfed
