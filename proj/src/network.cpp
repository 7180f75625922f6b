#include "brainfed/network.hpp"

#include <cmath>
#include <cstring>

namespace brainfed {

namespace {

constexpr double kActC0 = 0.79788456080286535588;  // sqrt(2/pi)
constexpr double kActC1 = 0.044715;

// y = x W^T + b for x [B x in], W [out x in].
Tensor linear_forward(const Tensor& x, const Layer& layer) {
    Tensor y = matmul(x, transpose(layer.weight));
    const std::size_t b = y.rows(), n = y.cols();
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < n; ++j) y.data[i * n + j] += layer.bias.data[j];
    return y;
}

Tensor apply_act(const Tensor& z) {
    Tensor out = z;
    for (double& v : out.data) v = smooth_act(v);
    return out;
}

// Column sums with ascending row order.
Tensor column_sums(const Tensor& g) {
    const std::size_t b = g.rows(), n = g.cols();
    Tensor out = Tensor::zeros({n});
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[j] += g.data[i * n + j];
    return out;
}

}  // namespace

double smooth_act(double x) {
    const double u = kActC0 * (x + kActC1 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double smooth_act_grad(double x) {
    const double u = kActC0 * (x + kActC1 * x * x * x);
    const double t = std::tanh(u);
    const double du = kActC0 * (1.0 + 3.0 * kActC1 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

bool ParamSet::operator==(const ParamSet& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Layer& a = layers[i];
        const Layer& b = other.layers[i];
        if (a.name != b.name || a.kind != b.kind || !(a.weight == b.weight) || !(a.bias == b.bias))
            return false;
    }
    return subject_dim_tag == other.subject_dim_tag;
}

LayerPartition::LayerPartition(std::size_t f_end, std::size_t i_end, std::size_t tot)
    : foundational_end(f_end), intermediate_end(i_end), total(tot) {
    if (!(0 < f_end && f_end <= i_end && i_end < tot)) {
        throw contract_error("partition: need 0 < foundational_end <= intermediate_end < total, got (" +
                             std::to_string(f_end) + ", " + std::to_string(i_end) + ", " +
                             std::to_string(tot) + ")");
    }
}

void NetworkConfig::validate() const {
    if (input_dim == 0 || hidden_dim == 0 || num_residual_blocks == 0 || output_tokens == 0 ||
        token_dim == 0) {
        throw contract_error("network config: all dimensions must be positive");
    }
}

LayerPartition NetworkConfig::default_partition() const {
    return LayerPartition(1, 1 + num_residual_blocks, layer_count());
}

ParamSet init(const NetworkConfig& config, Rng& rng) {
    config.validate();
    ParamSet params;
    params.subject_dim_tag = static_cast<int>(config.input_dim);
    params.layers.reserve(config.layer_count());

    auto make_layer = [&rng](std::string name, LayerKind kind, std::size_t out, std::size_t in) {
        Layer layer;
        layer.name = std::move(name);
        layer.kind = kind;
        layer.weight = gaussian(rng, {out, in});
        const double s = 1.0 / std::sqrt(static_cast<double>(in));
        for (double& v : layer.weight.data) v *= s;
        layer.bias = Tensor::zeros({out});
        return layer;
    };

    params.layers.push_back(make_layer("fc_in", LayerKind::Linear, config.hidden_dim, config.input_dim));
    for (std::size_t r = 0; r < config.num_residual_blocks; ++r) {
        params.layers.push_back(make_layer("res" + std::to_string(r + 1), LayerKind::Residual,
                                           config.hidden_dim, config.hidden_dim));
    }
    params.layers.push_back(
        make_layer("fc_hidden", LayerKind::ActLinear, config.hidden_dim, config.hidden_dim));
    params.layers.push_back(
        make_layer("fc_out", LayerKind::Linear, config.output_dim(), config.hidden_dim));
    return params;
}

std::uint64_t params_digest(const ParamSet& params) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, std::size_t len) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    };
    for (const Layer& layer : params.layers) {
        mix(layer.name.data(), layer.name.size());
        const auto kind = static_cast<std::uint8_t>(layer.kind);
        mix(&kind, 1);
        mix(layer.weight.data.data(), layer.weight.data.size() * sizeof(double));
        mix(layer.bias.data.data(), layer.bias.data.size() * sizeof(double));
    }
    return h;
}

std::pair<Tensor, ForwardCache> forward(const ParamSet& params, const Tensor& batch) {
    if (batch.rank() != 2) throw dim_error("forward: batch must be rank 2, got " + shape_str(batch));
    if (params.layers.empty()) throw contract_error("forward: empty parameter set");
    if (batch.cols() != params.layers.front().weight.cols()) {
        throw dim_error("forward: batch width " + std::to_string(batch.cols()) +
                        " does not match input dimension " +
                        std::to_string(params.layers.front().weight.cols()));
    }

    ForwardCache cache;
    cache.params_digest = params_digest(params);
    cache.batch = batch.rows();
    cache.inputs.reserve(params.size());
    cache.preacts.reserve(params.size());

    Tensor act = batch;
    for (const Layer& layer : params.layers) {
        cache.inputs.push_back(act);
        Tensor z = linear_forward(act, layer);
        switch (layer.kind) {
            case LayerKind::Linear:
                cache.preacts.emplace_back();
                act = std::move(z);
                break;
            case LayerKind::Residual: {
                cache.preacts.push_back(z);
                Tensor h = apply_act(z);
                act = add(cache.inputs.back(), h);
                break;
            }
            case LayerKind::ActLinear:
                cache.preacts.push_back(z);
                act = apply_act(z);
                break;
        }
    }
    return {std::move(act), std::move(cache)};
}

ParamSet backward(const ParamSet& params, const ForwardCache& cache, const Tensor& grad_out) {
    if (cache.inputs.size() != params.size() || cache.params_digest != params_digest(params)) {
        throw contract_error("backward: cache does not match these parameters");
    }
    if (grad_out.rank() != 2 || grad_out.rows() != cache.batch ||
        grad_out.cols() != params.layers.back().weight.rows()) {
        throw dim_error("backward: grad_out shape " + shape_str(grad_out) + " does not match output");
    }

    ParamSet grads;
    grads.subject_dim_tag = params.subject_dim_tag;
    grads.layers.resize(params.size());

    Tensor g = grad_out;  // dL/d(activation out of layer l)
    for (std::size_t idx = params.size(); idx-- > 0;) {
        const Layer& layer = params.layers[idx];
        const Tensor& x = cache.inputs[idx];
        Layer& grad_layer = grads.layers[idx];
        grad_layer.name = layer.name;
        grad_layer.kind = layer.kind;

        Tensor gz;  // dL/d(x W^T + b)
        switch (layer.kind) {
            case LayerKind::Linear:
                gz = g;
                break;
            case LayerKind::Residual:
            case LayerKind::ActLinear: {
                const Tensor& z = cache.preacts[idx];
                gz = g;
                for (std::size_t i = 0; i < gz.data.size(); ++i)
                    gz.data[i] *= smooth_act_grad(z.data[i]);
                break;
            }
        }

        grad_layer.weight = matmul(transpose(gz), x);
        grad_layer.bias = column_sums(gz);

        Tensor gx = matmul(gz, layer.weight);
        if (layer.kind == LayerKind::Residual) gx = add(gx, g);
        g = std::move(gx);
    }
    return grads;
}

void validate_partition(const ParamSet& params, const LayerPartition& partition) {
    if (partition.total != params.size()) {
        throw contract_error("partition: total " + std::to_string(partition.total) +
                             " does not match layer count " + std::to_string(params.size()));
    }
    if (!(0 < partition.foundational_end && partition.foundational_end <= partition.intermediate_end &&
          partition.intermediate_end < partition.total)) {
        throw contract_error("partition: invalid boundaries");
    }
}

std::pair<std::size_t, std::size_t> tier_range(const LayerPartition& partition, Tier tier) {
    switch (tier) {
        case Tier::Foundational: return {0, partition.foundational_end};
        case Tier::Intermediate: return {partition.foundational_end, partition.intermediate_end};
        case Tier::Advanced: return {partition.intermediate_end, partition.total};
    }
    throw contract_error("tier: out of range");
}

std::vector<Layer*> slice_view(ParamSet& params, const LayerPartition& partition, Tier tier) {
    validate_partition(params, partition);
    auto [begin, end] = tier_range(partition, tier);
    std::vector<Layer*> view;
    view.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) view.push_back(&params.layers[i]);
    return view;
}

std::vector<const Layer*> slice_view(const ParamSet& params, const LayerPartition& partition, Tier tier) {
    validate_partition(params, partition);
    auto [begin, end] = tier_range(partition, tier);
    std::vector<const Layer*> view;
    view.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) view.push_back(&params.layers[i]);
    return view;
}

void check_shape_compatible(const ParamSet& a, const ParamSet& b, std::size_t begin, std::size_t end,
                            std::size_t offset) {
    for (std::size_t i = begin; i < end; ++i) {
        if (i >= a.size() || i - offset >= b.size()) {
            throw dim_error("shape compatibility: layer index " + std::to_string(i) +
                            " out of range");
        }
        const Layer& la = a.layers[i];
        const Layer& lb = b.layers[i - offset];
        if (la.name != lb.name || !la.weight.same_shape(lb.weight) || !la.bias.same_shape(lb.bias)) {
            throw dim_error("shape compatibility: layer '" + la.name + "' (index " + std::to_string(i) +
                            ") does not match '" + lb.name + "'");
        }
    }
}

LayerKind infer_kind(const std::string& name) {
    std::string base = name;
    const auto slash = base.rfind('/');
    if (slash != std::string::npos) base = base.substr(slash + 1);
    if (base.rfind("res", 0) == 0) return LayerKind::Residual;
    if (base == "fc_hidden") return LayerKind::ActLinear;
    return LayerKind::Linear;
}

}  // namespace brainfed
