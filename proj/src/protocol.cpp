#include "brainfed/protocol.hpp"

#include <algorithm>
#include <filesystem>
#include <thread>

#include "brainfed/checkpoint.hpp"

namespace brainfed {

namespace {

ParamSet zeros_like(const ParamSet& params) {
    ParamSet out = params;
    for (Layer& layer : out.layers) {
        std::fill(layer.weight.data.begin(), layer.weight.data.end(), 0.0);
        std::fill(layer.bias.data.begin(), layer.bias.data.end(), 0.0);
    }
    return out;
}

/// Layers [foundational_end, total) as a standalone ParamSet.
ParamSet shared_slice(const ParamSet& params, const LayerPartition& partition) {
    validate_partition(params, partition);
    ParamSet out;
    out.layers.assign(params.layers.begin() + static_cast<std::ptrdiff_t>(partition.foundational_end),
                      params.layers.end());
    return out;
}

void sgd_step(ParamSet& params, ParamSet& momentum, const ParamSet& grads, double lr, double mu) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        Layer& p = params.layers[i];
        Layer& v = momentum.layers[i];
        const Layer& g = grads.layers[i];
        for (std::size_t j = 0; j < p.weight.data.size(); ++j) {
            v.weight.data[j] = mu * v.weight.data[j] + g.weight.data[j];
            p.weight.data[j] -= lr * v.weight.data[j];
        }
        for (std::size_t j = 0; j < p.bias.data.size(); ++j) {
            v.bias.data[j] = mu * v.bias.data[j] + g.bias.data[j];
            p.bias.data[j] -= lr * v.bias.data[j];
        }
    }
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
    const std::size_t cols = x.cols();
    Tensor out = Tensor::zeros({rows.size(), cols});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(rows[i] * cols), cols,
                    out.data.begin() + static_cast<std::ptrdiff_t>(i * cols));
    }
    return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    bool shuffle, Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    if (shuffle) {
        for (std::size_t i = n; i-- > 1;) {
            const std::size_t j = rng.next_u64() % (i + 1);
            std::swap(order[i], order[j]);
        }
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

const SubjectData& subject_for(const Corpus& corpus, std::uint16_t subject_id) {
    for (const SubjectData& s : corpus.subjects) {
        if (s.subject_id == subject_id) return s;
    }
    throw contract_error("protocol: no dataset for subject " + std::to_string(subject_id));
}

// Synchronization + one local-training pass for a single modality lane.
// Returns the mean train loss over the epoch's minibatches.
double train_lane(ModelState& lane, const ParamSet& global_shared, const Tensor& x,
                  const Tensor& targets, const std::vector<std::vector<std::size_t>>& batches,
                  const LayerPartition& partition, const TrainConfig& cfg) {
    // Step 1+2: adapt the fusion weights against the broadcast global, then
    // synchronize the tiers according to the mode.
    if (cfg.sync_mode == SyncMode::Full || cfg.sync_mode == SyncMode::RetainDfl) {
        std::vector<Batch> dfl_batches;
        const std::size_t steps = std::min<std::size_t>(std::max<std::size_t>(cfg.dfl_steps, 1), batches.size());
        for (std::size_t b = 0; b < steps; ++b) {
            dfl_batches.push_back({gather_rows(x, batches[b]), gather_rows(targets, batches[b])});
        }
        lane.fusion_w = train_weights(lane.params, global_shared, partition, lane.fusion_w,
                                      dfl_batches, cfg.loss_cfg, steps);
    }
    switch (cfg.sync_mode) {
        case SyncMode::None:
            break;
        case SyncMode::RetainCopy: {
            FusionWeights zero_w = FusionWeights::ones_for(lane.params, partition);
            for (auto& entry : zero_w.entries) {
                std::fill(entry.weight_w.data.begin(), entry.weight_w.data.end(), 0.0);
                std::fill(entry.bias_w.data.begin(), entry.bias_w.data.end(), 0.0);
            }
            lane.params = fuse(lane.params, global_shared, partition, zero_w);
            break;
        }
        case SyncMode::RetainDfl: {
            ParamSet fused = fuse(lane.params, global_shared, partition, lane.fusion_w);
            // Intermediate tier is NOT aligned in this mode; restore it.
            for (std::size_t i = partition.foundational_end; i < partition.intermediate_end; ++i) {
                fused.layers[i] = lane.params.layers[i];
            }
            lane.params = std::move(fused);
            break;
        }
        case SyncMode::Full:
            lane.params = fuse(lane.params, global_shared, partition, lane.fusion_w);
            break;
    }

    // Step 3: minibatch SGD with momentum plus EMA shadowing.
    double loss_sum = 0.0;
    for (const auto& rows : batches) {
        const Tensor bx = gather_rows(x, rows);
        const Tensor by = gather_rows(targets, rows);
        auto [pred, cache] = forward(lane.params, bx);
        const LossValue loss = modality_loss(pred, by, cfg.loss_cfg);
        const ParamSet grads = backward(lane.params, cache, loss.grad_pred);
        sgd_step(lane.params, lane.momentum, grads, cfg.learning_rate, cfg.momentum);
        if (!cfg.ema_per_epoch) {
            lane.ema_shadow = ema_update(lane.ema_shadow, lane.params, cfg.ema_alpha);
        }
        loss_sum += loss.loss;
    }
    if (cfg.ema_per_epoch) {
        lane.ema_shadow = ema_update(lane.ema_shadow, lane.params, cfg.ema_alpha);
    }
    return loss_sum / static_cast<double>(batches.size());
}

struct ClientStepOutput {
    ClientState state;
    ClientEpochMetrics metrics;
    std::vector<ProtocolMessage> uploads;
};

ClientStepOutput client_step(const ClientState& before, const std::vector<std::uint8_t>& img_bytes,
                             const std::vector<std::uint8_t>& txt_bytes, const Corpus& corpus,
                             const TrainConfig& cfg, std::uint32_t epoch) {
    ClientStepOutput out;
    out.state = before;
    out.metrics.subject_id = before.subject_id;

    const SubjectData& data = subject_for(corpus, before.subject_id);
    const LayerPartition partition = cfg.partition();

    // Everything from the coordinator arrives as serialized frames.
    const ParamSet global_img = decode_paramset(img_bytes);
    const ParamSet global_txt = decode_paramset(txt_bytes);

    const auto batches =
        epoch_batches(data.x_train.rows(), cfg.batch_size, cfg.shuffle_batches, out.state.rng);

    out.metrics.train_loss_image = train_lane(out.state.image, global_img, data.x_train,
                                              data.img_train, batches, partition, cfg);
    out.metrics.train_loss_text = train_lane(out.state.text, global_txt, data.x_train,
                                             data.txt_train, batches, partition, cfg);

    for (Modality m : {Modality::Image, Modality::Text}) {
        ProtocolMessage msg;
        msg.kind = MessageKind::UploadShadow;
        msg.sender = before.subject_id;
        msg.epoch = epoch;
        msg.sample_count = static_cast<std::uint32_t>(before.sample_count);
        msg.payload = encode_paramset(shared_slice(out.state.lane(m).ema_shadow, partition));
        out.uploads.push_back(std::move(msg));
    }
    return out;
}

}  // namespace

std::string sync_mode_name(SyncMode mode) {
    switch (mode) {
        case SyncMode::None: return "none";
        case SyncMode::RetainCopy: return "retain_copy";
        case SyncMode::RetainDfl: return "retain_dfl";
        case SyncMode::Full: return "full";
    }
    return "unknown";
}

SyncMode sync_mode_from_name(const std::string& name) {
    if (name == "none") return SyncMode::None;
    if (name == "retain_copy") return SyncMode::RetainCopy;
    if (name == "retain_dfl") return SyncMode::RetainDfl;
    if (name == "full") return SyncMode::Full;
    throw contract_error("unknown sync mode '" + name + "'");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw contract_error("train config: epochs must be >= 1");
    if (batch_size < 1) throw contract_error("train config: batch size must be >= 1");
    // alpha == 1 is admitted as the degenerate frozen-shadow case.
    if (!(ema_alpha >= 0.0 && ema_alpha <= 1.0)) {
        throw contract_error("train config: ema alpha must lie in [0, 1]");
    }
    if (hidden_dim < 1 || num_residual_blocks < 1) {
        throw contract_error("train config: hidden dim and residual blocks must be >= 1");
    }
    loss_cfg.validate();
    partition();  // throws on a bad advanced-count override
}

LayerPartition TrainConfig::partition() const {
    const std::size_t total = layer_count();
    std::size_t advanced = advanced_count_override == 0 ? 2 : advanced_count_override;
    if (advanced >= total) {
        throw contract_error("train config: advanced tier of " + std::to_string(advanced) +
                             " layers does not fit a stack of " + std::to_string(total));
    }
    return LayerPartition(1, total - advanced, total);
}

ParamSet ema_update(const ParamSet& shadow, const ParamSet& live, double alpha) {
    check_shape_compatible(shadow, live, 0, shadow.size(), 0);
    ParamSet out = shadow;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Layer& l = live.layers[i];
        Layer& o = out.layers[i];
        for (std::size_t j = 0; j < o.weight.data.size(); ++j) {
            o.weight.data[j] = alpha * o.weight.data[j] + (1.0 - alpha) * l.weight.data[j];
        }
        for (std::size_t j = 0; j < o.bias.data.size(); ++j) {
            o.bias.data[j] = alpha * o.bias.data[j] + (1.0 - alpha) * l.bias.data[j];
        }
    }
    return out;
}

ParamSet aggregate(const std::vector<std::pair<ParamSet, std::size_t>>& uploads) {
    if (uploads.empty()) throw contract_error("aggregate: no uploads");
    std::size_t total = 0;
    for (const auto& [params, count] : uploads) {
        if (count == 0) throw contract_error("aggregate: non-positive sample count");
        total += count;
        check_shape_compatible(uploads.front().first, params, 0, uploads.front().first.size(), 0);
    }

    // Anchored form of sum_s k_s v_s: first upload plus the k-weighted
    // deltas, accumulated in ascending order. Identical uploads (and the
    // single-upload case) therefore reproduce the upload bit-for-bit.
    ParamSet out = uploads.front().first;
    std::vector<double> weights;
    for (const auto& [params, count] : uploads) {
        weights.push_back(static_cast<double>(count) / static_cast<double>(total));
    }
    auto blend = [&uploads, &weights](Tensor Layer::* field, std::size_t layer, std::size_t j) {
        const double anchor = (uploads.front().first.layers[layer].*field).data[j];
        long double acc = 0.0L;
        for (std::size_t s = 1; s < uploads.size(); ++s) {
            const double v = (uploads[s].first.layers[layer].*field).data[j];
            acc += static_cast<long double>(weights[s]) * (v - anchor);
        }
        return anchor + static_cast<double>(acc);
    };
    for (std::size_t i = 0; i < out.size(); ++i) {
        for (std::size_t j = 0; j < out.layers[i].weight.data.size(); ++j) {
            out.layers[i].weight.data[j] = blend(&Layer::weight, i, j);
        }
        for (std::size_t j = 0; j < out.layers[i].bias.data.size(); ++j) {
            out.layers[i].bias.data[j] = blend(&Layer::bias, i, j);
        }
    }
    return out;
}

EpochResult run_epoch(const std::vector<ClientState>& clients, const GlobalState& global,
                      const Corpus& corpus, const TrainConfig& cfg) {
    cfg.validate();
    if (clients.empty()) throw contract_error("run_epoch: no clients");
    const std::uint32_t epoch = global.epoch + 1;

    EpochResult result;
    result.global = global;

    // Coordinator broadcast; every client consumes these exact bytes.
    ProtocolMessage bc_img{MessageKind::BroadcastGlobal, kCoordinatorId, epoch, 0,
                           encode_paramset(global.image_shared)};
    ProtocolMessage bc_txt{MessageKind::BroadcastGlobal, kCoordinatorId, epoch, 0,
                           encode_paramset(global.text_shared)};
    result.log.append(bc_img);
    result.log.append(bc_txt);

    std::vector<ClientStepOutput> outputs(clients.size());
    std::vector<std::exception_ptr> errors(clients.size());

    const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.workers, clients.size()));
    auto work = [&](std::size_t tid) {
        for (std::size_t i = tid; i < clients.size(); i += workers) {
            try {
                outputs[i] = client_step(clients[i], bc_img.payload, bc_txt.payload, corpus, cfg, epoch);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work, t);
        for (std::thread& th : pool) th.join();
    }
    for (const auto& err : errors) {
        if (err) std::rethrow_exception(err);
    }

    // Barrier passed: log uploads and aggregate in ascending client order.
    std::vector<std::pair<ParamSet, std::size_t>> uploads_img, uploads_txt;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        result.clients.push_back(std::move(outputs[i].state));
        result.metrics.push_back(outputs[i].metrics);
        for (const ProtocolMessage& msg : outputs[i].uploads) result.log.append(msg);
        uploads_img.emplace_back(decode_paramset(outputs[i].uploads[0].payload),
                                 outputs[i].uploads[0].sample_count);
        uploads_txt.emplace_back(decode_paramset(outputs[i].uploads[1].payload),
                                 outputs[i].uploads[1].sample_count);
    }
    result.global.image_shared = aggregate(uploads_img);
    result.global.text_shared = aggregate(uploads_txt);
    result.global.epoch = epoch;
    return result;
}

TrainingReport run_training(const Corpus& corpus, const TrainConfig& cfg,
                            const EpochObserver& observer) {
    cfg.validate();
    if (corpus.subjects.empty()) throw contract_error("run_training: dataset has no subjects");
    const std::size_t subject_count = cfg.num_subjects == 0
                                          ? corpus.subjects.size()
                                          : std::min(cfg.num_subjects, corpus.subjects.size());

    const LayerPartition partition = cfg.partition();
    const Rng root(cfg.seed);

    // Shared tiers come from one common stream so epoch-1 aggregation starts
    // from identical parameters on every client; the input width of the
    // template does not matter because its foundational layer is discarded.
    auto shared_template = [&](Modality m, std::size_t output_dim) {
        NetworkConfig tmpl;
        tmpl.input_dim = 1;
        tmpl.hidden_dim = cfg.hidden_dim;
        tmpl.num_residual_blocks = cfg.num_residual_blocks;
        tmpl.output_tokens = output_dim;
        tmpl.token_dim = 1;
        Rng rng = root.fork("shared_init").fork(static_cast<std::uint64_t>(m));
        return shared_slice(init(tmpl, rng), partition);
    };
    const ParamSet shared_img = shared_template(Modality::Image, corpus.img_test.cols());
    const ParamSet shared_txt = shared_template(Modality::Text, corpus.txt_test.cols());

    TrainingReport report;
    report.global.image_shared = shared_img;
    report.global.text_shared = shared_txt;
    report.global.epoch = 0;

    for (std::size_t s = 0; s < subject_count; ++s) {
        const SubjectData& data = corpus.subjects[s];
        ClientState client;
        client.subject_id = data.subject_id;
        client.sample_count = data.x_train.rows();
        client.rng = root.fork("client").fork(s);

        auto build_lane = [&](Modality m, std::size_t output_dim, const ParamSet& shared) {
            NetworkConfig net_cfg;
            net_cfg.input_dim = data.x_train.cols();
            net_cfg.hidden_dim = cfg.hidden_dim;
            net_cfg.num_residual_blocks = cfg.num_residual_blocks;
            net_cfg.output_tokens = output_dim;
            net_cfg.token_dim = 1;
            Rng rng = root.fork("foundational_init").fork(static_cast<std::uint64_t>(m)).fork(s);
            ParamSet params = init(net_cfg, rng);
            for (std::size_t i = partition.foundational_end; i < partition.total; ++i) {
                params.layers[i] = shared.layers[i - partition.foundational_end];
            }
            ModelState lane;
            lane.ema_shadow = params;
            lane.momentum = zeros_like(params);
            lane.fusion_w = FusionWeights::ones_for(params, partition, cfg.dfl_learning_rate);
            lane.params = std::move(params);
            return lane;
        };
        client.image = build_lane(Modality::Image, corpus.img_test.cols(), shared_img);
        client.text = build_lane(Modality::Text, corpus.txt_test.cols(), shared_txt);

        ProtocolMessage reg{MessageKind::Register, client.subject_id, 0,
                            static_cast<std::uint32_t>(client.sample_count), {}};
        report.log.append(reg);
        report.clients.push_back(std::move(client));
    }

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochResult result = run_epoch(report.clients, report.global, corpus, cfg);
        report.clients = std::move(result.clients);
        report.global = std::move(result.global);
        report.epoch_metrics.push_back(std::move(result.metrics));
        report.log.append_log(result.log);
        if (observer) observer(epoch, report.clients, report.global);
    }
    return report;
}

ParamSet compose_global(const std::vector<const Layer*>& subject_foundational,
                        const ParamSet& global_shared) {
    if (subject_foundational.empty()) throw contract_error("compose_global: no foundational layers");
    ParamSet out;
    for (const Layer* layer : subject_foundational) out.layers.push_back(*layer);
    const std::size_t trunk_in = out.layers.back().weight.rows();
    if (!global_shared.layers.empty() && global_shared.layers.front().weight.cols() != trunk_in) {
        throw dim_error("compose_global: foundational output width " + std::to_string(trunk_in) +
                        " does not match global input width " +
                        std::to_string(global_shared.layers.front().weight.cols()));
    }
    for (const Layer& layer : global_shared.layers) out.layers.push_back(layer);
    out.subject_dim_tag = static_cast<int>(out.layers.front().weight.cols());
    return out;
}

ParamSet compose_global(const ClientState& client, const GlobalState& global, Modality modality,
                        const LayerPartition& partition) {
    const auto foundational = slice_view(client.lane(modality).params, partition, Tier::Foundational);
    return compose_global(foundational, global.lane(modality));
}

ParamSet merge_prefixed(const ParamSet& img, const ParamSet& txt) {
    ParamSet out;
    for (const Layer& layer : img.layers) {
        Layer copy = layer;
        copy.name = "img/" + copy.name;
        out.layers.push_back(std::move(copy));
    }
    for (const Layer& layer : txt.layers) {
        Layer copy = layer;
        copy.name = "txt/" + copy.name;
        out.layers.push_back(std::move(copy));
    }
    return out;
}

std::pair<ParamSet, ParamSet> split_prefixed(const ParamSet& merged) {
    ParamSet img, txt;
    for (const Layer& layer : merged.layers) {
        Layer copy = layer;
        if (layer.name.rfind("img/", 0) == 0) {
            copy.name = layer.name.substr(4);
            img.layers.push_back(std::move(copy));
        } else if (layer.name.rfind("txt/", 0) == 0) {
            copy.name = layer.name.substr(4);
            txt.layers.push_back(std::move(copy));
        } else {
            throw format_error("checkpoint: layer '" + layer.name + "' has no modality prefix");
        }
    }
    if (!img.layers.empty()) img.subject_dim_tag = static_cast<int>(img.layers.front().weight.cols());
    if (!txt.layers.empty()) txt.subject_dim_tag = static_cast<int>(txt.layers.front().weight.cols());
    return {std::move(img), std::move(txt)};
}

ParamSet fusion_weights_as_paramset(const FusionWeights& w) {
    ParamSet out;
    for (const FusionWeights::Entry& entry : w.entries) {
        Layer layer;
        layer.name = entry.layer_name;
        layer.kind = infer_kind(entry.layer_name);
        layer.weight = entry.weight_w;
        layer.bias = entry.bias_w;
        out.layers.push_back(std::move(layer));
    }
    return out;
}

FusionWeights fusion_weights_from_paramset(const ParamSet& ps, double learning_rate) {
    FusionWeights w;
    w.learning_rate = learning_rate;
    w.span = ps.size();
    for (const Layer& layer : ps.layers) {
        w.entries.push_back({layer.name, layer.weight, layer.bias});
    }
    return w;
}

void save_run_checkpoints(const std::string& dir, const std::vector<ClientState>& clients,
                          const GlobalState& global, std::size_t epoch) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::string suffix = "_ep" + std::to_string(epoch) + ".bgck";
    save_paramset(dir + "/global" + suffix, merge_prefixed(global.image_shared, global.text_shared));
    for (const ClientState& client : clients) {
        const std::string id = std::to_string(client.subject_id);
        save_paramset(dir + "/client" + id + suffix,
                      merge_prefixed(client.image.params, client.text.params));
        save_paramset(dir + "/fusion" + id + suffix,
                      merge_prefixed(fusion_weights_as_paramset(client.image.fusion_w),
                                     fusion_weights_as_paramset(client.text.fusion_w)));
    }
}

}  // namespace brainfed
