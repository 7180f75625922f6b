// Experiment runner: dataset generation, collaborative training, ablation
// sweeps, privacy audits, and checkpoint evaluation.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "brainfed/checkpoint.hpp"
#include "brainfed/eval.hpp"

namespace fs = std::filesystem;
using namespace brainfed;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitAuditFailure = 3;

std::vector<std::size_t> parse_size_list(const std::string& csv) {
    std::vector<std::size_t> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stoul(item));
    }
    return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stoull(item));
    }
    return out;
}

std::optional<std::uint64_t> env_seed() {
    const char* v = std::getenv("BRAINFED_SEED");
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::stoull(v);
}

// Flat key=value config file; '#' starts a comment. Unknown keys and
// malformed lines are reported with their line number.
void apply_config_file(const std::string& path, TrainConfig& cfg, std::size_t& eval_every) {
    std::ifstream in(path);
    if (!in) throw format_error("config: cannot open '" + path + "'");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);

        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw format_error("config: line " + std::to_string(line_no) + ": expected key=value");
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "epochs") cfg.epochs = std::stoul(value);
            else if (key == "batch_size") cfg.batch_size = std::stoul(value);
            else if (key == "learning_rate") cfg.learning_rate = std::stod(value);
            else if (key == "momentum") cfg.momentum = std::stod(value);
            else if (key == "ema_alpha") cfg.ema_alpha = std::stod(value);
            else if (key == "ema_per_epoch") cfg.ema_per_epoch = (value == "true" || value == "1");
            else if (key == "dfl_steps") cfg.dfl_steps = std::stoul(value);
            else if (key == "dfl_learning_rate") cfg.dfl_learning_rate = std::stod(value);
            else if (key == "temperature") cfg.loss_cfg.temperature = std::stod(value);
            else if (key == "batch_mean_softclip") cfg.loss_cfg.batch_mean_softclip = (value == "true" || value == "1");
            else if (key == "hidden_dim") cfg.hidden_dim = std::stoul(value);
            else if (key == "num_residual_blocks") cfg.num_residual_blocks = std::stoul(value);
            else if (key == "advanced_layers") cfg.advanced_count_override = std::stoul(value);
            else if (key == "sync_mode") cfg.sync_mode = sync_mode_from_name(value);
            else if (key == "workers") cfg.workers = std::stoul(value);
            else if (key == "num_subjects") cfg.num_subjects = std::stoul(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "shuffle_batches") cfg.shuffle_batches = (value == "true" || value == "1");
            else if (key == "eval_every") eval_every = std::stoul(value);
            else throw format_error("unknown key '" + key + "'");
        } catch (const format_error&) {
            throw format_error("config: line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        } catch (const std::exception&) {
            throw format_error("config: line " + std::to_string(line_no) + ": bad value for '" + key +
                               "'");
        }
    }
}

// Train-config flags shared by train/ablate; only flags the user passed
// override the config file.
struct TrainFlags {
    void attach(CLI::App* app) {
        app->add_option("--epochs", epochs);
        app->add_option("--batch-size", batch_size);
        app->add_option("--learning-rate", learning_rate);
        app->add_option("--momentum", momentum);
        app->add_option("--ema-alpha", ema_alpha);
        app->add_flag("--ema-per-epoch", ema_per_epoch,
                      "Update the EMA shadow once per epoch instead of per batch");
        app->add_option("--dfl-steps", dfl_steps);
        app->add_option("--dfl-learning-rate", dfl_learning_rate);
        app->add_option("--temperature", temperature);
        app->add_option("--hidden-dim", hidden_dim);
        app->add_option("--residual-blocks", residual_blocks);
        app->add_option("--advanced-layers", advanced_layers,
                        "Advanced-tier depth m (0 = default last-two-layers split)");
        app->add_option("--sync-mode", sync_mode)
            ->check(CLI::IsMember({"none", "retain_copy", "retain_dfl", "full"}));
        app->add_option("--workers", workers);
        app->add_option("--subjects", subjects, "Limit training to the first N subjects");
        app->add_option("--seed", seed);
        app->add_option("--eval-every", eval_every, "Metrics cadence in epochs (0 = final only)");
    }

    void apply(TrainConfig& cfg, std::size_t& eval_every_out) const {
        if (epochs) cfg.epochs = *epochs;
        if (batch_size) cfg.batch_size = *batch_size;
        if (learning_rate) cfg.learning_rate = *learning_rate;
        if (momentum) cfg.momentum = *momentum;
        if (ema_alpha) cfg.ema_alpha = *ema_alpha;
        if (ema_per_epoch) cfg.ema_per_epoch = true;
        if (dfl_steps) cfg.dfl_steps = *dfl_steps;
        if (dfl_learning_rate) cfg.dfl_learning_rate = *dfl_learning_rate;
        if (temperature) cfg.loss_cfg.temperature = *temperature;
        if (hidden_dim) cfg.hidden_dim = *hidden_dim;
        if (residual_blocks) cfg.num_residual_blocks = *residual_blocks;
        if (advanced_layers) cfg.advanced_count_override = *advanced_layers;
        if (sync_mode) cfg.sync_mode = sync_mode_from_name(*sync_mode);
        if (workers) cfg.workers = *workers;
        if (subjects) cfg.num_subjects = *subjects;
        if (seed) cfg.seed = *seed;
        if (eval_every) eval_every_out = *eval_every;
    }

    std::optional<std::size_t> epochs, batch_size, dfl_steps, hidden_dim, residual_blocks,
        advanced_layers, workers, subjects, eval_every;
    std::optional<double> learning_rate, momentum, ema_alpha, dfl_learning_rate, temperature;
    std::optional<std::string> sync_mode;
    std::optional<std::uint64_t> seed;
    bool ema_per_epoch = false;
};

double median(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

struct RunSummary {
    double top1 = 0.0, top5 = 0.0, global_top1 = 0.0, alignment = 0.0;
    double loss_v = 0.0, loss_t = 0.0, top1_s0 = 0.0;
};

RunSummary summarize(const EvalResult& eval) {
    RunSummary s;
    for (const SubjectMetrics& m : eval.subjects) {
        s.top1 += m.top1;
        s.top5 += m.top5;
        s.global_top1 += m.global_top1;
        s.loss_v += m.loss_image;
        s.loss_t += m.loss_text;
    }
    const double n = static_cast<double>(eval.subjects.size());
    s.top1 /= n;
    s.top5 /= n;
    s.global_top1 /= n;
    s.loss_v /= n;
    s.loss_t /= n;
    s.alignment = eval.alignment;
    s.top1_s0 = eval.subjects.front().top1;
    return s;
}

RunSummary median_summary(const std::vector<RunSummary>& runs) {
    auto collect = [&runs](double RunSummary::* field) {
        std::vector<double> v;
        for (const RunSummary& r : runs) v.push_back(r.*field);
        return median(std::move(v));
    };
    RunSummary m;
    m.top1 = collect(&RunSummary::top1);
    m.top5 = collect(&RunSummary::top5);
    m.global_top1 = collect(&RunSummary::global_top1);
    m.alignment = collect(&RunSummary::alignment);
    m.loss_v = collect(&RunSummary::loss_v);
    m.loss_t = collect(&RunSummary::loss_t);
    m.top1_s0 = collect(&RunSummary::top1_s0);
    return m;
}

int cmd_generate(const std::string& out_path, SyntheticSpec spec,
                 const std::optional<std::string>& voxel_csv) {
    if (voxel_csv) {
        spec.voxel_dims = parse_size_list(*voxel_csv);
    } else if (spec.voxel_dims.size() != spec.num_subjects) {
        // Default ladder: 48, 56, 64, ... one step per subject.
        spec.voxel_dims.clear();
        for (std::size_t s = 0; s < spec.num_subjects; ++s) spec.voxel_dims.push_back(48 + 8 * s);
    }
    const Corpus corpus = generate(spec);
    save_corpus(out_path, corpus);
    std::cout << "wrote " << out_path << ": " << corpus.subjects.size() << " subjects, "
              << spec.train_per_subject << " train samples each, " << spec.shared_test_count
              << " shared test samples\n";
    return kExitOk;
}

int cmd_train(const std::string& data_path, const std::string& out_dir,
              const std::optional<std::string>& config_path, const TrainFlags& flags) {
    TrainConfig cfg;
    if (const auto seed = env_seed()) cfg.seed = *seed;
    std::size_t eval_every = 1;
    if (config_path) apply_config_file(*config_path, cfg, eval_every);
    flags.apply(cfg, eval_every);
    cfg.validate();

    const Corpus corpus = load_corpus(data_path);
    const FullReport report = run_training_with_metrics(corpus, cfg, eval_every);

    fs::create_directories(out_dir);
    save_run_checkpoints(out_dir, report.training.clients, report.training.global, cfg.epochs);
    save_log(out_dir + "/audit.bin", report.training.log);
    std::ofstream metrics(out_dir + "/metrics.jsonl", std::ios::trunc);
    if (!metrics) throw format_error("train: cannot write metrics.jsonl in '" + out_dir + "'");
    for (const MetricsRecord& r : report.records) metrics << to_jsonl(r) << "\n";

    const RunSummary s = summarize(report.final_eval);
    std::cout << "trained " << report.training.clients.size() << " subjects for " << cfg.epochs
              << " epochs (sync=" << sync_mode_name(cfg.sync_mode) << ", seed=" << cfg.seed << ")\n"
              << "final shared-test top1=" << s.top1 << " top5=" << s.top5
              << " global_top1=" << s.global_top1 << " alignment=" << s.alignment << "\n"
              << "outputs in " << out_dir << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& data_path, const std::string& run_dir,
             std::optional<std::size_t> epoch_opt, const std::optional<std::string>& out_path) {
    const Corpus corpus = load_corpus(data_path);

    std::size_t epoch = 0;
    if (epoch_opt) {
        epoch = *epoch_opt;
    } else {
        for (const auto& entry : fs::directory_iterator(run_dir)) {
            const std::string name = entry.path().filename().string();
            // global_ep{N}.bgck
            if (name.rfind("global_ep", 0) == 0 && name.size() > 14) {
                epoch = std::max(epoch, static_cast<std::size_t>(
                                            std::stoul(name.substr(9, name.size() - 9 - 5))));
            }
        }
        if (epoch == 0) throw format_error("eval: no global_ep*.bgck checkpoints in '" + run_dir + "'");
    }
    const std::string suffix = "_ep" + std::to_string(epoch) + ".bgck";

    GlobalState global;
    std::tie(global.image_shared, global.text_shared) =
        split_prefixed(load_paramset(run_dir + "/global" + suffix));
    global.epoch = static_cast<std::uint32_t>(epoch);

    std::vector<ClientState> clients;
    for (const SubjectData& subject : corpus.subjects) {
        const std::string path = run_dir + "/client" + std::to_string(subject.subject_id) + suffix;
        if (!fs::exists(path)) continue;
        ClientState client;
        client.subject_id = subject.subject_id;
        client.sample_count = subject.x_train.rows();
        std::tie(client.image.params, client.text.params) = split_prefixed(load_paramset(path));
        client.image.ema_shadow = client.image.params;
        client.text.ema_shadow = client.text.params;
        clients.push_back(std::move(client));
    }
    if (clients.empty()) throw format_error("eval: no client checkpoints in '" + run_dir + "'");

    TrainConfig cfg;
    cfg.num_residual_blocks = clients.front().image.params.size() - 3;
    cfg.hidden_dim = clients.front().image.params.layers.front().weight.rows();

    const EvalResult eval = evaluate_all(corpus, clients, global, cfg);
    std::ostream* out = &std::cout;
    std::ofstream file;
    if (out_path) {
        file.open(*out_path, std::ios::trunc);
        if (!file) throw format_error("eval: cannot write '" + *out_path + "'");
        out = &file;
    }
    for (const MetricsRecord& r : records_for_epoch(epoch, eval)) *out << to_jsonl(r) << "\n";
    return kExitOk;
}

int cmd_ablate(const std::string& data_path, const std::string& mode, const std::string& out_path,
               const std::string& seeds_csv, const std::optional<std::string>& config_path,
               const TrainFlags& flags) {
    TrainConfig base;
    std::size_t eval_every = 0;
    if (const auto seed = env_seed()) base.seed = *seed;
    if (config_path) apply_config_file(*config_path, base, eval_every);
    flags.apply(base, eval_every);
    base.validate();

    const std::vector<std::uint64_t> seeds = parse_seed_list(seeds_csv);
    if (seeds.empty()) throw contract_error("ablate: need at least one seed");
    const Corpus corpus = load_corpus(data_path);

    struct Row {
        std::string label;
        TrainConfig cfg;
    };
    std::vector<Row> rows;
    if (mode == "sync_tiers") {
        for (SyncMode m : {SyncMode::None, SyncMode::RetainCopy, SyncMode::RetainDfl, SyncMode::Full}) {
            Row row{sync_mode_name(m), base};
            row.cfg.sync_mode = m;
            rows.push_back(std::move(row));
        }
    } else if (mode == "subjects") {
        const std::size_t max_s = base.num_subjects == 0
                                      ? corpus.subjects.size()
                                      : std::min(base.num_subjects, corpus.subjects.size());
        for (std::size_t s = 1; s <= max_s; ++s) {
            Row row{"subjects_" + std::to_string(s), base};
            row.cfg.num_subjects = s;
            rows.push_back(std::move(row));
        }
    } else if (mode == "m_layers") {
        const std::size_t total = base.layer_count();
        for (std::size_t m = 1; m < total; ++m) {
            Row row{"m_" + std::to_string(m), base};
            row.cfg.advanced_count_override = m;
            rows.push_back(std::move(row));
        }
    } else {
        throw contract_error("ablate: unknown mode '" + mode + "'");
    }

    std::ofstream csv(out_path, std::ios::trunc);
    if (!csv) throw format_error("ablate: cannot write '" + out_path + "'");
    csv << "config,seeds,top1_median,top5_median,global_top1_median,alignment_median,"
           "loss_v_median,loss_t_median,top1_s0_median\n";
    csv.precision(10);
    for (const Row& row : rows) {
        std::vector<RunSummary> summaries;
        for (std::uint64_t seed : seeds) {
            TrainConfig cfg = row.cfg;
            cfg.seed = seed;
            const FullReport report = run_training_with_metrics(corpus, cfg, 0);
            summaries.push_back(summarize(report.final_eval));
        }
        const RunSummary m = median_summary(summaries);
        csv << row.label << ',' << seeds.size() << ',' << m.top1 << ',' << m.top5 << ','
            << m.global_top1 << ',' << m.alignment << ',' << m.loss_v << ',' << m.loss_t << ','
            << m.top1_s0 << "\n";
        std::cout << "ablate " << row.label << ": top1_median=" << m.top1 << "\n";
    }
    std::cout << "wrote " << out_path << " (" << rows.size() << " rows)\n";
    return kExitOk;
}

int cmd_audit(const std::string& log_path, const std::string& data_path, bool verbose) {
    const MessageLog log = load_log(log_path);
    const Corpus corpus = load_corpus(data_path);
    const std::vector<double> canaries = extract_canaries(corpus);
    const AuditReport report = audit_log(log, canaries);

    std::cout << "audit: scanned " << report.frames_scanned << " frames, " << report.bytes_scanned
              << " bytes, " << canaries.size() << " canary patterns\n";
    if (report.passed()) {
        std::cout << "audit: PASS (0 matches)\n";
        return kExitOk;
    }
    std::cout << "audit: FAIL (" << report.matches.size() << " matches)\n";
    const std::size_t shown =
        verbose ? report.matches.size() : std::min<std::size_t>(report.matches.size(), 10);
    for (std::size_t i = 0; i < shown; ++i) {
        std::cout << "  canary " << report.matches[i].pattern_index << " at byte offset "
                  << report.matches[i].byte_offset << "\n";
    }
    return kExitAuditFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Privacy-preserving multi-subject trainer on synthetic data"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "Write a synthetic multi-subject dataset");
    SyntheticSpec spec;
    std::string gen_out;
    std::optional<std::string> voxel_csv;
    gen->add_option("--out", gen_out, "Output .bgds path")->required();
    gen->add_option("--subjects", spec.num_subjects, "Number of subjects")->capture_default_str();
    gen->add_option("--latent-dim", spec.latent_dim)->capture_default_str();
    gen->add_option("--voxel-dims", voxel_csv, "Comma-separated per-subject input widths");
    gen->add_option("--train-per-subject", spec.train_per_subject)->capture_default_str();
    gen->add_option("--test-count", spec.shared_test_count)->capture_default_str();
    gen->add_option("--noise", spec.noise_sigma)->capture_default_str();
    gen->add_option("--latent-noise", spec.latent_sigma)->capture_default_str();
    gen->add_option("--image-dim", spec.image_dim)->capture_default_str();
    gen->add_option("--text-dim", spec.text_dim)->capture_default_str();
    gen->add_option("--seed", spec.data_seed, "Data seed")->capture_default_str();
    gen->add_option("--map-seed", spec.target_map_seed, "Target-map seed")->capture_default_str();

    // train
    auto* train = app.add_subcommand("train", "Run collaborative training on a dataset");
    std::string train_data, train_out;
    std::optional<std::string> train_config;
    TrainFlags train_flags;
    train->add_option("--data", train_data, "Dataset .bgds path")->required();
    train->add_option("--out", train_out, "Output directory")->required();
    train->add_option("--config", train_config, "key=value config file");
    train_flags.attach(train);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate checkpoints against a dataset");
    std::string eval_data, eval_run;
    std::optional<std::size_t> eval_epoch;
    std::optional<std::string> eval_out;
    eval_cmd->add_option("--data", eval_data)->required();
    eval_cmd->add_option("--run", eval_run, "Training output directory")->required();
    eval_cmd->add_option("--epoch", eval_epoch, "Checkpoint epoch (default: latest)");
    eval_cmd->add_option("--out", eval_out, "Write records here instead of stdout");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "Run a configuration sweep, emit CSV");
    std::string ablate_data, ablate_mode, ablate_out;
    std::string ablate_seeds = "1,2,3,4,5";
    std::optional<std::string> ablate_config;
    TrainFlags ablate_flags;
    ablate->add_option("--data", ablate_data)->required();
    ablate->add_option("--mode", ablate_mode, "sync_tiers | subjects | m_layers")
        ->required()
        ->check(CLI::IsMember({"sync_tiers", "subjects", "m_layers"}));
    ablate->add_option("--out", ablate_out, "Output CSV path")->required();
    ablate->add_option("--seeds", ablate_seeds, "Comma-separated seed list")->capture_default_str();
    ablate->add_option("--config", ablate_config, "key=value config file");
    ablate_flags.attach(ablate);

    // audit
    auto* audit = app.add_subcommand("audit", "Scan a message log for dataset canaries");
    std::string audit_log_path, audit_data;
    bool audit_verbose = false;
    audit->add_option("--log", audit_log_path, "audit.bin path")->required();
    audit->add_option("--data", audit_data, "Dataset the canaries were planted in")->required();
    audit->add_flag("--verbose", audit_verbose, "List every match");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    }

    try {
        if (gen->parsed()) return cmd_generate(gen_out, spec, voxel_csv);
        if (train->parsed()) return cmd_train(train_data, train_out, train_config, train_flags);
        if (eval_cmd->parsed()) return cmd_eval(eval_data, eval_run, eval_epoch, eval_out);
        if (ablate->parsed())
            return cmd_ablate(ablate_data, ablate_mode, ablate_out, ablate_seeds, ablate_config,
                              ablate_flags);
        if (audit->parsed()) return cmd_audit(audit_log_path, audit_data, audit_verbose);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitValidation;
}
