#pragma once

#include <string>
#include <vector>

#include "brainfed/protocol.hpp"

namespace brainfed {

/// Fraction of rows whose true target is in the top-k by cosine similarity
/// against all N targets; ties broken toward the lower index.
double retrieval_accuracy(const Tensor& preds, const Tensor& targets, std::size_t k);

/// Cross-subject embedding-consistency contrast on a shared test split:
/// mean pairwise cross-subject cosine at matching stimulus indices minus the
/// same statistic over mismatched indices. Higher means tighter alignment.
double alignment_score(const std::vector<Tensor>& per_subject_preds);

struct SubjectMetrics {
    std::uint16_t subject_id = 0;
    double loss_image = 0.0;
    double loss_text = 0.0;
    double top1 = 0.0;
    double top5 = 0.0;
    double global_top1 = 0.0;
};

struct EvalResult {
    std::vector<SubjectMetrics> subjects;
    double alignment = 0.0;  // 0 when fewer than two subjects
};

/// Shared-test metrics for every client: per-modality losses, image-retrieval
/// top-1/top-5 for the individual model and for the composed global model
/// (subject foundational tier + global shared tiers), plus the cross-subject
/// alignment contrast.
EvalResult evaluate_all(const Corpus& corpus, const std::vector<ClientState>& clients,
                        const GlobalState& global, const TrainConfig& cfg);

/// One metrics.jsonl record.
struct MetricsRecord {
    std::size_t epoch = 0;
    std::uint16_t subject = 0;
    std::string split = "test";
    double loss_v = 0.0;
    double loss_t = 0.0;
    double top1 = 0.0;
    double top5 = 0.0;
    double alignment = 0.0;
    double global_top1 = 0.0;
};

std::string to_jsonl(const MetricsRecord& record);

std::vector<MetricsRecord> records_for_epoch(std::size_t epoch, const EvalResult& result);

struct FullReport {
    TrainingReport training;
    std::vector<MetricsRecord> records;  // eval_every epochs plus the final one
    EvalResult final_eval;
};

/// run_training plus per-epoch evaluation records. eval_every = 0 evaluates
/// only after the final epoch. Evaluation never touches training state.
FullReport run_training_with_metrics(const Corpus& corpus, const TrainConfig& cfg,
                                     std::size_t eval_every = 1);

}  // namespace brainfed
