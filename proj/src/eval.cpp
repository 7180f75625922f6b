#include "brainfed/eval.hpp"

#include <cmath>
#include <sstream>

namespace brainfed {

namespace {

Tensor normalize_rows_checked(const Tensor& x, const char* what) {
    const std::size_t n = x.rows(), e = x.cols();
    Tensor out = x;
    for (std::size_t i = 0; i < n; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < e; ++j) sq += x.data[i * e + j] * x.data[i * e + j];
        const double norm = std::sqrt(sq);
        if (norm == 0.0) {
            throw value_error(std::string(what) + ": cannot normalize zero-norm row " + std::to_string(i));
        }
        for (std::size_t j = 0; j < e; ++j) out.data[i * e + j] /= norm;
    }
    return out;
}

}  // namespace

double retrieval_accuracy(const Tensor& preds, const Tensor& targets, std::size_t k) {
    if (!preds.same_shape(targets) || preds.rank() != 2) {
        throw dim_error("retrieval: preds and targets must share a rank-2 shape");
    }
    const std::size_t n = preds.rows();
    if (n < 2) throw contract_error("retrieval: needs at least 2 rows");
    if (k < 1) throw contract_error("retrieval: k must be >= 1");

    const Tensor p_hat = normalize_rows_checked(preds, "retrieval preds");
    const Tensor t_hat = normalize_rows_checked(targets, "retrieval targets");
    const Tensor sims = matmul(p_hat, transpose(t_hat));  // [n x n]

    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = sims.data.data() + i * n;
        const double true_sim = row[i];
        // Rank of the true target with ties broken toward the lower index.
        std::size_t rank = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (row[j] > true_sim || (row[j] == true_sim && j < i)) ++rank;
        }
        if (rank < k) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

double alignment_score(const std::vector<Tensor>& per_subject_preds) {
    const std::size_t s_count = per_subject_preds.size();
    if (s_count < 2) throw contract_error("alignment: needs at least 2 subjects");
    const std::size_t n = per_subject_preds.front().rows();
    for (const Tensor& t : per_subject_preds) {
        if (t.rank() != 2 || t.rows() != n || t.cols() != per_subject_preds.front().cols()) {
            throw dim_error("alignment: per-subject predictions must share one shape");
        }
    }
    if (n < 2) throw contract_error("alignment: needs at least 2 stimuli");

    std::vector<Tensor> hats;
    hats.reserve(s_count);
    for (const Tensor& t : per_subject_preds) hats.push_back(normalize_rows_checked(t, "alignment"));

    // For each subject pair, the stimulus-by-stimulus cosine matrix: matching
    // pairs live on the diagonal, mismatched pairs off it.
    double matched = 0.0, mismatched = 0.0;
    std::size_t pair_count = 0;
    for (std::size_t a = 0; a < s_count; ++a) {
        for (std::size_t b = a + 1; b < s_count; ++b) {
            const Tensor gram = matmul(hats[a], transpose(hats[b]));
            double diag = 0.0, total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                diag += gram.data[i * n + i];
                for (std::size_t j = 0; j < n; ++j) total += gram.data[i * n + j];
            }
            matched += diag / static_cast<double>(n);
            mismatched += (total - diag) / static_cast<double>(n * (n - 1));
            ++pair_count;
        }
    }
    return (matched - mismatched) / static_cast<double>(pair_count);
}

EvalResult evaluate_all(const Corpus& corpus, const std::vector<ClientState>& clients,
                        const GlobalState& global, const TrainConfig& cfg) {
    if (clients.empty()) throw contract_error("evaluate: no clients");
    const LayerPartition partition = cfg.partition();

    EvalResult result;
    std::vector<Tensor> per_subject_img_preds;
    for (const ClientState& client : clients) {
        const SubjectData* data = nullptr;
        for (const SubjectData& s : corpus.subjects) {
            if (s.subject_id == client.subject_id) data = &s;
        }
        if (data == nullptr) {
            throw contract_error("evaluate: no dataset for subject " + std::to_string(client.subject_id));
        }

        SubjectMetrics m;
        m.subject_id = client.subject_id;

        auto [img_pred, img_cache] = forward(client.image.params, data->x_test);
        auto [txt_pred, txt_cache] = forward(client.text.params, data->x_test);
        m.loss_image = modality_loss(img_pred, corpus.img_test, cfg.loss_cfg).loss;
        m.loss_text = modality_loss(txt_pred, corpus.txt_test, cfg.loss_cfg).loss;
        m.top1 = retrieval_accuracy(img_pred, corpus.img_test, 1);
        m.top5 = retrieval_accuracy(img_pred, corpus.img_test, 5);

        const ParamSet composed = compose_global(client, global, Modality::Image, partition);
        auto [composed_pred, composed_cache] = forward(composed, data->x_test);
        m.global_top1 = retrieval_accuracy(composed_pred, corpus.img_test, 1);

        per_subject_img_preds.push_back(std::move(img_pred));
        result.subjects.push_back(m);
    }
    result.alignment = clients.size() >= 2 ? alignment_score(per_subject_img_preds) : 0.0;
    return result;
}

std::string to_jsonl(const MetricsRecord& r) {
    std::ostringstream os;
    os.precision(17);
    os << "{\"epoch\":" << r.epoch << ",\"subject\":" << r.subject << ",\"split\":\"" << r.split
       << "\",\"loss_v\":" << r.loss_v << ",\"loss_t\":" << r.loss_t << ",\"top1\":" << r.top1
       << ",\"top5\":" << r.top5 << ",\"alignment\":" << r.alignment
       << ",\"global_top1\":" << r.global_top1 << "}";
    return os.str();
}

std::vector<MetricsRecord> records_for_epoch(std::size_t epoch, const EvalResult& result) {
    std::vector<MetricsRecord> records;
    for (const SubjectMetrics& m : result.subjects) {
        MetricsRecord r;
        r.epoch = epoch;
        r.subject = m.subject_id;
        r.loss_v = m.loss_image;
        r.loss_t = m.loss_text;
        r.top1 = m.top1;
        r.top5 = m.top5;
        r.alignment = result.alignment;
        r.global_top1 = m.global_top1;
        records.push_back(std::move(r));
    }
    return records;
}

FullReport run_training_with_metrics(const Corpus& corpus, const TrainConfig& cfg,
                                     std::size_t eval_every) {
    FullReport report;
    const auto observer = [&](std::size_t epoch, const std::vector<ClientState>& clients,
                              const GlobalState& global) {
        const bool due = (eval_every != 0 && epoch % eval_every == 0) || epoch == cfg.epochs;
        if (!due) return;
        const EvalResult eval = evaluate_all(corpus, clients, global, cfg);
        for (MetricsRecord& r : records_for_epoch(epoch, eval)) report.records.push_back(std::move(r));
        if (epoch == cfg.epochs) report.final_eval = eval;
    };
    report.training = run_training(corpus, cfg, observer);
    return report;
}

}  // namespace brainfed
