#pragma once

#include "ma2mi/finetune.hpp"

#include <string>
#include <vector>

namespace ma2mi::eval {

struct ConfusionMatrix {
    int n = 0;
    std::vector<long long> counts;  // n*n, rows = true, cols = predicted

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int n_) : n(n_), counts((size_t)n_ * n_, 0) {}
    void add(int truth, int pred, long long k = 1);
    long long at(int truth, int pred) const { return counts[(size_t)truth * n + pred]; }
    long long total() const;
    long long trace() const;
    void accumulate(const ConfusionMatrix& other);
};

double accuracy(const ConfusionMatrix& cm);
// mean per-class F1 = 2TP/(2TP+FN+FP); empty-support classes contribute 0
double uf1(const ConfusionMatrix& cm);

struct Prediction {
    std::string clip_id;
    int truth = -1;  // -1 = unlabeled
    int pred = 0;
    std::vector<double> probs;
};

struct FoldResult {
    int fold = 0;
    std::vector<Prediction> preds;
    ConfusionMatrix cm;
    double fold_accuracy = 0.0, fold_uf1 = 0.0;
    std::vector<std::string> warnings;
};

struct AggregateReport {
    std::string protocol;
    long long seed = 0;
    std::string config_hash;
    std::vector<FoldResult> folds;
    ConfusionMatrix pooled;
    double pooled_accuracy = 0.0, pooled_uf1 = 0.0;

    cfg::json to_json() const;
};

// per fold: fine-tune a fresh head (and copies of the backbone) on the train
// clips, predict the test clips, pool confusion matrices across folds
AggregateReport run_protocol(const std::vector<data::ClipRecord>& records,
                             const data::SplitPlan& plan, const std::string& pretrain_checkpoint,
                             const cfg::json& model_j, const train::FinetuneSettings& ft,
                             long long seed, const std::string& config_hash,
                             bool verbose = false);

void write_predictions(const std::string& path, const std::vector<Prediction>& preds);

// per-metric deltas (b minus a); class-count mismatch throws
cfg::json compare_runs(const cfg::json& report_a, const cfg::json& report_b);
std::string format_compare(const cfg::json& delta);

}  // namespace ma2mi::eval
