#pragma once

#include "ma2mi/pretrain.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace ma2mi::train {

struct FinetuneStrategy {
    bool tune_position = true;
    bool tune_action = true;
    bool keep_reconstruction_task = false;
    double w_rec = 1.0;
};

struct FinetuneSettings {
    FinetuneStrategy strategy;
    int num_classes = 5;
    AugmentSpec aug;
    double lr = 4e-4, weight_decay = 0.1;
    int batch = 16, epochs = 80, steps_per_epoch = 0;  // 0 = ceil(clips/batch)
    double lr_final_ratio = 0.01;
    int input_size = 64;
};

// core = the {strategy, num_classes, augment, optim, schedule} subtree
FinetuneSettings finetune_settings_from_json(const cfg::json& core, int input_size);

struct LabeledBatch {
    std::vector<Image> onset, apex;  // pair-consistent augmentation already applied
    std::vector<int> labels;
    std::vector<std::string> clip_ids;
    int size() const { return (int)onset.size(); }
};

LabeledBatch sample_finetune_batch(const std::vector<data::ClipRecord>& records,
                                   const std::vector<int>& order, size_t& cursor, int batch_size,
                                   int input_size, const AugmentSpec& aug, Rng& rng);

// cross-entropy on the fused condition vector, optional reconstruction term;
// frozen branches run in eval mode with detached outputs
losses::LossValue finetune_step_loss(Pipeline& p, const LabeledBatch& batch,
                                     const FinetuneStrategy& strategy);

// applies freeze contracts (eval mode on frozen encoders) and trains in place
void run_finetune_loop(Pipeline& p, const std::vector<data::ClipRecord>& train_records,
                       const FinetuneSettings& s, Rng& rng, std::ostream* log);

struct PredictResult {
    int pred = 0;
    std::vector<double> probs;
};

// eval-mode forward of the onset/apex pair; lowest-index argmax tie-break
PredictResult predict(Pipeline& p, const data::ClipRecord& clip, int input_size);

struct FinetuneResult {
    std::string checkpoint_path;
    std::string log_path;
    double final_ce = 0.0;
};

// full stage from a resolved `finetune` config tree
FinetuneResult run_finetune(const cfg::json& config);

// pipeline init shared by the finetune and eval commands: from a pre-training
// checkpoint when given (warning on stage mismatch), otherwise fresh weights
Pipeline init_finetune_pipeline(const std::string& checkpoint_path, const cfg::json& model_j,
                                int input_size, long long seed);

}  // namespace ma2mi::train
