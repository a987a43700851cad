#pragma once

#include "ma2mi/checkpoint.hpp"
#include "ma2mi/codec.hpp"
#include "ma2mi/config.hpp"
#include "ma2mi/data.hpp"
#include "ma2mi/losses.hpp"
#include "ma2mi/miacnet.hpp"
#include "ma2mi/reconstructor.hpp"

#include <map>
#include <string>
#include <vector>

namespace ma2mi::train {

struct PipelineConfig {
    model::MiacNetConfig net;
    model::CodecConfig codec;
    model::ReconstructorConfig recon;  // latent geometry derived from codec + input size
};

cfg::json pipeline_config_to_json(const PipelineConfig& pc);
PipelineConfig pipeline_config_from_json(const cfg::json& j);
// from the pretrain/finetune config trees (model/codec/reconstructor sections)
PipelineConfig make_pipeline_config(const cfg::json& model_j, const cfg::json& codec_j,
                                    const cfg::json& recon_j, int input_size);

// every network of the full method in one place
struct Pipeline {
    PipelineConfig cfg;
    model::MiacNet net;
    model::LatentCodec codec;
    model::Reconstructor recon;

    Pipeline(Rng& rng, const PipelineConfig& cfg);
    nn::ParamMap all_params();  // prefixes: net, codec, recon
    void set_training(bool t);
};

// checkpoint embeds the pipeline config so loading rebuilds the right shapes
void save_pipeline(const std::string& path, Pipeline& p, const cfg::json& extra_meta);
Pipeline load_pipeline(const ckpt::Archive& a);
Pipeline load_pipeline(const std::string& path, cfg::json* meta_out = nullptr);

struct Batch {
    std::vector<Image> a, b;  // I_t, I_{t+delta}
    std::vector<std::string> subjects, clip_ids;
    std::vector<int> deltas;
    int size() const { return (int)a.size(); }
};

Batch sample_pretrain_batch(const std::vector<data::ClipRecord>& records,
                            const std::vector<int>& order, size_t& cursor, int batch_size,
                            int input_size, int delta_lo, int delta_hi, Rng& rng);

struct PretrainStepSettings {
    double w_rec = 1.0, w_pos = 1.0;
    bool normalized_rec = true;
    bool stop_position_grad = true;
    losses::TransformFamily tau;
};

// forward + all pre-training losses; optimizer stepping is the caller's job.
// NaN in any component aborts with the offending clip ids.
losses::LossValue pretrain_losses(Pipeline& p, const Batch& batch,
                                  const PretrainStepSettings& s, Rng& tau_rng);

struct PretrainResult {
    std::string checkpoint_path;
    std::string log_path;
    double codec_psnr = 0.0;
    double lrec_first_ma = 0.0, lrec_last_ma = 0.0;  // 10-step moving averages
};

// full stage from a resolved `pretrain` config tree
PretrainResult run_pretrain(const cfg::json& config);

double lr_at_epoch(double lr0, int epoch, int epochs, double final_ratio);

}  // namespace ma2mi::train
