#include "ma2mi/finetune.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace ma2mi::train {

using cfg::json;

FinetuneSettings finetune_settings_from_json(const cfg::json& core, int input_size) {
    FinetuneSettings s;
    auto& st = core.at("strategy");
    s.strategy.tune_position = st.at("tune_position_encoder").get<bool>();
    s.strategy.tune_action = st.at("tune_action_encoder").get<bool>();
    s.strategy.keep_reconstruction_task = st.at("keep_reconstruction_task").get<bool>();
    s.strategy.w_rec = st.at("w_rec").get<double>();
    s.num_classes = core.at("num_classes").get<int>();
    auto& aj = core.at("augment");
    s.aug.flip_prob = aj.at("flip_prob").get<double>();
    s.aug.crop_prob = aj.at("crop_prob").get<double>();
    s.aug.crop_pad = aj.at("crop_pad").get<int>();
    s.aug.rot_prob = aj.at("rot_prob").get<double>();
    s.aug.rot_max_deg = aj.at("rot_max_deg").get<double>();
    auto& oj = core.at("optim");
    s.lr = oj.at("lr").get<double>();
    s.weight_decay = oj.at("weight_decay").get<double>();
    s.batch = oj.at("batch").get<int>();
    auto& sj = core.at("schedule");
    s.epochs = sj.at("epochs").get<int>();
    s.steps_per_epoch = sj.at("steps_per_epoch").get<int>();
    s.lr_final_ratio = sj.at("lr_final_ratio").get<double>();
    s.input_size = input_size;
    return s;
}

LabeledBatch sample_finetune_batch(const std::vector<data::ClipRecord>& records,
                                   const std::vector<int>& order, size_t& cursor, int batch_size,
                                   int input_size, const AugmentSpec& aug, Rng& rng) {
    if (records.empty()) throw std::invalid_argument("sample_finetune_batch: no clips");
    LabeledBatch b;
    for (int i = 0; i < batch_size; ++i) {
        const auto& rec = records[order[cursor % order.size()]];
        ++cursor;
        if (!rec.label)
            throw std::runtime_error("finetune: clip " + rec.clip_id + " has no label");
        data::FramePair fp = data::keyframe_pair(rec, input_size);
        // one draw applied to both frames keeps their pixel correspondence
        AugmentParams ap = draw_augment(aug, rng);
        b.onset.push_back(apply_augment(fp.frame_a, ap));
        b.apex.push_back(apply_augment(fp.frame_b, ap));
        b.labels.push_back(*rec.label);
        b.clip_ids.push_back(rec.clip_id);
    }
    return b;
}

losses::LossValue finetune_step_loss(Pipeline& p, const LabeledBatch& batch,
                                     const FinetuneStrategy& strategy) {
    Tensor x_on = p.net.to_input(batch.onset);
    Tensor x_diff = p.net.to_diff_input(batch.onset, batch.apex);
    model::SpatialFeature fa = p.net.encode_action(x_diff);
    model::SpatialFeature fp = p.net.cfg.use_position ? p.net.encode_position(x_on) : fa;
    if (!strategy.tune_position) fp.t = fp.t.detach();
    if (!strategy.tune_action) fa.t = fa.t.detach();
    Tensor cond = p.net.condition(fp, fa, false);
    Tensor logits = p.net.classify(cond);
    losses::LossValue ce = losses::cross_entropy(logits, batch.labels);
    if (!strategy.keep_reconstruction_task) {
        ce.components["loss"] = ce.value.item();
        return ce;
    }
    Tensor z_on = p.codec.encode(model::images_to_tensor(batch.onset)).detach();
    Tensor z_apex = p.codec.encode(model::images_to_tensor(batch.apex)).detach();
    Tensor z_hat = p.recon.forward(z_on, cond);
    losses::LossValue rec = losses::l_rec(z_hat, z_apex);
    losses::LossValue total;
    total.value = add(ce.value, scale(rec.value, strategy.w_rec));
    total.components = ce.components;
    total.components["l_rec"] = rec.components.at("l_rec");
    total.components["loss"] = total.value.item();
    return total;
}

void run_finetune_loop(Pipeline& p, const std::vector<data::ClipRecord>& train_records,
                       const FinetuneSettings& s, Rng& rng, std::ostream* log) {
    if (!p.net.has_head) p.net.attach_head(s.num_classes);
    p.set_training(true);
    // frozen branches keep their running stats: eval mode throughout
    if (!s.strategy.tune_position) p.net.position_encoder.set_training(false);
    if (!s.strategy.tune_action) p.net.action_encoder.set_training(false);

    nn::ParamMap trainable;
    trainable.merge("head", p.net.head.parameters());
    trainable.merge("fusion", p.net.fusion.parameters());
    if (s.strategy.tune_position)
        trainable.merge("position_encoder", p.net.position_encoder.parameters());
    if (s.strategy.tune_action)
        trainable.merge("action_encoder", p.net.action_encoder.parameters());
    if (s.strategy.keep_reconstruction_task) trainable.merge("recon", p.recon.parameters());
    nn::AdamW opt(trainable, s.lr, s.weight_decay);

    int steps_per_epoch = s.steps_per_epoch;
    if (steps_per_epoch <= 0)
        steps_per_epoch = ((int)train_records.size() + s.batch - 1) / s.batch;
    std::vector<int> order(train_records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = (int)i;

    long long gstep = 0;
    for (int epoch = 0; epoch < s.epochs; ++epoch) {
        opt.lr = lr_at_epoch(s.lr, epoch, s.epochs, s.lr_final_ratio);
        rng.shuffle(order);
        size_t cursor = 0;
        for (int step = 0; step < steps_per_epoch; ++step) {
            LabeledBatch b = sample_finetune_batch(train_records, order, cursor, s.batch,
                                                   s.input_size, s.aug, rng);
            losses::LossValue lv = finetune_step_loss(p, b, s.strategy);
            if (!std::isfinite(lv.value.item()))
                throw std::runtime_error("finetune step produced a non-finite loss");
            opt.zero_grad();
            lv.value.backward();
            opt.step();
            ++gstep;
            if (log) {
                json line{{"step", gstep}, {"ce", lv.components.at("ce")}};
                if (lv.components.count("l_rec")) line["l_rec"] = lv.components.at("l_rec");
                line["loss"] = lv.components.at("loss");
                (*log) << line.dump() << "\n";
            }
        }
    }
}

PredictResult predict(Pipeline& p, const data::ClipRecord& clip, int input_size) {
    if (!p.net.has_head) throw std::logic_error("predict: model has no classification head");
    p.set_training(false);
    data::FramePair fp = data::keyframe_pair(clip, input_size);
    Tensor x_on = p.net.to_input({fp.frame_a});
    Tensor x_diff = p.net.to_diff_input({fp.frame_a}, {fp.frame_b});
    Tensor cond = p.net.condition(p.net.encode_position(x_on), p.net.encode_action(x_diff), false);
    Tensor logits = p.net.classify(cond);
    int n = logits.shape()[1];
    double mx = logits.data()[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, logits.data()[i]);
    PredictResult r;
    r.probs.resize(n);
    double z = 0;
    for (int i = 0; i < n; ++i) {
        r.probs[i] = std::exp(logits.data()[i] - mx);
        z += r.probs[i];
    }
    for (int i = 0; i < n; ++i) r.probs[i] /= z;
    r.pred = 0;
    for (int i = 1; i < n; ++i)
        if (r.probs[i] > r.probs[r.pred]) r.pred = i;
    return r;
}

Pipeline init_finetune_pipeline(const std::string& checkpoint_path, const cfg::json& model_j,
                                int input_size, long long seed) {
    if (!checkpoint_path.empty()) {
        cfg::json meta;
        Pipeline p = load_pipeline(checkpoint_path, &meta);
        std::string stage = meta.value("stage", "");
        if (stage != "pretrain")
            std::fprintf(stderr,
                         "warning: checkpoint %s has stage '%s', expected 'pretrain'; "
                         "proceeding anyway\n",
                         checkpoint_path.c_str(), stage.c_str());
        return p;
    }
    // scratch arm: fresh weights, pixel-space reconstructor kept around only
    // for the reconstruction-on strategy
    json defaults = cfg::default_config("pretrain");
    PipelineConfig pc =
        make_pipeline_config(model_j, defaults.at("codec"), defaults.at("reconstructor"),
                             input_size);
    Rng rng((uint64_t)seed);
    Rng init_rng = rng.child(1);
    return Pipeline(init_rng, pc);
}

FinetuneResult run_finetune(const cfg::json& config) {
    const std::string out_dir = config.at("out").get<std::string>();
    fs::create_directories(out_dir);
    const long long seed = config.at("seed").get<long long>();
    const std::string hash = cfg::config_hash(config);

    auto& dj = config.at("data");
    const int input_size = dj.at("input_size").get<int>();
    auto records = data::load_manifest(dj.at("manifest").get<std::string>());
    FinetuneSettings s = finetune_settings_from_json(config, input_size);

    Pipeline p = init_finetune_pipeline(config.at("init").at("checkpoint").get<std::string>(),
                                        config.at("model"), input_size, seed);
    p.net.attach_head(s.num_classes);

    FinetuneResult result;
    result.log_path = out_dir + "/train_log.jsonl";
    std::ofstream log(result.log_path, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write " + result.log_path);
    json header{{"lr", s.lr}, {"batch", s.batch}, {"epochs", s.epochs}};
    log << header.dump() << "\n";

    Rng root((uint64_t)seed);
    Rng train_rng = root.child(5);
    run_finetune_loop(p, records, s, train_rng, &log);

    result.checkpoint_path = out_dir + "/last.ckpt";
    json meta{{"stage", "finetune"},
              {"epoch", s.epochs},
              {"seed", seed},
              {"config_hash", hash},
              {"num_classes", s.num_classes}};
    save_pipeline(result.checkpoint_path, p, meta);

    // final-epoch training cross-entropy, for quick sanity reads
    p.set_training(false);
    std::vector<int> order(records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = (int)i;
    size_t cursor = 0;
    Rng eval_rng(1);
    LabeledBatch b = sample_finetune_batch(records, order, cursor,
                                           (int)std::min<size_t>(records.size(), 32), input_size,
                                           AugmentSpec{}, eval_rng);
    result.final_ce = finetune_step_loss(p, b, FinetuneStrategy{true, true, false, 0.0})
                          .components.at("ce");
    cfg::write_json_file(out_dir + "/run_meta.json",
                         json{{"config", config}, {"config_hash", hash},
                              {"final_ce", result.final_ce}});
    return result;
}

}  // namespace ma2mi::train
