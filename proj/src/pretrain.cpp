#include "ma2mi/pretrain.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace ma2mi::train {

using cfg::json;

cfg::json pipeline_config_to_json(const PipelineConfig& pc) {
    return json{{"net",
                 {{"preset", pc.net.encoder.preset},
                  {"base_width", pc.net.encoder.base_width},
                  {"input_size", pc.net.encoder.input_size},
                  {"fusion", pc.net.fusion == model::FusionKind::PoolSum      ? "pool_sum"
                             : pc.net.fusion == model::FusionKind::ConcatPool ? "concat_pool"
                                                                              : "gated"},
                  {"cond_dim", pc.net.cond_dim},
                  {"position_branch", pc.net.use_position},
                  {"norm_mean", pc.net.norm_mean},
                  {"norm_std", pc.net.norm_std}}},
                {"codec",
                 {{"kind", pc.codec.kind},
                  {"downsample", pc.codec.downsample},
                  {"latent_channels", pc.codec.latent_channels},
                  {"base_width", pc.codec.base_width}}},
                {"recon",
                 {{"patch", pc.recon.patch},
                  {"dim", pc.recon.dim},
                  {"layers", pc.recon.layers},
                  {"cond_dim", pc.recon.cond_dim},
                  {"mlp_ratio", pc.recon.mlp_ratio},
                  {"latent_channels", pc.recon.latent_channels},
                  {"latent_size", pc.recon.latent_size}}}};
}

PipelineConfig pipeline_config_from_json(const cfg::json& j) {
    PipelineConfig pc;
    auto& n = j.at("net");
    pc.net.encoder.preset = n.at("preset").get<std::string>();
    pc.net.encoder.base_width = n.at("base_width").get<int>();
    pc.net.encoder.input_size = n.at("input_size").get<int>();
    pc.net.fusion = model::fusion_kind_from_string(n.at("fusion").get<std::string>());
    pc.net.cond_dim = n.at("cond_dim").get<int>();
    pc.net.use_position = n.value("position_branch", true);
    for (int i = 0; i < 3; ++i) {
        pc.net.norm_mean[i] = n.at("norm_mean")[i].get<double>();
        pc.net.norm_std[i] = n.at("norm_std")[i].get<double>();
    }
    auto& c = j.at("codec");
    pc.codec.kind = c.at("kind").get<std::string>();
    pc.codec.downsample = c.at("downsample").get<int>();
    pc.codec.latent_channels = c.at("latent_channels").get<int>();
    pc.codec.base_width = c.at("base_width").get<int>();
    auto& r = j.at("recon");
    pc.recon.patch = r.at("patch").get<int>();
    pc.recon.dim = r.at("dim").get<int>();
    pc.recon.layers = r.at("layers").get<int>();
    pc.recon.cond_dim = r.at("cond_dim").get<int>();
    pc.recon.mlp_ratio = r.at("mlp_ratio").get<int>();
    pc.recon.latent_channels = r.at("latent_channels").get<int>();
    pc.recon.latent_size = r.at("latent_size").get<int>();
    return pc;
}

PipelineConfig make_pipeline_config(const cfg::json& model_j, const cfg::json& codec_j,
                                    const cfg::json& recon_j, int input_size) {
    PipelineConfig pc;
    pc.net.encoder.preset = model_j.at("preset").get<std::string>();
    pc.net.encoder.base_width = model_j.at("base_width").get<int>();
    pc.net.encoder.input_size = input_size;
    pc.net.fusion = model::fusion_kind_from_string(model_j.at("fusion").get<std::string>());
    pc.net.cond_dim = model_j.at("cond_dim").get<int>();
    pc.net.use_position = model_j.value("position_branch", true);
    for (int i = 0; i < 3; ++i) {
        pc.net.norm_mean[i] = model_j.at("norm_mean")[i].get<double>();
        pc.net.norm_std[i] = model_j.at("norm_std")[i].get<double>();
    }
    pc.codec.kind = codec_j.at("kind").get<std::string>();
    pc.codec.downsample = codec_j.at("downsample").get<int>();
    pc.codec.latent_channels = codec_j.at("latent_channels").get<int>();
    pc.codec.base_width = codec_j.at("base_width").get<int>();
    bool identity = pc.codec.kind == "identity";
    pc.recon.patch = recon_j.at("patch").get<int>();
    pc.recon.dim = recon_j.at("dim").get<int>();
    pc.recon.layers = recon_j.at("layers").get<int>();
    pc.recon.mlp_ratio = recon_j.at("mlp_ratio").get<int>();
    pc.recon.cond_dim = pc.net.cond_dim;
    pc.recon.latent_channels = identity ? 3 : pc.codec.latent_channels;
    pc.recon.latent_size = identity ? input_size : input_size / pc.codec.downsample;
    if (pc.recon.latent_size % pc.recon.patch)
        throw std::invalid_argument("config: latent grid " + std::to_string(pc.recon.latent_size) +
                                    " not divisible by reconstructor.patch " +
                                    std::to_string(pc.recon.patch));
    return pc;
}

namespace {

Pipeline build_pipeline(Rng& rng, const PipelineConfig& pc) { return Pipeline(rng, pc); }

}  // namespace

Pipeline::Pipeline(Rng& rng, const PipelineConfig& cfg_)
    : cfg(cfg_),
      net([&] {
          Rng r = rng.child(11);
          return model::MiacNet(r, cfg_.net);
      }()),
      codec([&] {
          Rng r = rng.child(12);
          return model::LatentCodec(r, cfg_.codec);
      }()),
      recon([&] {
          Rng r = rng.child(13);
          return model::Reconstructor(r, cfg_.recon);
      }()) {}

nn::ParamMap Pipeline::all_params() {
    nn::ParamMap pm;
    pm.merge("net", net.parameters());
    pm.merge("codec", codec.parameters());
    pm.merge("recon", recon.parameters());
    return pm;
}

void Pipeline::set_training(bool t) {
    net.set_training(t);
    codec.set_training(t);
    recon.set_training(t);
}

void save_pipeline(const std::string& path, Pipeline& p, const cfg::json& extra_meta) {
    ckpt::Archive a;
    a.meta = extra_meta;
    a.meta["pipeline"] = pipeline_config_to_json(p.cfg);
    a.meta["codec_fitted"] = p.codec.fitted;
    ckpt::put_params(a, "pipeline", p.all_params());
    ckpt::save_archive(path, a);
}

Pipeline load_pipeline(const ckpt::Archive& a) {
    Rng rng(1);
    Pipeline p = build_pipeline(rng, pipeline_config_from_json(a.meta.at("pipeline")));
    p.codec.fitted = a.meta.value("codec_fitted", p.codec.fitted);
    int num_classes = a.meta.value("num_classes", 0);
    if (num_classes > 0) p.net.attach_head(num_classes);
    ckpt::load_params(a, "pipeline", p.all_params());
    return p;
}

Pipeline load_pipeline(const std::string& path, cfg::json* meta_out) {
    ckpt::Archive a = ckpt::load_archive(path);
    if (meta_out) *meta_out = a.meta;
    return load_pipeline(a);
}

Batch sample_pretrain_batch(const std::vector<data::ClipRecord>& records,
                            const std::vector<int>& order, size_t& cursor, int batch_size,
                            int input_size, int delta_lo, int delta_hi, Rng& rng) {
    if (records.empty()) throw std::invalid_argument("sample_pretrain_batch: no clips");
    Batch b;
    for (int i = 0; i < batch_size; ++i) {
        const auto& rec = records[order[cursor % order.size()]];
        ++cursor;
        data::FramePair fp = data::sample_frame_pair(rec, delta_lo, delta_hi, rng, input_size);
        b.a.push_back(std::move(fp.frame_a));
        b.b.push_back(std::move(fp.frame_b));
        b.subjects.push_back(rec.subject_id);
        b.clip_ids.push_back(rec.clip_id);
        b.deltas.push_back(fp.delta);
    }
    return b;
}

losses::LossValue pretrain_losses(Pipeline& p, const Batch& batch, const PretrainStepSettings& s,
                                  Rng& tau_rng) {
    int B = batch.size();
    const bool use_pos = p.net.cfg.use_position;
    Tensor x_t = p.net.to_input(batch.a);
    Tensor x_diff = p.net.to_diff_input(batch.a, batch.b);
    model::SpatialFeature fa = p.net.encode_action(x_diff);
    model::SpatialFeature fp = use_pos ? p.net.encode_position(x_t) : fa;
    Tensor cond = p.net.condition(fp, fa, s.stop_position_grad);

    Tensor z_t = p.codec.encode(model::images_to_tensor(batch.a)).detach();
    Tensor z_tgt = p.codec.encode(model::images_to_tensor(batch.b)).detach();
    Tensor z_hat = p.recon.forward(z_t, cond);
    losses::LossValue rec = losses::l_rec(z_hat, z_tgt, s.normalized_rec);

    auto encode_p = [&p](const Tensor& t) { return p.net.encode_position(t); };
    Tensor l1_sum = Tensor::scalar(0.0), l2_sum = Tensor::scalar(0.0),
           l3_sum = Tensor::scalar(0.0);
    int l2_pairs = 0;
    bool eps_flag = false;
    for (int i = 0; use_pos && i < B; ++i) {
        Tensor ci = fp.cells(i);
        losses::LossValue l1 = losses::l1_diversity(ci);
        l1_sum = add(l1_sum, l1.value);
        eps_flag = eps_flag || l1.eps_flagged;

        // cross-face partner: next sample with a different subject, if any
        for (int off = 1; off < B; ++off) {
            int j = (i + off) % B;
            if (batch.subjects[j] != batch.subjects[i]) {
                losses::LossValue l2 = losses::l2_cross_face(ci, fp.cells(j));
                l2_sum = add(l2_sum, l2.value);
                eps_flag = eps_flag || l2.eps_flagged;
                ++l2_pairs;
                break;
            }
        }

        losses::Transform tau = losses::draw_transform(s.tau, tau_rng);
        model::SpatialFeature fi{slice_batch(fp.t, i), fp.stride};
        losses::LossValue l3 =
            losses::l3_equivariance(encode_p, slice_batch(x_t, i), tau, fp.stride, &fi);
        l3_sum = add(l3_sum, l3.value);
    }
    Tensor l1_avg = scale(l1_sum, 1.0 / B);
    Tensor l2_avg = l2_pairs ? scale(l2_sum, 1.0 / l2_pairs) : l2_sum;
    Tensor l3_avg = scale(l3_sum, 1.0 / B);

    losses::LossValue pos;
    pos.value = add(add(l1_avg, l2_avg), l3_avg);
    pos.eps_flagged = eps_flag;
    pos.components["l1"] = l1_avg.item();
    pos.components["l2"] = l2_avg.item();
    pos.components["l3"] = l3_avg.item();
    pos.components["l_pos"] = pos.value.item();

    losses::LossValue pre = losses::l_pre(rec, pos, s.w_rec, s.w_pos);
    for (auto& [k, v] : pre.components)
        if (!std::isfinite(v)) {
            std::ostringstream msg;
            msg << "pretrain step produced a non-finite loss; components:";
            for (auto& [k2, v2] : pre.components) msg << " " << k2 << "=" << v2;
            msg << "; clips:";
            for (auto& id : batch.clip_ids) msg << " " << id;
            throw std::runtime_error(msg.str());
        }
    return pre;
}

double lr_at_epoch(double lr0, int epoch, int epochs, double final_ratio) {
    if (epochs <= 1 || final_ratio >= 1.0 || final_ratio <= 0.0) return lr0;
    double gamma = std::pow(final_ratio, 1.0 / (epochs - 1));
    return lr0 * std::pow(gamma, epoch);
}

namespace {

PretrainStepSettings step_settings_from(const json& config) {
    PretrainStepSettings s;
    auto& lo = config.at("losses");
    s.w_rec = lo.at("w_rec").get<double>();
    s.w_pos = lo.at("w_pos").get<double>();
    s.normalized_rec = lo.at("normalized_rec").get<bool>();
    s.stop_position_grad = lo.at("stop_position_grad").get<bool>();
    auto& tj = lo.at("tau");
    s.tau.flip = tj.at("flip").get<bool>();
    s.tau.translate = tj.at("translate").get<bool>();
    s.tau.max_translate_cells = tj.at("max_translate_cells").get<int>();
    s.tau.rotate = tj.at("rotate").get<bool>();
    s.tau.max_degrees = tj.at("max_degrees").get<double>();
    return s;
}

double moving_average(const std::vector<double>& trace, size_t start, size_t window) {
    size_t end = std::min(trace.size(), start + window);
    if (end <= start) return 0.0;
    double acc = 0;
    for (size_t i = start; i < end; ++i) acc += trace[i];
    return acc / (double)(end - start);
}

}  // namespace

PretrainResult run_pretrain(const cfg::json& config) {
    const std::string out_dir = config.at("out").get<std::string>();
    fs::create_directories(out_dir);
    const long long seed = config.at("seed").get<long long>();
    const std::string hash = cfg::config_hash(config);

    auto& dj = config.at("data");
    const int input_size = dj.at("input_size").get<int>();
    const int delta_lo = dj.at("delta")[0].get<int>(), delta_hi = dj.at("delta")[1].get<int>();
    auto records = data::load_manifest(dj.at("manifest").get<std::string>());

    PipelineConfig pc = make_pipeline_config(config.at("model"), config.at("codec"),
                                             config.at("reconstructor"), input_size);
    Rng root((uint64_t)seed);
    Rng init_rng = root.child(1);
    Pipeline p(init_rng, pc);
    p.set_training(true);

    PretrainResult result;
    result.codec_psnr = 99.0;
    auto& cj = config.at("codec");
    if (!p.codec.is_identity()) {
        // pre-fit the codec on corpus frames, then freeze it
        Rng fit_rng = root.child(2);
        std::vector<Image> train_frames, holdout_frames;
        Rng pick = root.child(21);
        for (auto& rec : records) {
            int t = pick.uniform_int(0, rec.n_frames - 1);
            Image f = rec.load_frame(t, input_size);
            if (holdout_frames.size() < std::max<size_t>(8, records.size() / 10) &&
                pick.uniform() < 0.1)
                holdout_frames.push_back(std::move(f));
            else
                train_frames.push_back(std::move(f));
        }
        if (holdout_frames.empty() && !train_frames.empty()) {
            holdout_frames.push_back(train_frames.back());
            train_frames.pop_back();
        }
        result.codec_psnr =
            p.codec.fit(train_frames, holdout_frames, cj.at("fit_steps").get<int>(),
                        cj.at("fit_batch").get<int>(), cj.at("fit_lr").get<double>(), fit_rng);
        double target = cj.at("psnr_target").get<double>();
        if (result.codec_psnr < target)
            std::fprintf(stderr, "warning: codec held-out PSNR %.2f dB below target %.2f dB\n",
                         result.codec_psnr, target);
    }

    auto& oj = config.at("optim");
    const double lr0 = oj.at("lr").get<double>();
    const int batch = oj.at("batch").get<int>();
    auto& sj = config.at("schedule");
    const int epochs = sj.at("epochs").get<int>();
    int steps_per_epoch = sj.at("steps_per_epoch").get<int>();
    if (steps_per_epoch <= 0) steps_per_epoch = ((int)records.size() + batch - 1) / batch;
    const double final_ratio = sj.at("lr_final_ratio").get<double>();
    const int log_every = config.at("log_every").get<int>();
    const int ckpt_every = config.at("ckpt_every").get<int>();

    // codec stays frozen: only the encoders, fusion, and reconstructor train
    nn::ParamMap trainable;
    trainable.merge("net", p.net.parameters());
    trainable.merge("recon", p.recon.parameters());
    nn::AdamW opt(trainable, lr0, oj.at("weight_decay").get<double>());

    Rng data_rng = root.child(3);
    Rng tau_rng = root.child(4);
    PretrainStepSettings settings = step_settings_from(config);

    const std::string ckpt_path = out_dir + "/last.ckpt";
    result.checkpoint_path = ckpt_path;
    result.log_path = out_dir + "/train_log.jsonl";

    int start_epoch = 0;
    long long gstep = 0;
    bool resuming = config.at("resume").get<bool>() && fs::exists(ckpt_path);
    if (resuming) {
        ckpt::Archive a = ckpt::load_archive(ckpt_path);
        ckpt::load_params(a, "pipeline", p.all_params());
        ckpt::load_adamw(a, "opt", opt);
        start_epoch = a.meta.at("epoch").get<int>();
        gstep = a.meta.at("step").get<long long>();
        data_rng.set_raw_state(std::stoull(a.meta.at("rng_data").get<std::string>()));
        tau_rng.set_raw_state(std::stoull(a.meta.at("rng_tau").get<std::string>()));
    }

    std::ofstream log(result.log_path, resuming ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write " + result.log_path);
    if (!resuming) {
        json header{{"lr", lr0},
                    {"batch", batch},
                    {"epochs", epochs},
                    {"steps_per_epoch", steps_per_epoch}};
        log << header.dump() << "\n";
    }

    auto save_state = [&](int completed_epochs) {
        json meta{{"stage", "pretrain"},    {"epoch", completed_epochs},
                  {"seed", seed},           {"config_hash", hash},
                  {"step", gstep},          {"codec_psnr", result.codec_psnr},
                  {"rng_data", std::to_string(data_rng.raw_state())},
                  {"rng_tau", std::to_string(tau_rng.raw_state())}};
        ckpt::Archive a;
        a.meta = meta;
        a.meta["pipeline"] = pipeline_config_to_json(p.cfg);
        a.meta["codec_fitted"] = p.codec.fitted;
        ckpt::put_params(a, "pipeline", p.all_params());
        ckpt::put_adamw(a, "opt", opt);
        ckpt::save_archive(ckpt_path, a);
    };

    std::vector<int> order(records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = (int)i;
    std::vector<double> lrec_trace;

    for (int epoch = start_epoch; epoch < epochs; ++epoch) {
        opt.lr = lr_at_epoch(lr0, epoch, epochs, final_ratio);
        // shuffle from identity so a resumed run reproduces the same permutation
        for (size_t i = 0; i < order.size(); ++i) order[i] = (int)i;
        data_rng.shuffle(order);
        size_t cursor = 0;
        for (int step = 0; step < steps_per_epoch; ++step) {
            Batch b = sample_pretrain_batch(records, order, cursor, batch, input_size, delta_lo,
                                            delta_hi, data_rng);
            losses::LossValue lv = pretrain_losses(p, b, settings, tau_rng);
            opt.zero_grad();
            lv.value.backward();
            opt.step();
            ++gstep;
            lrec_trace.push_back(lv.components.at("l_rec"));
            if (gstep % log_every == 0) {
                json line{{"step", gstep},
                          {"l1", lv.components.at("l1")},
                          {"l2", lv.components.at("l2")},
                          {"l3", lv.components.at("l3")},
                          {"l_rec", lv.components.at("l_rec")},
                          {"l_pre", lv.components.at("l_pre")}};
                log << line.dump() << "\n";
            }
        }
        if (ckpt_every > 0 && (epoch + 1) % ckpt_every == 0 && epoch + 1 < epochs)
            save_state(epoch + 1);
    }
    log.flush();
    save_state(epochs);

    result.lrec_first_ma = moving_average(lrec_trace, 0, 10);
    result.lrec_last_ma =
        lrec_trace.size() <= 10 ? result.lrec_first_ma
                                : moving_average(lrec_trace, lrec_trace.size() - 10, 10);

    json run_meta{{"config", config},
                  {"config_hash", hash},
                  {"codec_psnr", result.codec_psnr},
                  {"lrec_first_ma", result.lrec_first_ma},
                  {"lrec_last_ma", result.lrec_last_ma}};
    cfg::write_json_file(out_dir + "/run_meta.json", run_meta);
    return result;
}

}  // namespace ma2mi::train
