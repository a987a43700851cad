// Command-line surface for the full pipeline:
//   synth-gen -> pretrain -> finetune -> eval -> compare, plus viz-recon / viz-cam.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include "ma2mi/config.hpp"
#include "ma2mi/data.hpp"
#include "ma2mi/evaluate.hpp"
#include "ma2mi/finetune.hpp"
#include "ma2mi/pretrain.hpp"
#include "ma2mi/synth.hpp"
#include "ma2mi/viz.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using ma2mi::cfg::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    long long seed = -1;  // -1 = keep config value
    std::string out;      // empty = keep config value
};

void add_common(CLI::App* cmd, CommonArgs& args, const std::string& command) {
    cmd->add_option("--config", args.config_path, "JSON config file");
    cmd->add_option("--set", args.overrides, "override a config key, e.g. --set optim.lr=0.0004")
        ->take_all();
    cmd->add_option("--seed", args.seed, "random seed (overrides config)");
    cmd->add_option("--out", args.out, "output path (overrides config)");
    std::string keys = "Config keys:\n";
    for (auto& k : ma2mi::cfg::describe_keys(ma2mi::cfg::default_config(command)))
        keys += "  " + k + "\n";
    cmd->footer(keys);
}

json resolve(const std::string& command, const CommonArgs& args) {
    json config = ma2mi::cfg::resolve_config(command, args.config_path, args.overrides);
    if (args.seed >= 0) config["seed"] = args.seed;
    if (!args.out.empty()) config["out"] = args.out;
    return config;
}

int run_synth_gen(const json& config) {
    ma2mi::synth::CorpusConfig cc;
    auto& cj = config.at("corpus");
    cc.subjects_pretrain = cj.at("subjects_pretrain").get<int>();
    cc.subjects_finetune = cj.at("subjects_finetune").get<int>();
    cc.clips_per_subject = cj.at("clips_per_subject").get<int>();
    cc.classes = cj.at("classes").get<int>();
    cc.amplitude_macro_lo = cj.at("amplitude_macro")[0].get<double>();
    cc.amplitude_macro_hi = cj.at("amplitude_macro")[1].get<double>();
    cc.amplitude_micro_lo = cj.at("amplitude_micro")[0].get<double>();
    cc.amplitude_micro_hi = cj.at("amplitude_micro")[1].get<double>();
    cc.noise = cj.at("noise").get<double>();
    cc.frames = cj.at("frames").get<int>();
    cc.image_size = cj.at("image_size").get<int>();
    cc.seed = config.at("seed").get<long long>();
    std::string out = config.at("out").get<std::string>();
    auto paths = ma2mi::synth::generate_corpus(cc, out);
    ma2mi::cfg::write_json_file(
        out + "/corpus_meta.json",
        json{{"config", config}, {"config_hash", ma2mi::cfg::config_hash(config)}});
    std::printf("pretrain manifest: %s\n", paths.pretrain_manifest.c_str());
    std::printf("finetune manifest: %s\n", paths.finetune_manifest.c_str());
    return 0;
}

int run_pretrain_cmd(const json& config) {
    auto r = ma2mi::train::run_pretrain(config);
    std::printf("checkpoint: %s\n", r.checkpoint_path.c_str());
    std::printf("codec psnr: %.2f dB\n", r.codec_psnr);
    std::printf("l_rec moving average: %.6f -> %.6f\n", r.lrec_first_ma, r.lrec_last_ma);
    return 0;
}

int run_finetune_cmd(const json& config) {
    auto r = ma2mi::train::run_finetune(config);
    std::printf("checkpoint: %s\n", r.checkpoint_path.c_str());
    std::printf("final train cross-entropy: %.6f\n", r.final_ce);
    return 0;
}

int run_eval_cmd(const json& config) {
    std::string out = config.at("out").get<std::string>();
    fs::create_directories(out);
    long long seed = config.at("seed").get<long long>();
    std::string hash = ma2mi::cfg::config_hash(config);
    auto records = ma2mi::data::load_manifest(config.at("data").at("manifest").get<std::string>());
    int input_size = config.at("data").at("input_size").get<int>();

    std::string pname = config.at("protocol").at("name").get<std::string>();
    ma2mi::data::Protocol proto;
    if (pname == "loso")
        proto = ma2mi::data::Protocol::LOSO;
    else if (pname == "kfold")
        proto = ma2mi::data::Protocol::KFOLD;
    else
        throw CLI::ValidationError("protocol.name must be loso or kfold, got " + pname);
    auto plan = ma2mi::data::make_splits(records, proto, config.at("protocol").at("k").get<int>(),
                                         seed);
    ma2mi::data::write_split(out + "/split.json", plan);

    auto ft = ma2mi::train::finetune_settings_from_json(config.at("finetune"), input_size);
    auto report = ma2mi::eval::run_protocol(
        records, plan, config.at("init").at("checkpoint").get<std::string>(), config.at("model"),
        ft, seed, hash, true);
    ma2mi::cfg::write_json_file(out + "/report.json", report.to_json());
    std::vector<ma2mi::eval::Prediction> all;
    for (auto& f : report.folds) all.insert(all.end(), f.preds.begin(), f.preds.end());
    ma2mi::eval::write_predictions(out + "/predictions.jsonl", all);
    std::printf("accuracy: %.4f\nuf1: %.4f\nreport: %s/report.json\n", report.pooled_accuracy,
                report.pooled_uf1, out.c_str());
    return 0;
}

int run_compare_cmd(const json& config) {
    json a = ma2mi::cfg::load_json_file(config.at("report_a").get<std::string>());
    json b = ma2mi::cfg::load_json_file(config.at("report_b").get<std::string>());
    json delta = ma2mi::eval::compare_runs(a, b);
    std::fputs(ma2mi::eval::format_compare(delta).c_str(), stdout);
    std::string out = config.at("out").get<std::string>();
    if (!out.empty()) ma2mi::cfg::write_json_file(out, delta);
    return 0;
}

ma2mi::data::ClipRecord find_clip(const std::vector<ma2mi::data::ClipRecord>& records,
                                  const std::string& clip_id) {
    if (clip_id.empty()) return records.at(0);
    for (auto& r : records)
        if (r.clip_id == clip_id) return r;
    throw std::runtime_error("no clip named " + clip_id + " in manifest");
}

int run_viz_recon(const json& config) {
    ma2mi::train::Pipeline p =
        ma2mi::train::load_pipeline(config.at("checkpoint").get<std::string>());
    auto records = ma2mi::data::load_manifest(config.at("manifest").get<std::string>());
    auto rec = find_clip(records, config.at("clip_id").get<std::string>());
    int size = p.cfg.net.encoder.input_size;
    ma2mi::data::FramePair pair;
    if (config.at("use_keyframes").get<bool>()) {
        pair = ma2mi::data::keyframe_pair(rec, size);
    } else {
        int t = config.at("t").get<int>();
        int delta = config.at("delta").get<int>();
        if (t + delta >= rec.n_frames)
            throw std::runtime_error("t + delta beyond clip " + rec.clip_id);
        pair.frame_a = rec.load_frame(t, size);
        pair.frame_b = rec.load_frame(t + delta, size);
        pair.delta = delta;
    }
    auto r = ma2mi::viz::viz_recon(p, pair);
    ma2mi::save_png(config.at("out").get<std::string>(), r.grid);
    auto& box = config.at("box");
    if (box.is_array() && box.size() == 4) {
        double ratio = ma2mi::viz::box_energy_ratio(r.diff, box[0].get<int>(), box[1].get<int>(),
                                                    box[2].get<int>(), box[3].get<int>());
        std::printf("in-box energy ratio: %.4f\n", ratio);
    }
    std::printf("grid: %s\n", config.at("out").get<std::string>().c_str());
    return 0;
}

int run_viz_cam(const json& config) {
    ma2mi::train::Pipeline p =
        ma2mi::train::load_pipeline(config.at("checkpoint").get<std::string>());
    auto records = ma2mi::data::load_manifest(config.at("manifest").get<std::string>());
    auto rec = find_clip(records, config.at("clip_id").get<std::string>());
    int size = p.cfg.net.encoder.input_size;
    auto pair = ma2mi::data::keyframe_pair(rec, size);
    auto r = ma2mi::viz::viz_cam(p, pair, config.at("target_class").get<int>());
    ma2mi::save_png(config.at("out").get<std::string>(), r.overlay);
    std::printf("argmax cell: (%d,%d)%s\noverlay: %s\n", r.argmax_y, r.argmax_x,
                r.degenerate ? " [degenerate map]" : "",
                config.at("out").get<std::string>().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MA2MI: macro-to-micro transfer for micro-expression recognition"};
    app.require_subcommand(1);

    struct Cmd {
        const char* name;
        const char* help;
        int (*run)(const json&);
    };
    const Cmd cmds[] = {
        {"synth-gen", "generate the synthetic face-schematic corpus", run_synth_gen},
        {"pretrain", "self-supervised pre-training on unlabeled macro clips", run_pretrain_cmd},
        {"finetune", "fine-tune on labeled onset/apex pairs", run_finetune_cmd},
        {"eval", "cross-validated evaluation (LOSO / k-fold)", run_eval_cmd},
        {"compare", "metric deltas between two eval reports", run_compare_cmd},
        {"viz-recon", "reconstruction grid for one frame pair", run_viz_recon},
        {"viz-cam", "class-activation heat map for one clip", run_viz_cam},
    };

    std::vector<CommonArgs> args(std::size(cmds));
    std::vector<CLI::App*> subs;
    for (size_t i = 0; i < std::size(cmds); ++i) {
        CLI::App* sub = app.add_subcommand(cmds[i].name, cmds[i].help);
        add_common(sub, args[i], cmds[i].name);
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    for (size_t i = 0; i < std::size(cmds); ++i) {
        if (!subs[i]->parsed()) continue;
        json config;
        try {
            config = resolve(cmds[i].name, args[i]);
        } catch (const std::exception& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return 1;  // bad config file / unknown key = usage error
        }
        try {
            return cmds[i].run(config);
        } catch (const CLI::ValidationError& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return 1;
        } catch (const std::exception& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return 2;
        }
    }
    return 1;
}
