#include "ma2mi/config.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ma2mi::cfg {

namespace {

json model_defaults() {
    return json{{"preset", "tiny"},
                {"base_width", 16},
                {"fusion", "pool_sum"},
                {"cond_dim", 256},
                {"position_branch", true},
                {"norm_mean", {0.5, 0.5, 0.5}},
                {"norm_std", {0.5, 0.5, 0.5}}};
}

json finetune_core_defaults() {
    return json{
        {"strategy",
         {{"tune_position_encoder", true},
          {"tune_action_encoder", true},
          {"keep_reconstruction_task", false},
          {"w_rec", 1.0}}},
        {"num_classes", 5},
        {"augment",
         {{"flip_prob", 0.5},
          {"crop_prob", 0.5},
          {"crop_pad", 4},
          {"rot_prob", 0.5},
          {"rot_max_deg", 10.0}}},
        {"optim", {{"lr", 4e-4}, {"weight_decay", 0.1}, {"batch", 16}}},
        {"schedule", {{"epochs", 80}, {"steps_per_epoch", 0}, {"lr_final_ratio", 0.01}}}};
}

}  // namespace

json default_config(const std::string& command) {
    if (command == "synth-gen") {
        return json{{"corpus",
                     {{"subjects_pretrain", 10},
                      {"subjects_finetune", 10},
                      {"clips_per_subject", 20},
                      {"classes", 5},
                      {"amplitude_macro", {8.0, 13.0}},
                      {"amplitude_micro", {1.0, 3.0}},
                      {"noise", 0.0},
                      {"frames", 24},
                      {"image_size", 64}}},
                    {"seed", 0},
                    {"out", "corpus"}};
    }
    if (command == "pretrain") {
        return json{
            {"data",
             {{"manifest", ""}, {"input_size", 64}, {"delta", {3, 8}}, {"augment", false}}},
            {"model", model_defaults()},
            {"codec",
             {{"kind", "identity"},
              {"downsample", 4},
              {"latent_channels", 8},
              {"base_width", 16},
              {"fit_steps", 300},
              {"fit_batch", 8},
              {"fit_lr", 1e-3},
              {"psnr_target", 30.0}}},
            {"reconstructor", {{"patch", 8}, {"dim", 64}, {"layers", 2}, {"mlp_ratio", 4}}},
            {"losses",
             {{"w_rec", 1.0},
              {"w_pos", 1.0},
              {"normalized_rec", true},
              {"stop_position_grad", true},
              {"tau",
               {{"flip", true},
                {"translate", true},
                {"max_translate_cells", 1},
                {"rotate", true},
                {"max_degrees", 15.0}}}}},
            {"optim", {{"lr", 4e-4}, {"weight_decay", 0.1}, {"batch", 32}}},
            {"schedule", {{"epochs", 80}, {"steps_per_epoch", 0}, {"lr_final_ratio", 0.01}}},
            {"log_every", 1},
            {"ckpt_every", 0},
            {"resume", false},
            {"seed", 0},
            {"out", "runs/pretrain"}};
    }
    if (command == "finetune") {
        json j = finetune_core_defaults();
        j["data"] = json{{"manifest", ""}, {"input_size", 64}};
        j["model"] = model_defaults();
        j["init"] = json{{"checkpoint", ""}};
        j["log_every"] = 1;
        j["seed"] = 0;
        j["out"] = "runs/finetune";
        return j;
    }
    if (command == "eval") {
        return json{{"data", {{"manifest", ""}, {"input_size", 64}}},
                    {"model", model_defaults()},
                    {"protocol", {{"name", "loso"}, {"k", 5}}},
                    {"init", {{"checkpoint", ""}}},
                    {"finetune", finetune_core_defaults()},
                    {"seed", 0},
                    {"out", "runs/eval"}};
    }
    if (command == "compare") {
        return json{{"report_a", ""}, {"report_b", ""}, {"seed", 0}, {"out", ""}};
    }
    if (command == "viz-recon") {
        return json{{"checkpoint", ""},
                    {"manifest", ""},
                    {"clip_id", ""},
                    {"t", 0},
                    {"delta", 4},
                    {"use_keyframes", false},
                    {"box", json::array()},  // [x0,y0,x1,y1] pixel box for the energy ratio
                    {"seed", 0},
                    {"out", "recon.png"}};
    }
    if (command == "viz-cam") {
        return json{{"checkpoint", ""},
                    {"manifest", ""},
                    {"clip_id", ""},
                    {"target_class", -1},  // -1 = predicted class
                    {"seed", 0},
                    {"out", "cam.png"}};
    }
    throw std::invalid_argument("default_config: unknown command " + command);
}

json load_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file: " + path);
    json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("bad JSON in " + path + ": " + e.what());
    }
    return j;
}

void write_json_file(const std::string& path, const json& j, int indent) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << j.dump(indent) << "\n";
}

namespace {

void collect_keys(const json& j, const std::string& prefix, std::vector<std::string>& out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it->is_object())
            collect_keys(*it, key, out);
        else
            out.push_back(key);
    }
}

[[noreturn]] void unknown_key(const json& schema, const std::string& key) {
    std::vector<std::string> keys;
    collect_keys(schema, "", keys);
    std::ostringstream msg;
    msg << "unknown config key '" << key << "'; valid keys:";
    for (auto& k : keys) msg << "\n  " << k;
    throw std::invalid_argument(msg.str());
}

bool type_compatible(const json& a, const json& b) {
    if (a.is_number() && b.is_number()) return true;
    if (a.is_array() && b.is_array()) return true;
    return a.type() == b.type();
}

}  // namespace

void merge_config(json& base, const json& user, const std::string& prefix) {
    if (!user.is_object())
        throw std::invalid_argument("config must be a JSON object at '" + prefix + "'");
    for (auto it = user.begin(); it != user.end(); ++it) {
        std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) unknown_key(base, key);
        json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_config(slot, *it, key);
        } else {
            if (!type_compatible(slot, *it))
                throw std::invalid_argument("config key '" + key + "' expects " +
                                            std::string(slot.type_name()) + ", got " +
                                            std::string(it->type_name()));
            slot = *it;
        }
    }
}

void apply_override(json& config, const std::string& dotted_assignment) {
    auto eq = dotted_assignment.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("override must look like key.path=value: " +
                                    dotted_assignment);
    std::string path = dotted_assignment.substr(0, eq);
    std::string value = dotted_assignment.substr(eq + 1);

    json* slot = &config;
    std::string walked;
    size_t pos = 0;
    while (true) {
        size_t dot = path.find('.', pos);
        std::string part = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
        walked = walked.empty() ? part : walked + "." + part;
        if (!slot->is_object() || !slot->contains(part)) unknown_key(config, path);
        slot = &(*slot)[part];
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    if (slot->is_object()) unknown_key(config, path);

    // parse the value against the schema type at this key
    try {
        if (slot->is_string()) {
            *slot = value;
        } else if (slot->is_boolean()) {
            if (value == "true" || value == "1")
                *slot = true;
            else if (value == "false" || value == "0")
                *slot = false;
            else
                throw std::invalid_argument("expected bool");
        } else if (slot->is_number_integer()) {
            *slot = (long long)std::stoll(value);
        } else if (slot->is_number()) {
            *slot = std::stod(value);
        } else if (slot->is_array()) {
            *slot = json::parse(value);
            if (!slot->is_array()) throw std::invalid_argument("expected array");
        } else {
            *slot = json::parse(value);
        }
    } catch (const std::exception& e) {
        throw std::invalid_argument("bad value for '" + path + "': " + value + " (" + e.what() +
                                    ")");
    }
}

std::vector<std::string> describe_keys(const json& config, const std::string& prefix) {
    std::vector<std::string> out;
    for (auto it = config.begin(); it != config.end(); ++it) {
        std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it->is_object()) {
            auto sub = describe_keys(*it, key);
            out.insert(out.end(), sub.begin(), sub.end());
        } else {
            out.push_back(key + " (" + it->type_name() + ", default " + it->dump() + ")");
        }
    }
    return out;
}

json resolve_config(const std::string& command, const std::string& config_path,
                    const std::vector<std::string>& overrides) {
    json config = default_config(command);
    if (!config_path.empty()) merge_config(config, load_json_file(config_path));
    for (auto& o : overrides) apply_override(config, o);
    return config;
}

std::string config_hash(const json& config) {
    std::string s = config.dump();  // keys are stored sorted, so this is canonical
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
    return buf;
}

}  // namespace ma2mi::cfg
