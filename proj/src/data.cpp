#include "ma2mi/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;
using nlohmann::json;

namespace ma2mi::data {

std::string ClipRecord::frame_path(int idx) const {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06d.png", idx);
    return (fs::path(frame_dir) / buf).string();
}

Image ClipRecord::load_frame(int idx, int target_size) const {
    if (idx < 0 || idx >= n_frames)
        throw std::out_of_range("clip " + clip_id + ": frame index " + std::to_string(idx) +
                                " out of range");
    Image img = load_png(frame_path(idx));
    if (target_size > 0) img = resize(img, target_size, target_size);
    return img;
}

static int count_frames(const std::string& dir) {
    int n = 0;
    while (true) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%06d.png", n);
        if (!fs::exists(fs::path(dir) / buf)) break;
        ++n;
    }
    return n;
}

std::vector<ClipRecord> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_manifest: cannot open " + path);
    fs::path base = fs::path(path).parent_path();
    std::vector<ClipRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("load_manifest: parse error at line " +
                                     std::to_string(line_no) + ": " + e.what());
        }
        ClipRecord r;
        try {
            r.clip_id = j.at("clip_id").get<std::string>();
            r.subject_id = j.at("subject_id").get<std::string>();
            r.frame_dir = j.at("frame_dir").get<std::string>();
            r.fps = j.at("fps").get<double>();
            auto opt_int = [&](const char* key) -> std::optional<int> {
                if (!j.contains(key) || j[key].is_null()) return std::nullopt;
                return j[key].get<int>();
            };
            r.onset = opt_int("onset");
            r.apex = opt_int("apex");
            r.offset = opt_int("offset");
            r.label = opt_int("label");
        } catch (const std::exception& e) {
            throw std::runtime_error("load_manifest: malformed record at line " +
                                     std::to_string(line_no) + ": " + e.what());
        }
        if (fs::path(r.frame_dir).is_relative()) r.frame_dir = (base / r.frame_dir).string();
        if (!fs::is_directory(r.frame_dir))
            throw std::runtime_error("load_manifest: clip " + r.clip_id +
                                     ": missing frame directory " + r.frame_dir);
        r.n_frames = count_frames(r.frame_dir);
        if (r.n_frames < 2)
            throw std::runtime_error("load_manifest: clip " + r.clip_id +
                                     ": needs at least 2 frames, found " +
                                     std::to_string(r.n_frames));
        if (r.fps <= 0)
            throw std::runtime_error("load_manifest: clip " + r.clip_id + ": fps must be > 0");
        auto in_range = [&](const std::optional<int>& v) {
            return !v || (*v >= 0 && *v < r.n_frames);
        };
        if (!in_range(r.onset) || !in_range(r.apex) || !in_range(r.offset))
            throw std::runtime_error("load_manifest: clip " + r.clip_id +
                                     ": key-frame index out of range");
        if (r.onset && r.apex && *r.onset > *r.apex)
            throw std::runtime_error("load_manifest: clip " + r.clip_id +
                                     ": apex_idx < onset_idx");
        if (r.apex && r.offset && *r.apex > *r.offset)
            throw std::runtime_error("load_manifest: clip " + r.clip_id +
                                     ": offset_idx < apex_idx");
        records.push_back(std::move(r));
    }
    return records;
}

void write_manifest(const std::string& path, const std::vector<ClipRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_manifest: cannot open " + path);
    fs::path base = fs::path(path).parent_path();
    for (const auto& r : records) {
        json j;
        j["clip_id"] = r.clip_id;
        j["subject_id"] = r.subject_id;
        // store relative to the manifest when possible
        std::error_code ec;
        fs::path rel = fs::relative(r.frame_dir, base.empty() ? "." : base, ec);
        j["frame_dir"] = ec ? r.frame_dir : rel.string();
        j["fps"] = r.fps;
        j["onset"] = r.onset ? json(*r.onset) : json(nullptr);
        j["apex"] = r.apex ? json(*r.apex) : json(nullptr);
        j["offset"] = r.offset ? json(*r.offset) : json(nullptr);
        j["label"] = r.label ? json(*r.label) : json(nullptr);
        out << j.dump() << "\n";
    }
}

PairIndices sample_pair_indices(int n_frames, int delta_lo, int delta_hi, Rng& rng) {
    if (delta_lo < 1 || delta_lo > delta_hi)
        throw std::invalid_argument("sample_pair_indices: bad delta range");
    if (n_frames < delta_lo + 1)
        throw std::runtime_error("sample_pair_indices: clip too short for delta range");
    int hi = std::min(delta_hi, n_frames - 1);
    PairIndices p;
    p.delta = rng.uniform_int(delta_lo, hi);
    p.t = rng.uniform_int(0, n_frames - 1 - p.delta);
    return p;
}

FramePair sample_frame_pair(const ClipRecord& clip, int delta_lo, int delta_hi, Rng& rng,
                            int target_size) {
    if (clip.n_frames < delta_lo + 1)
        throw std::runtime_error("sample_frame_pair: clip " + clip.clip_id +
                                 " too short for delta range");
    PairIndices p = sample_pair_indices(clip.n_frames, delta_lo, delta_hi, rng);
    FramePair fp;
    fp.frame_a = clip.load_frame(p.t, target_size);
    fp.frame_b = clip.load_frame(p.t + p.delta, target_size);
    fp.delta = p.delta;
    return fp;
}

FramePair keyframe_pair(const ClipRecord& clip, int target_size) {
    if (!clip.onset || !clip.apex)
        throw std::runtime_error("keyframe_pair: clip " + clip.clip_id +
                                 " lacks onset/apex annotations");
    FramePair fp;
    fp.frame_a = clip.load_frame(*clip.onset, target_size);
    fp.frame_b = clip.load_frame(*clip.apex, target_size);
    fp.delta = *clip.apex - *clip.onset;
    fp.degenerate = (fp.delta == 0);
    return fp;
}

SplitPlan make_splits(const std::vector<ClipRecord>& records, Protocol protocol, int k,
                      long long seed) {
    std::map<std::string, std::vector<std::string>> by_subject;
    for (const auto& r : records) by_subject[r.subject_id].push_back(r.clip_id);

    SplitPlan plan;
    plan.protocol = protocol;
    plan.seed = seed;

    std::vector<std::vector<std::string>> test_groups;  // clip ids per fold
    if (protocol == Protocol::LOSO) {
        for (auto& [_, clips] : by_subject) test_groups.push_back(clips);
    } else {
        if (k < 2) throw std::invalid_argument("make_splits: KFOLD requires k >= 2");
        if ((int)by_subject.size() < k)
            throw std::runtime_error("make_splits: fewer subjects than folds");
        // greedy balance by clip count: largest subject first into the lightest fold,
        // with a seeded shuffle to break ties between equal-sized subjects
        std::vector<std::pair<std::string, int>> subjects;
        for (auto& [s, clips] : by_subject) subjects.emplace_back(s, (int)clips.size());
        Rng rng((uint64_t)seed);
        rng.shuffle(subjects);
        std::stable_sort(subjects.begin(), subjects.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        std::vector<int> load(k, 0);
        std::vector<std::vector<std::string>> groups(k);
        for (auto& [s, n] : subjects) {
            int best = 0;
            for (int i = 1; i < k; ++i)
                if (load[i] < load[best]) best = i;
            load[best] += n;
            for (auto& c : by_subject[s]) groups[best].push_back(c);
        }
        test_groups = std::move(groups);
    }

    std::set<std::string> all_ids;
    for (const auto& r : records) all_ids.insert(r.clip_id);
    for (auto& test : test_groups) {
        Fold f;
        f.test = test;
        std::set<std::string> test_set(test.begin(), test.end());
        for (const auto& id : all_ids)
            if (!test_set.count(id)) f.train.push_back(id);
        std::sort(f.test.begin(), f.test.end());
        plan.folds.push_back(std::move(f));
    }
    validate_split(plan, records);
    return plan;
}

void validate_split(const SplitPlan& plan, const std::vector<ClipRecord>& records) {
    std::map<std::string, std::string> subject_of;
    for (const auto& r : records) subject_of[r.clip_id] = r.subject_id;
    std::set<std::string> covered;
    for (const auto& f : plan.folds) {
        std::set<std::string> test_subjects, train_subjects;
        std::set<std::string> test_set(f.test.begin(), f.test.end());
        for (auto& id : f.test) {
            if (test_set.count(id) && covered.count(id))
                throw std::runtime_error("validate_split: clip " + id +
                                         " appears in multiple test folds");
            covered.insert(id);
            test_subjects.insert(subject_of.at(id));
        }
        for (auto& id : f.train) {
            if (test_set.count(id))
                throw std::runtime_error("validate_split: clip " + id +
                                         " in both train and test of a fold");
            train_subjects.insert(subject_of.at(id));
        }
        for (auto& s : test_subjects)
            if (train_subjects.count(s))
                throw std::runtime_error("validate_split: subject " + s +
                                         " leaks between train and test");
    }
    if (covered.size() != records.size())
        throw std::runtime_error("validate_split: test folds do not cover all clips");
    if (plan.protocol == Protocol::LOSO) {
        std::set<std::string> subjects;
        for (const auto& r : records) subjects.insert(r.subject_id);
        if (plan.folds.size() != subjects.size())
            throw std::runtime_error("validate_split: LOSO fold count != subject count");
    }
}

std::string split_to_json(const SplitPlan& plan) {
    json j;
    j["protocol"] = plan.protocol == Protocol::LOSO ? "LOSO" : "KFOLD";
    j["seed"] = plan.seed;
    j["folds"] = json::array();
    for (const auto& f : plan.folds)
        j["folds"].push_back({{"train", f.train}, {"test", f.test}});
    return j.dump(2);
}

SplitPlan split_from_json(const std::string& text) {
    json j = json::parse(text);
    SplitPlan plan;
    std::string p = j.at("protocol").get<std::string>();
    if (p == "LOSO")
        plan.protocol = Protocol::LOSO;
    else if (p == "KFOLD")
        plan.protocol = Protocol::KFOLD;
    else
        throw std::runtime_error("split_from_json: unknown protocol " + p);
    plan.seed = j.at("seed").get<long long>();
    for (const auto& jf : j.at("folds")) {
        Fold f;
        f.train = jf.at("train").get<std::vector<std::string>>();
        f.test = jf.at("test").get<std::vector<std::string>>();
        plan.folds.push_back(std::move(f));
    }
    return plan;
}

void write_split(const std::string& path, const SplitPlan& plan) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_split: cannot open " + path);
    out << split_to_json(plan) << "\n";
}

SplitPlan load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_split: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return split_from_json(ss.str());
}

}  // namespace ma2mi::data
