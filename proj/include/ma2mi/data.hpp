#pragma once

#include "ma2mi/image.hpp"
#include "ma2mi/rng.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ma2mi::data {

// One video clip: frames live on disk as zero-padded %06d.png under frame_dir.
struct ClipRecord {
    std::string clip_id;
    std::string subject_id;
    std::string frame_dir;  // resolved to an absolute/manifest-relative path at load
    double fps = 30.0;
    int n_frames = 0;
    std::optional<int> onset, apex, offset;
    std::optional<int> label;

    std::string frame_path(int idx) const;
    Image load_frame(int idx, int target_size = 0) const;  // 0 = native size
};

struct FramePair {
    Image frame_a, frame_b;
    int delta = 1;
    bool degenerate = false;  // onset == apex annotations
};

enum class Protocol { LOSO, KFOLD };

struct Fold {
    std::vector<std::string> train, test;  // clip_ids
};

struct SplitPlan {
    Protocol protocol = Protocol::LOSO;
    long long seed = 0;
    std::vector<Fold> folds;
};

std::vector<ClipRecord> load_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ClipRecord>& records);

// (t, t+delta) indices with delta uniform on [a,b] and t uniform over legal starts
struct PairIndices {
    int t = 0, delta = 1;
};
PairIndices sample_pair_indices(int n_frames, int delta_lo, int delta_hi, Rng& rng);
FramePair sample_frame_pair(const ClipRecord& clip, int delta_lo, int delta_hi, Rng& rng,
                            int target_size = 0);
FramePair keyframe_pair(const ClipRecord& clip, int target_size = 0);

SplitPlan make_splits(const std::vector<ClipRecord>& records, Protocol protocol, int k,
                      long long seed);
void validate_split(const SplitPlan& plan, const std::vector<ClipRecord>& records);

std::string split_to_json(const SplitPlan& plan);
SplitPlan split_from_json(const std::string& text);
void write_split(const std::string& path, const SplitPlan& plan);
SplitPlan load_split(const std::string& path);

}  // namespace ma2mi::data
