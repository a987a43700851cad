#pragma once

#include "ma2mi/data.hpp"
#include "ma2mi/image.hpp"
#include "ma2mi/rng.hpp"

#include <array>
#include <cstdio>
#include <string>
#include <vector>

namespace ma2mi::synth {

// Movable face-schematic part: an anisotropic gaussian bump.
struct Region {
    std::string name;
    double cx, cy;          // rest center, pixels
    double sigma_x, sigma_y;
    std::array<double, 3> color;
};

// Static appearance is a pure function of subject_id.
struct SceneSpec {
    std::string subject_id;
    int image_size = 64;
    std::vector<Region> regions;
    Image background;  // everything that never moves

    double margin() const;  // min distance from any region to the border, minus 4 sigma
};

SceneSpec make_scene(const std::string& subject_id, int image_size);

struct MotionScript {
    std::string region;
    double dir_x = 0, dir_y = -1;  // unit vector
    double amplitude_px = 1.0;
    int frames = 24;
    int onset = 6, apex = 12, offset = 18;
    int class_id = 0;

    double displacement(int t) const;  // 0 at frame 0 and frames-1, peak 1*amp at apex
};

// fixed (region, direction) table defining class semantics; index = class_id
struct MotionClass {
    std::string region;
    double dir_x, dir_y;
};
const std::vector<MotionClass>& motion_classes();

MotionScript make_motion(int class_id, double amplitude_px, int frames);

std::vector<Image> render_clip(const SceneSpec& scene, const MotionScript& motion,
                               double noise_level, Rng& rng);

// renders frames to frame_dir and returns the manifest record
data::ClipRecord generate_clip(const SceneSpec& scene, const MotionScript& motion,
                               double noise_level, Rng& rng, const std::string& clip_id,
                               const std::string& frame_dir, bool labeled);

struct CorpusConfig {
    int subjects_pretrain = 10;
    int subjects_finetune = 10;
    int clips_per_subject = 20;
    int classes = 5;
    double amplitude_macro_lo = 8.0, amplitude_macro_hi = 13.0;
    double amplitude_micro_lo = 1.0, amplitude_micro_hi = 3.0;
    double noise = 0.0;
    int frames = 24;
    int image_size = 64;
    long long seed = 0;
};

struct CorpusPaths {
    std::string pretrain_manifest, finetune_manifest;
};

CorpusPaths generate_corpus(const CorpusConfig& cfg, const std::string& out_dir);

// pixel-region bounding box (includes blob extent and scripted displacement)
struct Box {
    int x0, y0, x1, y1;  // inclusive
};
Box region_box(const SceneSpec& scene, const MotionScript& motion);

// corpus-validation oracle: nearest-centroid on |apex - onset| difference images,
// centroids fit excluding the test clip's subject
double nearest_centroid_accuracy(const std::vector<data::ClipRecord>& records, int num_classes);

}  // namespace ma2mi::synth
