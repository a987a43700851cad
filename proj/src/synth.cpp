#include "ma2mi/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <stdexcept>

namespace fs = std::filesystem;

namespace ma2mi::synth {

namespace {

uint64_t hash_str(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void splat(Image& img, double cx, double cy, double sx, double sy,
           const std::array<double, 3>& color, double gain = 1.0) {
    int x0 = std::max(0, (int)std::floor(cx - 4 * sx));
    int x1 = std::min(img.w - 1, (int)std::ceil(cx + 4 * sx));
    int y0 = std::max(0, (int)std::floor(cy - 4 * sy));
    int y1 = std::min(img.h - 1, (int)std::ceil(cy + 4 * sy));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            double dx = (x - cx) / sx, dy = (y - cy) / sy;
            double g = gain * std::exp(-0.5 * (dx * dx + dy * dy));
            for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) += g * color[ch];
        }
}

}  // namespace

double SceneSpec::margin() const {
    double m = 1e18;
    for (const auto& r : regions) {
        double pad = 4.0 * std::max(r.sigma_x, r.sigma_y);
        m = std::min({m, r.cx - pad, r.cy - pad, image_size - 1 - r.cx - pad,
                      image_size - 1 - r.cy - pad});
    }
    return m;
}

SceneSpec make_scene(const std::string& subject_id, int image_size) {
    Rng rng(hash_str(subject_id));
    double s = image_size / 64.0;
    SceneSpec scene;
    scene.subject_id = subject_id;
    scene.image_size = image_size;

    // background: per-subject gradient plus a soft face disc and a few fixed blobs
    Image bg(image_size, image_size, 3);
    double gx = rng.uniform(-0.15, 0.15), gy = rng.uniform(-0.15, 0.15);
    std::array<double, 3> base = {rng.uniform(0.15, 0.3), rng.uniform(0.15, 0.3),
                                  rng.uniform(0.15, 0.3)};
    for (int y = 0; y < image_size; ++y)
        for (int x = 0; x < image_size; ++x)
            for (int ch = 0; ch < 3; ++ch)
                bg.at(y, x, ch) = base[ch] + gx * (x / (double)image_size) +
                                  gy * (y / (double)image_size);
    // face disc
    double fc = rng.uniform(0.25, 0.4);
    double face_sx = 22 * s, face_sy = 26 * s;
    splat(bg, image_size * 0.5, image_size * 0.52, face_sx, face_sy, {fc, fc * 0.95, fc * 0.9});
    // background texture blobs (off-face corners)
    for (int k = 0; k < 4; ++k) {
        double bx = rng.uniform(0.0, image_size - 1.0);
        double by = rng.uniform(0.0, 1.0) < 0.5 ? rng.uniform(0, image_size * 0.12)
                                                : rng.uniform(image_size * 0.88, image_size - 1.0);
        std::array<double, 3> c = {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1),
                                   rng.uniform(-0.1, 0.1)};
        splat(bg, bx, by, 5 * s, 5 * s, c);
    }
    for (auto& v : bg.px) v = std::clamp(v, 0.0, 0.8);
    scene.background = bg;

    auto jit = [&]() { return rng.uniform(-1.5, 1.5) * s; };
    auto col = [&](double r, double g, double b) -> std::array<double, 3> {
        double j = rng.uniform(0.85, 1.15);
        return {std::min(1.0, r * j), std::min(1.0, g * j), std::min(1.0, b * j)};
    };
    int is = image_size;
    // rows leave >= 13px*s of vertical travel for every scripted direction
    scene.regions = {
        {"left-brow", is * 0.34 + jit(), is * 0.34 + jit(), 4.0 * s, 1.5 * s, col(0.5, 0.35, 0.2)},
        {"right-brow", is * 0.66 + jit(), is * 0.34 + jit(), 4.0 * s, 1.5 * s, col(0.5, 0.35, 0.2)},
        {"eyes", is * 0.50 + jit(), is * 0.46 + jit(), 7.0 * s, 1.8 * s, col(0.2, 0.3, 0.55)},
        {"left-mouth", is * 0.38 + jit(), is * 0.64 + jit(), 3.5 * s, 1.6 * s, col(0.6, 0.2, 0.25)},
        {"right-mouth", is * 0.62 + jit(), is * 0.64 + jit(), 3.5 * s, 1.6 * s, col(0.6, 0.2, 0.25)},
    };
    return scene;
}

double MotionScript::displacement(int t) const {
    if (t <= onset || t >= offset) return 0.0;
    if (t <= apex)
        return amplitude_px * 0.5 * (1.0 - std::cos(M_PI * (t - onset) / (double)(apex - onset)));
    return amplitude_px * 0.5 * (1.0 - std::cos(M_PI * (offset - t) / (double)(offset - apex)));
}

const std::vector<MotionClass>& motion_classes() {
    static const std::vector<MotionClass> table = {
        {"left-brow", 0, -1},  {"right-brow", 0, -1}, {"left-mouth", 0, 1},
        {"right-mouth", 0, 1}, {"eyes", 0, 1},        {"left-brow", 0, 1},
        {"right-brow", 0, 1},  {"left-mouth", 0, -1}, {"right-mouth", 0, -1},
        {"eyes", 0, -1},
    };
    return table;
}

MotionScript make_motion(int class_id, double amplitude_px, int frames) {
    const auto& table = motion_classes();
    if (class_id < 0 || class_id >= (int)table.size())
        throw std::invalid_argument("make_motion: class_id out of range");
    MotionScript m;
    m.region = table[class_id].region;
    m.dir_x = table[class_id].dir_x;
    m.dir_y = table[class_id].dir_y;
    m.amplitude_px = amplitude_px;
    m.frames = frames;
    m.onset = frames / 4;
    m.apex = frames / 2;
    m.offset = (3 * frames) / 4;
    m.class_id = class_id;
    return m;
}

std::vector<Image> render_clip(const SceneSpec& scene, const MotionScript& motion,
                               double noise_level, Rng& rng) {
    // the scripted region's full extent must stay inside at peak displacement
    for (const auto& r : scene.regions) {
        if (r.name != motion.region) continue;
        double ex = r.cx + motion.amplitude_px * motion.dir_x;
        double ey = r.cy + motion.amplitude_px * motion.dir_y;
        if (ex - 4 * r.sigma_x < 0 || ex + 4 * r.sigma_x > scene.image_size - 1 ||
            ey - 4 * r.sigma_y < 0 || ey + 4 * r.sigma_y > scene.image_size - 1)
            throw std::runtime_error("render_clip: amplitude exceeds scene margin");
    }
    std::vector<Image> frames;
    frames.reserve(motion.frames);
    for (int t = 0; t < motion.frames; ++t) {
        Image f = scene.background;
        double d = motion.displacement(t);
        for (const auto& r : scene.regions) {
            double cx = r.cx, cy = r.cy;
            if (r.name == motion.region) {
                cx += d * motion.dir_x;
                cy += d * motion.dir_y;
            }
            splat(f, cx, cy, r.sigma_x, r.sigma_y, r.color);
        }
        for (auto& v : f.px) v = std::clamp(v, 0.0, 1.0);
        if (noise_level > 0) f = add_noise(f, noise_level, rng);
        frames.push_back(std::move(f));
    }
    return frames;
}

data::ClipRecord generate_clip(const SceneSpec& scene, const MotionScript& motion,
                               double noise_level, Rng& rng, const std::string& clip_id,
                               const std::string& frame_dir, bool labeled) {
    auto frames = render_clip(scene, motion, noise_level, rng);
    fs::create_directories(frame_dir);
    for (int t = 0; t < (int)frames.size(); ++t) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%06d.png", t);
        save_png((fs::path(frame_dir) / buf).string(), frames[t]);
    }
    data::ClipRecord r;
    r.clip_id = clip_id;
    r.subject_id = scene.subject_id;
    r.frame_dir = frame_dir;
    r.fps = 30.0;
    r.n_frames = (int)frames.size();
    r.onset = motion.onset;
    r.apex = motion.apex;
    r.offset = motion.offset;
    if (labeled) r.label = motion.class_id;
    return r;
}

CorpusPaths generate_corpus(const CorpusConfig& cfg, const std::string& out_dir) {
    if (cfg.classes < 1 || cfg.classes > (int)motion_classes().size())
        throw std::invalid_argument("generate_corpus: classes out of range");
    if (cfg.amplitude_macro_lo <= cfg.amplitude_micro_hi)
        throw std::invalid_argument("generate_corpus: macro/micro amplitude ranges overlap");
    fs::create_directories(out_dir);
    Rng root((uint64_t)cfg.seed);

    auto make_pool = [&](const std::string& prefix, int n_subjects, bool micro,
                         std::vector<data::ClipRecord>& out, uint64_t pool_key) {
        for (int s = 0; s < n_subjects; ++s) {
            char sid[32];
            std::snprintf(sid, sizeof(sid), "%s%02d", prefix.c_str(), s);
            SceneSpec scene = make_scene(sid, cfg.image_size);
            for (int k = 0; k < cfg.clips_per_subject; ++k) {
                int cls = (s * cfg.clips_per_subject + k) % cfg.classes;
                Rng crng = root.child(pool_key * 1000003ULL + (uint64_t)s * 1009ULL + k);
                double amp = micro ? crng.uniform(cfg.amplitude_micro_lo, cfg.amplitude_micro_hi)
                                   : crng.uniform(cfg.amplitude_macro_lo, cfg.amplitude_macro_hi);
                MotionScript m = make_motion(cls, amp, cfg.frames);
                char cid[64];
                std::snprintf(cid, sizeof(cid), "%s_c%03d", sid, k);
                std::string dir = (fs::path(out_dir) / (micro ? "micro" : "macro") / cid).string();
                out.push_back(generate_clip(scene, m, cfg.noise, crng, cid, dir, micro));
            }
        }
    };

    std::vector<data::ClipRecord> pre, fin;
    make_pool("pre", cfg.subjects_pretrain, false, pre, 1);
    make_pool("fin", cfg.subjects_finetune, true, fin, 2);

    CorpusPaths paths;
    paths.pretrain_manifest = (fs::path(out_dir) / "pretrain.jsonl").string();
    paths.finetune_manifest = (fs::path(out_dir) / "finetune.jsonl").string();
    data::write_manifest(paths.pretrain_manifest, pre);
    data::write_manifest(paths.finetune_manifest, fin);
    return paths;
}

Box region_box(const SceneSpec& scene, const MotionScript& motion) {
    for (const auto& r : scene.regions)
        if (r.name == motion.region) {
            double pad_x = 4 * r.sigma_x + motion.amplitude_px * std::fabs(motion.dir_x);
            double pad_y = 4 * r.sigma_y + motion.amplitude_px * std::fabs(motion.dir_y);
            Box b;
            b.x0 = std::max(0, (int)std::floor(r.cx - pad_x));
            b.x1 = std::min(scene.image_size - 1, (int)std::ceil(r.cx + pad_x));
            b.y0 = std::max(0, (int)std::floor(r.cy - pad_y));
            b.y1 = std::min(scene.image_size - 1, (int)std::ceil(r.cy + pad_y));
            return b;
        }
    throw std::invalid_argument("region_box: unknown region " + motion.region);
}

double nearest_centroid_accuracy(const std::vector<data::ClipRecord>& records, int num_classes) {
    struct Sample {
        std::string subject;
        int label;
        std::vector<double> diff;
    };
    std::vector<Sample> samples;
    for (const auto& r : records) {
        if (!r.label || !r.onset || !r.apex) continue;
        Image d = diff_abs(r.load_frame(*r.apex), r.load_frame(*r.onset));
        samples.push_back({r.subject_id, *r.label, d.px});
    }
    if (samples.empty()) throw std::runtime_error("nearest_centroid_accuracy: no labeled clips");
    int correct = 0;
    for (const auto& s : samples) {
        std::vector<std::vector<double>> cent(num_classes,
                                              std::vector<double>(s.diff.size(), 0.0));
        std::vector<int> count(num_classes, 0);
        for (const auto& o : samples) {
            if (o.subject == s.subject) continue;  // subject-independent fit
            for (size_t i = 0; i < o.diff.size(); ++i) cent[o.label][i] += o.diff[i];
            ++count[o.label];
        }
        int best = -1;
        double best_d = 1e300;
        for (int c = 0; c < num_classes; ++c) {
            if (!count[c]) continue;
            double d = 0;
            for (size_t i = 0; i < s.diff.size(); ++i) {
                double e = s.diff[i] - cent[c][i] / count[c];
                d += e * e;
            }
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        if (best == s.label) ++correct;
    }
    return correct / (double)samples.size();
}

}  // namespace ma2mi::synth
