#pragma once

#include "ma2mi/rng.hpp"

#include <string>
#include <vector>

namespace ma2mi {

// HWC, RGB, values in [0,1]
struct Image {
    int h = 0, w = 0, c = 3;
    std::vector<double> px;

    Image() = default;
    Image(int h_, int w_, int c_ = 3) : h(h_), w(w_), c(c_), px((size_t)h_ * w_ * c_, 0.0) {}
    double& at(int y, int x, int ch) { return px[((size_t)y * w + x) * c + ch]; }
    double at(int y, int x, int ch) const { return px[((size_t)y * w + x) * c + ch]; }
    bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }
};

Image load_png(const std::string& path);
void save_png(const std::string& path, const Image& img);  // deterministic encoder settings
Image resize(const Image& img, int h, int w);
Image flip_horizontal(const Image& img);
// rotation about the image center, bilinear, border replication
Image rotate_deg(const Image& img, double degrees);
// pad by `pad` pixels (replicated border) then crop a same-sized window at (oy,ox)
Image pad_crop(const Image& img, int pad, int oy, int ox);
Image add_noise(const Image& img, double level, Rng& rng);  // clipped to [0,1]
Image diff_abs(const Image& a, const Image& b);
double psnr(const Image& a, const Image& b);

struct AugmentSpec {
    double flip_prob = 0.0;
    double crop_prob = 0.0;
    int crop_pad = 0;  // max shift in pixels (pad-then-crop)
    double rot_prob = 0.0;
    double rot_max_deg = 0.0;
};

// One concrete draw from an AugmentSpec; applying the same params to
// both frames of a pair keeps their pixel correspondence.
struct AugmentParams {
    bool flip = false;
    int crop_oy = 0, crop_ox = 0, crop_pad = 0;
    double rot_deg = 0.0;
};

AugmentParams draw_augment(const AugmentSpec& spec, Rng& rng);
Image apply_augment(const Image& img, const AugmentParams& p);
Image augment(const Image& img, const AugmentSpec& spec, Rng& rng);

}  // namespace ma2mi
