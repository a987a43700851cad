#include "ma2mi/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ma2mi {

namespace {

cv::Mat to_mat8(const Image& img) {
    cv::Mat m(img.h, img.w, CV_8UC3);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            // OpenCV is BGR
            auto clamp8 = [](double v) {
                return (uchar)std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
            };
            m.at<cv::Vec3b>(y, x) = {clamp8(img.at(y, x, 2)), clamp8(img.at(y, x, 1)),
                                     clamp8(img.at(y, x, 0))};
        }
    return m;
}

Image from_mat8(const cv::Mat& m) {
    Image img(m.rows, m.cols, 3);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) {
            auto v = m.at<cv::Vec3b>(y, x);
            img.at(y, x, 0) = v[2] / 255.0;
            img.at(y, x, 1) = v[1] / 255.0;
            img.at(y, x, 2) = v[0] / 255.0;
        }
    return img;
}

cv::Mat to_mat64(const Image& img) {
    cv::Mat m(img.h, img.w, CV_64FC3);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            m.at<cv::Vec3d>(y, x) = {img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)};
    return m;
}

Image from_mat64(const cv::Mat& m) {
    Image img(m.rows, m.cols, 3);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) {
            auto v = m.at<cv::Vec3d>(y, x);
            img.at(y, x, 0) = v[0];
            img.at(y, x, 1) = v[1];
            img.at(y, x, 2) = v[2];
        }
    return img;
}

}  // namespace

Image load_png(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
    if (m.empty()) throw std::runtime_error("load_png: cannot read " + path);
    return from_mat8(m);
}

void save_png(const std::string& path, const Image& img) {
    std::vector<int> params = {cv::IMWRITE_PNG_COMPRESSION, 6,
                               cv::IMWRITE_PNG_STRATEGY, cv::IMWRITE_PNG_STRATEGY_DEFAULT};
    if (!cv::imwrite(path, to_mat8(img), params))
        throw std::runtime_error("save_png: cannot write " + path);
}

Image resize(const Image& img, int h, int w) {
    if (img.h == h && img.w == w) return img;
    cv::Mat out;
    cv::resize(to_mat64(img), out, cv::Size(w, h), 0, 0, cv::INTER_AREA);
    return from_mat64(out);
}

Image flip_horizontal(const Image& img) {
    Image out(img.h, img.w, img.c);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = img.at(y, img.w - 1 - x, ch);
    return out;
}

Image rotate_deg(const Image& img, double degrees) {
    if (degrees == 0.0) return img;
    cv::Mat src = to_mat64(img);
    cv::Mat rot = cv::getRotationMatrix2D(
        cv::Point2f((img.w - 1) / 2.0f, (img.h - 1) / 2.0f), degrees, 1.0);
    cv::Mat out;
    cv::warpAffine(src, out, rot, src.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
    return from_mat64(out);
}

Image pad_crop(const Image& img, int pad, int oy, int ox) {
    if (pad == 0) return img;
    Image out(img.h, img.w, img.c);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            int sy = std::clamp(y + oy - pad, 0, img.h - 1);
            int sx = std::clamp(x + ox - pad, 0, img.w - 1);
            for (int ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = img.at(sy, sx, ch);
        }
    return out;
}

Image add_noise(const Image& img, double level, Rng& rng) {
    if (level <= 0.0) return img;
    Image out = img;
    for (auto& v : out.px) v = std::clamp(v + level * rng.normal(), 0.0, 1.0);
    return out;
}

Image diff_abs(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("diff_abs: shape mismatch");
    Image out(a.h, a.w, a.c);
    for (size_t i = 0; i < a.px.size(); ++i) out.px[i] = std::fabs(a.px[i] - b.px[i]);
    return out;
}

double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
    double mse = 0;
    for (size_t i = 0; i < a.px.size(); ++i) mse += (a.px[i] - b.px[i]) * (a.px[i] - b.px[i]);
    mse /= (double)a.px.size();
    if (mse <= 0) return 99.0;
    return 10.0 * std::log10(1.0 / mse);
}

AugmentParams draw_augment(const AugmentSpec& spec, Rng& rng) {
    AugmentParams p;
    if (spec.flip_prob > 0 && rng.uniform() < spec.flip_prob) p.flip = true;
    if (spec.crop_prob > 0 && spec.crop_pad > 0 && rng.uniform() < spec.crop_prob) {
        p.crop_pad = spec.crop_pad;
        p.crop_oy = rng.uniform_int(0, 2 * spec.crop_pad);
        p.crop_ox = rng.uniform_int(0, 2 * spec.crop_pad);
    }
    if (spec.rot_prob > 0 && spec.rot_max_deg > 0 && rng.uniform() < spec.rot_prob)
        p.rot_deg = rng.uniform(-spec.rot_max_deg, spec.rot_max_deg);
    return p;
}

Image apply_augment(const Image& img, const AugmentParams& p) {
    Image out = img;
    if (p.flip) out = flip_horizontal(out);
    if (p.crop_pad > 0) out = pad_crop(out, p.crop_pad, p.crop_oy, p.crop_ox);
    if (p.rot_deg != 0.0) out = rotate_deg(out, p.rot_deg);
    return out;
}

Image augment(const Image& img, const AugmentSpec& spec, Rng& rng) {
    return apply_augment(img, draw_augment(spec, rng));
}

}  // namespace ma2mi
