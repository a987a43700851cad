#include "ma2mi/viz.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ma2mi::viz {

Image make_grid(const std::vector<Image>& panes, int pad) {
    if (panes.empty()) throw std::invalid_argument("make_grid: no panes");
    int h = panes[0].h, w = panes[0].w;
    for (auto& p : panes)
        if (p.h != h || p.w != w || p.c != 3)
            throw std::invalid_argument("make_grid: panes must share shape");
    int n = (int)panes.size();
    Image out(h, n * w + (n - 1) * pad, 3);
    for (auto& v : out.px) v = 1.0;  // white separators
    for (int k = 0; k < n; ++k) {
        int x_off = k * (w + pad);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) out.at(y, x_off + x, c) = panes[k].at(y, x, c);
    }
    return out;
}

ReconResult viz_recon(train::Pipeline& p, const data::FramePair& pair) {
    p.set_training(false);
    ReconResult r;
    r.i_t = pair.frame_a;
    r.i_td = pair.frame_b;

    Tensor x_t = p.net.to_input({pair.frame_a});
    Tensor x_diff = p.net.to_diff_input({pair.frame_a}, {pair.frame_b});
    Tensor cond =
        p.net.condition(p.net.encode_position(x_t), p.net.encode_action(x_diff), false);
    Tensor z = p.codec.encode(model::images_to_tensor({pair.frame_a}));
    Tensor z_hat = p.recon.forward(z, cond);
    r.recon = p.codec.is_identity() ? model::tensor_to_image(z_hat, 0)
                                    : model::tensor_to_image(p.codec.decode(z_hat), 0);
    r.diff = diff_abs(r.recon, r.i_t);
    r.grid = make_grid({r.i_t, r.i_td, r.recon, r.diff});
    return r;
}

double box_energy_ratio(const Image& img, int x0, int y0, int x1, int y1) {
    double total = 0, inside = 0;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < img.c; ++c) {
                double v = std::abs(img.at(y, x, c));
                total += v;
                if (x >= x0 && x <= x1 && y >= y0 && y <= y1) inside += v;
            }
    return total > 0 ? inside / total : 0.0;
}

CamResult viz_cam(train::Pipeline& p, const data::FramePair& pair, int target_class) {
    if (!p.net.has_head) throw std::logic_error("viz_cam: model has no classification head");
    p.set_training(false);

    Tensor x_on = p.net.to_input({pair.frame_a});
    Tensor x_diff = p.net.to_diff_input({pair.frame_a}, {pair.frame_b});
    model::SpatialFeature fa = p.net.encode_action(x_diff);
    Tensor cond = p.net.condition(p.net.encode_position(x_on), fa, false);
    Tensor logits = p.net.classify(cond);
    int n = logits.shape()[1];

    int cls = target_class;
    if (cls < 0) {
        cls = 0;
        for (int i = 1; i < n; ++i)
            if (logits.data()[i] > logits.data()[cls]) cls = i;
    }
    if (cls >= n) throw std::invalid_argument("viz_cam: class index " + std::to_string(cls) +
                                              " >= " + std::to_string(n));

    Tensor target = sum_all(slice_lastdim(logits, cls, 1));
    target.backward();

    CamResult r;
    int C = fa.channels();
    r.grid_h = fa.grid_h();
    r.grid_w = fa.grid_w();
    int hw = r.grid_h * r.grid_w;
    const auto& act = fa.t.data();
    const auto& grad = fa.t.node->grad;
    r.heat.assign(hw, 0.0);
    if (grad.size() == act.size()) {
        for (int c = 0; c < C; ++c) {
            double wgt = 0;
            for (int i = 0; i < hw; ++i) wgt += grad[(size_t)c * hw + i];
            wgt /= hw;
            for (int i = 0; i < hw; ++i) r.heat[i] += wgt * act[(size_t)c * hw + i];
        }
    }
    for (auto& v : r.heat) v = std::max(v, 0.0);
    double mx = *std::max_element(r.heat.begin(), r.heat.end());
    if (mx > 0) {
        for (auto& v : r.heat) v /= mx;
    } else {
        r.degenerate = true;
        std::fill(r.heat.begin(), r.heat.end(), 0.0);
    }
    r.argmax_y = r.argmax_x = 0;
    for (int i = 1; i < hw; ++i)
        if (r.heat[i] > r.heat[r.argmax_y * r.grid_w + r.argmax_x]) {
            r.argmax_y = i / r.grid_w;
            r.argmax_x = i % r.grid_w;
        }

    // nearest-cell upsample blended over the onset frame (heat in red)
    const Image& base = pair.frame_a;
    r.overlay = base;
    for (int y = 0; y < base.h; ++y)
        for (int x = 0; x < base.w; ++x) {
            int gy = std::min(y * r.grid_h / base.h, r.grid_h - 1);
            int gx = std::min(x * r.grid_w / base.w, r.grid_w - 1);
            double hval = r.heat[(size_t)gy * r.grid_w + gx];
            r.overlay.at(y, x, 0) = std::min(1.0, 0.5 * base.at(y, x, 0) + 0.5 * hval);
            r.overlay.at(y, x, 1) = 0.5 * base.at(y, x, 1);
            r.overlay.at(y, x, 2) = 0.5 * base.at(y, x, 2);
        }
    return r;
}

}  // namespace ma2mi::viz
