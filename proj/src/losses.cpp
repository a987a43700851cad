#include "ma2mi/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace ma2mi::losses {

namespace {

bool has_near_zero_cell(const Tensor& cells) {
    int hw = cells.shape()[0], c = cells.shape()[1];
    for (int i = 0; i < hw; ++i) {
        double s2 = 0;
        for (int j = 0; j < c; ++j) {
            double v = cells.data()[(size_t)i * c + j];
            s2 += v * v;
        }
        if (std::sqrt(s2) < kCosineEps) return true;
    }
    return false;
}

Tensor off_diagonal_mask(int n) {
    std::vector<double> m((size_t)n * n, 1.0);
    for (int i = 0; i < n; ++i) m[(size_t)i * n + i] = 0.0;
    return Tensor::from_values({n, n}, std::move(m));
}

}  // namespace

LossValue l1_diversity(const Tensor& cells) {
    if (cells.shape().size() != 2) throw std::invalid_argument("l1_diversity: want [HW,C]");
    int hw = cells.shape()[0];
    if (hw < 2) throw std::invalid_argument("l1_diversity: needs HW >= 2");
    Tensor cos = cosine_matrix(cells, cells, kCosineEps);
    Tensor off = mul(cos, off_diagonal_mask(hw));
    LossValue lv;
    lv.value = scale(sum_all(off), 1.0 / ((double)hw * (hw - 1)));
    lv.eps_flagged = has_near_zero_cell(cells);
    lv.components["l1"] = lv.value.item();
    return lv;
}

LossValue l2_cross_face(const Tensor& cells1, const Tensor& cells2) {
    if (cells1.shape() != cells2.shape() || cells1.shape().size() != 2)
        throw std::invalid_argument("l2_cross_face: want matching [HW,C]");
    int hw = cells1.shape()[0];
    if (hw < 2) throw std::invalid_argument("l2_cross_face: needs HW >= 2");
    Tensor cos = cosine_matrix(cells1, cells2, kCosineEps);
    // best-match selection (constant during differentiation)
    std::vector<double> sel((size_t)hw * hw, 0.0);
    for (int i = 0; i < hw; ++i) {
        int best = 0;
        for (int j = 1; j < hw; ++j)
            if (cos.data()[(size_t)i * hw + j] > cos.data()[(size_t)i * hw + best]) best = j;
        sel[(size_t)i * hw + best] = 1.0;
    }
    Tensor sel_mask = Tensor::from_values({hw, hw}, std::move(sel));
    Tensor matched = sum_all(mul(cos, sel_mask));
    Tensor rest = sub(sum_all(cos), matched);
    LossValue lv;
    lv.value = sub(scale(rest, 1.0 / ((double)hw * (hw - 1))), scale(matched, 1.0 / (double)hw));
    lv.eps_flagged = has_near_zero_cell(cells1) || has_near_zero_cell(cells2);
    lv.components["l2"] = lv.value.item();
    return lv;
}

Transform draw_transform(const TransformFamily& fam, Rng& rng) {
    std::vector<Transform::Kind> kinds;
    if (fam.flip) kinds.push_back(Transform::Kind::Flip);
    if (fam.translate) kinds.push_back(Transform::Kind::Translate);
    if (fam.rotate) kinds.push_back(Transform::Kind::Rotate);
    if (kinds.empty()) return Transform{};
    Transform t;
    t.kind = kinds[rng.uniform_int(0, (int)kinds.size() - 1)];
    if (t.kind == Transform::Kind::Translate) {
        do {
            t.dx_cells = rng.uniform_int(-fam.max_translate_cells, fam.max_translate_cells);
            t.dy_cells = rng.uniform_int(-fam.max_translate_cells, fam.max_translate_cells);
        } while (t.dx_cells == 0 && t.dy_cells == 0);
    } else if (t.kind == Transform::Kind::Rotate) {
        t.degrees = rng.uniform(-fam.max_degrees, fam.max_degrees);
    }
    return t;
}

namespace {

GridMap identity_map(int h, int w) {
    GridMap m;
    m.h = h;
    m.w = w;
    m.taps.resize((size_t)h * w);
    m.valid.assign((size_t)h * w, 1.0);
    for (int i = 0; i < h * w; ++i) m.taps[i] = {{i, 1.0}};
    return m;
}

GridMap flip_map(int h, int w) {
    GridMap m;
    m.h = h;
    m.w = w;
    m.taps.resize((size_t)h * w);
    m.valid.assign((size_t)h * w, 1.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m.taps[(size_t)y * w + x] = {{y * w + (w - 1 - x), 1.0}};
    return m;
}

GridMap translate_map(int h, int w, int dy, int dx, int erode) {
    GridMap m;
    m.h = h;
    m.w = w;
    m.taps.resize((size_t)h * w);
    m.valid.assign((size_t)h * w, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int sy = y - dy, sx = x - dx;
            size_t o = (size_t)y * w + x;
            if (sy >= 0 && sy < h && sx >= 0 && sx < w) {
                m.taps[o] = {{sy * w + sx, 1.0}};
                // receptive fields near the incoming border see padded pixels
                if (sy >= erode && sy < h - erode && sx >= erode && sx < w - erode)
                    m.valid[o] = 1.0;
            } else {
                m.taps[o] = {{-1, 0.0}};
            }
        }
    return m;
}

GridMap rotate_map(int h, int w, double degrees, int erode) {
    GridMap m;
    m.h = h;
    m.w = w;
    m.taps.resize((size_t)h * w);
    m.valid.assign((size_t)h * w, 0.0);
    double th = degrees * M_PI / 180.0;
    double c = std::cos(th), s = std::sin(th);
    double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            // inverse rotation of the output cell center
            double ry = y - cy, rx = x - cx;
            double sx = c * rx + s * ry + cx;
            double sy = -s * rx + c * ry + cy;
            size_t o = (size_t)y * w + x;
            int x0 = (int)std::floor(sx), y0 = (int)std::floor(sy);
            double fx = sx - x0, fy = sy - y0;
            m.taps[o].clear();
            double wsum = 0;
            for (int ddy = 0; ddy <= 1; ++ddy)
                for (int ddx = 0; ddx <= 1; ++ddx) {
                    int yy = y0 + ddy, xx = x0 + ddx;
                    double wgt = (ddy ? fy : 1 - fy) * (ddx ? fx : 1 - fx);
                    if (yy >= 0 && yy < h && xx >= 0 && xx < w && wgt > 0) {
                        m.taps[o].push_back({yy * w + xx, wgt});
                        wsum += wgt;
                    }
                }
            bool interior = sx >= erode && sx <= w - 1 - erode && sy >= erode &&
                            sy <= h - 1 - erode && wsum > 0.999;
            if (interior) m.valid[o] = 1.0;
            if (m.taps[o].empty()) m.taps[o] = {{-1, 0.0}};
        }
    return m;
}

GridMap image_map(int h, int w, const Transform& tau, int stride) {
    switch (tau.kind) {
        case Transform::Kind::Identity: return identity_map(h, w);
        case Transform::Kind::Flip: return flip_map(h, w);
        case Transform::Kind::Translate:
            return translate_map(h, w, tau.dy_cells * stride, tau.dx_cells * stride, 0);
        case Transform::Kind::Rotate: return rotate_map(h, w, tau.degrees, 0);
    }
    throw std::logic_error("image_map: unreachable");
}

}  // namespace

Tensor transform_image(const Tensor& x, const Transform& tau, int stride) {
    if (tau.kind == Transform::Kind::Identity) return x;
    return grid_resample(x, image_map(x.shape()[2], x.shape()[3], tau, stride));
}

GridMap feature_grid_map(int h, int w, const Transform& tau) {
    switch (tau.kind) {
        case Transform::Kind::Identity: return identity_map(h, w);
        case Transform::Kind::Flip: return flip_map(h, w);
        case Transform::Kind::Translate:
            return translate_map(h, w, tau.dy_cells, tau.dx_cells, 1);
        case Transform::Kind::Rotate: return rotate_map(h, w, tau.degrees, 1);
    }
    throw std::logic_error("feature_grid_map: unreachable");
}

LossValue l3_equivariance(const std::function<model::SpatialFeature(const Tensor&)>& encode,
                          const Tensor& x, const Transform& tau, int stride,
                          const model::SpatialFeature* precomputed) {
    model::SpatialFeature f_direct = precomputed ? *precomputed : encode(x);
    model::SpatialFeature f_of_tau = encode(transform_image(x, tau, stride));
    GridMap gmap = feature_grid_map(f_direct.grid_h(), f_direct.grid_w(), tau);
    Tensor tau_of_f = grid_resample(f_direct.t, gmap);

    int B = f_direct.batch(), C = f_direct.channels();
    long long hw = (long long)f_direct.grid_h() * f_direct.grid_w();
    std::vector<double> mask((size_t)B * C * hw);
    for (int nc = 0; nc < B * C; ++nc)
        for (long long i = 0; i < hw; ++i) mask[(size_t)nc * hw + i] = gmap.valid[i];
    Tensor mask_t = Tensor::from_values(f_direct.t.shape(), std::move(mask));

    Tensor sq = mul(square(sub(f_of_tau.t, tau_of_f)), mask_t);
    // sqrt(s + eps^2) - eps: exactly 0 at s = 0, smooth elsewhere
    LossValue lv;
    lv.value = add_scalar(sqrt_stable(sum_all(sq), kCosineEps), -kCosineEps);
    lv.components["l3"] = lv.value.item();
    return lv;
}

LossValue l_pos(const LossValue& l1, const LossValue& l2, const LossValue& l3) {
    LossValue lv;
    lv.value = add(add(l1.value, l2.value), l3.value);
    lv.components = l1.components;
    for (auto& [k, v] : l2.components) lv.components[k] = v;
    for (auto& [k, v] : l3.components) lv.components[k] = v;
    lv.components["l_pos"] = lv.value.item();
    lv.eps_flagged = l1.eps_flagged || l2.eps_flagged || l3.eps_flagged;
    return lv;
}

LossValue l_rec(const Tensor& z_hat, const Tensor& z_target, bool normalized) {
    if (z_hat.shape() != z_target.shape()) throw std::invalid_argument("l_rec: shape mismatch");
    Tensor l1n = sum_all(abs_elem(sub(z_hat, z_target)));
    LossValue lv;
    lv.value = normalized ? scale(l1n, 1.0 / (double)z_hat.size()) : l1n;
    lv.components["l_rec"] = lv.value.item();
    return lv;
}

LossValue l_pre(const LossValue& rec, const LossValue& pos, double w_rec, double w_pos) {
    LossValue lv;
    lv.value = add(scale(rec.value, w_rec), scale(pos.value, w_pos));
    lv.components = rec.components;
    for (auto& [k, v] : pos.components) lv.components[k] = v;
    lv.components["l_pre"] = lv.value.item();
    lv.eps_flagged = rec.eps_flagged || pos.eps_flagged;
    return lv;
}

LossValue cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    LossValue lv;
    lv.value = cross_entropy_mean(logits, labels);
    lv.components["ce"] = lv.value.item();
    return lv;
}

}  // namespace ma2mi::losses
