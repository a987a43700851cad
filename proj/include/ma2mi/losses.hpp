#pragma once

#include "ma2mi/miacnet.hpp"
#include "ma2mi/tensor.hpp"

#include <functional>
#include <map>
#include <string>

namespace ma2mi::losses {

constexpr double kCosineEps = 1e-8;

struct LossValue {
    Tensor value;  // scalar, differentiable
    std::map<std::string, double> components;
    bool eps_flagged = false;  // a near-zero cell hit the stabilized denominator
    double item() const { return value.item(); }
};

// mean pairwise cosine over distinct cells of one F^p sample; cells: [HW,C]
LossValue l1_diversity(const Tensor& cells);

// cross-face consistency between two position features; argmax match index is
// a stop-gradient selection, ties broken by lowest index
LossValue l2_cross_face(const Tensor& cells1, const Tensor& cells2);

// spatial transforms for the equivariance loss
struct Transform {
    enum class Kind { Identity, Flip, Translate, Rotate } kind = Kind::Identity;
    int dx_cells = 0, dy_cells = 0;  // Translate, in feature-grid cells
    double degrees = 0.0;            // Rotate
};

struct TransformFamily {
    bool flip = true;
    bool translate = true;
    int max_translate_cells = 1;
    bool rotate = true;
    double max_degrees = 15.0;
};

Transform draw_transform(const TransformFamily& fam, Rng& rng);

// tau on the input pixel grid (zero fill outside)
Tensor transform_image(const Tensor& x, const Transform& tau, int stride);
// tau re-expressed on the feature grid; valid mask excludes cells whose
// receptive field left the image
GridMap feature_grid_map(int h, int w, const Transform& tau);

// || E_p(tau(I)) - tau_feat(E_p(I)) ||_2 over valid cells; pass f_direct to
// reuse an already-computed E_p(I)
LossValue l3_equivariance(const std::function<model::SpatialFeature(const Tensor&)>& encode,
                          const Tensor& x, const Transform& tau, int stride,
                          const model::SpatialFeature* f_direct = nullptr);

LossValue l_pos(const LossValue& l1, const LossValue& l2, const LossValue& l3);

// 1-norm of the latent error; normalized = mean per element (default),
// otherwise the raw sum as written
LossValue l_rec(const Tensor& z_hat, const Tensor& z_target, bool normalized = true);

LossValue l_pre(const LossValue& rec, const LossValue& pos, double w_rec = 1.0,
                double w_pos = 1.0);

LossValue cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace ma2mi::losses
