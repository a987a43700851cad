#pragma once

#include "ma2mi/image.hpp"
#include "ma2mi/nn.hpp"
#include "ma2mi/tensor.hpp"

#include <array>
#include <memory>
#include <string>
#include <vector>

namespace ma2mi::model {

struct EncoderConfig {
    std::string preset = "tiny";  // "tiny" | "resnet18"
    int base_width = 16;          // tiny preset stage-1 width
    int input_size = 64;

    int out_channels() const;
    int stride() const;
    int grid() const { return input_size / stride(); }
};

// H x W grid of C-vectors: value [B,C,H,W] plus the pixel stride of a cell
struct SpatialFeature {
    Tensor t;
    int stride = 1;
    int batch() const { return t.shape()[0]; }
    int channels() const { return t.shape()[1]; }
    int grid_h() const { return t.shape()[2]; }
    int grid_w() const { return t.shape()[3]; }
    // [HW, C] view of one batch element (for the cosine losses)
    Tensor cells(int b) const;
};

// residual CNN over images, output is the last stage's spatial map
struct Encoder : nn::Module {
    EncoderConfig cfg;
    nn::Conv2d stem, stem2;
    nn::BatchNorm2d stem_bn, stem2_bn;
    bool has_stem2 = false;
    std::vector<std::shared_ptr<nn::ResidualBlock>> blocks;

    Encoder() = default;
    Encoder(Rng& rng, const EncoderConfig& cfg);
    SpatialFeature forward(const Tensor& x);  // x: [B,3,H,W]
    nn::ParamMap parameters() override;
    void set_training(bool t) override;
};

enum class FusionKind { PoolSum, ConcatPool, Gated };
FusionKind fusion_kind_from_string(const std::string& s);

// C_delta from the two branch features
struct Fusion : nn::Module {
    FusionKind kind = FusionKind::PoolSum;
    nn::Conv2d proj;       // 1x1 over F^p channels
    nn::Linear to_cond;    // pooled -> D
    int cond_dim = 256;

    Fusion() = default;
    Fusion(Rng& rng, FusionKind kind, int channels, int cond_dim);
    Tensor forward(const SpatialFeature& fp, const SpatialFeature& fa);  // [B,D]
    nn::ParamMap parameters() override;
};

struct MiacNetConfig {
    EncoderConfig encoder;
    FusionKind fusion = FusionKind::PoolSum;
    int cond_dim = 256;
    // ablation switch: when false, C_delta pools the action branch alone
    bool use_position = true;
    // per-channel input normalization, applied at model input
    std::array<double, 3> norm_mean = {0.5, 0.5, 0.5};
    std::array<double, 3> norm_std = {0.5, 0.5, 0.5};
};

struct MiacNet : nn::Module {
    MiacNetConfig cfg;
    Encoder position_encoder, action_encoder;
    Fusion fusion;
    nn::Linear head;  // optional classification head
    bool has_head = false;

    MiacNet() = default;
    MiacNet(Rng& rng, const MiacNetConfig& cfg);

    // image batches -> normalized input tensors
    Tensor to_input(const std::vector<Image>& imgs) const;
    Tensor to_diff_input(const std::vector<Image>& a, const std::vector<Image>& b) const;

    SpatialFeature encode_position(const Tensor& x) { return position_encoder.forward(x); }
    SpatialFeature encode_action(const Tensor& diff) { return action_encoder.forward(diff); }
    // stop_position_grad: block L_rec / CE gradients from reaching E_p through fusion
    Tensor condition(const SpatialFeature& fp, const SpatialFeature& fa,
                     bool stop_position_grad = false);
    void attach_head(int num_classes);  // zero-initialized FC
    Tensor classify(const Tensor& cond);

    nn::ParamMap parameters() override;
    void set_training(bool t) override;
};

}  // namespace ma2mi::model
