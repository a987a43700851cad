#include "ma2mi/miacnet.hpp"

#include <cmath>
#include <stdexcept>

namespace ma2mi::model {

int EncoderConfig::out_channels() const {
    if (preset == "tiny") return base_width * 8;
    if (preset == "resnet18") return 512;
    throw std::invalid_argument("EncoderConfig: unknown preset " + preset);
}

int EncoderConfig::stride() const {
    if (preset == "tiny") return 16;
    if (preset == "resnet18") return 32;
    throw std::invalid_argument("EncoderConfig: unknown preset " + preset);
}

Tensor SpatialFeature::cells(int b) const {
    int B = batch(), C = channels(), HW = grid_h() * grid_w();
    if (b < 0 || b >= B) throw std::out_of_range("SpatialFeature::cells");
    std::vector<double> v((size_t)HW * C);
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < HW; ++i)
            v[(size_t)i * C + c] = t.data()[((size_t)b * C + c) * HW + i];
    return make_op({HW, C}, std::move(v), {t}, [b, C, HW](TensorNode& s) {
        if (!s.parents[0]->requires_grad) return;
        if (s.parents[0]->grad.size() != s.parents[0]->value.size())
            s.parents[0]->grad.assign(s.parents[0]->value.size(), 0.0);
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < HW; ++i)
                s.parents[0]->grad[((size_t)b * C + c) * HW + i] += s.grad[(size_t)i * C + c];
    });
}

Encoder::Encoder(Rng& rng, const EncoderConfig& cfg_) {
    cfg = cfg_;
    if (cfg.preset == "tiny") {
        int w = cfg.base_width;
        stem = nn::Conv2d(rng, 3, w, 3, 1, 1);
        stem_bn = nn::BatchNorm2d(w);
        int widths[4] = {w, 2 * w, 4 * w, 8 * w};
        int ci = w;
        for (int s = 0; s < 4; ++s) {
            blocks.push_back(std::make_shared<nn::ResidualBlock>(rng, ci, widths[s], 2));
            ci = widths[s];
        }
    } else if (cfg.preset == "resnet18") {
        stem = nn::Conv2d(rng, 3, 64, 7, 2, 3);
        stem_bn = nn::BatchNorm2d(64);
        // stride-2 conv in place of the max-pool
        stem2 = nn::Conv2d(rng, 64, 64, 3, 2, 1);
        stem2_bn = nn::BatchNorm2d(64);
        has_stem2 = true;
        int widths[4] = {64, 128, 256, 512};
        int ci = 64;
        for (int s = 0; s < 4; ++s) {
            blocks.push_back(std::make_shared<nn::ResidualBlock>(rng, ci, widths[s], s == 0 ? 1 : 2));
            blocks.push_back(std::make_shared<nn::ResidualBlock>(rng, widths[s], widths[s], 1));
            ci = widths[s];
        }
    } else {
        throw std::invalid_argument("Encoder: unknown preset " + cfg.preset);
    }
}

SpatialFeature Encoder::forward(const Tensor& x) {
    if (x.shape().size() != 4 || x.shape()[1] != 3 || x.shape()[2] != cfg.input_size ||
        x.shape()[3] != cfg.input_size)
        throw std::invalid_argument("Encoder: input shape mismatch with config");
    Tensor h = relu(stem_bn.forward(stem.forward(x)));
    if (has_stem2) h = relu(stem2_bn.forward(stem2.forward(h)));
    for (auto& b : blocks) h = b->forward(h);
    SpatialFeature f;
    f.t = h;
    f.stride = cfg.stride();
    return f;
}

nn::ParamMap Encoder::parameters() {
    nn::ParamMap pm;
    pm.merge("stem", stem.parameters());
    pm.merge("stem_bn", stem_bn.parameters());
    if (has_stem2) {
        pm.merge("stem2", stem2.parameters());
        pm.merge("stem2_bn", stem2_bn.parameters());
    }
    for (size_t i = 0; i < blocks.size(); ++i)
        pm.merge("block" + std::to_string(i), blocks[i]->parameters());
    return pm;
}

void Encoder::set_training(bool t) {
    training = t;
    stem_bn.set_training(t);
    stem2_bn.set_training(t);
    for (auto& b : blocks) b->set_training(t);
}

FusionKind fusion_kind_from_string(const std::string& s) {
    if (s == "pool_sum") return FusionKind::PoolSum;
    if (s == "concat_pool") return FusionKind::ConcatPool;
    if (s == "gated") return FusionKind::Gated;
    throw std::invalid_argument("unknown fusion kind: " + s);
}

Fusion::Fusion(Rng& rng, FusionKind kind_, int channels, int cond_dim_) {
    kind = kind_;
    cond_dim = cond_dim_;
    proj = nn::Conv2d(rng, channels, channels, 1, 1, 0);
    int pooled = kind == FusionKind::ConcatPool ? 2 * channels : channels;
    to_cond = nn::Linear(rng, pooled, cond_dim);
}

Tensor Fusion::forward(const SpatialFeature& fp, const SpatialFeature& fa) {
    if (fp.t.shape() != fa.t.shape())
        throw std::invalid_argument("Fusion: branch feature shapes differ");
    Tensor pooled;
    switch (kind) {
        case FusionKind::PoolSum:
            pooled = global_avg_pool(add(fa.t, proj.forward(fp.t)));
            break;
        case FusionKind::ConcatPool:
            pooled = global_avg_pool(concat_channels(fa.t, proj.forward(fp.t)));
            break;
        case FusionKind::Gated:
            pooled = global_avg_pool(mul(fa.t, sigmoid(proj.forward(fp.t))));
            break;
    }
    return to_cond.forward(pooled);
}

nn::ParamMap Fusion::parameters() {
    nn::ParamMap pm;
    pm.merge("proj", proj.parameters());
    pm.merge("to_cond", to_cond.parameters());
    return pm;
}

MiacNet::MiacNet(Rng& rng, const MiacNetConfig& cfg_) {
    cfg = cfg_;
    if (!cfg.use_position && cfg.fusion == FusionKind::ConcatPool)
        throw std::invalid_argument(
            "MiacNet: concat_pool fusion needs the position branch enabled");
    position_encoder = Encoder(rng, cfg.encoder);
    action_encoder = Encoder(rng, cfg.encoder);
    fusion = Fusion(rng, cfg.fusion, cfg.encoder.out_channels(), cfg.cond_dim);
}

Tensor MiacNet::to_input(const std::vector<Image>& imgs) const {
    int B = (int)imgs.size();
    int S = cfg.encoder.input_size;
    std::vector<double> v((size_t)B * 3 * S * S);
    for (int b = 0; b < B; ++b) {
        const Image& im = imgs[b];
        if (im.h != S || im.w != S || im.c != 3)
            throw std::invalid_argument("MiacNet::to_input: image shape mismatch");
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x)
                    v[(((size_t)b * 3 + ch) * S + y) * S + x] =
                        (im.at(y, x, ch) - cfg.norm_mean[ch]) / cfg.norm_std[ch];
    }
    return Tensor::from_values({B, 3, S, S}, std::move(v));
}

Tensor MiacNet::to_diff_input(const std::vector<Image>& a, const std::vector<Image>& b) const {
    int B = (int)a.size();
    if (b.size() != a.size()) throw std::invalid_argument("to_diff_input: batch size mismatch");
    int S = cfg.encoder.input_size;
    std::vector<double> v((size_t)B * 3 * S * S);
    for (int n = 0; n < B; ++n) {
        if (!a[n].same_shape(b[n]))
            throw std::invalid_argument("to_diff_input: frame shapes differ");
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x)
                    // I_{t+delta} - I_t, scaled by the channel std only (difference of
                    // normalized frames: the mean cancels)
                    v[(((size_t)n * 3 + ch) * S + y) * S + x] =
                        (b[n].at(y, x, ch) - a[n].at(y, x, ch)) / cfg.norm_std[ch];
    }
    return Tensor::from_values({B, 3, S, S}, std::move(v));
}

Tensor MiacNet::condition(const SpatialFeature& fp, const SpatialFeature& fa,
                          bool stop_position_grad) {
    if (!cfg.use_position) return fusion.to_cond.forward(global_avg_pool(fa.t));
    SpatialFeature fp_used = fp;
    if (stop_position_grad) fp_used.t = fp.t.detach();
    return fusion.forward(fp_used, fa);
}

void MiacNet::attach_head(int num_classes) {
    Rng dummy(0);
    head = nn::Linear(dummy, cfg.cond_dim, num_classes, /*zero_init=*/true);
    has_head = true;
}

Tensor MiacNet::classify(const Tensor& cond) {
    if (!has_head) throw std::logic_error("MiacNet::classify: head not attached");
    return head.forward(cond);
}

nn::ParamMap MiacNet::parameters() {
    nn::ParamMap pm;
    pm.merge("position_encoder", position_encoder.parameters());
    pm.merge("action_encoder", action_encoder.parameters());
    pm.merge("fusion", fusion.parameters());
    if (has_head) pm.merge("head", head.parameters());
    return pm;
}

void MiacNet::set_training(bool t) {
    training = t;
    position_encoder.set_training(t);
    action_encoder.set_training(t);
}

}  // namespace ma2mi::model
