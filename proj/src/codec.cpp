#include "ma2mi/codec.hpp"

#include <cmath>
#include <stdexcept>

namespace ma2mi::model {

Tensor images_to_tensor(const std::vector<Image>& imgs) {
    if (imgs.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
    int B = (int)imgs.size(), H = imgs[0].h, W = imgs[0].w;
    std::vector<double> v((size_t)B * 3 * H * W);
    for (int b = 0; b < B; ++b) {
        if (imgs[b].h != H || imgs[b].w != W || imgs[b].c != 3)
            throw std::invalid_argument("images_to_tensor: mixed shapes");
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    v[(((size_t)b * 3 + ch) * H + y) * W + x] = imgs[b].at(y, x, ch);
    }
    return Tensor::from_values({B, 3, H, W}, std::move(v));
}

Image tensor_to_image(const Tensor& t, int b) {
    auto& s = t.shape();
    if (s.size() != 4 || s[1] != 3) throw std::invalid_argument("tensor_to_image: want [B,3,H,W]");
    int H = s[2], W = s[3];
    Image img(H, W, 3);
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                img.at(y, x, ch) =
                    std::clamp(t.data()[(((size_t)b * 3 + ch) * H + y) * W + x], 0.0, 1.0);
    return img;
}

LatentCodec::LatentCodec(Rng& rng, const CodecConfig& cfg_) {
    cfg = cfg_;
    if (cfg.kind == "identity") {
        cfg.downsample = 1;
        cfg.latent_channels = 3;
        fitted = true;
        return;
    }
    if (cfg.kind != "conv-ae") throw std::invalid_argument("LatentCodec: unknown kind " + cfg.kind);
    int k = 0;
    for (int f = cfg.downsample; f > 1; f /= 2) {
        if (f % 2) throw std::invalid_argument("LatentCodec: downsample must be a power of two");
        ++k;
    }
    int ci = 3, w = cfg.base_width;
    for (int i = 0; i < k; ++i) {
        enc_convs.emplace_back(rng, ci, w, 3, 2, 1);
        ci = w;
        w *= 2;
    }
    enc_out = nn::Conv2d(rng, ci, cfg.latent_channels, 1, 1, 0);
    dec_in = nn::Conv2d(rng, cfg.latent_channels, ci, 1, 1, 0);
    for (int i = 0; i < k; ++i) {
        int co = (i == k - 1) ? cfg.base_width : ci / 2;
        dec_convs.emplace_back(rng, ci, co, 3, 1, 1);
        ci = co;
    }
    dec_out = nn::Conv2d(rng, ci, 3, 3, 1, 1);
}

Tensor LatentCodec::encode(const Tensor& img) const {
    if (is_identity()) return img;
    if (!fitted)
        throw std::runtime_error(
            "LatentCodec: conv-ae is not fitted; run the codec pre-fit before pre-training");
    Tensor h = img;
    for (const auto& c : enc_convs) h = relu(c.forward(h));
    return enc_out.forward(h);
}

Tensor LatentCodec::decode(const Tensor& z) const {
    if (is_identity()) return z;
    Tensor h = relu(dec_in.forward(z));
    for (const auto& c : dec_convs) h = relu(c.forward(upsample_nearest(h, 2)));
    return sigmoid(dec_out.forward(h));
}

nn::ParamMap LatentCodec::parameters() {
    nn::ParamMap pm;
    if (is_identity()) return pm;
    for (size_t i = 0; i < enc_convs.size(); ++i)
        pm.merge("enc" + std::to_string(i), enc_convs[i].parameters());
    pm.merge("enc_out", enc_out.parameters());
    pm.merge("dec_in", dec_in.parameters());
    for (size_t i = 0; i < dec_convs.size(); ++i)
        pm.merge("dec" + std::to_string(i), dec_convs[i].parameters());
    pm.merge("dec_out", dec_out.parameters());
    return pm;
}

double LatentCodec::fit(const std::vector<Image>& train_frames,
                        const std::vector<Image>& holdout_frames, int steps, int batch, double lr,
                        Rng& rng) {
    if (is_identity()) return 99.0;
    if (train_frames.empty() || holdout_frames.empty())
        throw std::invalid_argument("LatentCodec::fit: empty frame sets");
    fitted = true;  // parameters are live from here on
    nn::AdamW opt(parameters(), lr);
    for (int s = 0; s < steps; ++s) {
        std::vector<Image> b;
        for (int i = 0; i < batch; ++i)
            b.push_back(train_frames[rng.uniform_int(0, (int)train_frames.size() - 1)]);
        Tensor x = images_to_tensor(b);
        Tensor y = decode(encode(x));
        Tensor loss = mean_all(square(sub(y, x)));
        opt.zero_grad();
        loss.backward();
        opt.step();
    }
    double acc = 0;
    for (const auto& f : holdout_frames) {
        Tensor x = images_to_tensor({f});
        Tensor y = decode(encode(x));
        acc += psnr(tensor_to_image(y, 0), f);
    }
    return acc / (double)holdout_frames.size();
}

}  // namespace ma2mi::model
