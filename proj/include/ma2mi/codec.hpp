#pragma once

#include "ma2mi/image.hpp"
#include "ma2mi/nn.hpp"

#include <string>
#include <vector>

namespace ma2mi::model {

// raw [0,1] pixels, NCHW
Tensor images_to_tensor(const std::vector<Image>& imgs);
Image tensor_to_image(const Tensor& t, int batch_index);

struct CodecConfig {
    std::string kind = "identity";  // "identity" | "conv-ae"
    int downsample = 4;             // spatial factor f (power of two)
    int latent_channels = 8;
    int base_width = 16;
};

// maps images to smaller spatial representations; identity = pixel space
struct LatentCodec : nn::Module {
    CodecConfig cfg;
    bool fitted = false;
    std::vector<nn::Conv2d> enc_convs;
    nn::Conv2d enc_out;
    nn::Conv2d dec_in;
    std::vector<nn::Conv2d> dec_convs;
    nn::Conv2d dec_out;

    LatentCodec() = default;
    LatentCodec(Rng& rng, const CodecConfig& cfg);

    bool is_identity() const { return cfg.kind == "identity"; }
    Tensor encode(const Tensor& img) const;  // [B,3,S,S] -> [B,Cz,S/f,S/f]
    Tensor decode(const Tensor& z) const;
    nn::ParamMap parameters() override;

    // pre-fit on corpus frames (MSE objective); returns held-out PSNR in dB
    double fit(const std::vector<Image>& train_frames, const std::vector<Image>& holdout_frames,
               int steps, int batch, double lr, Rng& rng);
};

}  // namespace ma2mi::model
