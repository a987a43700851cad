#pragma once

#include "ma2mi/nn.hpp"

#include <vector>

namespace ma2mi::model {

struct ReconstructorConfig {
    int patch = 4;      // patch size over the latent grid
    int dim = 128;      // token dimension
    int layers = 4;
    int cond_dim = 256;
    int mlp_ratio = 4;
    int latent_channels = 3;
    int latent_size = 64;  // latent grid side
};

// transformer block conditioned by shift/scale modulation of its norms
struct ReconBlock : nn::Module {
    nn::Linear mod;  // cond -> [s1,b1,s2,b2]
    nn::Linear q, k, v, o;
    nn::Linear mlp1, mlp2;
    int dim = 0;

    ReconBlock() = default;
    ReconBlock(Rng& rng, int dim, int cond_dim, int mlp_ratio);
    Tensor forward(const Tensor& x, const Tensor& cond);  // x: [B,T,dim]
    nn::ParamMap parameters() override;
};

// predicts the latent of the future frame from the current latent and the
// condition vector; a single deterministic forward pass
struct Reconstructor : nn::Module {
    ReconstructorConfig cfg;
    nn::Linear embed;
    Tensor pos_emb;  // [T, dim]
    std::vector<std::shared_ptr<ReconBlock>> blocks;
    nn::Linear final_mod;     // cond -> [sF,bF]
    nn::Linear final_linear;  // zero-initialized

    Reconstructor() = default;
    Reconstructor(Rng& rng, const ReconstructorConfig& cfg);
    int tokens() const {
        int g = cfg.latent_size / cfg.patch;
        return g * g;
    }
    Tensor forward(const Tensor& z, const Tensor& cond);  // z: [B,Cz,S,S] -> same shape
    nn::ParamMap parameters() override;
};

}  // namespace ma2mi::model
