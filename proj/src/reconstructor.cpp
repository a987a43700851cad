#include "ma2mi/reconstructor.hpp"

#include <cmath>
#include <stdexcept>

namespace ma2mi::model {

ReconBlock::ReconBlock(Rng& rng, int dim_, int cond_dim, int mlp_ratio) : dim(dim_) {
    mod = nn::Linear(rng, cond_dim, 4 * dim, /*zero_init=*/true);
    q = nn::Linear(rng, dim, dim);
    k = nn::Linear(rng, dim, dim);
    v = nn::Linear(rng, dim, dim);
    o = nn::Linear(rng, dim, dim);
    mlp1 = nn::Linear(rng, dim, mlp_ratio * dim);
    mlp2 = nn::Linear(rng, mlp_ratio * dim, dim);
}

Tensor ReconBlock::forward(const Tensor& x, const Tensor& cond) {
    Tensor m = mod.forward(cond);  // [B, 4*dim]
    Tensor s1 = slice_lastdim(m, 0, dim);
    Tensor b1 = slice_lastdim(m, dim, dim);
    Tensor s2 = slice_lastdim(m, 2 * dim, dim);
    Tensor b2 = slice_lastdim(m, 3 * dim, dim);

    // attention
    Tensor h = scale_shift_tokens(layer_norm_lastdim(x), s1, b1);
    Tensor qk = bmm(q.forward(h), transpose_last2(k.forward(h)));
    Tensor att = softmax_lastdim(scale(qk, 1.0 / std::sqrt((double)dim)));
    Tensor a = o.forward(bmm(att, v.forward(h)));
    Tensor x1 = add(x, a);

    // mlp
    Tensor h2 = scale_shift_tokens(layer_norm_lastdim(x1), s2, b2);
    return add(x1, mlp2.forward(relu(mlp1.forward(h2))));
}

nn::ParamMap ReconBlock::parameters() {
    nn::ParamMap pm;
    pm.merge("mod", mod.parameters());
    pm.merge("q", q.parameters());
    pm.merge("k", k.parameters());
    pm.merge("v", v.parameters());
    pm.merge("o", o.parameters());
    pm.merge("mlp1", mlp1.parameters());
    pm.merge("mlp2", mlp2.parameters());
    return pm;
}

Reconstructor::Reconstructor(Rng& rng, const ReconstructorConfig& cfg_) {
    cfg = cfg_;
    if (cfg.latent_size % cfg.patch)
        throw std::invalid_argument("Reconstructor: latent grid not divisible by patch size");
    int pf = cfg.latent_channels * cfg.patch * cfg.patch;
    embed = nn::Linear(rng, pf, cfg.dim);
    std::vector<double> pe((size_t)tokens() * cfg.dim);
    for (auto& x : pe) x = 0.02 * rng.normal();
    pos_emb = Tensor::from_values({tokens(), cfg.dim}, std::move(pe), true);
    for (int i = 0; i < cfg.layers; ++i)
        blocks.push_back(std::make_shared<ReconBlock>(rng, cfg.dim, cfg.cond_dim, cfg.mlp_ratio));
    final_mod = nn::Linear(rng, cfg.cond_dim, 2 * cfg.dim, /*zero_init=*/true);
    final_linear = nn::Linear(rng, cfg.dim, pf, /*zero_init=*/true);
}

Tensor Reconstructor::forward(const Tensor& z, const Tensor& cond) {
    auto& s = z.shape();
    if (s.size() != 4 || s[1] != cfg.latent_channels || s[2] != cfg.latent_size ||
        s[3] != cfg.latent_size)
        throw std::invalid_argument("Reconstructor: latent shape mismatch with config");
    if (cond.shape() != Shape{s[0], cfg.cond_dim})
        throw std::invalid_argument("Reconstructor: condition shape mismatch");
    Tensor x = add_token_bias(embed.forward(patchify(z, cfg.patch)), pos_emb);
    for (auto& b : blocks) x = b->forward(x, cond);
    Tensor m = final_mod.forward(cond);
    Tensor h = scale_shift_tokens(layer_norm_lastdim(x), slice_lastdim(m, 0, cfg.dim),
                                  slice_lastdim(m, cfg.dim, cfg.dim));
    return unpatchify(final_linear.forward(h), cfg.latent_channels, cfg.latent_size,
                      cfg.latent_size, cfg.patch);
}

nn::ParamMap Reconstructor::parameters() {
    nn::ParamMap pm;
    pm.merge("embed", embed.parameters());
    pm.add("pos_emb", pos_emb);
    for (size_t i = 0; i < blocks.size(); ++i)
        pm.merge("block" + std::to_string(i), blocks[i]->parameters());
    pm.merge("final_mod", final_mod.parameters());
    pm.merge("final_linear", final_linear.parameters());
    return pm;
}

}  // namespace ma2mi::model
