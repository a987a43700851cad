#include "ma2mi/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace ma2mi::nn {

Tensor ParamMap::find(const std::string& name) const {
    for (auto& [n, t] : params)
        if (n == name) return t;
    throw std::out_of_range("ParamMap: no parameter named " + name);
}

long long ParamMap::count() const {
    long long n = 0;
    for (auto& [_, t] : params) n += t.size();
    return n;
}

Tensor kaiming_conv(Rng& rng, int co, int ci, int kh, int kw) {
    double std = std::sqrt(2.0 / (double)(ci * kh * kw));
    std::vector<double> v((long long)co * ci * kh * kw);
    for (auto& x : v) x = rng.normal() * std;
    return Tensor::from_values({co, ci, kh, kw}, std::move(v), true);
}

Tensor kaiming_linear(Rng& rng, int out, int in) {
    double std = std::sqrt(2.0 / (double)in);
    std::vector<double> v((long long)out * in);
    for (auto& x : v) x = rng.normal() * std;
    return Tensor::from_values({out, in}, std::move(v), true);
}

Linear::Linear(Rng& rng, int in, int out, bool zero_init) {
    if (zero_init)
        w = Tensor({out, in}, 0.0, true);
    else
        w = kaiming_linear(rng, out, in);
    b = Tensor({out}, 0.0, true);
}

Tensor Linear::forward(const Tensor& x) const {
    int in = w.shape()[1], out = w.shape()[0];
    Shape orig = x.shape();
    if (orig.back() != in) throw std::invalid_argument("Linear: input dim mismatch");
    long long rows = x.size() / in;
    Tensor x2 = reshape(x, {(int)rows, in});
    Tensor y = add_rowwise(matmul_nt(x2, w), b);
    Shape out_shape = orig;
    out_shape.back() = out;
    return reshape(y, out_shape);
}

ParamMap Linear::parameters() {
    ParamMap pm;
    pm.add("w", w);
    pm.add("b", b);
    return pm;
}

Conv2d::Conv2d(Rng& rng, int ci, int co, int k, int stride_, int pad_) {
    w = kaiming_conv(rng, co, ci, k, k);
    b = Tensor({co}, 0.0, true);
    stride = stride_;
    pad = pad_;
}

ParamMap Conv2d::parameters() {
    ParamMap pm;
    pm.add("w", w);
    pm.add("b", b);
    return pm;
}

BatchNorm2d::BatchNorm2d(int c) {
    gamma = Tensor({c}, 1.0, true);
    beta = Tensor({c}, 0.0, true);
    state.running_mean.assign(c, 0.0);
    state.running_var.assign(c, 1.0);
}

ParamMap BatchNorm2d::parameters() {
    ParamMap pm;
    pm.add("gamma", gamma);
    pm.add("beta", beta);
    pm.add_buffer("running_mean", &state.running_mean);
    pm.add_buffer("running_var", &state.running_var);
    return pm;
}

ResidualBlock::ResidualBlock(Rng& rng, int ci, int co, int stride)
    : conv1(rng, ci, co, 3, stride, 1),
      conv2(rng, co, co, 3, 1, 1),
      bn1(co),
      bn2(co) {
    has_skip_proj = (stride != 1 || ci != co);
    if (has_skip_proj) {
        skip = Conv2d(rng, ci, co, 1, stride, 0);
        bn_skip = BatchNorm2d(co);
    }
}

Tensor ResidualBlock::forward(const Tensor& x) {
    Tensor h = relu(bn1.forward(conv1.forward(x)));
    h = bn2.forward(conv2.forward(h));
    Tensor s = has_skip_proj ? bn_skip.forward(skip.forward(x)) : x;
    return relu(add(h, s));
}

ParamMap ResidualBlock::parameters() {
    ParamMap pm;
    pm.merge("conv1", conv1.parameters());
    pm.merge("bn1", bn1.parameters());
    pm.merge("conv2", conv2.parameters());
    pm.merge("bn2", bn2.parameters());
    if (has_skip_proj) {
        pm.merge("skip", skip.parameters());
        pm.merge("bn_skip", bn_skip.parameters());
    }
    return pm;
}

void ResidualBlock::set_training(bool t) {
    training = t;
    bn1.set_training(t);
    bn2.set_training(t);
    bn_skip.set_training(t);
}

AdamW::AdamW(const ParamMap& pm, double lr_, double wd) {
    lr = lr_;
    weight_decay = wd;
    for (auto& [_, t] : pm.params) {
        params.push_back(t);
        slots.push_back({std::vector<double>(t.size(), 0.0), std::vector<double>(t.size(), 0.0)});
    }
}

void AdamW::zero_grad() {
    for (auto& p : params) p.zero_grad();
}

void AdamW::step() {
    ++t;
    double bc1 = 1.0 - std::pow(beta1, (double)t);
    double bc2 = 1.0 - std::pow(beta2, (double)t);
    for (size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        if (p.grad().size() != p.data().size()) continue;  // untouched this step
        auto& m = slots[k].m;
        auto& v = slots[k].v;
        for (size_t i = 0; i < p.data().size(); ++i) {
            double g = p.grad()[i];
            m[i] = beta1 * m[i] + (1 - beta1) * g;
            v[i] = beta2 * v[i] + (1 - beta2) * g * g;
            double mh = m[i] / bc1, vh = v[i] / bc2;
            p.data()[i] -= lr * (mh / (std::sqrt(vh) + eps) + weight_decay * p.data()[i]);
        }
    }
}

}  // namespace ma2mi::nn
