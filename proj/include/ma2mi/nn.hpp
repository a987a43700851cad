#pragma once

#include "ma2mi/rng.hpp"
#include "ma2mi/tensor.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace ma2mi::nn {

// Named parameters and non-trainable buffers (running stats etc.), ordered.
struct ParamMap {
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<std::pair<std::string, std::vector<double>*>> buffers;

    void add(const std::string& name, const Tensor& t) { params.emplace_back(name, t); }
    void add_buffer(const std::string& name, std::vector<double>* b) {
        buffers.emplace_back(name, b);
    }
    void merge(const std::string& prefix, const ParamMap& other) {
        for (auto& [n, t] : other.params) params.emplace_back(prefix + "." + n, t);
        for (auto& [n, b] : other.buffers) buffers.emplace_back(prefix + "." + n, b);
    }
    Tensor find(const std::string& name) const;
    long long count() const;
};

struct Module {
    virtual ~Module() = default;
    virtual ParamMap parameters() = 0;
    bool training = true;
    virtual void set_training(bool t) { training = t; }
};

Tensor kaiming_conv(Rng& rng, int co, int ci, int kh, int kw);
Tensor kaiming_linear(Rng& rng, int out, int in);

struct Linear : Module {
    Tensor w, b;  // w: [out,in]
    Linear() = default;
    Linear(Rng& rng, int in, int out, bool zero_init = false);
    // x: [R,in] or [B,T,in]; preserves leading shape
    Tensor forward(const Tensor& x) const;
    ParamMap parameters() override;
};

struct Conv2d : Module {
    Tensor w, b;
    int stride = 1, pad = 0;
    Conv2d() = default;
    Conv2d(Rng& rng, int ci, int co, int k, int stride, int pad);
    Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
    ParamMap parameters() override;
};

struct BatchNorm2d : Module {
    Tensor gamma, beta;
    BatchNormState state;
    BatchNorm2d() = default;
    explicit BatchNorm2d(int c);
    Tensor forward(const Tensor& x) { return batch_norm2d(x, gamma, beta, state, training); }
    ParamMap parameters() override;
};

// conv-bn-relu, conv-bn + projection skip
struct ResidualBlock : Module {
    Conv2d conv1, conv2, skip;
    BatchNorm2d bn1, bn2, bn_skip;
    bool has_skip_proj = false;
    ResidualBlock() = default;
    ResidualBlock(Rng& rng, int ci, int co, int stride);
    Tensor forward(const Tensor& x);
    ParamMap parameters() override;
    void set_training(bool t) override;
};

// Decoupled-weight-decay Adam over a fixed parameter list.
struct AdamW {
    struct Slot {
        std::vector<double> m, v;
    };
    std::vector<Tensor> params;
    std::vector<Slot> slots;
    double lr = 4e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
    long long t = 0;

    explicit AdamW(const ParamMap& pm, double lr, double weight_decay = 0.0);
    void zero_grad();
    void step();
};

}  // namespace ma2mi::nn
