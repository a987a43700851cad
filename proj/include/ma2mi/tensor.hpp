#pragma once

// Reverse-mode autograd over dense double tensors. Deliberately small:
// only the ops the training stack needs, all on CPU, single stream.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ma2mi {

using Shape = std::vector<int>;

inline long long numel(const Shape& s) {
    long long n = 1;
    for (int d : s) n *= d;
    return n;
}

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized lazily during backward()
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // accumulates d(loss)/d(parent) given this->grad
    std::function<void(TensorNode&)> backward_fn;
};

class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, double fill, bool requires_grad = false);
    explicit Tensor(std::shared_ptr<TensorNode> n) : node(std::move(n)) {}

    static Tensor from_values(Shape shape, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return node != nullptr; }
    const Shape& shape() const { return node->shape; }
    long long size() const { return (long long)node->value.size(); }
    std::vector<double>& data() { return node->value; }
    const std::vector<double>& data() const { return node->value; }
    std::vector<double>& grad() { return node->grad; }
    const std::vector<double>& grad() const { return node->grad; }
    bool requires_grad() const { return node->requires_grad; }

    double item() const;  // value of a 1-element tensor

    // breaks the graph link; shares no autograd history (copies values)
    Tensor detach() const;

    // run reverse-mode accumulation from this scalar
    void backward();

    void zero_grad() { node->grad.assign(node->value.size(), 0.0); }

    std::shared_ptr<TensorNode> node;
};

// --- graph construction helper ---
Tensor make_op(Shape shape, std::vector<double> value,
               std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backward_fn);

// --- elementwise ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor abs_elem(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt_stable(const Tensor& a, double eps);  // sqrt(a + eps^2)

// --- reductions ---
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// --- shape ---
Tensor reshape(const Tensor& a, Shape shape);
// [B,M,N] -> [B,N,M]
Tensor transpose_last2(const Tensor& a);
// [B,C,H,W] -> [B, T=(H/p)*(W/p), C*p*p], row-major patches
Tensor patchify(const Tensor& a, int p);
Tensor unpatchify(const Tensor& a, int channels, int h, int w, int p);
Tensor concat_channels(const Tensor& a, const Tensor& b);  // [B,Ca,H,W]+[B,Cb,H,W]
Tensor slice_lastdim(const Tensor& a, int start, int len);
Tensor slice_batch(const Tensor& a, int b);  // [B,...] -> [1,...]

// --- linear algebra ---
Tensor matmul(const Tensor& a, const Tensor& b);       // [M,K]x[K,N]
Tensor matmul_nt(const Tensor& a, const Tensor& b);    // [M,K]x[N,K]^T -> [M,N]
Tensor bmm(const Tensor& a, const Tensor& b);          // [B,M,K]x[B,K,N]
Tensor add_rowwise(const Tensor& a, const Tensor& b);  // [R,N] + [N]

// --- conv / pooling / resampling ---
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              int stride, int pad);                       // NCHW
Tensor global_avg_pool(const Tensor& x);                  // [B,C,H,W]->[B,C]
Tensor upsample_nearest(const Tensor& x, int factor);

// Fixed linear resampling of the spatial grid: out cell <- sum w_k * in cell.
// One table row per output spatial index; applied per batch and channel.
struct GridTap {
    int src;      // input spatial index, -1 for none
    double w;
};
struct GridMap {
    int h = 0, w = 0;                         // grid dims
    std::vector<std::vector<GridTap>> taps;   // size h*w
    std::vector<double> valid;                // 1.0 where output cell is defined
};
Tensor grid_resample(const Tensor& x, const GridMap& map);  // [B,C,H,W]

// --- normalization ---
struct BatchNormState {
    std::vector<double> running_mean, running_var;
};
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    BatchNormState& state, bool training,
                    double momentum = 0.1, double eps = 1e-5);
Tensor layer_norm_lastdim(const Tensor& x, double eps = 1e-6);

// --- token ops for the conditional transformer ---
// x[B,T,C] * (1 + s[B,C]) + t[B,C]
Tensor scale_shift_tokens(const Tensor& x, const Tensor& s, const Tensor& t);
Tensor add_token_bias(const Tensor& x, const Tensor& pos);  // [B,T,C] + [T,C]
Tensor softmax_lastdim(const Tensor& x);

// --- objectives ---
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& labels);
// pairwise cosine similarity with smooth eps-stabilized norms:
// C[i,j] = <A_i,B_j> / (sqrt(|A_i|^2+eps^2) * sqrt(|B_j|^2+eps^2))
Tensor cosine_matrix(const Tensor& a, const Tensor& b, double eps);

}  // namespace ma2mi
