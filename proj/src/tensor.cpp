#include "ma2mi/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace ma2mi {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
    node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value.assign(numel(node->shape), fill);
    node->requires_grad = requires_grad;
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    if ((long long)values.size() != numel(shape))
        throw std::invalid_argument("from_values: size mismatch");
    Tensor t;
    t.node = std::make_shared<TensorNode>();
    t.node->shape = std::move(shape);
    t.node->value = std::move(values);
    t.node->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double v) { return from_values({1}, {v}); }

double Tensor::item() const {
    if (node->value.size() != 1) throw std::logic_error("item(): not a scalar");
    return node->value[0];
}

Tensor Tensor::detach() const {
    return from_values(node->shape, node->value, false);
}

void Tensor::backward() {
    if (node->value.size() != 1) throw std::logic_error("backward(): root must be scalar");
    // iterative post-order topo sort
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.push_back({node.get(), 0});
    seen.insert(node.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            TensorNode* p = n->parents[idx].get();
            ++idx;
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (TensorNode* n : order)
        if (n->grad.size() != n->value.size()) n->grad.assign(n->value.size(), 0.0);
    node->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backward_fn) {
    Tensor t = Tensor::from_values(std::move(shape), std::move(value));
    t.node->is_leaf = false;
    bool rg = false;
    for (auto& p : parents) {
        t.node->parents.push_back(p.node);
        rg = rg || p.node->requires_grad;
    }
    t.node->requires_grad = rg;
    if (rg) t.node->backward_fn = std::move(backward_fn);
    return t;
}

static void ensure_grad(TensorNode& n) {
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
}

static bool wants_grad(TensorNode& self, int i) {
    TensorNode& p = *self.parents[i];
    if (!p.requires_grad) return false;
    ensure_grad(p);
    return true;
}

// ---------------- elementwise ----------------

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
    std::vector<double> v(a.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
    return make_op(a.shape(), std::move(v), {a, b}, [](TensorNode& s) {
        for (int k = 0; k < 2; ++k)
            if (wants_grad(s, k))
                for (size_t i = 0; i < s.grad.size(); ++i) s.parents[k]->grad[i] += s.grad[i];
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("sub: shape mismatch");
    std::vector<double> v(a.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
    return make_op(a.shape(), std::move(v), {a, b}, [](TensorNode& s) {
        if (wants_grad(s, 0))
            for (size_t i = 0; i < s.grad.size(); ++i) s.parents[0]->grad[i] += s.grad[i];
        if (wants_grad(s, 1))
            for (size_t i = 0; i < s.grad.size(); ++i) s.parents[1]->grad[i] -= s.grad[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("mul: shape mismatch");
    std::vector<double> v(a.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
    return make_op(a.shape(), std::move(v), {a, b}, [](TensorNode& s) {
        auto& av = s.parents[0]->value;
        auto& bv = s.parents[1]->value;
        if (wants_grad(s, 0))
            for (size_t i = 0; i < s.grad.size(); ++i) s.parents[0]->grad[i] += s.grad[i] * bv[i];
        if (wants_grad(s, 1))
            for (size_t i = 0; i < s.grad.size(); ++i) s.parents[1]->grad[i] += s.grad[i] * av[i];
    });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double c) {
    std::vector<double> v(a.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * c;
    return make_op(a.shape(), std::move(v), {a}, [c](TensorNode& s) {
        if (wants_grad(s, 0))
            for (size_t i = 0; i < s.grad.size(); ++i) s.parents[0]->grad[i] += s.grad[i] * c;
    });
}

Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> v(a.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + c;
    return make_op(a.shape(), std::move(v), {a}, [](TensorNode& s) {
        if (wants_grad(s, 0))
            for (size_t i = 0; i < s.grad.size(); ++i) s.parents[0]->grad[i] += s.grad[i];
    });
}

Tensor relu(const Tensor& a) {
    std::vector<double> v(a.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] > 0 ? a.data()[i] : 0.0;
    return make_op(a.shape(), std::move(v), {a}, [](TensorNode& s) {
        if (!wants_grad(s, 0)) return;
        auto& av = s.parents[0]->value;
        for (size_t i = 0; i < s.grad.size(); ++i)
            if (av[i] > 0) s.parents[0]->grad[i] += s.grad[i];
    });
}

Tensor sigmoid(const Tensor& a) {
    std::vector<double> v(a.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
    return make_op(a.shape(), std::move(v), {a}, [](TensorNode& s) {
        if (!wants_grad(s, 0)) return;
        for (size_t i = 0; i < s.grad.size(); ++i) {
            double y = s.value[i];
            s.parents[0]->grad[i] += s.grad[i] * y * (1.0 - y);
        }
    });
}

Tensor abs_elem(const Tensor& a) {
    std::vector<double> v(a.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::fabs(a.data()[i]);
    return make_op(a.shape(), std::move(v), {a}, [](TensorNode& s) {
        if (!wants_grad(s, 0)) return;
        auto& av = s.parents[0]->value;
        for (size_t i = 0; i < s.grad.size(); ++i) {
            double d = av[i] > 0 ? 1.0 : (av[i] < 0 ? -1.0 : 0.0);
            s.parents[0]->grad[i] += s.grad[i] * d;
        }
    });
}

Tensor square(const Tensor& a) { return mul(a, a); }

Tensor sqrt_stable(const Tensor& a, double eps) {
    std::vector<double> v(a.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::sqrt(a.data()[i] + eps * eps);
    return make_op(a.shape(), std::move(v), {a}, [](TensorNode& s) {
        if (!wants_grad(s, 0)) return;
        for (size_t i = 0; i < s.grad.size(); ++i)
            s.parents[0]->grad[i] += s.grad[i] * 0.5 / s.value[i];
    });
}

// ---------------- reductions ----------------

Tensor sum_all(const Tensor& a) {
    double acc = 0;
    for (double x : a.data()) acc += x;
    return make_op({1}, {acc}, {a}, [](TensorNode& s) {
        if (!wants_grad(s, 0)) return;
        double g = s.grad[0];
        for (auto& pg : s.parents[0]->grad) pg += g;
    });
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / (double)a.size()); }

// ---------------- shape ----------------

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size()) throw std::invalid_argument("reshape: size mismatch");
    return make_op(std::move(shape), a.data(), {a}, [](TensorNode& s) {
        if (!wants_grad(s, 0)) return;
        for (size_t i = 0; i < s.grad.size(); ++i) s.parents[0]->grad[i] += s.grad[i];
    });
}

Tensor transpose_last2(const Tensor& a) {
    if (a.shape().size() != 3) throw std::invalid_argument("transpose_last2: want rank 3");
    int B = a.shape()[0], M = a.shape()[1], N = a.shape()[2];
    std::vector<double> v(a.size());
    for (int b = 0; b < B; ++b)
        for (int m = 0; m < M; ++m)
            for (int n = 0; n < N; ++n)
                v[((long long)b * N + n) * M + m] = a.data()[((long long)b * M + m) * N + n];
    return make_op({B, N, M}, std::move(v), {a}, [B, M, N](TensorNode& s) {
        if (!wants_grad(s, 0)) return;
        for (int b = 0; b < B; ++b)
            for (int m = 0; m < M; ++m)
                for (int n = 0; n < N; ++n)
                    s.parents[0]->grad[((long long)b * M + m) * N + n] +=
                        s.grad[((long long)b * N + n) * M + m];
    });
}

// patch layout: token index = (py*(W/p)+px), feature = c*p*p + dy*p + dx
static long long patch_src_index(int C, int H, int W, int p, int t, int f) {
    int wp = W / p;
    int py = t / wp, px = t % wp;
    int c = f / (p * p);
    int rem = f % (p * p);
    int dy = rem / p, dx = rem % p;
    int y = py * p + dy, x = px * p + dx;
    return ((long long)c * H + y) * W + x;
}

Tensor patchify(const Tensor& a, int p) {
    auto& sh = a.shape();
    if (sh.size() != 4) throw std::invalid_argument("patchify: want NCHW");
    int B = sh[0], C = sh[1], H = sh[2], W = sh[3];
    if (H % p || W % p) throw std::invalid_argument("patchify: grid not divisible by patch size");
    int T = (H / p) * (W / p), F = C * p * p;
    std::vector<double> v((long long)B * T * F);
    long long plane = (long long)C * H * W;
    for (int b = 0; b < B; ++b)
        for (int t = 0; t < T; ++t)
            for (int f = 0; f < F; ++f)
                v[((long long)b * T + t) * F + f] =
                    a.data()[b * plane + patch_src_index(C, H, W, p, t, f)];
    return make_op({B, T, F}, std::move(v), {a}, [B, C, H, W, p, T, F](TensorNode& s) {
        if (!wants_grad(s, 0)) return;
        long long plane = (long long)C * H * W;
        for (int b = 0; b < B; ++b)
            for (int t = 0; t < T; ++t)
                for (int f = 0; f < F; ++f)
                    s.parents[0]->grad[b * plane + patch_src_index(C, H, W, p, t, f)] +=
                        s.grad[((long long)b * T + t) * F + f];
    });
}

Tensor unpatchify(const Tensor& a, int C, int H, int W, int p) {
    auto& sh = a.shape();
    if (sh.size() != 3) throw std::invalid_argument("unpatchify: want [B,T,F]");
    int B = sh[0], T = sh[1], F = sh[2];
    if (T != (H / p) * (W / p) || F != C * p * p)
        throw std::invalid_argument("unpatchify: shape mismatch");
    std::vector<double> v((long long)B * C * H * W);
    long long plane = (long long)C * H * W;
    for (int b = 0; b < B; ++b)
        for (int t = 0; t < T; ++t)
            for (int f = 0; f < F; ++f)
                v[b * plane + patch_src_index(C, H, W, p, t, f)] =
                    a.data()[((long long)b * T + t) * F + f];
    return make_op({B, C, H, W}, std::move(v), {a}, [B, C, H, W, p, T, F](TensorNode& s) {
        if (!wants_grad(s, 0)) return;
        long long plane = (long long)C * H * W;
        for (int b = 0; b < B; ++b)
            for (int t = 0; t < T; ++t)
                for (int f = 0; f < F; ++f)
                    s.parents[0]->grad[((long long)b * T + t) * F + f] +=
                        s.grad[b * plane + patch_src_index(C, H, W, p, t, f)];
    });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    auto& sa = a.shape();
    auto& sb = b.shape();
    if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
        throw std::invalid_argument("concat_channels: shape mismatch");
    int B = sa[0], Ca = sa[1], Cb = sb[1], H = sa[2], W = sa[3];
    long long hw = (long long)H * W;
    std::vector<double> v((long long)B * (Ca + Cb) * hw);
    for (int n = 0; n < B; ++n) {
        std::copy(a.data().begin() + n * Ca * hw, a.data().begin() + (n + 1) * Ca * hw,
                  v.begin() + (long long)n * (Ca + Cb) * hw);
        std::copy(b.data().begin() + n * Cb * hw, b.data().begin() + (n + 1) * Cb * hw,
                  v.begin() + (long long)n * (Ca + Cb) * hw + Ca * hw);
    }
    return make_op({B, Ca + Cb, H, W}, std::move(v), {a, b}, [B, Ca, Cb, hw](TensorNode& s) {
        for (int n = 0; n < B; ++n) {
            if (wants_grad(s, 0))
                for (long long i = 0; i < Ca * hw; ++i)
                    s.parents[0]->grad[n * Ca * hw + i] += s.grad[(long long)n * (Ca + Cb) * hw + i];
            if (wants_grad(s, 1))
                for (long long i = 0; i < Cb * hw; ++i)
                    s.parents[1]->grad[n * Cb * hw + i] +=
                        s.grad[(long long)n * (Ca + Cb) * hw + Ca * hw + i];
        }
    });
}

Tensor slice_lastdim(const Tensor& a, int start, int len) {
    int C = a.shape().back();
    if (start < 0 || len <= 0 || start + len > C)
        throw std::invalid_argument("slice_lastdim: bad range");
    long long R = a.size() / C;
    std::vector<double> v((size_t)R * len);
    for (long long r = 0; r < R; ++r)
        for (int j = 0; j < len; ++j) v[r * len + j] = a.data()[r * C + start + j];
    Shape out = a.shape();
    out.back() = len;
    return make_op(std::move(out), std::move(v), {a}, [R, C, start, len](TensorNode& s) {
        if (!wants_grad(s, 0)) return;
        for (long long r = 0; r < R; ++r)
            for (int j = 0; j < len; ++j)
                s.parents[0]->grad[r * C + start + j] += s.grad[r * len + j];
    });
}

Tensor slice_batch(const Tensor& a, int b) {
    if (a.shape().empty()) throw std::invalid_argument("slice_batch: scalar input");
    int B = a.shape()[0];
    if (b < 0 || b >= B) throw std::invalid_argument("slice_batch: index out of range");
    long long per = a.size() / B;
    std::vector<double> v((size_t)per);
    std::copy(a.data().begin() + (size_t)b * per, a.data().begin() + (size_t)(b + 1) * per,
              v.begin());
    Shape out = a.shape();
    out[0] = 1;
    return make_op(std::move(out), std::move(v), {a}, [b, per](TensorNode& s) {
        if (!wants_grad(s, 0)) return;
        for (long long i = 0; i < per; ++i) s.parents[0]->grad[(size_t)b * per + i] += s.grad[i];
    });
}

// ---------------- linear algebra ----------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    auto& sa = a.shape();
    auto& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw std::invalid_argument("matmul: shape mismatch");
    int M = sa[0], K = sa[1], N = sb[1];
    std::vector<double> v((long long)M * N);
    CMapM A(a.data().data(), M, K), B(b.data().data(), K, N);
    MapM(v.data(), M, N) = A * B;
    return make_op({M, N}, std::move(v), {a, b}, [M, K, N](TensorNode& s) {
        CMapM G(s.grad.data(), M, N);
        CMapM A(s.parents[0]->value.data(), M, K);
        CMapM B(s.parents[1]->value.data(), K, N);
        if (wants_grad(s, 0)) MapM(s.parents[0]->grad.data(), M, K) += G * B.transpose();
        if (wants_grad(s, 1)) MapM(s.parents[1]->grad.data(), K, N) += A.transpose() * G;
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    auto& sa = a.shape();
    auto& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[1])
        throw std::invalid_argument("matmul_nt: shape mismatch");
    int M = sa[0], K = sa[1], N = sb[0];
    std::vector<double> v((long long)M * N);
    CMapM A(a.data().data(), M, K), B(b.data().data(), N, K);
    MapM(v.data(), M, N) = A * B.transpose();
    return make_op({M, N}, std::move(v), {a, b}, [M, K, N](TensorNode& s) {
        CMapM G(s.grad.data(), M, N);
        CMapM A(s.parents[0]->value.data(), M, K);
        CMapM B(s.parents[1]->value.data(), N, K);
        if (wants_grad(s, 0)) MapM(s.parents[0]->grad.data(), M, K) += G * B;
        if (wants_grad(s, 1)) MapM(s.parents[1]->grad.data(), N, K) += G.transpose() * A;
    });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    auto& sa = a.shape();
    auto& sb = b.shape();
    if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1])
        throw std::invalid_argument("bmm: shape mismatch");
    int Bn = sa[0], M = sa[1], K = sa[2], N = sb[2];
    std::vector<double> v((long long)Bn * M * N);
    for (int i = 0; i < Bn; ++i) {
        CMapM A(a.data().data() + (long long)i * M * K, M, K);
        CMapM B(b.data().data() + (long long)i * K * N, K, N);
        MapM(v.data() + (long long)i * M * N, M, N) = A * B;
    }
    return make_op({Bn, M, N}, std::move(v), {a, b}, [Bn, M, K, N](TensorNode& s) {
        bool ga = wants_grad(s, 0), gb = wants_grad(s, 1);
        for (int i = 0; i < Bn; ++i) {
            CMapM G(s.grad.data() + (long long)i * M * N, M, N);
            CMapM A(s.parents[0]->value.data() + (long long)i * M * K, M, K);
            CMapM B(s.parents[1]->value.data() + (long long)i * K * N, K, N);
            if (ga) MapM(s.parents[0]->grad.data() + (long long)i * M * K, M, K) += G * B.transpose();
            if (gb) MapM(s.parents[1]->grad.data() + (long long)i * K * N, K, N) += A.transpose() * G;
        }
    });
}

Tensor add_rowwise(const Tensor& a, const Tensor& b) {
    int N = b.shape().back();
    if ((int)b.shape().size() != 1 || a.shape().back() != N || a.size() % N != 0)
        throw std::invalid_argument("add_rowwise: shape mismatch");
    long long R = a.size() / N;
    std::vector<double> v(a.size());
    for (long long r = 0; r < R; ++r)
        for (int j = 0; j < N; ++j) v[r * N + j] = a.data()[r * N + j] + b.data()[j];
    return make_op(a.shape(), std::move(v), {a, b}, [R, N](TensorNode& s) {
        if (wants_grad(s, 0))
            for (size_t i = 0; i < s.grad.size(); ++i) s.parents[0]->grad[i] += s.grad[i];
        if (wants_grad(s, 1))
            for (long long r = 0; r < R; ++r)
                for (int j = 0; j < N; ++j) s.parents[1]->grad[j] += s.grad[r * N + j];
    });
}

// ---------------- conv / pooling ----------------

namespace {
struct ConvGeom {
    int B, Ci, H, W, Co, kh, kw, stride, pad, Ho, Wo;
};

void im2col(const double* x, const ConvGeom& g, double* col) {
    // col: [Ci*kh*kw, Ho*Wo]
    int L = g.Ho * g.Wo;
    for (int c = 0; c < g.Ci; ++c)
        for (int ky = 0; ky < g.kh; ++ky)
            for (int kx = 0; kx < g.kw; ++kx) {
                double* row = col + ((long long)(c * g.kh + ky) * g.kw + kx) * L;
                for (int oy = 0; oy < g.Ho; ++oy) {
                    int iy = oy * g.stride - g.pad + ky;
                    for (int ox = 0; ox < g.Wo; ++ox) {
                        int ix = ox * g.stride - g.pad + kx;
                        row[oy * g.Wo + ox] =
                            (iy >= 0 && iy < g.H && ix >= 0 && ix < g.W)
                                ? x[((long long)c * g.H + iy) * g.W + ix]
                                : 0.0;
                    }
                }
            }
}

void col2im_add(const double* col, const ConvGeom& g, double* x) {
    int L = g.Ho * g.Wo;
    for (int c = 0; c < g.Ci; ++c)
        for (int ky = 0; ky < g.kh; ++ky)
            for (int kx = 0; kx < g.kw; ++kx) {
                const double* row = col + ((long long)(c * g.kh + ky) * g.kw + kx) * L;
                for (int oy = 0; oy < g.Ho; ++oy) {
                    int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.H) continue;
                    for (int ox = 0; ox < g.Wo; ++ox) {
                        int ix = ox * g.stride - g.pad + kx;
                        if (ix < 0 || ix >= g.W) continue;
                        x[((long long)c * g.H + iy) * g.W + ix] += row[oy * g.Wo + ox];
                    }
                }
            }
}
}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    auto& sx = x.shape();
    auto& sw = w.shape();
    if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[1])
        throw std::invalid_argument("conv2d: shape mismatch");
    ConvGeom g;
    g.B = sx[0]; g.Ci = sx[1]; g.H = sx[2]; g.W = sx[3];
    g.Co = sw[0]; g.kh = sw[2]; g.kw = sw[3];
    g.stride = stride; g.pad = pad;
    g.Ho = (g.H + 2 * pad - g.kh) / stride + 1;
    g.Wo = (g.W + 2 * pad - g.kw) / stride + 1;
    if (b.shape() != Shape{g.Co}) throw std::invalid_argument("conv2d: bias shape");
    int K = g.Ci * g.kh * g.kw, L = g.Ho * g.Wo;
    std::vector<double> v((long long)g.B * g.Co * L);
    std::vector<double> col((long long)K * L);
    for (int n = 0; n < g.B; ++n) {
        im2col(x.data().data() + (long long)n * g.Ci * g.H * g.W, g, col.data());
        CMapM W_(w.data().data(), g.Co, K);
        CMapM C_(col.data(), K, L);
        MapM Y(v.data() + (long long)n * g.Co * L, g.Co, L);
        Y = W_ * C_;
        for (int c = 0; c < g.Co; ++c) Y.row(c).array() += b.data()[c];
    }
    return make_op({g.B, g.Co, g.Ho, g.Wo}, std::move(v), {x, w, b}, [g, K, L](TensorNode& s) {
        bool gx = wants_grad(s, 0), gw = wants_grad(s, 1), gb = wants_grad(s, 2);
        std::vector<double> col((long long)K * L), dcol((long long)K * L);
        for (int n = 0; n < g.B; ++n) {
            CMapM G(s.grad.data() + (long long)n * g.Co * L, g.Co, L);
            if (gw || gx)
                im2col(s.parents[0]->value.data() + (long long)n * g.Ci * g.H * g.W, g, col.data());
            if (gw) {
                CMapM C_(col.data(), K, L);
                MapM(s.parents[1]->grad.data(), g.Co, K) += G * C_.transpose();
            }
            if (gb)
                for (int c = 0; c < g.Co; ++c)
                    s.parents[2]->grad[c] += G.row(c).sum();
            if (gx) {
                CMapM W_(s.parents[1]->value.data(), g.Co, K);
                MapM(dcol.data(), K, L) = W_.transpose() * G;
                col2im_add(dcol.data(), g,
                           s.parents[0]->grad.data() + (long long)n * g.Ci * g.H * g.W);
            }
        }
    });
}

Tensor global_avg_pool(const Tensor& x) {
    auto& sx = x.shape();
    if (sx.size() != 4) throw std::invalid_argument("global_avg_pool: want NCHW");
    int B = sx[0], C = sx[1];
    long long hw = (long long)sx[2] * sx[3];
    std::vector<double> v((long long)B * C);
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            double acc = 0;
            const double* p = x.data().data() + ((long long)n * C + c) * hw;
            for (long long i = 0; i < hw; ++i) acc += p[i];
            v[n * C + c] = acc / (double)hw;
        }
    return make_op({B, C}, std::move(v), {x}, [B, C, hw](TensorNode& s) {
        if (!wants_grad(s, 0)) return;
        for (int n = 0; n < B; ++n)
            for (int c = 0; c < C; ++c) {
                double g = s.grad[n * C + c] / (double)hw;
                double* p = s.parents[0]->grad.data() + ((long long)n * C + c) * hw;
                for (long long i = 0; i < hw; ++i) p[i] += g;
            }
    });
}

Tensor upsample_nearest(const Tensor& x, int f) {
    auto& sx = x.shape();
    if (sx.size() != 4) throw std::invalid_argument("upsample_nearest: want NCHW");
    int B = sx[0], C = sx[1], H = sx[2], W = sx[3];
    int Ho = H * f, Wo = W * f;
    std::vector<double> v((long long)B * C * Ho * Wo);
    for (int nc = 0; nc < B * C; ++nc)
        for (int y = 0; y < Ho; ++y)
            for (int xw = 0; xw < Wo; ++xw)
                v[((long long)nc * Ho + y) * Wo + xw] =
                    x.data()[((long long)nc * H + y / f) * W + xw / f];
    return make_op({B, C, Ho, Wo}, std::move(v), {x}, [B, C, H, W, f, Ho, Wo](TensorNode& s) {
        if (!wants_grad(s, 0)) return;
        for (int nc = 0; nc < B * C; ++nc)
            for (int y = 0; y < Ho; ++y)
                for (int xw = 0; xw < Wo; ++xw)
                    s.parents[0]->grad[((long long)nc * H + y / f) * W + xw / f] +=
                        s.grad[((long long)nc * Ho + y) * Wo + xw];
    });
}

Tensor grid_resample(const Tensor& x, const GridMap& map) {
    auto& sx = x.shape();
    if (sx.size() != 4 || sx[2] != map.h || sx[3] != map.w)
        throw std::invalid_argument("grid_resample: grid mismatch");
    int B = sx[0], C = sx[1];
    long long hw = (long long)map.h * map.w;
    std::vector<double> v((long long)B * C * hw, 0.0);
    for (int nc = 0; nc < B * C; ++nc) {
        const double* in = x.data().data() + nc * hw;
        double* out = v.data() + nc * hw;
        for (long long o = 0; o < hw; ++o)
            for (const auto& t : map.taps[o])
                if (t.src >= 0) out[o] += t.w * in[t.src];
    }
    GridMap m = map;
    return make_op(sx, std::move(v), {x}, [B, C, hw, m](TensorNode& s) {
        if (!wants_grad(s, 0)) return;
        for (int nc = 0; nc < B * C; ++nc) {
            double* gin = s.parents[0]->grad.data() + nc * hw;
            const double* gout = s.grad.data() + nc * hw;
            for (long long o = 0; o < hw; ++o)
                for (const auto& t : m.taps[o])
                    if (t.src >= 0) gin[t.src] += t.w * gout[o];
        }
    });
}

// ---------------- normalization ----------------

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    BatchNormState& state, bool training, double momentum, double eps) {
    auto& sx = x.shape();
    if (sx.size() != 4) throw std::invalid_argument("batch_norm2d: want NCHW");
    int B = sx[0], C = sx[1];
    long long hw = (long long)sx[2] * sx[3], n_per_c = (long long)B * hw;
    if ((int)state.running_mean.size() != C) {
        state.running_mean.assign(C, 0.0);
        state.running_var.assign(C, 1.0);
    }
    std::vector<double> mean(C), var(C);
    if (training) {
        for (int c = 0; c < C; ++c) {
            double m = 0;
            for (int n = 0; n < B; ++n) {
                const double* p = x.data().data() + ((long long)n * C + c) * hw;
                for (long long i = 0; i < hw; ++i) m += p[i];
            }
            m /= (double)n_per_c;
            double v2 = 0;
            for (int n = 0; n < B; ++n) {
                const double* p = x.data().data() + ((long long)n * C + c) * hw;
                for (long long i = 0; i < hw; ++i) v2 += (p[i] - m) * (p[i] - m);
            }
            v2 /= (double)n_per_c;  // biased, matches normalization path
            mean[c] = m;
            var[c] = v2;
            state.running_mean[c] = (1 - momentum) * state.running_mean[c] + momentum * m;
            state.running_var[c] = (1 - momentum) * state.running_var[c] + momentum * v2;
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }
    std::vector<double> inv_std(C);
    for (int c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    std::vector<double> v(x.size());
    std::vector<double> xhat;  // kept for training backward
    if (training) xhat.resize(x.size());
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            const double* p = x.data().data() + ((long long)n * C + c) * hw;
            double* q = v.data() + ((long long)n * C + c) * hw;
            double* xh = training ? xhat.data() + ((long long)n * C + c) * hw : nullptr;
            double g = gamma.data()[c], b = beta.data()[c];
            for (long long i = 0; i < hw; ++i) {
                double h = (p[i] - mean[c]) * inv_std[c];
                if (xh) xh[i] = h;
                q[i] = g * h + b;
            }
        }
    if (!training) {
        return make_op(sx, std::move(v), {x, gamma, beta},
                       [B, C, hw, mean, inv_std](TensorNode& s) {
            bool gx = wants_grad(s, 0), gg = wants_grad(s, 1), gb = wants_grad(s, 2);
            for (int n = 0; n < B; ++n)
                for (int c = 0; c < C; ++c) {
                    const double* g = s.grad.data() + ((long long)n * C + c) * hw;
                    const double* xv = s.parents[0]->value.data() + ((long long)n * C + c) * hw;
                    double gam = s.parents[1]->value[c];
                    for (long long i = 0; i < hw; ++i) {
                        double h = (xv[i] - mean[c]) * inv_std[c];
                        if (gx) s.parents[0]->grad[((long long)n * C + c) * hw + i] +=
                            g[i] * gam * inv_std[c];
                        if (gg) s.parents[1]->grad[c] += g[i] * h;
                        if (gb) s.parents[2]->grad[c] += g[i];
                    }
                }
        });
    }
    return make_op(sx, std::move(v), {x, gamma, beta},
                   [B, C, hw, n_per_c, inv_std, xhat](TensorNode& s) {
        bool gx = wants_grad(s, 0), gg = wants_grad(s, 1), gb = wants_grad(s, 2);
        for (int c = 0; c < C; ++c) {
            double sum_g = 0, sum_gh = 0;
            for (int n = 0; n < B; ++n) {
                const double* g = s.grad.data() + ((long long)n * C + c) * hw;
                const double* xh = xhat.data() + ((long long)n * C + c) * hw;
                for (long long i = 0; i < hw; ++i) {
                    sum_g += g[i];
                    sum_gh += g[i] * xh[i];
                }
            }
            if (gg) s.parents[1]->grad[c] += sum_gh;
            if (gb) s.parents[2]->grad[c] += sum_g;
            if (gx) {
                double gam = s.parents[1]->value[c];
                double inv_n = 1.0 / (double)n_per_c;
                for (int n = 0; n < B; ++n) {
                    const double* g = s.grad.data() + ((long long)n * C + c) * hw;
                    const double* xh = xhat.data() + ((long long)n * C + c) * hw;
                    double* dx = s.parents[0]->grad.data() + ((long long)n * C + c) * hw;
                    for (long long i = 0; i < hw; ++i)
                        dx[i] += gam * inv_std[c] *
                                 (g[i] - inv_n * sum_g - xh[i] * inv_n * sum_gh);
                }
            }
        }
    });
}

Tensor layer_norm_lastdim(const Tensor& x, double eps) {
    int C = x.shape().back();
    long long R = x.size() / C;
    std::vector<double> v(x.size());
    std::vector<double> mu(R), istd(R);
    for (long long r = 0; r < R; ++r) {
        const double* p = x.data().data() + r * C;
        double m = 0;
        for (int j = 0; j < C; ++j) m += p[j];
        m /= C;
        double var = 0;
        for (int j = 0; j < C; ++j) var += (p[j] - m) * (p[j] - m);
        var /= C;
        mu[r] = m;
        istd[r] = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < C; ++j) v[r * C + j] = (p[j] - m) * istd[r];
    }
    return make_op(x.shape(), std::move(v), {x}, [C, R, istd](TensorNode& s) {
        if (!wants_grad(s, 0)) return;
        for (long long r = 0; r < R; ++r) {
            const double* g = s.grad.data() + r * C;
            const double* h = s.value.data() + r * C;  // xhat
            double sum_g = 0, sum_gh = 0;
            for (int j = 0; j < C; ++j) {
                sum_g += g[j];
                sum_gh += g[j] * h[j];
            }
            double* dx = s.parents[0]->grad.data() + r * C;
            for (int j = 0; j < C; ++j)
                dx[j] += istd[r] * (g[j] - sum_g / C - h[j] * sum_gh / C);
        }
    });
}

// ---------------- token ops ----------------

Tensor scale_shift_tokens(const Tensor& x, const Tensor& s_, const Tensor& t_) {
    auto& sx = x.shape();
    if (sx.size() != 3) throw std::invalid_argument("scale_shift_tokens: want [B,T,C]");
    int B = sx[0], T = sx[1], C = sx[2];
    if (s_.shape() != Shape{B, C} || t_.shape() != Shape{B, C})
        throw std::invalid_argument("scale_shift_tokens: cond shape");
    std::vector<double> v(x.size());
    for (int b = 0; b < B; ++b)
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < C; ++c) {
                long long i = ((long long)b * T + t) * C + c;
                v[i] = x.data()[i] * (1.0 + s_.data()[b * C + c]) + t_.data()[b * C + c];
            }
    return make_op(sx, std::move(v), {x, s_, t_}, [B, T, C](TensorNode& s) {
        bool gx = wants_grad(s, 0), gs = wants_grad(s, 1), gt = wants_grad(s, 2);
        for (int b = 0; b < B; ++b)
            for (int t = 0; t < T; ++t)
                for (int c = 0; c < C; ++c) {
                    long long i = ((long long)b * T + t) * C + c;
                    double g = s.grad[i];
                    if (gx) s.parents[0]->grad[i] += g * (1.0 + s.parents[1]->value[b * C + c]);
                    if (gs) s.parents[1]->grad[b * C + c] += g * s.parents[0]->value[i];
                    if (gt) s.parents[2]->grad[b * C + c] += g;
                }
    });
}

Tensor add_token_bias(const Tensor& x, const Tensor& pos) {
    auto& sx = x.shape();
    if (sx.size() != 3) throw std::invalid_argument("add_token_bias: want [B,T,C]");
    int B = sx[0], T = sx[1], C = sx[2];
    if (pos.shape() != Shape{T, C}) throw std::invalid_argument("add_token_bias: pos shape");
    std::vector<double> v(x.size());
    for (int b = 0; b < B; ++b)
        for (long long i = 0; i < (long long)T * C; ++i)
            v[(long long)b * T * C + i] = x.data()[(long long)b * T * C + i] + pos.data()[i];
    return make_op(sx, std::move(v), {x, pos}, [B, T, C](TensorNode& s) {
        if (wants_grad(s, 0))
            for (size_t i = 0; i < s.grad.size(); ++i) s.parents[0]->grad[i] += s.grad[i];
        if (wants_grad(s, 1))
            for (int b = 0; b < B; ++b)
                for (long long i = 0; i < (long long)T * C; ++i)
                    s.parents[1]->grad[i] += s.grad[(long long)b * T * C + i];
    });
}

Tensor softmax_lastdim(const Tensor& x) {
    int C = x.shape().back();
    long long R = x.size() / C;
    std::vector<double> v(x.size());
    for (long long r = 0; r < R; ++r) {
        const double* p = x.data().data() + r * C;
        double mx = p[0];
        for (int j = 1; j < C; ++j) mx = std::max(mx, p[j]);
        double z = 0;
        for (int j = 0; j < C; ++j) {
            v[r * C + j] = std::exp(p[j] - mx);
            z += v[r * C + j];
        }
        for (int j = 0; j < C; ++j) v[r * C + j] /= z;
    }
    return make_op(x.shape(), std::move(v), {x}, [C, R](TensorNode& s) {
        if (!wants_grad(s, 0)) return;
        for (long long r = 0; r < R; ++r) {
            const double* y = s.value.data() + r * C;
            const double* g = s.grad.data() + r * C;
            double dot = 0;
            for (int j = 0; j < C; ++j) dot += y[j] * g[j];
            double* dx = s.parents[0]->grad.data() + r * C;
            for (int j = 0; j < C; ++j) dx[j] += y[j] * (g[j] - dot);
        }
    });
}

// ---------------- objectives ----------------

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& labels) {
    auto& sx = logits.shape();
    if (sx.size() != 2 || (int)labels.size() != sx[0])
        throw std::invalid_argument("cross_entropy_mean: shape mismatch");
    int B = sx[0], N = sx[1];
    for (int y : labels)
        if (y < 0 || y >= N) throw std::invalid_argument("cross_entropy_mean: label out of range");
    std::vector<double> probs((long long)B * N);
    double loss = 0;
    for (int b = 0; b < B; ++b) {
        const double* p = logits.data().data() + (long long)b * N;
        double mx = p[0];
        for (int j = 1; j < N; ++j) mx = std::max(mx, p[j]);
        double z = 0;
        for (int j = 0; j < N; ++j) z += std::exp(p[j] - mx);
        double logz = mx + std::log(z);
        loss += logz - p[labels[b]];
        for (int j = 0; j < N; ++j) probs[(long long)b * N + j] = std::exp(p[j] - logz);
    }
    loss /= B;
    return make_op({1}, {loss}, {logits}, [B, N, labels, probs](TensorNode& s) {
        if (!wants_grad(s, 0)) return;
        double g = s.grad[0] / B;
        for (int b = 0; b < B; ++b)
            for (int j = 0; j < N; ++j)
                s.parents[0]->grad[(long long)b * N + j] +=
                    g * (probs[(long long)b * N + j] - (j == labels[b] ? 1.0 : 0.0));
    });
}

Tensor cosine_matrix(const Tensor& a, const Tensor& b, double eps) {
    auto& sa = a.shape();
    auto& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[1])
        throw std::invalid_argument("cosine_matrix: shape mismatch");
    int n = sa[0], m = sb[0], C = sa[1];
    std::vector<double> na(n), nb(m);
    for (int i = 0; i < n; ++i) {
        double s2 = 0;
        for (int c = 0; c < C; ++c) s2 += a.data()[i * C + c] * a.data()[i * C + c];
        na[i] = std::sqrt(s2 + eps * eps);
    }
    for (int j = 0; j < m; ++j) {
        double s2 = 0;
        for (int c = 0; c < C; ++c) s2 += b.data()[j * C + c] * b.data()[j * C + c];
        nb[j] = std::sqrt(s2 + eps * eps);
    }
    std::vector<double> v((long long)n * m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            double dot = 0;
            for (int c = 0; c < C; ++c) dot += a.data()[i * C + c] * b.data()[j * C + c];
            v[(long long)i * m + j] = dot / (na[i] * nb[j]);
        }
    return make_op({n, m}, std::move(v), {a, b}, [n, m, C, na, nb](TensorNode& s) {
        bool ga = wants_grad(s, 0), gb_ = wants_grad(s, 1);
        if (!ga && !gb_) return;
        auto& av = s.parents[0]->value;
        auto& bv = s.parents[1]->value;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) {
                double g = s.grad[(long long)i * m + j];
                if (g == 0.0) continue;
                double cij = s.value[(long long)i * m + j];
                // d cos / d a_i = b_j/(na*nb) - cij * a_i / na^2
                if (ga)
                    for (int c = 0; c < C; ++c)
                        s.parents[0]->grad[i * C + c] +=
                            g * (bv[j * C + c] / (na[i] * nb[j]) -
                                 cij * av[i * C + c] / (na[i] * na[i]));
                if (gb_)
                    for (int c = 0; c < C; ++c)
                        s.parents[1]->grad[j * C + c] +=
                            g * (av[i * C + c] / (na[i] * nb[j]) -
                                 cij * bv[j * C + c] / (nb[j] * nb[j]));
            }
    });
}

}  // namespace ma2mi
