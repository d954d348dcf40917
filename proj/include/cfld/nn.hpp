#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "numkit/rng.hpp"
#include "numkit/tensor.hpp"

// Network building blocks shared by the codec, the source encoder, the prompt
// decoder, the pose adapter and the UNet. Everything is templated on the
// scalar type so whole blocks can be instantiated in double for the
// finite-difference oracle.

namespace cfld {

using numkit::Rng;
using numkit::Shape;
using numkit::Tensor;

// Ordered named parameters of a module tree.
template <typename T>
struct ParamList {
    std::vector<std::pair<std::string, Tensor<T>>> items;

    void add(const std::string& name, const Tensor<T>& t) { items.emplace_back(name, t); }

    void set_trainable(bool trainable) {
        for (auto& [n, t] : items) {
            Tensor<T> h = t;
            h.set_requires_grad(trainable);
        }
    }

    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& [name, t] : items) n += t.numel();
        return n;
    }
};

namespace tokens {

// [C,H,W] -> [H*W, C]
template <typename T>
Tensor<T> from_chw(const Tensor<T>& x) {
    const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    return numkit::transpose2d(numkit::reshape(x, {c, hw}));
}

// [H*W, C] -> [C,H,W]
template <typename T>
Tensor<T> to_chw(const Tensor<T>& t, std::size_t h, std::size_t w) {
    const std::size_t c = t.dim(1);
    return numkit::reshape(numkit::transpose2d(t), {c, h, w});
}

}  // namespace tokens

template <typename T>
struct Linear {
    Tensor<T> w;  // [in, out]
    Tensor<T> b;  // [out] or undefined

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, double init_std = 0.02, bool bias = true) {
        w = Tensor<T>::zeros({in, out});
        rng.fill_gaussian(w.mutable_values(), init_std);
        w.set_requires_grad(true);
        if (bias) {
            b = Tensor<T>::zeros({out});
            b.set_requires_grad(true);
        }
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> y = numkit::matmul(x, w);
        return b.defined() ? numkit::add_rowvec(y, b) : y;
    }

    void params(const std::string& prefix, ParamList<T>& out) const {
        out.add(prefix + ".w", w);
        if (b.defined()) out.add(prefix + ".b", b);
    }
};

template <typename T>
struct Conv2d {
    Tensor<T> w;  // [O,C,kh,kw]
    Tensor<T> b;  // [O]
    std::size_t stride = 1;
    std::size_t pad = 0;

    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t k, std::size_t stride_, std::size_t pad_,
           Rng& rng)
        : stride(stride_), pad(pad_) {
        w = Tensor<T>::zeros({out, in, k, k});
        rng.fill_gaussian(w.mutable_values(), std::sqrt(2.0 / double(in * k * k)));
        w.set_requires_grad(true);
        b = Tensor<T>::zeros({out});
        b.set_requires_grad(true);
    }

    // Zero convolution: 1x1, weight and bias all zero, so the branch it gates
    // contributes nothing at initialization.
    static Conv2d zero(std::size_t in, std::size_t out) {
        Conv2d c;
        c.w = Tensor<T>::zeros({out, in, 1, 1});
        c.w.set_requires_grad(true);
        c.b = Tensor<T>::zeros({out});
        c.b.set_requires_grad(true);
        c.stride = 1;
        c.pad = 0;
        return c;
    }

    Tensor<T> forward(const Tensor<T>& x) const { return numkit::conv2d(x, w, b, stride, pad); }

    void params(const std::string& prefix, ParamList<T>& out) const {
        out.add(prefix + ".w", w);
        out.add(prefix + ".b", b);
    }
};

template <typename T>
struct GroupNorm {
    Tensor<T> gamma, beta;
    std::size_t groups = 1;

    GroupNorm() = default;
    GroupNorm(std::size_t channels, std::size_t groups_) : groups(groups_) {
        gamma = Tensor<T>::full({channels}, T(1));
        gamma.set_requires_grad(true);
        beta = Tensor<T>::zeros({channels});
        beta.set_requires_grad(true);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return numkit::group_norm(x, groups, gamma, beta); }

    void params(const std::string& prefix, ParamList<T>& out) const {
        out.add(prefix + ".gamma", gamma);
        out.add(prefix + ".beta", beta);
    }
};

template <typename T>
struct LayerNorm {
    Tensor<T> gamma, beta;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim) {
        gamma = Tensor<T>::full({dim}, T(1));
        gamma.set_requires_grad(true);
        beta = Tensor<T>::zeros({dim});
        beta.set_requires_grad(true);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return numkit::layer_norm(x, gamma, beta); }

    void params(const std::string& prefix, ParamList<T>& out) const {
        out.add(prefix + ".gamma", gamma);
        out.add(prefix + ".beta", beta);
    }
};

// Multi-head attention over token matrices. Queries come from x [Nq, dim];
// keys/values from ctx [Nk, ctx_dim]. An optional bias is added to the
// projected queries before the head split, and an optional key_extra is added
// to ctx for the key path only (positional encodings on keys).
template <typename T>
struct Attention {
    Linear<T> wq, wk, wv, wo;
    std::size_t heads = 1;
    std::size_t dim = 0;

    Attention() = default;
    Attention(std::size_t dim_, std::size_t ctx_dim, std::size_t heads_, Rng& rng)
        : wq(dim_, dim_, rng, 0.02, false),
          wk(ctx_dim, dim_, rng, 0.02, false),
          wv(ctx_dim, dim_, rng, 0.02, false),
          wo(dim_, dim_, rng, 0.02, false),
          heads(heads_),
          dim(dim_) {
        numkit::check(dim_ % heads_ == 0, "attention: dim " + std::to_string(dim_) +
                                              " not divisible by heads " +
                                              std::to_string(heads_));
    }

    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& ctx,
                      const Tensor<T>& query_bias = Tensor<T>(),
                      const Tensor<T>& key_extra = Tensor<T>(),
                      Tensor<T>* probs_out = nullptr) const {
        const std::size_t nq = x.dim(0);
        const std::size_t nk = ctx.dim(0);
        const std::size_t dh = dim / heads;

        Tensor<T> q = wq.forward(x);
        if (query_bias.defined()) q = numkit::add(q, query_bias);
        Tensor<T> k = wk.forward(key_extra.defined() ? numkit::add(ctx, key_extra) : ctx);
        Tensor<T> v = wv.forward(ctx);

        Tensor<T> qh = numkit::permute(numkit::reshape(q, {nq, heads, dh}), {1, 0, 2});
        Tensor<T> kh = numkit::permute(numkit::reshape(k, {nk, heads, dh}), {1, 2, 0});
        Tensor<T> vh = numkit::permute(numkit::reshape(v, {nk, heads, dh}), {1, 0, 2});

        Tensor<T> scores =
            numkit::mul_scalar(numkit::matmul(qh, kh), T(1.0 / std::sqrt(double(dh))));
        Tensor<T> probs = numkit::softmax(scores, 2);  // [heads, nq, nk]
        if (probs_out) *probs_out = probs.clone();
        Tensor<T> ctxh = numkit::matmul(probs, vh);  // [heads, nq, dh]
        Tensor<T> merged =
            numkit::reshape(numkit::permute(ctxh, {1, 0, 2}), {nq, dim});
        return wo.forward(merged);
    }

    void params(const std::string& prefix, ParamList<T>& out) const {
        wq.params(prefix + ".wq", out);
        wk.params(prefix + ".wk", out);
        wv.params(prefix + ".wv", out);
        wo.params(prefix + ".wo", out);
    }
};

template <typename T>
struct Mlp {
    Linear<T> fc1, fc2;

    Mlp() = default;
    Mlp(std::size_t dim, std::size_t hidden, Rng& rng)
        : fc1(dim, hidden, rng), fc2(hidden, dim, rng) {}

    Tensor<T> forward(const Tensor<T>& x) const {
        return fc2.forward(numkit::gelu(fc1.forward(x)));
    }

    void params(const std::string& prefix, ParamList<T>& out) const {
        fc1.params(prefix + ".fc1", out);
        fc2.params(prefix + ".fc2", out);
    }
};

// Pre-norm transformer encoder layer (self-attention + MLP).
template <typename T>
struct TransformerLayer {
    LayerNorm<T> ln1, ln2;
    Attention<T> attn;
    Mlp<T> mlp;

    TransformerLayer() = default;
    TransformerLayer(std::size_t dim, std::size_t heads, Rng& rng, std::size_t mlp_ratio = 4)
        : ln1(dim), ln2(dim), attn(dim, dim, heads, rng), mlp(dim, dim * mlp_ratio, rng) {}

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> h = ln1.forward(x);
        Tensor<T> y = numkit::add(x, attn.forward(h, h));
        return numkit::add(y, mlp.forward(ln2.forward(y)));
    }

    void params(const std::string& prefix, ParamList<T>& out) const {
        ln1.params(prefix + ".ln1", out);
        attn.params(prefix + ".attn", out);
        ln2.params(prefix + ".ln2", out);
        mlp.params(prefix + ".mlp", out);
    }
};

// Residual conv block with optional per-channel time conditioning
// (adaptive shift/scale computed from the time embedding).
template <typename T>
struct ResBlock {
    GroupNorm<T> gn1, gn2;
    Conv2d<T> conv1, conv2;
    Conv2d<T> skip;  // 1x1 when channel count changes, undefined weight otherwise
    Linear<T> temb_proj;  // [temb] -> [2*out]
    bool has_temb = false;
    bool has_skip = false;

    ResBlock() = default;
    ResBlock(std::size_t in, std::size_t out, std::size_t gn_groups, Rng& rng,
             std::size_t temb_dim = 0) {
        gn1 = GroupNorm<T>(in, gn_groups);
        conv1 = Conv2d<T>(in, out, 3, 1, 1, rng);
        gn2 = GroupNorm<T>(out, gn_groups);
        conv2 = Conv2d<T>(out, out, 3, 1, 1, rng);
        if (in != out) {
            skip = Conv2d<T>(in, out, 1, 1, 0, rng);
            has_skip = true;
        }
        if (temb_dim > 0) {
            temb_proj = Linear<T>(temb_dim, 2 * out, rng);
            has_temb = true;
        }
    }

    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& temb = Tensor<T>()) const {
        Tensor<T> h = conv1.forward(numkit::silu(gn1.forward(x)));
        if (has_temb) {
            numkit::check(temb.defined(), "res block expects a time embedding");
            const std::size_t out_ch = h.dim(0);
            Tensor<T> ss = temb_proj.forward(numkit::reshape(numkit::silu(temb), {1, temb.numel()}));
            ss = numkit::reshape(ss, {2 * out_ch});
            Tensor<T> scale = numkit::slice0(ss, 0, out_ch);
            Tensor<T> shift = numkit::slice0(ss, out_ch, out_ch);
            h = numkit::add_axis0(numkit::mul_axis0(h, numkit::add_scalar(scale, T(1))), shift);
        }
        h = conv2.forward(numkit::silu(gn2.forward(h)));
        return numkit::add(h, has_skip ? skip.forward(x) : x);
    }

    void params(const std::string& prefix, ParamList<T>& out) const {
        gn1.params(prefix + ".gn1", out);
        conv1.params(prefix + ".conv1", out);
        gn2.params(prefix + ".gn2", out);
        conv2.params(prefix + ".conv2", out);
        if (has_skip) skip.params(prefix + ".skip", out);
        if (has_temb) temb_proj.params(prefix + ".temb", out);
    }
};

// Sinusoidal embedding of a (possibly fractional) scalar position.
template <typename T>
Tensor<T> sinusoidal_embedding(double pos, std::size_t dim) {
    Tensor<T> out = Tensor<T>::zeros({dim});
    T* p = out.mutable_data();
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        p[i] = static_cast<T>(std::sin(pos * freq));
        p[half + i] = static_cast<T>(std::cos(pos * freq));
    }
    return out;
}

// Fixed 2-D sinusoidal positional encoding over an h*w token grid; the first
// half of the channel dim encodes y, the second half x.
template <typename T>
Tensor<T> sinusoidal_2d(std::size_t h, std::size_t w, std::size_t dim) {
    Tensor<T> out = Tensor<T>::zeros({h * w, dim});
    T* p = out.mutable_data();
    const std::size_t half = dim / 2;
    const std::size_t quarter = half / 2;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            T* row = p + (y * w + x) * dim;
            for (std::size_t i = 0; i < quarter; ++i) {
                const double freq = std::exp(-std::log(10000.0) * double(i) / double(quarter));
                row[i] = static_cast<T>(std::sin(double(y) * freq));
                row[quarter + i] = static_cast<T>(std::cos(double(y) * freq));
                row[half + i] = static_cast<T>(std::sin(double(x) * freq));
                row[half + quarter + i] = static_cast<T>(std::cos(double(x) * freq));
            }
        }
    }
    return out;
}

}  // namespace cfld
