#pragma once

// Network building blocks on top of the autodiff engine: parameter store,
// linear layers, multi-head attention with an optional KV cache, pre-norm
// transformer blocks and DiT-style adaptive-norm blocks.

#include <cassert>
#include <map>
#include <string>
#include <vector>

#include "par/nn/tensor.hpp"
#include "par/rng.hpp"

namespace par::nn {

template <typename T>
class ParamStore {
public:
    Ref<T> create(const std::string& name, int rows, int cols, double init_std, Rng& rng) {
        auto p = make_tensor<T>(rows, cols, true);
        if (init_std > 0.0)
            for (auto& x : p->v) x = static_cast<T>(rng.normal() * init_std);
        add(name, p);
        return p;
    }

    Ref<T> create_const(const std::string& name, int rows, int cols, double value) {
        auto p = make_tensor<T>(rows, cols, true);
        for (auto& x : p->v) x = static_cast<T>(value);
        add(name, p);
        return p;
    }

    void add(const std::string& name, const Ref<T>& p) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        index_[name] = params_.size();
        params_.push_back({name, p});
    }

    const std::vector<std::pair<std::string, Ref<T>>>& all() const { return params_; }

    Ref<T> find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : params_[it->second].second;
    }

    size_t count() const {
        size_t n = 0;
        for (auto& [_, p] : params_) n += p->numel();
        return n;
    }

    void zero_grads() {
        for (auto& [_, p] : params_) zero_grad(p);
    }

private:
    std::vector<std::pair<std::string, Ref<T>>> params_;
    std::map<std::string, size_t> index_;
};

/// Interleaved sin/cos embedding at geometric frequencies spanning [1, 1e4];
/// used for the flow time t and for real-valued interpolated positions.
template <typename T>
std::vector<T> sinusoidal_embed(double value, int dim) {
    if (dim % 2 != 0) throw std::invalid_argument("sinusoidal_embed: dim must be even");
    const int half = dim / 2;
    std::vector<T> out(dim);
    for (int k = 0; k < half; ++k) {
        double freq = half == 1 ? 1.0 : std::pow(10.0, 4.0 * k / (half - 1));
        out[2 * k] = static_cast<T>(std::sin(value * freq));
        out[2 * k + 1] = static_cast<T>(std::cos(value * freq));
    }
    return out;
}

template <typename T>
Ref<T> sinusoidal_embed_rows(const std::vector<double>& values, int dim) {
    auto out = make_tensor<T>(static_cast<int>(values.size()), dim);
    for (size_t i = 0; i < values.size(); ++i) {
        auto row = sinusoidal_embed<T>(values[i], dim);
        std::copy(row.begin(), row.end(), out->v.begin() + i * dim);
    }
    return out;
}

template <typename T>
struct Linear {
    Ref<T> w, b;

    void init(ParamStore<T>& store, const std::string& name, int in, int out, Rng& rng,
              bool zero_init = false) {
        double std = zero_init ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in));
        w = store.create(name + ".w", in, out, std, rng);
        b = store.create(name + ".b", 1, out, 0.0, rng);
    }

    Ref<T> operator()(const Ref<T>& x) const { return add_rowvec(matmul(x, w), b); }
};

/// Per-layer key/value store for incremental decoding. Appended segments are
/// validated against the owning layer's head geometry.
template <typename T>
struct KvCache {
    struct Layer {
        std::vector<T> k, v;  // row-major [filled, dim]
        int filled = 0;
        int dim = 0;
    };
    std::vector<Layer> layers;
    int heads = 0;

    void reset(int num_layers, int dim, int num_heads) {
        layers.assign(num_layers, Layer{{}, {}, 0, dim});
        heads = num_heads;
    }
};

template <typename T>
struct MultiHeadAttention {
    Linear<T> wq, wk, wv, wo;
    int dim = 0, heads = 0;

    void init(ParamStore<T>& store, const std::string& name, int d, int h, Rng& rng) {
        if (d % h != 0) throw std::invalid_argument("attention: head count must divide dim");
        dim = d;
        heads = h;
        wq.init(store, name + ".q", d, d, rng);
        wk.init(store, name + ".k", d, d, rng);
        wv.init(store, name + ".v", d, d, rng);
        wo.init(store, name + ".o", d, d, rng);
    }

    /// Scaled dot-product attention. `mask` (optional) is an additive
    /// [Sq, Skv_total] matrix (0 / -inf style). With `cache`, kv_in holds
    /// only the new segment; keys/values are appended after use.
    Ref<T> operator()(const Ref<T>& q_in, const Ref<T>& kv_in, const Ref<T>& mask,
                      KvCache<T>* cache, int layer_index) const {
        auto q = wq(q_in);
        auto k = wk(kv_in);
        auto v = wv(kv_in);

        Ref<T> k_all = k, v_all = v;
        if (cache) {
            auto& layer = cache->layers.at(layer_index);
            if (layer.dim != dim || cache->heads != heads)
                throw std::invalid_argument("attention: cache/layer geometry mismatch");
            if (layer.filled > 0) {
                auto kc = from_data<T>(layer.filled, dim, layer.k);
                auto vc = from_data<T>(layer.filled, dim, layer.v);
                k_all = concat_rows<T>({kc, k});
                v_all = concat_rows<T>({vc, v});
            }
            layer.k.insert(layer.k.end(), k->v.begin(), k->v.end());
            layer.v.insert(layer.v.end(), v->v.begin(), v->v.end());
            layer.filled += k->rows;
        }

        const int hd = dim / heads;
        const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
        std::vector<Ref<T>> head_outs;
        head_outs.reserve(heads);
        for (int h = 0; h < heads; ++h) {
            auto qh = slice_cols(q, h * hd, (h + 1) * hd);
            auto kh = slice_cols(k_all, h * hd, (h + 1) * hd);
            auto vh = slice_cols(v_all, h * hd, (h + 1) * hd);
            auto logits = scale(matmul(qh, transpose(kh)), inv_sqrt);
            if (mask) logits = add(logits, mask);
            head_outs.push_back(matmul(softmax_rows(logits), vh));
        }
        return wo(concat_cols(head_outs));
    }
};

template <typename T>
struct LayerNorm {
    Ref<T> gain, bias;

    void init(ParamStore<T>& store, const std::string& name, int dim, Rng& rng) {
        gain = store.create_const(name + ".gain", 1, dim, 1.0);
        bias = store.create(name + ".bias", 1, dim, 0.0, rng);
    }

    Ref<T> operator()(const Ref<T>& x) const {
        return add_rowvec(mul_rowvec(layer_norm_rows(x), gain), bias);
    }
};

/// Pre-norm transformer block (attention + 4x MLP), used by the AR encoder.
template <typename T>
struct TransformerBlock {
    LayerNorm<T> ln1, ln2;
    MultiHeadAttention<T> attn;
    Linear<T> fc1, fc2;

    void init(ParamStore<T>& store, const std::string& name, int d, int h, Rng& rng) {
        ln1.init(store, name + ".ln1", d, rng);
        ln2.init(store, name + ".ln2", d, rng);
        attn.init(store, name + ".attn", d, h, rng);
        fc1.init(store, name + ".fc1", d, 4 * d, rng);
        fc2.init(store, name + ".fc2", 4 * d, d, rng);
    }

    Ref<T> operator()(const Ref<T>& x, const Ref<T>& mask, KvCache<T>* cache,
                      int layer_index) const {
        auto h = ln1(x);
        auto y = add(x, attn(h, h, mask, cache, layer_index));
        return add(y, fc2(silu(fc1(ln2(y)))));
    }
};

namespace detail {
template <typename T>
Ref<T> modulate(const Ref<T>& x_norm, const Ref<T>& shift, const Ref<T>& scale_) {
    return add(mul(x_norm, add_scalar(scale_, T(1))), shift);
}
}  // namespace detail

/// DiT-style block: per-token shift/scale/gate for attention and MLP derived
/// from the conditioning pathway; modulation projections are zero-initialized
/// so conditioning starts as a no-op.
template <typename T>
struct AdaLnBlock {
    MultiHeadAttention<T> attn;
    Linear<T> fc1, fc2;
    Linear<T> mod;  // cond_hidden -> 6*d, zero-init

    int d = 0;

    void init(ParamStore<T>& store, const std::string& name, int dim, int h, int cond_hidden,
              Rng& rng) {
        d = dim;
        attn.init(store, name + ".attn", dim, h, rng);
        fc1.init(store, name + ".fc1", dim, 4 * dim, rng);
        fc2.init(store, name + ".fc2", 4 * dim, dim, rng);
        mod.init(store, name + ".mod", cond_hidden, 6 * dim, rng, /*zero_init=*/true);
    }

    Ref<T> operator()(const Ref<T>& x, const Ref<T>& cond_hidden) const {
        auto m = mod(cond_hidden);  // [S, 6d]
        auto sh1 = slice_cols(m, 0, d);
        auto sc1 = slice_cols(m, d, 2 * d);
        auto g1 = slice_cols(m, 2 * d, 3 * d);
        auto sh2 = slice_cols(m, 3 * d, 4 * d);
        auto sc2 = slice_cols(m, 4 * d, 5 * d);
        auto g2 = slice_cols(m, 5 * d, 6 * d);

        auto h = detail::modulate(layer_norm_rows(x), sh1, sc1);
        auto y = add(x, mul(g1, attn(h, h, Ref<T>{}, nullptr, 0)));
        auto h2 = detail::modulate(layer_norm_rows(y), sh2, sc2);
        return add(y, mul(g2, fc2(silu(fc1(h2)))));
    }
};

/// Standard bias-corrected adaptive-moment optimizer.
template <typename T>
class Adam {
public:
    struct Hyper {
        double lr = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    Adam() = default;
    explicit Adam(Hyper h) : hp_(h) {}

    void attach(const ParamStore<T>& store) {
        m_.clear();
        v_.clear();
        for (auto& [_, p] : store.all()) {
            m_.emplace_back(p->numel(), T(0));
            v_.emplace_back(p->numel(), T(0));
        }
        step_ = 0;
    }

    void step(const ParamStore<T>& store) {
        ++step_;
        const double bc1 = 1.0 - std::pow(hp_.beta1, step_);
        const double bc2 = 1.0 - std::pow(hp_.beta2, step_);
        const auto& params = store.all();
        for (size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i].second;
            p->ensure_grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < p->numel(); ++j) {
                double g = static_cast<double>(p->g[j]);
                double mj = hp_.beta1 * m[j] + (1.0 - hp_.beta1) * g;
                double vj = hp_.beta2 * v[j] + (1.0 - hp_.beta2) * g * g;
                m[j] = static_cast<T>(mj);
                v[j] = static_cast<T>(vj);
                double update = hp_.lr * (mj / bc1) / (std::sqrt(vj / bc2) + hp_.eps);
                p->v[j] = static_cast<T>(p->v[j] - update);
            }
        }
    }

    long step_count() const { return step_; }
    Hyper& hyper() { return hp_; }

    // Serialization hooks for checkpointing.
    std::vector<std::vector<T>>& moments1() { return m_; }
    std::vector<std::vector<T>>& moments2() { return v_; }
    void set_step_count(long s) { step_ = s; }

private:
    Hyper hp_;
    std::vector<std::vector<T>> m_, v_;
    long step_ = 0;
};

}  // namespace par::nn
