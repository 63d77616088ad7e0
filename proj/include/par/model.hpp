#pragma once

// The PAR model: an AR transformer producing scale-wise conditioning and a
// flow decoder predicting the velocity field at each scale.

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "par/geometry.hpp"
#include "par/nn/layers.hpp"

namespace par {

/// Model hyperparameters. Defaults are the paper-scale configuration
/// (repr dim 512, 12 layers, 12 heads) divided by `divisor` for desk-scale
/// runs; use from_divisor() to derive a consistent set.
struct ModelConfig {
    int ar_dim = 128;
    int dec_dim = 128;
    int cond_dim = 64;
    int t_embed_dim = 64;
    int pos_embed_dim = 64;
    int scale_embed_dim = 32;  // decoder-side scale id embedding
    int ar_layers = 4;
    int dec_layers = 6;
    int heads = 8;
    bool scale_agnostic = false;  // drop learnable scale embeddings entirely
    double coord_scale = 0.1;     // Angstrom -> model units
    ScaleConfig scales;

    static ModelConfig from_divisor(int div) {
        ModelConfig c;
        c.ar_dim = c.dec_dim = std::max(16, 512 / div);
        c.cond_dim = std::max(8, 128 / div);
        c.t_embed_dim = std::max(8, 196 / div / 2 * 2);
        c.pos_embed_dim = std::max(8, 196 / div / 2 * 2);
        c.scale_embed_dim = std::max(8, 64 / div);
        c.ar_layers = std::max(2, 12 / div);
        c.dec_layers = std::max(2, 12 / div);
        c.heads = c.ar_dim % 8 == 0 ? 8 : 4;
        return c;
    }

    int max_scales() const { return static_cast<int>(scales.sizes.size()); }

    int dec_cond_in() const {
        return cond_dim + t_embed_dim + (scale_agnostic ? 0 : scale_embed_dim);
    }

    std::string echo() const {
        std::ostringstream os;
        os << "ar_dim=" << ar_dim << "\ndec_dim=" << dec_dim << "\ncond_dim=" << cond_dim
           << "\nt_embed_dim=" << t_embed_dim << "\npos_embed_dim=" << pos_embed_dim
           << "\nscale_embed_dim=" << scale_embed_dim << "\nar_layers=" << ar_layers
           << "\ndec_layers=" << dec_layers << "\nheads=" << heads
           << "\nscale_agnostic=" << (scale_agnostic ? 1 : 0) << "\ncoord_scale=" << coord_scale
           << "\nscale_mode=" << (scales.mode == ScaleMode::ByLength ? "length" : "ratio")
           << "\nscale_sizes=";
        for (size_t i = 0; i < scales.sizes.size(); ++i)
            os << (i ? "," : "") << scales.sizes[i];
        os << "\nblock=pre-norm\n";
        return os.str();
    }

    /// Parse the echo format back into a config (inverse of echo()).
    static ModelConfig from_echo(const std::string& text) {
        ModelConfig c;
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string key = line.substr(0, eq), val = line.substr(eq + 1);
            if (key == "ar_dim") c.ar_dim = std::stoi(val);
            else if (key == "dec_dim") c.dec_dim = std::stoi(val);
            else if (key == "cond_dim") c.cond_dim = std::stoi(val);
            else if (key == "t_embed_dim") c.t_embed_dim = std::stoi(val);
            else if (key == "pos_embed_dim") c.pos_embed_dim = std::stoi(val);
            else if (key == "scale_embed_dim") c.scale_embed_dim = std::stoi(val);
            else if (key == "ar_layers") c.ar_layers = std::stoi(val);
            else if (key == "dec_layers") c.dec_layers = std::stoi(val);
            else if (key == "heads") c.heads = std::stoi(val);
            else if (key == "scale_agnostic") c.scale_agnostic = val == "1";
            else if (key == "coord_scale") c.coord_scale = std::stod(val);
            else if (key == "scale_mode")
                c.scales.mode = val == "ratio" ? ScaleMode::ByRatio : ScaleMode::ByLength;
            else if (key == "scale_sizes") {
                c.scales.sizes.clear();
                std::istringstream vs(val);
                std::string tok;
                while (std::getline(vs, tok, ',')) c.scales.sizes.push_back(std::stoi(tok));
            }
        }
        return c;
    }
};

/// Per-scale conditioning produced by the AR transformer.
template <typename T>
struct Conditioning {
    nn::Ref<T> z;        // [size(i), cond_dim]
    int scale_index = 0;
    int scale_size = 0;
    int full_length = 0;  // L of the target ladder
};

template <typename T>
class ParModel {
public:
    ModelConfig cfg;
    nn::ParamStore<T> store;

    ParModel() = default;

    void build(const ModelConfig& config, Rng& rng) {
        cfg = config;
        const int d = cfg.ar_dim;
        bos_ = store.create("bos", bos_rows(), 3, 0.02, rng);
        ar_in_.init(store, "ar.in", 3, d, rng);
        ar_pos_.init(store, "ar.pos", cfg.pos_embed_dim, d, rng);
        if (!cfg.scale_agnostic)
            ar_scale_emb_ = store.create("ar.scale_emb", cfg.max_scales(), d, 0.02, rng);
        ar_blocks_.resize(cfg.ar_layers);
        for (int l = 0; l < cfg.ar_layers; ++l)
            ar_blocks_[l].init(store, "ar.block" + std::to_string(l), d, cfg.heads, rng);
        ar_out_ln_.init(store, "ar.out_ln", d, rng);
        ar_out_.init(store, "ar.out", d, cfg.cond_dim, rng);

        const int dd = cfg.dec_dim;
        dec_in_.init(store, "dec.in", 6, dd, rng);  // x_t (3) || self-cond (3)
        dec_pos_.init(store, "dec.pos", cfg.pos_embed_dim, dd, rng);
        if (!cfg.scale_agnostic)
            dec_scale_emb_ =
                store.create("dec.scale_emb", cfg.max_scales(), cfg.scale_embed_dim, 0.02, rng);
        dec_cond_.init(store, "dec.cond", cfg.dec_cond_in(), dd, rng);
        dec_blocks_.resize(cfg.dec_layers);
        for (int l = 0; l < cfg.dec_layers; ++l)
            dec_blocks_[l].init(store, "dec.block" + std::to_string(l), dd, cfg.heads, dd, rng);
        dec_final_mod_.init(store, "dec.final_mod", dd, 2 * dd, rng, /*zero_init=*/true);
        dec_head_.init(store, "dec.head", dd, 3, rng, /*zero_init=*/true);
    }

    int bos_rows() const {
        return cfg.scales.mode == ScaleMode::ByLength && !cfg.scales.sizes.empty()
                   ? cfg.scales.sizes.front()
                   : 16;
    }

    /// Begin-of-sequence 3D points, resampled to `m` rows if the resolved
    /// first scale differs from the stored shape (differentiable).
    nn::Ref<T> bos_points(int m) const { return nn::lerp_resample_rows(bos_, m); }

    /// AR transformer forward over scales [from_scale, from_scale + k). The
    /// token block for scale 1 is bos; for scale i > 1 it is `contexts[i-2]`
    /// upsampled to size(i) in model units (rows x 3). `contexts` holds the
    /// flattened model-space coordinates of scales from_scale-1 .. end.
    ///
    /// Training: from_scale=1, contexts = all n-1 prior scales, one full
    /// block-causal pass returning z^1..z^n. Inference: one scale per call
    /// with a KV cache.
    std::vector<Conditioning<T>> ar_forward(const std::vector<std::vector<T>>& contexts,
                                            const std::vector<int>& ladder, int L,
                                            nn::KvCache<T>* cache = nullptr,
                                            int from_scale = 1) const {
        const int n = static_cast<int>(ladder.size());
        const int upto = from_scale + static_cast<int>(contexts.size()) + (from_scale == 1 ? 1 : 0) - 1;
        if (upto > n) throw std::invalid_argument("ar_forward: more contexts than ladder scales");

        // Build the token blocks for scales from_scale..upto.
        std::vector<nn::Ref<T>> blocks;
        std::vector<int> block_sizes;
        int ctx_idx = 0;
        for (int i = from_scale; i <= upto; ++i) {
            const int m = ladder[i - 1];
            nn::Ref<T> tokens3;
            if (i == 1) {
                tokens3 = bos_points(m);
            } else {
                const auto& c = contexts[ctx_idx++];
                const int prev = static_cast<int>(c.size()) / 3;
                if (prev != ladder[i - 2])
                    throw std::invalid_argument("ar_forward: context length mismatch with ladder");
                tokens3 = nn::lerp_resample_rows(nn::from_data<T>(prev, 3, c), m);
            }
            auto emb = ar_in_(tokens3);
            auto pos = ar_pos_(nn::sinusoidal_embed_rows<T>(position_indices(L, m),
                                                            cfg.pos_embed_dim));
            emb = nn::add(emb, pos);
            if (!cfg.scale_agnostic) {
                int row = std::min(i - 1, ar_scale_emb_->rows - 1);
                emb = nn::add(emb, nn::repeat_row(nn::slice_rows(ar_scale_emb_, row, row + 1),
                                                  m));
            }
            blocks.push_back(emb);
            block_sizes.push_back(m);
        }
        auto x = blocks.size() == 1 ? blocks[0] : nn::concat_rows(blocks);

        // Block-causal mask: token at scale s attends to scales <= s. With a
        // cache, every cached token belongs to an earlier scale, so new
        // tokens may attend everywhere and no mask is needed.
        nn::Ref<T> mask;
        if (!cache && block_sizes.size() > 1) {
            mask = block_causal_mask(block_sizes, 0);
        } else if (cache && block_sizes.size() > 1) {
            mask = block_causal_mask(block_sizes, cache->layers.empty() ? 0
                                                                        : cache->layers[0].filled);
        }

        for (int l = 0; l < cfg.ar_layers; ++l) x = ar_blocks_[l](x, mask, cache, l);
        x = ar_out_(ar_out_ln_(x));

        std::vector<Conditioning<T>> out;
        int r = 0;
        for (size_t b = 0; b < blocks.size(); ++b) {
            Conditioning<T> c;
            c.z = nn::slice_rows(x, r, r + block_sizes[b]);
            c.scale_index = from_scale + static_cast<int>(b);
            c.scale_size = block_sizes[b];
            c.full_length = L;
            out.push_back(c);
            r += block_sizes[b];
        }
        return out;
    }

    /// Velocity prediction at one scale. `x_t` is flattened model-space
    /// coordinates [m*3]; `self_cond` (optional) is a clean-structure
    /// estimate of the same shape, zeros when absent.
    nn::Ref<T> decoder_forward(const std::vector<T>& x_t, double t, const Conditioning<T>& cond,
                               const std::vector<T>* self_cond = nullptr) const {
        const int m = static_cast<int>(x_t.size()) / 3;
        if (cond.z->rows != m)
            throw std::invalid_argument("decoder_forward: x_t/z shape mismatch");
        auto xt = nn::from_data<T>(m, 3, x_t);
        nn::Ref<T> sc;
        if (self_cond) {
            if (self_cond->size() != x_t.size())
                throw std::invalid_argument("decoder_forward: self_cond shape mismatch");
            sc = nn::from_data<T>(m, 3, *self_cond);
        } else {
            sc = nn::make_tensor<T>(m, 3);
        }
        auto h = dec_in_(nn::concat_cols<T>({xt, sc}));
        auto pos = dec_pos_(nn::sinusoidal_embed_rows<T>(
            position_indices(cond.full_length, m), cfg.pos_embed_dim));
        h = nn::add(h, pos);

        // Conditioning pathway: [z row || scale embedding || t embedding].
        std::vector<nn::Ref<T>> cond_parts{cond.z};
        if (!cfg.scale_agnostic) {
            int row = std::min(cond.scale_index - 1, dec_scale_emb_->rows - 1);
            cond_parts.push_back(
                nn::repeat_row(nn::slice_rows(dec_scale_emb_, row, row + 1), m));
        }
        auto temb = nn::from_data<T>(1, cfg.t_embed_dim, nn::sinusoidal_embed<T>(t, cfg.t_embed_dim));
        cond_parts.push_back(nn::repeat_row(temb, m));
        auto ch = nn::silu(dec_cond_(nn::concat_cols(cond_parts)));

        for (int l = 0; l < cfg.dec_layers; ++l) h = dec_blocks_[l](h, ch);

        auto fm = dec_final_mod_(ch);
        auto shift = nn::slice_cols(fm, 0, cfg.dec_dim);
        auto scale_ = nn::slice_cols(fm, cfg.dec_dim, 2 * cfg.dec_dim);
        h = nn::detail::modulate(nn::layer_norm_rows(h), shift, scale_);
        return dec_head_(h);
    }

    nn::KvCache<T> make_cache() const {
        nn::KvCache<T> c;
        c.reset(cfg.ar_layers, cfg.ar_dim, cfg.heads);
        return c;
    }

private:
    nn::Ref<T> block_causal_mask(const std::vector<int>& block_sizes, int cached) const {
        int total = cached;
        for (int s : block_sizes) total += s;
        int rows = total - cached;
        auto mask = nn::make_tensor<T>(rows, total);
        const T neg = static_cast<T>(-1e9);
        int q0 = 0;
        for (size_t b = 0; b < block_sizes.size(); ++b) {
            int q1 = q0 + block_sizes[b];
            int allowed = cached + q1;  // earlier scales plus own block
            for (int i = q0; i < q1; ++i)
                for (int j = allowed; j < total; ++j) mask->at(i, j) = neg;
            q0 = q1;
        }
        return mask;
    }

    nn::Ref<T> bos_;
    nn::Linear<T> ar_in_, ar_pos_, ar_out_;
    nn::Ref<T> ar_scale_emb_;
    std::vector<nn::TransformerBlock<T>> ar_blocks_;
    nn::LayerNorm<T> ar_out_ln_;

    nn::Linear<T> dec_in_, dec_pos_, dec_cond_;
    nn::Ref<T> dec_scale_emb_;
    std::vector<nn::AdaLnBlock<T>> dec_blocks_;
    nn::Linear<T> dec_final_mod_, dec_head_;
};

/// x_pred = x_t + (1 - t) * v
template <typename T>
std::vector<T> predict_clean(const std::vector<T>& x_t, double t, const std::vector<T>& v) {
    std::vector<T> out(x_t.size());
    for (size_t i = 0; i < x_t.size(); ++i)
        out[i] = x_t[i] + static_cast<T>(1.0 - t) * v[i];
    return out;
}

/// s = (t * v - x_t) / (1 - t); the caller must keep t <= 1 - delta.
template <typename T>
std::vector<T> score_from_velocity(const std::vector<T>& x_t, double t, const std::vector<T>& v,
                                   double delta = 1e-3) {
    if (t > 1.0 - delta)
        throw std::invalid_argument("score_from_velocity: t within singular guard band");
    std::vector<T> out(x_t.size());
    const T a = static_cast<T>(t), inv = static_cast<T>(1.0 / (1.0 - t));
    for (size_t i = 0; i < x_t.size(); ++i) out[i] = (a * v[i] - x_t[i]) * inv;
    return out;
}

}  // namespace par
