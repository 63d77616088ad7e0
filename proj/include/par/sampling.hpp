#pragma once

// ODE/SDE integration of the learned flow per scale and coarse-to-fine
// autoregressive generation with KV caching. Each scale consumes its own
// derived RNG stream so that injecting or skipping a scale leaves the
// downstream trajectory unchanged for a fixed seed.

#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "par/model.hpp"
#include "par/rng.hpp"

namespace par {

struct ScheduleEntry {
    bool sde = false;
    int steps = 1;
    double gamma = 0.30;
};

/// Per-scale integrator plan, e.g. parsed from "S:400:g0.3,O:2,O:2".
struct SamplerSchedule {
    std::vector<ScheduleEntry> entries;
    bool self_conditioning = true;
    double t_end_guard = 1e-3;

    static SamplerSchedule parse(const std::string& text) {
        SamplerSchedule s;
        std::istringstream is(text);
        std::string tok;
        while (std::getline(is, tok, ',')) {
            ScheduleEntry e;
            std::istringstream ts(tok);
            std::string field;
            int idx = 0;
            while (std::getline(ts, field, ':')) {
                if (idx == 0) {
                    if (field == "S" || field == "s") e.sde = true;
                    else if (field == "O" || field == "o") e.sde = false;
                    else throw std::invalid_argument("schedule: integrator must be S or O: " + tok);
                } else if (idx == 1) {
                    e.steps = std::stoi(field);
                } else if (field.size() > 1 && field[0] == 'g') {
                    e.gamma = std::stod(field.substr(1));
                } else {
                    throw std::invalid_argument("schedule: bad field '" + field + "' in " + tok);
                }
                ++idx;
            }
            if (idx < 2) throw std::invalid_argument("schedule: entry needs steps: " + tok);
            if (e.steps < 1) throw std::invalid_argument("schedule: steps must be >= 1");
            if (e.gamma <= 0.0) throw std::invalid_argument("schedule: gamma must be > 0");
            s.entries.push_back(e);
        }
        if (s.entries.empty()) throw std::invalid_argument("schedule: empty");
        return s;
    }

    /// Entries for an n-scale ladder: truncate when the ladder is shorter
    /// (ladders drop the finest sizes for short chains keep the coarse end),
    /// repeat the last entry when it is longer.
    std::vector<ScheduleEntry> resolve(int n) const {
        std::vector<ScheduleEntry> out;
        for (int i = 0; i < n; ++i)
            out.push_back(entries[std::min<size_t>(i, entries.size() - 1)]);
        return out;
    }

    std::string to_string() const {
        std::ostringstream os;
        for (size_t i = 0; i < entries.size(); ++i) {
            if (i) os << ",";
            os << (entries[i].sde ? "S" : "O") << ":" << entries[i].steps;
            if (entries[i].sde) os << ":g" << entries[i].gamma;
        }
        return os.str();
    }
};

/// Default diffusion scaling g(t) = 1 - t, clamped to zero inside the
/// terminal guard band so the score singularity is never touched.
inline double default_g(double t, double guard = 1e-3) {
    if (t >= 1.0 - guard) return 0.0;
    return 1.0 - t;
}

/// Forward Euler: x + v * dt.
template <typename T>
std::vector<T> ode_step(const std::vector<T>& x, double dt, const std::vector<T>& v) {
    std::vector<T> out(x.size());
    const T h = static_cast<T>(dt);
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] + v[i] * h;
    return out;
}

/// Euler-Maruyama: x + [v + g * score] * dt + sqrt(2 g gamma dt) * xi. Inside
/// the terminal guard band the score term is dropped; when the diffusion
/// coefficient is exactly zero no noise is drawn, so g == 0 reduces this to
/// ode_step bitwise.
template <typename T>
std::vector<T> sde_step(const std::vector<T>& x, double t, double dt, const std::vector<T>& v,
                        double gamma, double g, Rng& rng, double guard = 1e-3) {
    if (dt <= 0.0) throw std::invalid_argument("sde_step: dt must be positive");
    std::vector<T> out(x.size());
    const T h = static_cast<T>(dt);
    const bool use_score = g != 0.0 && t <= 1.0 - guard;
    if (use_score) {
        auto s = score_from_velocity(x, t, v, guard);
        const T gs = static_cast<T>(g);
        for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] + (v[i] + gs * s[i]) * h;
    } else {
        for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] + v[i] * h;
    }
    const double coef = std::sqrt(2.0 * g * gamma * dt);
    if (coef > 0.0) {
        const T c = static_cast<T>(coef);
        for (size_t i = 0; i < x.size(); ++i) out[i] += c * static_cast<T>(rng.normal());
    }
    return out;
}

/// Integrate one scale from x0 ~ N(0, I) at t = 0 to t = 1 on a uniform
/// grid. Returns flattened model-space coordinates.
template <typename T>
std::vector<T> sample_scale(const ParModel<T>& model, const Conditioning<T>& cond,
                            const ScheduleEntry& entry, bool self_conditioning, double guard,
                            Rng& rng) {
    const size_t numel = static_cast<size_t>(cond.scale_size) * 3;
    std::vector<T> x(numel);
    for (auto& xi : x) xi = static_cast<T>(rng.normal());

    const double dt = 1.0 / entry.steps;
    std::vector<T> sc;
    bool have_sc = false;
    for (int k = 0; k < entry.steps; ++k) {
        const double t = k * dt;
        auto vref = model.decoder_forward(x, t, cond, have_sc ? &sc : nullptr);
        const auto& v = vref->v;
        if (self_conditioning) {
            sc = predict_clean(x, t, v);
            have_sc = true;
        }
        x = entry.sde ? sde_step(x, t, dt, v, entry.gamma, default_g(t, guard), rng, guard)
                      : ode_step(x, dt, v);
        for (T xi : x)
            if (!std::isfinite(static_cast<double>(xi)))
                throw std::runtime_error("sample_scale: non-finite state at scale " +
                                         std::to_string(cond.scale_index) + " step " +
                                         std::to_string(k) + " t=" + std::to_string(t));
    }
    return x;
}

struct GenerateOptions {
    bool emit_scales = false;   // keep every intermediate scale
    bool use_cache = true;      // KV-cached incremental AR passes
};

template <typename T>
struct GenerationResult {
    ChainStructure structure;
    std::vector<ChainStructure> scales;  // filled when emit_scales
};

namespace sampling_detail {

template <typename T>
ChainStructure to_structure(const std::vector<T>& flat, double coord_scale) {
    ChainStructure s;
    const int m = static_cast<int>(flat.size()) / 3;
    s.coords.resize(m);
    for (int i = 0; i < m; ++i)
        for (int d = 0; d < 3; ++d)
            s.coords[i][d] = static_cast<double>(flat[i * 3 + d]) / coord_scale;
    return s;
}

}  // namespace sampling_detail

/// Coarse-to-fine generation. `inject_first_scale` (model-space, size(1)*3)
/// replaces sampling at scale 1; `post_scale_hook(i, x)` may edit the flat
/// model-space sample of scale i (1-based) before it becomes context.
template <typename T>
GenerationResult<T> generate(const ParModel<T>& model, int L, const SamplerSchedule& sched,
                             uint64_t seed, const GenerateOptions& opts = {},
                             const std::vector<T>* inject_first_scale = nullptr,
                             const std::function<void(int, std::vector<T>&)>& post_scale_hook =
                                 nullptr) {
    auto ladder = model.cfg.scales.resolve(L);
    const int n = static_cast<int>(ladder.size());
    auto entries = sched.resolve(n);

    GenerationResult<T> res;
    auto cache = model.make_cache();
    std::vector<std::vector<T>> history;  // all sampled scales, model space
    std::vector<T> prev;

    for (int i = 1; i <= n; ++i) {
        Conditioning<T> cond;
        if (opts.use_cache) {
            std::vector<std::vector<T>> ctx;
            if (i > 1) ctx.push_back(prev);
            cond = model.ar_forward(ctx, ladder, L, &cache, i)[0];
        } else {
            std::vector<std::vector<T>> ctx(history.begin(), history.end());
            cond = model.ar_forward(ctx, ladder, L).back();
        }

        std::vector<T> x;
        if (i == 1 && inject_first_scale) {
            if (static_cast<int>(inject_first_scale->size()) != ladder[0] * 3)
                throw std::invalid_argument("generate: injected first scale has wrong size");
            x = *inject_first_scale;
        } else {
            Rng scale_rng(Rng::derive_seed(seed, 3, static_cast<uint64_t>(i)));
            x = sample_scale(model, cond, entries[i - 1], sched.self_conditioning,
                             sched.t_end_guard, scale_rng);
        }
        if (i == 1) {
            // Center the first scale (sampled or injected) so that prompted
            // and unconditional runs share one frame convention bitwise.
            const int m = static_cast<int>(x.size()) / 3;
            for (int d = 0; d < 3; ++d) {
                T mean = T(0);
                for (int r = 0; r < m; ++r) mean += x[r * 3 + d];
                mean /= static_cast<T>(m);
                for (int r = 0; r < m; ++r) x[r * 3 + d] -= mean;
            }
        }
        if (post_scale_hook) post_scale_hook(i, x);

        if (opts.emit_scales || i == n) {
            auto s = sampling_detail::to_structure<T>(x, model.cfg.coord_scale);
            if (opts.emit_scales) res.scales.push_back(s);
            if (i == n) res.structure = s;
        }
        history.push_back(x);
        prev = std::move(x);
    }
    return res;
}

}  // namespace par
