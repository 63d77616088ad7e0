#pragma once

// Zero-shot structure tasks: prompt-conditioned generation (inject a coarse
// point cloud as the first scale) and motif scaffolding (teacher-force a
// ground-truth motif at every scale via rigid superposition).

#include <cmath>
#include <iostream>
#include <map>
#include <stdexcept>
#include <vector>

#include "par/sampling.hpp"

namespace par {

/// Coarse point cloud injected as the first-scale structure x^1.
struct PointPrompt {
    ChainStructure points;
};

/// Ground-truth motif coordinates and their residue indices (1-based,
/// strictly increasing) inside a target of length L.
struct MotifSpec {
    ChainStructure motif;
    std::vector<int> indices;

    void validate(int L) const {
        if (motif.length() != static_cast<int>(indices.size()))
            throw std::invalid_argument("motif: coordinate/index count mismatch");
        if (indices.size() < 3)
            throw std::invalid_argument("motif: need at least 3 residues");
        for (size_t k = 0; k < indices.size(); ++k) {
            if (indices[k] < 1 || indices[k] > L)
                throw std::invalid_argument("motif: index out of range [1, L]");
            if (k > 0 && indices[k] <= indices[k - 1])
                throw std::invalid_argument("motif: indices must be strictly increasing");
        }
    }
};

/// Map motif residue indices to the nearest grid index of an m-point scale.
/// Collisions keep the motif residue closest to the grid position; result
/// maps grid row -> motif row.
inline std::map<int, int> motif_scale_mapping(const std::vector<int>& indices, int L, int m) {
    auto grid = position_indices(L, m);
    std::map<int, int> best;            // grid row -> motif row
    std::map<int, double> best_dist;
    for (size_t k = 0; k < indices.size(); ++k) {
        int g = 0;
        double bd = std::abs(grid[0] - indices[k]);
        for (int j = 1; j < m; ++j) {
            double d = std::abs(grid[j] - indices[k]);
            if (d < bd) { bd = d; g = j; }
        }
        auto it = best_dist.find(g);
        if (it == best_dist.end() || bd < it->second) {
            best[g] = static_cast<int>(k);
            best_dist[g] = bd;
        }
    }
    return best;
}

/// Generate a length-L structure whose first scale is the given prompt
/// (centered by the generation pipeline). Scale-1 sampling is skipped;
/// downstream scales use their usual per-scale RNG streams, so a prompt
/// equal to a fresh scale-1 sample reproduces unconditional generation for
/// the same seed, bitwise.
template <typename T>
GenerationResult<T> prompt_generate(const ParModel<T>& model, const PointPrompt& prompt, int L,
                                    const SamplerSchedule& sched, uint64_t seed,
                                    const GenerateOptions& opts = {}) {
    auto ladder = model.cfg.scales.resolve(L);
    if (prompt.points.length() != ladder[0])
        throw std::invalid_argument("prompt: size must match the first scale (" +
                                    std::to_string(ladder[0]) + " points)");
    std::vector<T> x1;
    x1.reserve(static_cast<size_t>(ladder[0]) * 3);
    for (const auto& p : prompt.points.coords)
        for (int d = 0; d < 3; ++d) x1.push_back(static_cast<T>(p[d] * model.cfg.coord_scale));
    return generate(model, L, sched, seed, opts, &x1);
}

/// Generate a scaffold containing the motif exactly. After sampling each
/// scale, the ground-truth motif is rigidly superimposed onto the generated
/// motif segment and replaces it; scales with fewer than 3 mapped points are
/// skipped with a warning.
template <typename T>
GenerationResult<T> motif_scaffold(const ParModel<T>& model, const MotifSpec& spec, int L,
                                   const SamplerSchedule& sched, uint64_t seed,
                                   const GenerateOptions& opts = {}) {
    spec.validate(L);
    const double cs = model.cfg.coord_scale;

    auto hook = [&](int /*scale*/, std::vector<T>& x) {
        const int m = static_cast<int>(x.size()) / 3;
        auto mapping = motif_scale_mapping(spec.indices, L, m);
        if (mapping.size() < 3) {
            std::cerr << "motif_scaffold: only " << mapping.size()
                      << " mapped motif points at scale size " << m
                      << "; skipping replacement\n";
            return;
        }
        ChainStructure gt, gen;
        for (const auto& [g, k] : mapping) {
            gt.coords.push_back(spec.motif.coords[k]);
            gen.coords.push_back({static_cast<double>(x[g * 3 + 0]) / cs,
                                  static_cast<double>(x[g * 3 + 1]) / cs,
                                  static_cast<double>(x[g * 3 + 2]) / cs});
        }
        auto tf = kabsch_superpose(gt, gen);
        auto placed = apply_transform(gt, tf);
        int row = 0;
        for (const auto& [g, k] : mapping) {
            for (int d = 0; d < 3; ++d)
                x[g * 3 + d] = static_cast<T>(placed.coords[row][d] * cs);
            ++row;
        }
    };
    auto result = generate<T>(model, L, sched, seed, opts, nullptr, hook);

    // Redo the final replacement on the double-precision structure so the
    // embedded motif is exact to machine precision, not float round-off.
    ChainStructure gt, gen;
    for (size_t k = 0; k < spec.indices.size(); ++k) {
        gt.coords.push_back(spec.motif.coords[k]);
        gen.coords.push_back(result.structure.coords[spec.indices[k] - 1]);
    }
    auto tf = kabsch_superpose(gt, gen);
    auto placed = apply_transform(gt, tf);
    for (size_t k = 0; k < spec.indices.size(); ++k)
        result.structure.coords[spec.indices[k] - 1] = placed.coords[k];
    return result;
}

}  // namespace par
