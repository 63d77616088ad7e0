#pragma once

#include <array>
#include <string>
#include <vector>

namespace par {

using Vec3 = std::array<double, 3>;

/// Ordered Calpha trace: one 3D point (Angstrom) per residue.
struct ChainStructure {
    std::vector<Vec3> coords;

    ChainStructure() = default;
    explicit ChainStructure(std::vector<Vec3> c) : coords(std::move(c)) {}

    int length() const { return static_cast<int>(coords.size()); }
};

enum class ScaleMode { ByLength, ByRatio };

/// Scale ladder specification. ByLength: `sizes` are absolute lengths.
/// ByRatio: `sizes` are divisors of L (e.g. {4,2,1} -> {L/4, L/2, L}).
struct ScaleConfig {
    ScaleMode mode = ScaleMode::ByLength;
    std::vector<int> sizes{64, 128, 256};

    /// Resolves the ladder for a chain of length L. ByLength keeps sizes < L
    /// and appends L; ByRatio rounds L/divisor (clamped to >= 2, deduped).
    std::vector<int> resolve(int L) const;
};

struct MultiScaleDecomposition {
    std::vector<ChainStructure> scales;
    std::vector<std::vector<double>> position_indices;  // per scale, in [1, L]

    int num_scales() const { return static_cast<int>(scales.size()); }
};

/// Symmetric pairwise distance matrix, row-major m x m.
struct DistanceMap {
    int size = 0;
    std::vector<double> values;

    double at(int i, int j) const { return values[static_cast<size_t>(i) * size + j]; }
    double& at(int i, int j) { return values[static_cast<size_t>(i) * size + j]; }
};

struct RigidTransform {
    std::array<std::array<double, 3>, 3> rotation;  // det +1
    Vec3 translation;
    double rmsd = 0.0;
};

// m evenly spaced real indices from 1 to L inclusive.
std::vector<double> position_indices(int L, int m);

ChainStructure down_sample(const ChainStructure& x, int m);
ChainStructure up_sample(const ChainStructure& x, int m);
MultiScaleDecomposition decompose(const ChainStructure& x, const ScaleConfig& cfg);

ChainStructure center(const ChainStructure& x);

DistanceMap distance_map(const ChainStructure& x);

/// Bicubic (Catmull-Rom) resampling of a distance map at the position_indices
/// grid, symmetric boundary handling, then symmetrized with its transpose.
DistanceMap downsample_distance_map(const DistanceMap& dm, int m);

/// lDDT over all off-diagonal pairs, thresholds {0.5, 1, 2, 4} A, no
/// inclusion radius.
double lddt(const DistanceMap& reference, const DistanceMap& candidate);

double distance_map_rmse(const DistanceMap& a, const DistanceMap& b);

/// Optimal least-squares superposition of a onto b (equal lengths >= 3).
RigidTransform kabsch_superpose(const ChainStructure& a, const ChainStructure& b);

ChainStructure apply_transform(const ChainStructure& x, const RigidTransform& t);

/// TM-score of equal-length chains, maximized over Kabsch superpositions
/// seeded from contiguous fragments of lengths {L, L/2, L/4} with iterative
/// refinement over the d < d0 subset.
double tm_score(const ChainStructure& a, const ChainStructure& b);

// Helpers shared with tests.
double tm_d0(int L);

}  // namespace par
