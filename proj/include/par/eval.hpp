#pragma once

// Distributional and consistency metrics: per-structure geometric feature
// vectors, a Frechet distance between Gaussian feature fits, sample
// diversity, and prompt-consistency reports.

#include <string>
#include <vector>

#include "par/geometry.hpp"

namespace par {

/// Fixed 12-dim geometric descriptor: consecutive-distance mean and std,
/// radius of gyration, end-to-end distance, and an 8-bin normalized
/// histogram of all pairwise distances.
std::vector<double> feature_vector(const ChainStructure& x);

constexpr int kFeatureDim = 12;

/// ||mu_A - mu_B||^2 + Tr(S_A + S_B - 2 (S_A S_B)^{1/2}) over Gaussian fits
/// of the feature vectors; covariances regularized by +1e-6 I.
double frechet_feature_distance(const std::vector<ChainStructure>& set_a,
                                const std::vector<ChainStructure>& set_b);

/// Same metric on precomputed feature rows.
double frechet_from_features(const std::vector<std::vector<double>>& feats_a,
                             const std::vector<std::vector<double>>& feats_b);

/// Mean pairwise tm_score; lower means more diverse.
double diversity(const std::vector<ChainStructure>& samples);

/// Entropy of k-means cluster occupancy over feature vectors (soft metric,
/// reported but not gated).
double cluster_entropy(const std::vector<ChainStructure>& samples, int k = 5,
                       uint64_t seed = 0);

struct ConsistencyRow {
    int length_lo = 0;
    int length_hi = 0;
    int count = 0;
    double mean_rmsd_vs_reference = 0.0;
    double mean_tm_vs_prompt = 0.0;
};

struct PromptedRun {
    ChainStructure generated;
    ChainStructure reference;        // the structure the prompt came from
    ChainStructure upsampled_prompt; // prompt resampled to the full length
};

/// Per-length-bucket Kabsch RMSD vs reference and tm_score vs the upsampled
/// prompt; bucket width in residues.
std::vector<ConsistencyRow> consistency_report(const std::vector<PromptedRun>& runs,
                                               int bucket_width = 64);

std::string consistency_csv(const std::vector<ConsistencyRow>& rows);

/// Corpus statistic used by scaffold continuity checks.
double mean_consecutive_distance(const std::vector<ChainStructure>& set);

}  // namespace par
