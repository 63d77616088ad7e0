#include "par/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "par/rng.hpp"

namespace par {

namespace {

// Pairwise-distance histogram bin edges (Angstrom); last bin is open.
constexpr double kBinEdges[8] = {4.0, 8.0, 12.0, 16.0, 20.0, 25.0, 30.0, 1e300};

double norm3(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

std::vector<double> feature_vector(const ChainStructure& x) {
    const int L = x.length();
    if (L < 2) throw std::invalid_argument("feature_vector: need >= 2 points");
    std::vector<double> f(kFeatureDim, 0.0);

    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i + 1 < L; ++i) {
        const double d = norm3(x.coords[i], x.coords[i + 1]);
        sum += d;
        sum2 += d * d;
    }
    const double mean = sum / (L - 1);
    f[0] = mean;
    f[1] = std::sqrt(std::max(0.0, sum2 / (L - 1) - mean * mean));

    Vec3 c{0, 0, 0};
    for (const auto& p : x.coords)
        for (int d = 0; d < 3; ++d) c[d] += p[d] / L;
    double rg2 = 0.0;
    for (const auto& p : x.coords) {
        const double d = norm3(p, c);
        rg2 += d * d / L;
    }
    f[2] = std::sqrt(rg2);
    f[3] = norm3(x.coords.front(), x.coords.back());

    long pairs = 0;
    for (int i = 0; i < L; ++i)
        for (int j = i + 1; j < L; ++j) {
            const double d = norm3(x.coords[i], x.coords[j]);
            int b = 0;
            while (d >= kBinEdges[b]) ++b;
            f[4 + b] += 1.0;
            ++pairs;
        }
    for (int b = 0; b < 8; ++b) f[4 + b] /= pairs;
    return f;
}

double frechet_from_features(const std::vector<std::vector<double>>& feats_a,
                             const std::vector<std::vector<double>>& feats_b) {
    if (feats_a.size() < 2 || feats_b.size() < 2)
        throw std::invalid_argument("frechet_feature_distance: need >= 2 structures per set");
    const int D = kFeatureDim;

    auto fit = [D](const std::vector<std::vector<double>>& feats, Eigen::VectorXd& mu,
                   Eigen::MatrixXd& cov) {
        const int N = static_cast<int>(feats.size());
        Eigen::MatrixXd X(N, D);
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < D; ++j) X(i, j) = feats[i][j];
        mu = X.colwise().mean();
        Eigen::MatrixXd cent = X.rowwise() - mu.transpose();
        cov = cent.transpose() * cent / (N - 1);
        cov += 1e-6 * Eigen::MatrixXd::Identity(D, D);
    };

    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd ca, cb;
    fit(feats_a, mu_a, ca);
    fit(feats_b, mu_b, cb);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_a(ca);
    if (es_a.info() != Eigen::Success)
        throw std::runtime_error("frechet_feature_distance: eigendecomposition failed");
    Eigen::VectorXd ev = es_a.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd sqrt_a = es_a.eigenvectors() * ev.asDiagonal() * es_a.eigenvectors().transpose();

    Eigen::MatrixXd m = sqrt_a * cb * sqrt_a;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_m((m + m.transpose()) / 2.0);
    if (es_m.info() != Eigen::Success)
        throw std::runtime_error("frechet_feature_distance: eigendecomposition failed");
    const double tr_sqrt = es_m.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    // Round-off can push the trace term a hair past the analytic value on
    // identical sets; the distance is non-negative by definition.
    return std::max(0.0, (mu_a - mu_b).squaredNorm() + ca.trace() + cb.trace() - 2.0 * tr_sqrt);
}

double frechet_feature_distance(const std::vector<ChainStructure>& set_a,
                                const std::vector<ChainStructure>& set_b) {
    std::vector<std::vector<double>> fa, fb;
    for (const auto& x : set_a) fa.push_back(feature_vector(x));
    for (const auto& x : set_b) fb.push_back(feature_vector(x));
    return frechet_from_features(fa, fb);
}

double diversity(const std::vector<ChainStructure>& samples) {
    const int N = static_cast<int>(samples.size());
    if (N < 2) throw std::invalid_argument("diversity: need >= 2 samples");
    double acc = 0.0;
    int pairs = 0;
    for (int i = 0; i < N; ++i)
        for (int j = i + 1; j < N; ++j) {
            acc += tm_score(samples[i], samples[j]);
            ++pairs;
        }
    return acc / pairs;
}

double cluster_entropy(const std::vector<ChainStructure>& samples, int k, uint64_t seed) {
    const int N = static_cast<int>(samples.size());
    if (N < k) return 0.0;
    std::vector<std::vector<double>> feats;
    for (const auto& x : samples) feats.push_back(feature_vector(x));
    const int D = kFeatureDim;

    Rng rng(Rng::derive_seed(seed, 20));
    std::vector<std::vector<double>> centers;
    std::vector<int> perm(N);
    for (int i = 0; i < N; ++i) perm[i] = i;
    for (int i = N; i > 1; --i) std::swap(perm[i - 1], perm[rng.next_u64() % i]);
    for (int c = 0; c < k; ++c) centers.push_back(feats[perm[c]]);

    std::vector<int> assign(N, 0);
    for (int iter = 0; iter < 25; ++iter) {
        for (int i = 0; i < N; ++i) {
            double best = 1e300;
            for (int c = 0; c < k; ++c) {
                double d = 0.0;
                for (int j = 0; j < D; ++j) {
                    const double diff = feats[i][j] - centers[c][j];
                    d += diff * diff;
                }
                if (d < best) {
                    best = d;
                    assign[i] = c;
                }
            }
        }
        for (int c = 0; c < k; ++c) {
            std::vector<double> acc(D, 0.0);
            int cnt = 0;
            for (int i = 0; i < N; ++i)
                if (assign[i] == c) {
                    for (int j = 0; j < D; ++j) acc[j] += feats[i][j];
                    ++cnt;
                }
            if (cnt)
                for (int j = 0; j < D; ++j) centers[c][j] = acc[j] / cnt;
        }
    }
    double h = 0.0;
    for (int c = 0; c < k; ++c) {
        int cnt = 0;
        for (int i = 0; i < N; ++i)
            if (assign[i] == c) ++cnt;
        if (cnt) {
            const double p = static_cast<double>(cnt) / N;
            h -= p * std::log(p);
        }
    }
    return h;
}

std::vector<ConsistencyRow> consistency_report(const std::vector<PromptedRun>& runs,
                                               int bucket_width) {
    std::map<int, ConsistencyRow> buckets;
    for (const auto& r : runs) {
        const int L = r.generated.length();
        const int b = L / bucket_width;
        auto& row = buckets[b];
        row.length_lo = b * bucket_width;
        row.length_hi = (b + 1) * bucket_width - 1;
        row.count += 1;
        row.mean_rmsd_vs_reference += kabsch_superpose(r.generated, r.reference).rmsd;
        row.mean_tm_vs_prompt += tm_score(r.generated, r.upsampled_prompt);
    }
    std::vector<ConsistencyRow> out;
    for (auto& [b, row] : buckets) {
        row.mean_rmsd_vs_reference /= row.count;
        row.mean_tm_vs_prompt /= row.count;
        out.push_back(row);
    }
    return out;
}

std::string consistency_csv(const std::vector<ConsistencyRow>& rows) {
    std::ostringstream os;
    os << "length_lo,length_hi,count,mean_rmsd_vs_reference,mean_tm_vs_prompt\n";
    for (const auto& r : rows)
        os << r.length_lo << "," << r.length_hi << "," << r.count << ","
           << r.mean_rmsd_vs_reference << "," << r.mean_tm_vs_prompt << "\n";
    return os.str();
}

double mean_consecutive_distance(const std::vector<ChainStructure>& set) {
    double acc = 0.0;
    long n = 0;
    for (const auto& x : set)
        for (int i = 0; i + 1 < x.length(); ++i) {
            acc += norm3(x.coords[i], x.coords[i + 1]);
            ++n;
        }
    return n ? acc / n : 0.0;
}

}  // namespace par
