#include "par/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "par/kernels.hpp"

namespace par {

std::vector<double> position_indices(int L, int m) {
    if (m < 2) throw std::invalid_argument("position_indices: m must be >= 2");
    std::vector<double> p(m);
    for (int k = 0; k < m; ++k)
        p[k] = 1.0 + static_cast<double>(k) * (L - 1) / (m - 1);
    p.front() = 1.0;
    p.back() = static_cast<double>(L);
    return p;
}

namespace {

// Piecewise-linear evaluation of the chain at real 1-based index t.
Vec3 lerp_at(const std::vector<Vec3>& c, double t) {
    const int L = static_cast<int>(c.size());
    if (t <= 1.0) return c.front();
    if (t >= L) return c.back();
    int lo = static_cast<int>(std::floor(t)) - 1;  // 0-based
    int hi = std::min(lo + 1, L - 1);
    double f = t - std::floor(t);
    Vec3 out;
    for (int d = 0; d < 3; ++d) out[d] = c[lo][d] + f * (c[hi][d] - c[lo][d]);
    return out;
}

ChainStructure resample(const ChainStructure& x, int m) {
    if (m == x.length()) return x;
    auto idx = position_indices(x.length(), m);
    ChainStructure out;
    out.coords.reserve(m);
    for (double t : idx) out.coords.push_back(lerp_at(x.coords, t));
    // exact endpoint preservation
    out.coords.front() = x.coords.front();
    out.coords.back() = x.coords.back();
    return out;
}

}  // namespace

ChainStructure down_sample(const ChainStructure& x, int m) {
    if (m < 2 || m > x.length())
        throw std::invalid_argument("down_sample: m must be in [2, L]");
    return resample(x, m);
}

ChainStructure up_sample(const ChainStructure& x, int m) {
    if (x.length() < 2) throw std::invalid_argument("up_sample: L must be >= 2");
    if (m < x.length())
        throw std::invalid_argument("up_sample: m must be >= L");
    return resample(x, m);
}

std::vector<int> ScaleConfig::resolve(int L) const {
    std::vector<int> out;
    if (mode == ScaleMode::ByLength) {
        for (int s : sizes) {
            if (s >= L) break;
            if (s >= 2) out.push_back(s);
        }
        out.push_back(L);
    } else {
        for (int div : sizes) {
            if (div <= 0) throw std::invalid_argument("ScaleConfig: divisor must be positive");
            int s = std::max(2, static_cast<int>(std::llround(static_cast<double>(L) / div)));
            s = std::min(s, L);
            if (out.empty() || s > out.back()) out.push_back(s);
        }
        if (out.empty() || out.back() != L) out.push_back(L);
    }
    if (out.empty()) throw std::invalid_argument("ScaleConfig: empty resolved ladder");
    return out;
}

MultiScaleDecomposition decompose(const ChainStructure& x, const ScaleConfig& cfg) {
    const int L = x.length();
    if (L < 2) throw std::invalid_argument("decompose: L must be >= 2");
    auto ladder = cfg.resolve(L);
    MultiScaleDecomposition d;
    for (int s : ladder) {
        d.scales.push_back(s == L ? x : down_sample(x, s));
        d.position_indices.push_back(position_indices(L, s));
    }
    return d;
}

ChainStructure center(const ChainStructure& x) {
    Vec3 mean{0, 0, 0};
    for (const auto& c : x.coords)
        for (int d = 0; d < 3; ++d) mean[d] += c[d];
    for (int d = 0; d < 3; ++d) mean[d] /= std::max(1, x.length());
    ChainStructure out = x;
    for (auto& c : out.coords)
        for (int d = 0; d < 3; ++d) c[d] -= mean[d];
    return out;
}

DistanceMap distance_map(const ChainStructure& x) {
    const int L = x.length();
    if (L < 2) throw std::invalid_argument("distance_map: L must be >= 2");
    DistanceMap dm;
    dm.size = L;
    dm.values.resize(static_cast<size_t>(L) * L);
    kernels::pairwise_distances(&x.coords[0][0], L, dm.values.data(), true);
    return dm;
}

namespace {

// Catmull-Rom cubic kernel weights for fractional offset f in [0,1).
std::array<double, 4> cubic_weights(double f) {
    const double a = -0.5;
    auto w = [a](double t) {
        t = std::abs(t);
        if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
        if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
        return 0.0;
    };
    return {w(1.0 + f), w(f), w(1.0 - f), w(2.0 - f)};
}

// Symmetric (reflect) index into [0, n).
int reflect(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - i - 1;
    }
    return i;
}

}  // namespace

DistanceMap downsample_distance_map(const DistanceMap& dm, int m) {
    if (m < 2) throw std::invalid_argument("downsample_distance_map: m must be >= 2");
    if (m > dm.size)
        throw std::invalid_argument("downsample_distance_map: m exceeds map size");
    const int n = dm.size;
    auto grid = position_indices(n, m);  // 1-based real indices

    // Precompute per-sample base index and kernel weights.
    std::vector<int> base(m);
    std::vector<std::array<double, 4>> wts(m);
    for (int k = 0; k < m; ++k) {
        double t = grid[k] - 1.0;  // 0-based
        double fl = std::floor(t);
        base[k] = static_cast<int>(fl);
        wts[k] = cubic_weights(t - fl);
    }

    DistanceMap out;
    out.size = m;
    out.values.assign(static_cast<size_t>(m) * m, 0.0);
    // Interpolate squared distances. A metric map has a |i - j| cusp along the
    // diagonal where a cubic fit of the raw distances over- and undershoots by
    // a large fraction of the local value; the squared map is smooth there, so
    // interpolating it and taking the square root avoids that artifact.
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            double acc = 0.0;
            for (int di = 0; di < 4; ++di) {
                int ri = reflect(base[i] - 1 + di, n);
                double wrow = wts[i][di];
                if (wrow == 0.0) continue;
                double rowacc = 0.0;
                for (int dj = 0; dj < 4; ++dj) {
                    int rj = reflect(base[j] - 1 + dj, n);
                    const double d = dm.at(ri, rj);
                    rowacc += wts[j][dj] * d * d;
                }
                acc += wrow * rowacc;
            }
            out.at(i, j) = std::sqrt(std::max(0.0, acc));
        }
    }
    // Symmetrize and zero the diagonal.
    for (int i = 0; i < m; ++i) {
        out.at(i, i) = 0.0;
        for (int j = i + 1; j < m; ++j) {
            double v = 0.5 * (out.at(i, j) + out.at(j, i));
            out.at(i, j) = v;
            out.at(j, i) = v;
        }
    }
    return out;
}

double lddt(const DistanceMap& reference, const DistanceMap& candidate) {
    if (reference.size != candidate.size)
        throw std::invalid_argument("lddt: shape mismatch");
    static const double thresholds[4] = {0.5, 1.0, 2.0, 4.0};
    const int n = reference.size;
    double total = 0.0;
    long pairs = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            double diff = std::abs(reference.at(i, j) - candidate.at(i, j));
            int hits = 0;
            for (double th : thresholds)
                if (diff < th) ++hits;
            total += hits / 4.0;
            ++pairs;
        }
    }
    return pairs ? total / pairs : 1.0;
}

double distance_map_rmse(const DistanceMap& a, const DistanceMap& b) {
    if (a.size != b.size) throw std::invalid_argument("distance_map_rmse: shape mismatch");
    double acc = 0.0;
    const size_t n = a.values.size();
    for (size_t i = 0; i < n; ++i) {
        double d = a.values[i] - b.values[i];
        acc += d * d;
    }
    return std::sqrt(acc / n);
}

namespace {

Vec3 centroid(const std::vector<Vec3>& c) {
    Vec3 m{0, 0, 0};
    for (const auto& p : c)
        for (int d = 0; d < 3; ++d) m[d] += p[d];
    for (int d = 0; d < 3; ++d) m[d] /= c.size();
    return m;
}

// Kabsch on index subset; throws on degenerate (collinear) configurations
// only when `strict` is set.
RigidTransform kabsch_subset(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                             const std::vector<int>& idx, bool strict) {
    Vec3 ca{0, 0, 0}, cb{0, 0, 0};
    for (int i : idx) {
        for (int d = 0; d < 3; ++d) {
            ca[d] += a[i][d];
            cb[d] += b[i][d];
        }
    }
    for (int d = 0; d < 3; ++d) {
        ca[d] /= idx.size();
        cb[d] /= idx.size();
    }
    Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
    for (int i : idx) {
        Eigen::Vector3d pa(a[i][0] - ca[0], a[i][1] - ca[1], a[i][2] - ca[2]);
        Eigen::Vector3d pb(b[i][0] - cb[0], b[i][1] - cb[1], b[i][2] - cb[2]);
        H += pa * pb.transpose();
    }
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (strict && sv(1) < 1e-9 * std::max(1.0, sv(0)))
        throw std::invalid_argument("kabsch_superpose: degenerate (collinear) configuration");
    Eigen::Matrix3d U = svd.matrixU(), V = svd.matrixV();
    double det = (V * U.transpose()).determinant();
    Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
    D(2, 2) = det < 0 ? -1.0 : 1.0;
    Eigen::Matrix3d R = V * D * U.transpose();

    RigidTransform t;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) t.rotation[r][c] = R(r, c);
    Eigen::Vector3d ec(ca[0], ca[1], ca[2]);
    Eigen::Vector3d tb(cb[0], cb[1], cb[2]);
    Eigen::Vector3d tr = tb - R * ec;
    t.translation = {tr(0), tr(1), tr(2)};

    double acc = 0.0;
    for (int i : idx) {
        Eigen::Vector3d pa(a[i][0], a[i][1], a[i][2]);
        Eigen::Vector3d pb(b[i][0], b[i][1], b[i][2]);
        acc += (R * pa + tr - pb).squaredNorm();
    }
    t.rmsd = std::sqrt(acc / idx.size());
    return t;
}

}  // namespace

RigidTransform kabsch_superpose(const ChainStructure& a, const ChainStructure& b) {
    if (a.length() != b.length())
        throw std::invalid_argument("kabsch_superpose: length mismatch");
    if (a.length() < 3)
        throw std::invalid_argument("kabsch_superpose: need at least 3 points");
    std::vector<int> idx(a.length());
    std::iota(idx.begin(), idx.end(), 0);
    return kabsch_subset(a.coords, b.coords, idx, true);
}

ChainStructure apply_transform(const ChainStructure& x, const RigidTransform& t) {
    ChainStructure out = x;
    for (auto& p : out.coords) {
        Vec3 q;
        for (int r = 0; r < 3; ++r)
            q[r] = t.rotation[r][0] * p[0] + t.rotation[r][1] * p[1] +
                   t.rotation[r][2] * p[2] + t.translation[r];
        p = q;
    }
    return out;
}

double tm_d0(int L) {
    double d0 = 1.24 * std::cbrt(std::max(0.0, static_cast<double>(L - 15))) - 1.8;
    return std::max(d0, 0.5);
}

namespace {

double tm_from_transform(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                         const RigidTransform& t, double d0) {
    const int L = static_cast<int>(a.size());
    double acc = 0.0;
    for (int i = 0; i < L; ++i) {
        double dx[3];
        for (int r = 0; r < 3; ++r)
            dx[r] = t.rotation[r][0] * a[i][0] + t.rotation[r][1] * a[i][1] +
                    t.rotation[r][2] * a[i][2] + t.translation[r] - b[i][r];
        double d2 = dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2];
        acc += 1.0 / (1.0 + d2 / (d0 * d0));
    }
    return acc / L;
}

}  // namespace

double tm_score(const ChainStructure& a, const ChainStructure& b) {
    if (a.length() != b.length()) throw std::invalid_argument("tm_score: length mismatch");
    const int L = a.length();
    if (L < 3) throw std::invalid_argument("tm_score: need at least 3 points");
    const double d0 = tm_d0(L);

    double best = 0.0;
    std::vector<int> frag_lens{L, std::max(3, L / 2), std::max(3, L / 4)};
    std::set<int> seen;
    for (int fl : frag_lens) {
        if (!seen.insert(fl).second) continue;
        for (int start = 0; start + fl <= L; ++start) {
            std::vector<int> idx(fl);
            std::iota(idx.begin(), idx.end(), start);
            RigidTransform t;
            try {
                t = kabsch_subset(a.coords, b.coords, idx, false);
            } catch (const std::exception&) {
                continue;
            }
            double score = tm_from_transform(a.coords, b.coords, t, d0);
            // Iterative refinement: realign on residues within d0 cutoff.
            for (int iter = 0; iter < 20; ++iter) {
                std::vector<int> close;
                auto moved = apply_transform(a, t);
                double cutoff = d0;
                while (true) {
                    close.clear();
                    for (int i = 0; i < L; ++i) {
                        double d2 = 0;
                        for (int r = 0; r < 3; ++r) {
                            double dd = moved.coords[i][r] - b.coords[i][r];
                            d2 += dd * dd;
                        }
                        if (d2 < cutoff * cutoff) close.push_back(i);
                    }
                    if (static_cast<int>(close.size()) >= 3) break;
                    cutoff *= 1.5;
                }
                t = kabsch_subset(a.coords, b.coords, close, false);
                double s = tm_from_transform(a.coords, b.coords, t, d0);
                if (s <= score + 1e-12) {
                    score = std::max(score, s);
                    break;
                }
                score = s;
            }
            best = std::max(best, score);
        }
    }
    return best;
}

}  // namespace par
