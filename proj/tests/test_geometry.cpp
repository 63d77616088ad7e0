#include <doctest.h>

#include <cmath>
#include <random>

#include "par/geometry.hpp"
#include "par/rng.hpp"

using namespace par;

namespace {

ChainStructure make(std::vector<Vec3> v) { return ChainStructure(std::move(v)); }

ChainStructure random_chain(int L, uint64_t seed, double spread = 10.0) {
    Rng rng(seed);
    ChainStructure x;
    for (int i = 0; i < L; ++i)
        x.coords.push_back({spread * rng.normal(), spread * rng.normal(), spread * rng.normal()});
    return x;
}

// Random coil-like chain with bounded steps; smoother than iid points.
ChainStructure random_walk(int L, uint64_t seed) {
    Rng rng(seed);
    ChainStructure x;
    Vec3 p{0, 0, 0};
    x.coords.push_back(p);
    for (int i = 1; i < L; ++i) {
        for (int d = 0; d < 3; ++d) p[d] += 2.2 * rng.normal();
        x.coords.push_back(p);
    }
    return x;
}

double dist(const Vec3& a, const Vec3& b) {
    return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                     (a[2] - b[2]) * (a[2] - b[2]));
}

}  // namespace

TEST_CASE("position_indices evenly spaced from 1 to L") {
    auto p = position_indices(5, 5);
    REQUIRE(p.size() == 5);
    for (int i = 0; i < 5; ++i) CHECK(p[i] == doctest::Approx(i + 1.0));

    auto q = position_indices(5, 3);
    CHECK(q[0] == doctest::Approx(1.0));
    CHECK(q[1] == doctest::Approx(3.0));
    CHECK(q[2] == doctest::Approx(5.0));

    auto r = position_indices(4, 2);
    CHECK(r[0] == doctest::Approx(1.0));
    CHECK(r[1] == doctest::Approx(4.0));
}

TEST_CASE("down_sample identity and hand cases") {
    auto x = random_chain(17, 1);
    auto same = down_sample(x, 17);
    for (int i = 0; i < 17; ++i)
        for (int d = 0; d < 3; ++d) CHECK(same.coords[i][d] == x.coords[i][d]);

    auto a = down_sample(make({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}}), 2);
    CHECK(a.coords[0][0] == doctest::Approx(0.0));
    CHECK(a.coords[1][0] == doctest::Approx(3.0));

    auto b = down_sample(make({{0, 0, 0}, {2, 0, 0}, {2, 2, 0}}), 2);
    CHECK(b.coords[0][0] == doctest::Approx(0.0));
    CHECK(b.coords[1][0] == doctest::Approx(2.0));
    CHECK(b.coords[1][1] == doctest::Approx(2.0));

    CHECK_THROWS(down_sample(x, 1));
    CHECK_THROWS(down_sample(x, 18));
}

TEST_CASE("up_sample identity and hand cases") {
    auto x = random_chain(9, 2);
    auto same = up_sample(x, 9);
    for (int i = 0; i < 9; ++i)
        for (int d = 0; d < 3; ++d) CHECK(same.coords[i][d] == x.coords[i][d]);

    auto a = up_sample(make({{0, 0, 0}, {2, 0, 0}}), 3);
    CHECK(a.coords[1][0] == doctest::Approx(1.0));

    auto b = up_sample(make({{0, 0, 0}, {0, 4, 0}}), 5);
    for (int i = 0; i < 5; ++i) CHECK(b.coords[i][1] == doctest::Approx(static_cast<double>(i)));

    CHECK_THROWS(up_sample(x, 8));
}

TEST_CASE("endpoint preservation under resampling") {
    auto x = random_chain(31, 3);
    for (int m : {2, 7, 16, 31}) {
        auto y = down_sample(x, m);
        for (int d = 0; d < 3; ++d) {
            CHECK(y.coords.front()[d] == doctest::Approx(x.coords.front()[d]));
            CHECK(y.coords.back()[d] == doctest::Approx(x.coords.back()[d]));
        }
    }
}

TEST_CASE("decompose ladders and truncation rule") {
    ScaleConfig cfg;
    cfg.sizes = {64, 128, 256};

    auto d256 = decompose(random_walk(256, 4), cfg);
    REQUIRE(d256.num_scales() == 3);
    CHECK(d256.scales[0].length() == 64);
    CHECK(d256.scales[1].length() == 128);
    CHECK(d256.scales[2].length() == 256);

    auto d100 = decompose(random_walk(100, 5), cfg);
    REQUIRE(d100.num_scales() == 2);
    CHECK(d100.scales[0].length() == 64);
    CHECK(d100.scales[1].length() == 100);

    ScaleConfig ratio;
    ratio.mode = ScaleMode::ByRatio;
    ratio.sizes = {4, 2, 1};
    auto d8 = decompose(random_walk(8, 6), ratio);
    REQUIRE(d8.num_scales() == 3);
    CHECK(d8.scales[0].length() == 2);
    CHECK(d8.scales[1].length() == 4);
    CHECK(d8.scales[2].length() == 8);

    // Finest scale is the input exactly; position indices span [1, L].
    auto x = random_walk(100, 7);
    auto d = decompose(x, cfg);
    for (int i = 0; i < 100; ++i)
        for (int k = 0; k < 3; ++k) CHECK(d.scales.back().coords[i][k] == x.coords[i][k]);
    for (const auto& pi : d.position_indices) {
        CHECK(pi.front() == doctest::Approx(1.0));
        CHECK(pi.back() == doctest::Approx(100.0));
        for (size_t j = 1; j < pi.size(); ++j) CHECK(pi[j] > pi[j - 1]);
    }

    // L below the first size collapses to the single scale {L}.
    auto tiny = decompose(random_walk(20, 8), cfg);
    REQUIRE(tiny.num_scales() == 1);
    CHECK(tiny.scales[0].length() == 20);
}

TEST_CASE("center subtracts the mean") {
    auto c = center(make({{1, 1, 1}, {3, 3, 3}}));
    CHECK(c.coords[0][0] == doctest::Approx(-1.0));
    CHECK(c.coords[1][2] == doctest::Approx(1.0));

    auto x = center(random_chain(25, 9));
    for (int d = 0; d < 3; ++d) {
        double mean = 0.0;
        for (const auto& p : x.coords) mean += p[d] / x.length();
        CHECK(std::abs(mean) < 1e-9);
    }
}

TEST_CASE("distance_map basic properties") {
    auto dm = distance_map(make({{0, 0, 0}, {3, 4, 0}}));
    CHECK(dm.at(0, 1) == doctest::Approx(5.0));
    CHECK(dm.at(1, 0) == doctest::Approx(5.0));
    CHECK(dm.at(0, 0) == 0.0);

    auto tri = distance_map(make({{0, 0, 0}, {1, 0, 0}, {1, 1, 0}}));
    CHECK(tri.at(0, 1) == doctest::Approx(1.0));
    CHECK(tri.at(1, 2) == doctest::Approx(1.0));
    CHECK(tri.at(0, 2) == doctest::Approx(std::sqrt(2.0)));

    auto rm = distance_map(random_chain(12, 10));
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j) {
            CHECK(rm.at(i, j) == doctest::Approx(rm.at(j, i)));
            for (int k = 0; k < 12; ++k)
                CHECK(rm.at(i, j) <= rm.at(i, k) + rm.at(k, j) + 1e-9);
        }
}

TEST_CASE("downsample_distance_map identity, constant, and ramp") {
    auto x = random_walk(24, 11);
    auto dm = distance_map(x);
    auto same = downsample_distance_map(dm, 24);
    for (int i = 0; i < 24; ++i)
        for (int j = 0; j < 24; ++j) CHECK(std::abs(same.at(i, j) - dm.at(i, j)) < 1e-9);

    DistanceMap constant;
    constant.size = 16;
    constant.values.assign(256, 7.5);
    auto c8 = downsample_distance_map(constant, 8);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
            if (i != j) CHECK(c8.at(i, j) == doctest::Approx(7.5));

    // Bicubic reproduces (bi)linear ramps exactly at the sampled indices.
    DistanceMap ramp;
    ramp.size = 16;
    ramp.values.resize(256);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) ramp.at(i, j) = 2.0 * i + 3.0 * j;
    auto r4 = downsample_distance_map(ramp, 4);
    auto pi = position_indices(16, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            if (i == j) {
                CHECK(r4.at(i, j) == 0.0);  // diagonal is pinned to zero
                continue;
            }
            // Symmetrization averages the ramp with its transpose.
            const double expect =
                0.5 * ((2.0 * (pi[i] - 1) + 3.0 * (pi[j] - 1)) +
                       (2.0 * (pi[j] - 1) + 3.0 * (pi[i] - 1)));
            CHECK(r4.at(i, j) == doctest::Approx(expect).epsilon(1e-9));
        }
}

TEST_CASE("lddt hand cases") {
    auto x = random_walk(9, 12);
    auto dm = distance_map(x);
    CHECK(lddt(dm, dm) == doctest::Approx(1.0));

    auto shifted = dm;
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 9; ++j)
            if (i != j) shifted.at(i, j) += 10.0;
    CHECK(lddt(dm, shifted) == doctest::Approx(0.0));

    // 3x3 map, one symmetric pair perturbed by 1.5 A: that pair passes the
    // {2, 4} thresholds only (credit 0.5); the other two pairs pass all.
    auto tri = distance_map(make({{0, 0, 0}, {4, 0, 0}, {4, 6, 0}}));
    auto cand = tri;
    cand.at(0, 1) += 1.5;
    cand.at(1, 0) += 1.5;
    CHECK(lddt(tri, cand) == doctest::Approx(5.0 / 6.0));
}

TEST_CASE("distance_map_rmse basics") {
    auto a = distance_map(random_walk(10, 13));
    CHECK(distance_map_rmse(a, a) == doctest::Approx(0.0));
    auto b = a;
    for (auto& v : b.values) v += 1.0;
    CHECK(distance_map_rmse(a, b) == doctest::Approx(1.0));
}

TEST_CASE("kabsch trivial and exact rigid recovery") {
    auto a = random_chain(10, 14);
    auto self = kabsch_superpose(a, a);
    CHECK(self.rmsd == doctest::Approx(0.0).epsilon(1e-9));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(self.rotation[i][j] == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-9));

    // 90 degrees about z plus a shift.
    ChainStructure b;
    for (const auto& p : a.coords) b.coords.push_back({-p[1] + 2.0, p[0] - 1.0, p[2] + 3.0});
    auto tf = kabsch_superpose(a, b);
    CHECK(tf.rmsd < 1e-9);
    auto moved = apply_transform(a, tf);
    for (int i = 0; i < a.length(); ++i) CHECK(dist(moved.coords[i], b.coords[i]) < 1e-9);

    // Determinant +1 even for a reflected target.
    ChainStructure refl;
    for (const auto& p : a.coords) refl.coords.push_back({-p[0], p[1], p[2]});
    auto rt = kabsch_superpose(a, refl).rotation;
    const double det =
        rt[0][0] * (rt[1][1] * rt[2][2] - rt[1][2] * rt[2][1]) -
        rt[0][1] * (rt[1][0] * rt[2][2] - rt[1][2] * rt[2][0]) +
        rt[0][2] * (rt[1][0] * rt[2][1] - rt[1][1] * rt[2][0]);
    CHECK(det == doctest::Approx(1.0).epsilon(1e-9));

    CHECK_THROWS(kabsch_superpose(make({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}),
                                  make({{0, 0, 0}, {1, 1, 0}, {2, 0, 0}})));
}

namespace {

// Independent numerical oracle: minimize RMSD over rotations (axis-angle)
// with multi-start coordinate descent, translations handled by centering.
double rmsd_oracle(const ChainStructure& a, const ChainStructure& b) {
    auto ca = center(a), cb = center(b);
    const int L = a.length();
    auto rmsd_for = [&](const std::array<double, 3>& r) {
        const double th = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
        std::array<std::array<double, 3>, 3> R{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
        if (th > 1e-14) {
            const double kx = r[0] / th, ky = r[1] / th, kz = r[2] / th;
            const double c = std::cos(th), s = std::sin(th), v = 1 - c;
            R = {{{c + kx * kx * v, kx * ky * v - kz * s, kx * kz * v + ky * s},
                  {ky * kx * v + kz * s, c + ky * ky * v, ky * kz * v - kx * s},
                  {kz * kx * v - ky * s, kz * ky * v + kx * s, c + kz * kz * v}}};
        }
        double acc = 0.0;
        for (int i = 0; i < L; ++i) {
            Vec3 p{};
            for (int d = 0; d < 3; ++d)
                p[d] = R[d][0] * ca.coords[i][0] + R[d][1] * ca.coords[i][1] +
                       R[d][2] * ca.coords[i][2];
            const double dd = dist(p, cb.coords[i]);
            acc += dd * dd;
        }
        return std::sqrt(acc / L);
    };

    std::mt19937_64 eng(99);
    std::uniform_real_distribution<double> u(-3.1, 3.1);
    double best = 1e300;
    for (int start = 0; start < 40; ++start) {
        std::array<double, 3> r{u(eng), u(eng), u(eng)};
        double cur = rmsd_for(r);
        double step = 0.5;
        while (step > 1e-10) {
            bool improved = false;
            for (int d = 0; d < 3; ++d)
                for (double sgn : {1.0, -1.0}) {
                    auto trial = r;
                    trial[d] += sgn * step;
                    const double val = rmsd_for(trial);
                    if (val < cur - 1e-15) {
                        cur = val;
                        r = trial;
                        improved = true;
                    }
                }
            if (!improved) step *= 0.5;
        }
        best = std::min(best, cur);
    }
    return best;
}

}  // namespace

TEST_CASE("kabsch rmsd matches numerical minimization oracle") {
    auto a = random_chain(10, 15);
    auto b = random_chain(10, 16);
    const double got = kabsch_superpose(a, b).rmsd;
    const double oracle = rmsd_oracle(a, b);
    CHECK(got == doctest::Approx(oracle).epsilon(1e-6));
    CHECK(got <= oracle + 1e-9);
}

TEST_CASE("kabsch rmsd invariant under rigid pre-motion") {
    auto a = random_chain(12, 17);
    auto b = random_chain(12, 18);
    const double base = kabsch_superpose(a, b).rmsd;

    // Cyclic axis permutation (a proper rotation, det +1) plus a shift.
    ChainStructure a_moved;
    for (const auto& p : a.coords)
        a_moved.coords.push_back({p[2] + 5.0, p[0] + 1.0, p[1] - 2.0});
    CHECK(kabsch_superpose(a_moved, b).rmsd == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("tm_score identities and d0") {
    CHECK(tm_d0(100) == doctest::Approx(1.24 * std::cbrt(100.0 - 15.0) - 1.8));
    CHECK(tm_d0(16) == doctest::Approx(0.5));  // clamped

    auto a = random_walk(50, 19);
    CHECK(tm_score(a, a) == doctest::Approx(1.0));

    ChainStructure b;
    for (const auto& p : a.coords) b.coords.push_back({-p[1] + 4.0, p[0] + 1.0, p[2] - 7.0});
    CHECK(tm_score(a, b) == doctest::Approx(1.0).epsilon(1e-6));

    auto c = random_walk(50, 20);
    CHECK(tm_score(a, c) == doctest::Approx(tm_score(c, a)).epsilon(1e-6));
    CHECK(tm_score(a, c) > 0.0);
    CHECK(tm_score(a, c) <= 1.0);
}

namespace {

// Brute-force oracle: Kabsch seeds from every contiguous fragment of every
// length >= 3, each followed by the same iterative refinement idea.
double tm_oracle(const ChainStructure& a, const ChainStructure& b) {
    const int L = a.length();
    const double d0 = tm_d0(L);
    auto score_of = [&](const ChainStructure& moved) {
        double s = 0.0;
        for (int i = 0; i < L; ++i) {
            const double d = dist(moved.coords[i], b.coords[i]);
            s += 1.0 / (1.0 + (d / d0) * (d / d0));
        }
        return s / L;
    };
    double best = 0.0;
    for (int len = 3; len <= L; ++len)
        for (int s0 = 0; s0 + len <= L; ++s0) {
            ChainStructure fa, fb;
            for (int i = s0; i < s0 + len; ++i) {
                fa.coords.push_back(a.coords[i]);
                fb.coords.push_back(b.coords[i]);
            }
            RigidTransform tf;
            try {
                tf = kabsch_superpose(fa, fb);
            } catch (...) {
                continue;
            }
            auto moved = apply_transform(a, tf);
            best = std::max(best, score_of(moved));
            // One refinement sweep over the close subset.
            for (int iter = 0; iter < 10; ++iter) {
                ChainStructure ra, rb;
                for (int i = 0; i < L; ++i)
                    if (dist(moved.coords[i], b.coords[i]) < d0 * 1.5) {
                        ra.coords.push_back(a.coords[i]);
                        rb.coords.push_back(b.coords[i]);
                    }
                if (ra.length() < 3) break;
                try {
                    tf = kabsch_superpose(ra, rb);
                } catch (...) {
                    break;
                }
                moved = apply_transform(a, tf);
                best = std::max(best, score_of(moved));
            }
        }
    return best;
}

}  // namespace

TEST_CASE("tm_score matches brute-force fragment search oracle") {
    auto a = random_walk(50, 21);
    auto b = random_walk(50, 22);
    const double got = tm_score(a, b);
    const double oracle = tm_oracle(a, b);
    CHECK(std::abs(got - oracle) <= 0.02);
}
