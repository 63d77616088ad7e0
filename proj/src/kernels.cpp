#include "par/kernels.hpp"

#include <cmath>

namespace par::kernels {

namespace {

inline double dist(const double* a, const double* b) {
    double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

void pairwise_distances_serial(const double* xyz, int L, double* out) {
    for (int i = 0; i < L; ++i) {
        out[static_cast<size_t>(i) * L + i] = 0.0;
        for (int j = i + 1; j < L; ++j) {
            double d = dist(xyz + 3 * i, xyz + 3 * j);
            out[static_cast<size_t>(i) * L + j] = d;
            out[static_cast<size_t>(j) * L + i] = d;
        }
    }
}

void pairwise_distances(const double* xyz, int L, double* out, bool parallel) {
    if (!parallel || L < 64) {
        pairwise_distances_serial(xyz, L, out);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int i = 0; i < L; ++i) {
        for (int j = 0; j < L; ++j) {
            out[static_cast<size_t>(i) * L + j] = i == j ? 0.0 : dist(xyz + 3 * i, xyz + 3 * j);
        }
    }
}

}  // namespace par::kernels
