// Benchmark: OpenMP kernels vs their serial reference implementations, plus
// a bitwise agreement check at every size.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include <omp.h>

#include "par/kernels.hpp"
#include "par/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm-up
    auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r) fn();
    auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main() {
    std::printf("threads=%d\n", omp_get_max_threads());
    std::printf("%-12s %8s %12s %12s %8s %9s\n", "kernel", "size", "serial_ms", "parallel_ms",
                "speedup", "bitexact");

    par::Rng rng(42);
    for (int n : {64, 128, 256, 512, 1024}) {
        std::vector<float> a(n * n), b(n * n), c_s(n * n), c_p(n * n);
        for (auto& x : a) x = static_cast<float>(rng.normal());
        for (auto& x : b) x = static_cast<float>(rng.normal());

        const int reps = n <= 256 ? 20 : 5;
        double ts = time_ms([&] { par::kernels::gemm_nn_serial(a.data(), b.data(), c_s.data(), n, n, n); }, reps);
        double tp = time_ms([&] { par::kernels::gemm_nn(a.data(), b.data(), c_p.data(), n, n, n); }, reps);
        bool exact = std::memcmp(c_s.data(), c_p.data(), sizeof(float) * c_s.size()) == 0;
        std::printf("%-12s %8d %12.3f %12.3f %8.2f %9s\n", "gemm_nn", n, ts, tp, ts / tp,
                    exact ? "yes" : "NO");
    }

    for (int L : {128, 256, 512, 1024}) {
        std::vector<double> xyz(L * 3), d_s(L * L), d_p(L * L);
        for (auto& x : xyz) x = rng.normal() * 10.0;
        const int reps = 50;
        double ts = time_ms([&] { par::kernels::pairwise_distances_serial(xyz.data(), L, d_s.data()); }, reps);
        double tp = time_ms([&] { par::kernels::pairwise_distances(xyz.data(), L, d_p.data(), true); }, reps);
        bool exact = std::memcmp(d_s.data(), d_p.data(), sizeof(double) * d_s.size()) == 0;
        std::printf("%-12s %8d %12.3f %12.3f %8.2f %9s\n", "pairwise", L, ts, tp, ts / tp,
                    exact ? "yes" : "NO");
    }
    return 0;
}
