#pragma once

#include <cstddef>

namespace par::kernels {

// Row-major GEMM kernels: C = A(MxK) * B(KxN), C preallocated, overwritten.
// The _serial variants are the reference implementations; the parallel ones
// are bitwise-identical (each output element is a fixed-order serial dot
// product), so results do not depend on the thread count.

template <typename T>
void gemm_nn_serial(const T* a, const T* b, T* c, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        T* ci = c + static_cast<size_t>(i) * N;
        for (int j = 0; j < N; ++j) ci[j] = T(0);
        const T* ai = a + static_cast<size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            T aik = ai[k];
            const T* bk = b + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) ci[j] += aik * bk[j];
        }
    }
}

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int M, int K, int N) {
#pragma omp parallel for schedule(static) if (static_cast<long>(M) * K * N > 16384)
    for (int i = 0; i < M; ++i) {
        T* ci = c + static_cast<size_t>(i) * N;
        for (int j = 0; j < N; ++j) ci[j] = T(0);
        const T* ai = a + static_cast<size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            T aik = ai[k];
            const T* bk = b + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) ci[j] += aik * bk[j];
        }
    }
}

// C = A(MxK) * B(NxK)^T
template <typename T>
void gemm_nt_serial(const T* a, const T* b, T* c, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        const T* ai = a + static_cast<size_t>(i) * K;
        for (int j = 0; j < N; ++j) {
            const T* bj = b + static_cast<size_t>(j) * K;
            T acc = T(0);
            for (int k = 0; k < K; ++k) acc += ai[k] * bj[k];
            c[static_cast<size_t>(i) * N + j] = acc;
        }
    }
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int M, int K, int N) {
#pragma omp parallel for schedule(static) if (static_cast<long>(M) * K * N > 16384)
    for (int i = 0; i < M; ++i) {
        const T* ai = a + static_cast<size_t>(i) * K;
        for (int j = 0; j < N; ++j) {
            const T* bj = b + static_cast<size_t>(j) * K;
            T acc = T(0);
            for (int k = 0; k < K; ++k) acc += ai[k] * bj[k];
            c[static_cast<size_t>(i) * N + j] = acc;
        }
    }
}

// C = A(KxM)^T * B(KxN); used for weight gradients.
template <typename T>
void gemm_tn_serial(const T* a, const T* b, T* c, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        T* ci = c + static_cast<size_t>(i) * N;
        for (int j = 0; j < N; ++j) ci[j] = T(0);
        for (int k = 0; k < K; ++k) {
            T aki = a[static_cast<size_t>(k) * M + i];
            const T* bk = b + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) ci[j] += aki * bk[j];
        }
    }
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int M, int K, int N) {
#pragma omp parallel for schedule(static) if (static_cast<long>(M) * K * N > 16384)
    for (int i = 0; i < M; ++i) {
        T* ci = c + static_cast<size_t>(i) * N;
        for (int j = 0; j < N; ++j) ci[j] = T(0);
        for (int k = 0; k < K; ++k) {
            T aki = a[static_cast<size_t>(k) * M + i];
            const T* bk = b + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) ci[j] += aki * bk[j];
        }
    }
}

// Pairwise Euclidean distances of L xyz points (row-major Lx3) into an LxL
// map. Serial reference and OpenMP version produce identical bits.
void pairwise_distances_serial(const double* xyz, int L, double* out);
void pairwise_distances(const double* xyz, int L, double* out, bool parallel);

}  // namespace par::kernels
