#pragma once

// Minimal reverse-mode autodiff over dense row-major tensors (rank 1/2).
// Templated on the scalar type: float for training/inference, double for
// finite-difference gradient checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "par/kernels.hpp"

namespace par::nn {

template <typename T>
struct Node {
    int rows = 0;
    int cols = 1;
    std::vector<T> v;
    std::vector<T> g;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward_fn;

    size_t numel() const { return v.size(); }
    void ensure_grad() {
        if (g.size() != v.size()) g.assign(v.size(), T(0));
    }
    T& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    const T& at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
};

template <typename T>
using Ref = std::shared_ptr<Node<T>>;

template <typename T>
Ref<T> make_tensor(int rows, int cols, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->rows = rows;
    n->cols = cols;
    n->v.assign(static_cast<size_t>(rows) * cols, T(0));
    n->requires_grad = requires_grad;
    return n;
}

template <typename T>
Ref<T> from_data(int rows, int cols, const std::vector<T>& data) {
    auto n = make_tensor<T>(rows, cols);
    n->v = data;
    if (n->v.size() != static_cast<size_t>(rows) * cols)
        throw std::invalid_argument("from_data: size mismatch");
    return n;
}

template <typename T>
Ref<T> detach(const Ref<T>& a) {
    auto n = make_tensor<T>(a->rows, a->cols);
    n->v = a->v;
    return n;
}

namespace detail {

template <typename T>
inline Ref<T> child(int rows, int cols, std::vector<Ref<T>> parents) {
    auto n = make_tensor<T>(rows, cols);
    for (auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->parents = std::move(parents);
    return n;
}

template <typename T>
inline void check_same_shape(const Ref<T>& a, const Ref<T>& b, const char* op) {
    if (a->rows != b->rows || a->cols != b->cols)
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

template <typename T>
Ref<T> add(const Ref<T>& a, const Ref<T>& b) {
    detail::check_same_shape(a, b, "add");
    auto out = detail::child<T>(a->rows, a->cols, {a, b});
    for (size_t i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] + b->v[i];
    if (out->requires_grad)
        out->backward_fn = [a, b](Node<T>& o) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < o.numel(); ++i) a->g[i] += o.g[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < o.numel(); ++i) b->g[i] += o.g[i];
            }
        };
    return out;
}

template <typename T>
Ref<T> sub(const Ref<T>& a, const Ref<T>& b) {
    detail::check_same_shape(a, b, "sub");
    auto out = detail::child<T>(a->rows, a->cols, {a, b});
    for (size_t i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] - b->v[i];
    if (out->requires_grad)
        out->backward_fn = [a, b](Node<T>& o) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < o.numel(); ++i) a->g[i] += o.g[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < o.numel(); ++i) b->g[i] -= o.g[i];
            }
        };
    return out;
}

template <typename T>
Ref<T> mul(const Ref<T>& a, const Ref<T>& b) {
    detail::check_same_shape(a, b, "mul");
    auto out = detail::child<T>(a->rows, a->cols, {a, b});
    for (size_t i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] * b->v[i];
    if (out->requires_grad)
        out->backward_fn = [a, b](Node<T>& o) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < o.numel(); ++i) a->g[i] += o.g[i] * b->v[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < o.numel(); ++i) b->g[i] += o.g[i] * a->v[i];
            }
        };
    return out;
}

template <typename T>
Ref<T> scale(const Ref<T>& a, T c) {
    auto out = detail::child<T>(a->rows, a->cols, {a});
    for (size_t i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] * c;
    if (out->requires_grad)
        out->backward_fn = [a, c](Node<T>& o) {
            a->ensure_grad();
            for (size_t i = 0; i < o.numel(); ++i) a->g[i] += o.g[i] * c;
        };
    return out;
}

template <typename T>
Ref<T> add_scalar(const Ref<T>& a, T c) {
    auto out = detail::child<T>(a->rows, a->cols, {a});
    for (size_t i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] + c;
    if (out->requires_grad)
        out->backward_fn = [a](Node<T>& o) {
            a->ensure_grad();
            for (size_t i = 0; i < o.numel(); ++i) a->g[i] += o.g[i];
        };
    return out;
}

template <typename T>
Ref<T> matmul(const Ref<T>& a, const Ref<T>& b) {
    if (a->cols != b->rows) throw std::invalid_argument("matmul: inner dim mismatch");
    const int M = a->rows, K = a->cols, N = b->cols;
    auto out = detail::child<T>(M, N, {a, b});
    kernels::gemm_nn(a->v.data(), b->v.data(), out->v.data(), M, K, N);
    if (out->requires_grad)
        out->backward_fn = [a, b, M, K, N](Node<T>& o) {
            if (a->requires_grad) {
                a->ensure_grad();
                std::vector<T> tmp(static_cast<size_t>(M) * K);
                kernels::gemm_nt(o.g.data(), b->v.data(), tmp.data(), M, N, K);
                for (size_t i = 0; i < tmp.size(); ++i) a->g[i] += tmp[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                std::vector<T> tmp(static_cast<size_t>(K) * N);
                kernels::gemm_tn(a->v.data(), o.g.data(), tmp.data(), K, M, N);
                for (size_t i = 0; i < tmp.size(); ++i) b->g[i] += tmp[i];
            }
        };
    return out;
}

template <typename T>
Ref<T> transpose(const Ref<T>& a) {
    auto out = detail::child<T>(a->cols, a->rows, {a});
    for (int i = 0; i < a->rows; ++i)
        for (int j = 0; j < a->cols; ++j) out->at(j, i) = a->at(i, j);
    if (out->requires_grad)
        out->backward_fn = [a](Node<T>& o) {
            a->ensure_grad();
            for (int i = 0; i < o.rows; ++i)
                for (int j = 0; j < o.cols; ++j)
                    a->g[static_cast<size_t>(j) * a->cols + i] +=
                        o.g[static_cast<size_t>(i) * o.cols + j];
        };
    return out;
}

/// Broadcast-add a row vector (shape [1, N]) to every row of a.
template <typename T>
Ref<T> add_rowvec(const Ref<T>& a, const Ref<T>& bias) {
    if (bias->rows != 1 || bias->cols != a->cols)
        throw std::invalid_argument("add_rowvec: bias shape mismatch");
    auto out = detail::child<T>(a->rows, a->cols, {a, bias});
    for (int i = 0; i < a->rows; ++i)
        for (int j = 0; j < a->cols; ++j) out->at(i, j) = a->at(i, j) + bias->v[j];
    if (out->requires_grad)
        out->backward_fn = [a, bias](Node<T>& o) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < o.numel(); ++i) a->g[i] += o.g[i];
            }
            if (bias->requires_grad) {
                bias->ensure_grad();
                for (int i = 0; i < o.rows; ++i)
                    for (int j = 0; j < o.cols; ++j)
                        bias->g[j] += o.g[static_cast<size_t>(i) * o.cols + j];
            }
        };
    return out;
}

/// Broadcast-multiply every row of a by a row vector (shape [1, N]).
template <typename T>
Ref<T> mul_rowvec(const Ref<T>& a, const Ref<T>& gain) {
    if (gain->rows != 1 || gain->cols != a->cols)
        throw std::invalid_argument("mul_rowvec: gain shape mismatch");
    auto out = detail::child<T>(a->rows, a->cols, {a, gain});
    for (int i = 0; i < a->rows; ++i)
        for (int j = 0; j < a->cols; ++j) out->at(i, j) = a->at(i, j) * gain->v[j];
    if (out->requires_grad)
        out->backward_fn = [a, gain](Node<T>& o) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (int i = 0; i < o.rows; ++i)
                    for (int j = 0; j < o.cols; ++j)
                        a->g[static_cast<size_t>(i) * o.cols + j] +=
                            o.g[static_cast<size_t>(i) * o.cols + j] * gain->v[j];
            }
            if (gain->requires_grad) {
                gain->ensure_grad();
                for (int i = 0; i < o.rows; ++i)
                    for (int j = 0; j < o.cols; ++j)
                        gain->g[j] += o.g[static_cast<size_t>(i) * o.cols + j] * a->at(i, j);
            }
        };
    return out;
}

template <typename T>
Ref<T> concat_rows(const std::vector<Ref<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    int cols = parts[0]->cols, rows = 0;
    for (auto& p : parts) {
        if (p->cols != cols) throw std::invalid_argument("concat_rows: col mismatch");
        rows += p->rows;
    }
    auto out = detail::child<T>(rows, cols, parts);
    int r = 0;
    for (auto& p : parts) {
        std::copy(p->v.begin(), p->v.end(), out->v.begin() + static_cast<size_t>(r) * cols);
        r += p->rows;
    }
    if (out->requires_grad)
        out->backward_fn = [parts, cols](Node<T>& o) {
            int r = 0;
            for (auto& p : parts) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (size_t i = 0; i < p->numel(); ++i)
                        p->g[i] += o.g[static_cast<size_t>(r) * cols + i];
                }
                r += p->rows;
            }
        };
    return out;
}

template <typename T>
Ref<T> slice_rows(const Ref<T>& a, int r0, int r1) {
    if (r0 < 0 || r1 > a->rows || r0 >= r1)
        throw std::invalid_argument("slice_rows: bad range");
    auto out = detail::child<T>(r1 - r0, a->cols, {a});
    std::copy(a->v.begin() + static_cast<size_t>(r0) * a->cols,
              a->v.begin() + static_cast<size_t>(r1) * a->cols, out->v.begin());
    if (out->requires_grad)
        out->backward_fn = [a, r0](Node<T>& o) {
            a->ensure_grad();
            for (size_t i = 0; i < o.numel(); ++i)
                a->g[static_cast<size_t>(r0) * a->cols + i] += o.g[i];
        };
    return out;
}

template <typename T>
Ref<T> concat_cols(const std::vector<Ref<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    int rows = parts[0]->rows, cols = 0;
    for (auto& p : parts) {
        if (p->rows != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += p->cols;
    }
    auto out = detail::child<T>(rows, cols, parts);
    int c = 0;
    for (auto& p : parts) {
        for (int i = 0; i < rows; ++i)
            std::copy(p->v.begin() + static_cast<size_t>(i) * p->cols,
                      p->v.begin() + static_cast<size_t>(i + 1) * p->cols,
                      out->v.begin() + static_cast<size_t>(i) * cols + c);
        c += p->cols;
    }
    if (out->requires_grad)
        out->backward_fn = [parts, rows, cols](Node<T>& o) {
            int c = 0;
            for (auto& p : parts) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < p->cols; ++j)
                            p->g[static_cast<size_t>(i) * p->cols + j] +=
                                o.g[static_cast<size_t>(i) * cols + c + j];
                }
                c += p->cols;
            }
        };
    return out;
}

template <typename T>
Ref<T> slice_cols(const Ref<T>& a, int c0, int c1) {
    if (c0 < 0 || c1 > a->cols || c0 >= c1)
        throw std::invalid_argument("slice_cols: bad range");
    auto out = detail::child<T>(a->rows, c1 - c0, {a});
    for (int i = 0; i < a->rows; ++i)
        for (int j = c0; j < c1; ++j) out->at(i, j - c0) = a->at(i, j);
    if (out->requires_grad)
        out->backward_fn = [a, c0](Node<T>& o) {
            a->ensure_grad();
            for (int i = 0; i < o.rows; ++i)
                for (int j = 0; j < o.cols; ++j)
                    a->g[static_cast<size_t>(i) * a->cols + c0 + j] +=
                        o.g[static_cast<size_t>(i) * o.cols + j];
        };
    return out;
}

/// Repeat a [1, N] row m times.
template <typename T>
Ref<T> repeat_row(const Ref<T>& a, int m) {
    if (a->rows != 1) throw std::invalid_argument("repeat_row: expected a row vector");
    auto out = detail::child<T>(m, a->cols, {a});
    for (int i = 0; i < m; ++i)
        std::copy(a->v.begin(), a->v.end(), out->v.begin() + static_cast<size_t>(i) * a->cols);
    if (out->requires_grad)
        out->backward_fn = [a](Node<T>& o) {
            a->ensure_grad();
            for (int i = 0; i < o.rows; ++i)
                for (int j = 0; j < o.cols; ++j)
                    a->g[j] += o.g[static_cast<size_t>(i) * o.cols + j];
        };
    return out;
}

/// Piecewise-linear resampling along the row axis at m evenly spaced
/// positions over [first row, last row]; differentiable in the input.
template <typename T>
Ref<T> lerp_resample_rows(const Ref<T>& a, int m) {
    const int L = a->rows;
    if (L < 1 || m < 1) throw std::invalid_argument("lerp_resample_rows: bad sizes");
    if (m == L && !a->requires_grad) return a;
    struct W {
        int lo, hi;
        T flo, fhi;
    };
    std::vector<W> ws(m);
    for (int k = 0; k < m; ++k) {
        double t = m == 1 ? 0.0 : static_cast<double>(k) * (L - 1) / (m - 1);
        int lo = std::min(static_cast<int>(t), L - 1);
        int hi = std::min(lo + 1, L - 1);
        T f = static_cast<T>(t - lo);
        ws[k] = {lo, hi, T(1) - f, f};
    }
    auto out = detail::child<T>(m, a->cols, {a});
    for (int k = 0; k < m; ++k)
        for (int j = 0; j < a->cols; ++j)
            out->at(k, j) = ws[k].flo * a->at(ws[k].lo, j) + ws[k].fhi * a->at(ws[k].hi, j);
    if (out->requires_grad)
        out->backward_fn = [a, ws](Node<T>& o) {
            a->ensure_grad();
            for (int k = 0; k < o.rows; ++k)
                for (int j = 0; j < o.cols; ++j) {
                    T go = o.g[static_cast<size_t>(k) * o.cols + j];
                    a->g[static_cast<size_t>(ws[k].lo) * a->cols + j] += ws[k].flo * go;
                    a->g[static_cast<size_t>(ws[k].hi) * a->cols + j] += ws[k].fhi * go;
                }
        };
    return out;
}

template <typename T>
Ref<T> silu(const Ref<T>& a) {
    auto out = detail::child<T>(a->rows, a->cols, {a});
    for (size_t i = 0; i < out->numel(); ++i) {
        T s = T(1) / (T(1) + std::exp(-a->v[i]));
        out->v[i] = a->v[i] * s;
    }
    if (out->requires_grad)
        out->backward_fn = [a](Node<T>& o) {
            a->ensure_grad();
            for (size_t i = 0; i < o.numel(); ++i) {
                T s = T(1) / (T(1) + std::exp(-a->v[i]));
                a->g[i] += o.g[i] * (s + a->v[i] * s * (T(1) - s));
            }
        };
    return out;
}

/// Row-wise softmax; an optional additive mask should be applied beforehand.
template <typename T>
Ref<T> softmax_rows(const Ref<T>& a) {
    auto out = detail::child<T>(a->rows, a->cols, {a});
    for (int i = 0; i < a->rows; ++i) {
        T mx = a->at(i, 0);
        for (int j = 1; j < a->cols; ++j) mx = std::max(mx, a->at(i, j));
        T sum = T(0);
        for (int j = 0; j < a->cols; ++j) {
            T e = std::exp(a->at(i, j) - mx);
            out->at(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < a->cols; ++j) out->at(i, j) /= sum;
    }
    if (out->requires_grad)
        out->backward_fn = [a](Node<T>& o) {
            a->ensure_grad();
            for (int i = 0; i < o.rows; ++i) {
                T dot = T(0);
                for (int j = 0; j < o.cols; ++j)
                    dot += o.g[static_cast<size_t>(i) * o.cols + j] * o.at(i, j);
                for (int j = 0; j < o.cols; ++j) {
                    size_t k = static_cast<size_t>(i) * o.cols + j;
                    a->g[k] += o.v[k] * (o.g[k] - dot);
                }
            }
        };
    return out;
}

/// Row-wise normalization to zero mean / unit variance (epsilon-guarded);
/// affine gain/bias applied separately via mul_rowvec/add_rowvec.
template <typename T>
Ref<T> layer_norm_rows(const Ref<T>& a, T eps = T(1e-5)) {
    auto out = detail::child<T>(a->rows, a->cols, {a});
    const int C = a->cols;
    std::vector<T> inv_sigma(a->rows);
    for (int i = 0; i < a->rows; ++i) {
        T mean = T(0);
        for (int j = 0; j < C; ++j) mean += a->at(i, j);
        mean /= C;
        T var = T(0);
        for (int j = 0; j < C; ++j) {
            T d = a->at(i, j) - mean;
            var += d * d;
        }
        var /= C;
        T is = T(1) / std::sqrt(var + eps);
        inv_sigma[i] = is;
        for (int j = 0; j < C; ++j) out->at(i, j) = (a->at(i, j) - mean) * is;
    }
    if (out->requires_grad)
        out->backward_fn = [a, inv_sigma](Node<T>& o) {
            a->ensure_grad();
            const int C = o.cols;
            for (int i = 0; i < o.rows; ++i) {
                T mean_dy = T(0), mean_dyy = T(0);
                for (int j = 0; j < C; ++j) {
                    size_t k = static_cast<size_t>(i) * C + j;
                    mean_dy += o.g[k];
                    mean_dyy += o.g[k] * o.v[k];
                }
                mean_dy /= C;
                mean_dyy /= C;
                for (int j = 0; j < C; ++j) {
                    size_t k = static_cast<size_t>(i) * C + j;
                    a->g[k] += inv_sigma[i] * (o.g[k] - mean_dy - o.v[k] * mean_dyy);
                }
            }
        };
    return out;
}

template <typename T>
Ref<T> sum_all(const Ref<T>& a) {
    auto out = detail::child<T>(1, 1, {a});
    T acc = T(0);
    for (size_t i = 0; i < a->numel(); ++i) acc += a->v[i];
    out->v[0] = acc;
    if (out->requires_grad)
        out->backward_fn = [a](Node<T>& o) {
            a->ensure_grad();
            for (size_t i = 0; i < a->numel(); ++i) a->g[i] += o.g[0];
        };
    return out;
}

template <typename T>
Ref<T> mean_all(const Ref<T>& a) {
    return scale(sum_all(a), T(1) / static_cast<T>(a->numel()));
}

/// Mean squared error over all entries.
template <typename T>
Ref<T> mse(const Ref<T>& a, const Ref<T>& b) {
    auto d = sub(a, b);
    return mean_all(mul(d, d));
}

/// Reverse-mode sweep from a scalar loss node.
template <typename T>
void backward(const Ref<T>& loss) {
    if (loss->numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    // Iterative postorder DFS; graphs are DAGs by construction.
    std::vector<std::pair<Node<T>*, size_t>> stack{{loss.get(), 0}};
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss->ensure_grad();
    loss->g[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

template <typename T>
void zero_grad(const Ref<T>& p) {
    p->g.assign(p->v.size(), T(0));
}

template <typename T>
bool all_finite(const Ref<T>& a) {
    for (T x : a->v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

}  // namespace par::nn
