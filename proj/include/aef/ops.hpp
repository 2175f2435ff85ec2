#pragma once

#include <algorithm>
#include <cmath>

#include "aef/parallel.hpp"
#include "aef/tensor.hpp"

namespace aef {

// ---------------------------------------------------------------------------
// Raw GEMM kernels (row-major, accumulate into C). Loop orders are chosen so
// the inner loop streams contiguously and auto-vectorizes.
// ---------------------------------------------------------------------------

namespace detail {

inline int64_t gemm_grain(int64_t inner) { return std::max<int64_t>(1, 262144 / std::max<int64_t>(1, inner)); }

// C[M,N] = (Accumulate ? C : 0) + A[M,K] * B[K,N]. Row-major; 4x32 register
// tile on the main path so each B load feeds four FMA rows.
template <bool Accumulate, class T>
void gemm_nn_impl(int M, int N, int K, const T* A, const T* B, T* C) {
    constexpr int MR = 4, NR = 32;
    parallel_for(0, (M + MR - 1) / MR, [&](int64_t t0, int64_t t1) {
        for (int64_t ti = t0; ti < t1; ++ti) {
            const int i0 = int(ti) * MR;
            const int mr = std::min(MR, M - i0);
            int j0 = 0;
            for (; j0 + NR <= N; j0 += NR) {
                T acc[MR][NR] = {};
                for (int k = 0; k < K; ++k) {
                    const T* __restrict b = B + int64_t(k) * N + j0;
                    for (int r = 0; r < mr; ++r) {
                        const T av = A[int64_t(i0 + r) * K + k];
                        for (int c = 0; c < NR; ++c) acc[r][c] += av * b[c];
                    }
                }
                for (int r = 0; r < mr; ++r) {
                    T* __restrict cp = C + int64_t(i0 + r) * N + j0;
                    if constexpr (Accumulate)
                        for (int c = 0; c < NR; ++c) cp[c] += acc[r][c];
                    else
                        for (int c = 0; c < NR; ++c) cp[c] = acc[r][c];
                }
            }
            if (j0 < N) {
                const int nr = N - j0;
                for (int r = 0; r < mr; ++r) {
                    T* __restrict cp = C + int64_t(i0 + r) * N + j0;
                    if constexpr (!Accumulate)
                        for (int c = 0; c < nr; ++c) cp[c] = T(0);
                    const T* a = A + int64_t(i0 + r) * K;
                    for (int k = 0; k < K; ++k) {
                        const T av = a[k];
                        const T* __restrict b = B + int64_t(k) * N + j0;
                        for (int c = 0; c < nr; ++c) cp[c] += av * b[c];
                    }
                }
            }
        }
    }, std::max<int64_t>(1, gemm_grain(int64_t(N) * K) / MR));
}

// C[M,N] = (Accumulate ? C : 0) + A[M,K] * B[N,K]^T. Eight independent
// accumulator lanes so the reduction vectorizes without -ffast-math.
template <bool Accumulate, class T>
void gemm_nt_impl(int M, int N, int K, const T* A, const T* B, T* C) {
    parallel_for(0, M, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            const T* a = A + i * K;
            T* c = C + i * N;
            for (int j = 0; j < N; ++j) {
                const T* __restrict b = B + int64_t(j) * K;
                T lane[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
                int k = 0;
                for (; k + 8 <= K; k += 8)
                    for (int l = 0; l < 8; ++l) lane[l] += a[k + l] * b[k + l];
                T acc = ((lane[0] + lane[4]) + (lane[1] + lane[5])) +
                        ((lane[2] + lane[6]) + (lane[3] + lane[7]));
                for (; k < K; ++k) acc += a[k] * b[k];
                if constexpr (Accumulate) c[j] += acc;
                else c[j] = acc;
            }
        }
    }, gemm_grain(int64_t(N) * K));
}

// C[M,N] = (Accumulate ? C : 0) + A[K,M]^T * B[K,N]; same tiling, A reads
// are strided scalar broadcasts.
template <bool Accumulate, class T>
void gemm_tn_impl(int M, int N, int K, const T* A, const T* B, T* C) {
    constexpr int MR = 4, NR = 32;
    parallel_for(0, (M + MR - 1) / MR, [&](int64_t t0, int64_t t1) {
        for (int64_t ti = t0; ti < t1; ++ti) {
            const int i0 = int(ti) * MR;
            const int mr = std::min(MR, M - i0);
            int j0 = 0;
            for (; j0 + NR <= N; j0 += NR) {
                T acc[MR][NR] = {};
                for (int k = 0; k < K; ++k) {
                    const T* __restrict b = B + int64_t(k) * N + j0;
                    const T* arow = A + int64_t(k) * M + i0;
                    for (int r = 0; r < mr; ++r) {
                        const T av = arow[r];
                        for (int c = 0; c < NR; ++c) acc[r][c] += av * b[c];
                    }
                }
                for (int r = 0; r < mr; ++r) {
                    T* __restrict cp = C + int64_t(i0 + r) * N + j0;
                    if constexpr (Accumulate)
                        for (int c = 0; c < NR; ++c) cp[c] += acc[r][c];
                    else
                        for (int c = 0; c < NR; ++c) cp[c] = acc[r][c];
                }
            }
            if (j0 < N) {
                const int nr = N - j0;
                for (int r = 0; r < mr; ++r) {
                    T* __restrict cp = C + int64_t(i0 + r) * N + j0;
                    if constexpr (!Accumulate)
                        for (int c = 0; c < nr; ++c) cp[c] = T(0);
                }
                for (int k = 0; k < K; ++k) {
                    const T* __restrict b = B + int64_t(k) * N + j0;
                    const T* arow = A + int64_t(k) * M + i0;
                    for (int r = 0; r < mr; ++r) {
                        T* __restrict cp = C + int64_t(i0 + r) * N + j0;
                        const T av = arow[r];
                        for (int c = 0; c < nr; ++c) cp[c] += av * b[c];
                    }
                }
            }
        }
    }, std::max<int64_t>(1, gemm_grain(int64_t(N) * K) / MR));
}

template <class T>
void gemm_nn(int M, int N, int K, const T* A, const T* B, T* C) {
    gemm_nn_impl<true>(M, N, K, A, B, C);
}
template <class T>
void gemm_nn0(int M, int N, int K, const T* A, const T* B, T* C) {
    gemm_nn_impl<false>(M, N, K, A, B, C);
}
template <class T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C) {
    gemm_nt_impl<true>(M, N, K, A, B, C);
}
template <class T>
void gemm_nt0(int M, int N, int K, const T* A, const T* B, T* C) {
    gemm_nt_impl<false>(M, N, K, A, B, C);
}
template <class T>
void gemm_tn(int M, int N, int K, const T* A, const T* B, T* C) {
    gemm_tn_impl<true>(M, N, K, A, B, C);
}
template <class T>
void gemm_tn0(int M, int N, int K, const T* A, const T* B, T* C) {
    gemm_tn_impl<false>(M, N, K, A, B, C);
}

// reusable per-thread scratch for im2col buffers
template <class T>
std::vector<T>& conv_scratch(int which) {
    static thread_local std::vector<T> bufs[2];
    return bufs[which];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise / scalar ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a.shape(), b.shape(), "add");
    auto out = Tensor<T>::result(a.shape(), {a.node(), b.node()}, [a = a.node(), b = b.node()](Node<T>& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) b->grad[i] += n.grad[i];
        }
    });
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& o = out.data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
    return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a.shape(), b.shape(), "sub");
    auto out = Tensor<T>::result(a.shape(), {a.node(), b.node()}, [a = a.node(), b = b.node()](Node<T>& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) b->grad[i] -= n.grad[i];
        }
    });
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& o = out.data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = av[i] - bv[i];
    return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a.shape(), b.shape(), "mul");
    auto out = Tensor<T>::result(a.shape(), {a.node(), b.node()}, [a = a.node(), b = b.node()](Node<T>& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) b->grad[i] += n.grad[i] * a->value[i];
        }
    });
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& o = out.data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
    return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    auto out = Tensor<T>::result(a.shape(), {a.node()}, [a = a.node(), s](Node<T>& n) {
        a->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i] * s;
    });
    const auto& av = a.data();
    auto& o = out.data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = av[i] * s;
    return out;
}

template <class T>
Tensor<T> add_const(const Tensor<T>& a, T c) {
    auto out = Tensor<T>::result(a.shape(), {a.node()}, [a = a.node()](Node<T>& n) {
        a->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i];
    });
    const auto& av = a.data();
    auto& o = out.data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = av[i] + c;
    return out;
}

template <class T>
Tensor<T> abs(const Tensor<T>& a) {
    auto out = Tensor<T>::result(a.shape(), {a.node()}, [a = a.node()](Node<T>& n) {
        a->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            const T x = a->value[i];
            a->grad[i] += n.grad[i] * (x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)));
        }
    });
    const auto& av = a.data();
    auto& o = out.data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = std::abs(av[i]);
    return out;
}

// x * sigmoid(x)
template <class T>
Tensor<T> silu(const Tensor<T>& a) {
    auto out = Tensor<T>::result(a.shape(), {a.node()}, [a = a.node()](Node<T>& n) {
        a->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            const T x = a->value[i];
            const T s = T(1) / (T(1) + std::exp(-x));
            a->grad[i] += n.grad[i] * s * (T(1) + x * (T(1) - s));
        }
    });
    const auto& av = a.data();
    auto& o = out.data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = av[i] / (T(1) + std::exp(-av[i]));
    return out;
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    auto out = Tensor<T>::result({1}, {a.node()}, [a = a.node()](Node<T>& n) {
        a->ensure_grad();
        const T g = n.grad[0];
        for (auto& v : a->grad) v += g;
    });
    T acc = T(0);
    for (T v : a.data()) acc += v;
    out.data()[0] = acc;
    return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
    const T inv = T(1) / T(a.size());
    auto out = Tensor<T>::result({1}, {a.node()}, [a = a.node(), inv](Node<T>& n) {
        a->ensure_grad();
        const T g = n.grad[0] * inv;
        for (auto& v : a->grad) v += g;
    });
    T acc = T(0);
    for (T v : a.data()) acc += v;
    out.data()[0] = acc * inv;
    return out;
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (numel(shape) != a.size())
        throw DimError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    auto out = Tensor<T>::result(std::move(shape), {a.node()}, [a = a.node()](Node<T>& n) {
        a->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i];
    });
    out.data() = a.data();
    return out;
}

// Concatenate [Ci,H,W] maps along the channel axis (contiguous blocks).
template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimError("concat_channels: empty input");
    const int H = parts[0].dim(1), W = parts[0].dim(2);
    int C = 0;
    std::vector<std::shared_ptr<Node<T>>> ps;
    for (const auto& p : parts) {
        if (p.shape().size() != 3 || p.dim(1) != H || p.dim(2) != W)
            throw DimError("concat_channels: spatial mismatch at part " + std::to_string(ps.size()));
        C += p.dim(0);
        ps.push_back(p.node());
    }
    auto out = Tensor<T>::result({C, H, W}, ps, [ps](Node<T>& n) {
        size_t off = 0;
        for (const auto& p : ps) {
            if (p->requires_grad) {
                p->ensure_grad();
                for (size_t i = 0; i < p->value.size(); ++i) p->grad[i] += n.grad[off + i];
            }
            off += p->value.size();
        }
    });
    size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + off);
        off += p.data().size();
    }
    return out;
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& a, int c0, int c1) {
    if (a.shape().size() != 3 || c0 < 0 || c1 > a.dim(0) || c0 >= c1)
        throw DimError("slice_channels: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                       ") for " + shape_str(a.shape()));
    const int64_t hw = int64_t(a.dim(1)) * a.dim(2);
    auto out = Tensor<T>::result({c1 - c0, a.dim(1), a.dim(2)}, {a.node()}, [a = a.node(), c0, hw](Node<T>& n) {
        a->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) a->grad[size_t(c0 * hw) + i] += n.grad[i];
    });
    std::copy(a.data().begin() + c0 * hw, a.data().begin() + c1 * hw, out.data().begin());
    return out;
}

// [C,H,W] -> token matrix [H*W, C]
template <class T>
Tensor<T> channels_to_rows(const Tensor<T>& a) {
    if (a.shape().size() != 3) throw DimError("channels_to_rows: want [C,H,W], got " + shape_str(a.shape()));
    const int C = a.dim(0);
    const int64_t P = int64_t(a.dim(1)) * a.dim(2);
    auto out = Tensor<T>::result({int(P), C}, {a.node()}, [a = a.node(), C, P](Node<T>& n) {
        a->ensure_grad();
        for (int64_t p = 0; p < P; ++p)
            for (int c = 0; c < C; ++c) a->grad[size_t(c * P + p)] += n.grad[size_t(p * C + c)];
    });
    const auto& av = a.data();
    auto& o = out.data();
    for (int64_t p = 0; p < P; ++p)
        for (int c = 0; c < C; ++c) o[size_t(p * C + c)] = av[size_t(c * P + p)];
    return out;
}

// [H*W, C] -> [C,H,W]
template <class T>
Tensor<T> rows_to_channels(const Tensor<T>& a, int H, int W) {
    if (a.shape().size() != 2 || a.dim(0) != H * W)
        throw DimError("rows_to_channels: want [" + std::to_string(H * W) + ",C], got " + shape_str(a.shape()));
    const int C = a.dim(1);
    const int64_t P = int64_t(H) * W;
    auto out = Tensor<T>::result({C, H, W}, {a.node()}, [a = a.node(), C, P](Node<T>& n) {
        a->ensure_grad();
        for (int64_t p = 0; p < P; ++p)
            for (int c = 0; c < C; ++c) a->grad[size_t(p * C + c)] += n.grad[size_t(c * P + p)];
    });
    const auto& av = a.data();
    auto& o = out.data();
    for (int64_t p = 0; p < P; ++p)
        for (int c = 0; c < C; ++c) o[size_t(c * P + p)] = av[size_t(p * C + c)];
    return out;
}

template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimError("concat_rows: empty input");
    const int C = parts[0].dim(1);
    int R = 0;
    std::vector<std::shared_ptr<Node<T>>> ps;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.dim(1) != C)
            throw DimError("concat_rows: column mismatch at part " + std::to_string(ps.size()));
        R += p.dim(0);
        ps.push_back(p.node());
    }
    auto out = Tensor<T>::result({R, C}, ps, [ps](Node<T>& n) {
        size_t off = 0;
        for (const auto& p : ps) {
            if (p->requires_grad) {
                p->ensure_grad();
                for (size_t i = 0; i < p->value.size(); ++i) p->grad[i] += n.grad[off + i];
            }
            off += p->value.size();
        }
    });
    size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + off);
        off += p.data().size();
    }
    return out;
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& a, int r0, int r1) {
    if (a.shape().size() != 2 || r0 < 0 || r1 > a.dim(0) || r0 >= r1)
        throw DimError("slice_rows: bad range for " + shape_str(a.shape()));
    const int C = a.dim(1);
    auto out = Tensor<T>::result({r1 - r0, C}, {a.node()}, [a = a.node(), r0, C](Node<T>& n) {
        a->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) a->grad[size_t(r0) * C + i] += n.grad[i];
    });
    std::copy(a.data().begin() + int64_t(r0) * C, a.data().begin() + int64_t(r1) * C, out.data().begin());
    return out;
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1) {
    if (a.shape().size() != 2 || c0 < 0 || c1 > a.dim(1) || c0 >= c1)
        throw DimError("slice_cols: bad range for " + shape_str(a.shape()));
    const int R = a.dim(0), C = a.dim(1), W = c1 - c0;
    auto out = Tensor<T>::result({R, W}, {a.node()}, [a = a.node(), R, C, c0, W](Node<T>& n) {
        a->ensure_grad();
        for (int r = 0; r < R; ++r)
            for (int j = 0; j < W; ++j) a->grad[size_t(r) * C + c0 + j] += n.grad[size_t(r) * W + j];
    });
    const auto& av = a.data();
    auto& o = out.data();
    for (int r = 0; r < R; ++r)
        for (int j = 0; j < W; ++j) o[size_t(r) * W + j] = av[size_t(r) * C + c0 + j];
    return out;
}

template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimError("concat_cols: empty input");
    const int R = parts[0].dim(0);
    int C = 0;
    std::vector<std::shared_ptr<Node<T>>> ps;
    std::vector<int> widths;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.dim(0) != R)
            throw DimError("concat_cols: row mismatch at part " + std::to_string(ps.size()));
        widths.push_back(p.dim(1));
        C += p.dim(1);
        ps.push_back(p.node());
    }
    auto out = Tensor<T>::result({R, C}, ps, [ps, widths, R, C](Node<T>& n) {
        int off = 0;
        for (size_t pi = 0; pi < ps.size(); ++pi) {
            const auto& p = ps[pi];
            const int w = widths[pi];
            if (p->requires_grad) {
                p->ensure_grad();
                for (int r = 0; r < R; ++r)
                    for (int j = 0; j < w; ++j) p->grad[size_t(r) * w + j] += n.grad[size_t(r) * C + off + j];
            }
            off += w;
        }
    });
    int off = 0;
    auto& o = out.data();
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const auto& pv = parts[pi].data();
        const int w = widths[pi];
        for (int r = 0; r < R; ++r)
            for (int j = 0; j < w; ++j) o[size_t(r) * C + off + j] = pv[size_t(r) * w + j];
        off += w;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
        throw DimError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
    auto out = Tensor<T>::result({M, N}, {a.node(), b.node()}, [a = a.node(), b = b.node(), M, K, N](Node<T>& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            detail::gemm_nt(M, K, N, n.grad.data(), b->value.data(), a->grad.data());
        }
        if (b->requires_grad) {
            b->ensure_grad();
            detail::gemm_tn(K, N, M, a->value.data(), n.grad.data(), b->grad.data());
        }
    });
    detail::gemm_nn0(M, N, K, a.data().data(), b.data().data(), out.data().data());
    return out;
}

// a [M,K] x b[N,K]^T -> [M,N]
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(1))
        throw DimError("matmul_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
    const int M = a.dim(0), K = a.dim(1), N = b.dim(0);
    auto out = Tensor<T>::result({M, N}, {a.node(), b.node()}, [a = a.node(), b = b.node(), M, K, N](Node<T>& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            detail::gemm_nn(M, K, N, n.grad.data(), b->value.data(), a->grad.data());
        }
        if (b->requires_grad) {
            b->ensure_grad();
            detail::gemm_tn(N, K, M, n.grad.data(), a->value.data(), b->grad.data());
        }
    });
    detail::gemm_nt0(M, N, K, a.data().data(), b.data().data(), out.data().data());
    return out;
}

template <class T>
Tensor<T> add_row_bias(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 1 || a.dim(1) != b.dim(0))
        throw DimError("add_row_bias: " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
    const int R = a.dim(0), C = a.dim(1);
    auto out = Tensor<T>::result(a.shape(), {a.node(), b.node()}, [a = a.node(), b = b.node(), R, C](Node<T>& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) b->grad[size_t(c)] += n.grad[size_t(r) * C + c];
        }
    });
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& o = out.data();
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) o[size_t(r) * C + c] = av[size_t(r) * C + c] + bv[size_t(c)];
    return out;
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return add_row_bias(matmul(x, w), b);
}

// Per-channel bias over a [C,H,W] map.
template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape().size() != 3 || b.shape().size() != 1 || a.dim(0) != b.dim(0))
        throw DimError("add_channel_bias: " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
    const int C = a.dim(0);
    const int64_t hw = int64_t(a.dim(1)) * a.dim(2);
    auto out = Tensor<T>::result(a.shape(), {a.node(), b.node()}, [a = a.node(), b = b.node(), C, hw](Node<T>& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int c = 0; c < C; ++c) {
                T acc = T(0);
                for (int64_t p = 0; p < hw; ++p) acc += n.grad[size_t(c * hw + p)];
                b->grad[size_t(c)] += acc;
            }
        }
    });
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& o = out.data();
    for (int c = 0; c < C; ++c)
        for (int64_t p = 0; p < hw; ++p) o[size_t(c * hw + p)] = av[size_t(c * hw + p)] + bv[size_t(c)];
    return out;
}

// Per-channel bias over a batched [N,C,H,W] map.
template <class T>
Tensor<T> add_channel_bias_n(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape().size() != 4 || b.shape().size() != 1 || a.dim(1) != b.dim(0))
        throw DimError("add_channel_bias_n: " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
    const int N = a.dim(0), C = a.dim(1);
    const int64_t hw = int64_t(a.dim(2)) * a.dim(3);
    auto out = Tensor<T>::result(a.shape(), {a.node(), b.node()}, [a = a.node(), b = b.node(), N, C, hw](Node<T>& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int s = 0; s < N; ++s)
                for (int c = 0; c < C; ++c) {
                    T acc = T(0);
                    const T* g = n.grad.data() + (int64_t(s) * C + c) * hw;
                    for (int64_t p = 0; p < hw; ++p) acc += g[p];
                    b->grad[size_t(c)] += acc;
                }
        }
    });
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& o = out.data();
    for (int s = 0; s < N; ++s)
        for (int c = 0; c < C; ++c) {
            const T bias = bv[size_t(c)];
            const int64_t base = (int64_t(s) * C + c) * hw;
            for (int64_t p = 0; p < hw; ++p) o[size_t(base + p)] = av[size_t(base + p)] + bias;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax over the last axis of a [M,N] matrix
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
    if (a.shape().size() != 2) throw DimError("softmax_rows: want [M,N], got " + shape_str(a.shape()));
    const int M = a.dim(0), N = a.dim(1);
    auto out = Tensor<T>::result(a.shape(), {a.node()}, [a = a.node(), M, N](Node<T>& n) {
        a->ensure_grad();
        for (int r = 0; r < M; ++r) {
            const T* y = n.value.data() + int64_t(r) * N;
            const T* gy = n.grad.data() + int64_t(r) * N;
            T dot = T(0);
            for (int j = 0; j < N; ++j) dot += gy[j] * y[j];
            T* gx = a->grad.data() + int64_t(r) * N;
            for (int j = 0; j < N; ++j) gx[j] += y[j] * (gy[j] - dot);
        }
    });
    const auto& av = a.data();
    auto& o = out.data();
    for (int r = 0; r < M; ++r) {
        const T* x = av.data() + int64_t(r) * N;
        T* y = o.data() + int64_t(r) * N;
        T mx = x[0];
        for (int j = 1; j < N; ++j) mx = std::max(mx, x[j]);
        T z = T(0);
        for (int j = 0; j < N; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        const T inv = T(1) / z;
        for (int j = 0; j < N; ++j) y[j] *= inv;
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d: input [C,H,W] or [N,C,H,W], kernel [OC,IC,kH,kW]
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int OH, int OW, T* col) {
    // col is [C*kh*kw, OH*OW]
    const int64_t P = int64_t(OH) * OW;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                T* dst = col + (int64_t(c) * kh * kw + ki * kw + kj) * P;
                for (int oy = 0; oy < OH; ++oy) {
                    const int iy = oy * stride + ki - pad;
                    if (iy < 0 || iy >= H) {
                        for (int ox = 0; ox < OW; ++ox) dst[int64_t(oy) * OW + ox] = T(0);
                        continue;
                    }
                    const T* src = x + (int64_t(c) * H + iy) * W;
                    for (int ox = 0; ox < OW; ++ox) {
                        const int ix = ox * stride + kj - pad;
                        dst[int64_t(oy) * OW + ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

// col^T layout [OH*OW, C*kh*kw]: one row per output position. Lets the
// kernel-gradient GEMM run through the fast nn path.
template <class T>
void im2colT(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
             int OH, int OW, T* colT) {
    const int CKK = C * kh * kw;
    for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
            T* __restrict row = colT + (int64_t(oy) * OW + ox) * CKK;
            int idx = 0;
            for (int c = 0; c < C; ++c) {
                const T* xc = x + int64_t(c) * H * W;
                for (int ki = 0; ki < kh; ++ki) {
                    const int iy = oy * stride + ki - pad;
                    if (iy < 0 || iy >= H) {
                        for (int kj = 0; kj < kw; ++kj) row[idx++] = T(0);
                        continue;
                    }
                    const T* xr = xc + int64_t(iy) * W;
                    for (int kj = 0; kj < kw; ++kj) {
                        const int ix = ox * stride + kj - pad;
                        row[idx++] = (ix >= 0 && ix < W) ? xr[ix] : T(0);
                    }
                }
            }
        }
}

template <class T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                int OH, int OW, T* x) {
    const int64_t P = int64_t(OH) * OW;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const T* src = col + (int64_t(c) * kh * kw + ki * kw + kj) * P;
                for (int oy = 0; oy < OH; ++oy) {
                    const int iy = oy * stride + ki - pad;
                    if (iy < 0 || iy >= H) continue;
                    T* dst = x + (int64_t(c) * H + iy) * W;
                    for (int ox = 0; ox < OW; ++ox) {
                        const int ix = ox * stride + kj - pad;
                        if (ix >= 0 && ix < W) dst[ix] += src[int64_t(oy) * OW + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride = 1, int pad = 0) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (ws.size() != 4) throw DimError("conv2d: kernel must be [OC,IC,kH,kW], got " + shape_str(ws));
    const bool batched = xs.size() == 4;
    if (!batched && xs.size() != 3)
        throw DimError("conv2d: input must be [C,H,W] or [N,C,H,W], got " + shape_str(xs));
    const int N = batched ? xs[0] : 1;
    const int C = batched ? xs[1] : xs[0];
    const int H = batched ? xs[2] : xs[1];
    const int W = batched ? xs[3] : xs[2];
    const int OC = ws[0], IC = ws[1], kh = ws[2], kw = ws[3];
    if (C != IC)
        throw DimError("conv2d: input channel axis " + std::to_string(batched ? 1 : 0) + " has " +
                       std::to_string(C) + " channels but kernel axis 1 expects " + std::to_string(IC));
    if (kh > H + 2 * pad || kw > W + 2 * pad)
        throw DimError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                       " exceeds padded input " + std::to_string(H + 2 * pad) + "x" +
                       std::to_string(W + 2 * pad));
    if (stride < 1) throw DimError("conv2d: stride must be >= 1");
    const int OH = (H + 2 * pad - kh) / stride + 1;
    const int OW = (W + 2 * pad - kw) / stride + 1;
    const int CKK = C * kh * kw;
    const int64_t P = int64_t(OH) * OW;

    Shape out_shape = batched ? Shape{N, OC, OH, OW} : Shape{OC, OH, OW};
    auto out = Tensor<T>::result(
        std::move(out_shape), {x.node(), w.node()},
        [x = x.node(), w = w.node(), N, C, H, W, OC, kh, kw, stride, pad, OH, OW, CKK, P](Node<T>& n) {
            if (x->requires_grad) x->ensure_grad();
            if (w->requires_grad) w->ensure_grad();
            // per-item kernel-grad partials keep the reduction order fixed
            // regardless of the worker count
            std::vector<std::vector<T>> dw_parts;
            if (w->requires_grad) dw_parts.assign(size_t(N), {});
            parallel_for(0, N, [&](int64_t b0, int64_t b1) {
                auto& col = detail::conv_scratch<T>(0);
                auto& dcol = detail::conv_scratch<T>(1);
                col.resize(size_t(CKK) * P);
                dcol.resize(size_t(CKK) * P);
                for (int64_t b = b0; b < b1; ++b) {
                    const T* xb = x->value.data() + b * C * H * W;
                    const T* gyb = n.grad.data() + b * OC * P;
                    if (w->requires_grad) {
                        detail::im2colT(xb, C, H, W, kh, kw, stride, pad, OH, OW, col.data());
                        dw_parts[size_t(b)].resize(size_t(OC) * CKK);
                        detail::gemm_nn0(OC, CKK, int(P), gyb, col.data(), dw_parts[size_t(b)].data());
                    }
                    if (x->requires_grad) {
                        detail::gemm_tn0(CKK, int(P), OC, w->value.data(), gyb, dcol.data());
                        detail::col2im_add(dcol.data(), C, H, W, kh, kw, stride, pad, OH, OW,
                                           x->grad.data() + b * C * H * W);
                    }
                }
            }, 1);
            if (w->requires_grad)
                for (int b = 0; b < N; ++b)
                    for (size_t i = 0; i < dw_parts[size_t(b)].size(); ++i)
                        w->grad[i] += dw_parts[size_t(b)][i];
        });

    parallel_for(0, N, [&](int64_t b0, int64_t b1) {
        auto& col = detail::conv_scratch<T>(0);
        col.resize(size_t(CKK) * P);
        for (int64_t b = b0; b < b1; ++b) {
            detail::im2col(x.data().data() + b * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW,
                           col.data());
            detail::gemm_nn0(OC, int(P), CKK, w.data().data(), col.data(),
                             out.data().data() + b * OC * P);
        }
    }, 1);
    return out;
}

// ---------------------------------------------------------------------------
// GroupNorm over [C,H,W] with per-channel affine
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, T eps, const Tensor<T>& scale_t,
                     const Tensor<T>& shift_t) {
    if (x.shape().size() != 3) throw DimError("group_norm: want [C,H,W], got " + shape_str(x.shape()));
    const int C = x.dim(0);
    if (groups < 1 || C % groups != 0)
        throw ConfigError("group_norm: channels " + std::to_string(C) + " not divisible by groups " +
                          std::to_string(groups));
    if (scale_t.shape() != Shape{C} || shift_t.shape() != Shape{C})
        throw DimError("group_norm: scale/shift must be [C]");
    const int64_t hw = int64_t(x.dim(1)) * x.dim(2);
    const int cpg = C / groups;
    const int64_t gsz = cpg * hw;

    auto mu = std::make_shared<std::vector<T>>(size_t(groups));
    auto istd = std::make_shared<std::vector<T>>(size_t(groups));
    const auto& xv = x.data();
    for (int g = 0; g < groups; ++g) {
        const T* p = xv.data() + int64_t(g) * gsz;
        T lane[8] = {};
        int64_t i = 0;
        for (; i + 8 <= gsz; i += 8)
            for (int l = 0; l < 8; ++l) lane[l] += p[i + l];
        T m = ((lane[0] + lane[4]) + (lane[1] + lane[5])) + ((lane[2] + lane[6]) + (lane[3] + lane[7]));
        for (; i < gsz; ++i) m += p[i];
        m /= T(gsz);
        T vlane[8] = {};
        i = 0;
        for (; i + 8 <= gsz; i += 8)
            for (int l = 0; l < 8; ++l) {
                const T d = p[i + l] - m;
                vlane[l] += d * d;
            }
        T var = ((vlane[0] + vlane[4]) + (vlane[1] + vlane[5])) +
                ((vlane[2] + vlane[6]) + (vlane[3] + vlane[7]));
        for (; i < gsz; ++i) {
            const T d = p[i] - m;
            var += d * d;
        }
        var /= T(gsz);
        (*mu)[size_t(g)] = m;
        (*istd)[size_t(g)] = T(1) / std::sqrt(var + eps);
    }

    auto out = Tensor<T>::result(
        x.shape(), {x.node(), scale_t.node(), shift_t.node()},
        [x = x.node(), sc = scale_t.node(), sh = shift_t.node(), mu, istd, groups, cpg, hw, gsz](Node<T>& n) {
            if (sc->requires_grad) sc->ensure_grad();
            if (sh->requires_grad) sh->ensure_grad();
            if (x->requires_grad) x->ensure_grad();
            for (int g = 0; g < groups; ++g) {
                const T m = (*mu)[size_t(g)];
                const T is = (*istd)[size_t(g)];
                const T* xp = x->value.data() + int64_t(g) * gsz;
                const T* gy = n.grad.data() + int64_t(g) * gsz;
                // scale/shift grads
                for (int c = 0; c < cpg; ++c) {
                    const int ch = g * cpg + c;
                    T gs = T(0), gb = T(0);
                    for (int64_t p = 0; p < hw; ++p) {
                        const T xhat = (xp[c * hw + p] - m) * is;
                        gs += gy[c * hw + p] * xhat;
                        gb += gy[c * hw + p];
                    }
                    if (sc->requires_grad) sc->grad[size_t(ch)] += gs;
                    if (sh->requires_grad) sh->grad[size_t(ch)] += gb;
                }
                if (!x->requires_grad) continue;
                // dxhat = gy * scale; dx via standard groupnorm backward
                T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                for (int c = 0; c < cpg; ++c) {
                    const T s = sc->value[size_t(g * cpg + c)];
                    for (int64_t p = 0; p < hw; ++p) {
                        const T dxh = gy[c * hw + p] * s;
                        const T xhat = (xp[c * hw + p] - m) * is;
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xhat;
                    }
                }
                T* gx = x->grad.data() + int64_t(g) * gsz;
                const T inv_m = T(1) / T(gsz);
                for (int c = 0; c < cpg; ++c) {
                    const T s = sc->value[size_t(g * cpg + c)];
                    for (int64_t p = 0; p < hw; ++p) {
                        const T dxh = gy[c * hw + p] * s;
                        const T xhat = (xp[c * hw + p] - m) * is;
                        gx[c * hw + p] += is * (dxh - inv_m * sum_dxhat - xhat * inv_m * sum_dxhat_xhat);
                    }
                }
            }
        });

    const auto& sv = scale_t.data();
    const auto& bv = shift_t.data();
    auto& o = out.data();
    for (int g = 0; g < groups; ++g) {
        const T m = (*mu)[size_t(g)];
        const T is = (*istd)[size_t(g)];
        for (int c = 0; c < cpg; ++c) {
            const int ch = g * cpg + c;
            const T s = sv[size_t(ch)], b = bv[size_t(ch)];
            const T* xp = xv.data() + int64_t(ch) * hw;
            T* op = o.data() + int64_t(ch) * hw;
            for (int64_t p = 0; p < hw; ++p) op[p] = (xp[p] - m) * is * s + b;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pooling / resampling over [C,H,W]
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> avgpool2x(const Tensor<T>& x) {
    if (x.shape().size() != 3 || x.dim(1) % 2 || x.dim(2) % 2)
        throw DimError("avgpool2x: want [C,2m,2n], got " + shape_str(x.shape()));
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2), OH = H / 2, OW = W / 2;
    auto out = Tensor<T>::result({C, OH, OW}, {x.node()}, [x = x.node(), C, H, W, OH, OW](Node<T>& n) {
        x->ensure_grad();
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < OH; ++y)
                for (int z = 0; z < OW; ++z) {
                    const T g = n.grad[size_t((int64_t(c) * OH + y) * OW + z)] * T(0.25);
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dz = 0; dz < 2; ++dz)
                            x->grad[size_t((int64_t(c) * H + 2 * y + dy) * W + 2 * z + dz)] += g;
                }
    });
    const auto& xv = x.data();
    auto& o = out.data();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < OH; ++y)
            for (int z = 0; z < OW; ++z) {
                T acc = T(0);
                for (int dy = 0; dy < 2; ++dy)
                    for (int dz = 0; dz < 2; ++dz)
                        acc += xv[size_t((int64_t(c) * H + 2 * y + dy) * W + 2 * z + dz)];
                o[size_t((int64_t(c) * OH + y) * OW + z)] = acc * T(0.25);
            }
    return out;
}

template <class T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
    if (x.shape().size() != 3) throw DimError("upsample_nearest2x: want [C,H,W], got " + shape_str(x.shape()));
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    auto out = Tensor<T>::result({C, 2 * H, 2 * W}, {x.node()}, [x = x.node(), C, H, W](Node<T>& n) {
        x->ensure_grad();
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int z = 0; z < W; ++z) {
                    T acc = T(0);
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dz = 0; dz < 2; ++dz)
                            acc += n.grad[size_t((int64_t(c) * 2 * H + 2 * y + dy) * 2 * W + 2 * z + dz)];
                    x->grad[size_t((int64_t(c) * H + y) * W + z)] += acc;
                }
    });
    const auto& xv = x.data();
    auto& o = out.data();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int z = 0; z < W; ++z) {
                const T v = xv[size_t((int64_t(c) * H + y) * W + z)];
                for (int dy = 0; dy < 2; ++dy)
                    for (int dz = 0; dz < 2; ++dz)
                        o[size_t((int64_t(c) * 2 * H + 2 * y + dy) * 2 * W + 2 * z + dz)] = v;
            }
    return out;
}

// ---------------------------------------------------------------------------
// Multi-head attention over token matrices
// ---------------------------------------------------------------------------

// softmax(Q K^T / sqrt(D/heads)) V per head, heads concatenated. When proj is
// defined it is applied as the output projection [D,D].
template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads,
                               const Tensor<T>& proj = Tensor<T>()) {
    if (q.shape().size() != 2 || k.shape().size() != 2 || v.shape().size() != 2)
        throw DimError("multi_head_attention: q/k/v must be [N,D]");
    const int D = q.dim(1);
    if (k.dim(1) != D || v.dim(1) != D || k.dim(0) != v.dim(0))
        throw DimError("multi_head_attention: q" + shape_str(q.shape()) + " k" + shape_str(k.shape()) +
                       " v" + shape_str(v.shape()));
    if (heads < 1 || D % heads != 0)
        throw ConfigError("multi_head_attention: dim " + std::to_string(D) + " not divisible by heads " +
                          std::to_string(heads));
    const int dh = D / heads;
    const T inv_sqrt = T(1) / std::sqrt(T(dh));
    std::vector<Tensor<T>> outs;
    outs.reserve(size_t(heads));
    for (int h = 0; h < heads; ++h) {
        auto qh = slice_cols(q, h * dh, (h + 1) * dh);
        auto kh = slice_cols(k, h * dh, (h + 1) * dh);
        auto vh = slice_cols(v, h * dh, (h + 1) * dh);
        auto attn = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt));
        outs.push_back(matmul(attn, vh));
    }
    auto cat = heads == 1 ? outs[0] : concat_cols(outs);
    return proj.defined() ? matmul(cat, proj) : cat;
}

// Non-differentiating helpers -----------------------------------------------

template <class T>
bool has_non_finite(const Tensor<T>& t) {
    for (T v : t.data())
        if (!std::isfinite(v)) return true;
    return false;
}

}  // namespace aef
