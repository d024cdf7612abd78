#pragma once

// Differentiable op library. Every op takes the graph first, validates shapes,
// computes the forward value into a fresh tensor, and registers a backward
// closure when the graph wants gradients for it. Backward closures accumulate
// (+=) into input grads so a tensor used twice receives both contributions.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "swinseg/tensor.hpp"

namespace swinseg {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// C(m,n) += or = A(m,k) * B(k,n)
template <typename T>
void gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
    CMapMat<T> A(a, m, k), B(b, k, n);
    MapMat<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B;
    else
        C.noalias() = A * B;
}

// C(m,n) += or = A(m,k) * B(n,k)^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
    CMapMat<T> A(a, m, k), B(b, n, k);
    MapMat<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B.transpose();
    else
        C.noalias() = A * B.transpose();
}

// C(m,n) += or = A(k,m)^T * B(k,n)
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
    CMapMat<T> A(a, k, m), B(b, k, n);
    MapMat<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A.transpose() * B;
    else
        C.noalias() = A.transpose() * B;
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b)
        throw DimError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a->shape, b->shape, "add");
    auto out = make_tensor<T>(a->shape);
    for (int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] + b->data[i];
    debug_check_finite(out, "add");
    if (g.wants_grad({a, b})) {
        g.record("add", {a, b}, out, [a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < out->numel(); ++i) b->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_scalar(Graph<T>& g, const Tensor<T>& a, T s) {
    auto out = make_tensor<T>(a->shape);
    for (int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] + s;
    if (g.wants_grad({a})) {
        g.record("add_scalar", {a}, out, [a, out] {
            a->ensure_grad();
            for (int64_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a->shape, b->shape, "mul");
    auto out = make_tensor<T>(a->shape);
    for (int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] * b->data[i];
    debug_check_finite(out, "mul");
    if (g.wants_grad({a, b})) {
        g.record("mul", {a, b}, out, [a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i] * b->data[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < out->numel(); ++i) b->grad[i] += out->grad[i] * a->data[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul_scalar(Graph<T>& g, const Tensor<T>& a, T s) {
    auto out = make_tensor<T>(a->shape);
    for (int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] * s;
    if (g.wants_grad({a})) {
        g.record("mul_scalar", {a}, out, [a, out, s] {
            a->ensure_grad();
            for (int64_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i] * s;
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
    return add(g, a, mul_scalar(g, b, T(-1)));
}

template <typename T>
Tensor<T> div(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a->shape, b->shape, "div");
    auto out = make_tensor<T>(a->shape);
    for (int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] / b->data[i];
    debug_check_finite(out, "div");
    if (g.wants_grad({a, b})) {
        g.record("div", {a, b}, out, [a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i] / b->data[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < out->numel(); ++i)
                    b->grad[i] -= out->grad[i] * a->data[i] / (b->data[i] * b->data[i]);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> abs_op(Graph<T>& g, const Tensor<T>& a) {
    auto out = make_tensor<T>(a->shape);
    for (int64_t i = 0; i < a->numel(); ++i) out->data[i] = std::abs(a->data[i]);
    if (g.wants_grad({a})) {
        g.record("abs", {a}, out, [a, out] {
            a->ensure_grad();
            for (int64_t i = 0; i < out->numel(); ++i) {
                const T s = a->data[i] > T(0) ? T(1) : (a->data[i] < T(0) ? T(-1) : T(0));
                a->grad[i] += out->grad[i] * s;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
        throw DimError("matmul: incompatible shapes " + shape_str(a->shape) + " x " +
                       shape_str(b->shape));
    const int64_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = make_tensor<T>({m, n});
    detail::gemm(a->data.data(), b->data.data(), out->data.data(), m, k, n, false);
    debug_check_finite(out, "matmul");
    if (g.wants_grad({a, b})) {
        g.record("matmul", {a, b}, out, [a, b, out, m, k, n] {
            if (a->requires_grad) {
                a->ensure_grad();
                detail::gemm_nt(out->grad.data(), b->data.data(), a->grad.data(), m, n, k, true);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                detail::gemm_tn(a->data.data(), out->grad.data(), b->grad.data(), k, m, n, true);
            }
        });
    }
    return out;
}

// Batched A(B,m,k) * B(B,k,n); transpose_b treats b as (B,n,k) and multiplies
// by its transpose (the attention QK^T case).
template <typename T>
Tensor<T> bmm(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false) {
    if (a->shape.size() != 3 || b->shape.size() != 3 || a->shape[0] != b->shape[0])
        throw DimError("bmm: incompatible shapes " + shape_str(a->shape) + " x " +
                       shape_str(b->shape));
    const int64_t bs = a->shape[0], m = a->shape[1], k = a->shape[2];
    const int64_t n = transpose_b ? b->shape[1] : b->shape[2];
    const int64_t bk = transpose_b ? b->shape[2] : b->shape[1];
    if (bk != k)
        throw DimError("bmm: inner dims disagree " + shape_str(a->shape) + " x " +
                       shape_str(b->shape));
    auto out = make_tensor<T>({bs, m, n});
    const int64_t sa = m * k, sb = b->shape[1] * b->shape[2], so = m * n;
    for (int64_t i = 0; i < bs; ++i) {
        if (transpose_b)
            detail::gemm_nt(a->data.data() + i * sa, b->data.data() + i * sb,
                            out->data.data() + i * so, m, k, n, false);
        else
            detail::gemm(a->data.data() + i * sa, b->data.data() + i * sb,
                         out->data.data() + i * so, m, k, n, false);
    }
    debug_check_finite(out, "bmm");
    if (g.wants_grad({a, b})) {
        g.record("bmm", {a, b}, out, [a, b, out, bs, m, k, n, sa, sb, so, transpose_b] {
            for (int64_t i = 0; i < bs; ++i) {
                const T* go = out->grad.data() + i * so;
                if (a->requires_grad) {
                    a->ensure_grad();
                    if (transpose_b)  // dA = dY * B   (B is (n,k))
                        detail::gemm(go, b->data.data() + i * sb, a->grad.data() + i * sa, m, n, k, true);
                    else              // dA = dY * B^T
                        detail::gemm_nt(go, b->data.data() + i * sb, a->grad.data() + i * sa, m, n, k, true);
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    if (transpose_b)  // dB = dY^T * A  ((n,m)x(m,k))
                        detail::gemm_tn(go, a->data.data() + i * sa, b->grad.data() + i * sb, n, m, k, true);
                    else              // dB = A^T * dY
                        detail::gemm_tn(a->data.data() + i * sa, go, b->grad.data() + i * sb, k, m, n, true);
                }
            }
        });
    }
    return out;
}

// Adds bias (F) to every row of x (..., F).
template <typename T>
Tensor<T> add_rowbias(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& bias) {
    if (x->shape.empty() || bias->shape.size() != 1 || x->shape.back() != bias->shape[0])
        throw DimError("add_rowbias: bias " + shape_str(bias->shape) + " does not match " +
                       shape_str(x->shape));
    const int64_t f = bias->shape[0];
    const int64_t rows = x->numel() / f;
    auto out = make_tensor<T>(x->shape);
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < f; ++j)
            out->data[r * f + j] = x->data[r * f + j] + bias->data[j];
    if (g.wants_grad({x, bias})) {
        g.record("add_rowbias", {x, bias}, out, [x, bias, out, rows, f] {
            if (x->requires_grad) {
                x->ensure_grad();
                for (int64_t i = 0; i < out->numel(); ++i) x->grad[i] += out->grad[i];
            }
            if (bias->requires_grad) {
                bias->ensure_grad();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < f; ++j) bias->grad[j] += out->grad[r * f + j];
            }
        });
    }
    return out;
}

// x (N,in) * w (in,out) + b
template <typename T>
Tensor<T> linear(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    auto y = matmul(g, x, w);
    if (b) y = add_rowbias(g, y, b);
    return y;
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(Graph<T>& g, const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x->numel())
        throw DimError("reshape: cannot view " + shape_str(x->shape) + " as " + shape_str(shape));
    auto out = make_tensor<T>(std::move(shape));
    out->data = x->data;
    if (g.wants_grad({x})) {
        g.record("reshape", {x}, out, [x, out] {
            x->ensure_grad();
            for (int64_t i = 0; i < out->numel(); ++i) x->grad[i] += out->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> permute(Graph<T>& g, const Tensor<T>& x, const std::vector<int>& axes) {
    const size_t r = x->shape.size();
    if (axes.size() != r) throw DimError("permute: axes rank mismatch");
    Shape oshape(r);
    for (size_t i = 0; i < r; ++i) oshape[i] = x->shape[axes[i]];
    // row-major strides of input
    std::vector<int64_t> istr(r, 1);
    for (size_t i = r - 1; i > 0; --i) istr[i - 1] = istr[i] * x->shape[i];
    std::vector<int64_t> gather(r);  // stride in x for each output axis
    for (size_t i = 0; i < r; ++i) gather[i] = istr[axes[i]];
    auto out = make_tensor<T>(oshape);
    const int64_t n = out->numel();
    std::vector<int64_t> idx(r, 0);
    int64_t src = 0;
    for (int64_t o = 0; o < n; ++o) {
        out->data[o] = x->data[src];
        for (int64_t ax = static_cast<int64_t>(r) - 1; ax >= 0; --ax) {
            src += gather[ax];
            if (++idx[ax] < oshape[ax]) break;
            src -= gather[ax] * oshape[ax];
            idx[ax] = 0;
        }
    }
    if (g.wants_grad({x})) {
        g.record("permute", {x}, out, [x, out, oshape, gather, r] {
            x->ensure_grad();
            std::vector<int64_t> idx2(r, 0);
            int64_t src = 0;
            for (int64_t o = 0; o < out->numel(); ++o) {
                x->grad[src] += out->grad[o];
                for (int64_t ax = static_cast<int64_t>(r) - 1; ax >= 0; --ax) {
                    src += gather[ax];
                    if (++idx2[ax] < oshape[ax]) break;
                    src -= gather[ax] * oshape[ax];
                    idx2[ax] = 0;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_lastdim(Graph<T>& g, const Tensor<T>& x, int64_t offset, int64_t len) {
    const int64_t f = x->shape.back();
    if (offset < 0 || offset + len > f) throw DimError("slice_lastdim: range out of bounds");
    Shape oshape = x->shape;
    oshape.back() = len;
    const int64_t rows = x->numel() / f;
    auto out = make_tensor<T>(oshape);
    for (int64_t r = 0; r < rows; ++r)
        std::copy_n(x->data.data() + r * f + offset, len, out->data.data() + r * len);
    if (g.wants_grad({x})) {
        g.record("slice_lastdim", {x}, out, [x, out, rows, f, offset, len] {
            x->ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < len; ++j)
                    x->grad[r * f + offset + j] += out->grad[r * len + j];
        });
    }
    return out;
}

// Concatenates 2-D tensors (n_i, F) along rows.
template <typename T>
Tensor<T> concat_rows(Graph<T>& g, const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: empty input list");
    const int64_t f = parts[0]->shape.back();
    int64_t rows = 0;
    for (const auto& p : parts) {
        if (p->shape.size() != 2 || p->shape[1] != f)
            throw DimError("concat_rows: inconsistent shapes");
        rows += p->shape[0];
    }
    auto out = make_tensor<T>({rows, f});
    int64_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->data.begin(), p->data.end(), out->data.begin() + off);
        off += p->numel();
    }
    if (g.wants_grad(parts)) {
        g.record("concat_rows", parts, out, [parts, out] {
            int64_t off2 = 0;
            for (const auto& p : parts) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int64_t i = 0; i < p->numel(); ++i) p->grad[i] += out->grad[off2 + i];
                }
                off2 += p->numel();
            }
        });
    }
    return out;
}

// Concatenates (C_i, H, W) tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(Graph<T>& g, const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ContractError("concat_channels: empty input list");
    const int64_t h = parts[0]->shape[1], w = parts[0]->shape[2];
    int64_t c = 0;
    for (const auto& p : parts) {
        if (p->shape.size() != 3 || p->shape[1] != h || p->shape[2] != w)
            throw DimError("concat_channels: spatial dims disagree");
        c += p->shape[0];
    }
    auto out = make_tensor<T>({c, h, w});
    int64_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->data.begin(), p->data.end(), out->data.begin() + off);
        off += p->numel();
    }
    if (g.wants_grad(parts)) {
        g.record("concat_channels", parts, out, [parts, out] {
            int64_t off2 = 0;
            for (const auto& p : parts) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int64_t i = 0; i < p->numel(); ++i) p->grad[i] += out->grad[off2 + i];
                }
                off2 += p->numel();
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Window tiling (H,W,C layout)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> window_partition(Graph<T>& g, const Tensor<T>& x, int64_t win) {
    if (x->shape.size() != 3)
        throw DimError("window_partition: expected (H,W,C), got " + shape_str(x->shape));
    const int64_t h = x->shape[0], w = x->shape[1], c = x->shape[2];
    if (win <= 0 || h % win || w % win)
        throw DimError("window_partition: window " + std::to_string(win) +
                       " does not divide " + shape_str(x->shape));
    const int64_t gh = h / win, gw = w / win, nw = gh * gw;
    auto out = make_tensor<T>({nw, win, win, c});
    for (int64_t wy = 0; wy < gh; ++wy)
        for (int64_t wx = 0; wx < gw; ++wx)
            for (int64_t iy = 0; iy < win; ++iy) {
                const T* src = x->data.data() + (((wy * win + iy) * w) + wx * win) * c;
                T* dst = out->data.data() + (((wy * gw + wx) * win + iy) * win) * c;
                std::copy_n(src, win * c, dst);
            }
    if (g.wants_grad({x})) {
        g.record("window_partition", {x}, out, [x, out, gh, gw, win, w, c] {
            x->ensure_grad();
            for (int64_t wy = 0; wy < gh; ++wy)
                for (int64_t wx = 0; wx < gw; ++wx)
                    for (int64_t iy = 0; iy < win; ++iy) {
                        T* dst = x->grad.data() + (((wy * win + iy) * w) + wx * win) * c;
                        const T* src = out->grad.data() + (((wy * gw + wx) * win + iy) * win) * c;
                        for (int64_t i = 0; i < win * c; ++i) dst[i] += src[i];
                    }
        });
    }
    return out;
}

template <typename T>
Tensor<T> window_reverse(Graph<T>& g, const Tensor<T>& wins, int64_t win, int64_t h, int64_t w) {
    if (wins->shape.size() != 4 || wins->shape[1] != win || wins->shape[2] != win)
        throw DimError("window_reverse: expected (nW,win,win,C), got " + shape_str(wins->shape));
    const int64_t gh = h / win, gw = w / win, c = wins->shape[3];
    if (h % win || w % win || wins->shape[0] != gh * gw)
        throw DimError("window_reverse: window count " + std::to_string(wins->shape[0]) +
                       " does not tile " + std::to_string(h) + "x" + std::to_string(w));
    auto out = make_tensor<T>({h, w, c});
    for (int64_t wy = 0; wy < gh; ++wy)
        for (int64_t wx = 0; wx < gw; ++wx)
            for (int64_t iy = 0; iy < win; ++iy) {
                const T* src = wins->data.data() + (((wy * gw + wx) * win + iy) * win) * c;
                T* dst = out->data.data() + (((wy * win + iy) * w) + wx * win) * c;
                std::copy_n(src, win * c, dst);
            }
    if (g.wants_grad({wins})) {
        g.record("window_reverse", {wins}, out, [wins, out, gh, gw, win, w, c] {
            wins->ensure_grad();
            for (int64_t wy = 0; wy < gh; ++wy)
                for (int64_t wx = 0; wx < gw; ++wx)
                    for (int64_t iy = 0; iy < win; ++iy) {
                        T* dst = wins->grad.data() + (((wy * gw + wx) * win + iy) * win) * c;
                        const T* src = out->grad.data() + (((wy * win + iy) * w) + wx * win) * c;
                        for (int64_t i = 0; i < win * c; ++i) dst[i] += src[i];
                    }
        });
    }
    return out;
}

// Cyclic shift: out[i][j] = x[(i - sy) mod H][(j - sx) mod W].
template <typename T>
Tensor<T> roll_hw(Graph<T>& g, const Tensor<T>& x, int64_t sy, int64_t sx) {
    if (x->shape.size() != 3) throw DimError("roll_hw: expected (H,W,C)");
    const int64_t h = x->shape[0], w = x->shape[1], c = x->shape[2];
    auto mod = [](int64_t a, int64_t m) { return ((a % m) + m) % m; };
    auto out = make_tensor<T>(x->shape);
    for (int64_t i = 0; i < h; ++i) {
        const int64_t si = mod(i - sy, h);
        for (int64_t j = 0; j < w; ++j) {
            const int64_t sj = mod(j - sx, w);
            std::copy_n(x->data.data() + (si * w + sj) * c, c, out->data.data() + (i * w + j) * c);
        }
    }
    if (g.wants_grad({x})) {
        g.record("roll_hw", {x}, out, [x, out, h, w, c, sy, sx, mod] {
            x->ensure_grad();
            for (int64_t i = 0; i < h; ++i) {
                const int64_t si = mod(i - sy, h);
                for (int64_t j = 0; j < w; ++j) {
                    const int64_t sj = mod(j - sx, w);
                    const T* src = out->grad.data() + (i * w + j) * c;
                    T* dst = x->grad.data() + (si * w + sj) * c;
                    for (int64_t k = 0; k < c; ++k) dst[k] += src[k];
                }
            }
        });
    }
    return out;
}

// Zero-pads (H,W,C) on bottom/right to (H+pb, W+pr).
template <typename T>
Tensor<T> pad_hw(Graph<T>& g, const Tensor<T>& x, int64_t pb, int64_t pr) {
    const int64_t h = x->shape[0], w = x->shape[1], c = x->shape[2];
    auto out = make_tensor<T>({h + pb, w + pr, c});
    for (int64_t i = 0; i < h; ++i)
        std::copy_n(x->data.data() + i * w * c, w * c, out->data.data() + i * (w + pr) * c);
    if (g.wants_grad({x})) {
        g.record("pad_hw", {x}, out, [x, out, h, w, c, pr] {
            x->ensure_grad();
            for (int64_t i = 0; i < h; ++i) {
                const T* src = out->grad.data() + i * (w + pr) * c;
                T* dst = x->grad.data() + i * w * c;
                for (int64_t k = 0; k < w * c; ++k) dst[k] += src[k];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> crop_hw(Graph<T>& g, const Tensor<T>& x, int64_t h, int64_t w) {
    const int64_t hp = x->shape[0], wp = x->shape[1], c = x->shape[2];
    if (h > hp || w > wp) throw DimError("crop_hw: crop larger than input");
    auto out = make_tensor<T>({h, w, c});
    for (int64_t i = 0; i < h; ++i)
        std::copy_n(x->data.data() + i * wp * c, w * c, out->data.data() + i * w * c);
    if (g.wants_grad({x})) {
        g.record("crop_hw", {x}, out, [x, out, h, w, wp, c] {
            x->ensure_grad();
            for (int64_t i = 0; i < h; ++i) {
                const T* src = out->grad.data() + i * w * c;
                T* dst = x->grad.data() + i * wp * c;
                for (int64_t k = 0; k < w * c; ++k) dst[k] += src[k];
            }
        });
    }
    return out;
}

// 2x2 neighborhood concat (H,W,C) -> (H/2, W/2, 4C); channel groups ordered
// (0,0), (1,0), (0,1), (1,1).
template <typename T>
Tensor<T> space_to_depth2(Graph<T>& g, const Tensor<T>& x) {
    const int64_t h = x->shape[0], w = x->shape[1], c = x->shape[2];
    if (h % 2 || w % 2) throw DimError("space_to_depth2: odd spatial dims " + shape_str(x->shape));
    const int64_t ho = h / 2, wo = w / 2;
    auto out = make_tensor<T>({ho, wo, 4 * c});
    const int64_t offs[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    for (int64_t i = 0; i < ho; ++i)
        for (int64_t j = 0; j < wo; ++j)
            for (int64_t q = 0; q < 4; ++q) {
                const T* src = x->data.data() + ((2 * i + offs[q][0]) * w + 2 * j + offs[q][1]) * c;
                T* dst = out->data.data() + (i * wo + j) * 4 * c + q * c;
                std::copy_n(src, c, dst);
            }
    if (g.wants_grad({x})) {
        g.record("space_to_depth2", {x}, out, [x, out, ho, wo, w, c] {
            x->ensure_grad();
            const int64_t offs2[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
            for (int64_t i = 0; i < ho; ++i)
                for (int64_t j = 0; j < wo; ++j)
                    for (int64_t q = 0; q < 4; ++q) {
                        T* dst = x->grad.data() + ((2 * i + offs2[q][0]) * w + 2 * j + offs2[q][1]) * c;
                        const T* src = out->grad.data() + (i * wo + j) * 4 * c + q * c;
                        for (int64_t k = 0; k < c; ++k) dst[k] += src[k];
                    }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolutions (C,H,W layout)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void im2col(const T* x, int64_t c, int64_t h, int64_t w, int64_t k, int64_t stride,
            int64_t pad, int64_t ho, int64_t wo, T* cols) {
    // cols is (c*k*k, ho*wo)
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t ki = 0; ki < k; ++ki)
            for (int64_t kj = 0; kj < k; ++kj) {
                T* row = cols + ((ci * k + ki) * k + kj) * ho * wo;
                for (int64_t oy = 0; oy < ho; ++oy) {
                    const int64_t iy = oy * stride + ki - pad;
                    if (iy < 0 || iy >= h) {
                        std::fill_n(row + oy * wo, wo, T(0));
                        continue;
                    }
                    for (int64_t ox = 0; ox < wo; ++ox) {
                        const int64_t ix = ox * stride + kj - pad;
                        row[oy * wo + ox] = (ix < 0 || ix >= w) ? T(0) : x[(ci * h + iy) * w + ix];
                    }
                }
            }
}

template <typename T>
void col2im_acc(const T* cols, int64_t c, int64_t h, int64_t w, int64_t k, int64_t stride,
                int64_t pad, int64_t ho, int64_t wo, T* x) {
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t ki = 0; ki < k; ++ki)
            for (int64_t kj = 0; kj < k; ++kj) {
                const T* row = cols + ((ci * k + ki) * k + kj) * ho * wo;
                for (int64_t oy = 0; oy < ho; ++oy) {
                    const int64_t iy = oy * stride + ki - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int64_t ox = 0; ox < wo; ++ox) {
                        const int64_t ix = ox * stride + kj - pad;
                        if (ix >= 0 && ix < w) x[(ci * h + iy) * w + ix] += row[oy * wo + ox];
                    }
                }
            }
}

}  // namespace detail

// conv2d with square kernel, cross-correlation convention, im2col + gemm.
// x (C,H,W), w (O,C,k,k), b (O) optional.
template <typename T>
Tensor<T> conv2d(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int64_t stride, int64_t pad) {
    if (x->shape.size() != 3 || w->shape.size() != 4)
        throw DimError("conv2d: expected x (C,H,W) and w (O,C,k,k)");
    const int64_t c = x->shape[0], h = x->shape[1], ww = x->shape[2];
    const int64_t o = w->shape[0], k = w->shape[2];
    if (w->shape[1] != c)
        throw DimError("conv2d: channel mismatch x " + shape_str(x->shape) + " vs w " +
                       shape_str(w->shape));
    if (w->shape[3] != k) throw DimError("conv2d: non-square kernel");
    if (h + 2 * pad < k || ww + 2 * pad < k)
        throw DimError("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                       shape_str(x->shape));
    const int64_t ho = (h + 2 * pad - k) / stride + 1;
    const int64_t wo = (ww + 2 * pad - k) / stride + 1;
    const int64_t ck2 = c * k * k;

    auto cols = std::make_shared<std::vector<T>>(static_cast<size_t>(ck2 * ho * wo));
    detail::im2col(x->data.data(), c, h, ww, k, stride, pad, ho, wo, cols->data());
    auto out = make_tensor<T>({o, ho, wo});
    detail::gemm(w->data.data(), cols->data(), out->data.data(), o, ck2, ho * wo, false);
    if (b) {
        if (b->shape != Shape{o}) throw DimError("conv2d: bias shape mismatch");
        for (int64_t oc = 0; oc < o; ++oc) {
            T* p = out->data.data() + oc * ho * wo;
            for (int64_t i = 0; i < ho * wo; ++i) p[i] += b->data[oc];
        }
    }
    debug_check_finite(out, "conv2d");
    std::vector<Tensor<T>> inputs = b ? std::vector<Tensor<T>>{x, w, b} : std::vector<Tensor<T>>{x, w};
    if (g.wants_grad(inputs)) {
        g.record("conv2d", inputs, out, [x, w, b, out, cols, c, h, ww, k, stride, pad, ho, wo, o, ck2] {
            const T* gy = out->grad.data();
            if (w->requires_grad) {
                w->ensure_grad();
                // dW (o, ck2) = dY (o, howo) * cols^T
                detail::gemm_nt(gy, cols->data(), w->grad.data(), o, ho * wo, ck2, true);
            }
            if (b && b->requires_grad) {
                b->ensure_grad();
                for (int64_t oc = 0; oc < o; ++oc) {
                    T s = 0;
                    const T* p = gy + oc * ho * wo;
                    for (int64_t i = 0; i < ho * wo; ++i) s += p[i];
                    b->grad[oc] += s;
                }
            }
            if (x->requires_grad) {
                x->ensure_grad();
                std::vector<T> dcols(static_cast<size_t>(ck2 * ho * wo));
                detail::gemm_tn(w->data.data(), gy, dcols.data(), ck2, o, ho * wo, false);
                detail::col2im_acc(dcols.data(), c, h, ww, k, stride, pad, ho, wo, x->grad.data());
            }
        });
    }
    return out;
}

// Transposed conv with kernel 2, stride 2 (disjoint 2x2 output blocks).
// x (C,H,W), w (C,O,2,2), b (O) -> (O, 2H, 2W).
template <typename T>
Tensor<T> conv_transpose2d_k2s2(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w,
                                const Tensor<T>& b) {
    if (x->shape.size() != 3 || w->shape.size() != 4 || w->shape[0] != x->shape[0] ||
        w->shape[2] != 2 || w->shape[3] != 2)
        throw DimError("conv_transpose2d: expected x (C,H,W), w (C,O,2,2)");
    const int64_t c = x->shape[0], h = x->shape[1], ww = x->shape[2], o = w->shape[1];
    // Y4 (o*4, h*w) = Wm^T (o*4, c) * X (c, h*w), then scatter into 2x2 blocks.
    std::vector<T> y4(static_cast<size_t>(o * 4 * h * ww));
    detail::gemm_tn(w->data.data(), x->data.data(), y4.data(), o * 4, c, h * ww, false);
    auto out = make_tensor<T>({o, 2 * h, 2 * ww});
    for (int64_t oc = 0; oc < o; ++oc)
        for (int64_t a = 0; a < 2; ++a)
            for (int64_t bb = 0; bb < 2; ++bb) {
                const T* src = y4.data() + ((oc * 2 + a) * 2 + bb) * h * ww;
                for (int64_t i = 0; i < h; ++i)
                    for (int64_t j = 0; j < ww; ++j)
                        out->data[(oc * 2 * h + 2 * i + a) * 2 * ww + 2 * j + bb] =
                            src[i * ww + j] + (b ? b->data[oc] : T(0));
            }
    debug_check_finite(out, "conv_transpose2d");
    std::vector<Tensor<T>> inputs = b ? std::vector<Tensor<T>>{x, w, b} : std::vector<Tensor<T>>{x, w};
    if (g.wants_grad(inputs)) {
        g.record("conv_transpose2d", inputs, out, [x, w, b, out, c, h, ww, o] {
            // gather dY into (o*4, h*w)
            std::vector<T> gy4(static_cast<size_t>(o * 4 * h * ww));
            for (int64_t oc = 0; oc < o; ++oc)
                for (int64_t a = 0; a < 2; ++a)
                    for (int64_t bb = 0; bb < 2; ++bb) {
                        T* dst = gy4.data() + ((oc * 2 + a) * 2 + bb) * h * ww;
                        for (int64_t i = 0; i < h; ++i)
                            for (int64_t j = 0; j < ww; ++j)
                                dst[i * ww + j] =
                                    out->grad[(oc * 2 * h + 2 * i + a) * 2 * ww + 2 * j + bb];
                    }
            if (x->requires_grad) {
                x->ensure_grad();
                // dX (c, hw) = Wm (c, o4) * gY4 (o4, hw)
                detail::gemm(w->data.data(), gy4.data(), x->grad.data(), c, o * 4, h * ww, true);
            }
            if (w->requires_grad) {
                w->ensure_grad();
                // dWm (c, o4) = X (c, hw) * gY4^T (hw, o4)
                detail::gemm_nt(x->data.data(), gy4.data(), w->grad.data(), c, h * ww, o * 4, true);
            }
            if (b && b->requires_grad) {
                b->ensure_grad();
                for (int64_t oc = 0; oc < o; ++oc) {
                    T s = 0;
                    const T* p = out->grad.data() + oc * 4 * h * ww;
                    for (int64_t i = 0; i < 4 * h * ww; ++i) s += p[i];
                    b->grad[oc] += s;
                }
            }
        });
    }
    return out;
}

// Average pooling with square kernel k, stride k.
template <typename T>
Tensor<T> avgpool2d(Graph<T>& g, const Tensor<T>& x, int64_t k) {
    const int64_t c = x->shape[0], h = x->shape[1], w = x->shape[2];
    if (h % k || w % k) throw DimError("avgpool2d: kernel does not tile input");
    const int64_t ho = h / k, wo = w / k;
    auto out = make_tensor<T>({c, ho, wo});
    const T inv = T(1) / static_cast<T>(k * k);
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t oy = 0; oy < ho; ++oy)
            for (int64_t ox = 0; ox < wo; ++ox) {
                T s = 0;
                for (int64_t a = 0; a < k; ++a)
                    for (int64_t bb = 0; bb < k; ++bb)
                        s += x->data[(ci * h + oy * k + a) * w + ox * k + bb];
                out->data[(ci * ho + oy) * wo + ox] = s * inv;
            }
    if (g.wants_grad({x})) {
        g.record("avgpool2d", {x}, out, [x, out, c, h, w, k, ho, wo, inv] {
            x->ensure_grad();
            for (int64_t ci = 0; ci < c; ++ci)
                for (int64_t oy = 0; oy < ho; ++oy)
                    for (int64_t ox = 0; ox < wo; ++ox) {
                        const T gv = out->grad[(ci * ho + oy) * wo + ox] * inv;
                        for (int64_t a = 0; a < k; ++a)
                            for (int64_t bb = 0; bb < k; ++bb)
                                x->grad[(ci * h + oy * k + a) * w + ox * k + bb] += gv;
                    }
        });
    }
    return out;
}

// Bilinear resize of (C,H,W) to (C,ho,wo), half-pixel centers, edges clamped.
template <typename T>
Tensor<T> bilinear_resize(Graph<T>& g, const Tensor<T>& x, int64_t ho, int64_t wo) {
    if (x->shape.size() != 3) throw DimError("bilinear_resize: expected (C,H,W)");
    const int64_t c = x->shape[0], h = x->shape[1], w = x->shape[2];
    struct Tap {
        int64_t i0, i1;
        T w1;
    };
    auto make_taps = [](int64_t src, int64_t dst) {
        std::vector<Tap> taps(dst);
        const double scale = static_cast<double>(src) / static_cast<double>(dst);
        for (int64_t i = 0; i < dst; ++i) {
            double p = (static_cast<double>(i) + 0.5) * scale - 0.5;
            if (p < 0) p = 0;
            if (p > src - 1) p = static_cast<double>(src - 1);
            const int64_t i0 = static_cast<int64_t>(p);
            const int64_t i1 = std::min(i0 + 1, src - 1);
            taps[i] = Tap{i0, i1, static_cast<T>(p - static_cast<double>(i0))};
        }
        return taps;
    };
    auto ty = std::make_shared<std::vector<Tap>>(make_taps(h, ho));
    auto tx = std::make_shared<std::vector<Tap>>(make_taps(w, wo));
    auto out = make_tensor<T>({c, ho, wo});
    for (int64_t ci = 0; ci < c; ++ci) {
        const T* src = x->data.data() + ci * h * w;
        T* dst = out->data.data() + ci * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy) {
            const Tap& a = (*ty)[oy];
            for (int64_t ox = 0; ox < wo; ++ox) {
                const Tap& bt = (*tx)[ox];
                const T v00 = src[a.i0 * w + bt.i0], v01 = src[a.i0 * w + bt.i1];
                const T v10 = src[a.i1 * w + bt.i0], v11 = src[a.i1 * w + bt.i1];
                const T top = v00 + (v01 - v00) * bt.w1;
                const T bot = v10 + (v11 - v10) * bt.w1;
                dst[oy * wo + ox] = top + (bot - top) * a.w1;
            }
        }
    }
    if (g.wants_grad({x})) {
        g.record("bilinear_resize", {x}, out, [x, out, ty, tx, c, h, w, ho, wo] {
            x->ensure_grad();
            for (int64_t ci = 0; ci < c; ++ci) {
                T* gx = x->grad.data() + ci * h * w;
                const T* gy = out->grad.data() + ci * ho * wo;
                for (int64_t oy = 0; oy < ho; ++oy) {
                    const auto& a = (*ty)[oy];
                    for (int64_t ox = 0; ox < wo; ++ox) {
                        const auto& bt = (*tx)[ox];
                        const T gv = gy[oy * wo + ox];
                        const T wy1 = a.w1, wx1 = bt.w1;
                        gx[a.i0 * w + bt.i0] += gv * (1 - wy1) * (1 - wx1);
                        gx[a.i0 * w + bt.i1] += gv * (1 - wy1) * wx1;
                        gx[a.i1 * w + bt.i0] += gv * wy1 * (1 - wx1);
                        gx[a.i1 * w + bt.i1] += gv * wy1 * wx1;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization and activations
// ---------------------------------------------------------------------------

// Layer norm over the trailing dimension of (..., F).
template <typename T>
Tensor<T> layer_norm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-6)) {
    const int64_t f = x->shape.back();
    if (gamma->shape != Shape{f} || beta->shape != Shape{f})
        throw DimError("layer_norm: affine params do not match feature dim " + std::to_string(f));
    const int64_t rows = x->numel() / f;
    auto out = make_tensor<T>(x->shape);
    auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(x->numel()));
    auto rstd = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const T* xe = x->data.data() + r * f;
        double mu = 0;
        for (int64_t j = 0; j < f; ++j) mu += xe[j];
        mu /= f;
        double var = 0;
        for (int64_t j = 0; j < f; ++j) {
            const double d = xe[j] - mu;
            var += d * d;
        }
        var /= f;
        const T rs = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        (*rstd)[r] = rs;
        T* xh = xhat->data() + r * f;
        T* oe = out->data.data() + r * f;
        for (int64_t j = 0; j < f; ++j) {
            xh[j] = (xe[j] - static_cast<T>(mu)) * rs;
            oe[j] = xh[j] * gamma->data[j] + beta->data[j];
        }
    }
    debug_check_finite(out, "layer_norm");
    if (g.wants_grad({x, gamma, beta})) {
        g.record("layer_norm", {x, gamma, beta}, out, [x, gamma, beta, out, xhat, rstd, rows, f] {
            for (int64_t r = 0; r < rows; ++r) {
                const T* go = out->grad.data() + r * f;
                const T* xh = xhat->data() + r * f;
                if (gamma->requires_grad) {
                    gamma->ensure_grad();
                    for (int64_t j = 0; j < f; ++j) gamma->grad[j] += go[j] * xh[j];
                }
                if (beta->requires_grad) {
                    beta->ensure_grad();
                    for (int64_t j = 0; j < f; ++j) beta->grad[j] += go[j];
                }
                if (x->requires_grad) {
                    x->ensure_grad();
                    double m1 = 0, m2 = 0;
                    for (int64_t j = 0; j < f; ++j) {
                        const double dy = static_cast<double>(go[j]) * gamma->data[j];
                        m1 += dy;
                        m2 += dy * xh[j];
                    }
                    m1 /= f;
                    m2 /= f;
                    T* gx = x->grad.data() + r * f;
                    for (int64_t j = 0; j < f; ++j) {
                        const double dy = static_cast<double>(go[j]) * gamma->data[j];
                        gx[j] += static_cast<T>((dy - m1 - xh[j] * m2) * (*rstd)[r]);
                    }
                }
            }
        });
    }
    return out;
}

// Layer norm across channels at each spatial position of (C,H,W).
template <typename T>
Tensor<T> layer_norm_chw(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gamma,
                         const Tensor<T>& beta, T eps = T(1e-6)) {
    auto hwc = permute(g, x, {1, 2, 0});
    auto y = layer_norm(g, hwc, gamma, beta, eps);
    return permute(g, y, {2, 0, 1});
}

// Batch norm over the spatial extent of (C,H,W). Training mode normalizes
// with the sample statistics and updates the running buffers (momentum
// convention: running = (1-m)*running + m*batch); eval mode reads buffers.
template <typename T>
Tensor<T> batch_norm2d(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gamma,
                       const Tensor<T>& beta, const Tensor<T>& run_mean, const Tensor<T>& run_var,
                       bool training, T momentum = T(0.1), T eps = T(1e-5)) {
    const int64_t c = x->shape[0], n = x->shape[1] * x->shape[2];
    if (gamma->shape != Shape{c} || beta->shape != Shape{c})
        throw DimError("batch_norm2d: affine params do not match channels");
    auto out = make_tensor<T>(x->shape);
    auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(x->numel()));
    auto rstd = std::make_shared<std::vector<T>>(static_cast<size_t>(c));
    for (int64_t ci = 0; ci < c; ++ci) {
        const T* xe = x->data.data() + ci * n;
        double mu, var;
        if (training) {
            mu = 0;
            for (int64_t i = 0; i < n; ++i) mu += xe[i];
            mu /= n;
            var = 0;
            for (int64_t i = 0; i < n; ++i) {
                const double d = xe[i] - mu;
                var += d * d;
            }
            var /= n;
            const double unbiased = n > 1 ? var * n / (n - 1) : var;
            run_mean->data[ci] = (T(1) - momentum) * run_mean->data[ci] + momentum * static_cast<T>(mu);
            run_var->data[ci] = (T(1) - momentum) * run_var->data[ci] + momentum * static_cast<T>(unbiased);
        } else {
            mu = run_mean->data[ci];
            var = run_var->data[ci];
        }
        const T rs = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        (*rstd)[ci] = rs;
        T* xh = xhat->data() + ci * n;
        T* oe = out->data.data() + ci * n;
        for (int64_t i = 0; i < n; ++i) {
            xh[i] = (xe[i] - static_cast<T>(mu)) * rs;
            oe[i] = xh[i] * gamma->data[ci] + beta->data[ci];
        }
    }
    debug_check_finite(out, "batch_norm2d");
    if (g.wants_grad({x, gamma, beta})) {
        g.record("batch_norm2d", {x, gamma, beta}, out,
                 [x, gamma, beta, out, xhat, rstd, c, n, training] {
                     for (int64_t ci = 0; ci < c; ++ci) {
                         const T* go = out->grad.data() + ci * n;
                         const T* xh = xhat->data() + ci * n;
                         if (gamma->requires_grad) {
                             gamma->ensure_grad();
                             double s = 0;
                             for (int64_t i = 0; i < n; ++i) s += static_cast<double>(go[i]) * xh[i];
                             gamma->grad[ci] += static_cast<T>(s);
                         }
                         if (beta->requires_grad) {
                             beta->ensure_grad();
                             double s = 0;
                             for (int64_t i = 0; i < n; ++i) s += go[i];
                             beta->grad[ci] += static_cast<T>(s);
                         }
                         if (x->requires_grad) {
                             x->ensure_grad();
                             T* gx = x->grad.data() + ci * n;
                             const T gmul = gamma->data[ci] * (*rstd)[ci];
                             if (training) {
                                 double m1 = 0, m2 = 0;
                                 for (int64_t i = 0; i < n; ++i) {
                                     m1 += go[i];
                                     m2 += static_cast<double>(go[i]) * xh[i];
                                 }
                                 m1 /= n;
                                 m2 /= n;
                                 for (int64_t i = 0; i < n; ++i)
                                     gx[i] += static_cast<T>((go[i] - m1 - xh[i] * m2)) * gmul;
                             } else {
                                 for (int64_t i = 0; i < n; ++i) gx[i] += go[i] * gmul;
                             }
                         }
                     }
                 });
    }
    return out;
}

// Numerically stable softmax along the trailing dimension.
template <typename T>
Tensor<T> softmax(Graph<T>& g, const Tensor<T>& x) {
    const int64_t f = x->shape.back();
    const int64_t rows = x->numel() / f;
    auto out = make_tensor<T>(x->shape);
    for (int64_t r = 0; r < rows; ++r) {
        const T* xe = x->data.data() + r * f;
        T* oe = out->data.data() + r * f;
        T mx = xe[0];
        for (int64_t j = 1; j < f; ++j) mx = std::max(mx, xe[j]);
        double denom = 0;
        for (int64_t j = 0; j < f; ++j) {
            oe[j] = std::exp(xe[j] - mx);
            denom += oe[j];
        }
        const T inv = static_cast<T>(1.0 / denom);
        for (int64_t j = 0; j < f; ++j) oe[j] *= inv;
    }
    debug_check_finite(out, "softmax");
    if (g.wants_grad({x})) {
        g.record("softmax", {x}, out, [x, out, rows, f] {
            x->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const T* y = out->data.data() + r * f;
                const T* gy = out->grad.data() + r * f;
                double dot = 0;
                for (int64_t j = 0; j < f; ++j) dot += static_cast<double>(gy[j]) * y[j];
                T* gx = x->grad.data() + r * f;
                for (int64_t j = 0; j < f; ++j)
                    gx[j] += y[j] * (gy[j] - static_cast<T>(dot));
            }
        });
    }
    return out;
}

// GELU, tanh approximation.
template <typename T>
Tensor<T> gelu(Graph<T>& g, const Tensor<T>& x) {
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kA = 0.044715;
    auto out = make_tensor<T>(x->shape);
    for (int64_t i = 0; i < x->numel(); ++i) {
        const double v = x->data[i];
        out->data[i] = static_cast<T>(0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v))));
    }
    if (g.wants_grad({x})) {
        g.record("gelu", {x}, out, [x, out] {
            x->ensure_grad();
            for (int64_t i = 0; i < x->numel(); ++i) {
                const double v = x->data[i];
                const double u = kC * (v + kA * v * v * v);
                const double t = std::tanh(u);
                const double sech2 = 1.0 - t * t;
                const double d = 0.5 * (1.0 + t) + 0.5 * v * sech2 * kC * (1.0 + 3.0 * kA * v * v);
                x->grad[i] += out->grad[i] * static_cast<T>(d);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid(Graph<T>& g, const Tensor<T>& x) {
    auto out = make_tensor<T>(x->shape);
    for (int64_t i = 0; i < x->numel(); ++i) {
        const double v = x->data[i];
        out->data[i] = static_cast<T>(v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                                             : std::exp(v) / (1.0 + std::exp(v)));
    }
    if (g.wants_grad({x})) {
        g.record("sigmoid", {x}, out, [x, out] {
            x->ensure_grad();
            for (int64_t i = 0; i < x->numel(); ++i) {
                const T y = out->data[i];
                x->grad[i] += out->grad[i] * y * (T(1) - y);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(Graph<T>& g, const Tensor<T>& x) {
    double s = 0;
    for (int64_t i = 0; i < x->numel(); ++i) s += x->data[i];
    auto out = scalar_tensor<T>(static_cast<T>(s));
    if (g.wants_grad({x})) {
        g.record("sum_all", {x}, out, [x, out] {
            x->ensure_grad();
            const T gv = out->grad[0];
            for (int64_t i = 0; i < x->numel(); ++i) x->grad[i] += gv;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean_all(Graph<T>& g, const Tensor<T>& x) {
    const T inv = T(1) / static_cast<T>(x->numel());
    return mul_scalar(g, sum_all(g, x), inv);
}

// Mean binary cross-entropy on logits against a constant 0/1 target, in the
// log-sum-exp form that never overflows.
template <typename T>
Tensor<T> bce_with_logits_mean(Graph<T>& g, const Tensor<T>& logits, const std::vector<T>& target) {
    if (static_cast<int64_t>(target.size()) != logits->numel())
        throw DimError("bce_with_logits: target size mismatch");
    double s = 0;
    for (int64_t i = 0; i < logits->numel(); ++i) {
        const double v = logits->data[i];
        const double z = target[i];
        s += std::max(v, 0.0) - v * z + std::log1p(std::exp(-std::fabs(v)));
    }
    const int64_t n = logits->numel();
    auto out = scalar_tensor<T>(static_cast<T>(s / n));
    if (g.wants_grad({logits})) {
        auto tgt = std::make_shared<std::vector<T>>(target);
        g.record("bce_with_logits", {logits}, out, [logits, out, tgt, n] {
            logits->ensure_grad();
            const T gv = out->grad[0] / static_cast<T>(n);
            for (int64_t i = 0; i < n; ++i) {
                const double v = logits->data[i];
                const double sig = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
                logits->grad[i] += gv * static_cast<T>(sig - (*tgt)[i]);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Attention helpers
// ---------------------------------------------------------------------------

// Expands a relative-position-bias table (heads, tableN) to (heads, m, m)
// using a precomputed index map of length m*m with values in [0, tableN).
template <typename T>
Tensor<T> attn_bias_gather(Graph<T>& g, const Tensor<T>& table,
                           const std::shared_ptr<std::vector<int64_t>>& idx, int64_t m) {
    const int64_t heads = table->shape[0], tn = table->shape[1];
    if (static_cast<int64_t>(idx->size()) != m * m)
        throw DimError("attn_bias_gather: index map length mismatch");
    auto out = make_tensor<T>({heads, m, m});
    for (int64_t hh = 0; hh < heads; ++hh)
        for (int64_t i = 0; i < m * m; ++i) out->data[hh * m * m + i] = table->data[hh * tn + (*idx)[i]];
    if (g.wants_grad({table})) {
        g.record("attn_bias_gather", {table}, out, [table, out, idx, heads, tn, m] {
            table->ensure_grad();
            for (int64_t hh = 0; hh < heads; ++hh)
                for (int64_t i = 0; i < m * m; ++i)
                    table->grad[hh * tn + (*idx)[i]] += out->grad[hh * m * m + i];
        });
    }
    return out;
}

// attn (nW*heads, m, m) + bias (heads, m, m), bias broadcast over windows.
// Batch index layout is window-major: b = wi*heads + head.
template <typename T>
Tensor<T> add_window_bias(Graph<T>& g, const Tensor<T>& attn, const Tensor<T>& bias) {
    const int64_t bsz = attn->shape[0], m = attn->shape[1];
    const int64_t heads = bias->shape[0];
    if (attn->shape[2] != m || bias->shape[1] != m || bias->shape[2] != m || bsz % heads)
        throw DimError("add_window_bias: incompatible shapes " + shape_str(attn->shape) + " / " +
                       shape_str(bias->shape));
    auto out = make_tensor<T>(attn->shape);
    const int64_t mm = m * m;
    for (int64_t b = 0; b < bsz; ++b) {
        const T* bb = bias->data.data() + (b % heads) * mm;
        const T* ae = attn->data.data() + b * mm;
        T* oe = out->data.data() + b * mm;
        for (int64_t i = 0; i < mm; ++i) oe[i] = ae[i] + bb[i];
    }
    if (g.wants_grad({attn, bias})) {
        g.record("add_window_bias", {attn, bias}, out, [attn, bias, out, bsz, heads, mm] {
            if (attn->requires_grad) {
                attn->ensure_grad();
                for (int64_t i = 0; i < out->numel(); ++i) attn->grad[i] += out->grad[i];
            }
            if (bias->requires_grad) {
                bias->ensure_grad();
                for (int64_t b = 0; b < bsz; ++b) {
                    T* gb = bias->grad.data() + (b % heads) * mm;
                    const T* go = out->grad.data() + b * mm;
                    for (int64_t i = 0; i < mm; ++i) gb[i] += go[i];
                }
            }
        });
    }
    return out;
}

// Broadcast a vector (C) to a (C, g, g) grid.
template <typename T>
Tensor<T> broadcast_vec_grid(Graph<T>& g, const Tensor<T>& v, int64_t grid) {
    const int64_t c = v->shape[0];
    auto out = make_tensor<T>({c, grid, grid});
    for (int64_t ci = 0; ci < c; ++ci)
        std::fill_n(out->data.data() + ci * grid * grid, grid * grid, v->data[ci]);
    if (g.wants_grad({v})) {
        g.record("broadcast_vec_grid", {v}, out, [v, out, c, grid] {
            v->ensure_grad();
            for (int64_t ci = 0; ci < c; ++ci) {
                T s = 0;
                const T* p = out->grad.data() + ci * grid * grid;
                for (int64_t i = 0; i < grid * grid; ++i) s += p[i];
                v->grad[ci] += s;
            }
        });
    }
    return out;
}

}  // namespace swinseg
