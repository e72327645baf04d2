#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

#include "mcnet/core/autograd.hpp"

namespace mcnet {
namespace ag {

// Running MAC counter for the complexity report; incremented by conv2d and
// the matmul family when enabled.
inline int64_t& mac_counter() {
    thread_local int64_t macs = 0;
    return macs;
}
inline bool& mac_counting() {
    thread_local bool on = false;
    return on;
}

namespace detail {

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C(M,N) += or = A(M,K) * B(K,N), row-major raw pointers.
template <class T>
void gemm(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate) {
    Eigen::Map<const EMat<T>> a(A, M, K), b(B, K, N);
    Eigen::Map<EMat<T>> c(C, M, N);
    if (accumulate)
        c.noalias() += a * b;
    else
        c.noalias() = a * b;
    if (mac_counting()) mac_counter() += M * N * K;
}

// C(M,N) = A^T(K,M) * B(K,N)
template <class T>
void gemm_ta(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate) {
    Eigen::Map<const EMat<T>> a(A, K, M), b(B, K, N);
    Eigen::Map<EMat<T>> c(C, M, N);
    if (accumulate)
        c.noalias() += a.transpose() * b;
    else
        c.noalias() = a.transpose() * b;
    if (mac_counting()) mac_counter() += M * N * K;
}

// C(M,N) = A(M,K) * B^T(N,K)
template <class T>
void gemm_tb(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate) {
    Eigen::Map<const EMat<T>> a(A, M, K), b(B, N, K);
    Eigen::Map<EMat<T>> c(C, M, N);
    if (accumulate)
        c.noalias() += a * b.transpose();
    else
        c.noalias() = a * b.transpose();
    if (mac_counting()) mac_counter() += M * N * K;
}

inline std::vector<int64_t> broadcast_shape(const std::vector<int64_t>& a,
                                            const std::vector<int64_t>& b) {
    check_shape(a.size() == b.size(), "broadcast requires equal rank");
    std::vector<int64_t> out(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i] || b[i] == 1)
            out[i] = a[i];
        else if (a[i] == 1)
            out[i] = b[i];
        else
            throw std::invalid_argument("incompatible broadcast dims");
    }
    return out;
}

inline std::vector<int64_t> strides_for(const std::vector<int64_t>& shape) {
    std::vector<int64_t> st(shape.size());
    int64_t s = 1;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        st[static_cast<size_t>(i)] = s;
        s *= shape[static_cast<size_t>(i)];
    }
    return st;
}

// Iterate an output shape while tracking offsets into two (possibly
// broadcast) operands. fn(out_index, a_off, b_off).
template <class Fn>
void broadcast_iter(const std::vector<int64_t>& out_shape, const std::vector<int64_t>& a_shape,
                    const std::vector<int64_t>& b_shape, Fn&& fn) {
    const int r = static_cast<int>(out_shape.size());
    auto ast = strides_for(a_shape), bst = strides_for(b_shape);
    for (int i = 0; i < r; ++i) {
        if (a_shape[static_cast<size_t>(i)] == 1) ast[static_cast<size_t>(i)] = 0;
        if (b_shape[static_cast<size_t>(i)] == 1) bst[static_cast<size_t>(i)] = 0;
    }
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t total = TensorT<float>::count(out_shape);
    int64_t ao = 0, bo = 0;
    for (int64_t i = 0; i < total; ++i) {
        fn(i, ao, bo);
        for (int d = r - 1; d >= 0; --d) {
            auto du = static_cast<size_t>(d);
            idx[du]++;
            ao += ast[du];
            bo += bst[du];
            if (idx[du] < out_shape[du]) break;
            ao -= ast[du] * out_shape[du];
            bo -= bst[du] * out_shape[du];
            idx[du] = 0;
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise / broadcast arithmetic
// ---------------------------------------------------------------------------

template <class T>
VarT<T> add(const VarT<T>& a, const VarT<T>& b) {
    if (a.shape() == b.shape()) {
        TensorT<T> out(a.shape());
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
        auto an = a.node(), bn = b.node();
        return VarT<T>::make(std::move(out), {a, b}, [an, bn](typename VarT<T>::Node& n) {
            if (an->requires_grad) VarT<T>::accumulate(*an, n.grad);
            if (bn->requires_grad) VarT<T>::accumulate(*bn, n.grad);
        });
    }
    auto os = detail::broadcast_shape(a.shape(), b.shape());
    TensorT<T> out(os);
    detail::broadcast_iter(os, a.shape(), b.shape(),
                           [&](int64_t i, int64_t ao, int64_t bo) { out[i] = a.value()[ao] + b.value()[bo]; });
    auto an = a.node(), bn = b.node();
    auto ash = a.shape(), bsh = b.shape();
    return VarT<T>::make(std::move(out), {a, b}, [an, bn, os, ash, bsh](typename VarT<T>::Node& n) {
        if (an->requires_grad) {
            TensorT<T> ga(ash);
            detail::broadcast_iter(os, ash, bsh,
                                   [&](int64_t i, int64_t ao, int64_t) { ga[ao] += n.grad[i]; });
            VarT<T>::accumulate(*an, ga);
        }
        if (bn->requires_grad) {
            TensorT<T> gb(bsh);
            detail::broadcast_iter(os, ash, bsh,
                                   [&](int64_t i, int64_t, int64_t bo) { gb[bo] += n.grad[i]; });
            VarT<T>::accumulate(*bn, gb);
        }
    });
}

template <class T>
VarT<T> mul(const VarT<T>& a, const VarT<T>& b) {
    if (a.shape() == b.shape()) {
        TensorT<T> out(a.shape());
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
        auto an = a.node(), bn = b.node();
        return VarT<T>::make(std::move(out), {a, b}, [an, bn](typename VarT<T>::Node& n) {
            if (an->requires_grad) {
                TensorT<T> g(n.grad.shape);
                for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * bn->value[i];
                VarT<T>::accumulate(*an, g);
            }
            if (bn->requires_grad) {
                TensorT<T> g(n.grad.shape);
                for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * an->value[i];
                VarT<T>::accumulate(*bn, g);
            }
        });
    }
    auto os = detail::broadcast_shape(a.shape(), b.shape());
    TensorT<T> out(os);
    detail::broadcast_iter(os, a.shape(), b.shape(),
                           [&](int64_t i, int64_t ao, int64_t bo) { out[i] = a.value()[ao] * b.value()[bo]; });
    auto an = a.node(), bn = b.node();
    auto ash = a.shape(), bsh = b.shape();
    return VarT<T>::make(std::move(out), {a, b}, [an, bn, os, ash, bsh](typename VarT<T>::Node& n) {
        if (an->requires_grad) {
            TensorT<T> ga(ash);
            detail::broadcast_iter(os, ash, bsh, [&](int64_t i, int64_t ao, int64_t bo) {
                ga[ao] += n.grad[i] * bn->value[bo];
            });
            VarT<T>::accumulate(*an, ga);
        }
        if (bn->requires_grad) {
            TensorT<T> gb(bsh);
            detail::broadcast_iter(os, ash, bsh, [&](int64_t i, int64_t ao, int64_t bo) {
                gb[bo] += n.grad[i] * an->value[ao];
            });
            VarT<T>::accumulate(*bn, gb);
        }
    });
}

template <class T>
VarT<T> sub(const VarT<T>& a, const VarT<T>& b) {
    return add(a, scale(b, T(-1)));
}

template <class T>
VarT<T> div(const VarT<T>& a, const VarT<T>& b) {
    check_shape(a.shape() == b.shape(), "div");
    TensorT<T> out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] / b.value()[i];
    auto an = a.node(), bn = b.node();
    return VarT<T>::make(std::move(out), {a, b}, [an, bn](typename VarT<T>::Node& n) {
        if (an->requires_grad) {
            TensorT<T> g(n.grad.shape);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] / bn->value[i];
            VarT<T>::accumulate(*an, g);
        }
        if (bn->requires_grad) {
            TensorT<T> g(n.grad.shape);
            for (int64_t i = 0; i < g.numel(); ++i)
                g[i] = -n.grad[i] * an->value[i] / (bn->value[i] * bn->value[i]);
            VarT<T>::accumulate(*bn, g);
        }
    });
}

template <class T>
VarT<T> scale(const VarT<T>& a, T s) {
    TensorT<T> out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * s;
    auto an = a.node();
    return VarT<T>::make(std::move(out), {a}, [an, s](typename VarT<T>::Node& n) {
        TensorT<T> g(n.grad.shape);
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * s;
        VarT<T>::accumulate(*an, g);
    });
}

template <class T>
VarT<T> add_scalar(const VarT<T>& a, T s) {
    TensorT<T> out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + s;
    auto an = a.node();
    return VarT<T>::make(std::move(out), {a},
                         [an](typename VarT<T>::Node& n) { VarT<T>::accumulate(*an, n.grad); });
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

template <class T>
VarT<T> relu(const VarT<T>& a) {
    TensorT<T> out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] > T(0) ? a.value()[i] : T(0);
    auto an = a.node();
    return VarT<T>::make(std::move(out), {a}, [an](typename VarT<T>::Node& n) {
        TensorT<T> g(n.grad.shape);
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = an->value[i] > T(0) ? n.grad[i] : T(0);
        VarT<T>::accumulate(*an, g);
    });
}

template <class T>
VarT<T> sigmoid(const VarT<T>& a) {
    TensorT<T> out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-a.value()[i]));
    TensorT<T> y = out;
    auto an = a.node();
    return VarT<T>::make(std::move(out), {a}, [an, y](typename VarT<T>::Node& n) {
        TensorT<T> g(n.grad.shape);
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * y[i] * (T(1) - y[i]);
        VarT<T>::accumulate(*an, g);
    });
}

template <class T>
VarT<T> gelu(const VarT<T>& a) {
    constexpr T inv_sqrt2 = T(0.7071067811865475244);
    constexpr T inv_sqrt2pi = T(0.3989422804014326779);
    TensorT<T> out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        T x = a.value()[i];
        out[i] = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
    }
    auto an = a.node();
    return VarT<T>::make(std::move(out), {a}, [an](typename VarT<T>::Node& n) {
        TensorT<T> g(n.grad.shape);
        for (int64_t i = 0; i < g.numel(); ++i) {
            T x = an->value[i];
            T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
            T pdf = inv_sqrt2pi * std::exp(-T(0.5) * x * x);
            g[i] = n.grad[i] * (cdf + x * pdf);
        }
        VarT<T>::accumulate(*an, g);
    });
}

template <class T>
VarT<T> log_op(const VarT<T>& a) {
    TensorT<T> out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(a.value()[i]);
    auto an = a.node();
    return VarT<T>::make(std::move(out), {a}, [an](typename VarT<T>::Node& n) {
        TensorT<T> g(n.grad.shape);
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] / an->value[i];
        VarT<T>::accumulate(*an, g);
    });
}

// Gradient is passed through only inside the clamp range (torch semantics).
template <class T>
VarT<T> clamp(const VarT<T>& a, T lo, T hi) {
    TensorT<T> out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(hi, std::max(lo, a.value()[i]));
    auto an = a.node();
    return VarT<T>::make(std::move(out), {a}, [an, lo, hi](typename VarT<T>::Node& n) {
        TensorT<T> g(n.grad.shape);
        for (int64_t i = 0; i < g.numel(); ++i)
            g[i] = (an->value[i] >= lo && an->value[i] <= hi) ? n.grad[i] : T(0);
        VarT<T>::accumulate(*an, g);
    });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <class T>
VarT<T> reshape(const VarT<T>& a, std::vector<int64_t> shape) {
    // one -1 wildcard allowed
    int64_t known = 1, wild = -1;
    for (size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == -1) {
            check_shape(wild < 0, "reshape: multiple -1");
            wild = static_cast<int64_t>(i);
        } else {
            known *= shape[i];
        }
    }
    if (wild >= 0) shape[static_cast<size_t>(wild)] = a.numel() / known;
    check_shape(TensorT<T>::count(shape) == a.numel(), "reshape numel");
    TensorT<T> out;
    out.shape = shape;
    out.data = a.value().data;
    auto an = a.node();
    auto old_shape = a.shape();
    return VarT<T>::make(std::move(out), {a}, [an, old_shape](typename VarT<T>::Node& n) {
        TensorT<T> g;
        g.shape = old_shape;
        g.data = n.grad.data;
        VarT<T>::accumulate(*an, g);
    });
}

template <class T>
VarT<T> permute(const VarT<T>& a, const std::vector<int>& dims) {
    const int r = a.value().rank();
    check_shape(static_cast<int>(dims.size()) == r, "permute rank");
    std::vector<int64_t> os(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) os[static_cast<size_t>(i)] = a.shape()[static_cast<size_t>(dims[static_cast<size_t>(i)])];
    auto ist = detail::strides_for(a.shape());
    TensorT<T> out(os);
    std::vector<int64_t> pst(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) pst[static_cast<size_t>(i)] = ist[static_cast<size_t>(dims[static_cast<size_t>(i)])];
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t src = 0;
    for (int64_t i = 0; i < out.numel(); ++i) {
        out[i] = a.value()[src];
        for (int d = r - 1; d >= 0; --d) {
            auto du = static_cast<size_t>(d);
            idx[du]++;
            src += pst[du];
            if (idx[du] < os[du]) break;
            src -= pst[du] * os[du];
            idx[du] = 0;
        }
    }
    auto an = a.node();
    auto ash = a.shape();
    return VarT<T>::make(std::move(out), {a}, [an, os, pst, ash, r](typename VarT<T>::Node& n) {
        TensorT<T> g(ash);
        std::vector<int64_t> ix(static_cast<size_t>(r), 0);
        int64_t src = 0;
        for (int64_t i = 0; i < n.grad.numel(); ++i) {
            g[src] += n.grad[i];
            for (int d = r - 1; d >= 0; --d) {
                auto du = static_cast<size_t>(d);
                ix[du]++;
                src += pst[du];
                if (ix[du] < os[du]) break;
                src -= pst[du] * os[du];
                ix[du] = 0;
            }
        }
        VarT<T>::accumulate(*an, g);
    });
}

template <class T>
VarT<T> concat(const std::vector<VarT<T>>& xs, int axis) {
    check_shape(!xs.empty(), "concat empty");
    const int r = xs[0].value().rank();
    if (axis < 0) axis += r;
    std::vector<int64_t> os = xs[0].shape();
    int64_t total_axis = 0;
    for (const auto& x : xs) {
        check_shape(x.value().rank() == r, "concat rank");
        for (int d = 0; d < r; ++d)
            if (d != axis) check_shape(x.shape()[static_cast<size_t>(d)] == os[static_cast<size_t>(d)], "concat dims");
        total_axis += x.shape()[static_cast<size_t>(axis)];
    }
    os[static_cast<size_t>(axis)] = total_axis;
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= os[static_cast<size_t>(d)];
    for (int d = axis + 1; d < r; ++d) inner *= os[static_cast<size_t>(d)];
    TensorT<T> out(os);
    std::vector<int64_t> axis_sizes;
    for (const auto& x : xs) axis_sizes.push_back(x.shape()[static_cast<size_t>(axis)]);
    int64_t off = 0;
    for (size_t k = 0; k < xs.size(); ++k) {
        int64_t ak = axis_sizes[k];
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(xs[k].value().data.data() + o * ak * inner, ak * inner,
                        out.data.data() + (o * total_axis + off) * inner);
        off += ak;
    }
    std::vector<std::shared_ptr<typename VarT<T>::Node>> nodes;
    for (const auto& x : xs) nodes.push_back(x.node());
    return VarT<T>::make(std::move(out), xs,
                         [nodes, axis_sizes, outer, inner, total_axis](typename VarT<T>::Node& n) {
                             int64_t off = 0;
                             for (size_t k = 0; k < nodes.size(); ++k) {
                                 int64_t ak = axis_sizes[k];
                                 if (nodes[k]->requires_grad) {
                                     TensorT<T> g(nodes[k]->value.shape);
                                     for (int64_t o = 0; o < outer; ++o)
                                         std::copy_n(n.grad.data.data() + (o * total_axis + off) * inner,
                                                     ak * inner, g.data.data() + o * ak * inner);
                                     VarT<T>::accumulate(*nodes[k], g);
                                 }
                                 off += ak;
                             }
                         });
}

template <class T>
VarT<T> slice(const VarT<T>& a, int axis, int64_t start, int64_t len) {
    const int r = a.value().rank();
    if (axis < 0) axis += r;
    check_shape(start >= 0 && start + len <= a.shape()[static_cast<size_t>(axis)], "slice range");
    std::vector<int64_t> os = a.shape();
    os[static_cast<size_t>(axis)] = len;
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= os[static_cast<size_t>(d)];
    for (int d = axis + 1; d < r; ++d) inner *= os[static_cast<size_t>(d)];
    const int64_t in_axis = a.shape()[static_cast<size_t>(axis)];
    TensorT<T> out(os);
    for (int64_t o = 0; o < outer; ++o)
        std::copy_n(a.value().data.data() + (o * in_axis + start) * inner, len * inner,
                    out.data.data() + o * len * inner);
    auto an = a.node();
    auto ash = a.shape();
    return VarT<T>::make(std::move(out), {a},
                         [an, ash, outer, inner, in_axis, start, len](typename VarT<T>::Node& n) {
                             TensorT<T> g(ash);
                             for (int64_t o = 0; o < outer; ++o)
                                 std::copy_n(n.grad.data.data() + o * len * inner, len * inner,
                                             g.data.data() + (o * in_axis + start) * inner);
                             VarT<T>::accumulate(*an, g);
                         });
}

// Zero-pad / crop on the spatial dims of an NCHW tensor.
template <class T>
VarT<T> pad2d(const VarT<T>& a, int64_t top, int64_t bottom, int64_t left, int64_t right) {
    check_shape(a.value().rank() == 4, "pad2d rank");
    auto s = a.shape();
    std::vector<int64_t> os = {s[0], s[1], s[2] + top + bottom, s[3] + left + right};
    TensorT<T> out(os);
    for (int64_t n = 0; n < s[0]; ++n)
        for (int64_t c = 0; c < s[1]; ++c)
            for (int64_t h = 0; h < s[2]; ++h)
                std::copy_n(&a.value().at4(n, c, h, 0), s[3], &out.at4(n, c, h + top, left));
    auto an = a.node();
    return VarT<T>::make(std::move(out), {a}, [an, s, top, left](typename VarT<T>::Node& n) {
        TensorT<T> g(s);
        for (int64_t b = 0; b < s[0]; ++b)
            for (int64_t c = 0; c < s[1]; ++c)
                for (int64_t h = 0; h < s[2]; ++h)
                    std::copy_n(&n.grad.at4(b, c, h + top, left), s[3], &g.at4(b, c, h, 0));
        VarT<T>::accumulate(*an, g);
    });
}

template <class T>
VarT<T> crop2d(const VarT<T>& a, int64_t top, int64_t left, int64_t out_h, int64_t out_w) {
    check_shape(a.value().rank() == 4, "crop2d rank");
    auto s = a.shape();
    check_shape(top + out_h <= s[2] && left + out_w <= s[3], "crop2d range");
    TensorT<T> out({s[0], s[1], out_h, out_w});
    for (int64_t n = 0; n < s[0]; ++n)
        for (int64_t c = 0; c < s[1]; ++c)
            for (int64_t h = 0; h < out_h; ++h)
                std::copy_n(&a.value().at4(n, c, h + top, left), out_w, &out.at4(n, c, h, 0));
    auto an = a.node();
    return VarT<T>::make(std::move(out), {a}, [an, s, top, left, out_h, out_w](typename VarT<T>::Node& n) {
        TensorT<T> g(s);
        for (int64_t b = 0; b < s[0]; ++b)
            for (int64_t c = 0; c < s[1]; ++c)
                for (int64_t h = 0; h < out_h; ++h)
                    std::copy_n(&n.grad.at4(b, c, h, 0), out_w, &g.at4(b, c, h + top, left));
        VarT<T>::accumulate(*an, g);
    });
}

// Cyclic shift of the spatial dims (positive = towards larger indices).
template <class T>
VarT<T> roll2d(const VarT<T>& a, int64_t dy, int64_t dx) {
    check_shape(a.value().rank() == 4, "roll2d rank");
    auto s = a.shape();
    const int64_t H = s[2], W = s[3];
    auto wrap = [](int64_t v, int64_t m) { return ((v % m) + m) % m; };
    TensorT<T> out(s);
    for (int64_t n = 0; n < s[0]; ++n)
        for (int64_t c = 0; c < s[1]; ++c)
            for (int64_t h = 0; h < H; ++h) {
                int64_t sh = wrap(h - dy, H);
                for (int64_t w = 0; w < W; ++w) out.at4(n, c, h, w) = a.value().at4(n, c, sh, wrap(w - dx, W));
            }
    auto an = a.node();
    return VarT<T>::make(std::move(out), {a}, [an, s, dy, dx, wrap](typename VarT<T>::Node& n) {
        TensorT<T> g(s);
        const int64_t H = s[2], W = s[3];
        for (int64_t b = 0; b < s[0]; ++b)
            for (int64_t c = 0; c < s[1]; ++c)
                for (int64_t h = 0; h < H; ++h) {
                    int64_t sh = wrap(h - dy, H);
                    for (int64_t w = 0; w < W; ++w) g.at4(b, c, sh, wrap(w - dx, W)) += n.grad.at4(b, c, h, w);
                }
        VarT<T>::accumulate(*an, g);
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class T>
VarT<T> sum_all(const VarT<T>& a) {
    T s = 0;
    for (int64_t i = 0; i < a.numel(); ++i) s += a.value()[i];
    TensorT<T> out({1});
    out[0] = s;
    auto an = a.node();
    return VarT<T>::make(std::move(out), {a}, [an](typename VarT<T>::Node& n) {
        TensorT<T> g(an->value.shape, n.grad[0]);
        VarT<T>::accumulate(*an, g);
    });
}

template <class T>
VarT<T> mean_all(const VarT<T>& a) {
    return scale(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

// Sum over all dims except dim 0; result shape (N).
template <class T>
VarT<T> sum_per_row(const VarT<T>& a) {
    const int64_t N = a.shape()[0];
    const int64_t inner = a.numel() / N;
    TensorT<T> out({N});
    for (int64_t n = 0; n < N; ++n) {
        T s = 0;
        for (int64_t i = 0; i < inner; ++i) s += a.value()[n * inner + i];
        out[n] = s;
    }
    auto an = a.node();
    return VarT<T>::make(std::move(out), {a}, [an, N, inner](typename VarT<T>::Node& n) {
        TensorT<T> g(an->value.shape);
        for (int64_t b = 0; b < N; ++b)
            for (int64_t i = 0; i < inner; ++i) g[b * inner + i] = n.grad[b];
        VarT<T>::accumulate(*an, g);
    });
}

// ---------------------------------------------------------------------------
// pooling over spatial or channel axes (NCHW)
// ---------------------------------------------------------------------------

template <class T>
VarT<T> global_avg_pool(const VarT<T>& a) {
    auto s = a.shape();
    const int64_t HW = s[2] * s[3];
    TensorT<T> out({s[0], s[1], 1, 1});
    for (int64_t n = 0; n < s[0]; ++n)
        for (int64_t c = 0; c < s[1]; ++c) {
            T acc = 0;
            for (int64_t i = 0; i < HW; ++i) acc += a.value().data[static_cast<size_t>((n * s[1] + c) * HW + i)];
            out.at4(n, c, 0, 0) = acc / static_cast<T>(HW);
        }
    auto an = a.node();
    return VarT<T>::make(std::move(out), {a}, [an, s, HW](typename VarT<T>::Node& n) {
        TensorT<T> g(s);
        for (int64_t b = 0; b < s[0]; ++b)
            for (int64_t c = 0; c < s[1]; ++c) {
                T gv = n.grad.at4(b, c, 0, 0) / static_cast<T>(HW);
                for (int64_t i = 0; i < HW; ++i) g.data[static_cast<size_t>((b * s[1] + c) * HW + i)] = gv;
            }
        VarT<T>::accumulate(*an, g);
    });
}

template <class T>
VarT<T> global_max_pool(const VarT<T>& a) {
    auto s = a.shape();
    const int64_t HW = s[2] * s[3];
    TensorT<T> out({s[0], s[1], 1, 1});
    std::vector<int64_t> arg(static_cast<size_t>(s[0] * s[1]));
    for (int64_t n = 0; n < s[0]; ++n)
        for (int64_t c = 0; c < s[1]; ++c) {
            const T* p = a.value().data.data() + (n * s[1] + c) * HW;
            int64_t best = 0;
            for (int64_t i = 1; i < HW; ++i)
                if (p[i] > p[best]) best = i;
            arg[static_cast<size_t>(n * s[1] + c)] = best;
            out.at4(n, c, 0, 0) = p[best];
        }
    auto an = a.node();
    return VarT<T>::make(std::move(out), {a}, [an, s, HW, arg](typename VarT<T>::Node& n) {
        TensorT<T> g(s);
        for (int64_t b = 0; b < s[0]; ++b)
            for (int64_t c = 0; c < s[1]; ++c)
                g.data[static_cast<size_t>((b * s[1] + c) * HW + arg[static_cast<size_t>(b * s[1] + c)])] =
                    n.grad.at4(b, c, 0, 0);
        VarT<T>::accumulate(*an, g);
    });
}

template <class T>
VarT<T> channel_mean(const VarT<T>& a) {
    auto s = a.shape();
    TensorT<T> out({s[0], 1, s[2], s[3]});
    for (int64_t n = 0; n < s[0]; ++n)
        for (int64_t h = 0; h < s[2]; ++h)
            for (int64_t w = 0; w < s[3]; ++w) {
                T acc = 0;
                for (int64_t c = 0; c < s[1]; ++c) acc += a.value().at4(n, c, h, w);
                out.at4(n, 0, h, w) = acc / static_cast<T>(s[1]);
            }
    auto an = a.node();
    return VarT<T>::make(std::move(out), {a}, [an, s](typename VarT<T>::Node& n) {
        TensorT<T> g(s);
        for (int64_t b = 0; b < s[0]; ++b)
            for (int64_t h = 0; h < s[2]; ++h)
                for (int64_t w = 0; w < s[3]; ++w) {
                    T gv = n.grad.at4(b, 0, h, w) / static_cast<T>(s[1]);
                    for (int64_t c = 0; c < s[1]; ++c) g.at4(b, c, h, w) = gv;
                }
        VarT<T>::accumulate(*an, g);
    });
}

template <class T>
VarT<T> channel_max(const VarT<T>& a) {
    auto s = a.shape();
    TensorT<T> out({s[0], 1, s[2], s[3]});
    std::vector<int64_t> arg(static_cast<size_t>(s[0] * s[2] * s[3]));
    for (int64_t n = 0; n < s[0]; ++n)
        for (int64_t h = 0; h < s[2]; ++h)
            for (int64_t w = 0; w < s[3]; ++w) {
                int64_t best = 0;
                for (int64_t c = 1; c < s[1]; ++c)
                    if (a.value().at4(n, c, h, w) > a.value().at4(n, best, h, w)) best = c;
                arg[static_cast<size_t>((n * s[2] + h) * s[3] + w)] = best;
                out.at4(n, 0, h, w) = a.value().at4(n, best, h, w);
            }
    auto an = a.node();
    return VarT<T>::make(std::move(out), {a}, [an, s, arg](typename VarT<T>::Node& n) {
        TensorT<T> g(s);
        for (int64_t b = 0; b < s[0]; ++b)
            for (int64_t h = 0; h < s[2]; ++h)
                for (int64_t w = 0; w < s[3]; ++w)
                    g.at4(b, arg[static_cast<size_t>((b * s[2] + h) * s[3] + w)], h, w) = n.grad.at4(b, 0, h, w);
        VarT<T>::accumulate(*an, g);
    });
}

// 2x2 stride-2 max pooling; spatial dims must be even.
template <class T>
VarT<T> maxpool2x2(const VarT<T>& a) {
    auto s = a.shape();
    check_shape(s[2] % 2 == 0 && s[3] % 2 == 0, "maxpool2x2 requires even dims");
    const int64_t OH = s[2] / 2, OW = s[3] / 2;
    TensorT<T> out({s[0], s[1], OH, OW});
    std::vector<int64_t> arg(static_cast<size_t>(out.numel()));
    int64_t k = 0;
    for (int64_t n = 0; n < s[0]; ++n)
        for (int64_t c = 0; c < s[1]; ++c)
            for (int64_t oh = 0; oh < OH; ++oh)
                for (int64_t ow = 0; ow < OW; ++ow, ++k) {
                    int64_t bh = 2 * oh, bw = 2 * ow, best_h = bh, best_w = bw;
                    T best = a.value().at4(n, c, bh, bw);
                    for (int64_t dh = 0; dh < 2; ++dh)
                        for (int64_t dw = 0; dw < 2; ++dw) {
                            T v = a.value().at4(n, c, bh + dh, bw + dw);
                            if (v > best) {
                                best = v;
                                best_h = bh + dh;
                                best_w = bw + dw;
                            }
                        }
                    out.at4(n, c, oh, ow) = best;
                    arg[static_cast<size_t>(k)] = (n * s[1] + c) * s[2] * s[3] + best_h * s[3] + best_w;
                }
    auto an = a.node();
    return VarT<T>::make(std::move(out), {a}, [an, s, arg](typename VarT<T>::Node& n) {
        TensorT<T> g(s);
        for (int64_t i = 0; i < n.grad.numel(); ++i) g[arg[static_cast<size_t>(i)]] += n.grad[i];
        VarT<T>::accumulate(*an, g);
    });
}

// ---------------------------------------------------------------------------
// bilinear resize (align_corners = false)
// ---------------------------------------------------------------------------

template <class T>
VarT<T> upsample_bilinear(const VarT<T>& a, int64_t out_h, int64_t out_w) {
    auto s = a.shape();
    const int64_t IH = s[2], IW = s[3];
    struct Tap {
        int64_t i0, i1;
        T w0, w1;
    };
    auto taps = [](int64_t out_n, int64_t in_n) {
        std::vector<Tap> t(static_cast<size_t>(out_n));
        const double sc = static_cast<double>(in_n) / static_cast<double>(out_n);
        for (int64_t o = 0; o < out_n; ++o) {
            double src = (static_cast<double>(o) + 0.5) * sc - 0.5;
            src = std::max(0.0, src);
            int64_t i0 = static_cast<int64_t>(src);
            i0 = std::min(i0, in_n - 1);
            int64_t i1 = std::min(i0 + 1, in_n - 1);
            T w1 = static_cast<T>(src - static_cast<double>(i0));
            if (i1 == i0) w1 = T(0);
            t[static_cast<size_t>(o)] = {i0, i1, T(1) - w1, w1};
        }
        return t;
    };
    auto th = taps(out_h, IH), tw = taps(out_w, IW);
    TensorT<T> out({s[0], s[1], out_h, out_w});
    for (int64_t n = 0; n < s[0]; ++n)
        for (int64_t c = 0; c < s[1]; ++c)
            for (int64_t oh = 0; oh < out_h; ++oh) {
                const Tap& ph = th[static_cast<size_t>(oh)];
                for (int64_t ow = 0; ow < out_w; ++ow) {
                    const Tap& pw = tw[static_cast<size_t>(ow)];
                    out.at4(n, c, oh, ow) = ph.w0 * (pw.w0 * a.value().at4(n, c, ph.i0, pw.i0) +
                                                     pw.w1 * a.value().at4(n, c, ph.i0, pw.i1)) +
                                            ph.w1 * (pw.w0 * a.value().at4(n, c, ph.i1, pw.i0) +
                                                     pw.w1 * a.value().at4(n, c, ph.i1, pw.i1));
                }
            }
    auto an = a.node();
    return VarT<T>::make(std::move(out), {a}, [an, s, th, tw, out_h, out_w](typename VarT<T>::Node& n) {
        TensorT<T> g(s);
        for (int64_t b = 0; b < s[0]; ++b)
            for (int64_t c = 0; c < s[1]; ++c)
                for (int64_t oh = 0; oh < out_h; ++oh) {
                    const auto& ph = th[static_cast<size_t>(oh)];
                    for (int64_t ow = 0; ow < out_w; ++ow) {
                        const auto& pw = tw[static_cast<size_t>(ow)];
                        T gv = n.grad.at4(b, c, oh, ow);
                        g.at4(b, c, ph.i0, pw.i0) += ph.w0 * pw.w0 * gv;
                        g.at4(b, c, ph.i0, pw.i1) += ph.w0 * pw.w1 * gv;
                        g.at4(b, c, ph.i1, pw.i0) += ph.w1 * pw.w0 * gv;
                        g.at4(b, c, ph.i1, pw.i1) += ph.w1 * pw.w1 * gv;
                    }
                }
        VarT<T>::accumulate(*an, g);
    });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

// (M,K) x (K,N)
template <class T>
VarT<T> matmul(const VarT<T>& a, const VarT<T>& b) {
    check_shape(a.value().rank() == 2 && b.value().rank() == 2 && a.shape()[1] == b.shape()[0], "matmul");
    const int64_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
    TensorT<T> out({M, N});
    detail::gemm(M, N, K, a.value().data.data(), b.value().data.data(), out.data.data(), false);
    auto an = a.node(), bn = b.node();
    return VarT<T>::make(std::move(out), {a, b}, [an, bn, M, N, K](typename VarT<T>::Node& n) {
        if (an->requires_grad) {
            TensorT<T> g({M, K});
            detail::gemm_tb(M, K, N, n.grad.data.data(), bn->value.data.data(), g.data.data(), false);
            VarT<T>::accumulate(*an, g);
        }
        if (bn->requires_grad) {
            TensorT<T> g({K, N});
            detail::gemm_ta(K, N, M, an->value.data.data(), n.grad.data.data(), g.data.data(), false);
            VarT<T>::accumulate(*bn, g);
        }
    });
}

// Batched (B,M,K) x (B,K,N)
template <class T>
VarT<T> bmm(const VarT<T>& a, const VarT<T>& b) {
    check_shape(a.value().rank() == 3 && b.value().rank() == 3 && a.shape()[0] == b.shape()[0] &&
                    a.shape()[2] == b.shape()[1],
                "bmm");
    const int64_t B = a.shape()[0], M = a.shape()[1], K = a.shape()[2], N = b.shape()[2];
    TensorT<T> out({B, M, N});
    for (int64_t i = 0; i < B; ++i)
        detail::gemm(M, N, K, a.value().data.data() + i * M * K, b.value().data.data() + i * K * N,
                     out.data.data() + i * M * N, false);
    auto an = a.node(), bn = b.node();
    return VarT<T>::make(std::move(out), {a, b}, [an, bn, B, M, N, K](typename VarT<T>::Node& n) {
        if (an->requires_grad) {
            TensorT<T> g({B, M, K});
            for (int64_t i = 0; i < B; ++i)
                detail::gemm_tb(M, K, N, n.grad.data.data() + i * M * N, bn->value.data.data() + i * K * N,
                                g.data.data() + i * M * K, false);
            VarT<T>::accumulate(*an, g);
        }
        if (bn->requires_grad) {
            TensorT<T> g({B, K, N});
            for (int64_t i = 0; i < B; ++i)
                detail::gemm_ta(K, N, M, an->value.data.data() + i * M * K, n.grad.data.data() + i * M * N,
                                g.data.data() + i * K * N, false);
            VarT<T>::accumulate(*bn, g);
        }
    });
}

// x (..., Cin) * w (Cin, Cout) + b (Cout)
template <class T>
VarT<T> linear(const VarT<T>& x, const VarT<T>& w, const VarT<T>& b) {
    const int64_t Cin = w.shape()[0], Cout = w.shape()[1];
    check_shape(x.shape().back() == Cin, "linear in-features");
    const int64_t rows = x.numel() / Cin;
    TensorT<T> out;
    out.shape = x.shape();
    out.shape.back() = Cout;
    out.data.assign(static_cast<size_t>(rows * Cout), T(0));
    detail::gemm(rows, Cout, Cin, x.value().data.data(), w.value().data.data(), out.data.data(), false);
    if (b.defined())
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < Cout; ++c) out[r * Cout + c] += b.value()[c];
    auto xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
    std::vector<VarT<T>> parents = b.defined() ? std::vector<VarT<T>>{x, w, b} : std::vector<VarT<T>>{x, w};
    return VarT<T>::make(std::move(out), parents, [xn, wn, bn, rows, Cin, Cout](typename VarT<T>::Node& n) {
        if (xn->requires_grad) {
            TensorT<T> g;
            g.shape = xn->value.shape;
            g.data.assign(static_cast<size_t>(rows * Cin), T(0));
            detail::gemm_tb(rows, Cin, Cout, n.grad.data.data(), wn->value.data.data(), g.data.data(), false);
            VarT<T>::accumulate(*xn, g);
        }
        if (wn->requires_grad) {
            TensorT<T> g({Cin, Cout});
            detail::gemm_ta(Cin, Cout, rows, xn->value.data.data(), n.grad.data.data(), g.data.data(), false);
            VarT<T>::accumulate(*wn, g);
        }
        if (bn && bn->requires_grad) {
            TensorT<T> g({Cout});
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < Cout; ++c) g[c] += n.grad[r * Cout + c];
            VarT<T>::accumulate(*bn, g);
        }
    });
}

// ---------------------------------------------------------------------------
// softmax / layer norm over the last axis
// ---------------------------------------------------------------------------

template <class T>
VarT<T> softmax_lastdim(const VarT<T>& a) {
    const int64_t L = a.shape().back();
    const int64_t rows = a.numel() / L;
    TensorT<T> out;
    out.shape = a.shape();
    out.data.resize(a.value().data.size());
    for (int64_t r = 0; r < rows; ++r) {
        const T* in = a.value().data.data() + r * L;
        T* o = out.data.data() + r * L;
        T mx = in[0];
        for (int64_t i = 1; i < L; ++i) mx = std::max(mx, in[i]);
        T sum = 0;
        for (int64_t i = 0; i < L; ++i) {
            o[i] = std::exp(in[i] - mx);
            sum += o[i];
        }
        for (int64_t i = 0; i < L; ++i) o[i] /= sum;
    }
    TensorT<T> y = out;
    auto an = a.node();
    return VarT<T>::make(std::move(out), {a}, [an, y, rows, L](typename VarT<T>::Node& n) {
        TensorT<T> g(an->value.shape);
        for (int64_t r = 0; r < rows; ++r) {
            const T* yv = y.data.data() + r * L;
            const T* gv = n.grad.data.data() + r * L;
            T dot = 0;
            for (int64_t i = 0; i < L; ++i) dot += yv[i] * gv[i];
            T* o = g.data.data() + r * L;
            for (int64_t i = 0; i < L; ++i) o[i] = yv[i] * (gv[i] - dot);
        }
        VarT<T>::accumulate(*an, g);
    });
}

template <class T>
VarT<T> layernorm_lastdim(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta, T eps = T(1e-5)) {
    const int64_t L = x.shape().back();
    check_shape(gamma.numel() == L && beta.numel() == L, "layernorm affine size");
    const int64_t rows = x.numel() / L;
    TensorT<T> out;
    out.shape = x.shape();
    out.data.resize(x.value().data.size());
    TensorT<T> xhat;
    xhat.shape = x.shape();
    xhat.data.resize(x.value().data.size());
    std::vector<T> rstd(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const T* in = x.value().data.data() + r * L;
        T mean = 0;
        for (int64_t i = 0; i < L; ++i) mean += in[i];
        mean /= static_cast<T>(L);
        T var = 0;
        for (int64_t i = 0; i < L; ++i) var += (in[i] - mean) * (in[i] - mean);
        var /= static_cast<T>(L);
        T rs = T(1) / std::sqrt(var + eps);
        rstd[static_cast<size_t>(r)] = rs;
        for (int64_t i = 0; i < L; ++i) {
            T xh = (in[i] - mean) * rs;
            xhat.data[static_cast<size_t>(r * L + i)] = xh;
            out.data[static_cast<size_t>(r * L + i)] = xh * gamma.value()[i] + beta.value()[i];
        }
    }
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    return VarT<T>::make(std::move(out), {x, gamma, beta},
                         [xn, gn, bn, xhat, rstd, rows, L](typename VarT<T>::Node& n) {
                             if (xn->requires_grad) {
                                 TensorT<T> g(xn->value.shape);
                                 for (int64_t r = 0; r < rows; ++r) {
                                     const T* gv = n.grad.data.data() + r * L;
                                     const T* xh = xhat.data.data() + r * L;
                                     T sum_dy = 0, sum_dy_xh = 0;
                                     for (int64_t i = 0; i < L; ++i) {
                                         T dy = gv[i] * gn->value[i];
                                         sum_dy += dy;
                                         sum_dy_xh += dy * xh[i];
                                     }
                                     T* o = g.data.data() + r * L;
                                     const T rs = rstd[static_cast<size_t>(r)];
                                     for (int64_t i = 0; i < L; ++i) {
                                         T dy = gv[i] * gn->value[i];
                                         o[i] = rs * (dy - sum_dy / static_cast<T>(L) -
                                                      xh[i] * sum_dy_xh / static_cast<T>(L));
                                     }
                                 }
                                 VarT<T>::accumulate(*xn, g);
                             }
                             if (gn->requires_grad) {
                                 TensorT<T> g({L});
                                 for (int64_t r = 0; r < rows; ++r)
                                     for (int64_t i = 0; i < L; ++i)
                                         g[i] += n.grad[r * L + i] * xhat.data[static_cast<size_t>(r * L + i)];
                                 VarT<T>::accumulate(*gn, g);
                             }
                             if (bn->requires_grad) {
                                 TensorT<T> g({L});
                                 for (int64_t r = 0; r < rows; ++r)
                                     for (int64_t i = 0; i < L; ++i) g[i] += n.grad[r * L + i];
                                 VarT<T>::accumulate(*bn, g);
                             }
                         });
}

// ---------------------------------------------------------------------------
// convolution (im2col + GEMM)
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void im2col(const TensorT<T>& x, int64_t n, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
            int64_t dilation, int64_t OH, int64_t OW, T* col) {
    const int64_t C = x.shape[1], H = x.shape[2], W = x.shape[3];
    // col layout: (C*kh*kw, OH*OW)
    int64_t row = 0;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < kh; ++i)
            for (int64_t j = 0; j < kw; ++j, ++row) {
                T* dst = col + row * OH * OW;
                for (int64_t oh = 0; oh < OH; ++oh) {
                    int64_t ih = oh * stride - pad + i * dilation;
                    if (ih < 0 || ih >= H) {
                        std::fill_n(dst + oh * OW, OW, T(0));
                        continue;
                    }
                    const T* src = &x.at4(n, c, ih, 0);
                    for (int64_t ow = 0; ow < OW; ++ow) {
                        int64_t iw = ow * stride - pad + j * dilation;
                        dst[oh * OW + ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
                    }
                }
            }
}

template <class T>
void col2im_add(TensorT<T>& gx, int64_t n, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                int64_t dilation, int64_t OH, int64_t OW, const T* col) {
    const int64_t C = gx.shape[1], H = gx.shape[2], W = gx.shape[3];
    int64_t row = 0;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < kh; ++i)
            for (int64_t j = 0; j < kw; ++j, ++row) {
                const T* src = col + row * OH * OW;
                for (int64_t oh = 0; oh < OH; ++oh) {
                    int64_t ih = oh * stride - pad + i * dilation;
                    if (ih < 0 || ih >= H) continue;
                    T* dst = &gx.at4(n, c, ih, 0);
                    for (int64_t ow = 0; ow < OW; ++ow) {
                        int64_t iw = ow * stride - pad + j * dilation;
                        if (iw >= 0 && iw < W) dst[iw] += src[oh * OW + ow];
                    }
                }
            }
}

}  // namespace detail

// x (N,Cin,H,W), w (Cout,Cin,kh,kw), b (Cout) or undefined.
template <class T>
VarT<T> conv2d(const VarT<T>& x, const VarT<T>& w, const VarT<T>& b, int64_t stride = 1,
               int64_t pad = 0, int64_t dilation = 1) {
    check_shape(x.value().rank() == 4 && w.value().rank() == 4, "conv2d rank");
    auto xs = x.shape();
    auto ws = w.shape();
    check_shape(xs[1] == ws[1], "conv2d channels");
    const int64_t N = xs[0], Cout = ws[0], kh = ws[2], kw = ws[3];
    const int64_t eff_kh = (kh - 1) * dilation + 1, eff_kw = (kw - 1) * dilation + 1;
    const int64_t OH = (xs[2] + 2 * pad - eff_kh) / stride + 1;
    const int64_t OW = (xs[3] + 2 * pad - eff_kw) / stride + 1;
    check_shape(OH > 0 && OW > 0, "conv2d output size");
    const int64_t K = ws[1] * kh * kw;
    TensorT<T> out({N, Cout, OH, OW});
    std::vector<T> col(static_cast<size_t>(K * OH * OW));
    for (int64_t n = 0; n < N; ++n) {
        detail::im2col(x.value(), n, kh, kw, stride, pad, dilation, OH, OW, col.data());
        detail::gemm(Cout, OH * OW, K, w.value().data.data(), col.data(),
                     out.data.data() + n * Cout * OH * OW, false);
    }
    if (b.defined())
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < Cout; ++c) {
                T* p = out.data.data() + (n * Cout + c) * OH * OW;
                const T bias = b.value()[c];
                for (int64_t i = 0; i < OH * OW; ++i) p[i] += bias;
            }
    auto xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
    std::vector<VarT<T>> parents = b.defined() ? std::vector<VarT<T>>{x, w, b} : std::vector<VarT<T>>{x, w};
    return VarT<T>::make(
        std::move(out), parents,
        [xn, wn, bn, N, Cout, kh, kw, stride, pad, dilation, OH, OW, K](typename VarT<T>::Node& n) {
            std::vector<T> col(static_cast<size_t>(K * OH * OW));
            TensorT<T> gx, gw;
            const bool need_x = xn->requires_grad, need_w = wn->requires_grad;
            if (need_x) gx = TensorT<T>(xn->value.shape);
            if (need_w) gw = TensorT<T>(wn->value.shape);
            for (int64_t nb = 0; nb < N; ++nb) {
                const T* go = n.grad.data.data() + nb * Cout * OH * OW;
                if (need_w) {
                    detail::im2col(xn->value, nb, kh, kw, stride, pad, dilation, OH, OW, col.data());
                    detail::gemm_tb(Cout, K, OH * OW, go, col.data(), gw.data.data(), true);
                }
                if (need_x) {
                    detail::gemm_ta(K, OH * OW, Cout, wn->value.data.data(), go, col.data(), false);
                    detail::col2im_add(gx, nb, kh, kw, stride, pad, dilation, OH, OW, col.data());
                }
            }
            if (need_x) VarT<T>::accumulate(*xn, gx);
            if (need_w) VarT<T>::accumulate(*wn, gw);
            if (bn && bn->requires_grad) {
                TensorT<T> gb({Cout});
                for (int64_t nb = 0; nb < N; ++nb)
                    for (int64_t c = 0; c < Cout; ++c) {
                        const T* p = n.grad.data.data() + (nb * Cout + c) * OH * OW;
                        T acc = 0;
                        for (int64_t i = 0; i < OH * OW; ++i) acc += p[i];
                        gb[c] += acc;
                    }
                VarT<T>::accumulate(*bn, gb);
            }
        });
}

// ---------------------------------------------------------------------------
// batch normalization (NCHW)
// ---------------------------------------------------------------------------

// In training mode normalizes with batch statistics and updates running
// stats in place (unbiased variance, torch convention). In eval mode uses
// the running statistics.
template <class T>
VarT<T> batchnorm2d(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta,
                    TensorT<T>& running_mean, TensorT<T>& running_var, bool training,
                    T momentum = T(0.1), T eps = T(1e-5)) {
    auto s = x.shape();
    const int64_t N = s[0], C = s[1], HW = s[2] * s[3];
    const int64_t cnt = N * HW;
    check_shape(gamma.numel() == C && beta.numel() == C, "batchnorm affine size");
    std::vector<T> mean(static_cast<size_t>(C)), var(static_cast<size_t>(C));
    if (training) {
        for (int64_t c = 0; c < C; ++c) {
            T m = 0;
            for (int64_t n = 0; n < N; ++n) {
                const T* p = x.value().data.data() + (n * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) m += p[i];
            }
            m /= static_cast<T>(cnt);
            T v = 0;
            for (int64_t n = 0; n < N; ++n) {
                const T* p = x.value().data.data() + (n * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) v += (p[i] - m) * (p[i] - m);
            }
            v /= static_cast<T>(cnt);
            mean[static_cast<size_t>(c)] = m;
            var[static_cast<size_t>(c)] = v;
            T unbiased = cnt > 1 ? v * static_cast<T>(cnt) / static_cast<T>(cnt - 1) : v;
            running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * m;
            running_var[c] = (T(1) - momentum) * running_var[c] + momentum * unbiased;
        }
    } else {
        for (int64_t c = 0; c < C; ++c) {
            mean[static_cast<size_t>(c)] = running_mean[c];
            var[static_cast<size_t>(c)] = running_var[c];
        }
    }
    TensorT<T> out(s);
    TensorT<T> xhat(s);
    std::vector<T> rstd(static_cast<size_t>(C));
    for (int64_t c = 0; c < C; ++c)
        rstd[static_cast<size_t>(c)] = T(1) / std::sqrt(var[static_cast<size_t>(c)] + eps);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const T* p = x.value().data.data() + (n * C + c) * HW;
            T* xo = xhat.data.data() + (n * C + c) * HW;
            T* o = out.data.data() + (n * C + c) * HW;
            const T m = mean[static_cast<size_t>(c)], rs = rstd[static_cast<size_t>(c)];
            const T g = gamma.value()[c], bb = beta.value()[c];
            for (int64_t i = 0; i < HW; ++i) {
                xo[i] = (p[i] - m) * rs;
                o[i] = xo[i] * g + bb;
            }
        }
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    return VarT<T>::make(
        std::move(out), {x, gamma, beta},
        [xn, gn, bn, xhat, rstd, N, C, HW, cnt, training](typename VarT<T>::Node& n) {
            if (xn->requires_grad) {
                TensorT<T> g(xn->value.shape);
                for (int64_t c = 0; c < C; ++c) {
                    T sum_dy = 0, sum_dy_xh = 0;
                    for (int64_t b = 0; b < N; ++b) {
                        const T* gv = n.grad.data.data() + (b * C + c) * HW;
                        const T* xh = xhat.data.data() + (b * C + c) * HW;
                        for (int64_t i = 0; i < HW; ++i) {
                            sum_dy += gv[i];
                            sum_dy_xh += gv[i] * xh[i];
                        }
                    }
                    const T gam = gn->value[c], rs = rstd[static_cast<size_t>(c)];
                    for (int64_t b = 0; b < N; ++b) {
                        const T* gv = n.grad.data.data() + (b * C + c) * HW;
                        const T* xh = xhat.data.data() + (b * C + c) * HW;
                        T* o = g.data.data() + (b * C + c) * HW;
                        for (int64_t i = 0; i < HW; ++i) {
                            if (training)
                                o[i] = gam * rs *
                                       (gv[i] - sum_dy / static_cast<T>(cnt) -
                                        xh[i] * sum_dy_xh / static_cast<T>(cnt));
                            else
                                o[i] = gam * rs * gv[i];
                        }
                    }
                }
                VarT<T>::accumulate(*xn, g);
            }
            if (gn->requires_grad) {
                TensorT<T> g({C});
                for (int64_t b = 0; b < N; ++b)
                    for (int64_t c = 0; c < C; ++c) {
                        const T* gv = n.grad.data.data() + (b * C + c) * HW;
                        const T* xh = xhat.data.data() + (b * C + c) * HW;
                        T acc = 0;
                        for (int64_t i = 0; i < HW; ++i) acc += gv[i] * xh[i];
                        g[c] += acc;
                    }
                VarT<T>::accumulate(*gn, g);
            }
            if (bn->requires_grad) {
                TensorT<T> g({C});
                for (int64_t b = 0; b < N; ++b)
                    for (int64_t c = 0; c < C; ++c) {
                        const T* gv = n.grad.data.data() + (b * C + c) * HW;
                        T acc = 0;
                        for (int64_t i = 0; i < HW; ++i) acc += gv[i];
                        g[c] += acc;
                    }
                VarT<T>::accumulate(*bn, g);
            }
        });
}

template <class T>
VarT<T> constant(TensorT<T> t) {
    return VarT<T>(std::move(t), false);
}

}  // namespace ag
}  // namespace mcnet
