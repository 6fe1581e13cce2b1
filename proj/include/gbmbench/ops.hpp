// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gbmbench/autograd.hpp"
#include "gbmbench/prof.hpp"
#include "gbmbench/tensor.hpp"

namespace gbmbench::ops {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

namespace detail {

inline std::vector<int64_t> strides_of(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

/// Trailing-aligned broadcast of two shapes; strides are per output dim,
/// zero where the operand is broadcast.
struct BroadcastPlan {
    Shape out;
    std::vector<int64_t> sa, sb;
};

inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b) {
    const size_t rank = std::max(a.size(), b.size());
    BroadcastPlan p;
    p.out.resize(rank);
    Shape pa(rank, 1), pb(rank, 1);
    std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));
    for (size_t i = 0; i < rank; ++i) {
        if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1)
            throw Error("broadcast: incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
        p.out[i] = std::max(pa[i], pb[i]);
    }
    auto sa = strides_of(pa), sb = strides_of(pb);
    p.sa.resize(rank);
    p.sb.resize(rank);
    for (size_t i = 0; i < rank; ++i) {
        p.sa[i] = (pa[i] == 1 && p.out[i] != 1) ? 0 : sa[i];
        p.sb[i] = (pb[i] == 1 && p.out[i] != 1) ? 0 : sb[i];
    }
    return p;
}

/// Odometer loop over `shape`, calling f(offA, offB) with operand offsets.
template <class F>
inline void broadcast_loop(const Shape& shape, const std::vector<int64_t>& sa,
                           const std::vector<int64_t>& sb, F&& f) {
    const int rank = static_cast<int>(shape.size());
    if (rank == 0) {
        f(0, 0);
        return;
    }
    std::vector<int64_t> idx(rank, 0);
    int64_t offA = 0, offB = 0;
    for (;;) {
        f(offA, offB);
        int d = rank - 1;
        for (; d >= 0; --d) {
            idx[d]++;
            offA += sa[d];
            offB += sb[d];
            if (idx[d] < shape[d]) break;
            offA -= sa[d] * shape[d];
            offB -= sb[d] * shape[d];
            idx[d] = 0;
        }
        if (d < 0) break;
    }
}

/// Sums `g` (shaped like the broadcast output) down to `target` shape.
inline Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
    if (g.shape() == target) return g;
    const size_t rank = g.shape().size();
    Shape pt(rank, 1);
    std::copy(target.begin(), target.end(), pt.begin() + (rank - target.size()));
    Tensor acc(pt);
    acc.fill(0.0f);
    auto st = strides_of(pt);
    std::vector<int64_t> sacc(rank);
    for (size_t i = 0; i < rank; ++i) sacc[i] = (pt[i] == 1 && g.shape()[i] != 1) ? 0 : st[i];
    auto sg = strides_of(g.shape());
    const float* gp = g.data();
    float* ap = acc.data();
    broadcast_loop(g.shape(), sg, sacc, [&](int64_t og, int64_t oa) { ap[oa] += gp[og]; });
    return acc.reshaped(target);
}

inline void split_at_axis(const Shape& s, int axis, int64_t& outer, int64_t& mid, int64_t& inner) {
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    mid = s[axis];
    for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

inline int norm_axis(int axis, size_t rank, const char* who) {
    if (axis < 0) axis += static_cast<int>(rank);
    if (axis < 0 || axis >= static_cast<int>(rank)) throw Error(std::string(who) + ": axis out of range");
    return axis;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise unary ops. MAC rule for all of them: 0.

namespace detail {

template <class FwdF, class DF>
inline Var unary(const char* name, const Var& x, FwdF fwd, DF dfn) {
    // dfn(x, y, g) -> dL/dx contribution.
    prof::record(name, x.shape(), 0.0);
    if (x.is_dry()) return Var(Tensor::dry(x.shape()));
    Tensor out(x.shape());
    const float* xp = x.val().data();
    float* op = out.data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = fwd(xp[i]);
    return make_op(std::move(out), {x}, [dfn](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        Tensor gx(xv.shape());
        const float* xp = xv.data();
        const float* yp = self.value.data();
        const float* gp = self.grad.data();
        float* gxp = gx.data();
        const int64_t n = xv.numel();
        for (int64_t i = 0; i < n; ++i) gxp[i] = dfn(xp[i], yp[i], gp[i]);
        self.parents[0]->accumulate(gx);
    });
}

}  // namespace detail

inline Var relu(const Var& x) {
    return detail::unary(
        "relu", x, [](float v) { return v > 0.0f ? v : 0.0f; },
        [](float v, float, float g) { return v > 0.0f ? g : 0.0f; });
}

inline Var sigmoid(const Var& x) {
    return detail::unary(
        "sigmoid", x, [](float v) { return 1.0f / (1.0f + std::exp(-v)); },
        [](float, float y, float g) { return g * y * (1.0f - y); });
}

inline Var tanh_(const Var& x) {
    return detail::unary(
        "tanh", x, [](float v) { return std::tanh(v); },
        [](float, float y, float g) { return g * (1.0f - y * y); });
}

inline Var gelu(const Var& x) {
    // Exact erf form.
    constexpr float inv_sqrt2 = 0.7071067811865476f;
    constexpr float inv_sqrt2pi = 0.3989422804014327f;
    return detail::unary(
        "gelu", x, [=](float v) { return 0.5f * v * (1.0f + std::erf(v * inv_sqrt2)); },
        [=](float v, float, float g) {
            const float cdf = 0.5f * (1.0f + std::erf(v * inv_sqrt2));
            const float pdf = inv_sqrt2pi * std::exp(-0.5f * v * v);
            return g * (cdf + v * pdf);
        });
}

inline Var silu(const Var& x) {
    return detail::unary(
        "silu", x,
        [](float v) { return v / (1.0f + std::exp(-v)); },
        [](float v, float, float g) {
            const float s = 1.0f / (1.0f + std::exp(-v));
            return g * (s + v * s * (1.0f - s));
        });
}

inline Var softplus(const Var& x) {
    return detail::unary(
        "softplus", x,
        [](float v) { return v > 20.0f ? v : std::log1p(std::exp(v)); },
        [](float v, float, float g) { return g / (1.0f + std::exp(-v)); });
}

inline Var exp_(const Var& x) {
    return detail::unary(
        "exp", x, [](float v) { return std::exp(v); },
        [](float, float y, float g) { return g * y; });
}

inline Var neg(const Var& x) {
    return detail::unary(
        "neg", x, [](float v) { return -v; }, [](float, float, float g) { return -g; });
}

inline Var scale(const Var& x, float c) {
    return detail::unary(
        "scale", x, [c](float v) { return c * v; }, [c](float, float, float g) { return c * g; });
}

inline Var add_scalar(const Var& x, float c) {
    return detail::unary(
        "add_scalar", x, [c](float v) { return v + c; }, [](float, float, float g) { return g; });
}

// ---------------------------------------------------------------------------
// Broadcast binary ops.

namespace detail {

enum class BinKind { Add, Sub, Mul };

inline Var binary(BinKind kind, const char* name, const Var& a, const Var& b) {
    auto plan = broadcast_plan(a.shape(), b.shape());
    prof::record(name, plan.out, 0.0);
    if (a.is_dry() || b.is_dry()) return Var(Tensor::dry(plan.out));
    Tensor out(plan.out);
    const float* ap = a.val().data();
    const float* bp = b.val().data();
    float* op = out.data();
    if (a.shape() == b.shape()) {
        const int64_t n = out.numel();
        switch (kind) {
            case BinKind::Add:
                for (int64_t i = 0; i < n; ++i) op[i] = ap[i] + bp[i];
                break;
            case BinKind::Sub:
                for (int64_t i = 0; i < n; ++i) op[i] = ap[i] - bp[i];
                break;
            case BinKind::Mul:
                for (int64_t i = 0; i < n; ++i) op[i] = ap[i] * bp[i];
                break;
        }
    } else {
        int64_t flat = 0;
        broadcast_loop(plan.out, plan.sa, plan.sb, [&](int64_t oa, int64_t ob) {
            switch (kind) {
                case BinKind::Add: op[flat] = ap[oa] + bp[ob]; break;
                case BinKind::Sub: op[flat] = ap[oa] - bp[ob]; break;
                case BinKind::Mul: op[flat] = ap[oa] * bp[ob]; break;
            }
            ++flat;
        });
    }
    return make_op(std::move(out), {a, b}, [kind, plan](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        const Tensor& g = self.grad;
        if (self.parents[0]->requires_grad) {
            Tensor ga(g.shape());
            const float* gp = g.data();
            float* gp_a = ga.data();
            const int64_t n = g.numel();
            if (kind == BinKind::Mul) {
                const float* bp = bv.data();
                if (av.shape() == bv.shape()) {
                    for (int64_t i = 0; i < n; ++i) gp_a[i] = gp[i] * bp[i];
                } else {
                    int64_t flat = 0;
                    broadcast_loop(plan.out, plan.sa, plan.sb, [&](int64_t, int64_t ob) {
                        gp_a[flat] = gp[flat] * bp[ob];
                        ++flat;
                    });
                }
            } else {
                for (int64_t i = 0; i < n; ++i) gp_a[i] = gp[i];
            }
            self.parents[0]->accumulate(reduce_to_shape(ga, av.shape()));
        }
        if (self.parents[1]->requires_grad) {
            Tensor gb(g.shape());
            const float* gp = g.data();
            float* gp_b = gb.data();
            const int64_t n = g.numel();
            if (kind == BinKind::Mul) {
                const float* ap = av.data();
                if (av.shape() == bv.shape()) {
                    for (int64_t i = 0; i < n; ++i) gp_b[i] = gp[i] * ap[i];
                } else {
                    int64_t flat = 0;
                    broadcast_loop(plan.out, plan.sa, plan.sb, [&](int64_t oa, int64_t) {
                        gp_b[flat] = gp[flat] * ap[oa];
                        ++flat;
                    });
                }
            } else if (kind == BinKind::Sub) {
                for (int64_t i = 0; i < n; ++i) gp_b[i] = -gp[i];
            } else {
                for (int64_t i = 0; i < n; ++i) gp_b[i] = gp[i];
            }
            self.parents[1]->accumulate(reduce_to_shape(gb, bv.shape()));
        }
    });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) { return detail::binary(detail::BinKind::Add, "add", a, b); }
inline Var sub(const Var& a, const Var& b) { return detail::binary(detail::BinKind::Sub, "sub", a, b); }
inline Var mul(const Var& a, const Var& b) { return detail::binary(detail::BinKind::Mul, "mul", a, b); }

// ---------------------------------------------------------------------------
// Shape ops.

inline Var reshape(const Var& x, const Shape& shape) {
    Shape resolved = shape;
    int64_t known = 1;
    int infer = -1;
    for (size_t i = 0; i < resolved.size(); ++i) {
        if (resolved[i] == -1) {
            if (infer >= 0) throw Error("reshape: more than one -1 dim");
            infer = static_cast<int>(i);
        } else {
            known *= resolved[i];
        }
    }
    if (infer >= 0) resolved[infer] = shape_numel(x.shape()) / known;
    if (shape_numel(resolved) != shape_numel(x.shape()))
        throw Error("reshape: element count mismatch " + shape_str(x.shape()) + " -> " + shape_str(shape));
    prof::record("reshape", resolved, 0.0);
    if (x.is_dry()) return Var(Tensor::dry(resolved));
    Tensor out = x.val().reshaped(resolved);
    return make_op(std::move(out), {x}, [](Node& self) {
        self.parents[0]->accumulate(self.grad.reshaped(self.parents[0]->value.shape()));
    });
}

inline Var flatten_from(const Var& x, int axis) {
    Shape s(x.shape().begin(), x.shape().begin() + axis);
    int64_t tail = 1;
    for (size_t i = axis; i < x.shape().size(); ++i) tail *= x.shape()[i];
    s.push_back(tail);
    return reshape(x, s);
}

namespace detail {

inline Tensor permute_copy(const Tensor& x, const std::vector<int>& perm) {
    const size_t rank = x.shape().size();
    Shape os(rank);
    for (size_t i = 0; i < rank; ++i) os[i] = x.shape()[perm[i]];
    Tensor out(os);
    auto in_st = strides_of(x.shape());
    std::vector<int64_t> src_stride(rank);
    for (size_t i = 0; i < rank; ++i) src_stride[i] = in_st[perm[i]];
    auto zero = std::vector<int64_t>(rank, 0);
    const float* xp = x.data();
    float* op = out.data();
    int64_t flat = 0;
    broadcast_loop(os, src_stride, zero, [&](int64_t ox, int64_t) { op[flat++] = xp[ox]; });
    return out;
}

}  // namespace detail

inline Var permute(const Var& x, const std::vector<int>& perm) {
    const size_t rank = x.shape().size();
    if (perm.size() != rank) throw Error("permute: rank mismatch");
    Shape os(rank);
    for (size_t i = 0; i < rank; ++i) os[i] = x.shape()[perm[i]];
    prof::record("permute", os, 0.0);
    if (x.is_dry()) return Var(Tensor::dry(os));
    Tensor out = detail::permute_copy(x.val(), perm);
    std::vector<int> inv(rank);
    for (size_t i = 0; i < rank; ++i) inv[perm[i]] = static_cast<int>(i);
    return make_op(std::move(out), {x}, [inv](Node& self) {
        self.parents[0]->accumulate(detail::permute_copy(self.grad, inv));
    });
}

inline Var slice(const Var& x, int axis, int64_t start, int64_t length) {
    axis = detail::norm_axis(axis, x.shape().size(), "slice");
    if (start < 0 || length < 0 || start + length > x.shape()[axis])
        throw Error("slice: range out of bounds");
    Shape os = x.shape();
    os[axis] = length;
    prof::record("slice", os, 0.0);
    if (x.is_dry()) return Var(Tensor::dry(os));
    int64_t outer, mid, inner;
    detail::split_at_axis(x.shape(), axis, outer, mid, inner);
    Tensor out(os);
    const float* xp = x.val().data();
    float* op = out.data();
    for (int64_t o = 0; o < outer; ++o)
        std::copy(xp + (o * mid + start) * inner, xp + (o * mid + start + length) * inner,
                  op + o * length * inner);
    return make_op(std::move(out), {x}, [axis, start, length](Node& self) {
        const Shape& ps = self.parents[0]->value.shape();
        int64_t outer, mid, inner;
        detail::split_at_axis(ps, axis, outer, mid, inner);
        Tensor gx(ps);
        gx.fill(0.0f);
        const float* gp = self.grad.data();
        float* gxp = gx.data();
        for (int64_t o = 0; o < outer; ++o)
            std::copy(gp + o * length * inner, gp + (o + 1) * length * inner,
                      gxp + (o * mid + start) * inner);
        self.parents[0]->accumulate(gx);
    });
}

inline Var concat(const std::vector<Var>& xs, int axis) {
    if (xs.empty()) throw Error("concat: empty input list");
    axis = detail::norm_axis(axis, xs[0].shape().size(), "concat");
    Shape os = xs[0].shape();
    int64_t total = 0;
    bool dry = false;
    for (const auto& v : xs) {
        if (v.shape().size() != os.size()) throw Error("concat: rank mismatch");
        for (size_t i = 0; i < os.size(); ++i)
            if (static_cast<int>(i) != axis && v.shape()[i] != os[i])
                throw Error("concat: shape mismatch off-axis");
        total += v.shape()[axis];
        dry = dry || v.is_dry();
    }
    os[axis] = total;
    prof::record("concat", os, 0.0);
    if (dry) return Var(Tensor::dry(os));
    int64_t outer, mid, inner;
    detail::split_at_axis(os, axis, outer, mid, inner);
    Tensor out(os);
    float* op = out.data();
    int64_t at = 0;
    std::vector<int64_t> lens;
    for (const auto& v : xs) {
        const int64_t m = v.shape()[axis];
        lens.push_back(m);
        const float* xp = v.val().data();
        for (int64_t o = 0; o < outer; ++o)
            std::copy(xp + o * m * inner, xp + (o + 1) * m * inner, op + (o * mid + at) * inner);
        at += m;
    }
    return make_op(std::move(out), xs, [axis, lens](Node& self) {
        int64_t outer, mid, inner;
        detail::split_at_axis(self.value.shape(), axis, outer, mid, inner);
        const float* gp = self.grad.data();
        int64_t at = 0;
        for (size_t k = 0; k < self.parents.size(); ++k) {
            const int64_t m = lens[k];
            if (self.parents[k]->requires_grad) {
                Tensor gx(self.parents[k]->value.shape());
                float* gxp = gx.data();
                for (int64_t o = 0; o < outer; ++o)
                    std::copy(gp + (o * mid + at) * inner, gp + (o * mid + at + m) * inner,
                              gxp + o * m * inner);
                self.parents[k]->accumulate(gx);
            }
            at += m;
        }
    });
}

inline Var repeat_axis0(const Var& x, int64_t n) {
    if (x.shape().empty() || x.shape()[0] != 1) throw Error("repeat_axis0: leading dim must be 1");
    Shape os = x.shape();
    os[0] = n;
    prof::record("repeat_axis0", os, 0.0);
    if (x.is_dry()) return Var(Tensor::dry(os));
    Tensor out(os);
    const int64_t block = x.val().numel();
    for (int64_t i = 0; i < n; ++i)
        std::copy(x.val().data(), x.val().data() + block, out.data() + i * block);
    return make_op(std::move(out), {x}, [n, block](Node& self) {
        Tensor gx(self.parents[0]->value.shape());
        gx.fill(0.0f);
        float* gxp = gx.data();
        const float* gp = self.grad.data();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < block; ++j) gxp[j] += gp[i * block + j];
        self.parents[0]->accumulate(gx);
    });
}

inline Var index_select(const Var& x, int axis, const std::vector<int64_t>& indices) {
    axis = detail::norm_axis(axis, x.shape().size(), "index_select");
    for (int64_t idx : indices)
        if (idx < 0 || idx >= x.shape()[axis]) throw Error("index_select: index out of range");
    Shape os = x.shape();
    os[axis] = static_cast<int64_t>(indices.size());
    prof::record("index_select", os, 0.0);
    if (x.is_dry()) return Var(Tensor::dry(os));
    int64_t outer, mid, inner;
    detail::split_at_axis(x.shape(), axis, outer, mid, inner);
    Tensor out(os);
    const float* xp = x.val().data();
    float* op = out.data();
    const int64_t m = static_cast<int64_t>(indices.size());
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < m; ++j)
            std::copy(xp + (o * mid + indices[j]) * inner, xp + (o * mid + indices[j] + 1) * inner,
                      op + (o * m + j) * inner);
    return make_op(std::move(out), {x}, [axis, indices](Node& self) {
        const Shape& ps = self.parents[0]->value.shape();
        int64_t outer, mid, inner;
        detail::split_at_axis(ps, axis, outer, mid, inner);
        Tensor gx(ps);
        gx.fill(0.0f);
        float* gxp = gx.data();
        const float* gp = self.grad.data();
        const int64_t m = static_cast<int64_t>(indices.size());
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t j = 0; j < m; ++j) {
                float* dst = gxp + (o * mid + indices[j]) * inner;
                const float* src = gp + (o * m + j) * inner;
                for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
            }
        self.parents[0]->accumulate(gx);
    });
}

inline Var flip(const Var& x, int axis) {
    axis = detail::norm_axis(axis, x.shape().size(), "flip");
    prof::record("flip", x.shape(), 0.0);
    if (x.is_dry()) return Var(Tensor::dry(x.shape()));
    int64_t outer, mid, inner;
    detail::split_at_axis(x.shape(), axis, outer, mid, inner);
    Tensor out(x.shape());
    const float* xp = x.val().data();
    float* op = out.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < mid; ++j)
            std::copy(xp + (o * mid + j) * inner, xp + (o * mid + j + 1) * inner,
                      op + (o * mid + (mid - 1 - j)) * inner);
    return make_op(std::move(out), {x}, [axis](Node& self) {
        const Shape& ps = self.parents[0]->value.shape();
        int64_t outer, mid, inner;
        detail::split_at_axis(ps, axis, outer, mid, inner);
        Tensor gx(ps);
        const float* gp = self.grad.data();
        float* gxp = gx.data();
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t j = 0; j < mid; ++j)
                std::copy(gp + (o * mid + j) * inner, gp + (o * mid + j + 1) * inner,
                          gxp + (o * mid + (mid - 1 - j)) * inner);
        self.parents[0]->accumulate(gx);
    });
}

inline Var roll(const Var& x, int axis, int64_t shift) {
    axis = detail::norm_axis(axis, x.shape().size(), "roll");
    const int64_t m = x.shape()[axis];
    shift = ((shift % m) + m) % m;
    prof::record("roll", x.shape(), 0.0);
    if (x.is_dry()) return Var(Tensor::dry(x.shape()));
    int64_t outer, mid, inner;
    detail::split_at_axis(x.shape(), axis, outer, mid, inner);
    Tensor out(x.shape());
    const float* xp = x.val().data();
    float* op = out.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < mid; ++j)
            std::copy(xp + (o * mid + j) * inner, xp + (o * mid + j + 1) * inner,
                      op + (o * mid + (j + shift) % mid) * inner);
    return make_op(std::move(out), {x}, [axis, shift](Node& self) {
        const Shape& ps = self.parents[0]->value.shape();
        int64_t outer, mid, inner;
        detail::split_at_axis(ps, axis, outer, mid, inner);
        Tensor gx(ps);
        const float* gp = self.grad.data();
        float* gxp = gx.data();
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t j = 0; j < mid; ++j)
                std::copy(gp + (o * mid + (j + shift) % mid) * inner,
                          gp + (o * mid + (j + shift) % mid + 1) * inner, gxp + (o * mid + j) * inner);
        self.parents[0]->accumulate(gx);
    });
}

// ---------------------------------------------------------------------------
// Reductions.

inline Var sum_axis(const Var& x, int axis, bool keepdim = false) {
    axis = detail::norm_axis(axis, x.shape().size(), "sum_axis");
    Shape os = x.shape();
    if (keepdim)
        os[axis] = 1;
    else
        os.erase(os.begin() + axis);
    prof::record("sum_axis", os, 0.0);
    if (x.is_dry()) return Var(Tensor::dry(os));
    int64_t outer, mid, inner;
    detail::split_at_axis(x.shape(), axis, outer, mid, inner);
    Tensor out(os);
    const float* xp = x.val().data();
    float* op = out.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            double acc = 0.0;
            for (int64_t j = 0; j < mid; ++j) acc += xp[(o * mid + j) * inner + i];
            op[o * inner + i] = static_cast<float>(acc);
        }
    return make_op(std::move(out), {x}, [axis](Node& self) {
        const Shape& ps = self.parents[0]->value.shape();
        int64_t outer, mid, inner;
        detail::split_at_axis(ps, axis, outer, mid, inner);
        Tensor gx(ps);
        const float* gp = self.grad.data();
        float* gxp = gx.data();
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t j = 0; j < mid; ++j)
                for (int64_t i = 0; i < inner; ++i) gxp[(o * mid + j) * inner + i] = gp[o * inner + i];
        self.parents[0]->accumulate(gx);
    });
}

inline Var mean_axis(const Var& x, int axis, bool keepdim = false) {
    const int ax = detail::norm_axis(axis, x.shape().size(), "mean_axis");
    const float inv = 1.0f / static_cast<float>(x.shape()[ax]);
    return scale(sum_axis(x, ax, keepdim), inv);
}

// ---------------------------------------------------------------------------
// Dense algebra. MAC rules: matmul m*k*n, linear rows*din*dout, bmm b*m*k*n.

inline Var matmul2d(const Var& a, const Var& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw Error("matmul2d: bad shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    prof::record("matmul", {m, n}, static_cast<double>(m) * k * n);
    if (a.is_dry() || b.is_dry()) return Var(Tensor::dry({m, n}));
    Tensor out({m, n});
    ConstMatMap A(a.val().data(), m, k), B(b.val().data(), k, n);
    MatMap O(out.data(), m, n);
    O.noalias() = A * B;
    return make_op(std::move(out), {a, b}, [m, k, n](Node& self) {
        ConstMatMap G(self.grad.data(), m, n);
        if (self.parents[0]->requires_grad) {
            ConstMatMap B(self.parents[1]->value.data(), k, n);
            Tensor ga({m, k});
            MatMap GA(ga.data(), m, k);
            GA.noalias() = G * B.transpose();
            self.parents[0]->accumulate(ga);
        }
        if (self.parents[1]->requires_grad) {
            ConstMatMap A(self.parents[0]->value.data(), m, k);
            Tensor gb({k, n});
            MatMap GB(gb.data(), k, n);
            GB.noalias() = A.transpose() * G;
            self.parents[1]->accumulate(gb);
        }
    });
}

/// x: [..., din], w: [dout, din], b: [dout] (undefined Var to skip bias).
inline Var linear(const Var& x, const Var& w, const Var& b) {
    const Shape& xs = x.shape();
    if (xs.empty() || w.shape().size() != 2 || xs.back() != w.shape()[1])
        throw Error("linear: bad shapes " + shape_str(xs) + " x " + shape_str(w.shape()));
    const int64_t din = w.shape()[1], dout = w.shape()[0];
    const int64_t rows = shape_numel(xs) / din;
    Shape os = xs;
    os.back() = dout;
    prof::record("linear", os, static_cast<double>(rows) * din * dout);
    const bool has_bias = b.defined();
    if (has_bias && (b.shape().size() != 1 || b.shape()[0] != dout)) throw Error("linear: bad bias shape");
    if (x.is_dry() || w.is_dry() || (has_bias && b.is_dry())) return Var(Tensor::dry(os));
    Tensor out(os);
    ConstMatMap X(x.val().data(), rows, din), W(w.val().data(), dout, din);
    MatMap O(out.data(), rows, dout);
    O.noalias() = X * W.transpose();
    if (has_bias) {
        const float* bp = b.val().data();
        float* op = out.data();
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < dout; ++j) op[r * dout + j] += bp[j];
    }
    std::vector<Var> parents = {x, w};
    if (has_bias) parents.push_back(b);
    return make_op(std::move(out), std::move(parents), [rows, din, dout, has_bias](Node& self) {
        ConstMatMap G(self.grad.data(), rows, dout);
        if (self.parents[0]->requires_grad) {
            ConstMatMap W(self.parents[1]->value.data(), dout, din);
            Tensor gx(self.parents[0]->value.shape());
            MatMap GX(gx.data(), rows, din);
            GX.noalias() = G * W;
            self.parents[0]->accumulate(gx);
        }
        if (self.parents[1]->requires_grad) {
            ConstMatMap X(self.parents[0]->value.data(), rows, din);
            Tensor gw({dout, din});
            MatMap GW(gw.data(), dout, din);
            GW.noalias() = G.transpose() * X;
            self.parents[1]->accumulate(gw);
        }
        if (has_bias && self.parents[2]->requires_grad) {
            Tensor gb({dout});
            const float* gp = self.grad.data();
            float* gbp = gb.data();
            for (int64_t j = 0; j < dout; ++j) {
                double acc = 0.0;
                for (int64_t r = 0; r < rows; ++r) acc += gp[r * dout + j];
                gbp[j] = static_cast<float>(acc);
            }
            self.parents[2]->accumulate(gb);
        }
    });
}

inline Var bmm(const Var& a, const Var& b) {
    if (a.shape().size() != 3 || b.shape().size() != 3 || a.shape()[0] != b.shape()[0] ||
        a.shape()[2] != b.shape()[1])
        throw Error("bmm: bad shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int64_t bs = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
    prof::record("bmm", {bs, m, n}, static_cast<double>(bs) * m * k * n);
    if (a.is_dry() || b.is_dry()) return Var(Tensor::dry({bs, m, n}));
    Tensor out({bs, m, n});
    for (int64_t i = 0; i < bs; ++i) {
        ConstMatMap A(a.val().data() + i * m * k, m, k), B(b.val().data() + i * k * n, k, n);
        MatMap O(out.data() + i * m * n, m, n);
        O.noalias() = A * B;
    }
    return make_op(std::move(out), {a, b}, [bs, m, k, n](Node& self) {
        for (int64_t i = 0; i < bs; ++i) {
            ConstMatMap G(self.grad.data() + i * m * n, m, n);
            if (self.parents[0]->requires_grad) {
                ConstMatMap B(self.parents[1]->value.data() + i * k * n, k, n);
                Tensor ga({m, k});
                MatMap GA(ga.data(), m, k);
                GA.noalias() = G * B.transpose();
                // Accumulate slice-wise: build a full-shape buffer once.
                if (!self.parents[0]->grad.defined()) {
                    self.parents[0]->grad = Tensor(self.parents[0]->value.shape());
                    self.parents[0]->grad.fill(0.0f);
                }
                float* dst = self.parents[0]->grad.data() + i * m * k;
                const float* src = ga.data();
                for (int64_t j = 0; j < m * k; ++j) dst[j] += src[j];
            }
            if (self.parents[1]->requires_grad) {
                ConstMatMap A(self.parents[0]->value.data() + i * m * k, m, k);
                Tensor gb({k, n});
                MatMap GB(gb.data(), k, n);
                GB.noalias() = A.transpose() * G;
                if (!self.parents[1]->grad.defined()) {
                    self.parents[1]->grad = Tensor(self.parents[1]->value.shape());
                    self.parents[1]->grad.fill(0.0f);
                }
                float* dst = self.parents[1]->grad.data() + i * k * n;
                const float* src = gb.data();
                for (int64_t j = 0; j < k * n; ++j) dst[j] += src[j];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Softmax family and losses.

inline Var softmax_lastdim(const Var& x) {
    prof::record("softmax", x.shape(), 0.0);
    if (x.is_dry()) return Var(Tensor::dry(x.shape()));
    const int64_t c = x.shape().back();
    const int64_t rows = x.val().numel() / c;
    Tensor out(x.shape());
    const float* xp = x.val().data();
    float* op = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const float* row = xp + r * c;
        float mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int64_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
        for (int64_t j = 0; j < c; ++j)
            op[r * c + j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / z);
    }
    return make_op(std::move(out), {x}, [c, rows](Node& self) {
        Tensor gx(self.value.shape());
        const float* yp = self.value.data();
        const float* gp = self.grad.data();
        float* gxp = gx.data();
        for (int64_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (int64_t j = 0; j < c; ++j) dot += static_cast<double>(gp[r * c + j]) * yp[r * c + j];
            for (int64_t j = 0; j < c; ++j)
                gxp[r * c + j] = yp[r * c + j] * (gp[r * c + j] - static_cast<float>(dot));
        }
        self.parents[0]->accumulate(gx);
    });
}

/// logits: [N, C]; labels: one class id per row. Mean reduction.
inline Var cross_entropy(const Var& logits, const std::vector<int64_t>& labels) {
    if (logits.shape().size() != 2) throw Error("cross_entropy: logits must be [N, C]");
    const int64_t n = logits.shape()[0], c = logits.shape()[1];
    if (static_cast<int64_t>(labels.size()) != n) throw Error("cross_entropy: label count mismatch");
    prof::record("cross_entropy", {1}, 0.0);
    if (logits.is_dry()) return Var(Tensor::dry({1}));
    for (int64_t i = 0; i < n; ++i)
        if (labels[i] < 0 || labels[i] >= c) throw Error("cross_entropy: label out of range");
    const float* xp = logits.val().data();
    Tensor probs({n, c});
    float* pp = probs.data();
    double loss = 0.0;
    for (int64_t r = 0; r < n; ++r) {
        const float* row = xp + r * c;
        float mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int64_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
        const double logz = std::log(z) + mx;
        loss += logz - row[labels[r]];
        for (int64_t j = 0; j < c; ++j)
            pp[r * c + j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / z);
    }
    Tensor out({1});
    out.data()[0] = static_cast<float>(loss / static_cast<double>(n));
    return make_op(std::move(out), {logits}, [n, c, labels, probs](Node& self) {
        Tensor gx({n, c});
        const float g0 = self.grad.data()[0] / static_cast<float>(n);
        const float* pp = probs.data();
        float* gxp = gx.data();
        for (int64_t r = 0; r < n; ++r)
            for (int64_t j = 0; j < c; ++j)
                gxp[r * c + j] = g0 * (pp[r * c + j] - (labels[r] == j ? 1.0f : 0.0f));
        self.parents[0]->accumulate(gx);
    });
}

/// Mean squared error against a constant target.
inline Var mse_loss(const Var& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) throw Error("mse_loss: shape mismatch");
    prof::record("mse_loss", {1}, 0.0);
    if (pred.is_dry()) return Var(Tensor::dry({1}));
    const int64_t n = pred.val().numel();
    const float* pp = pred.val().data();
    const float* tp = target.data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pp[i]) - tp[i];
        acc += d * d;
    }
    Tensor out({1});
    out.data()[0] = static_cast<float>(acc / static_cast<double>(n));
    return make_op(std::move(out), {pred}, [target, n](Node& self) {
        Tensor gx(self.parents[0]->value.shape());
        const float g0 = self.grad.data()[0];
        const float* pp = self.parents[0]->value.data();
        const float* tp = target.data();
        float* gxp = gx.data();
        const float k = 2.0f * g0 / static_cast<float>(n);
        for (int64_t i = 0; i < n; ++i) gxp[i] = k * (pp[i] - tp[i]);
        self.parents[0]->accumulate(gx);
    });
}

}  // namespace gbmbench::ops
