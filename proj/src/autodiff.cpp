#include "ssnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "kernels.hpp"
#include "ssnet/error.hpp"

namespace ssnet {

namespace {

bool g_deterministic = true;

[[noreturn]] void shape_error(OpKind kind, const std::string& detail)
{
    throw Error(ErrorCode::shape_mismatch, std::string(op_name(kind)) + ": " + detail);
}

Var make_node(OpKind kind, Tensor value, std::vector<Var> parents, BackwardFn backward)
{
    if (!value.all_finite())
        throw Error(ErrorCode::non_finite_value, std::string(op_name(kind)) + " produced a non-finite value");
    auto node = std::make_shared<Node>();
    node->kind = kind;
    node->value = std::move(value);
    node->requires_grad = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p.requires_grad(); });
    if (node->requires_grad) {
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node());
        node->backward = std::move(backward);
    }
    return Var(std::move(node));
}

void require_operands(OpKind kind, std::span<const Var> ops, std::size_t lo, std::size_t hi)
{
    if (ops.size() < lo || ops.size() > hi) shape_error(kind, "wrong operand count " + std::to_string(ops.size()));
    for (const auto& op : ops)
        if (!op.defined()) shape_error(kind, "undefined operand");
}

std::size_t resolve_axis(OpKind kind, const PrimitiveAttrs& attrs, std::size_t rank)
{
    if (!attrs.axis) shape_error(kind, "axis attribute required");
    if (*attrs.axis >= rank) shape_error(kind, "axis " + std::to_string(*attrs.axis) + " out of range");
    return *attrs.axis;
}

// Splits a shape around an axis into (outer, extent, inner) strides.
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis)
{
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis)
{
    Shape out = shape;
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    return out;
}

// ---------------------------------------------------------------- elementwise

enum class Broadcast { none, a_scalar, b_scalar };

Broadcast binary_broadcast(OpKind kind, const Tensor& a, const Tensor& b)
{
    if (a.shape() == b.shape()) return Broadcast::none;
    if (a.size() == 1) return Broadcast::a_scalar;
    if (b.size() == 1) return Broadcast::b_scalar;
    shape_error(kind, shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

// Accumulates a per-element gradient contribution into a parent, summing when
// the parent was broadcast from a scalar.
template <class F>
void accumulate(Tensor* dst, bool scalar_parent, std::size_t n, F&& contribution)
{
    if (!dst) return;
    if (scalar_parent) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += contribution(i);
        (*dst)[0] += static_cast<float>(s);
    } else {
        for (std::size_t i = 0; i < n; ++i) (*dst)[i] += static_cast<float>(contribution(i));
    }
}

Var binary(OpKind kind, std::span<const Var> ops)
{
    require_operands(kind, ops, 2, 2);
    const Var a = ops[0], b = ops[1];
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Broadcast bc = binary_broadcast(kind, av, bv);
    const Shape& out_shape = bc == Broadcast::a_scalar ? bv.shape() : av.shape();
    const std::size_t n = shape_numel(out_shape);
    auto at = [bc](const Tensor& t, bool is_a, std::size_t i) {
        if ((is_a && bc == Broadcast::a_scalar) || (!is_a && bc == Broadcast::b_scalar)) return static_cast<double>(t[0]);
        return static_cast<double>(t[i]);
    };
    Tensor out(out_shape);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = at(av, true, i), y = at(bv, false, i);
        double r = 0.0;
        switch (kind) {
        case OpKind::add: r = x + y; break;
        case OpKind::sub: r = x - y; break;
        case OpKind::mul: r = x * y; break;
        case OpKind::div: r = x / y; break;
        default: break;
        }
        out[i] = static_cast<float>(r);
    }
    auto backward = [kind, a, b, bc, n, at](const Tensor& g, std::span<Tensor* const> pg) {
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        const bool a_sc = bc == Broadcast::a_scalar, b_sc = bc == Broadcast::b_scalar;
        switch (kind) {
        case OpKind::add:
            accumulate(pg[0], a_sc, n, [&](std::size_t i) { return static_cast<double>(g[i]); });
            accumulate(pg[1], b_sc, n, [&](std::size_t i) { return static_cast<double>(g[i]); });
            break;
        case OpKind::sub:
            accumulate(pg[0], a_sc, n, [&](std::size_t i) { return static_cast<double>(g[i]); });
            accumulate(pg[1], b_sc, n, [&](std::size_t i) { return -static_cast<double>(g[i]); });
            break;
        case OpKind::mul:
            accumulate(pg[0], a_sc, n, [&](std::size_t i) { return g[i] * at(bv, false, i); });
            accumulate(pg[1], b_sc, n, [&](std::size_t i) { return g[i] * at(av, true, i); });
            break;
        case OpKind::div:
            accumulate(pg[0], a_sc, n, [&](std::size_t i) { return g[i] / at(bv, false, i); });
            accumulate(pg[1], b_sc, n, [&](std::size_t i) {
                const double y = at(bv, false, i);
                return -g[i] * at(av, true, i) / (y * y);
            });
            break;
        default: break;
        }
    };
    return make_node(kind, std::move(out), {a, b}, std::move(backward));
}

double sigmoid_of(double x)
{
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Var unary(OpKind kind, std::span<const Var> ops, const PrimitiveAttrs& attrs)
{
    require_operands(kind, ops, 1, 1);
    const Var x = ops[0];
    const Tensor& xv = x.value();
    const float slope = attrs.slope;
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double v = xv[i];
        double r = 0.0;
        switch (kind) {
        case OpKind::leaky_relu: r = v > 0.0 ? v : slope * v; break;
        case OpKind::sigmoid: r = sigmoid_of(v); break;
        case OpKind::softplus: r = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); break;
        case OpKind::log: r = std::log(v); break;
        default: break;
        }
        out[i] = static_cast<float>(r);
    }
    auto backward = [kind, x, slope](const Tensor& g, std::span<Tensor* const> pg) {
        if (!pg[0]) return;
        const Tensor& xv = x.value();
        Tensor& dx = *pg[0];
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const double v = xv[i];
            double d = 0.0;
            switch (kind) {
            case OpKind::leaky_relu: d = v > 0.0 ? 1.0 : slope; break;
            case OpKind::sigmoid: {
                const double s = sigmoid_of(v);
                d = s * (1.0 - s);
                break;
            }
            case OpKind::softplus: d = sigmoid_of(v); break;
            case OpKind::log: d = 1.0 / v; break;
            default: break;
            }
            dx[i] += static_cast<float>(g[i] * d);
        }
    };
    return make_node(kind, std::move(out), {x}, std::move(backward));
}

// ------------------------------------------------------------------ softmax

Var softmax_op(std::span<const Var> ops, const PrimitiveAttrs& attrs)
{
    constexpr auto kind = OpKind::softmax;
    require_operands(kind, ops, 1, 1);
    const Var x = ops[0];
    const Tensor& xv = x.value();
    const std::size_t axis = resolve_axis(kind, attrs, xv.rank());
    const AxisSplit s = split_axis(xv.shape(), axis);
    Tensor out(xv.shape());
    std::vector<double> e(s.extent);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.extent * s.inner + in;
            double mx = xv[base];
            for (std::size_t k = 1; k < s.extent; ++k) mx = std::max(mx, static_cast<double>(xv[base + k * s.inner]));
            double total = 0.0;
            for (std::size_t k = 0; k < s.extent; ++k) {
                e[k] = std::exp(static_cast<double>(xv[base + k * s.inner]) - mx);
                total += e[k];
            }
            for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] = static_cast<float>(e[k] / total);
        }
    }
    // The backward pass needs the output values; keep a copy in the closure.
    auto y = std::make_shared<Tensor>(out);
    auto backward = [y, s](const Tensor& g, std::span<Tensor* const> pg) {
        if (!pg[0]) return;
        Tensor& dx = *pg[0];
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t base = o * s.extent * s.inner + in;
                double dot = 0.0;
                for (std::size_t k = 0; k < s.extent; ++k) {
                    const std::size_t i = base + k * s.inner;
                    dot += static_cast<double>(g[i]) * (*y)[i];
                }
                for (std::size_t k = 0; k < s.extent; ++k) {
                    const std::size_t i = base + k * s.inner;
                    dx[i] += static_cast<float>((*y)[i] * (g[i] - dot));
                }
            }
        }
    };
    return make_node(kind, std::move(out), {x}, std::move(backward));
}

// --------------------------------------------------------------- reductions

Var reduce_op(OpKind kind, std::span<const Var> ops, const PrimitiveAttrs& attrs)
{
    require_operands(kind, ops, 1, 1);
    const Var x = ops[0];
    const Tensor& xv = x.value();
    if (xv.size() == 0) shape_error(kind, "empty operand");
    AxisSplit s;
    Shape out_shape;
    if (attrs.axis) {
        const std::size_t axis = resolve_axis(kind, attrs, xv.rank());
        s = split_axis(xv.shape(), axis);
        out_shape = drop_axis(xv.shape(), axis);
    } else {
        s.extent = xv.size();
    }
    Tensor out(out_shape);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.extent * s.inner + in;
            double acc = 0.0;
            for (std::size_t k = 0; k < s.extent; ++k) {
                const double v = xv[base + k * s.inner];
                acc += kind == OpKind::l2_norm ? v * v : v;
            }
            if (kind == OpKind::mean) acc /= static_cast<double>(s.extent);
            if (kind == OpKind::l2_norm) acc = std::sqrt(acc);
            out[o * s.inner + in] = static_cast<float>(acc);
        }
    }
    auto y = std::make_shared<Tensor>(out);
    auto backward = [kind, x, s, y](const Tensor& g, std::span<Tensor* const> pg) {
        if (!pg[0]) return;
        const Tensor& xv = x.value();
        Tensor& dx = *pg[0];
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t r = o * s.inner + in;
                const std::size_t base = o * s.extent * s.inner + in;
                const double gr = g[r];
                for (std::size_t k = 0; k < s.extent; ++k) {
                    const std::size_t i = base + k * s.inner;
                    double d = gr;
                    if (kind == OpKind::mean) d /= static_cast<double>(s.extent);
                    if (kind == OpKind::l2_norm) {
                        const double norm = (*y)[r];
                        d = norm > 0.0 ? gr * xv[i] / norm : 0.0;
                    }
                    dx[i] += static_cast<float>(d);
                }
            }
        }
    };
    return make_node(kind, std::move(out), {x}, std::move(backward));
}

// ------------------------------------------------------------------- matmul

struct MatView {
    std::size_t rows, cols; // logical (after optional transpose)
};

Var matmul_op(std::span<const Var> ops, const PrimitiveAttrs& attrs)
{
    constexpr auto kind = OpKind::matmul;
    require_operands(kind, ops, 2, 2);
    const Var a = ops[0], b = ops[1];
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2) shape_error(kind, "operands must be rank 2");
    const bool ta = attrs.transpose_a, tb = attrs.transpose_b;
    const MatView va{ta ? av.dim(1) : av.dim(0), ta ? av.dim(0) : av.dim(1)};
    const MatView vb{tb ? bv.dim(1) : bv.dim(0), tb ? bv.dim(0) : bv.dim(1)};
    if (va.cols != vb.rows)
        shape_error(kind, shape_string(av.shape()) + " x " + shape_string(bv.shape()) + (ta ? " (A^T)" : "") +
                              (tb ? " (B^T)" : ""));
    const std::size_t m = va.rows, k = va.cols, n = vb.cols;

    auto logical = [](const Tensor& t, bool trans) {
        if (!trans) return std::vector<float>(t.data().begin(), t.data().end());
        return kernels::transpose(t.raw(), t.dim(0), t.dim(1));
    };
    const auto opa = logical(av, ta);
    const auto opb = logical(bv, tb);
    std::vector<double> acc(m * n, 0.0);
    kernels::gemm_nn(opa.data(), opb.data(), acc.data(), m, k, n);
    Tensor out(Shape{m, n}, kernels::to_float(acc));

    auto backward = [a, b, ta, tb, m, k, n](const Tensor& g, std::span<Tensor* const> pg) {
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        if (pg[0]) {
            // d(opA) = G * opB^T, shape [m, k]
            const auto opb_t = tb ? std::vector<float>(bv.data().begin(), bv.data().end())
                                  : kernels::transpose(bv.raw(), bv.dim(0), bv.dim(1));
            std::vector<double> d(m * k, 0.0);
            kernels::gemm_nn(g.raw(), opb_t.data(), d.data(), m, n, k);
            Tensor& da = *pg[0];
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < k; ++j) {
                    const std::size_t dst = ta ? j * m + i : i * k + j;
                    da[dst] += static_cast<float>(d[i * k + j]);
                }
        }
        if (pg[1]) {
            // d(opB) = opA^T * G, shape [k, n]; A stored as [k, m] when transposed.
            const auto a_km = ta ? std::vector<float>(av.data().begin(), av.data().end())
                                 : kernels::transpose(av.raw(), av.dim(0), av.dim(1));
            std::vector<double> d(k * n, 0.0);
            kernels::gemm_nn(a_km.data(), g.raw(), d.data(), k, m, n);
            Tensor& db = *pg[1];
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t dst = tb ? j * k + i : i * n + j;
                    db[dst] += static_cast<float>(d[i * n + j]);
                }
        }
    };
    return make_node(kind, std::move(out), {a, b}, std::move(backward));
}

// ------------------------------------------------------------------- conv2d

Var conv2d_op(std::span<const Var> ops, const PrimitiveAttrs& attrs)
{
    constexpr auto kind = OpKind::conv2d;
    require_operands(kind, ops, 2, 3);
    const Var x = ops[0], w = ops[1];
    const Var bias = ops.size() == 3 ? ops[2] : Var{};
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.rank() != 4 || wv.rank() != 4) shape_error(kind, "input and weight must be rank 4");
    if (xv.dim(1) != wv.dim(1))
        shape_error(kind, "input channels " + std::to_string(xv.dim(1)) + " vs weight " + shape_string(wv.shape()));
    if (attrs.stride == 0) shape_error(kind, "stride must be positive");
    kernels::ConvGeometry geo{};
    geo.batch = xv.dim(0);
    geo.in_ch = xv.dim(1);
    geo.height = xv.dim(2);
    geo.width = xv.dim(3);
    geo.out_ch = wv.dim(0);
    geo.kh = wv.dim(2);
    geo.kw = wv.dim(3);
    geo.stride = attrs.stride;
    geo.padding = attrs.padding;
    if (geo.height + 2 * geo.padding < geo.kh || geo.width + 2 * geo.padding < geo.kw)
        shape_error(kind, "kernel larger than padded input");
    geo.out_h = (geo.height + 2 * geo.padding - geo.kh) / geo.stride + 1;
    geo.out_w = (geo.width + 2 * geo.padding - geo.kw) / geo.stride + 1;
    if (bias.defined() && (bias.value().rank() != 1 || bias.value().dim(0) != geo.out_ch))
        shape_error(kind, "bias shape " + shape_string(bias.value().shape()));

    const std::size_t patch = geo.patch();
    const std::size_t pix = geo.pixels();
    const std::size_t in_plane = geo.in_ch * geo.height * geo.width;
    // Column buffers [patch, pixels] per sample, kept for the weight gradient.
    auto cols = std::make_shared<std::vector<std::vector<float>>>(geo.batch);
    Tensor out(Shape{geo.batch, geo.out_ch, geo.out_h, geo.out_w});
    std::vector<double> acc(geo.out_ch * pix);
    for (std::size_t b = 0; b < geo.batch; ++b) {
        (*cols)[b] = kernels::im2col(xv.raw() + b * in_plane, geo);
        for (std::size_t c = 0; c < geo.out_ch; ++c)
            std::fill_n(acc.begin() + static_cast<std::ptrdiff_t>(c * pix), pix,
                        bias.defined() ? static_cast<double>(bias.value()[c]) : 0.0);
        kernels::gemm_nn(wv.raw(), (*cols)[b].data(), acc.data(), geo.out_ch, patch, pix);
        float* dst = out.raw() + b * geo.out_ch * pix;
        for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<float>(acc[i]);
    }

    auto backward = [cols, w, geo](const Tensor& g, std::span<Tensor* const> pg) {
        const std::size_t pix = geo.pixels();
        const std::size_t patch = geo.patch();
        const std::size_t in_plane = geo.in_ch * geo.height * geo.width;
        if (pg[1]) {
            // dW^T[patch, out] = col[patch, pix] * g_b^T[pix, out]
            std::vector<double> dwt(patch * geo.out_ch, 0.0);
            for (std::size_t b = 0; b < geo.batch; ++b) {
                const auto gt = kernels::transpose(g.raw() + b * geo.out_ch * pix, geo.out_ch, pix);
                kernels::gemm_nn((*cols)[b].data(), gt.data(), dwt.data(), patch, pix, geo.out_ch);
            }
            Tensor& dw = *pg[1];
            for (std::size_t c = 0; c < geo.out_ch; ++c)
                for (std::size_t q = 0; q < patch; ++q) dw[c * patch + q] += static_cast<float>(dwt[q * geo.out_ch + c]);
        }
        if (pg.size() == 3 && pg[2]) {
            Tensor& db = *pg[2];
            for (std::size_t c = 0; c < geo.out_ch; ++c) {
                double s = 0.0;
                for (std::size_t b = 0; b < geo.batch; ++b) {
                    const float* gp = g.raw() + (b * geo.out_ch + c) * pix;
                    for (std::size_t p = 0; p < pix; ++p) s += gp[p];
                }
                db[c] += static_cast<float>(s);
            }
        }
        if (pg[0]) {
            // dcol[patch, pix] = W^T[patch, out] * g_b[out, pix]
            const auto w_t = kernels::transpose(w.value().raw(), geo.out_ch, patch);
            std::vector<double> dcol(patch * pix);
            for (std::size_t b = 0; b < geo.batch; ++b) {
                std::fill(dcol.begin(), dcol.end(), 0.0);
                kernels::gemm_nn(w_t.data(), g.raw() + b * geo.out_ch * pix, dcol.data(), patch, geo.out_ch, pix);
                kernels::col2im(dcol.data(), pg[0]->raw() + b * in_plane, geo);
            }
        }
    };
    std::vector<Var> parents{x, w};
    if (bias.defined()) parents.push_back(bias);
    return make_node(kind, std::move(out), std::move(parents), std::move(backward));
}

// ------------------------------------------------------------- data movement

Var concat_op(std::span<const Var> ops, const PrimitiveAttrs& attrs)
{
    constexpr auto kind = OpKind::concat;
    if (ops.empty()) shape_error(kind, "no operands");
    require_operands(kind, ops, 1, ops.size());
    const Shape& first = ops[0].shape();
    const std::size_t axis = resolve_axis(kind, attrs, first.size());
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& op : ops) {
        const Shape& s = op.shape();
        if (s.size() != first.size()) shape_error(kind, "rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != first[i]) shape_error(kind, shape_string(s) + " vs " + shape_string(first));
        out_shape[axis] += s[axis];
    }
    const AxisSplit so = split_axis(out_shape, axis);
    Tensor out(out_shape);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& op : ops) {
        offsets.push_back(off);
        const Tensor& v = op.value();
        const std::size_t ext = v.dim(axis);
        for (std::size_t o = 0; o < so.outer; ++o)
            std::copy_n(v.raw() + o * ext * so.inner, ext * so.inner, out.raw() + (o * so.extent + off) * so.inner);
        off += ext;
    }
    std::vector<Var> parents(ops.begin(), ops.end());
    auto backward = [parents, offsets, so, axis](const Tensor& g, std::span<Tensor* const> pg) {
        for (std::size_t p = 0; p < parents.size(); ++p) {
            if (!pg[p]) continue;
            const std::size_t ext = parents[p].shape()[axis];
            Tensor& d = *pg[p];
            for (std::size_t o = 0; o < so.outer; ++o) {
                const float* src = g.raw() + (o * so.extent + offsets[p]) * so.inner;
                float* dst = d.raw() + o * ext * so.inner;
                for (std::size_t i = 0; i < ext * so.inner; ++i) dst[i] += src[i];
            }
        }
    };
    return make_node(kind, std::move(out), std::move(parents), std::move(backward));
}

Var slice_op(std::span<const Var> ops, const PrimitiveAttrs& attrs)
{
    constexpr auto kind = OpKind::slice;
    require_operands(kind, ops, 1, 1);
    const Var x = ops[0];
    const Tensor& xv = x.value();
    const std::size_t axis = resolve_axis(kind, attrs, xv.rank());
    if (attrs.begin >= attrs.end || attrs.end > xv.dim(axis))
        shape_error(kind, "range [" + std::to_string(attrs.begin) + "," + std::to_string(attrs.end) + ") on " +
                              shape_string(xv.shape()));
    const AxisSplit s = split_axis(xv.shape(), axis);
    Shape out_shape = xv.shape();
    const std::size_t ext = attrs.end - attrs.begin;
    out_shape[axis] = ext;
    Tensor out(out_shape);
    for (std::size_t o = 0; o < s.outer; ++o)
        std::copy_n(xv.raw() + (o * s.extent + attrs.begin) * s.inner, ext * s.inner, out.raw() + o * ext * s.inner);
    const std::size_t begin = attrs.begin;
    auto backward = [s, begin, ext](const Tensor& g, std::span<Tensor* const> pg) {
        if (!pg[0]) return;
        for (std::size_t o = 0; o < s.outer; ++o) {
            float* dst = pg[0]->raw() + (o * s.extent + begin) * s.inner;
            const float* src = g.raw() + o * ext * s.inner;
            for (std::size_t i = 0; i < ext * s.inner; ++i) dst[i] += src[i];
        }
    };
    return make_node(kind, std::move(out), {x}, std::move(backward));
}

Var reshape_op(std::span<const Var> ops, const PrimitiveAttrs& attrs)
{
    constexpr auto kind = OpKind::reshape;
    require_operands(kind, ops, 1, 1);
    const Var x = ops[0];
    if (shape_numel(attrs.shape) != x.size())
        shape_error(kind, shape_string(x.shape()) + " to " + shape_string(attrs.shape));
    auto backward = [](const Tensor& g, std::span<Tensor* const> pg) {
        if (!pg[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
    };
    return make_node(kind, x.value().reshaped(attrs.shape), {x}, std::move(backward));
}

Var transpose_op(std::span<const Var> ops)
{
    constexpr auto kind = OpKind::transpose;
    require_operands(kind, ops, 1, 1);
    const Var x = ops[0];
    const Tensor& xv = x.value();
    if (xv.rank() != 2) shape_error(kind, "operand must be rank 2");
    const std::size_t r = xv.dim(0), c = xv.dim(1);
    Tensor out(Shape{c, r}, kernels::transpose(xv.raw(), r, c));
    auto backward = [r, c](const Tensor& g, std::span<Tensor* const> pg) {
        if (!pg[0]) return;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) (*pg[0])[i * c + j] += g[j * r + i];
    };
    return make_node(kind, std::move(out), {x}, std::move(backward));
}

Var gather_rows_op(std::span<const Var> ops, const PrimitiveAttrs& attrs)
{
    constexpr auto kind = OpKind::gather_rows;
    require_operands(kind, ops, 1, 1);
    const Var x = ops[0];
    const Tensor& xv = x.value();
    if (xv.rank() != 2) shape_error(kind, "operand must be rank 2");
    const std::size_t cols = xv.dim(1);
    for (auto idx : attrs.indices)
        if (idx >= xv.dim(0)) shape_error(kind, "row index " + std::to_string(idx) + " out of range");
    if (attrs.indices.empty()) shape_error(kind, "empty index list");
    Tensor out(Shape{attrs.indices.size(), cols});
    for (std::size_t r = 0; r < attrs.indices.size(); ++r)
        std::copy_n(xv.raw() + attrs.indices[r] * cols, cols, out.raw() + r * cols);
    auto indices = attrs.indices;
    auto backward = [indices, cols](const Tensor& g, std::span<Tensor* const> pg) {
        if (!pg[0]) return;
        for (std::size_t r = 0; r < indices.size(); ++r)
            for (std::size_t j = 0; j < cols; ++j) (*pg[0])[indices[r] * cols + j] += g[r * cols + j];
    };
    return make_node(kind, std::move(out), {x}, std::move(backward));
}

Var add_bias_op(std::span<const Var> ops, const PrimitiveAttrs& attrs)
{
    constexpr auto kind = OpKind::add_bias;
    require_operands(kind, ops, 2, 2);
    const Var x = ops[0], b = ops[1];
    const Tensor& xv = x.value();
    const std::size_t axis = resolve_axis(kind, attrs, xv.rank());
    if (b.value().rank() != 1 || b.value().dim(0) != xv.dim(axis))
        shape_error(kind, "bias " + shape_string(b.shape()) + " for axis " + std::to_string(axis) + " of " +
                              shape_string(xv.shape()));
    const AxisSplit s = split_axis(xv.shape(), axis);
    Tensor out(xv.shape());
    const Tensor& bv = b.value();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t k = 0; k < s.extent; ++k)
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t i = (o * s.extent + k) * s.inner + in;
                out[i] = static_cast<float>(static_cast<double>(xv[i]) + bv[k]);
            }
    auto backward = [s](const Tensor& g, std::span<Tensor* const> pg) {
        if (pg[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
        if (pg[1]) {
            for (std::size_t k = 0; k < s.extent; ++k) {
                double acc = 0.0;
                for (std::size_t o = 0; o < s.outer; ++o)
                    for (std::size_t in = 0; in < s.inner; ++in) acc += g[(o * s.extent + k) * s.inner + in];
                (*pg[1])[k] += static_cast<float>(acc);
            }
        }
    };
    return make_node(kind, std::move(out), {x, b}, std::move(backward));
}

void require_nchw(OpKind kind, const Tensor& t)
{
    if (t.rank() != 4) shape_error(kind, "expected [B,C,H,W], got " + shape_string(t.shape()));
}

Var avg_pool2_op(std::span<const Var> ops)
{
    constexpr auto kind = OpKind::avg_pool2;
    require_operands(kind, ops, 1, 1);
    const Var x = ops[0];
    const Tensor& xv = x.value();
    require_nchw(kind, xv);
    const std::size_t planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (h % 2 || w % 2) throw Error(ErrorCode::indivisible_spatial_dims, "avg_pool2 on " + shape_string(xv.shape()));
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor out(Shape{xv.dim(0), xv.dim(1), oh, ow});
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) {
                const float* src = xv.raw() + p * h * w;
                const double s = static_cast<double>(src[2 * y * w + 2 * xx]) + src[2 * y * w + 2 * xx + 1] +
                                 src[(2 * y + 1) * w + 2 * xx] + src[(2 * y + 1) * w + 2 * xx + 1];
                out[(p * oh + y) * ow + xx] = static_cast<float>(0.25 * s);
            }
    auto backward = [planes, h, w, oh, ow](const Tensor& g, std::span<Tensor* const> pg) {
        if (!pg[0]) return;
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx)
                    (*pg[0])[(p * h + y) * w + xx] += 0.25f * g[(p * oh + y / 2) * ow + xx / 2];
    };
    return make_node(kind, std::move(out), {x}, std::move(backward));
}

Var upsample2_op(std::span<const Var> ops)
{
    constexpr auto kind = OpKind::upsample2;
    require_operands(kind, ops, 1, 1);
    const Var x = ops[0];
    const Tensor& xv = x.value();
    require_nchw(kind, xv);
    const std::size_t planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const std::size_t oh = 2 * h, ow = 2 * w;
    Tensor out(Shape{xv.dim(0), xv.dim(1), oh, ow});
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) out[(p * oh + y) * ow + xx] = xv[(p * h + y / 2) * w + xx / 2];
    auto backward = [planes, h, w, oh, ow](const Tensor& g, std::span<Tensor* const> pg) {
        if (!pg[0]) return;
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx) {
                    const std::size_t o = (p * oh + 2 * y) * ow + 2 * xx;
                    const double s = static_cast<double>(g[o]) + g[o + 1] + g[o + ow] + g[o + ow + 1];
                    (*pg[0])[(p * h + y) * w + xx] += static_cast<float>(s);
                }
    };
    return make_node(kind, std::move(out), {x}, std::move(backward));
}

Var to_rows_op(std::span<const Var> ops)
{
    constexpr auto kind = OpKind::to_rows;
    require_operands(kind, ops, 1, 1);
    const Var x = ops[0];
    const Tensor& xv = x.value();
    require_nchw(kind, xv);
    const std::size_t bn = xv.dim(0), ch = xv.dim(1), pix = xv.dim(2) * xv.dim(3);
    Tensor out(Shape{bn * pix, ch});
    for (std::size_t b = 0; b < bn; ++b)
        for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t p = 0; p < pix; ++p) out[(b * pix + p) * ch + c] = xv[(b * ch + c) * pix + p];
    auto backward = [bn, ch, pix](const Tensor& g, std::span<Tensor* const> pg) {
        if (!pg[0]) return;
        for (std::size_t b = 0; b < bn; ++b)
            for (std::size_t c = 0; c < ch; ++c)
                for (std::size_t p = 0; p < pix; ++p) (*pg[0])[(b * ch + c) * pix + p] += g[(b * pix + p) * ch + c];
    };
    return make_node(kind, std::move(out), {x}, std::move(backward));
}

} // namespace

std::string_view op_name(OpKind kind)
{
    switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::stop_gradient: return "stop_gradient";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::matmul: return "matmul";
    case OpKind::conv2d: return "conv2d";
    case OpKind::leaky_relu: return "leaky_relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::softplus: return "softplus";
    case OpKind::softmax: return "softmax";
    case OpKind::log: return "log";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::l2_norm: return "l2_norm";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::reshape: return "reshape";
    case OpKind::transpose: return "transpose";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::add_bias: return "add_bias";
    case OpKind::avg_pool2: return "avg_pool2";
    case OpKind::upsample2: return "upsample2";
    case OpKind::to_rows: return "to_rows";
    }
    return "unknown";
}

const Tensor& Var::value() const
{
    if (!node_) throw Error(ErrorCode::invalid_argument, "undefined Var");
    return node_->value;
}

Tensor& Var::mutable_value()
{
    if (!node_) throw Error(ErrorCode::invalid_argument, "undefined Var");
    return node_->value;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

OpKind Var::kind() const { return node_ ? node_->kind : OpKind::constant; }

Var parameter(Tensor value)
{
    if (!value.all_finite()) throw Error(ErrorCode::non_finite_value, "parameter holds a non-finite value");
    auto node = std::make_shared<Node>();
    node->kind = OpKind::leaf;
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
}

Var constant(Tensor value)
{
    if (!value.all_finite()) throw Error(ErrorCode::non_finite_value, "constant holds a non-finite value");
    auto node = std::make_shared<Node>();
    node->kind = OpKind::constant;
    node->value = std::move(value);
    return Var(std::move(node));
}

Var stop_gradient(const Var& v)
{
    auto node = std::make_shared<Node>();
    node->kind = OpKind::stop_gradient;
    node->value = v.value();
    return Var(std::move(node));
}

Var apply_primitive(OpKind kind, std::span<const Var> operands, const PrimitiveAttrs& attrs)
{
    switch (kind) {
    case OpKind::add:
    case OpKind::sub:
    case OpKind::mul:
    case OpKind::div: return binary(kind, operands);
    case OpKind::leaky_relu:
    case OpKind::sigmoid:
    case OpKind::softplus:
    case OpKind::log: return unary(kind, operands, attrs);
    case OpKind::softmax: return softmax_op(operands, attrs);
    case OpKind::sum:
    case OpKind::mean:
    case OpKind::l2_norm: return reduce_op(kind, operands, attrs);
    case OpKind::matmul: return matmul_op(operands, attrs);
    case OpKind::conv2d: return conv2d_op(operands, attrs);
    case OpKind::concat: return concat_op(operands, attrs);
    case OpKind::slice: return slice_op(operands, attrs);
    case OpKind::reshape: return reshape_op(operands, attrs);
    case OpKind::transpose: return transpose_op(operands);
    case OpKind::gather_rows: return gather_rows_op(operands, attrs);
    case OpKind::add_bias: return add_bias_op(operands, attrs);
    case OpKind::avg_pool2: return avg_pool2_op(operands);
    case OpKind::upsample2: return upsample2_op(operands);
    case OpKind::to_rows: return to_rows_op(operands);
    case OpKind::stop_gradient:
        require_operands(kind, operands, 1, 1);
        return stop_gradient(operands[0]);
    case OpKind::leaf:
    case OpKind::constant: break;
    }
    throw Error(ErrorCode::invalid_argument, std::string(op_name(kind)) + " is not an applicable primitive");
}

namespace {
template <class... Vs>
Var apply(OpKind kind, const PrimitiveAttrs& attrs, const Vs&... vs)
{
    const Var ops[] = {vs...};
    return apply_primitive(kind, ops, attrs);
}
PrimitiveAttrs with_axis(std::size_t axis)
{
    PrimitiveAttrs a;
    a.axis = axis;
    return a;
}
} // namespace

Var add(const Var& a, const Var& b) { return apply(OpKind::add, {}, a, b); }
Var sub(const Var& a, const Var& b) { return apply(OpKind::sub, {}, a, b); }
Var mul(const Var& a, const Var& b) { return apply(OpKind::mul, {}, a, b); }
Var div(const Var& a, const Var& b) { return apply(OpKind::div, {}, a, b); }
Var scale(const Var& a, float factor) { return mul(a, constant(Tensor::scalar(factor))); }

Var matmul(const Var& a, const Var& b, bool transpose_a, bool transpose_b)
{
    PrimitiveAttrs attrs;
    attrs.transpose_a = transpose_a;
    attrs.transpose_b = transpose_b;
    return apply(OpKind::matmul, attrs, a, b);
}

Var conv2d(const Var& x, const Var& w, const Var& bias, std::size_t stride, std::size_t padding)
{
    PrimitiveAttrs attrs;
    attrs.stride = stride;
    attrs.padding = padding;
    return apply(OpKind::conv2d, attrs, x, w, bias);
}

Var conv2d(const Var& x, const Var& w, std::size_t stride, std::size_t padding)
{
    PrimitiveAttrs attrs;
    attrs.stride = stride;
    attrs.padding = padding;
    return apply(OpKind::conv2d, attrs, x, w);
}

Var leaky_relu(const Var& x, float slope)
{
    PrimitiveAttrs attrs;
    attrs.slope = slope;
    return apply(OpKind::leaky_relu, attrs, x);
}

Var sigmoid(const Var& x) { return apply(OpKind::sigmoid, {}, x); }
Var softplus(const Var& x) { return apply(OpKind::softplus, {}, x); }
Var softmax(const Var& x, std::size_t axis) { return apply(OpKind::softmax, with_axis(axis), x); }
Var log(const Var& x) { return apply(OpKind::log, {}, x); }
Var sum(const Var& x) { return apply(OpKind::sum, {}, x); }
Var sum(const Var& x, std::size_t axis) { return apply(OpKind::sum, with_axis(axis), x); }
Var mean(const Var& x) { return apply(OpKind::mean, {}, x); }
Var l2_norm(const Var& x) { return apply(OpKind::l2_norm, {}, x); }
Var l2_norm(const Var& x, std::size_t axis) { return apply(OpKind::l2_norm, with_axis(axis), x); }
Var concat(std::span<const Var> parts, std::size_t axis) { return apply_primitive(OpKind::concat, parts, with_axis(axis)); }

Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end)
{
    PrimitiveAttrs attrs = with_axis(axis);
    attrs.begin = begin;
    attrs.end = end;
    return apply(OpKind::slice, attrs, x);
}

Var reshape(const Var& x, Shape shape)
{
    PrimitiveAttrs attrs;
    attrs.shape = std::move(shape);
    return apply(OpKind::reshape, attrs, x);
}

Var transpose(const Var& x) { return apply(OpKind::transpose, {}, x); }

Var gather_rows(const Var& x, std::vector<std::size_t> indices)
{
    PrimitiveAttrs attrs;
    attrs.indices = std::move(indices);
    return apply(OpKind::gather_rows, attrs, x);
}

Var add_bias(const Var& x, const Var& bias, std::size_t axis) { return apply(OpKind::add_bias, with_axis(axis), x, bias); }
Var avg_pool2(const Var& x) { return apply(OpKind::avg_pool2, {}, x); }
Var upsample2(const Var& x) { return apply(OpKind::upsample2, {}, x); }
Var to_rows(const Var& x) { return apply(OpKind::to_rows, {}, x); }

std::vector<Gradient> gradients(const Var& loss, std::span<const Var> wrt)
{
    if (!loss.defined() || loss.size() != 1)
        throw Error(ErrorCode::not_scalar_loss,
                    "loss has shape " + (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));

    // Iterative post-order DFS yields a topological order of nodes that
    // require gradients; walking it backwards visits each node once.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    if (loss.requires_grad()) {
        std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
        seen.insert(loss.node().get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Node* parent = node->parents[next++].get();
                if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    // Keep only nodes with a path to some wrt node; parents come first in order.
    std::unordered_set<Node*> targets;
    for (const auto& t : wrt) targets.insert(t.node().get());
    std::unordered_set<Node*> relevant;
    for (Node* n : order) {
        bool keep = targets.count(n) > 0;
        for (const auto& p : n->parents) keep = keep || relevant.count(p.get()) > 0;
        if (keep) relevant.insert(n);
    }
    std::erase_if(order, [&](Node* n) { return relevant.count(n) == 0; });

    std::unordered_map<Node*, Tensor> grads;
    grads.reserve(order.size());
    for (Node* n : order) grads.emplace(n, Tensor(n->value.shape()));
    if (!order.empty()) grads.at(loss.node().get())[0] = 1.0f;

    std::vector<Tensor*> parent_grads;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (!node->backward) continue;
        parent_grads.clear();
        for (const auto& p : node->parents) {
            auto found = grads.find(p.get());
            parent_grads.push_back(found == grads.end() ? nullptr : &found->second);
        }
        node->backward(grads.at(node), parent_grads);
    }

    std::vector<Gradient> out;
    out.reserve(wrt.size());
    for (const auto& t : wrt) {
        auto found = grads.find(t.node().get());
        if (found == grads.end())
            out.push_back({Tensor(t.shape()), true});
        else
            out.push_back({found->second, false});
    }
    for (const auto& g : out) {
        if (g.value.all_finite()) continue;
        // Name the node closest to the loss whose gradient went non-finite.
        std::string where;
        for (auto it = order.rbegin(); it != order.rend() && where.empty(); ++it)
            if (!grads.at(*it).all_finite()) where = std::string(op_name((*it)->kind));
        throw Error(ErrorCode::non_finite_value, "backward produced a non-finite gradient at " + where);
    }
    return out;
}

void set_deterministic(bool on) { g_deterministic = on; }
bool deterministic() { return g_deterministic; }

} // namespace ssnet
