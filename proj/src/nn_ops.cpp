#include "chroma/tape.hpp"

#include <cmath>
#include <vector>

namespace chroma {

namespace {

struct ConvDims {
    int n, c, h, w;    // input
    int o, k;          // kernel (square spatial)
    int oh, ow;        // output spatial
    int stride, pad;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, int stride, int pad) {
    if (input.ndim() != 4) throw ShapeError("conv2d: input must be NCHW, got " + Tensor::shape_str(input.shape()));
    if (kernel.ndim() != 4) throw ShapeError("conv2d: kernel must be OCkk, got " + Tensor::shape_str(kernel.shape()));
    if (kernel.extent(2) != kernel.extent(3)) throw ShapeError("conv2d: kernel must be spatially square");
    if (kernel.extent(1) != input.extent(1))
        throw ShapeError("conv2d: input has " + std::to_string(input.extent(1)) + " channels but kernel expects " +
                         std::to_string(kernel.extent(1)));
    if (stride < 1) throw UsageError("conv2d: stride must be >= 1");
    if (pad < 0) throw UsageError("conv2d: pad must be >= 0");
    ConvDims d;
    d.n = input.extent(0);
    d.c = input.extent(1);
    d.h = input.extent(2);
    d.w = input.extent(3);
    d.o = kernel.extent(0);
    d.k = kernel.extent(2);
    d.stride = stride;
    d.pad = pad;
    if (d.k > d.h + 2 * pad || d.k > d.w + 2 * pad)
        throw ShapeError("conv2d: kernel " + std::to_string(d.k) + " exceeds padded input " +
                         Tensor::shape_str(input.shape()));
    d.oh = (d.h + 2 * pad - d.k) / stride + 1;
    d.ow = (d.w + 2 * pad - d.k) / stride + 1;
    return d;
}

// Zero-padded fetch; both conv paths read through this so out-of-range taps
// contribute an explicit 0.0 term and the accumulation orders stay identical.
inline double padded(const Tensor& t, int n, int c, int y, int x, int h, int w) {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
    return t.at4(n, c, y, x);
}

// col is (C*k*k) x (OH*OW), row index (c*k + kh)*k + kw, column oh*OW + ow.
void im2col(const Tensor& input, const ConvDims& d, int n, std::vector<double>& col) {
    const int spatial = d.oh * d.ow;
    std::size_t r = 0;
    for (int c = 0; c < d.c; ++c)
        for (int kh = 0; kh < d.k; ++kh)
            for (int kw = 0; kw < d.k; ++kw, ++r)
                for (int oh = 0; oh < d.oh; ++oh)
                    for (int ow = 0; ow < d.ow; ++ow)
                        col[r * spatial + oh * d.ow + ow] =
                            padded(input, n, c, oh * d.stride + kh - d.pad, ow * d.stride + kw - d.pad, d.h, d.w);
}

void col2im_accum(const std::vector<double>& col, const ConvDims& d, int n, Tensor& grad_input) {
    const int spatial = d.oh * d.ow;
    std::size_t r = 0;
    for (int c = 0; c < d.c; ++c)
        for (int kh = 0; kh < d.k; ++kh)
            for (int kw = 0; kw < d.k; ++kw, ++r)
                for (int oh = 0; oh < d.oh; ++oh)
                    for (int ow = 0; ow < d.ow; ++ow) {
                        const int y = oh * d.stride + kh - d.pad;
                        const int x = ow * d.stride + kw - d.pad;
                        if (y < 0 || y >= d.h || x < 0 || x >= d.w) continue;
                        grad_input.at4(n, c, y, x) += col[r * spatial + oh * d.ow + ow];
                    }
}

void check_same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw Error("operands recorded on different tapes");
}

bool any_rg(std::initializer_list<Var> vars) {
    for (const Var& v : vars)
        if (v.tape->requires_grad(v.id)) return true;
    return false;
}

Var make_op(Tape& tape, Tensor value, std::initializer_list<Var> inputs, const char* name) {
    const bool rg = any_rg(inputs);
    return Var{&tape, tape.add_node(std::move(value), rg, name)};
}

}  // namespace

Tensor conv2d_reference(const Tensor& input, const Tensor& kernel, int stride, int pad) {
    const ConvDims d = conv_dims(input, kernel, stride, pad);
    Tensor out({d.n, d.o, d.oh, d.ow});
    for (int n = 0; n < d.n; ++n)
        for (int o = 0; o < d.o; ++o)
            for (int oh = 0; oh < d.oh; ++oh)
                for (int ow = 0; ow < d.ow; ++ow) {
                    double s = 0.0;
                    for (int c = 0; c < d.c; ++c)
                        for (int kh = 0; kh < d.k; ++kh)
                            for (int kw = 0; kw < d.k; ++kw)
                                s += kernel.at4(o, c, kh, kw) *
                                     padded(input, n, c, oh * d.stride + kh - d.pad, ow * d.stride + kw - d.pad,
                                            d.h, d.w);
                    out.at4(n, o, oh, ow) = s;
                }
    return out;
}

Var conv2d(Var input, Var kernel, int stride, int pad) {
    check_same_tape(input, kernel);
    const Tensor& iv = input.value();
    const Tensor& kv = kernel.value();
    const ConvDims d = conv_dims(iv, kv, stride, pad);
    const int spatial = d.oh * d.ow;
    const int ckk = d.c * d.k * d.k;

    Tensor out({d.n, d.o, d.oh, d.ow});
    std::vector<double> col(static_cast<std::size_t>(ckk) * spatial);
    for (int n = 0; n < d.n; ++n) {
        im2col(iv, d, n, col);
        matmul_accum(kv.data(), col.data(), out.data() + static_cast<std::size_t>(n) * d.o * spatial,
                     d.o, ckk, spatial);
    }

    Var o = make_op(*input.tape, std::move(out), {input, kernel}, "conv2d");
    if (input.tape->requires_grad(o.id)) {
        NodeId ii = input.id, ki = kernel.id, oi = o.id;
        input.tape->add_step({ii, ki}, oi, [ii, ki, oi, d, spatial, ckk](Tape& t) {
            const Tensor& g = t.grad(oi);
            const Tensor& iv2 = t.value(ii);
            const Tensor& kv2 = t.value(ki);
            const bool need_input = t.requires_grad(ii);
            const bool need_kernel = t.requires_grad(ki);
            Tensor dinput = need_input ? Tensor(iv2.shape()) : Tensor{};
            Tensor dkernel = need_kernel ? Tensor(kv2.shape()) : Tensor{};
            // The col buffer is rebuilt per sample rather than cached from the
            // forward pass; memory stays bounded by one sample's patches.
            std::vector<double> col2(static_cast<std::size_t>(ckk) * spatial);
            std::vector<double> dcol(col2.size());
            for (int n = 0; n < d.n; ++n) {
                const double* gn = g.data() + static_cast<std::size_t>(n) * d.o * spatial;
                im2col(iv2, d, n, col2);
                if (need_kernel)
                    matmul_nt_accum(gn, col2.data(), dkernel.data(), d.o, spatial, ckk);
                if (need_input) {
                    std::fill(dcol.begin(), dcol.end(), 0.0);
                    matmul_tn_accum(kv2.data(), gn, dcol.data(), ckk, d.o, spatial);
                    col2im_accum(dcol, d, n, dinput);
                }
            }
            if (need_input) t.accumulate_grad(ii, dinput);
            if (need_kernel) t.accumulate_grad(ki, dkernel);
        });
    }
    return o;
}

Var bias_channel(Var x, Var bias) {
    check_same_tape(x, bias);
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    if (xv.ndim() != 4) throw ShapeError("bias_channel: input must be NCHW");
    if (bv.ndim() != 1 || bv.extent(0) != xv.extent(1))
        throw ShapeError("bias_channel: bias must have one entry per channel");
    const int n = xv.extent(0), c = xv.extent(1);
    const std::int64_t plane = static_cast<std::int64_t>(xv.extent(2)) * xv.extent(3);
    Tensor out(xv.shape());
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            const std::int64_t base = (static_cast<std::int64_t>(ni) * c + ci) * plane;
            for (std::int64_t p = 0; p < plane; ++p) out[base + p] = xv[base + p] + bv[ci];
        }
    Var o = make_op(*x.tape, std::move(out), {x, bias}, "bias_channel");
    if (x.tape->requires_grad(o.id)) {
        NodeId xi = x.id, bi = bias.id, oi = o.id;
        x.tape->add_step({xi, bi}, oi, [xi, bi, oi, n, c, plane](Tape& t) {
            const Tensor& g = t.grad(oi);
            if (t.requires_grad(xi)) t.accumulate_grad(xi, g);
            if (t.requires_grad(bi)) {
                Tensor db({c});
                for (int ni = 0; ni < n; ++ni)
                    for (int ci = 0; ci < c; ++ci) {
                        const std::int64_t base = (static_cast<std::int64_t>(ni) * c + ci) * plane;
                        for (std::int64_t p = 0; p < plane; ++p) db[ci] += g[base + p];
                    }
                t.accumulate_grad(bi, db);
            }
        });
    }
    return o;
}

namespace {

// Source coordinate table for one axis of align-corners-false interpolation:
// lower/upper source indices plus the upper-sample weight.
struct LerpTable {
    std::vector<int> lo, hi;
    std::vector<double> w;
};

LerpTable lerp_table(int src, int dst, int factor) {
    LerpTable tab;
    tab.lo.resize(dst);
    tab.hi.resize(dst);
    tab.w.resize(dst);
    for (int i = 0; i < dst; ++i) {
        double s = (i + 0.5) / factor - 0.5;
        if (s < 0.0) s = 0.0;
        if (s > src - 1) s = src - 1;
        const int lo = static_cast<int>(std::floor(s));
        tab.lo[i] = lo;
        tab.hi[i] = lo + 1 < src ? lo + 1 : src - 1;
        tab.w[i] = s - lo;
    }
    return tab;
}

}  // namespace

Var bilinear_upsample(Var x, int factor) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 4) throw ShapeError("bilinear_upsample: input must be NCHW");
    if (factor < 1) throw UsageError("bilinear_upsample: factor must be >= 1");
    const int n = xv.extent(0), c = xv.extent(1), h = xv.extent(2), w = xv.extent(3);
    const int oh = h * factor, ow = w * factor;
    const LerpTable ty = lerp_table(h, oh, factor);
    const LerpTable tx = lerp_table(w, ow, factor);

    Tensor out({n, c, oh, ow});
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < oh; ++y)
                for (int xo = 0; xo < ow; ++xo) {
                    const double wy = ty.w[y], wx = tx.w[xo];
                    const double v00 = xv.at4(ni, ci, ty.lo[y], tx.lo[xo]);
                    const double v01 = xv.at4(ni, ci, ty.lo[y], tx.hi[xo]);
                    const double v10 = xv.at4(ni, ci, ty.hi[y], tx.lo[xo]);
                    const double v11 = xv.at4(ni, ci, ty.hi[y], tx.hi[xo]);
                    out.at4(ni, ci, y, xo) = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) +
                                             wy * ((1.0 - wx) * v10 + wx * v11);
                }
    Var o = make_op(*x.tape, std::move(out), {x}, "bilinear_upsample");
    if (x.tape->requires_grad(o.id)) {
        NodeId xi = x.id, oi = o.id;
        x.tape->add_step({xi}, oi, [xi, oi, n, c, oh, ow, ty, tx](Tape& t) {
            const Tensor& g = t.grad(oi);
            Tensor d(t.value(xi).shape());
            for (int ni = 0; ni < n; ++ni)
                for (int ci = 0; ci < c; ++ci)
                    for (int y = 0; y < oh; ++y)
                        for (int xo = 0; xo < ow; ++xo) {
                            const double gv = g.at4(ni, ci, y, xo);
                            const double wy = ty.w[y], wx = tx.w[xo];
                            d.at4(ni, ci, ty.lo[y], tx.lo[xo]) += (1.0 - wy) * (1.0 - wx) * gv;
                            d.at4(ni, ci, ty.lo[y], tx.hi[xo]) += (1.0 - wy) * wx * gv;
                            d.at4(ni, ci, ty.hi[y], tx.lo[xo]) += wy * (1.0 - wx) * gv;
                            d.at4(ni, ci, ty.hi[y], tx.hi[xo]) += wy * wx * gv;
                        }
            t.accumulate_grad(xi, d);
        });
    }
    return o;
}

Var zero_pad2d(Var x, int top, int bottom, int left, int right) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 4) throw ShapeError("zero_pad2d: input must be NCHW");
    if (top < 0 || bottom < 0 || left < 0 || right < 0) throw UsageError("zero_pad2d: negative padding");
    const int n = xv.extent(0), c = xv.extent(1), h = xv.extent(2), w = xv.extent(3);
    const int oh = h + top + bottom, ow = w + left + right;
    Tensor out({n, c, oh, ow});
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
                for (int xo = 0; xo < w; ++xo) out.at4(ni, ci, y + top, xo + left) = xv.at4(ni, ci, y, xo);
    Var o = make_op(*x.tape, std::move(out), {x}, "zero_pad2d");
    if (x.tape->requires_grad(o.id)) {
        NodeId xi = x.id, oi = o.id;
        x.tape->add_step({xi}, oi, [xi, oi, n, c, h, w, top, left](Tape& t) {
            const Tensor& g = t.grad(oi);
            Tensor d({n, c, h, w});
            for (int ni = 0; ni < n; ++ni)
                for (int ci = 0; ci < c; ++ci)
                    for (int y = 0; y < h; ++y)
                        for (int xo = 0; xo < w; ++xo) d.at4(ni, ci, y, xo) = g.at4(ni, ci, y + top, xo + left);
            t.accumulate_grad(xi, d);
        });
    }
    return o;
}

Var forward_diff(Var x, int axis) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 3) throw ShapeError("forward_diff: input must be (C,H,W)");
    if (axis != 1 && axis != 2) throw UsageError("forward_diff: axis must be 1 or 2");
    const int c = xv.extent(0), h = xv.extent(1), w = xv.extent(2);
    if (xv.extent(axis) < 2) throw ShapeError("forward_diff: differenced extent must be >= 2");
    const int oh = axis == 1 ? h - 1 : h;
    const int ow = axis == 2 ? w - 1 : w;
    const int dy = axis == 1 ? 1 : 0;
    const int dx = axis == 2 ? 1 : 0;
    Tensor out({c, oh, ow});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < oh; ++y)
            for (int xo = 0; xo < ow; ++xo)
                out.at3(ci, y, xo) = xv.at3(ci, y + dy, xo + dx) - xv.at3(ci, y, xo);
    Var o = make_op(*x.tape, std::move(out), {x}, "forward_diff");
    if (x.tape->requires_grad(o.id)) {
        NodeId xi = x.id, oi = o.id;
        x.tape->add_step({xi}, oi, [xi, oi, c, oh, ow, dy, dx](Tape& t) {
            const Tensor& g = t.grad(oi);
            Tensor d(t.value(xi).shape());
            for (int ci = 0; ci < c; ++ci)
                for (int y = 0; y < oh; ++y)
                    for (int xo = 0; xo < ow; ++xo) {
                        const double gv = g.at3(ci, y, xo);
                        d.at3(ci, y + dy, xo + dx) += gv;
                        d.at3(ci, y, xo) -= gv;
                    }
            t.accumulate_grad(xi, d);
        });
    }
    return o;
}

Var concat_channels(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.ndim() != 4 || bv.ndim() != 4) throw ShapeError("concat_channels: inputs must be NCHW");
    if (av.extent(0) != bv.extent(0) || av.extent(2) != bv.extent(2) || av.extent(3) != bv.extent(3))
        throw ShapeError("concat_channels: non-channel extents differ: " + Tensor::shape_str(av.shape()) +
                         " vs " + Tensor::shape_str(bv.shape()));
    const int n = av.extent(0), ca = av.extent(1), cb = bv.extent(1);
    const std::int64_t plane = static_cast<std::int64_t>(av.extent(2)) * av.extent(3);
    Tensor out({n, ca + cb, av.extent(2), av.extent(3)});
    for (int ni = 0; ni < n; ++ni) {
        const std::int64_t abase = static_cast<std::int64_t>(ni) * ca * plane;
        const std::int64_t bbase = static_cast<std::int64_t>(ni) * cb * plane;
        const std::int64_t obase = static_cast<std::int64_t>(ni) * (ca + cb) * plane;
        for (std::int64_t i = 0; i < ca * plane; ++i) out[obase + i] = av[abase + i];
        for (std::int64_t i = 0; i < cb * plane; ++i) out[obase + ca * plane + i] = bv[bbase + i];
    }
    Var o = make_op(*a.tape, std::move(out), {a, b}, "concat_channels");
    if (a.tape->requires_grad(o.id)) {
        NodeId ai = a.id, bi = b.id, oi = o.id;
        a.tape->add_step({ai, bi}, oi, [ai, bi, oi, n, ca, cb, plane](Tape& t) {
            const Tensor& g = t.grad(oi);
            if (t.requires_grad(ai)) {
                Tensor da(t.value(ai).shape());
                for (int ni = 0; ni < n; ++ni) {
                    const std::int64_t abase = static_cast<std::int64_t>(ni) * ca * plane;
                    const std::int64_t obase = static_cast<std::int64_t>(ni) * (ca + cb) * plane;
                    for (std::int64_t i = 0; i < ca * plane; ++i) da[abase + i] = g[obase + i];
                }
                t.accumulate_grad(ai, da);
            }
            if (t.requires_grad(bi)) {
                Tensor db(t.value(bi).shape());
                for (int ni = 0; ni < n; ++ni) {
                    const std::int64_t bbase = static_cast<std::int64_t>(ni) * cb * plane;
                    const std::int64_t obase = static_cast<std::int64_t>(ni) * (ca + cb) * plane;
                    for (std::int64_t i = 0; i < cb * plane; ++i) db[bbase + i] = g[obase + ca * plane + i];
                }
                t.accumulate_grad(bi, db);
            }
        });
    }
    return o;
}

Var batchnorm(Var x, Var gamma, Var beta, BatchNormStats& stats, BatchNormMode mode) {
    check_same_tape(x, gamma);
    check_same_tape(x, beta);
    const Tensor& xv = x.value();
    if (xv.ndim() != 4) throw ShapeError("batchnorm: input must be NCHW");
    const int n = xv.extent(0), c = xv.extent(1), h = xv.extent(2), w = xv.extent(3);
    if (gamma.value().ndim() != 1 || gamma.value().extent(0) != c ||
        beta.value().ndim() != 1 || beta.value().extent(0) != c)
        throw ShapeError("batchnorm: gamma/beta must have one entry per channel");
    if (mode == BatchNormMode::train && n < 2)
        throw NumericError("batchnorm: train mode needs batch size >= 2, got " + std::to_string(n));
    if (stats.running_mean.empty()) stats.running_mean = Tensor({c});
    if (stats.running_var.empty()) stats.running_var = Tensor({c}, 1.0);
    if (stats.running_mean.extent(0) != c || stats.running_var.extent(0) != c)
        throw ShapeError("batchnorm: running stats sized for a different channel count");

    const double m = static_cast<double>(n) * h * w;
    Tensor mean({c}), var({c});
    if (mode == BatchNormMode::train) {
        for (int ci = 0; ci < c; ++ci) {
            double s = 0.0;
            for (int ni = 0; ni < n; ++ni)
                for (int y = 0; y < h; ++y)
                    for (int xo = 0; xo < w; ++xo) s += xv.at4(ni, ci, y, xo);
            mean[ci] = s / m;
            double sq = 0.0;
            for (int ni = 0; ni < n; ++ni)
                for (int y = 0; y < h; ++y)
                    for (int xo = 0; xo < w; ++xo) {
                        const double dv = xv.at4(ni, ci, y, xo) - mean[ci];
                        sq += dv * dv;
                    }
            var[ci] = sq / m;  // biased, matching the normalization itself
        }
        for (int ci = 0; ci < c; ++ci) {
            stats.running_mean[ci] = stats.momentum * stats.running_mean[ci] + (1.0 - stats.momentum) * mean[ci];
            stats.running_var[ci] = stats.momentum * stats.running_var[ci] + (1.0 - stats.momentum) * var[ci];
        }
    } else {
        mean = stats.running_mean;
        var = stats.running_var;
    }

    Tensor invstd({c});
    for (int ci = 0; ci < c; ++ci) invstd[ci] = 1.0 / std::sqrt(var[ci] + stats.eps);

    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    Tensor out(xv.shape());
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
                for (int xo = 0; xo < w; ++xo)
                    out.at4(ni, ci, y, xo) =
                        gv[ci] * (xv.at4(ni, ci, y, xo) - mean[ci]) * invstd[ci] + bv[ci];

    Var o = make_op(*x.tape, std::move(out), {x, gamma, beta}, "batchnorm");
    if (x.tape->requires_grad(o.id)) {
        NodeId xi = x.id, gi = gamma.id, bi = beta.id, oi = o.id;
        const bool train = mode == BatchNormMode::train;
        x.tape->add_step({xi, gi, bi}, oi, [xi, gi, bi, oi, n, c, h, w, m, mean, invstd, train](Tape& t) {
            const Tensor& g = t.grad(oi);
            const Tensor& xv2 = t.value(xi);
            const Tensor& gv2 = t.value(gi);
            const bool need_x = t.requires_grad(xi);
            const bool need_g = t.requires_grad(gi);
            const bool need_b = t.requires_grad(bi);
            Tensor dx = need_x ? Tensor(xv2.shape()) : Tensor{};
            Tensor dgamma = need_g ? Tensor({c}) : Tensor{};
            Tensor dbeta = need_b ? Tensor({c}) : Tensor{};
            for (int ci = 0; ci < c; ++ci) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (int ni = 0; ni < n; ++ni)
                    for (int y = 0; y < h; ++y)
                        for (int xo = 0; xo < w; ++xo) {
                            const double gv3 = g.at4(ni, ci, y, xo);
                            sum_g += gv3;
                            sum_gx += gv3 * (xv2.at4(ni, ci, y, xo) - mean[ci]) * invstd[ci];
                        }
                if (need_g) dgamma[ci] = sum_gx;
                if (need_b) dbeta[ci] = sum_g;
                if (!need_x) continue;
                if (train) {
                    // Batch statistics depend on x; fold their derivative in.
                    for (int ni = 0; ni < n; ++ni)
                        for (int y = 0; y < h; ++y)
                            for (int xo = 0; xo < w; ++xo) {
                                const double xhat = (xv2.at4(ni, ci, y, xo) - mean[ci]) * invstd[ci];
                                dx.at4(ni, ci, y, xo) =
                                    gv2[ci] * invstd[ci] *
                                    (g.at4(ni, ci, y, xo) - sum_g / m - xhat * sum_gx / m);
                            }
                } else {
                    for (int ni = 0; ni < n; ++ni)
                        for (int y = 0; y < h; ++y)
                            for (int xo = 0; xo < w; ++xo)
                                dx.at4(ni, ci, y, xo) = gv2[ci] * invstd[ci] * g.at4(ni, ci, y, xo);
                }
            }
            if (need_x) t.accumulate_grad(xi, dx);
            if (need_g) t.accumulate_grad(gi, dgamma);
            if (need_b) t.accumulate_grad(bi, dbeta);
        });
    }
    return o;
}

}  // namespace chroma
