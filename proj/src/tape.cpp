#include "chroma/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace chroma {

NodeId Tape::add_node(Tensor value, bool requires_grad, std::string op) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(op)});
    return static_cast<NodeId>(nodes_.size()) - 1;
}

void Tape::add_step(std::vector<NodeId> inputs, NodeId output,
                    std::function<void(Tape&)> backward) {
    steps_.push_back(Step{std::move(inputs), output, std::move(backward)});
}

void Tape::accumulate_grad(NodeId id, const Tensor& delta) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.grad.empty()) node.grad = Tensor(node.value.shape());
    if (!node.grad.same_shape(delta)) throw ShapeError("gradient shape mismatch at " + node.op);
    for (std::int64_t i = 0; i < delta.size(); ++i) node.grad[i] += delta[i];
}

void Tape::backward(NodeId root) {
    if (value(root).size() != 1) throw ShapeError("backward root must be scalar");
    accumulate_grad(root, Tensor::from({1}, {1.0}));
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
        const Node& out = nodes_[static_cast<std::size_t>(it->output)];
        if (out.grad.empty()) continue;
        it->backward(*this);
    }
}

const Tensor* Tape::grad_for(const Tensor* storage) const {
    for (const ParamBinding& b : params_) {
        if (b.storage == storage) {
            const Tensor& g = nodes_[static_cast<std::size_t>(b.id)].grad;
            return g.empty() ? nullptr : &g;
        }
    }
    return nullptr;
}

NodeId Tape::first_nonfinite_node() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (!nodes_[i].value.all_finite()) return static_cast<NodeId>(i);
    }
    return -1;
}

namespace {

bool any_rg(std::initializer_list<Var> vars) {
    for (const Var& v : vars)
        if (v.tape->requires_grad(v.id)) return true;
    return false;
}

void check_same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw Error("operands recorded on different tapes");
}

// Creates the output node; the caller records the backward step iff the
// output requires grad.
Var make_op(Tape& tape, Tensor value, std::initializer_list<Var> inputs, const char* name) {
    const bool rg = any_rg(inputs);
    return Var{&tape, tape.add_node(std::move(value), rg, name)};
}

}  // namespace

// ---------------- elementwise ----------------

Var add(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!av.same_shape(bv)) throw ShapeError("add: shape mismatch");
    Tensor out(av.shape());
    for (std::int64_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    Var o = make_op(*a.tape, std::move(out), {a, b}, "add");
    if (a.tape->requires_grad(o.id)) {
        NodeId ai = a.id, bi = b.id, oi = o.id;
        a.tape->add_step({ai, bi}, oi, [ai, bi, oi](Tape& t) {
            const Tensor& g = t.grad(oi);
            if (t.requires_grad(ai)) t.accumulate_grad(ai, g);
            if (t.requires_grad(bi)) t.accumulate_grad(bi, g);
        });
    }
    return o;
}

Var sub(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!av.same_shape(bv)) throw ShapeError("sub: shape mismatch");
    Tensor out(av.shape());
    for (std::int64_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    Var o = make_op(*a.tape, std::move(out), {a, b}, "sub");
    if (a.tape->requires_grad(o.id)) {
        NodeId ai = a.id, bi = b.id, oi = o.id;
        a.tape->add_step({ai, bi}, oi, [ai, bi, oi](Tape& t) {
            const Tensor& g = t.grad(oi);
            if (t.requires_grad(ai)) t.accumulate_grad(ai, g);
            if (t.requires_grad(bi)) {
                Tensor ng(g.shape());
                for (std::int64_t i = 0; i < g.size(); ++i) ng[i] = -g[i];
                t.accumulate_grad(bi, ng);
            }
        });
    }
    return o;
}

Var mul(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!av.same_shape(bv)) throw ShapeError("mul: shape mismatch");
    Tensor out(av.shape());
    for (std::int64_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    Var o = make_op(*a.tape, std::move(out), {a, b}, "mul");
    if (a.tape->requires_grad(o.id)) {
        NodeId ai = a.id, bi = b.id, oi = o.id;
        a.tape->add_step({ai, bi}, oi, [ai, bi, oi](Tape& t) {
            const Tensor& g = t.grad(oi);
            if (t.requires_grad(ai)) {
                const Tensor& bv2 = t.value(bi);
                Tensor d(g.shape());
                for (std::int64_t i = 0; i < g.size(); ++i) d[i] = g[i] * bv2[i];
                t.accumulate_grad(ai, d);
            }
            if (t.requires_grad(bi)) {
                const Tensor& av2 = t.value(ai);
                Tensor d(g.shape());
                for (std::int64_t i = 0; i < g.size(); ++i) d[i] = g[i] * av2[i];
                t.accumulate_grad(bi, d);
            }
        });
    }
    return o;
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double s) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::int64_t i = 0; i < av.size(); ++i) out[i] = s * av[i];
    Var o = make_op(*a.tape, std::move(out), {a}, "scale");
    if (a.tape->requires_grad(o.id)) {
        NodeId ai = a.id, oi = o.id;
        a.tape->add_step({ai}, oi, [ai, oi, s](Tape& t) {
            const Tensor& g = t.grad(oi);
            Tensor d(g.shape());
            for (std::int64_t i = 0; i < g.size(); ++i) d[i] = s * g[i];
            t.accumulate_grad(ai, d);
        });
    }
    return o;
}

Var add_scalar(Var a, double s) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::int64_t i = 0; i < av.size(); ++i) out[i] = av[i] + s;
    Var o = make_op(*a.tape, std::move(out), {a}, "add_scalar");
    if (a.tape->requires_grad(o.id)) {
        NodeId ai = a.id, oi = o.id;
        a.tape->add_step({ai}, oi, [ai, oi](Tape& t) { t.accumulate_grad(ai, t.grad(oi)); });
    }
    return o;
}

Var square(Var a) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::int64_t i = 0; i < av.size(); ++i) out[i] = av[i] * av[i];
    Var o = make_op(*a.tape, std::move(out), {a}, "square");
    if (a.tape->requires_grad(o.id)) {
        NodeId ai = a.id, oi = o.id;
        a.tape->add_step({ai}, oi, [ai, oi](Tape& t) {
            const Tensor& g = t.grad(oi);
            const Tensor& x = t.value(ai);
            Tensor d(g.shape());
            for (std::int64_t i = 0; i < g.size(); ++i) d[i] = 2.0 * x[i] * g[i];
            t.accumulate_grad(ai, d);
        });
    }
    return o;
}

Var exp_op(Var a) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::int64_t i = 0; i < av.size(); ++i) out[i] = std::exp(av[i]);
    Var o = make_op(*a.tape, std::move(out), {a}, "exp");
    if (a.tape->requires_grad(o.id)) {
        NodeId ai = a.id, oi = o.id;
        a.tape->add_step({ai}, oi, [ai, oi](Tape& t) {
            const Tensor& g = t.grad(oi);
            const Tensor& y = t.value(oi);
            Tensor d(g.shape());
            for (std::int64_t i = 0; i < g.size(); ++i) d[i] = y[i] * g[i];
            t.accumulate_grad(ai, d);
        });
    }
    return o;
}

Var log_op(Var a) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::int64_t i = 0; i < av.size(); ++i) out[i] = std::log(av[i]);
    Var o = make_op(*a.tape, std::move(out), {a}, "log");
    if (a.tape->requires_grad(o.id)) {
        NodeId ai = a.id, oi = o.id;
        a.tape->add_step({ai}, oi, [ai, oi](Tape& t) {
            const Tensor& g = t.grad(oi);
            const Tensor& x = t.value(ai);
            Tensor d(g.shape());
            for (std::int64_t i = 0; i < g.size(); ++i) d[i] = g[i] / x[i];
            t.accumulate_grad(ai, d);
        });
    }
    return o;
}

// ---------------- reductions / shape ----------------

Var sum_all(Var a) {
    const Tensor& av = a.value();
    double s = 0.0;
    for (std::int64_t i = 0; i < av.size(); ++i) s += av[i];
    Var o = make_op(*a.tape, Tensor::from({1}, {s}), {a}, "sum");
    if (a.tape->requires_grad(o.id)) {
        NodeId ai = a.id, oi = o.id;
        a.tape->add_step({ai}, oi, [ai, oi](Tape& t) {
            const double g = t.grad(oi)[0];
            Tensor d(t.value(ai).shape(), g);
            t.accumulate_grad(ai, d);
        });
    }
    return o;
}

Var sum_rows(Var a) {
    const Tensor& av = a.value();
    if (av.ndim() != 2) throw ShapeError("sum_rows: expects 2-D input");
    const int m = av.extent(0), n = av.extent(1);
    Tensor out({m});
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += av.at2(i, j);
        out[i] = s;
    }
    Var o = make_op(*a.tape, std::move(out), {a}, "sum_rows");
    if (a.tape->requires_grad(o.id)) {
        NodeId ai = a.id, oi = o.id;
        a.tape->add_step({ai}, oi, [ai, oi, m, n](Tape& t) {
            const Tensor& g = t.grad(oi);
            Tensor d({m, n});
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) d.at2(i, j) = g[i];
            t.accumulate_grad(ai, d);
        });
    }
    return o;
}

Var reshape(Var a, std::vector<int> shape) {
    Tensor out = a.value().reshaped(shape);
    Var o = make_op(*a.tape, std::move(out), {a}, "reshape");
    if (a.tape->requires_grad(o.id)) {
        NodeId ai = a.id, oi = o.id;
        a.tape->add_step({ai}, oi, [ai, oi](Tape& t) {
            t.accumulate_grad(ai, t.grad(oi).reshaped(t.value(ai).shape()));
        });
    }
    return o;
}

Var slice0(Var a, int start, int len) {
    const Tensor& av = a.value();
    if (av.ndim() < 1) throw ShapeError("slice0: scalar input");
    const int extent0 = av.extent(0);
    if (start < 0 || len < 0 || start + len > extent0) throw ShapeError("slice0: range out of bounds");
    std::vector<int> oshape = av.shape();
    oshape[0] = len;
    const std::int64_t row = av.size() / std::max(extent0, 1);
    Tensor out(oshape);
    for (std::int64_t i = 0; i < row * len; ++i) out[i] = av[start * row + i];
    Var o = make_op(*a.tape, std::move(out), {a}, "slice0");
    if (a.tape->requires_grad(o.id)) {
        NodeId ai = a.id, oi = o.id;
        a.tape->add_step({ai}, oi, [ai, oi, start, row, len](Tape& t) {
            const Tensor& g = t.grad(oi);
            Tensor d(t.value(ai).shape());
            for (std::int64_t i = 0; i < row * len; ++i) d[start * row + i] = g[i];
            t.accumulate_grad(ai, d);
        });
    }
    return o;
}

Var select(Var a, int index) {
    const Tensor& av = a.value();
    if (av.ndim() != 1) throw ShapeError("select: expects 1-D input");
    if (index < 0 || index >= av.extent(0)) throw ShapeError("select: index out of range");
    Var o = make_op(*a.tape, Tensor::from({1}, {av[index]}), {a}, "select");
    if (a.tape->requires_grad(o.id)) {
        NodeId ai = a.id, oi = o.id;
        a.tape->add_step({ai}, oi, [ai, oi, index](Tape& t) {
            Tensor d(t.value(ai).shape());
            d[index] = t.grad(oi)[0];
            t.accumulate_grad(ai, d);
        });
    }
    return o;
}

// ---------------- activations ----------------

Var relu(Var a) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::int64_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
    Var o = make_op(*a.tape, std::move(out), {a}, "relu");
    if (a.tape->requires_grad(o.id)) {
        NodeId ai = a.id, oi = o.id;
        a.tape->add_step({ai}, oi, [ai, oi](Tape& t) {
            const Tensor& g = t.grad(oi);
            const Tensor& x = t.value(ai);
            Tensor d(g.shape());
            for (std::int64_t i = 0; i < g.size(); ++i) d[i] = x[i] > 0.0 ? g[i] : 0.0;
            t.accumulate_grad(ai, d);
        });
    }
    return o;
}

Var tanh_op(Var a) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::int64_t i = 0; i < av.size(); ++i) out[i] = std::tanh(av[i]);
    Var o = make_op(*a.tape, std::move(out), {a}, "tanh");
    if (a.tape->requires_grad(o.id)) {
        NodeId ai = a.id, oi = o.id;
        a.tape->add_step({ai}, oi, [ai, oi](Tape& t) {
            const Tensor& g = t.grad(oi);
            const Tensor& y = t.value(oi);
            Tensor d(g.shape());
            for (std::int64_t i = 0; i < g.size(); ++i) d[i] = (1.0 - y[i] * y[i]) * g[i];
            t.accumulate_grad(ai, d);
        });
    }
    return o;
}

Var softmax(Var a, int axis) {
    const Tensor& av = a.value();
    if (axis < 0 || axis >= av.ndim()) throw ShapeError("softmax: bad axis");
    const int axis_len = av.extent(axis);
    std::int64_t inner = 1;
    for (int d = axis + 1; d < av.ndim(); ++d) inner *= av.extent(d);
    std::int64_t outer = av.size() / (axis_len * inner);

    Tensor out(av.shape());
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * axis_len * inner + in;
            double mx = av[base];
            for (int k = 1; k < axis_len; ++k) mx = std::max(mx, av[base + k * inner]);
            double denom = 0.0;
            for (int k = 0; k < axis_len; ++k) denom += std::exp(av[base + k * inner] - mx);
            for (int k = 0; k < axis_len; ++k)
                out[base + k * inner] = std::exp(av[base + k * inner] - mx) / denom;
        }
    }
    Var o = make_op(*a.tape, std::move(out), {a}, "softmax");
    if (a.tape->requires_grad(o.id)) {
        NodeId ai = a.id, oi = o.id;
        a.tape->add_step({ai}, oi, [ai, oi, axis_len, inner, outer](Tape& t) {
            const Tensor& g = t.grad(oi);
            const Tensor& y = t.value(oi);
            Tensor d(g.shape());
            for (std::int64_t o2 = 0; o2 < outer; ++o2) {
                for (std::int64_t in = 0; in < inner; ++in) {
                    const std::int64_t base = o2 * axis_len * inner + in;
                    double gy = 0.0;
                    for (int k = 0; k < axis_len; ++k)
                        gy += g[base + k * inner] * y[base + k * inner];
                    for (int k = 0; k < axis_len; ++k) {
                        const std::int64_t idx = base + k * inner;
                        d[idx] = y[idx] * (g[idx] - gy);
                    }
                }
            }
            t.accumulate_grad(ai, d);
        });
    }
    return o;
}

// ---------------- linear algebra ----------------

Var matmul(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.ndim() != 2 || bv.ndim() != 2) throw ShapeError("matmul: expects 2-D operands");
    if (av.extent(1) != bv.extent(0))
        throw ShapeError("matmul: inner dimensions " + Tensor::shape_str(av.shape()) + " x " +
                         Tensor::shape_str(bv.shape()));
    const int m = av.extent(0), k = av.extent(1), n = bv.extent(1);
    Tensor out({m, n});
    matmul_accum(av.data(), bv.data(), out.data(), m, k, n);
    Var o = make_op(*a.tape, std::move(out), {a, b}, "matmul");
    if (a.tape->requires_grad(o.id)) {
        NodeId ai = a.id, bi = b.id, oi = o.id;
        a.tape->add_step({ai, bi}, oi, [ai, bi, oi, m, k, n](Tape& t) {
            const Tensor& g = t.grad(oi);
            if (t.requires_grad(ai)) {
                Tensor da({m, k});
                matmul_nt_accum(g.data(), t.value(bi).data(), da.data(), m, n, k);
                t.accumulate_grad(ai, da);
            }
            if (t.requires_grad(bi)) {
                Tensor db({k, n});
                matmul_tn_accum(t.value(ai).data(), g.data(), db.data(), k, m, n);
                t.accumulate_grad(bi, db);
            }
        });
    }
    return o;
}

namespace {

Var add_row_bias(Var x, Var bias) {
    check_same_tape(x, bias);
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    if (xv.ndim() != 2 || bv.ndim() != 1 || bv.extent(0) != xv.extent(1))
        throw ShapeError("bias: expects (n,o) input and (o) bias");
    const int m = xv.extent(0), n = xv.extent(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at2(i, j) = xv.at2(i, j) + bv[j];
    Var o = make_op(*x.tape, std::move(out), {x, bias}, "row_bias");
    if (x.tape->requires_grad(o.id)) {
        NodeId xi = x.id, bi = bias.id, oi = o.id;
        x.tape->add_step({xi, bi}, oi, [xi, bi, oi, m, n](Tape& t) {
            const Tensor& g = t.grad(oi);
            if (t.requires_grad(xi)) t.accumulate_grad(xi, g);
            if (t.requires_grad(bi)) {
                Tensor db({n});
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) db[j] += g.at2(i, j);
                t.accumulate_grad(bi, db);
            }
        });
    }
    return o;
}

}  // namespace

Var fully_connected(Var x, Var weight, Var bias) {
    return add_row_bias(matmul(x, weight), bias);
}

Var logsumexp(Var x) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 1) throw ShapeError("logsumexp: expects 1-D input");
    double mx = xv[0];
    for (std::int64_t i = 1; i < xv.size(); ++i) mx = std::max(mx, xv[i]);
    return add_scalar(log_op(sum_all(exp_op(add_scalar(x, -mx)))), mx);
}

}  // namespace chroma
