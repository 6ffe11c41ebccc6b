#pragma once

// Forward tensor kernels with their backward rules. Every kernel writes a
// fresh contiguous output in a fixed evaluation order (no re-association),
// so the interpreter and the emitted program agree bit for bit.

#include "unistage/tensor/tape.hpp"

namespace unistage::tensor {

// Triple loop staged in the IR, or one kernel-matmul node that the emitter
// may bind to an external BLAS.
enum class MatmulForm { Loop, Kernel };

namespace detail {
inline MatmulForm& matmul_form() {
    thread_local MatmulForm f = MatmulForm::Loop;
    return f;
}
}  // namespace detail

inline MatmulForm matmul_form() { return detail::matmul_form(); }

class MatmulFormScope {
public:
    explicit MatmulFormScope(MatmulForm f) : prev_(detail::matmul_form()) { detail::matmul_form() = f; }
    ~MatmulFormScope() { detail::matmul_form() = prev_; }
    MatmulFormScope(const MatmulFormScope&) = delete;
    MatmulFormScope& operator=(const MatmulFormScope&) = delete;

private:
    MatmulForm prev_;
};

// Strided 2-D operand of a matrix product.
struct MatView {
    StagedValue data, base;
    int64_t rs = 0, cs = 0;
};

inline MatView mat_view(IrGraph& g, const Tensor& t) { return {t.data, base_index(g, t), t.strides.at(0), t.strides.at(1)}; }
inline MatView mat_view_t(IrGraph& g, const Tensor& t) {
    return {t.data, base_index(g, t), t.strides.at(1), t.strides.at(0)};
}

// out[i*n + j] = (acc ? out[i*n + j] : 0) + sum_p a(i,p) * b(p,j), with the
// sum evaluated left to right from 0.0 before the optional accumulation.
inline void matmul_into(IrGraph& g, const MatView& a, const MatView& b, StagedValue out, StagedValue m, StagedValue k,
                        StagedValue n, bool acc, MatmulForm form) {
    if (form == MatmulForm::Kernel) {
        g.reflect(Op::KernelMatmul, SType::unit(),
                  {a.data.node, a.base.node, b.data.node, b.base.node, out.node, m.node, k.node, n.node},
                  {a.rs, a.cs, b.rs, b.cs, acc});
        return;
    }
    g.kernel_loop(m, [&](StagedValue i) {
        g.kernel_loop(n, [&](StagedValue j) {
            StagedValue s = g.var_new(g.f64(0.0));
            g.kernel_loop(k, [&](StagedValue p) {
                StagedValue ai = g.add(g.add(a.base, g.mul(i, g.i64(a.rs))), g.mul(p, g.i64(a.cs)));
                StagedValue bi = g.add(g.add(b.base, g.mul(p, g.i64(b.rs))), g.mul(j, g.i64(b.cs)));
                g.var_write(s, g.add(g.var_read(s), g.mul(g.load(a.data, ai), g.load(b.data, bi))));
            });
            StagedValue idx = g.add(g.mul(i, n), j);
            StagedValue sum = g.var_read(s);
            g.store(out, idx, acc ? g.add(g.load(out, idx), sum) : sum);
        });
    });
}

// Stages out(i,j) = f(i, j) over the shape of `like` into a fresh tensor.
template <typename F>
Tensor generate(IrGraph& g, const Tensor& like, F&& f) {
    Tensor out = alloc(g, like.shape, like.dynamic() ? like.rows : StagedValue::unit());
    View2 v = view2(g, like);
    g.kernel_loop(v.rows, [&](StagedValue i) {
        g.kernel_loop(v.cols, [&](StagedValue j) { g.store(out.data, g.add(g.mul(i, v.cols), j), f(i, j)); });
    });
    return out;
}

// grad(i,j) += f(i, j) for a contiguous gradient buffer.
template <typename F>
void accumulate(IrGraph& g, const Tensor& grad, F&& f) {
    View2 v = view2(g, grad);
    g.kernel_loop(v.rows, [&](StagedValue i) {
        g.kernel_loop(v.cols, [&](StagedValue j) {
            StagedValue idx = g.add(g.mul(i, v.cols), j);
            g.store(grad.data, idx, g.add(g.load(grad.data, idx), f(i, j)));
        });
    });
}

namespace detail {
inline bool tracking(std::initializer_list<const Tensor*> ins) {
    if (!active_tape()) return false;
    for (auto* t : ins)
        if (t->id >= 0) return true;
    return false;
}
inline StagedValue elem(IrGraph& g, const Tensor& t, StagedValue i, StagedValue j) {
    return g.load(t.data, view_index(g, view2(g, t), i, j));
}
}  // namespace detail

inline Tensor matmul(IrGraph& g, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw StagingError("matmul: operands must be matrices, got " + a.shape_str() + " and " + b.shape_str());
    if (b.dynamic() || a.shape[1] != b.shape[0])
        throw StagingError("matmul: inner dimensions differ (" + a.shape_str() + " x " + b.shape_str() + ")");
    StagedValue m = dim(g, a, 0), k = g.i64(a.shape[1]), n = g.i64(b.shape[1]);
    Tensor c = alloc(g, {a.shape[0], b.shape[1]}, a.dynamic() ? a.rows : StagedValue::unit());
    MatmulForm form = matmul_form();
    matmul_into(g, mat_view(g, a), mat_view(g, b), c.data, m, k, n, false, form);
    if (detail::tracking({&a, &b})) {
        Tape& tape = *active_tape();
        tape.track(c);
        tape.record("matmul", {a.id, b.id}, c.id, [a, b, c, m, k, n, form](IrGraph& g, Tape& t) {
            Tensor dc = t.grad(g, c.id);
            MatView dcv{dc.data, g.i64(0), b.shape[1], 1};
            if (a.id >= 0) matmul_into(g, dcv, mat_view_t(g, b), t.grad(g, a.id).data, m, n, k, true, form);
            if (b.id >= 0) matmul_into(g, mat_view_t(g, a), dcv, t.grad(g, b.id).data, k, m, n, true, form);
        });
    }
    return c;
}

inline Tensor add_bias(IrGraph& g, const Tensor& x, const Tensor& b) {
    if (x.rank() != 2 || b.rank() != 1 || b.dynamic() || x.shape[1] != b.shape[0])
        throw StagingError("add_bias: bias " + b.shape_str() + " does not match the trailing dimension of " +
                           x.shape_str());
    Tensor out = generate(g, x, [&](StagedValue i, StagedValue j) {
        return g.add(detail::elem(g, x, i, j), detail::elem(g, b, j, g.i64(0)));
    });
    if (detail::tracking({&x, &b})) {
        Tape& tape = *active_tape();
        tape.track(out);
        tape.record("add_bias", {x.id, b.id}, out.id, [x, b, out](IrGraph& g, Tape& t) {
            Tensor dout = t.grad(g, out.id);
            if (x.id >= 0)
                accumulate(g, t.grad(g, x.id), [&](StagedValue i, StagedValue j) { return detail::elem(g, dout, i, j); });
            if (b.id >= 0) {
                Tensor db = t.grad(g, b.id);
                StagedValue rows = dim(g, dout, 0);
                g.kernel_loop(g.i64(b.shape[0]), [&](StagedValue j) {
                    StagedValue s = g.var_new(g.load(db.data, j));
                    g.kernel_loop(rows, [&](StagedValue i) {
                        g.var_write(s, g.add(g.var_read(s), detail::elem(g, dout, i, j)));
                    });
                    g.store(db.data, j, g.var_read(s));
                });
            }
        });
    }
    return out;
}

inline Tensor relu(IrGraph& g, const Tensor& x) {
    Tensor out = generate(g, x, [&](StagedValue i, StagedValue j) {
        StagedValue v = detail::elem(g, x, i, j);
        return g.select(g.gt(v, g.f64(0.0)), v, g.f64(0.0));
    });
    if (detail::tracking({&x})) {
        Tape& tape = *active_tape();
        tape.track(out);
        tape.record("relu", {x.id}, out.id, [x, out](IrGraph& g, Tape& t) {
            Tensor dout = t.grad(g, out.id);
            // subgradient 0 at x == 0
            accumulate(g, t.grad(g, x.id), [&](StagedValue i, StagedValue j) {
                return g.select(g.gt(detail::elem(g, x, i, j), g.f64(0.0)), detail::elem(g, dout, i, j), g.f64(0.0));
            });
        });
    }
    return out;
}

inline StagedValue sigmoid_scalar(IrGraph& g, StagedValue v) {
    return g.div(g.f64(1.0), g.add(g.f64(1.0), g.exp(g.neg(v))));
}

inline Tensor sigmoid(IrGraph& g, const Tensor& x) {
    Tensor out = generate(g, x, [&](StagedValue i, StagedValue j) { return sigmoid_scalar(g, detail::elem(g, x, i, j)); });
    if (detail::tracking({&x})) {
        Tape& tape = *active_tape();
        tape.track(out);
        tape.record("sigmoid", {x.id}, out.id, [x, out](IrGraph& g, Tape& t) {
            Tensor dout = t.grad(g, out.id);
            accumulate(g, t.grad(g, x.id), [&](StagedValue i, StagedValue j) {
                StagedValue s = detail::elem(g, out, i, j);
                return g.mul(detail::elem(g, dout, i, j), g.mul(s, g.sub(g.f64(1.0), s)));
            });
        });
    }
    return out;
}

namespace detail {
// Left-to-right sum of f(i, j) over the shape of `like`.
template <typename F>
StagedValue reduce_sum(IrGraph& g, const Tensor& like, F&& f) {
    View2 v = view2(g, like);
    StagedValue s = g.var_new(g.f64(0.0));
    g.kernel_loop(v.rows, [&](StagedValue i) {
        g.kernel_loop(v.cols, [&](StagedValue j) { g.var_write(s, g.add(g.var_read(s), f(i, j))); });
    });
    return g.var_read(s);
}

inline Tensor scalar_tensor(IrGraph& g, StagedValue v) {
    Tensor out = alloc(g, {});
    g.store(out.data, g.i64(0), v);
    return out;
}
}  // namespace detail

// Mean over every element of the squared difference.
inline Tensor mse_loss(IrGraph& g, const Tensor& pred, const Tensor& target) {
    if (pred.shape != target.shape)
        throw StagingError("mse_loss: shapes differ (" + pred.shape_str() + " vs " + target.shape_str() + ")");
    StagedValue total = detail::reduce_sum(g, pred, [&](StagedValue i, StagedValue j) {
        StagedValue d = g.sub(detail::elem(g, pred, i, j), detail::elem(g, target, i, j));
        return g.mul(d, d);
    });
    StagedValue count = g.to_f64(numel(g, pred));
    Tensor out = detail::scalar_tensor(g, g.div(total, count));
    if (detail::tracking({&pred, &target})) {
        Tape& tape = *active_tape();
        tape.track(out);
        tape.record("mse_loss", {pred.id, target.id}, out.id, [pred, target, out](IrGraph& g, Tape& t) {
            Tensor dl = t.grad(g, out.id);
            StagedValue coef = g.div(g.mul(g.f64(2.0), g.load(dl.data, g.i64(0))), g.to_f64(numel(g, pred)));
            auto diff = [&](StagedValue i, StagedValue j) {
                return g.mul(coef, g.sub(detail::elem(g, pred, i, j), detail::elem(g, target, i, j)));
            };
            if (pred.id >= 0) accumulate(g, t.grad(g, pred.id), diff);
            if (target.id >= 0)
                accumulate(g, t.grad(g, target.id), [&](StagedValue i, StagedValue j) { return g.neg(diff(i, j)); });
        });
    }
    return out;
}

inline Tensor sum(IrGraph& g, const Tensor& x) {
    Tensor out = detail::scalar_tensor(g, detail::reduce_sum(g, x, [&](StagedValue i, StagedValue j) {
                                           return detail::elem(g, x, i, j);
                                       }));
    if (detail::tracking({&x})) {
        Tape& tape = *active_tape();
        tape.track(out);
        tape.record("sum", {x.id}, out.id, [x, out](IrGraph& g, Tape& t) {
            StagedValue d = g.load(t.grad(g, out.id).data, g.i64(0));
            accumulate(g, t.grad(g, x.id), [&](StagedValue, StagedValue) { return d; });
        });
    }
    return out;
}

inline StagedValue scalar_value(IrGraph& g, const Tensor& t) {
    if (t.rank() == 0) return g.load(t.data, base_index(g, t));
    if (t.rank() == 1 && t.shape[0] == 1) return at(g, t, 0);
    throw StagingError("expected a scalar tensor, got " + t.shape_str());
}

// value <- value - lr * grad elementwise, then grad <- 0.
inline void sgd_step(IrGraph& g, std::vector<Parameter*> params, double lr) {
    for (Parameter* p : params) {
        int64_t n = p->value.static_numel();
        g.kernel_loop(g.i64(n), [&](StagedValue i) {
            StagedValue v = g.load(p->value.data, i);
            StagedValue gr = g.load(p->grad.data, i);
            g.store(p->value.data, i, g.sub(v, g.mul(g.f64(lr), gr)));
            g.store(p->grad.data, i, g.f64(0.0));
        });
    }
}

inline void zero_grad(IrGraph& g, std::vector<Parameter*> params) {
    for (Parameter* p : params)
        g.kernel_loop(g.i64(p->grad.static_numel()), [&](StagedValue i) { g.store(p->grad.data, i, g.f64(0.0)); });
}

inline void backward(IrGraph& g, const Tensor& loss) {
    Tape* t = active_tape();
    if (!t) throw StagingError("backward: no active tape");
    t->backward(g, loss);
}

}  // namespace unistage::tensor
