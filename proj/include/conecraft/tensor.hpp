#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "conecraft/common.hpp"
#include "conecraft/linalg.hpp"

namespace conecraft::tensorkit {

/// Dense row-major float64 tensor. Rank 1 or 2 is all the models here need.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape)) throw ShapeMismatch("Tensor: data/shape mismatch");
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        Tensor t;
        t.shape = std::move(s);
        t.data.assign(numel_of(t.shape), 0.0);
        return t;
    }

    static Tensor full(std::vector<std::size_t> s, double v) {
        Tensor t = zeros(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

/// Batch-norm statistics and learnable affine for one feature axis.
struct BNState {
    Tensor gamma;         // scale, learnable
    Tensor beta;          // shift, learnable
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    static BNState create(std::size_t features) {
        BNState s;
        s.gamma = Tensor::full({features}, 1.0);
        s.beta = Tensor::zeros({features});
        s.running_mean = Tensor::zeros({features});
        s.running_var = Tensor::full({features}, 1.0);
        return s;
    }
};

/// Records forward operations and replays their adjoints in reverse order.
/// Nodes own their value and gradient buffers; a Tape is a single-threaded
/// unit of work, typically one per training step.
class Tape {
public:
    int leaf(Tensor value, bool requires_grad = false) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    /// Extension point: register a node with an explicit backward rule. The
    /// rule receives the tape and must accumulate into the parents' grads.
    int make_node(Tensor value, std::vector<int> parents, std::function<void(Tape&, int)> backward) {
        Node n;
        n.value = std::move(value);
        for (int p : parents) n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(p)].needs_grad;
        n.parents = std::move(parents);
        if (n.needs_grad) n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

    const Tensor& grad(int id) const {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.grad_live) throw Error("Tape: gradient not computed for this node");
        return n.grad;
    }

    bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

    /// Accumulate into a node's gradient buffer (allocating it on first touch).
    Tensor& grad_buffer(int id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.grad_live) {
            n.grad = Tensor::zeros(n.value.shape);
            n.grad_live = true;
        }
        return n.grad;
    }

    /// Reverse pass from a scalar node. Each node is visited exactly once,
    /// in reverse topological (= creation) order.
    void backward(int root) {
        Node& r = nodes_[static_cast<std::size_t>(root)];
        if (r.value.numel() != 1) throw ShapeMismatch("backward: root must be scalar");
        for (Node& n : nodes_) n.grad_live = false;
        grad_buffer(root).data[0] = 1.0;
        for (int i = root; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.backward && n.needs_grad && n.grad_live) n.backward(*this, i);
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool grad_live = false;
        bool needs_grad = false;
        std::vector<int> parents;
        std::function<void(Tape&, int)> backward;
    };
    std::vector<Node> nodes_;
};

/// Lightweight handle pairing a tape with a node id.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Tensor& value() const { return tape->value(id); }
    const Tensor& grad() const { return tape->grad(id); }
};

inline Var make_leaf(Tape& t, Tensor v, bool requires_grad = false) {
    return Var{&t, t.leaf(std::move(v), requires_grad)};
}

namespace detail {

enum class EwKind { add, sub, mul };

inline bool row_broadcast(const Tensor& a, const Tensor& b) {
    return a.rank() == 2 && b.rank() == 1 && b.shape[0] == a.shape[1];
}

inline Var ew_op(Var a, Var b, EwKind kind) {
    Tape& t = *a.tape;
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const bool bcast = row_broadcast(av, bv);
    if (!bcast && !av.same_shape(bv)) {
        throw ShapeMismatch("elementwise op: incompatible shapes");
    }
    Tensor out = Tensor::zeros(av.shape);
    const std::size_t n = av.numel();
    const std::size_t c = av.cols();
    for (std::size_t i = 0; i < n; ++i) {
        const double bi = bcast ? bv.data[i % c] : bv.data[i];
        switch (kind) {
            case EwKind::add: out.data[i] = av.data[i] + bi; break;
            case EwKind::sub: out.data[i] = av.data[i] - bi; break;
            case EwKind::mul: out.data[i] = av.data[i] * bi; break;
        }
    }
    const int aid = a.id, bid = b.id;
    int id = t.make_node(std::move(out), {aid, bid}, [aid, bid, kind, bcast, c](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& av2 = tp.value(aid);
        const Tensor& bv2 = tp.value(bid);
        if (tp.needs_grad(aid)) {
            Tensor& ga = tp.grad_buffer(aid);
            for (std::size_t i = 0; i < g.numel(); ++i) {
                const double bi = bcast ? bv2.data[i % c] : bv2.data[i];
                switch (kind) {
                    case EwKind::add:
                    case EwKind::sub: ga.data[i] += g.data[i]; break;
                    case EwKind::mul: ga.data[i] += g.data[i] * bi; break;
                }
            }
        }
        if (tp.needs_grad(bid)) {
            Tensor& gb = tp.grad_buffer(bid);
            for (std::size_t i = 0; i < g.numel(); ++i) {
                const std::size_t bi = bcast ? i % c : i;
                switch (kind) {
                    case EwKind::add: gb.data[bi] += g.data[i]; break;
                    case EwKind::sub: gb.data[bi] -= g.data[i]; break;
                    case EwKind::mul: gb.data[bi] += g.data[i] * av2.data[i]; break;
                }
            }
        }
    });
    return Var{&t, id};
}

inline Var unary_op(Var x, std::function<double(double)> f, std::function<double(double, double)> dfdx_times_g) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    Tensor out = Tensor::zeros(xv.shape);
    for (std::size_t i = 0; i < xv.numel(); ++i) out.data[i] = f(xv.data[i]);
    const int xid = x.id;
    int id = t.make_node(std::move(out), {xid}, [xid, dfdx_times_g](Tape& tp, int self) {
        if (!tp.needs_grad(xid)) return;
        const Tensor& g = tp.grad(self);
        const Tensor& xv2 = tp.value(xid);
        Tensor& gx = tp.grad_buffer(xid);
        for (std::size_t i = 0; i < g.numel(); ++i) gx.data[i] += dfdx_times_g(xv2.data[i], g.data[i]);
    });
    return Var{&t, id};
}

}  // namespace detail

inline Var add(Var a, Var b) { return detail::ew_op(a, b, detail::EwKind::add); }
inline Var sub(Var a, Var b) { return detail::ew_op(a, b, detail::EwKind::sub); }
inline Var mul(Var a, Var b) { return detail::ew_op(a, b, detail::EwKind::mul); }

inline Var scale(Var x, double c) {
    return detail::unary_op(x, [c](double v) { return c * v; },
                            [c](double, double g) { return c * g; });
}

inline Var relu(Var x) {
    return detail::unary_op(x, [](double v) { return v > 0.0 ? v : 0.0; },
                            [](double v, double g) { return v > 0.0 ? g : 0.0; });
}

/// abs'(0) = 0: the symmetric subgradient choice.
inline Var abs(Var x) {
    return detail::unary_op(x, [](double v) { return std::abs(v); },
                            [](double v, double g) { return v > 0.0 ? g : (v < 0.0 ? -g : 0.0); });
}

inline Var exp(Var x) {
    return detail::unary_op(x, [](double v) { return std::exp(v); },
                            [](double v, double g) { return std::exp(v) * g; });
}

inline Var log(Var x) {
    return detail::unary_op(x, [](double v) { return std::log(v); },
                            [](double v, double g) { return g / v; });
}

inline Var sigmoid(Var x) {
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    return detail::unary_op(x, sig, [sig](double v, double g) {
        const double s = sig(v);
        return s * (1.0 - s) * g;
    });
}

/// C = op(A) op(B) with optional transposes (row-major gemm underneath).
inline Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
    Tape& t = *a.tape;
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2) throw ShapeMismatch("matmul: rank-2 tensors required");
    const std::size_t n = ta ? av.cols() : av.rows();
    const std::size_t k = ta ? av.rows() : av.cols();
    const std::size_t kb = tb ? bv.cols() : bv.rows();
    const std::size_t p = tb ? bv.rows() : bv.cols();
    if (k != kb) throw ShapeMismatch("matmul: inner dimensions do not match");
    Tensor out = Tensor::zeros({n, p});
    linalg::gemm(av.data.data(), av.rows(), av.cols(), ta,
                 bv.data.data(), bv.rows(), bv.cols(), tb, out.data.data());
    const int aid = a.id, bid = b.id;
    int id = t.make_node(std::move(out), {aid, bid}, [aid, bid, ta, tb](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& av2 = tp.value(aid);
        const Tensor& bv2 = tp.value(bid);
        if (tp.needs_grad(aid)) {
            Tensor& ga = tp.grad_buffer(aid);
            // dA for C = op(A) op(B)
            if (!ta) {
                // dA = g op(B)^T
                linalg::gemm(g.data.data(), g.rows(), g.cols(), false,
                             bv2.data.data(), bv2.rows(), bv2.cols(), !tb,
                             ga.data.data(), true);
            } else {
                // dA = op(B) g^T
                linalg::gemm(bv2.data.data(), bv2.rows(), bv2.cols(), tb,
                             g.data.data(), g.rows(), g.cols(), true,
                             ga.data.data(), true);
            }
        }
        if (tp.needs_grad(bid)) {
            Tensor& gb = tp.grad_buffer(bid);
            if (!tb) {
                // dB = op(A)^T g
                linalg::gemm(av2.data.data(), av2.rows(), av2.cols(), !ta,
                             g.data.data(), g.rows(), g.cols(), false,
                             gb.data.data(), true);
            } else {
                // dB = g^T op(A)
                linalg::gemm(g.data.data(), g.rows(), g.cols(), true,
                             av2.data.data(), av2.rows(), av2.cols(), ta,
                             gb.data.data(), true);
            }
        }
    });
    return Var{&t, id};
}

inline Var sum_all(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    double s = 0.0;
    for (double v : xv.data) s += v;
    const int xid = x.id;
    int id = t.make_node(Tensor::scalar(s), {xid}, [xid](Tape& tp, int self) {
        if (!tp.needs_grad(xid)) return;
        const double g = tp.grad(self).data[0];
        Tensor& gx = tp.grad_buffer(xid);
        for (double& v : gx.data) v += g;
    });
    return Var{&t, id};
}

inline Var mean_all(Var x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.value().numel())); }

/// Row-wise softmax with max-subtraction. Rows sum to one.
inline Var softmax(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    if (xv.rank() != 2) throw ShapeMismatch("softmax: rank-2 tensor required");
    const std::size_t n = xv.rows(), m = xv.cols();
    if (m < 1) throw ShapeMismatch("softmax: empty rows");
    Tensor out = Tensor::zeros(xv.shape);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = xv(i, 0);
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, xv(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            out(i, j) = std::exp(xv(i, j) - mx);
            z += out(i, j);
        }
        for (std::size_t j = 0; j < m; ++j) out(i, j) /= z;
    }
    const int xid = x.id;
    int id = t.make_node(std::move(out), {xid}, [xid, n, m](Tape& tp, int self) {
        if (!tp.needs_grad(xid)) return;
        const Tensor& g = tp.grad(self);
        const Tensor& y = tp.value(self);
        Tensor& gx = tp.grad_buffer(xid);
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) dot += g(i, j) * y(i, j);
            for (std::size_t j = 0; j < m; ++j) gx(i, j) += y(i, j) * (g(i, j) - dot);
        }
    });
    return Var{&t, id};
}

/// Batch normalization over the feature axis of a [n x f] activation, with a
/// variance floor: the divisor is sqrt(max(var, eps)), so an already
/// standardized batch passes through unchanged and a constant feature maps to
/// the shift parameter. Training mode uses batch statistics and updates the
/// running estimates; eval mode uses the running estimates.
inline Var batch_norm(Var x, Var gamma, Var beta, BNState& state, bool training) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    if (xv.rank() != 2) throw ShapeMismatch("batch_norm: rank-2 input required");
    const std::size_t n = xv.rows(), f = xv.cols();
    if (gamma.value().numel() != f || beta.value().numel() != f) {
        throw ShapeMismatch("batch_norm: parameter size != feature count");
    }
    if (training && n < 2) throw DegenerateBatch("batch_norm: training needs n >= 2");

    Tensor mean({f}, std::vector<double>(f, 0.0));
    Tensor var({f}, std::vector<double>(f, 0.0));
    if (training) {
        for (std::size_t j = 0; j < f; ++j) {
            double mu = 0.0;
            for (std::size_t i = 0; i < n; ++i) mu += xv(i, j);
            mu /= static_cast<double>(n);
            double v = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double c = xv(i, j) - mu;
                v += c * c;
            }
            mean.data[j] = mu;
            var.data[j] = v / static_cast<double>(n);  // biased, used for normalization
            const double unbiased = v / static_cast<double>(n - 1);
            state.running_mean.data[j] = (1.0 - state.momentum) * state.running_mean.data[j] + state.momentum * mu;
            state.running_var.data[j] = (1.0 - state.momentum) * state.running_var.data[j] + state.momentum * unbiased;
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    const double eps = state.eps;
    Tensor xhat = Tensor::zeros(xv.shape);
    Tensor out = Tensor::zeros(xv.shape);
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    for (std::size_t j = 0; j < f; ++j) {
        const double inv = 1.0 / std::sqrt(std::max(var.data[j], eps));
        for (std::size_t i = 0; i < n; ++i) {
            xhat(i, j) = (xv(i, j) - mean.data[j]) * inv;
            out(i, j) = gv.data[j] * xhat(i, j) + bv.data[j];
        }
    }

    const int xid = x.id, gid = gamma.id, bid = beta.id;
    int id = t.make_node(std::move(out), {xid, gid, bid},
                         [xid, gid, bid, n, f, eps, training, xhat, var](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& gv2 = tp.value(gid);
        if (tp.needs_grad(gid)) {
            Tensor& gg = tp.grad_buffer(gid);
            for (std::size_t j = 0; j < f; ++j) {
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) s += g(i, j) * xhat(i, j);
                gg.data[j] += s;
            }
        }
        if (tp.needs_grad(bid)) {
            Tensor& gb = tp.grad_buffer(bid);
            for (std::size_t j = 0; j < f; ++j) {
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) s += g(i, j);
                gb.data[j] += s;
            }
        }
        if (tp.needs_grad(xid)) {
            Tensor& gx = tp.grad_buffer(xid);
            for (std::size_t j = 0; j < f; ++j) {
                const bool floored = var.data[j] <= eps;
                const double inv = 1.0 / std::sqrt(std::max(var.data[j], eps));
                if (training) {
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        sum_g += g(i, j);
                        sum_gx += g(i, j) * xhat(i, j);
                    }
                    const double mg = sum_g / static_cast<double>(n);
                    const double mgx = sum_gx / static_cast<double>(n);
                    for (std::size_t i = 0; i < n; ++i) {
                        // on the floored branch the divisor is locally constant
                        const double through_var = floored ? 0.0 : xhat(i, j) * mgx;
                        gx(i, j) += gv2.data[j] * inv * (g(i, j) - mg - through_var);
                    }
                } else {
                    for (std::size_t i = 0; i < n; ++i) gx(i, j) += gv2.data[j] * inv * g(i, j);
                }
            }
        }
    });
    return Var{&t, id};
}

/// Max relative error between the analytic gradient of a scalar function and
/// central finite differences: max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
inline double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h = 1e-5) {
    Tape t;
    Var xv = make_leaf(t, x, true);
    Var y = f(t, xv);
    if (y.value().numel() != 1) throw ShapeMismatch("grad_check: f must be scalar-valued");
    t.backward(y.id);
    const Tensor analytic = xv.grad();

    double max_err = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        Tensor xp = x, xm = x;
        xp.data[i] += h;
        xm.data[i] -= h;
        Tape tp, tm;
        const double fp = f(tp, make_leaf(tp, xp, false)).value().data[0];
        const double fm = f(tm, make_leaf(tm, xm, false)).value().data[0];
        const double numeric = (fp - fm) / (2.0 * h);
        const double err = std::abs(analytic.data[i] - numeric) / std::max(1.0, std::abs(analytic.data[i]));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace conecraft::tensorkit
