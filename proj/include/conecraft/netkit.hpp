#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "conecraft/common.hpp"
#include "conecraft/polyhedra.hpp"
#include "conecraft/rng.hpp"
#include "conecraft/tensor.hpp"

namespace conecraft::netkit {

using tensorkit::BNState;
using tensorkit::Tape;
using tensorkit::Tensor;
using tensorkit::Var;
using tensorkit::make_leaf;

struct LinearLayer {
    Tensor weight;  // out x in
    Tensor bias;    // out

    static LinearLayer init(std::size_t in, std::size_t out, Rng& rng, bool zero_bias = false) {
        LinearLayer l;
        l.weight = Tensor::zeros({out, in});
        l.bias = Tensor::zeros({out});
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        for (double& v : l.weight.data) v = rng.uniform(-bound, bound);
        if (!zero_bias) {
            for (double& v : l.bias.data) v = rng.uniform(-bound, bound);
        }
        return l;
    }

    std::size_t in_dim() const { return weight.cols(); }
    std::size_t out_dim() const { return weight.rows(); }
};

/// x [n x in] -> x W^T + b, the usual fully-connected forward.
inline Var linear_forward(Tape& t, Var x, Var w, Var b) {
    return add(matmul(x, w, false, true), b);
}

/// Per-row unit-box scaling x / max(||x||_inf, 1), differentiable through
/// both numerator and denominator. Rows already inside the box (including the
/// tie ||x||_inf = 1) take the identity branch.
inline Var box_scale(Var z) {
    Tape& t = *z.tape;
    const Tensor& zv = z.value();
    if (zv.rank() != 2) throw ShapeMismatch("box_scale: rank-2 input required");
    const std::size_t n = zv.rows(), d = zv.cols();
    Tensor out = Tensor::zeros(zv.shape);
    std::vector<double> denom(n, 1.0);
    std::vector<std::size_t> arg(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        double m = 0.0;
        std::size_t jm = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const double a = std::abs(zv(i, j));
            if (a > m) {
                m = a;
                jm = j;
            }
        }
        denom[i] = std::max(m, 1.0);
        arg[i] = jm;
        for (std::size_t j = 0; j < d; ++j) out(i, j) = zv(i, j) / denom[i];
    }
    const int zid = z.id;
    int id = t.make_node(std::move(out), {zid}, [zid, n, d, denom, arg](Tape& tp, int self) {
        if (!tp.needs_grad(zid)) return;
        const Tensor& g = tp.grad(self);
        const Tensor& zv2 = tp.value(zid);
        Tensor& gz = tp.grad_buffer(zid);
        for (std::size_t i = 0; i < n; ++i) {
            const double m = denom[i];
            for (std::size_t j = 0; j < d; ++j) gz(i, j) += g(i, j) / m;
            if (m > 1.0) {
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) dot += g(i, j) * zv2(i, j);
                const double s = zv2(i, arg[i]) >= 0.0 ? 1.0 : -1.0;
                gz(i, arg[i]) -= s * dot / (m * m);
            }
        }
    });
    return Var{&t, id};
}

/// The feasible-set parameterization layer: batch norm, affine map, absolute
/// value, then a fixed conical combination of the cone's generators. Output
/// rows satisfy A z <= eps_layer for any parameter values; with box_active
/// they additionally lie in the unit box.
struct ConstraintLayer {
    Tensor rays;  // d x n_r expanded generators, fixed
    polyhedra::HRep hrep;
    BNState bn;
    LinearLayer affine;  // in -> n_r
    bool box_active = false;
    double eps_layer = 0.0;

    std::size_t in_dim() const { return affine.in_dim(); }
    std::size_t out_dim() const { return rays.rows(); }
    std::size_t n_r() const { return rays.cols(); }

    static ConstraintLayer create(const polyhedra::HRep& h, const polyhedra::VRep& v,
                                  std::size_t in_dim, Rng& rng,
                                  const polyhedra::ToleranceConfig& tol = {}) {
        ConstraintLayer layer;
        layer.hrep = h;
        const Eigen::MatrixXd g = polyhedra::expand_generators(v);
        if (v.dim != h.d()) throw DimensionMismatch("ConstraintLayer: HRep/VRep dimension mismatch");
        // every generator column must satisfy the source system
        if (h.m() > 0 && g.cols() > 0) {
            const double a_max = h.a.cwiseAbs().maxCoeff();
            for (Eigen::Index j = 0; j < g.cols(); ++j) {
                const double viol = (h.a * g.col(j)).maxCoeff();
                if (viol > tol.eps_feas * std::max(g.col(j).cwiseAbs().maxCoeff() * a_max,
                                                   std::numeric_limits<double>::min())) {
                    throw Error("ConstraintLayer: generator violates the source system");
                }
            }
        }
        layer.rays = Tensor::zeros({static_cast<std::size_t>(g.rows()), static_cast<std::size_t>(g.cols())});
        for (Eigen::Index i = 0; i < g.rows(); ++i)
            for (Eigen::Index j = 0; j < g.cols(); ++j)
                layer.rays(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = g(i, j);
        layer.bn = BNState::create(in_dim);
        layer.affine = LinearLayer::init(in_dim, static_cast<std::size_t>(g.cols()), rng, /*zero_bias=*/true);
        layer.eps_layer = 1e-8 * static_cast<double>(g.cols());
        return layer;
    }

    std::vector<Tensor*> params() {
        return {&affine.weight, &affine.bias, &bn.gamma, &bn.beta};
    }

    struct Bound {
        Var weight, bias, gamma, beta;
    };

    Bound bind(Tape& t, bool requires_grad = true) {
        return Bound{make_leaf(t, affine.weight, requires_grad), make_leaf(t, affine.bias, requires_grad),
                     make_leaf(t, bn.gamma, requires_grad), make_leaf(t, bn.beta, requires_grad)};
    }

    /// z = rays . |affine(batch_norm(a))| per row, box-scaled when active.
    Var forward(Tape& t, Var input, const Bound& p, bool training) {
        Var normed = batch_norm(input, p.gamma, p.beta, bn, training);
        Var pre = linear_forward(t, normed, p.weight, p.bias);
        Var coeff = tensorkit::abs(pre);
        Var raysv = make_leaf(t, rays, false);
        Var z = matmul(coeff, raysv, false, true);  // [n x n_r] [n_r x d]
        if (box_active) z = box_scale(z);
        return z;
    }

    /// Max violation max_i max_row (A z_i) of a forward output; the layer
    /// invariant keeps this below eps_layer.
    double max_violation(const Tensor& z) const {
        if (hrep.m() == 0) return 0.0;
        double worst = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < z.rows(); ++i) {
            const Eigen::VectorXd zi = linalg::map(z.data.data() + i * z.cols(), z.cols(), 1).col(0);
            worst = std::max(worst, (hrep.a * zi).maxCoeff());
        }
        return worst;
    }
};

/// Convenience free-function form of the layer forward.
inline Var constraint_forward(ConstraintLayer& layer, Tape& t, Var input,
                              const ConstraintLayer::Bound& p, bool training) {
    return layer.forward(t, input, p, training);
}

/// General polyhedron: convex combination of vertices (via softmax) plus
/// conical combination of rays (via absolute value).
inline Var general_polyhedron_combine(Tape& t, const Tensor& vertices, const Tensor& rays,
                                      Var lambda_logits, Var mu_pre) {
    if (vertices.cols() < 1) throw ShapeMismatch("general_polyhedron_combine: need n >= 1 vertices");
    Var v = make_leaf(t, vertices, false);
    Var lambda = tensorkit::softmax(lambda_logits);
    Var out = matmul(lambda, v, false, true);
    if (rays.numel() > 0 && mu_pre.value().numel() > 0) {
        Var r = make_leaf(t, rays, false);
        Var mu = tensorkit::abs(mu_pre);
        out = add(out, matmul(mu, r, false, true));
    }
    return out;
}

/// Adam with bias correction; moment buffers are laid out parallel to the
/// parameter list passed at init.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    static AdamState create(const std::vector<Tensor*>& params) {
        AdamState s;
        for (const Tensor* p : params) {
            s.m.push_back(Tensor::zeros(p->shape));
            s.v.push_back(Tensor::zeros(p->shape));
        }
        return s;
    }
};

inline void adam_step(AdamState& st, const std::vector<Tensor*>& params,
                      const std::vector<const Tensor*>& grads, double lr) {
    if (params.size() != grads.size() || params.size() != st.m.size()) {
        throw ShapeMismatch("adam_step: parameter/gradient/state count mismatch");
    }
    ++st.step;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& g = *grads[k];
        if (!p.same_shape(g)) throw ShapeMismatch("adam_step: gradient shape mismatch");
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double gi = g.data[i];
            st.m[k].data[i] = st.beta1 * st.m[k].data[i] + (1.0 - st.beta1) * gi;
            st.v[k].data[i] = st.beta2 * st.v[k].data[i] + (1.0 - st.beta2) * gi * gi;
            const double mh = st.m[k].data[i] / bc1;
            const double vh = st.v[k].data[i] / bc2;
            p.data[i] -= lr * mh / (std::sqrt(vh) + st.eps);
        }
    }
}

/// Anneal the learning rate by `factor` once the validation loss has failed
/// to improve for more than `patience` consecutive calls.
struct PlateauScheduler {
    double factor = 0.1;
    std::size_t patience = 5;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t stagnation = 0;

    double step(double val_loss, double lr) {
        if (val_loss < best_val - 1e-12) {
            best_val = val_loss;
            stagnation = 0;
            return lr;
        }
        if (++stagnation > patience) {
            stagnation = 0;
            return lr * factor;
        }
        return lr;
    }
};

}  // namespace conecraft::netkit
