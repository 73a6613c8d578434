#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <thread>
#include <vector>

#include "conecraft/common.hpp"
#include "conecraft/nnls.hpp"
#include "conecraft/polyhedra.hpp"
#include "conecraft/tensor.hpp"

namespace conecraft::projector {

/// Orthogonal projection onto a single half-space a . z <= 0.
inline Eigen::VectorXd project_halfspace(const Eigen::VectorXd& a, const Eigen::VectorXd& z) {
    const double nn = a.squaredNorm();
    if (nn == 0.0) throw ZeroRow("project_halfspace: zero normal vector");
    const double v = a.dot(z);
    if (v <= 0.0) return z;
    return z - (v / nn) * a;
}

struct ProjectionProblem {
    polyhedra::HRep h;
    bool box = false;  // intersect with the unit box [-1, 1]^d
    Eigen::VectorXd y;
    double tol = 1e-8;        // per-cycle max displacement
    std::size_t max_iter = 10000;  // cycles
};

struct ProjectionResult {
    Eigen::VectorXd z;
    std::size_t cycles = 0;
    double residual = 0.0;  // worst constraint violation of z
    bool converged = false;
};

namespace detail {

inline double violation(const polyhedra::HRep& h, bool box, const Eigen::VectorXd& z) {
    double v = 0.0;
    if (h.m() > 0) v = std::max(v, (h.a * z).maxCoeff());
    if (box) v = std::max(v, z.cwiseAbs().maxCoeff() - 1.0);
    return v;
}

/// Exact-termination attempt: read a candidate active set off the current
/// iterate, project onto the corresponding affine set, and accept only with a
/// full KKT certificate (feasibility plus y - z in the cone of the active
/// normals). Halfspace intersections make Dykstra identify the active set in
/// finitely many cycles, but the tail contraction can creep when normals are
/// nearly parallel; the certified solve ends those instances exactly.
inline std::optional<Eigen::VectorXd> certified_finish(const ProjectionProblem& p,
                                                       const Eigen::VectorXd& x) {
    const Eigen::Index m = p.h.m();
    const Eigen::Index d = p.y.size();
    const double yscale = std::max(1.0, p.y.norm());

    for (const double act : {1e-10, 1e-8, 1e-6, 1e-4}) {
        std::vector<Eigen::VectorXd> normals;
        std::vector<double> rhs;
        for (Eigen::Index i = 0; i < m; ++i) {
            if (std::abs(p.h.a.row(i).dot(x)) <= act * p.h.a.row(i).norm() * yscale) {
                normals.push_back(p.h.a.row(i).transpose());
                rhs.push_back(0.0);
            }
        }
        if (p.box) {
            for (Eigen::Index j = 0; j < d; ++j) {
                if (std::abs(std::abs(x[j]) - 1.0) <= act * yscale) {
                    Eigen::VectorXd e = Eigen::VectorXd::Zero(d);
                    e[j] = x[j] >= 0.0 ? 1.0 : -1.0;
                    normals.push_back(e);
                    rhs.push_back(1.0);
                }
            }
        }

        Eigen::VectorXd z;
        if (normals.empty()) {
            z = p.y;
        } else {
            Eigen::MatrixXd c(static_cast<Eigen::Index>(normals.size()), d);
            Eigen::VectorXd b(static_cast<Eigen::Index>(normals.size()));
            for (std::size_t k = 0; k < normals.size(); ++k) {
                c.row(static_cast<Eigen::Index>(k)) = normals[k].transpose();
                b[static_cast<Eigen::Index>(k)] = rhs[k];
            }
            const Eigen::VectorXd lambda =
                (c * c.transpose()).completeOrthogonalDecomposition().solve(c * p.y - b);
            z = p.y - c.transpose() * lambda;
            if ((c * z - b).cwiseAbs().maxCoeff() > 1e-10 * yscale) continue;  // inconsistent set
        }

        if (violation(p.h, p.box, z) > 1e-11 * yscale) continue;
        const Eigen::VectorXd resid = p.y - z;
        if (resid.norm() <= 1e-12 * yscale) return z;  // y itself is feasible
        if (normals.empty()) continue;
        Eigen::MatrixXd nm(d, static_cast<Eigen::Index>(normals.size()));
        for (std::size_t k = 0; k < normals.size(); ++k) nm.col(static_cast<Eigen::Index>(k)) = normals[k];
        if (nnls(nm, resid).residual <= 1e-9 * resid.norm()) return z;
    }
    return std::nullopt;
}

}  // namespace detail

/// Dykstra's cyclic projection scheme over the m half-spaces, with the box
/// clamp as one additional set (ordered last) when requested. Converges to
/// the orthogonal projection onto the intersection.
inline ProjectionResult dykstra_project(const ProjectionProblem& p) {
    if (p.y.size() != p.h.d() && p.h.m() > 0) {
        throw DimensionMismatch("dykstra_project: target dimension mismatch");
    }
    const Eigen::Index m = p.h.m();
    const Eigen::Index d = p.y.size();
    const std::size_t n_sets = static_cast<std::size_t>(m) + (p.box ? 1 : 0);

    ProjectionResult out;
    out.z = p.y;
    if (n_sets == 0) {
        out.converged = true;
        return out;
    }

    Eigen::VectorXd row_sqnorm(m);
    for (Eigen::Index i = 0; i < m; ++i) row_sqnorm[i] = p.h.a.row(i).squaredNorm();

    Eigen::MatrixXd corr = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_sets), d);
    Eigen::VectorXd x = p.y;
    Eigen::VectorXd u(d), xn(d);

    // Convergence is linear; alongside the raw per-cycle displacement we
    // bound the remaining distance to the limit by disp * rho / (1 - rho)
    // with rho estimated from consecutive cycles, so slowly contracting
    // instances are not declared done early. Every few cycles a certified
    // active-set solve attempts exact termination.
    double prev_disp = -1.0;
    for (std::size_t cycle = 1; cycle <= p.max_iter; ++cycle) {
        double max_disp = 0.0;
        for (std::size_t s = 0; s < n_sets; ++s) {
            u = x + corr.row(static_cast<Eigen::Index>(s)).transpose();
            if (s < static_cast<std::size_t>(m)) {
                const Eigen::Index i = static_cast<Eigen::Index>(s);
                const double v = p.h.a.row(i).dot(u);
                if (v > 0.0) {
                    xn = u - (v / row_sqnorm[i]) * p.h.a.row(i).transpose();
                } else {
                    xn = u;
                }
            } else {
                xn = u.cwiseMax(-1.0).cwiseMin(1.0);
            }
            corr.row(static_cast<Eigen::Index>(s)) = (u - xn).transpose();
            max_disp = std::max(max_disp, (xn - x).norm());
            x = xn;
        }
        out.cycles = cycle;
        bool want_finish = cycle % 16 == 0 || cycle == p.max_iter;
        if (max_disp < p.tol) {
            double est = max_disp;
            if (max_disp > 0.0 && prev_disp > 0.0) {
                const double rho = std::min(max_disp / prev_disp, 0.9999);
                est = max_disp * rho / (1.0 - rho);
            }
            if (est < p.tol) {
                out.converged = true;
                break;
            }
            want_finish = true;
        }
        if (want_finish) {
            if (auto z = detail::certified_finish(p, x)) {
                x = *z;
                out.converged = true;
                break;
            }
        }
        prev_disp = max_disp;
    }
    out.z = x;
    out.residual = detail::violation(p.h, p.box, x);
    return out;
}

struct BatchProjectReport {
    tensorkit::Tensor z;                          // projected rows
    std::vector<std::size_t> not_converged_rows;  // flagged rows
    std::size_t total_cycles = 0;
};

/// Row-wise Dykstra projection. Rows are independent; with threads > 1 they
/// are partitioned into contiguous blocks with results written to disjoint
/// slots, so the output does not depend on the schedule.
inline BatchProjectReport project_batch(const polyhedra::HRep& h, bool box,
                                        const tensorkit::Tensor& ys, double tol = 1e-8,
                                        std::size_t max_iter = 10000, std::size_t threads = 1) {
    if (ys.rank() != 2) throw ShapeMismatch("project_batch: rank-2 input required");
    const std::size_t n = ys.rows(), d = ys.cols();
    if (h.m() > 0 && static_cast<std::size_t>(h.d()) != d) {
        throw DimensionMismatch("project_batch: dimension mismatch");
    }

    BatchProjectReport rep;
    rep.z = tensorkit::Tensor::zeros(ys.shape);
    std::vector<std::size_t> cycles(n, 0);
    std::vector<char> failed(n, 0);

    auto work = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            ProjectionProblem p;
            p.h = h;
            p.box = box;
            p.tol = tol;
            p.max_iter = max_iter;
            p.y.resize(static_cast<Eigen::Index>(d));
            for (std::size_t j = 0; j < d; ++j) p.y[static_cast<Eigen::Index>(j)] = ys(i, j);
            ProjectionResult r = dykstra_project(p);
            for (std::size_t j = 0; j < d; ++j) rep.z(i, j) = r.z[static_cast<Eigen::Index>(j)];
            cycles[i] = r.cycles;
            failed[i] = r.converged ? 0 : 1;
        }
    };

    threads = std::max<std::size_t>(1, std::min(threads, n == 0 ? 1 : n));
    if (threads == 1) {
        work(0, n);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (n + threads - 1) / threads;
        for (std::size_t t = 0; t < threads; ++t) {
            const std::size_t lo = t * chunk;
            const std::size_t hi = std::min(n, lo + chunk);
            if (lo < hi) pool.emplace_back(work, lo, hi);
        }
        for (auto& th : pool) th.join();
    }

    for (std::size_t i = 0; i < n; ++i) {
        rep.total_cycles += cycles[i];
        if (failed[i]) rep.not_converged_rows.push_back(i);
    }
    return rep;
}

}  // namespace conecraft::projector
