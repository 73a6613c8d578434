#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstddef>
#include <limits>
#include <vector>

namespace conecraft {

struct NnlsResult {
    Eigen::VectorXd x;       // nonnegative coefficients
    double residual = 0.0;   // ||G x - z||_2
    bool converged = true;
    std::size_t iterations = 0;
};

/// Lawson-Hanson active set method for  min ||G x - z||_2  s.t.  x >= 0.
///
/// Solves the passive-set least squares subproblem with a column-pivoted QR
/// each outer iteration; fine for the problem sizes used here (up to a few
/// thousand columns with small passive sets).
inline NnlsResult nnls(const Eigen::MatrixXd& g, const Eigen::VectorXd& z,
                       std::size_t max_iter = 0) {
    const Eigen::Index n = g.cols();
    NnlsResult r;
    r.x = Eigen::VectorXd::Zero(n);
    if (n == 0 || g.rows() == 0) {
        r.residual = z.norm();
        return r;
    }
    if (max_iter == 0) max_iter = 3 * static_cast<std::size_t>(n) + 30;

    std::vector<bool> passive(static_cast<std::size_t>(n), false);
    std::vector<Eigen::Index> pidx;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd w(n);

    const double wtol = 10.0 * std::numeric_limits<double>::epsilon() *
                        g.cwiseAbs().maxCoeff() * z.cwiseAbs().maxCoeff() *
                        static_cast<double>(g.rows()) + 1e-14;

    auto solve_passive = [&](const std::vector<Eigen::Index>& idx) {
        Eigen::MatrixXd gp(g.rows(), static_cast<Eigen::Index>(idx.size()));
        for (std::size_t j = 0; j < idx.size(); ++j) gp.col(static_cast<Eigen::Index>(j)) = g.col(idx[j]);
        return Eigen::VectorXd(gp.colPivHouseholderQr().solve(z));
    };

    std::size_t iter = 0;
    while (iter < max_iter) {
        w = g.transpose() * (z - g * x);
        Eigen::Index best = -1;
        double best_w = wtol;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (!passive[static_cast<std::size_t>(j)] && w[j] > best_w) {
                best_w = w[j];
                best = j;
            }
        }
        if (best < 0) break;  // KKT satisfied
        passive[static_cast<std::size_t>(best)] = true;
        pidx.push_back(best);

        // Inner loop: keep the passive solution feasible.
        while (true) {
            ++iter;
            Eigen::VectorXd s = solve_passive(pidx);
            double alpha = 1.0;
            bool all_pos = true;
            for (std::size_t j = 0; j < pidx.size(); ++j) {
                if (s[static_cast<Eigen::Index>(j)] <= 0.0) {
                    all_pos = false;
                    const double xj = x[pidx[j]];
                    const double denom = xj - s[static_cast<Eigen::Index>(j)];
                    if (denom > 0.0) alpha = std::min(alpha, xj / denom);
                }
            }
            if (all_pos) {
                x.setZero();
                for (std::size_t j = 0; j < pidx.size(); ++j) x[pidx[j]] = s[static_cast<Eigen::Index>(j)];
                break;
            }
            for (std::size_t j = 0; j < pidx.size(); ++j) {
                const double sj = s[static_cast<Eigen::Index>(j)];
                x[pidx[j]] += alpha * (sj - x[pidx[j]]);
            }
            // Drop variables that hit zero.
            std::vector<Eigen::Index> keep;
            for (Eigen::Index jj : pidx) {
                if (x[jj] > 1e-14) {
                    keep.push_back(jj);
                } else {
                    x[jj] = 0.0;
                    passive[static_cast<std::size_t>(jj)] = false;
                }
            }
            pidx = std::move(keep);
            if (pidx.empty()) break;
            if (iter >= max_iter) break;
        }
    }

    r.x = x;
    r.residual = (g * x - z).norm();
    r.iterations = iter;
    r.converged = iter < max_iter;
    return r;
}

/// True iff z lies in the conical hull of the columns of g, up to rel_tol.
inline bool in_conical_hull(const Eigen::MatrixXd& g, const Eigen::VectorXd& z,
                            double rel_tol = 1e-8) {
    const double zn = z.norm();
    if (zn == 0.0) return true;
    return nnls(g, z).residual <= rel_tol * zn;
}

}  // namespace conecraft
