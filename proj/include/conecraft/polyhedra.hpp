#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "conecraft/common.hpp"
#include "conecraft/nnls.hpp"
#include "conecraft/rng.hpp"

namespace conecraft::polyhedra {

struct ToleranceConfig {
    double eps_class = 1e-9;   // sign classification, scaled by row norm
    double eps_feas = 1e-9;    // generator feasibility, scaled by ||g||_inf * ||A||_max
    double eps_orth = 1e-10;   // lineality orthonormality
    double eps_rank = 1e-10;   // numerical rank cutoff, relative to sigma_max
    double eps_complete = 1e-6;  // NNLS relative residual for completeness
};

/// Half-space representation of the homogeneous system  A z <= 0.
/// Canonicalization drops all-zero rows; entries must be finite.
struct HRep {
    Eigen::MatrixXd a;  // m x d

    HRep() = default;

    explicit HRep(const Eigen::MatrixXd& a_in) {
        if (!a_in.allFinite()) throw Error("HRep: non-finite entries");
        std::vector<Eigen::Index> keep;
        for (Eigen::Index i = 0; i < a_in.rows(); ++i) {
            if (a_in.row(i).cwiseAbs().maxCoeff() > 0.0) keep.push_back(i);
        }
        a.resize(static_cast<Eigen::Index>(keep.size()), a_in.cols());
        for (std::size_t i = 0; i < keep.size(); ++i) a.row(static_cast<Eigen::Index>(i)) = a_in.row(keep[i]);
    }

    Eigen::Index m() const { return a.rows(); }
    Eigen::Index d() const { return a.cols(); }
};

/// Generator representation: cone = { R mu + L nu | mu >= 0, nu free }.
struct VRep {
    Eigen::MatrixXd rays;       // d x n_pointed, unit columns
    Eigen::MatrixXd lineality;  // d x n_lin, orthonormal columns
    Eigen::Index dim = 0;

    Eigen::Index n_pointed() const { return rays.cols(); }
    Eigen::Index n_lin() const { return lineality.cols(); }
    Eigen::Index n_expanded() const { return rays.cols() + 2 * lineality.cols(); }
};

/// Materialize the +-lineality convention: columns [rays | +L | -L], so the
/// cone is exactly the nonnegative span of the columns.
inline Eigen::MatrixXd expand_generators(const VRep& v) {
    Eigen::MatrixXd g(v.dim, v.n_expanded());
    g.leftCols(v.rays.cols()) = v.rays;
    g.middleCols(v.rays.cols(), v.lineality.cols()) = v.lineality;
    g.rightCols(v.lineality.cols()) = -v.lineality;
    return g;
}

struct SplitResult {
    Eigen::MatrixXd lineality_basis;  // d x n_lin, orthonormal basis of ker(A)
    HRep reduced;                     // m x r system on the orthogonal complement
    Eigen::MatrixXd lift_map;         // d x r, orthonormal; maps reduced rays back
};

/// Split ker(A) off so the core iteration runs on a pointed cone.
inline SplitResult split_lineality(const HRep& h, const ToleranceConfig& tol = {}) {
    SplitResult out;
    const Eigen::Index d = h.d();
    if (h.m() == 0) {
        out.lineality_basis = Eigen::MatrixXd::Identity(d, d);
        out.reduced.a.resize(0, 0);
        out.lift_map.resize(d, 0);
        return out;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(h.a, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double cutoff = tol.eps_rank * sv[0];
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        if (sv[i] > cutoff) ++r;
    }
    const Eigen::MatrixXd& v = svd.matrixV();  // d x d
    out.lift_map = v.leftCols(r);
    out.lineality_basis = v.rightCols(d - r);
    out.reduced.a = h.a * out.lift_map;  // m x r, preserves row norms
    return out;
}

namespace detail {

using ActiveSet = std::vector<std::uint64_t>;

inline void set_bit(ActiveSet& s, std::size_t i) {
    const std::size_t w = i / 64;
    if (w >= s.size()) s.resize(w + 1, 0);
    s[w] |= (std::uint64_t{1} << (i % 64));
}

inline ActiveSet intersect(const ActiveSet& a, const ActiveSet& b) {
    ActiveSet r(std::min(a.size(), b.size()), 0);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = a[i] & b[i];
    return r;
}

/// a contains b (as sets).
inline bool contains(const ActiveSet& a, const ActiveSet& b) {
    for (std::size_t i = 0; i < b.size(); ++i) {
        const std::uint64_t aw = i < a.size() ? a[i] : 0;
        if ((b[i] & ~aw) != 0) return false;
    }
    return true;
}

}  // namespace detail

/// A double description pair mid-iteration: `processed` rows define the cone
/// generated by the (pointed) unit columns of `gens`; `active[j]` is the set
/// of processed rows generator j satisfies with equality.
struct DDPair {
    Eigen::MatrixXd processed;               // k x d'
    Eigen::MatrixXd gens;                    // d' x n
    std::vector<detail::ActiveSet> active;   // size n

    Eigen::Index k() const { return processed.rows(); }
    Eigen::Index n() const { return gens.cols(); }

    /// Build a pair from explicit generators, classifying tightness numerically.
    static DDPair from_generators(const Eigen::MatrixXd& processed_rows,
                                  const Eigen::MatrixXd& generators,
                                  const ToleranceConfig& tol = {}) {
        DDPair p;
        p.processed = processed_rows;
        p.gens = generators;
        for (Eigen::Index j = 0; j < p.gens.cols(); ++j) {
            const double nj = p.gens.col(j).norm();
            if (nj > 0) p.gens.col(j) /= nj;
        }
        p.active.resize(static_cast<std::size_t>(p.gens.cols()));
        for (Eigen::Index j = 0; j < p.gens.cols(); ++j) {
            for (Eigen::Index i = 0; i < p.processed.rows(); ++i) {
                const double thr = tol.eps_class * p.processed.row(i).norm();
                if (std::abs(p.processed.row(i).dot(p.gens.col(j))) <= thr) {
                    detail::set_bit(p.active[static_cast<std::size_t>(j)], static_cast<std::size_t>(i));
                }
            }
        }
        return p;
    }
};

/// Combinatorial adjacency: generators i and j span a 2-face iff no third
/// generator's active set contains active(i) & active(j).
inline bool adjacency_test(const DDPair& pair, Eigen::Index i, Eigen::Index j) {
    const auto common = detail::intersect(pair.active[static_cast<std::size_t>(i)],
                                          pair.active[static_cast<std::size_t>(j)]);
    for (Eigen::Index t = 0; t < pair.n(); ++t) {
        if (t == i || t == j) continue;
        if (detail::contains(pair.active[static_cast<std::size_t>(t)], common)) return false;
    }
    return true;
}

struct DDStats {
    std::size_t degenerate_classifications = 0;
    std::size_t max_intermediate_generators = 0;
    std::size_t insertions = 0;
};

/// One iteration of the double description method: cut the current cone with
/// the feasible side of `row` (row . z <= 0). Generators on the infeasible
/// side are dropped; adjacent (negative, positive) pairs contribute the
/// intersection combination (row.r_pos) r_neg - (row.r_neg) r_pos.
inline DDPair dd_insert_halfspace(const DDPair& pair, const Eigen::VectorXd& row,
                                  const ToleranceConfig& tol = {}, DDStats* stats = nullptr) {
    if (row.size() != pair.gens.rows() && pair.gens.cols() > 0) {
        throw DimensionMismatch("dd_insert_halfspace: row length != generator dimension");
    }
    const std::size_t new_idx = static_cast<std::size_t>(pair.k());
    const double thr = tol.eps_class * row.norm();

    const Eigen::Index n = pair.n();
    std::vector<int> cls(static_cast<std::size_t>(n));  // +1 / 0 / -1
    Eigen::VectorXd vals(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double v = row.dot(pair.gens.col(j));
        vals[j] = v;
        cls[static_cast<std::size_t>(j)] = (v > thr) ? 1 : (v < -thr ? -1 : 0);
        const double av = std::abs(v);
        if (stats && av >= thr / 10.0 && av <= thr * 10.0) ++stats->degenerate_classifications;
    }

    DDPair out;
    out.processed.resize(pair.k() + 1, row.size());
    out.processed.topRows(pair.k()) = pair.processed;
    out.processed.row(pair.k()) = row.transpose();

    std::vector<Eigen::VectorXd> kept;
    std::vector<detail::ActiveSet> kept_active;
    for (Eigen::Index j = 0; j < n; ++j) {
        const int c = cls[static_cast<std::size_t>(j)];
        if (c == 1) continue;
        kept.push_back(pair.gens.col(j));
        auto as = pair.active[static_cast<std::size_t>(j)];
        if (c == 0) detail::set_bit(as, new_idx);
        kept_active.push_back(std::move(as));
    }

    // New generators from adjacent cut pairs. Active sets are recomputed
    // numerically so later adjacency tests stay sound under degeneracy.
    for (Eigen::Index jn = 0; jn < n; ++jn) {
        if (cls[static_cast<std::size_t>(jn)] != -1) continue;
        for (Eigen::Index jp = 0; jp < n; ++jp) {
            if (cls[static_cast<std::size_t>(jp)] != 1) continue;
            if (!adjacency_test(pair, jn, jp)) continue;
            Eigen::VectorXd g = vals[jp] * pair.gens.col(jn) - vals[jn] * pair.gens.col(jp);
            const double gn = g.norm();
            if (gn <= 1e2 * std::numeric_limits<double>::epsilon()) continue;
            g /= gn;
            detail::ActiveSet as;
            for (Eigen::Index i = 0; i < out.processed.rows(); ++i) {
                const double t = tol.eps_class * out.processed.row(i).norm();
                if (std::abs(out.processed.row(i).dot(g)) <= t) {
                    detail::set_bit(as, static_cast<std::size_t>(i));
                }
            }
            kept.push_back(std::move(g));
            kept_active.push_back(std::move(as));
        }
    }

    out.gens.resize(pair.gens.rows(), static_cast<Eigen::Index>(kept.size()));
    for (std::size_t j = 0; j < kept.size(); ++j) out.gens.col(static_cast<Eigen::Index>(j)) = kept[j];
    out.active = std::move(kept_active);
    if (stats) {
        ++stats->insertions;
        stats->max_intermediate_generators =
            std::max(stats->max_intermediate_generators, kept.size());
    }
    return out;
}

enum class InsertionOrder { greedy, input };

struct DDResult {
    VRep vrep;
    DDStats stats;
    std::vector<std::string> warnings;
};

namespace detail {

/// Pick r linearly independent rows. `in_order` takes the first independent
/// rows in input order; otherwise picks by largest residual (pivoted), which
/// is the better-conditioned default.
inline std::vector<Eigen::Index> independent_rows(const Eigen::MatrixXd& a, Eigen::Index r,
                                                  bool in_order, double eps_rank) {
    std::vector<Eigen::Index> chosen;
    std::vector<Eigen::VectorXd> q;  // orthonormal basis of chosen rows
    std::vector<bool> used(static_cast<std::size_t>(a.rows()), false);
    auto residual = [&](Eigen::Index i) {
        Eigen::VectorXd v = a.row(i).transpose();
        for (const auto& qi : q) v -= qi.dot(v) * qi;
        return v;
    };
    while (static_cast<Eigen::Index>(chosen.size()) < r) {
        Eigen::Index pick = -1;
        Eigen::VectorXd pick_res;
        double best = 0.0;
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            if (used[static_cast<std::size_t>(i)]) continue;
            Eigen::VectorXd res = residual(i);
            const double rn = res.norm();
            if (rn > eps_rank * a.row(i).norm()) {
                if (in_order) {
                    pick = i;
                    pick_res = std::move(res);
                    break;
                }
                if (rn > best) {
                    best = rn;
                    pick = i;
                    pick_res = std::move(res);
                }
            }
        }
        if (pick < 0) throw Error("dd_convert: could not find an independent row basis");
        used[static_cast<std::size_t>(pick)] = true;
        chosen.push_back(pick);
        q.push_back(pick_res / pick_res.norm());
    }
    return chosen;
}

}  // namespace detail

/// Convert A z <= 0 to its generator representation.
///
/// The kernel of A is split off first, so the core insertion loop always
/// works on a pointed cone started from a simplicial row basis. With the
/// greedy order, each remaining constraint is inserted in order of how few
/// generators it cuts (re-estimated every step) to damp intermediate growth.
inline DDResult dd_convert(const HRep& h, const ToleranceConfig& tol = {},
                           InsertionOrder order = InsertionOrder::greedy) {
    DDResult out;
    const Eigen::Index d = h.d();
    if (d < 1 && h.m() > 0) throw DimensionMismatch("dd_convert: d must be >= 1");

    const SplitResult split = split_lineality(h, tol);
    const Eigen::Index r = split.lift_map.cols();
    out.vrep.dim = d;
    out.vrep.lineality = split.lineality_basis;
    out.vrep.rays.resize(d, 0);
    if (r == 0) return out;  // unconstrained space

    const Eigen::MatrixXd& ar = split.reduced.a;  // m x r
    const std::vector<Eigen::Index> basis =
        detail::independent_rows(ar, r, order == InsertionOrder::input, tol.eps_rank);

    // Simplicial start: gens = columns of -B^{-1}; generator j is tight on
    // every basis row except j, by construction.
    Eigen::MatrixXd b(r, r);
    for (Eigen::Index j = 0; j < r; ++j) b.row(j) = ar.row(basis[static_cast<std::size_t>(j)]);
    Eigen::MatrixXd g0 = b.fullPivLu().solve(-Eigen::MatrixXd::Identity(r, r));

    DDPair pair;
    pair.processed.resize(r, r);
    for (Eigen::Index j = 0; j < r; ++j) pair.processed.row(j) = ar.row(basis[static_cast<std::size_t>(j)]);
    pair.gens.resize(r, r);
    pair.active.resize(static_cast<std::size_t>(r));
    for (Eigen::Index j = 0; j < r; ++j) {
        pair.gens.col(j) = g0.col(j) / g0.col(j).norm();
        for (Eigen::Index i = 0; i < r; ++i) {
            if (i != j) detail::set_bit(pair.active[static_cast<std::size_t>(j)], static_cast<std::size_t>(i));
        }
    }
    out.stats.max_intermediate_generators = static_cast<std::size_t>(r);

    std::vector<Eigen::Index> remaining;
    {
        std::vector<bool> in_basis(static_cast<std::size_t>(ar.rows()), false);
        for (Eigen::Index i : basis) in_basis[static_cast<std::size_t>(i)] = true;
        for (Eigen::Index i = 0; i < ar.rows(); ++i) {
            if (!in_basis[static_cast<std::size_t>(i)]) remaining.push_back(i);
        }
    }

    while (!remaining.empty()) {
        std::size_t pick = 0;
        if (order == InsertionOrder::greedy) {
            std::size_t best_cuts = std::numeric_limits<std::size_t>::max();
            for (std::size_t c = 0; c < remaining.size(); ++c) {
                const Eigen::Index i = remaining[c];
                const double thr = tol.eps_class * ar.row(i).norm();
                std::size_t cuts = 0;
                for (Eigen::Index j = 0; j < pair.n(); ++j) {
                    if (ar.row(i).dot(pair.gens.col(j)) > thr) ++cuts;
                }
                if (cuts < best_cuts) {
                    best_cuts = cuts;
                    pick = c;
                }
            }
        }
        const Eigen::Index row_idx = remaining[pick];
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));
        pair = dd_insert_halfspace(pair, ar.row(row_idx).transpose(), tol, &out.stats);
    }

    // Lift back to R^d and drop numerically identical rays.
    Eigen::MatrixXd lifted = split.lift_map * pair.gens;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index j = 0; j < lifted.cols(); ++j) {
        lifted.col(j) /= lifted.col(j).norm();
        bool dup = false;
        for (Eigen::Index i : keep) {
            if ((lifted.col(i) - lifted.col(j)).cwiseAbs().maxCoeff() < 1e-10) {
                dup = true;
                break;
            }
        }
        if (!dup) keep.push_back(j);
    }
    out.vrep.rays.resize(d, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j) out.vrep.rays.col(static_cast<Eigen::Index>(j)) = lifted.col(keep[j]);

    if (out.stats.degenerate_classifications > 0) {
        out.warnings.push_back("numerical degeneracy: " +
                               std::to_string(out.stats.degenerate_classifications) +
                               " classification(s) within the eps_class band");
    }
    return out;
}

/// max over rows of (A z) <= eps. An empty system accepts everything.
inline bool membership(const HRep& h, const Eigen::VectorXd& z, double eps) {
    if (z.size() != h.d()) throw DimensionMismatch("membership: dimension mismatch");
    if (h.m() == 0) return true;
    return (h.a * z).maxCoeff() <= eps;
}

/// Alternating tile-mean constraints on a side x side pixel grid. Tiles with
/// sign +1 get row +1/|tile| on their pixels (mean forced nonpositive), sign
/// -1 the opposite.
inline HRep checkerboard_hrep(std::size_t side, std::size_t tiles_per_side) {
    if (tiles_per_side == 0 || side == 0 || side % tiles_per_side != 0) {
        throw InvalidGrid("checkerboard_hrep: side must be divisible by tiles_per_side");
    }
    const std::size_t q = side / tiles_per_side;
    const std::size_t m = tiles_per_side * tiles_per_side;
    const std::size_t d = side * side;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
    const double w = 1.0 / static_cast<double>(q * q);
    for (std::size_t ty = 0; ty < tiles_per_side; ++ty) {
        for (std::size_t tx = 0; tx < tiles_per_side; ++tx) {
            const std::size_t t = ty * tiles_per_side + tx;
            const double s = ((tx + ty) % 2 == 0) ? 1.0 : -1.0;
            for (std::size_t py = ty * q; py < (ty + 1) * q; ++py) {
                for (std::size_t px = tx * q; px < (tx + 1) * q; ++px) {
                    a(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(py * side + px)) = s * w;
                }
            }
        }
    }
    return HRep(a);
}

struct VerificationReport {
    bool pass = false;
    bool sound_pass = false;
    bool complete_pass = false;
    bool lineality_orthonormal = false;
    bool no_duplicate_rays = false;
    double max_soundness_scaled = 0.0;   // max(A g) / (||g||_inf ||A||_max)
    double max_nnls_rel_residual = 0.0;  // completeness
    std::size_t n_feasible_samples = 0;
    bool used_combination_fallback = false;
    std::size_t degenerate_band_hits = 0;
    std::vector<std::string> messages;
};

/// Post-hoc soundness / completeness check for a converted VRep.
///
/// Soundness: every expanded generator satisfies the system within the scaled
/// feasibility tolerance. Completeness: rejection-sampled feasible points
/// (falling back to nonnegative generator combinations when rejection finds
/// nothing in 10 * n_samples draws) are reconstructed by NNLS over the
/// expanded generators.
inline VerificationReport verify_vrep(const HRep& h, const VRep& v, std::size_t n_samples,
                                      std::uint64_t seed, const ToleranceConfig& tol = {}) {
    VerificationReport rep;
    if (v.dim != h.d()) throw DimensionMismatch("verify_vrep: dimension mismatch");
    const Eigen::MatrixXd g = expand_generators(v);
    const double a_max = h.m() > 0 ? h.a.cwiseAbs().maxCoeff() : 0.0;

    // Soundness over expanded generators.
    rep.sound_pass = true;
    if (h.m() > 0) {
        for (Eigen::Index j = 0; j < g.cols(); ++j) {
            const double scale = std::max(g.col(j).cwiseAbs().maxCoeff() * a_max,
                                          std::numeric_limits<double>::min());
            const Eigen::VectorXd az = h.a * g.col(j);
            const double scaled = az.maxCoeff() / scale;
            rep.max_soundness_scaled = std::max(rep.max_soundness_scaled, scaled);
            if (scaled > tol.eps_feas) rep.sound_pass = false;
            for (Eigen::Index i = 0; i < az.size(); ++i) {
                const double thr = tol.eps_class * h.a.row(i).norm();
                const double av = std::abs(az[i]);
                if (av >= thr / 10.0 && av <= thr * 10.0) ++rep.degenerate_band_hits;
            }
        }
        if (!rep.sound_pass) rep.messages.push_back("soundness violation above eps_feas");
    }

    // Lineality orthonormality.
    rep.lineality_orthonormal = true;
    if (v.n_lin() > 0) {
        const Eigen::MatrixXd gram = v.lineality.transpose() * v.lineality;
        const double dev = (gram - Eigen::MatrixXd::Identity(v.n_lin(), v.n_lin())).cwiseAbs().maxCoeff();
        rep.lineality_orthonormal = dev <= tol.eps_orth;
        if (!rep.lineality_orthonormal) rep.messages.push_back("lineality basis not orthonormal");
    }

    // Pointed rays must be pairwise distinct directions.
    rep.no_duplicate_rays = true;
    for (Eigen::Index i = 0; i < v.rays.cols() && rep.no_duplicate_rays; ++i) {
        for (Eigen::Index j = i + 1; j < v.rays.cols(); ++j) {
            if ((v.rays.col(i) - v.rays.col(j)).cwiseAbs().maxCoeff() < 1e-9) {
                rep.no_duplicate_rays = false;
                rep.messages.push_back("duplicate ray directions");
                break;
            }
        }
    }

    // Completeness by reconstruction.
    rep.complete_pass = true;
    if (n_samples > 0) {
        Rng rng(seed);
        std::vector<Eigen::VectorXd> samples;
        for (std::size_t t = 0; t < 10 * n_samples && samples.size() < n_samples; ++t) {
            Eigen::VectorXd z(h.d());
            for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
            if (membership(h, z, 0.0)) samples.push_back(std::move(z));
        }
        rep.n_feasible_samples = samples.size();
        if (samples.empty()) {
            rep.used_combination_fallback = true;
            for (std::size_t t = 0; t < n_samples; ++t) {
                Eigen::VectorXd c(g.cols());
                for (Eigen::Index i = 0; i < c.size(); ++i) c[i] = std::abs(rng.normal());
                samples.push_back(g.cols() > 0 ? Eigen::VectorXd(g * c)
                                               : Eigen::VectorXd(Eigen::VectorXd::Zero(h.d())));
            }
        }
        for (const auto& z : samples) {
            const double zn = z.norm();
            if (zn == 0.0) continue;
            const double res = nnls(g, z).residual / zn;
            rep.max_nnls_rel_residual = std::max(rep.max_nnls_rel_residual, res);
            if (res > tol.eps_complete) rep.complete_pass = false;
        }
        if (!rep.complete_pass) rep.messages.push_back("completeness residual above tolerance");
    }

    rep.pass = rep.sound_pass && rep.complete_pass && rep.lineality_orthonormal && rep.no_duplicate_rays;
    return rep;
}

// --- text formats ---------------------------------------------------------
// H file: "H <m> <d>" then m rows of d floats. V file: "V <d> <np> <nl>"
// then np ray rows and nl lineality rows. 17 significant digits.

namespace detail {

inline void write_row(std::ostream& os, const Eigen::VectorXd& v) {
    char buf[64];
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.16e", v[i]);
        os << (i ? " " : "") << buf;
    }
    os << '\n';
}

inline std::vector<double> parse_floats(const std::string& line, std::size_t lineno) {
    std::istringstream ss(line);
    std::vector<double> out;
    double x;
    while (ss >> x) out.push_back(x);
    if (!ss.eof()) throw ParseError("line " + std::to_string(lineno) + ": invalid number");
    return out;
}

}  // namespace detail

inline void write_hrep(std::ostream& os, const HRep& h) {
    os << "H " << h.m() << ' ' << h.d() << '\n';
    for (Eigen::Index i = 0; i < h.m(); ++i) detail::write_row(os, h.a.row(i).transpose());
}

inline void write_hrep(const std::filesystem::path& path, const HRep& h) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open for writing: " + path.string());
    write_hrep(f, h);
}

inline HRep read_hrep(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ParseError("line 1: empty H-rep file");
    std::istringstream hdr(line);
    std::string tag;
    long m = -1, d = -1;
    hdr >> tag >> m >> d;
    if (hdr.fail() || tag != "H" || m < 0 || d < 1) {
        throw ParseError("line 1: expected header 'H <m> <d>'");
    }
    Eigen::MatrixXd a(m, d);
    for (long i = 0; i < m; ++i) {
        if (!std::getline(is, line)) throw ParseError("line " + std::to_string(i + 2) + ": missing row");
        const auto vals = detail::parse_floats(line, static_cast<std::size_t>(i + 2));
        if (static_cast<long>(vals.size()) != d) {
            throw ParseError("line " + std::to_string(i + 2) + ": expected " + std::to_string(d) + " values");
        }
        for (long j = 0; j < d; ++j) a(i, j) = vals[static_cast<std::size_t>(j)];
    }
    return HRep(a);
}

inline HRep read_hrep(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open: " + path.string());
    return read_hrep(f);
}

inline void write_vrep(std::ostream& os, const VRep& v) {
    os << "V " << v.dim << ' ' << v.n_pointed() << ' ' << v.n_lin() << '\n';
    for (Eigen::Index j = 0; j < v.n_pointed(); ++j) detail::write_row(os, v.rays.col(j));
    for (Eigen::Index j = 0; j < v.n_lin(); ++j) detail::write_row(os, v.lineality.col(j));
}

inline void write_vrep(const std::filesystem::path& path, const VRep& v) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open for writing: " + path.string());
    write_vrep(f, v);
}

inline VRep read_vrep(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ParseError("line 1: empty V-rep file");
    std::istringstream hdr(line);
    std::string tag;
    long d = -1, np = -1, nl = -1;
    hdr >> tag >> d >> np >> nl;
    if (hdr.fail() || tag != "V" || d < 1 || np < 0 || nl < 0) {
        throw ParseError("line 1: expected header 'V <d> <n_pointed> <n_lin>'");
    }
    VRep v;
    v.dim = d;
    v.rays.resize(d, np);
    v.lineality.resize(d, nl);
    for (long j = 0; j < np + nl; ++j) {
        if (!std::getline(is, line)) throw ParseError("line " + std::to_string(j + 2) + ": missing row");
        const auto vals = detail::parse_floats(line, static_cast<std::size_t>(j + 2));
        if (static_cast<long>(vals.size()) != d) {
            throw ParseError("line " + std::to_string(j + 2) + ": expected " + std::to_string(d) + " values");
        }
        for (long i = 0; i < d; ++i) {
            if (j < np) v.rays(i, j) = vals[static_cast<std::size_t>(i)];
            else v.lineality(i, j - np) = vals[static_cast<std::size_t>(i)];
        }
    }
    return v;
}

inline VRep read_vrep(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open: " + path.string());
    return read_vrep(f);
}

}  // namespace conecraft::polyhedra
