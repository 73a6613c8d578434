#pragma once

#include <Eigen/Dense>
#include <cstddef>

#include "conecraft/common.hpp"

namespace conecraft::linalg {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;

inline CMapRM map(const double* p, std::size_t rows, std::size_t cols) {
    return CMapRM(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline MapRM map(double* p, std::size_t rows, std::size_t cols) {
    return MapRM(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

/// C = op(A) * op(B), or C += ... when accumulate. Buffers are row-major.
inline void gemm(const double* a, std::size_t ra, std::size_t ca, bool ta,
                 const double* b, std::size_t rb, std::size_t cb, bool tb,
                 double* c, bool accumulate = false) {
    const std::size_t n = ta ? ca : ra;
    const std::size_t k = ta ? ra : ca;
    const std::size_t kb = tb ? cb : rb;
    const std::size_t p = tb ? rb : cb;
    if (k != kb) throw ShapeMismatch("gemm: inner dimensions do not match");
    auto A = map(a, ra, ca);
    auto B = map(b, rb, cb);
    auto C = map(c, n, p);
    if (!ta && !tb) {
        if (accumulate) C.noalias() += A * B; else C.noalias() = A * B;
    } else if (!ta && tb) {
        if (accumulate) C.noalias() += A * B.transpose(); else C.noalias() = A * B.transpose();
    } else if (ta && !tb) {
        if (accumulate) C.noalias() += A.transpose() * B; else C.noalias() = A.transpose() * B;
    } else {
        if (accumulate) C.noalias() += A.transpose() * B.transpose(); else C.noalias() = A.transpose() * B.transpose();
    }
}

}  // namespace conecraft::linalg
