#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "stprune/error.hpp"
#include "stprune/linalg.hpp"
#include "stprune/matrix.hpp"

namespace stprune {

// Interpolative decomposition a ~= a[:, indices] * t. The columns of t at
// the kept positions form the identity, so t reconstructs kept columns
// exactly and expresses dropped ones as combinations of kept ones.
struct IdResult {
    std::vector<std::size_t> indices;  // kept original column indices, pivot order
    Matrix t;                          // k x cols, columns in original order
    double err2 = 0.0;                 // ||R22||_2 estimate
    double err_f = 0.0;                // ||R22||_F
    std::vector<double> rdiag;         // |diag(R)| from the pivoted factorization
    double t_max_abs = 0.0;            // diagnostic: largest |t_ij|

    std::size_t rank() const { return indices.size(); }
};

namespace detail {

// Assemble t (k x m) from interpolation coefficients for the dropped
// columns: t[:, order[j]] = e_j for j < k, t[:, order[k+c]] = coeff[:, c].
inline Matrix assemble_interpolation(std::span<const std::size_t> order, std::size_t k,
                                     std::size_t m, const Matrix& coeff) {
    Matrix t(k, m, 0.0);
    for (std::size_t j = 0; j < k; ++j) t(j, order[j]) = 1.0;
    for (std::size_t c = 0; c + k < m; ++c)
        for (std::size_t i = 0; i < k; ++i) t(i, order[k + c]) = coeff(i, c);
    return t;
}

}  // namespace detail

inline IdResult interpolative_decomposition(const Matrix& a, QrStop stop) {
    const QrFactorization f = cpqr(a, true, stop);
    const std::size_t k = f.rank_used;
    const std::size_t m = a.cols();

    IdResult id;
    id.indices.assign(f.perm.begin(), f.perm.begin() + static_cast<std::ptrdiff_t>(k));
    id.err2 = f.tail_norm2;
    id.err_f = f.tail_normf;
    id.rdiag.resize(k);
    for (std::size_t i = 0; i < k; ++i) id.rdiag[i] = std::abs(f.r(i, i));

    if (k == 0) {
        id.t = Matrix(0, m);
        return id;
    }
    Matrix coeff(k, m - k);
    if (m > k) {
        const Matrix r11 = f.r.block(0, 0, k, k);
        const Matrix r12 = f.r.block(0, k, k, m - k);
        try {
            coeff = solve_upper_triangular(r11, r12, 1e-14);
        } catch (const NumericError&) {
            throw NumericError(
                "interpolative_decomposition: singular R11; requested rank exceeds the "
                "numerical rank, reduce k");
        }
    }
    id.t = detail::assemble_interpolation(f.perm, k, m, coeff);
    id.t_max_abs = max_abs(id.t);
    return id;
}

// Frobenius norms of the trailing blocks of a complete pivoted R:
// tail[k] = ||R[k:, k:]||_F for k = 0..cols. These are the per-rank error
// proxies reused across every budget without refactorizing.
inline std::vector<double> error_curve(const QrFactorization& f) {
    if (!f.pivoted) throw DimError("error_curve: factorization must be pivoted");
    if (!f.complete()) throw DimError("error_curve: factorization must be a complete run");
    const std::size_t m = f.cols_in;
    const std::size_t l = f.rank_used;
    std::vector<double> tail2(m + 1, 0.0);
    for (std::size_t k = std::min(l, m); k-- > 0;) {
        double row = 0.0;
        for (std::size_t j = k; j < m; ++j) row += f.r(k, j) * f.r(k, j);
        tail2[k] = tail2[k + 1] + row;
    }
    std::vector<double> tail(m + 1);
    for (std::size_t k = 0; k <= m; ++k) tail[k] = std::sqrt(tail2[k]);
    return tail;
}

// Scale column j of z by the 2-norm of row j of w_next, so that selection
// favors units with large outgoing weights. Selection runs on the weighted
// matrix; corrections are computed from the unweighted one.
inline Matrix next_layer_weighting(const Matrix& z, const Matrix& w_next) {
    if (w_next.rows() != z.cols())
        throw DimError("next_layer_weighting: w_next needs one row per column of z (" +
                       std::to_string(w_next.rows()) + " vs " + std::to_string(z.cols()) + ")");
    Matrix out = z;
    for (std::size_t j = 0; j < z.cols(); ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < w_next.cols(); ++c) s += w_next(j, c) * w_next(j, c);
        const double scale = std::sqrt(s);
        for (std::size_t i = 0; i < z.rows(); ++i) out(i, j) *= scale;
    }
    return out;
}

// Interpolation matrix for a fixed column selection: unpivoted QR on the
// permuted matrix [z_kept | z_rest], T per the standard identity with
// Pi = I, un-permuted back to original column order. Falls back to a
// minimum-norm least-squares solve when the kept block is rank-deficient.
inline Matrix interpolation_for_columns(const Matrix& z, std::span<const std::size_t> kept) {
    const std::size_t m = z.cols();
    const std::size_t k = kept.size();
    if (k == 0 || k > m) throw DimError("interpolation_for_columns: bad selection size");

    std::vector<std::size_t> order(kept.begin(), kept.end());
    std::vector<bool> is_kept(m, false);
    for (std::size_t j : kept) {
        if (j >= m || is_kept[j]) throw DimError("interpolation_for_columns: bad column index");
        is_kept[j] = true;
    }
    for (std::size_t j = 0; j < m; ++j)
        if (!is_kept[j]) order.push_back(j);

    Matrix coeff(k, m - k);
    if (m > k) {
        const Matrix zp = z.gather_cols(order);
        const QrFactorization f = cpqr(zp, false, QrStop::at_rank(std::min(k, std::min(z.rows(), m))));
        const std::size_t kr = f.rank_used;  // < k only when rows < k
        const Matrix r11 = f.r.block(0, 0, kr, kr);
        const Matrix r12 = f.r.block(0, kr, kr, m - kr);
        bool solved = false;
        if (kr == k) {
            try {
                coeff = solve_upper_triangular(r11, r12, 1e-12);
                solved = true;
            } catch (const NumericError&) {
            }
        }
        if (!solved) {
            const Matrix zk = z.gather_cols(std::span<const std::size_t>(order.data(), k));
            const Matrix zr = z.gather_cols(
                std::span<const std::size_t>(order.data() + k, m - k));
            coeff = least_squares(zk, zr);
        }
    }
    return detail::assemble_interpolation(order, k, m, coeff);
}

}  // namespace stprune
