#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "stprune/error.hpp"
#include "stprune/matrix.hpp"
#include "stprune/rng.hpp"

namespace stprune {

enum class QrStopKind { full, rank, tolerance };

// Stopping rule for a QR factorization: run to completion, stop after a
// fixed number of pivot steps, or stop once ||R22||_2 <= eps * ||A||_2.
struct QrStop {
    QrStopKind kind = QrStopKind::full;
    std::size_t rank = 0;
    double tol = 0.0;

    static QrStop full() { return {}; }
    static QrStop at_rank(std::size_t k) { return {QrStopKind::rank, k, 0.0}; }
    static QrStop at_tol(double eps) { return {QrStopKind::tolerance, 0, eps}; }
};

struct QrFactorization {
    std::vector<std::size_t> perm;  // perm[j] = original index of column j of A*Pi
    Matrix r;                       // rank_used x cols, upper-trapezoidal
    Matrix q;                       // rows x rank_used when q_applied
    std::size_t rank_used = 0;
    bool q_applied = false;
    bool pivoted = false;
    std::size_t rows_in = 0;
    std::size_t cols_in = 0;
    double tail_norm2 = 0.0;  // ||R22||_2 at the stop rank (0 for complete runs)
    double tail_normf = 0.0;  // ||R22||_F at the stop rank

    bool complete() const { return rank_used == std::min(rows_in, cols_in); }
};

namespace detail {

// Column-major workspace; Householder vectors are stored below the diagonal
// of processed columns, R in the upper trapezoid.
struct ColMajor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    ColMajor(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
    explicit ColMajor(const Matrix& m) : rows(m.rows()), cols(m.cols()), v(m.size()) {
        for (std::size_t j = 0; j < cols; ++j)
            for (std::size_t i = 0; i < rows; ++i) v[j * rows + i] = m(i, j);
    }
    double& at(std::size_t i, std::size_t j) { return v[j * rows + i]; }
    double at(std::size_t i, std::size_t j) const { return v[j * rows + i]; }
    double* col(std::size_t j) { return v.data() + j * rows; }
    const double* col(std::size_t j) const { return v.data() + j * rows; }
};

// Largest singular value of the block w[r0:, c0:] by power iteration on
// B^T B. The estimate increases monotonically and never exceeds sigma_1.
inline double power_sigma_block(const ColMajor& w, std::size_t r0, std::size_t c0,
                                std::size_t iters, std::uint64_t seed,
                                double exit_tol = 1e-14) {
    const std::size_t p = w.rows - r0;
    const std::size_t q = w.cols - c0;
    if (p == 0 || q == 0) return 0.0;

    std::vector<double> x(q), bx(p), btbx(q);
    for (std::size_t j = 0; j < q; ++j) x[j] = rng::normal(seed, 0x5feca7ULL, j);
    double nx = std::sqrt(std::inner_product(x.begin(), x.end(), x.begin(), 0.0));
    if (nx == 0.0) x[0] = nx = 1.0;
    for (double& e : x) e /= nx;

    double est = 0.0;
    for (std::size_t it = 0; it < iters; ++it) {
        std::fill(bx.begin(), bx.end(), 0.0);
        for (std::size_t j = 0; j < q; ++j) {
            const double xj = x[j];
            if (xj == 0.0) continue;
            const double* cj = w.col(c0 + j) + r0;
            for (std::size_t i = 0; i < p; ++i) bx[i] += cj[i] * xj;
        }
        for (std::size_t j = 0; j < q; ++j) {
            const double* cj = w.col(c0 + j) + r0;
            btbx[j] = std::inner_product(cj, cj + p, bx.begin(), 0.0);
        }
        const double nb =
            std::sqrt(std::inner_product(btbx.begin(), btbx.end(), btbx.begin(), 0.0));
        const double next = std::sqrt(nb);
        if (nb == 0.0) return 0.0;
        const bool settled = std::abs(next - est) <= exit_tol * next;
        est = next;
        for (std::size_t j = 0; j < q; ++j) x[j] = btbx[j] / nb;
        if (settled) break;
    }
    return est;
}

inline double tail_frobenius_block(const ColMajor& w, std::size_t r0, std::size_t c0) {
    double s = 0.0;
    for (std::size_t j = c0; j < w.cols; ++j) {
        const double* cj = w.col(j);
        for (std::size_t i = r0; i < w.rows; ++i) s += cj[i] * cj[i];
    }
    return std::sqrt(s);
}

// dlarfg-style reflector for x (len >= 1): H x = beta e0 with
// H = I - tau v v^T, v0 = 1. Returns {beta, tau}; v tail written in place.
inline std::pair<double, double> make_reflector(double* x, std::size_t len) {
    const double alpha = x[0];
    double sigma = 0.0;
    for (std::size_t i = 1; i < len; ++i) sigma += x[i] * x[i];
    if (sigma == 0.0) return {alpha, 0.0};
    const double norm = std::sqrt(alpha * alpha + sigma);
    const double beta = alpha >= 0.0 ? -norm : norm;
    const double v0 = alpha - beta;
    for (std::size_t i = 1; i < len; ++i) x[i] /= v0;
    return {beta, (beta - alpha) / beta};
}

}  // namespace detail

// Power-iteration estimate of the largest singular value; deterministic for
// a fixed seed and never above sigma_1.
inline double spectral_norm(const Matrix& a, std::size_t iters = 100, std::uint64_t seed = 0) {
    if (a.empty()) throw DimError("spectral_norm: empty matrix");
    if (iters < 1) throw DimError("spectral_norm: iters must be >= 1");
    detail::ColMajor w(a);
    return detail::power_sigma_block(w, 0, 0, iters, seed);
}

// Householder QR, optionally with Businger-Golub column pivoting (greedy
// max residual norm, ties broken by lowest original column index).
inline QrFactorization cpqr(const Matrix& a, bool pivot, QrStop stop = QrStop::full(),
                            bool keep_q = false) {
    if (a.empty()) throw DimError("cpqr: empty matrix");
    if (!all_finite(a)) throw NumericError("cpqr: non-finite entries");
    const std::size_t n = a.rows();
    const std::size_t m = a.cols();
    const std::size_t lmin = std::min(n, m);

    std::size_t kmax = lmin;
    if (stop.kind == QrStopKind::rank) {
        if (stop.rank > lmin)
            throw DimError("cpqr: requested rank " + std::to_string(stop.rank) +
                           " exceeds min(rows, cols) = " + std::to_string(lmin));
        kmax = stop.rank;
    } else if (stop.kind == QrStopKind::tolerance) {
        if (stop.tol < 0.0) throw DimError("cpqr: negative tolerance");
    }

    detail::ColMajor w(a);
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<double> taus(lmin, 0.0);

    // Residual column norms, downdated per step with an exact recompute when
    // cancellation eats the running value.
    std::vector<double> cn2(m), ref2(m);
    for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        const double* cj = w.col(j);
        for (std::size_t i = 0; i < n; ++i) s += cj[i] * cj[i];
        cn2[j] = ref2[j] = s;
    }

    constexpr std::uint64_t kTailSeed = 0x7a11u;
    double a_norm2 = 0.0;
    const std::size_t check_every = m > 512 ? 32 : 1;
    if (stop.kind == QrStopKind::tolerance) {
        a_norm2 = detail::power_sigma_block(w, 0, 0, 20000, kTailSeed);
        if (a_norm2 <= stop.tol * a_norm2) kmax = 0;  // only a zero matrix
    }

    std::size_t k = 0;
    for (std::size_t t = 0; t < kmax; ++t) {
        if (pivot) {
            std::size_t p = t;
            for (std::size_t j = t + 1; j < m; ++j)
                if (cn2[j] > cn2[p] || (cn2[j] == cn2[p] && perm[j] < perm[p])) p = j;
            if (p != t) {
                for (std::size_t i = 0; i < n; ++i) std::swap(w.at(i, t), w.at(i, p));
                std::swap(perm[t], perm[p]);
                std::swap(cn2[t], cn2[p]);
                std::swap(ref2[t], ref2[p]);
            }
        }

        auto [beta, tau] = detail::make_reflector(w.col(t) + t, n - t);
        taus[t] = tau;
        if (tau != 0.0) {
            const double* v = w.col(t) + t;  // v[0] implicit 1
            for (std::size_t j = t + 1; j < m; ++j) {
                double* cj = w.col(j) + t;
                double s = cj[0];
                for (std::size_t i = 1; i < n - t; ++i) s += v[i] * cj[i];
                s *= tau;
                cj[0] -= s;
                for (std::size_t i = 1; i < n - t; ++i) cj[i] -= s * v[i];
            }
        }
        w.at(t, t) = beta;

        for (std::size_t j = t + 1; j < m; ++j) {
            const double d = w.at(t, j);
            cn2[j] -= d * d;
            if (cn2[j] <= 1e-12 * ref2[j]) {
                double s = 0.0;
                const double* cj = w.col(j);
                for (std::size_t i = t + 1; i < n; ++i) s += cj[i] * cj[i];
                cn2[j] = ref2[j] = s;
            }
        }

        k = t + 1;
        if (stop.kind == QrStopKind::tolerance && k < lmin &&
            (k % check_every == 0 || k == kmax)) {
            const double est = detail::power_sigma_block(w, k, k, 20, kTailSeed);
            if (est <= stop.tol * a_norm2) break;
        }
    }

    QrFactorization f;
    f.perm = std::move(perm);
    f.rank_used = k;
    f.pivoted = pivot;
    f.rows_in = n;
    f.cols_in = m;
    f.r = Matrix(k, m);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i; j < m; ++j) f.r(i, j) = w.at(i, j);

    if (k < lmin) {
        f.tail_normf = detail::tail_frobenius_block(w, k, k);
        f.tail_norm2 = detail::power_sigma_block(w, k, k, 20000, kTailSeed);
    }

    if (keep_q) {
        // Back-accumulate Q = H_0 ... H_{k-1} applied to the leading identity.
        detail::ColMajor qw(n, k);
        for (std::size_t j = 0; j < k; ++j) qw.at(j, j) = 1.0;
        for (std::size_t t = k; t-- > 0;) {
            const double tau = taus[t];
            if (tau == 0.0) continue;
            const double* v = w.col(t) + t;
            for (std::size_t j = 0; j < k; ++j) {
                double* cj = qw.col(j) + t;
                double s = cj[0];
                for (std::size_t i = 1; i < n - t; ++i) s += v[i] * cj[i];
                s *= tau;
                cj[0] -= s;
                for (std::size_t i = 1; i < n - t; ++i) cj[i] -= s * v[i];
            }
        }
        f.q = Matrix(n, k);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < k; ++j) f.q(i, j) = qw.at(i, j);
        f.q_applied = true;
    }
    return f;
}

// Minimum-norm solution of min_X ||A X - B||_F via column-pivoted QR with a
// relative pivot threshold, followed by an RZ reduction of the trapezoid
// when A is rank-deficient (dgelsy-style).
inline Matrix least_squares(const Matrix& a, const Matrix& b, double rcond = 1e-12) {
    if (a.empty() || b.empty()) throw DimError("least_squares: empty input");
    if (a.rows() != b.rows())
        throw DimError("least_squares: a has " + std::to_string(a.rows()) + " rows, b has " +
                       std::to_string(b.rows()));
    const std::size_t n = a.rows();
    const std::size_t m = a.cols();
    const std::size_t nrhs = b.cols();
    const std::size_t lmin = std::min(n, m);

    detail::ColMajor w(a);
    detail::ColMajor bw(b);
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);

    std::vector<double> cn2(m), ref2(m);
    for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        const double* cj = w.col(j);
        for (std::size_t i = 0; i < n; ++i) s += cj[i] * cj[i];
        cn2[j] = ref2[j] = s;
    }

    for (std::size_t t = 0; t < lmin; ++t) {
        std::size_t p = t;
        for (std::size_t j = t + 1; j < m; ++j)
            if (cn2[j] > cn2[p] || (cn2[j] == cn2[p] && perm[j] < perm[p])) p = j;
        if (p != t) {
            for (std::size_t i = 0; i < n; ++i) std::swap(w.at(i, t), w.at(i, p));
            std::swap(perm[t], perm[p]);
            std::swap(cn2[t], cn2[p]);
            std::swap(ref2[t], ref2[p]);
        }
        auto [beta, tau] = detail::make_reflector(w.col(t) + t, n - t);
        if (tau != 0.0) {
            const double* v = w.col(t) + t;
            for (std::size_t j = t + 1; j < m; ++j) {
                double* cj = w.col(j) + t;
                double s = cj[0];
                for (std::size_t i = 1; i < n - t; ++i) s += v[i] * cj[i];
                s *= tau;
                cj[0] -= s;
                for (std::size_t i = 1; i < n - t; ++i) cj[i] -= s * v[i];
            }
            for (std::size_t j = 0; j < nrhs; ++j) {
                double* cj = bw.col(j) + t;
                double s = cj[0];
                for (std::size_t i = 1; i < n - t; ++i) s += v[i] * cj[i];
                s *= tau;
                cj[0] -= s;
                for (std::size_t i = 1; i < n - t; ++i) cj[i] -= s * v[i];
            }
        }
        w.at(t, t) = beta;
        for (std::size_t j = t + 1; j < m; ++j) {
            const double d = w.at(t, j);
            cn2[j] -= d * d;
            if (cn2[j] <= 1e-12 * ref2[j]) {
                double s = 0.0;
                const double* cj = w.col(j);
                for (std::size_t i = t + 1; i < n; ++i) s += cj[i] * cj[i];
                cn2[j] = ref2[j] = s;
            }
        }
    }

    std::size_t rank = 0;
    const double dmax = std::abs(w.at(0, 0));
    for (std::size_t i = 0; i < lmin; ++i) {
        if (std::abs(w.at(i, i)) > rcond * dmax) ++rank;
        else break;
    }

    Matrix x(m, nrhs, 0.0);
    if (rank == 0) return x;

    // RZ reduction of [R11 R12] -> [T 0] Z when rank < m; Z is a product of
    // reflectors acting on coordinates {i} u [rank, m).
    const std::size_t tail = m - rank;
    std::vector<double> ztau(rank, 0.0);
    std::vector<std::vector<double>> zv(rank);
    if (tail > 0) {
        for (std::size_t i = rank; i-- > 0;) {
            double d = w.at(i, i);
            double sigma = 0.0;
            for (std::size_t j = 0; j < tail; ++j) {
                const double e = w.at(i, rank + j);
                sigma += e * e;
            }
            if (sigma == 0.0) continue;
            const double norm = std::sqrt(d * d + sigma);
            const double beta = d >= 0.0 ? -norm : norm;
            const double v0 = d - beta;
            std::vector<double> v(tail);
            for (std::size_t j = 0; j < tail; ++j) v[j] = w.at(i, rank + j) / v0;
            const double tau = (beta - d) / beta;
            // Row i becomes [.. beta .. 0]; rows above pick up the reflector.
            w.at(i, i) = beta;
            for (std::size_t j = 0; j < tail; ++j) w.at(i, rank + j) = 0.0;
            for (std::size_t ii = 0; ii < i; ++ii) {
                double s = w.at(ii, i);
                for (std::size_t j = 0; j < tail; ++j) s += v[j] * w.at(ii, rank + j);
                s *= tau;
                w.at(ii, i) -= s;
                for (std::size_t j = 0; j < tail; ++j) w.at(ii, rank + j) -= s * v[j];
            }
            ztau[i] = tau;
            zv[i] = std::move(v);
        }
    }

    // Back-substitute T y1 = Q1^T b, then y = Z^T [y1; 0], x = Pi y.
    for (std::size_t c = 0; c < nrhs; ++c) {
        std::vector<double> y(m, 0.0);
        for (std::size_t i = rank; i-- > 0;) {
            double s = bw.at(i, c);
            for (std::size_t j = i + 1; j < rank; ++j) s -= w.at(i, j) * y[j];
            y[i] = s / w.at(i, i);
        }
        if (tail > 0) {
            for (std::size_t i = 0; i < rank; ++i) {
                if (ztau[i] == 0.0) continue;
                double s = y[i];
                for (std::size_t j = 0; j < tail; ++j) s += zv[i][j] * y[rank + j];
                s *= ztau[i];
                y[i] -= s;
                for (std::size_t j = 0; j < tail; ++j) y[rank + j] -= s * zv[i][j];
            }
        }
        for (std::size_t i = 0; i < m; ++i) x(perm[i], c) = y[i];
    }
    return x;
}

// Solve R X = B for upper-triangular R (leading k x k block assumed
// nonsingular relative to tol); used for interpolation coefficients.
inline Matrix solve_upper_triangular(const Matrix& r, const Matrix& b, double rel_tol = 0.0) {
    const std::size_t k = r.rows();
    if (r.cols() < k || b.rows() != k) throw DimError("solve_upper_triangular: shape mismatch");
    double dmax = 0.0;
    for (std::size_t i = 0; i < k; ++i) dmax = std::max(dmax, std::abs(r(i, i)));
    for (std::size_t i = 0; i < k; ++i)
        if (std::abs(r(i, i)) <= rel_tol * dmax || r(i, i) == 0.0)
            throw NumericError("solve_upper_triangular: singular diagonal at " +
                               std::to_string(i));
    Matrix x(k, b.cols());
    for (std::size_t c = 0; c < b.cols(); ++c) {
        for (std::size_t i = k; i-- > 0;) {
            double s = b(i, c);
            for (std::size_t j = i + 1; j < k; ++j) s -= r(i, j) * x(j, c);
            x(i, c) = s / r(i, i);
        }
    }
    return x;
}

// Dense singular values by one-sided Jacobi; test-oracle-grade, intended for
// small matrices. Returns all min(rows, cols) values, nonincreasing.
inline std::vector<double> singular_values_oracle(const Matrix& a) {
    if (a.empty()) throw DimError("singular_values_oracle: empty matrix");
    const Matrix m = a.cols() > a.rows() ? a.transposed() : a;
    detail::ColMajor w(m);
    const std::size_t n = w.rows, c = w.cols;

    for (std::size_t sweep = 0; sweep < 64; ++sweep) {
        bool rotated = false;
        for (std::size_t i = 0; i + 1 < c; ++i) {
            for (std::size_t j = i + 1; j < c; ++j) {
                double* ci = w.col(i);
                double* cj = w.col(j);
                double aa = 0.0, bb = 0.0, gg = 0.0;
                for (std::size_t r = 0; r < n; ++r) {
                    aa += ci[r] * ci[r];
                    bb += cj[r] * cj[r];
                    gg += ci[r] * cj[r];
                }
                if (std::abs(gg) <= 1e-15 * std::sqrt(aa * bb) || gg == 0.0) continue;
                rotated = true;
                const double zeta = (bb - aa) / (2.0 * gg);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                for (std::size_t r = 0; r < n; ++r) {
                    const double vi = ci[r], vj = cj[r];
                    ci[r] = cs * vi - sn * vj;
                    cj[r] = sn * vi + cs * vj;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<double> sv(c);
    for (std::size_t j = 0; j < c; ++j) {
        double s = 0.0;
        const double* cj = w.col(j);
        for (std::size_t r = 0; r < n; ++r) s += cj[r] * cj[r];
        sv[j] = std::sqrt(s);
    }
    std::sort(sv.begin(), sv.end(), std::greater<>());
    return sv;
}

}  // namespace stprune
