#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "stprune/linalg.hpp"
#include "test_support.hpp"

using namespace stprune;

TEST_CASE("cpqr on identity keeps original order via tie-break") {
    const Matrix a = Matrix::identity(3);
    const QrFactorization f = cpqr(a, true, QrStop::at_rank(3));
    CHECK(f.perm == std::vector<std::size_t>{0, 1, 2});
    CHECK(f.rank_used == 3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(f.r(i, j) == doctest::Approx(i == j ? 1.0 : 0.0));
    CHECK(f.tail_norm2 == 0.0);
}

TEST_CASE("cpqr picks the dominant column and reports the trailing norm") {
    const Matrix a = Matrix::from_rows({{1, 0, 2}, {0, 1, 2}});
    const QrFactorization f = cpqr(a, true, QrStop::at_rank(1));
    CHECK(f.perm[0] == 2);
    CHECK(std::abs(f.r(0, 0)) == doctest::Approx(2.0 * std::sqrt(2.0)));
    CHECK(f.tail_norm2 == doctest::Approx(1.0).epsilon(1e-9));

    // Exhaustive subset search confirms column 3 is the best single column.
    const auto [best_err, best_idx] = testsup::exhaustive_subset_oracle(a, 1);
    CHECK(best_idx == std::vector<std::size_t>{2});
    CHECK(best_err == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("cpqr tolerance stop on the zero matrix selects rank 0") {
    const Matrix a(4, 4, 0.0);
    const QrFactorization f = cpqr(a, true, QrStop::at_tol(0.1));
    CHECK(f.rank_used == 0);
}

TEST_CASE("cpqr tolerance stop reaches the requested relative error") {
    const Matrix a = testsup::low_rank_plus_noise(60, 40, 8, 1e-6, 7);
    const QrFactorization f = cpqr(a, true, QrStop::at_tol(1e-3));
    CHECK(f.rank_used >= 8);
    CHECK(f.rank_used < 40);
    const double anorm = testsup::sigma_max_oracle(a);
    CHECK(f.tail_norm2 <= 1e-3 * anorm * (1.0 + 1e-6));
}

TEST_CASE("cpqr reconstructs a Pi = Q R when Q is retained") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        for (auto [rows, cols] : {std::pair<std::size_t, std::size_t>{30, 20},
                                  {20, 30},
                                  {25, 25}}) {
            const Matrix a = testsup::random_matrix(rows, cols, seed);
            const QrFactorization f = cpqr(a, true, QrStop::full(), true);
            REQUIRE(f.q_applied);
            const Matrix api = a.gather_cols(f.perm);
            const Matrix qr = matmul(f.q, f.r);
            CHECK(frobenius_norm(api - qr) <= 1e-10 * frobenius_norm(a));
        }
    }
}

TEST_CASE("pivoted diagonal magnitudes are nonincreasing") {
    const Matrix a = testsup::random_matrix(40, 32, 11);
    const QrFactorization f = cpqr(a, true);
    for (std::size_t i = 1; i < f.rank_used; ++i)
        CHECK(std::abs(f.r(i, i)) <= std::abs(f.r(i - 1, i - 1)) * (1.0 + 1e-12));
}

TEST_CASE("unpivoted run on pre-permuted columns reproduces R up to signs") {
    const Matrix a = testsup::random_matrix(24, 16, 5);
    const QrFactorization fp = cpqr(a, true);
    const Matrix ap = a.gather_cols(fp.perm);
    const QrFactorization fu = cpqr(ap, false);
    REQUIRE(fu.rank_used == fp.rank_used);
    for (std::size_t j = 0; j < fu.cols_in; ++j) CHECK(fu.perm[j] == j);
    for (std::size_t i = 0; i < fp.r.rows(); ++i)
        for (std::size_t j = 0; j < fp.r.cols(); ++j)
            CHECK(std::abs(fu.r(i, j)) == doctest::Approx(std::abs(fp.r(i, j))).epsilon(1e-9));
}

TEST_CASE("cpqr input validation") {
    CHECK_THROWS_AS(cpqr(Matrix(), true), DimError);
    CHECK_THROWS_AS(cpqr(Matrix(3, 3, 1.0), true, QrStop::at_rank(4)), DimError);
    Matrix bad(2, 2, 0.0);
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(cpqr(bad, true), NumericError);
}

TEST_CASE("least_squares with identity design returns the rhs") {
    const Matrix b = testsup::random_matrix(6, 3, 21);
    const Matrix x = least_squares(Matrix::identity(6), b);
    CHECK(frobenius_norm(x - b) <= 1e-12 * frobenius_norm(b));
}

TEST_CASE("least_squares on a constant column forces the mean") {
    const Matrix a = Matrix::from_rows({{1}, {1}});
    const Matrix b = Matrix::from_rows({{0}, {2}});
    const Matrix x = least_squares(a, b);
    CHECK(x(0, 0) == doctest::Approx(1.0));
    CHECK(frobenius_norm(matmul(a, x) - b) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("least_squares with orthonormal columns equals a^T b") {
    Matrix a(4, 2, 0.0);
    const double s = 1.0 / std::sqrt(2.0);
    a(0, 0) = s;
    a(1, 0) = s;
    a(2, 1) = s;
    a(3, 1) = -s;
    const Matrix b = testsup::random_matrix(4, 3, 9);
    const Matrix x = least_squares(a, b);
    const Matrix atb = matmul(a.transposed(), b);
    CHECK(frobenius_norm(x - atb) <= 1e-12 * frobenius_norm(atb));
}

TEST_CASE("least_squares residual is orthogonal to the column space") {
    const Matrix a = testsup::random_matrix(30, 8, 3);
    const Matrix b = testsup::random_matrix(30, 4, 4);
    const Matrix x = least_squares(a, b);
    const Matrix res = matmul(a, x) - b;
    const Matrix atr = matmul(a.transposed(), res);
    CHECK(frobenius_norm(atr) <= 1e-8 * frobenius_norm(a) * frobenius_norm(b));
}

TEST_CASE("least_squares on duplicate columns returns the minimum-norm split") {
    Matrix a(5, 2, 0.0);
    const Matrix c = testsup::random_matrix(5, 1, 17);
    for (std::size_t i = 0; i < 5; ++i) a(i, 0) = a(i, 1) = c(i, 0);
    const Matrix b = testsup::random_matrix(5, 1, 18);
    const Matrix x = least_squares(a, b);
    // Equal split between the duplicates, and the same residual as the
    // single-column problem.
    CHECK(x(0, 0) == doctest::Approx(x(1, 0)).epsilon(1e-10));
    const Matrix xs = least_squares(c, b);
    CHECK(x(0, 0) + x(1, 0) == doctest::Approx(xs(0, 0)).epsilon(1e-10));
    CHECK(frobenius_norm(matmul(a, x) - b) ==
          doctest::Approx(frobenius_norm(matmul(c, xs) - b)).epsilon(1e-10));
}

TEST_CASE("least_squares on an underdetermined system returns the pseudoinverse solution") {
    // a a^T = 2I, so the minimum-norm solution is a^T b / 2.
    const Matrix a = Matrix::from_rows({{1, 0, 1, 0}, {0, 1, 0, 1}});
    const Matrix b = Matrix::from_rows({{2}, {4}});
    const Matrix x = least_squares(a, b);
    CHECK(x(0, 0) == doctest::Approx(1.0));
    CHECK(x(1, 0) == doctest::Approx(2.0));
    CHECK(x(2, 0) == doctest::Approx(1.0));
    CHECK(x(3, 0) == doctest::Approx(2.0));
    CHECK(frobenius_norm(matmul(a, x) - b) <= 1e-12);
}

TEST_CASE("least_squares dimension mismatch") {
    CHECK_THROWS_AS(least_squares(Matrix(3, 2, 1.0), Matrix(4, 1, 1.0)), DimError);
}

TEST_CASE("spectral_norm on simple matrices") {
    Matrix d(2, 2, 0.0);
    d(0, 0) = 3.0;
    d(1, 1) = 1.0;
    CHECK(spectral_norm(d) == doctest::Approx(3.0).epsilon(1e-8));
    CHECK(spectral_norm(Matrix(3, 3, 0.0)) == 0.0);
    const Matrix s = Matrix::from_rows({{0.5, -0.5}, {-0.5, 0.5}});
    CHECK(spectral_norm(s) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK_THROWS_AS(spectral_norm(Matrix()), DimError);
}

TEST_CASE("spectral_norm brackets sigma_1 on random inputs") {
    for (std::uint64_t seed : {101u, 202u, 303u, 404u}) {
        const Matrix a = testsup::random_matrix(50, 50, seed);
        const double est = spectral_norm(a, 100, seed);
        const double s1 = testsup::sigma_max_oracle(a);
        CHECK(est <= s1 * (1.0 + 1e-6));
        CHECK(est >= 0.99 * s1);
    }
}

TEST_CASE("singular_values_oracle on known spectra") {
    const auto sv = singular_values_oracle(Matrix::from_rows({{1, 0, 2}, {0, 1, 2}}));
    REQUIRE(sv.size() == 2);
    CHECK(sv[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(sv[1] == doctest::Approx(1.0).epsilon(1e-12));

    const auto si = singular_values_oracle(Matrix::identity(4));
    for (double s : si) CHECK(s == doctest::Approx(1.0));

    // Rank-1 outer product.
    const Matrix u = testsup::random_matrix(6, 1, 31);
    const Matrix v = testsup::random_matrix(1, 5, 32);
    const auto sr = singular_values_oracle(matmul(u, v));
    CHECK(sr[0] == doctest::Approx(frobenius_norm(u) * frobenius_norm(v)).epsilon(1e-10));
    for (std::size_t i = 1; i < sr.size(); ++i) CHECK(sr[i] <= 1e-10 * sr[0]);
}
