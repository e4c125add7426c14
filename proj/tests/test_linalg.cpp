#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fidgp/linalg.hpp"
#include "test_support.hpp"

using namespace fidgp;
namespace tt = fidgp::testing;

TEST_CASE("cholesky_jittered identity needs no jitter") {
    const CholeskyResult res = cholesky_jittered(Matrix::identity(3));
    CHECK(res.jitter_used == 0.0);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(res.l(i, j) == doctest::Approx(i == j ? 1.0 : 0.0));
}

TEST_CASE("cholesky_jittered known 2x2 factor") {
    const Matrix a{{4.0, 2.0}, {2.0, 5.0}};
    const CholeskyResult res = cholesky_jittered(a);
    CHECK(res.jitter_used == 0.0);
    CHECK(res.l(0, 0) == doctest::Approx(2.0));
    CHECK(res.l(1, 0) == doctest::Approx(1.0));
    CHECK(res.l(1, 1) == doctest::Approx(2.0));
    const Matrix rec = matmul(res.l, transpose(res.l));
    CHECK(frobenius_norm(rec - a) <= 1e-12);
}

TEST_CASE("cholesky_jittered rescues a singular matrix") {
    const Matrix a{{1.0, 1.0}, {1.0, 1.0}};
    // eigenvalue oracle: the matrix is rank deficient
    const EighResult eg = eigh(a);
    CHECK(std::abs(eg.values.front()) <= 1e-12);

    const CholeskyResult res = cholesky_jittered(a);
    CHECK(res.jitter_used >= 1e-6);
    Matrix target = a;
    for (std::size_t i = 0; i < 2; ++i) target(i, i) += res.jitter_used;
    CHECK(frobenius_norm(matmul(res.l, transpose(res.l)) - target) / frobenius_norm(target) <=
          1e-8);
}

TEST_CASE("cholesky_jittered error paths") {
    CHECK_THROWS_AS(cholesky_jittered(Matrix{{1.0, 2.0}, {0.0, 1.0}}), NotSymmetric);
    CHECK_THROWS_AS(cholesky_jittered(Matrix{{-1.0, 0.0}, {0.0, -1.0}}), NotPositiveDefinite);
}

TEST_CASE("cholesky_jittered roundtrip property") {
    Rng rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = 1 + rng.index(12);
        const Matrix g = rng.normal_matrix(n, n);
        Matrix spd = matmul(g, transpose(g));
        if (rep % 3 == 0 && n > 1) {
            // make it rank-deficient: duplicate a row/column pair
            for (std::size_t j = 0; j < n; ++j) {
                spd(0, j) = spd(1, j);
            }
            for (std::size_t i = 0; i < n; ++i) spd(i, 0) = spd(i, 1);
        }
        const CholeskyResult res = cholesky_jittered(spd);
        Matrix target = spd;
        for (std::size_t i = 0; i < n; ++i) target(i, i) += res.jitter_used;
        CHECK(frobenius_norm(matmul(res.l, transpose(res.l)) - target) /
                  std::max(frobenius_norm(target), 1e-12) <=
              1e-8);
    }
}

TEST_CASE("spectral_norm_power identity and diagonal") {
    Rng rng(3);
    auto st = PowerIterState::random_init(4, 4, rng);
    CHECK(spectral_norm_power(Matrix::identity(4), 50, st).sigma == doctest::Approx(1.0));

    const Matrix d{{3.0, 0.0}, {0.0, 1.0}};
    auto st2 = PowerIterState::random_init(2, 2, rng);
    CHECK(spectral_norm_power(d, 50, st2).sigma == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("spectral_norm_power zero matrix") {
    Rng rng(9);
    auto st = PowerIterState::random_init(3, 3, rng);
    CHECK(spectral_norm_power(Matrix(3, 3), 10, st).sigma == 0.0);
}

TEST_CASE("spectral_norm_power seeded 5x3 matches SVD oracle") {
    Rng rng(11);
    const Matrix w = rng.normal_matrix(5, 3);
    const double exact = tt::svd_sigma_max(w);
    const double sig =
        spectral_norm_power(w, 5000, PowerIterState::random_init(5, 3, rng)).sigma;
    CHECK(std::abs(sig - exact) / exact <= 1e-6);
}

TEST_CASE("spectral_norm_power matches SVD oracle on 100 seeded matrices") {
    Rng rng(1234);
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t r = 2 + rng.index(31);
        const std::size_t c = 2 + rng.index(31);
        const Matrix w = rng.normal_matrix(r, c);
        const double exact = tt::svd_sigma_max(w);
        const double sig =
            spectral_norm_power(w, 20000, PowerIterState::random_init(r, c, rng)).sigma;
        worst = std::max(worst, std::abs(sig - exact) / exact);
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("spectral_normalize scales down to unit norm") {
    Rng rng(5);
    SUBCASE("2I -> I") {
        const Matrix w = 2.0 * Matrix::identity(2);
        auto est = spectral_norm_power(w, 50, PowerIterState::random_init(2, 2, rng));
        const Matrix wn = spectral_normalize(w, est.state);
        CHECK(frobenius_norm(wn - Matrix::identity(2)) <= 1e-10);
    }
    SUBCASE("diag(3,1) -> diag(1,1/3)") {
        const Matrix w{{3.0, 0.0}, {0.0, 1.0}};
        auto est = spectral_norm_power(w, 200, PowerIterState::random_init(2, 2, rng));
        const Matrix wn = spectral_normalize(w, est.state);
        CHECK(wn(0, 0) == doctest::Approx(1.0).epsilon(1e-8));
        CHECK(wn(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-8));
    }
    SUBCASE("random 8x8 lands within 1e-4 of unit spectral norm") {
        const Matrix w = rng.normal_matrix(8, 8);
        auto est = spectral_norm_power(w, 5000, PowerIterState::random_init(8, 8, rng));
        const Matrix wn = spectral_normalize(w, est.state);
        const double sig = tt::svd_sigma_max(wn);
        CHECK(sig >= 1.0 - 1e-4);
        CHECK(sig <= 1.0 + 1e-4);
    }
}

TEST_CASE("ridge_projector full-rank identity gives the identity projector") {
    const Matrix p = ridge_projector(Matrix::identity(2), 0.0);
    CHECK(frobenius_norm(p - Matrix::identity(2)) <= 1e-10);
    // ||I - P||_sigma = 0 for full-rank square U
    CHECK(tt::svd_sigma_max(Matrix::identity(2) - p) <= 1e-10);
}

TEST_CASE("ridge_projector rank-deficient pseudoinverse path") {
    const Matrix u{{1.0, 0.0}, {0.0, 0.0}};
    const Matrix p = ridge_projector(u, 0.0);
    CHECK(p(0, 0) == doctest::Approx(1.0));
    CHECK(p(1, 1) == doctest::Approx(0.0));
    CHECK(std::abs(p(0, 1)) <= 1e-12);
    CHECK(tt::svd_sigma_max(Matrix::identity(2) - p) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("ridge_projector seeded rectangular case") {
    Rng rng(21);
    const Matrix u = rng.normal_matrix(2, 4);
    const Matrix p = ridge_projector(u, 1e-3);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(p(i, j) - p(j, i)) <= 1e-10);
    const EighResult eg = eigh(p);
    for (double v : eg.values) {
        CHECK(v >= -1e-12);
        CHECK(v <= 1.0 + 1e-12);
    }
    // two nonzero eigenvalues strictly inside (0,1) from the ridge
    CHECK(eg.values.back() < 1.0);
    CHECK(eg.values.back() > 0.0);
}

TEST_CASE("ridge_projector idempotent in the exact limit") {
    Rng rng(31);
    for (int rep = 0; rep < 10; ++rep) {
        const Matrix u = rng.normal_matrix(3, 6);  // full row rank a.s.
        const Matrix p = ridge_projector(u, 0.0);
        CHECK(frobenius_norm(matmul(p, p) - p) <= 1e-8);
        CHECK(tt::svd_sigma_max(Matrix::identity(6) - p) == doctest::Approx(1.0).epsilon(1e-8));
    }
}

TEST_CASE("ridge_projector zero Gram raises SingularGram") {
    CHECK_THROWS_AS(ridge_projector(Matrix(2, 3), 0.0), SingularGram);
}

TEST_CASE("eigh recovers a known spectrum") {
    Rng rng(41);
    const Matrix q = random_orthogonal(5, 5, rng);
    Matrix d(5, 5);
    const Vector eigs{-2.0, -0.5, 0.0, 1.5, 4.0};
    for (std::size_t i = 0; i < 5; ++i) d(i, i) = eigs[i];
    const Matrix a = matmul(q, matmul(d, transpose(q)));
    const EighResult eg = eigh(a);
    for (std::size_t i = 0; i < 5; ++i) CHECK(eg.values[i] == doctest::Approx(eigs[i]).epsilon(1e-10));
    // reconstruction
    Matrix rec(5, 5);
    for (std::size_t k = 0; k < 5; ++k)
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 5; ++j)
                rec(i, j) += eg.values[k] * eg.vectors(i, k) * eg.vectors(j, k);
    CHECK(frobenius_norm(rec - a) <= 1e-9);
}
