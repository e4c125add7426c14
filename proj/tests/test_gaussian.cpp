#include <doctest.h>

#include <cmath>

#include "fidgp/gaussian.hpp"
#include "test_support.hpp"

using namespace fidgp;
namespace tt = fidgp::testing;

TEST_CASE("conditional_gaussian on independents is a no-op") {
    JointGaussian j;
    j.mean = {0.3, -0.5, 1.0};
    j.cov = Matrix{{2.0, 0.5, 0.0}, {0.5, 1.5, 0.0}, {0.0, 0.0, 3.0}};
    j.split_index = 2;
    const ConditionalGaussian c = conditional_gaussian(j, {4.0});
    CHECK(c.mean[0] == doctest::Approx(0.3));
    CHECK(c.mean[1] == doctest::Approx(-0.5));
    CHECK(c.cov(0, 0) == doctest::Approx(2.0));
    CHECK(c.cov(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("conditional_gaussian 2x2 closed form") {
    JointGaussian j{{0.0, 0.0}, Matrix{{2.0, 1.0}, {1.0, 2.0}}, 1};
    const ConditionalGaussian c = conditional_gaussian(j, {1.0});
    CHECK(c.mean[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(c.cov(0, 0) == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("conditional_gaussian matches a grid-quadrature oracle in 3-D") {
    // x = first coordinate, condition on the last two
    JointGaussian j;
    j.mean = {0.2, -0.1, 0.4};
    j.cov = Matrix{{1.0, 0.4, 0.2}, {0.4, 1.3, -0.3}, {0.2, -0.3, 0.8}};
    j.split_index = 1;
    const Vector y_obs{0.5, -0.2};
    const ConditionalGaussian c = conditional_gaussian(j, y_obs);

    // oracle: discretize x, evaluate the joint density on the grid
    const Matrix l = cholesky_jittered(j.cov).l;
    const auto joint_logpdf = [&](const Vector& v) {
        Vector d(3);
        for (std::size_t i = 0; i < 3; ++i) d[i] = v[i] - j.mean[i];
        const Vector alpha = cholesky_solve(l, d);
        double quad = 0.0;
        for (std::size_t i = 0; i < 3; ++i) quad += d[i] * alpha[i];
        return -0.5 * quad;  // normalization cancels in the conditional
    };
    double z = 0.0, m1 = 0.0, m2 = 0.0;
    const std::size_t n = 4000;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = -6.0 + 12.0 * static_cast<double>(i) / static_cast<double>(n - 1);
        const double w = std::exp(joint_logpdf({x, y_obs[0], y_obs[1]}));
        z += w;
        m1 += w * x;
        m2 += w * x * x;
    }
    m1 /= z;
    m2 /= z;
    CHECK(std::abs(c.mean[0] - m1) <= 1e-3);
    CHECK(std::abs(c.cov(0, 0) - (m2 - m1 * m1)) <= 1e-3);
}

TEST_CASE("conditioning sequentially equals conditioning jointly") {
    Rng rng(5);
    const Matrix g = rng.normal_matrix(4, 4);
    JointGaussian j;
    j.cov = matmul(g, transpose(g));
    for (std::size_t i = 0; i < 4; ++i) j.cov(i, i) += 0.5;
    j.mean = rng.normal_vector(4);
    j.split_index = 2;
    const Vector y{0.7, -0.4};

    const ConditionalGaussian joint = conditional_gaussian(j, y);

    // condition on the last coordinate first, then on the remaining one
    JointGaussian step1;
    step1.mean = j.mean;
    step1.cov = j.cov;
    step1.split_index = 3;
    const ConditionalGaussian c1 = conditional_gaussian(step1, {y[1]});
    JointGaussian step2{c1.mean, c1.cov, 2};
    const ConditionalGaussian c2 = conditional_gaussian(step2, {y[0]});

    for (std::size_t i = 0; i < 2; ++i) CHECK(c2.mean[i] == doctest::Approx(joint.mean[i]).epsilon(1e-8));
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t k = 0; k < 2; ++k)
            CHECK(c2.cov(i, k) == doctest::Approx(joint.cov(i, k)).epsilon(1e-8));
}

TEST_CASE("matrix_normal_cond_mean identity and zero") {
    const KroneckerTransforms kt = KroneckerTransforms::identity(3, 2, 3, 2);
    Rng rng(7);
    const Matrix u = rng.normal_matrix(3, 2);
    CHECK(frobenius_norm(matrix_normal_cond_mean(kt, u) - u) <= 1e-14);
    CHECK(frobenius_norm(matrix_normal_cond_mean(kt, Matrix(3, 2))) == 0.0);
}

TEST_CASE("matrix_normal_cond_mean matches the Kronecker vec identity") {
    Rng rng(11);
    KroneckerTransforms kt;
    kt.t_row = rng.normal_matrix(3, 2);
    kt.t_col = rng.normal_matrix(4, 2);
    kt.l_row = Matrix::identity(2);
    kt.l_col = Matrix::identity(2);
    const Matrix u = rng.normal_matrix(2, 2);
    const Matrix w = matrix_normal_cond_mean(kt, u);

    // oracle: big Kronecker matrix applied to vec(U), row-major pairing
    const std::size_t d_out = 3, d_in = 4, m_out = 2, m_in = 2;
    Vector vec_u(m_out * m_in);
    for (std::size_t i = 0; i < m_out; ++i)
        for (std::size_t j = 0; j < m_in; ++j) vec_u[i * m_in + j] = u(i, j);
    Vector vec_w(d_out * d_in, 0.0);
    for (std::size_t a = 0; a < d_out; ++a)
        for (std::size_t b = 0; b < d_in; ++b)
            for (std::size_t i = 0; i < m_out; ++i)
                for (std::size_t j = 0; j < m_in; ++j)
                    vec_w[a * d_in + b] += kt.t_row(a, i) * kt.t_col(b, j) * vec_u[i * m_in + j];
    for (std::size_t a = 0; a < d_out; ++a)
        for (std::size_t b = 0; b < d_in; ++b)
            CHECK(w(a, b) == doctest::Approx(vec_w[a * d_in + b]).epsilon(1e-12));
}

TEST_CASE("matheron_sample collapses to the conditional mean as lambda vanishes") {
    Rng rng(13);
    KroneckerTransforms kt;
    kt.t_row = rng.normal_matrix(3, 2);
    kt.t_col = rng.normal_matrix(3, 2);
    kt.refresh_whitening();
    const Matrix u = rng.normal_matrix(2, 2);
    const Matrix w = matheron_sample(kt, u, 1.0, 1e-14, rng);
    CHECK(frobenius_norm(w - matrix_normal_cond_mean(kt, u)) <= 1e-10);
}

TEST_CASE("matheron_sample has the right first two moments") {
    Rng rng(17);
    KroneckerTransforms kt;
    kt.t_row = rng.normal_matrix(3, 2);
    kt.t_col = rng.normal_matrix(2, 2);
    kt.refresh_whitening();
    const Matrix u = rng.normal_matrix(2, 2);
    const double sigma_p = 0.8, lambda = 0.05;
    const std::size_t n = 100000;
    const Matrix expected = matrix_normal_cond_mean(kt, u);

    Matrix mean(3, 2), m2(3, 2);
    for (std::size_t k = 0; k < n; ++k) {
        const Matrix w = matheron_sample(kt, u, sigma_p, lambda, rng);
        for (std::size_t i = 0; i < w.data.size(); ++i) {
            mean.data[i] += w.data[i];
            m2.data[i] += w.data[i] * w.data[i];
        }
    }
    const double noise = lambda * sigma_p;
    const double mean_tol = 4.0 * noise / std::sqrt(static_cast<double>(n));
    for (std::size_t i = 0; i < mean.data.size(); ++i) {
        const double mu = mean.data[i] / static_cast<double>(n);
        CHECK(std::abs(mu - expected.data[i]) <= mean_tol);
        const double var = m2.data[i] / static_cast<double>(n) - mu * mu;
        CHECK(var == doctest::Approx(noise * noise).epsilon(0.05));
    }
}

TEST_CASE("whitened_matheron_sample matches matheron under identity whitening") {
    Rng rng_a(19), rng_b(19);
    const KroneckerTransforms kt = KroneckerTransforms::identity(3, 3, 2, 2);
    const Matrix v = Rng(99).normal_matrix(2, 2);
    const Matrix w1 = matheron_sample(kt, v, 1.0, 0.1, rng_a);
    const Matrix w2 = whitened_matheron_sample(kt, v, 1.0, 0.1, rng_b);
    CHECK(frobenius_norm(w1 - w2) == 0.0);
}

TEST_CASE("whitened_matheron_sample with v equal to the prior draw gives the prior path") {
    Rng rng(23);
    KroneckerTransforms kt;
    kt.t_row = rng.normal_matrix(3, 2);
    kt.t_col = rng.normal_matrix(3, 2);
    kt.refresh_whitening();
    const double sigma_p = 1.0, lambda = 0.2;

    Rng probe(555);  // replicate the internal draws
    const Matrix v_prior = probe.normal_matrix(2, 2);
    const Matrix g = probe.normal_matrix(3, 3);
    const Matrix u_prior = matmul(kt.l_row, matmul(v_prior, transpose(kt.l_col)));
    Matrix w_prior = matrix_normal_cond_mean(kt, u_prior);
    for (std::size_t i = 0; i < w_prior.data.size(); ++i) {
        w_prior.data[i] += lambda * sigma_p * g.data[i];
    }

    Rng call(555);
    const Matrix w = whitened_matheron_sample(kt, v_prior, sigma_p, lambda, call);
    CHECK(frobenius_norm(w - w_prior) <= 1e-12);
}

TEST_CASE("matheron matches the direct reparameterized law for fixed u") {
    Rng rng(29);
    KroneckerTransforms kt;
    kt.t_row = rng.normal_matrix(4, 3);
    kt.t_col = rng.normal_matrix(4, 3);
    kt.refresh_whitening();
    const Matrix u = rng.normal_matrix(3, 3);
    const double sigma_p = 1.0, lambda = 0.1;
    const std::size_t n = 50000;
    const Matrix cond_mean = matrix_normal_cond_mean(kt, u);

    Vector mean_m(16, 0.0), var_m(16, 0.0), mean_d(16, 0.0), var_d(16, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        const Matrix wm = matheron_sample(kt, u, sigma_p, lambda, rng);
        Matrix wd = cond_mean;
        const Matrix g = rng.normal_matrix(4, 4);
        for (std::size_t i = 0; i < 16; ++i) wd.data[i] += lambda * sigma_p * g.data[i];
        for (std::size_t i = 0; i < 16; ++i) {
            mean_m[i] += wm.data[i];
            var_m[i] += wm.data[i] * wm.data[i];
            mean_d[i] += wd.data[i];
            var_d[i] += wd.data[i] * wd.data[i];
        }
    }
    const double noise = lambda * sigma_p;
    const double tol = 4.0 * noise / std::sqrt(static_cast<double>(n));
    for (std::size_t i = 0; i < 16; ++i) {
        const double mm = mean_m[i] / n, md = mean_d[i] / n;
        CHECK(std::abs(mm - md) <= 2.0 * tol);
        const double vm = var_m[i] / n - mm * mm;
        const double vd = var_d[i] / n - md * md;
        CHECK(vm == doctest::Approx(vd).epsilon(0.1));
    }
}

TEST_CASE("gaussian-form preservation: conditional draws pass a moment test") {
    Rng rng(42);
    KroneckerTransforms kt;
    kt.t_row = rng.normal_matrix(3, 2);
    kt.t_col = rng.normal_matrix(3, 2);
    kt.refresh_whitening();
    const Matrix u = rng.normal_matrix(2, 2);
    const double sigma_p = 1.0, lambda = 0.05;
    const std::size_t n = 100000;
    const Matrix expected = matrix_normal_cond_mean(kt, u);

    std::vector<Vector> draws(9);
    for (auto& d : draws) d.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        const Matrix w = matheron_sample(kt, u, sigma_p, lambda, rng);
        for (std::size_t i = 0; i < 9; ++i) draws[i].push_back(w.data[i]);
    }
    const double noise = lambda * sigma_p;
    for (std::size_t i = 0; i < 9; ++i) {
        const tt::Moments m = tt::moments(draws[i]);
        CHECK(std::abs(m.mean - expected.data[i]) <=
              4.0 * noise / std::sqrt(static_cast<double>(n)));
        CHECK(m.variance == doctest::Approx(noise * noise).epsilon(0.05));
        CHECK(std::abs(m.skewness) <= 4.0 / std::sqrt(static_cast<double>(n)));
    }
}

TEST_CASE("conditional_weight_kl closed form") {
    CHECK(conditional_weight_kl(1, 1.0) == 0.0);
    CHECK(conditional_weight_kl(7, 1.0) == 0.0);
    CHECK(conditional_weight_kl(2, 0.5) == doctest::Approx(0.636294).epsilon(1e-5));
    CHECK(conditional_weight_kl(1, 0.001) == doctest::Approx(6.407756).epsilon(1e-6));
    CHECK_THROWS_AS(conditional_weight_kl(1, 0.0), InvalidScale);
    CHECK_THROWS_AS(conditional_weight_kl(1, -0.5), InvalidScale);
}

TEST_CASE("conditional_weight_kl matches high-precision quadrature") {
    // KL between N(0, lambda^2) and N(0, 1) by Simpson integration
    const double lambda = 0.001;
    const auto integrand = [&](double x) {
        const double q = std::exp(-0.5 * x * x / (lambda * lambda)) /
                         (lambda * std::sqrt(2.0 * M_PI));
        if (q < 1e-300) return 0.0;
        const double log_q = -0.5 * x * x / (lambda * lambda) - std::log(lambda) -
                             0.5 * std::log(2.0 * M_PI);
        const double log_p = -0.5 * x * x - 0.5 * std::log(2.0 * M_PI);
        return q * (log_q - log_p);
    };
    const double kl = tt::simpson(integrand, -0.02, 0.02, 200000);
    CHECK(conditional_weight_kl(1, lambda) == doctest::Approx(kl).epsilon(1e-6));
}

TEST_CASE("conditional_weight_kl matches Monte Carlo for D = 2, lambda = 0.5") {
    Rng rng(37);
    const double lambda = 0.5;
    const std::size_t n = 1000000;
    double acc = 0.0, acc2 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double x = lambda * rng.normal();
        const double term = -0.5 * x * x / (lambda * lambda) - std::log(lambda) + 0.5 * x * x;
        acc += term;
        acc2 += term * term;
    }
    const double mc = 2.0 * acc / static_cast<double>(n);  // two i.i.d. dimensions
    const double var = acc2 / static_cast<double>(n) - (acc / n) * (acc / n);
    const double se = 2.0 * std::sqrt(var / static_cast<double>(n));
    CHECK(std::abs(conditional_weight_kl(2, lambda) - mc) <= 3.0 * se);
}

TEST_CASE("conditional_weight_kl is convex with minimum at lambda = 1") {
    Vector vals;
    for (int i = 0; i < 100; ++i) {
        const double lambda = 0.05 + 2.5 * static_cast<double>(i) / 99.0;
        vals.push_back(conditional_weight_kl(5, lambda));
        CHECK(vals.back() >= 0.0);
    }
    for (std::size_t i = 1; i + 1 < vals.size(); ++i) {
        CHECK(vals[i] <= std::max(vals[i - 1], vals[i + 1]) + 1e-12);
        CHECK(vals[i - 1] + vals[i + 1] - 2.0 * vals[i] >= -1e-9);  // discrete convexity
    }
    CHECK(conditional_weight_kl(5, 1.0) == 0.0);
}

TEST_CASE("diag_gaussian_kl closed form and Monte Carlo") {
    SUBCASE("standard normal has zero KL") {
        DiagGaussianVariational q{{0.0, 0.0}, {0.0, 0.0}, 10.0};
        CHECK(diag_gaussian_kl(q) == doctest::Approx(0.0));
    }
    SUBCASE("unit mean shift contributes one half") {
        DiagGaussianVariational q{{1.0}, {0.0}, 10.0};
        CHECK(diag_gaussian_kl(q) == doctest::Approx(0.5));
    }
    SUBCASE("random 16-dim case matches Monte Carlo") {
        Rng rng(41);
        DiagGaussianVariational q;
        q.max_std = 10.0;
        for (int i = 0; i < 16; ++i) {
            q.mean.push_back(0.5 * rng.normal());
            q.log_std.push_back(-0.5 + 0.3 * rng.normal());
        }
        const std::size_t n = 1000000;
        double acc = 0.0, acc2 = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const Vector x = q.sample(rng);
            const double term = q.log_density(x) - standard_normal_log_density(x);
            acc += term;
            acc2 += term * term;
        }
        const double mc = acc / static_cast<double>(n);
        const double se =
            std::sqrt((acc2 / static_cast<double>(n) - mc * mc) / static_cast<double>(n));
        CHECK(std::abs(diag_gaussian_kl(q) - mc) <= 3.0 * se);
    }
    SUBCASE("std clamp caps the density scale") {
        DiagGaussianVariational q{{0.0}, {5.0}, 0.1};  // exp(5) clamped to 0.1
        CHECK(q.std_vector()[0] == doctest::Approx(0.1));
    }
}
