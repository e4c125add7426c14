#pragma once

#include <cstddef>

#include "fidgp/linalg.hpp"
#include "fidgp/matrix.hpp"
#include "fidgp/rng.hpp"

namespace fidgp {

/// Jointly Gaussian (x, y) with x = first `split_index` coordinates.
struct JointGaussian {
    Vector mean;
    Matrix cov;
    std::size_t split_index;
};

struct ConditionalGaussian {
    Vector mean;
    Matrix cov;
};

/// Conditional of x given y = y_obs by Schur complement:
///   mu = mu_x + S_xy S_yy^{-1} (y - mu_y),  cov = S_xx - S_xy S_yy^{-1} S_yx.
ConditionalGaussian conditional_gaussian(const JointGaussian& j, const Vector& y_obs);

/// Row/column transforms of the Kronecker-structured weight conditional,
/// with whitening Cholesky factors of their Gram matrices.
struct KroneckerTransforms {
    Matrix t_row;  // d_out x M_out
    Matrix t_col;  // d_in x M_in
    Matrix l_row;  // M_out x M_out, lower triangular
    Matrix l_col;  // M_in x M_in, lower triangular

    static KroneckerTransforms identity(std::size_t d_out, std::size_t d_in, std::size_t m_out,
                                        std::size_t m_in);
    /// Recompute l_row / l_col as jittered Cholesky factors of T^T T.
    void refresh_whitening();
};

/// E[W | U] = T_row U T_col^T.
Matrix matrix_normal_cond_mean(const KroneckerTransforms& kt, const Matrix& u);

/// Pathwise conditional draw: joint prior sample (U_prior, W_prior), then
/// W = W_prior + T_row (U - U_prior) T_col^T. The conditional residual is
/// isotropic with scale lambda * sigma_p.
Matrix matheron_sample(const KroneckerTransforms& kt, const Matrix& u, double sigma_p,
                       double lambda, Rng& rng);

/// Matheron draw in whitened coordinates: v_prior is standard normal and
/// maps to U-space through the L factors.
Matrix whitened_matheron_sample(const KroneckerTransforms& kt, const Matrix& v, double sigma_p,
                                double lambda, Rng& rng);

/// KL[N(mu, (lambda sigma_p)^2 I) || N(mu, sigma_p^2 I)] over D dims:
/// (D/2)(lambda^2 - 1 - 2 log lambda). Zero iff lambda = 1.
double conditional_weight_kl(std::size_t d, double lambda);

/// Mean-field Gaussian over whitened inducing variables. std is
/// exp(log_std) clamped from above by max_std.
struct DiagGaussianVariational {
    Vector mean;
    Vector log_std;
    double max_std = 0.1;

    std::size_t dim() const { return mean.size(); }
    Vector std_vector() const;
    double log_density(const Vector& x) const;
    Vector sample(Rng& rng) const;
};

/// KL[q || N(0, I)] = sum_i (m_i^2 + s_i^2 - 1 - 2 log s_i) / 2.
double diag_gaussian_kl(const DiagGaussianVariational& q);

double standard_normal_log_density(const Vector& x);

}  // namespace fidgp
