#include "fidgp/gaussian.hpp"

#include <cmath>

#include "fidgp/errors.hpp"

namespace fidgp {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

ConditionalGaussian conditional_gaussian(const JointGaussian& j, const Vector& y_obs) {
    const std::size_t dim = j.mean.size();
    if (j.cov.rows != dim || j.cov.cols != dim) {
        throw ShapeMismatch("conditional_gaussian: cov " + j.cov.shape_str() + " vs mean " +
                            std::to_string(dim));
    }
    if (j.split_index >= dim) throw ShapeMismatch("conditional_gaussian: split_index >= dim");
    const std::size_t n = j.split_index;
    const std::size_t m = dim - n;
    if (y_obs.size() != m) {
        throw ShapeMismatch("conditional_gaussian: y_obs length " + std::to_string(y_obs.size()) +
                            " vs " + std::to_string(m));
    }

    Matrix s_yy(m, m), s_xy(n, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < m; ++k) s_yy(i, k) = j.cov(n + i, n + k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < m; ++k) s_xy(i, k) = j.cov(i, n + k);

    const Matrix l = cholesky_jittered(s_yy).l;

    Vector resid(m);
    for (std::size_t i = 0; i < m; ++i) resid[i] = y_obs[i] - j.mean[n + i];
    const Vector alpha = cholesky_solve(l, resid);  // S_yy^{-1} (y - mu_y)

    ConditionalGaussian out;
    out.mean.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = j.mean[i];
        for (std::size_t k = 0; k < m; ++k) acc += s_xy(i, k) * alpha[k];
        out.mean[i] = acc;
    }

    const Matrix solve_syx = cholesky_solve(l, transpose(s_xy));  // S_yy^{-1} S_yx
    out.cov = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            double acc = j.cov(i, k);
            for (std::size_t r = 0; r < m; ++r) acc -= s_xy(i, r) * solve_syx(r, k);
            out.cov(i, k) = acc;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = i + 1; k < n; ++k) {
            const double avg = 0.5 * (out.cov(i, k) + out.cov(k, i));
            out.cov(i, k) = avg;
            out.cov(k, i) = avg;
        }
    }
    return out;
}

KroneckerTransforms KroneckerTransforms::identity(std::size_t d_out, std::size_t d_in,
                                                  std::size_t m_out, std::size_t m_in) {
    KroneckerTransforms kt;
    kt.t_row = Matrix(d_out, m_out);
    for (std::size_t i = 0; i < std::min(d_out, m_out); ++i) kt.t_row(i, i) = 1.0;
    kt.t_col = Matrix(d_in, m_in);
    for (std::size_t i = 0; i < std::min(d_in, m_in); ++i) kt.t_col(i, i) = 1.0;
    kt.l_row = Matrix::identity(m_out);
    kt.l_col = Matrix::identity(m_in);
    return kt;
}

void KroneckerTransforms::refresh_whitening() {
    l_row = cholesky_jittered(matmul(transpose(t_row), t_row)).l;
    l_col = cholesky_jittered(matmul(transpose(t_col), t_col)).l;
}

Matrix matrix_normal_cond_mean(const KroneckerTransforms& kt, const Matrix& u) {
    if (kt.t_row.cols != u.rows || kt.t_col.cols != u.cols) {
        throw ShapeMismatch("matrix_normal_cond_mean: U " + u.shape_str() + " vs T_row " +
                            kt.t_row.shape_str() + ", T_col " + kt.t_col.shape_str());
    }
    return matmul(kt.t_row, matmul(u, transpose(kt.t_col)));
}

Matrix matheron_sample(const KroneckerTransforms& kt, const Matrix& u, double sigma_p,
                       double lambda, Rng& rng) {
    if (lambda <= 0.0) throw InvalidScale("matheron_sample: lambda must be positive");
    if (sigma_p <= 0.0) throw InvalidScale("matheron_sample: sigma_p must be positive");
    const std::size_t m_out = kt.t_row.cols;
    const std::size_t m_in = kt.t_col.cols;

    const Matrix z = rng.normal_matrix(m_out, m_in);
    const Matrix u_prior = matmul(kt.l_row, matmul(z, transpose(kt.l_col)));
    Matrix w_prior = matrix_normal_cond_mean(kt, u_prior);
    const Matrix g = rng.normal_matrix(w_prior.rows, w_prior.cols);
    const double noise = lambda * sigma_p;
    for (std::size_t i = 0; i < w_prior.data.size(); ++i) w_prior.data[i] += noise * g.data[i];

    return w_prior + matrix_normal_cond_mean(kt, u - u_prior);
}

Matrix whitened_matheron_sample(const KroneckerTransforms& kt, const Matrix& v, double sigma_p,
                                double lambda, Rng& rng) {
    if (lambda <= 0.0) throw InvalidScale("whitened_matheron_sample: lambda must be positive");
    if (sigma_p <= 0.0) throw InvalidScale("whitened_matheron_sample: sigma_p must be positive");
    const std::size_t m_out = kt.t_row.cols;
    const std::size_t m_in = kt.t_col.cols;
    if (v.rows != m_out || v.cols != m_in) {
        throw ShapeMismatch("whitened_matheron_sample: v " + v.shape_str());
    }

    const Matrix v_prior = rng.normal_matrix(m_out, m_in);
    const Matrix u_prior = matmul(kt.l_row, matmul(v_prior, transpose(kt.l_col)));
    Matrix w_prior = matrix_normal_cond_mean(kt, u_prior);
    const Matrix g = rng.normal_matrix(w_prior.rows, w_prior.cols);
    const double noise = lambda * sigma_p;
    for (std::size_t i = 0; i < w_prior.data.size(); ++i) w_prior.data[i] += noise * g.data[i];

    const Matrix delta = matmul(kt.l_row, matmul(v - v_prior, transpose(kt.l_col)));
    return w_prior + matrix_normal_cond_mean(kt, delta);
}

double conditional_weight_kl(std::size_t d, double lambda) {
    if (lambda <= 0.0) throw InvalidScale("conditional_weight_kl: lambda must be positive");
    return 0.5 * static_cast<double>(d) * (lambda * lambda - 1.0 - 2.0 * std::log(lambda));
}

Vector DiagGaussianVariational::std_vector() const {
    // smooth saturation at max_std; a hard min would freeze the gradient of
    // every coordinate that ever touches the cap
    Vector s(log_std.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = max_std * std::tanh(std::exp(log_std[i]) / max_std);
    }
    return s;
}

double DiagGaussianVariational::log_density(const Vector& x) const {
    if (x.size() != dim()) throw ShapeMismatch("DiagGaussianVariational::log_density: dim");
    const Vector s = std_vector();
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double z = (x[i] - mean[i]) / s[i];
        acc += -0.5 * (kLog2Pi + z * z) - std::log(s[i]);
    }
    return acc;
}

Vector DiagGaussianVariational::sample(Rng& rng) const {
    const Vector s = std_vector();
    Vector x(dim());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = mean[i] + s[i] * rng.normal();
    return x;
}

double diag_gaussian_kl(const DiagGaussianVariational& q) {
    const Vector s = q.std_vector();
    double acc = 0.0;
    for (std::size_t i = 0; i < q.dim(); ++i) {
        acc += 0.5 * (q.mean[i] * q.mean[i] + s[i] * s[i] - 1.0 - 2.0 * std::log(s[i]));
    }
    return acc;
}

double standard_normal_log_density(const Vector& x) {
    double acc = 0.0;
    for (double v : x) acc += -0.5 * (kLog2Pi + v * v);
    return acc;
}

}  // namespace fidgp
