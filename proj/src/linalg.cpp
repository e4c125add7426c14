#include "fidgp/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace fidgp {

namespace {

// Plain lower Cholesky; returns false on a non-positive pivot.
bool try_cholesky(const Matrix& a, double jitter, Matrix& l) {
    const std::size_t n = a.rows;
    l = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double diag = a(j, j) + jitter;
        for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
        if (!(diag > 0.0) || !std::isfinite(diag)) return false;
        const double ljj = std::sqrt(diag);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double acc = a(i, j);
            for (std::size_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
            l(i, j) = acc / ljj;
        }
    }
    return true;
}

double reconstruction_error(const Matrix& l, const Matrix& a, double jitter) {
    const std::size_t n = a.rows;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double rec = 0.0;
            const std::size_t kmax = std::min(i, j) + 1;
            for (std::size_t k = 0; k < kmax; ++k) rec += l(i, k) * l(j, k);
            const double target = a(i, j) + (i == j ? jitter : 0.0);
            num += (rec - target) * (rec - target);
            den += target * target;
        }
    }
    return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace

CholeskyResult cholesky_jittered(const Matrix& a, const JitterSchedule& sched) {
    if (a.rows != a.cols) throw NotSymmetric("cholesky_jittered: non-square " + a.shape_str());
    const double scale = max_abs(a);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = i + 1; j < a.cols; ++j) {
            if (std::abs(a(i, j) - a(j, i)) > 1e-10 * std::max(scale, 1.0)) {
                throw NotSymmetric("cholesky_jittered: asymmetry at (" + std::to_string(i) + "," +
                                   std::to_string(j) + ")");
            }
        }
    }
    Matrix l;
    double jitter = 0.0;
    while (true) {
        if (try_cholesky(a, jitter, l) && reconstruction_error(l, a, jitter) <= 1e-8) {
            return {std::move(l), jitter};
        }
        if (jitter == 0.0) {
            jitter = sched.initial;
        } else {
            jitter *= sched.growth_factor;
        }
        if (jitter > sched.max_jitter * (1.0 + 1e-12)) {
            throw NotPositiveDefinite("cholesky_jittered: jitter schedule exhausted at " +
                                      std::to_string(sched.max_jitter));
        }
    }
}

Vector cholesky_solve(const Matrix& l, const Vector& b) {
    const std::size_t n = l.rows;
    if (b.size() != n) throw ShapeMismatch("cholesky_solve: rhs length mismatch");
    Vector y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = b[i];
        for (std::size_t k = 0; k < i; ++k) acc -= l(i, k) * y[k];
        y[i] = acc / l(i, i);
    }
    Vector x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double acc = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) acc -= l(k, ii) * x[k];
        x[ii] = acc / l(ii, ii);
    }
    return x;
}

Matrix cholesky_solve(const Matrix& l, const Matrix& b) {
    Matrix x(b.rows, b.cols);
    Vector col(b.rows);
    for (std::size_t j = 0; j < b.cols; ++j) {
        for (std::size_t i = 0; i < b.rows; ++i) col[i] = b(i, j);
        Vector sol = cholesky_solve(l, col);
        for (std::size_t i = 0; i < b.rows; ++i) x(i, j) = sol[i];
    }
    return x;
}

PowerIterState PowerIterState::random_init(std::size_t rows, std::size_t cols, Rng& rng) {
    PowerIterState st;
    st.left_vec = rng.unit_vector(rows);
    st.right_vec = rng.unit_vector(cols);
    return st;
}

SpectralEstimate spectral_norm_power(const Matrix& w, std::size_t iters, PowerIterState state) {
    if (w.empty()) return {0.0, std::move(state)};
    if (state.left_vec.size() != w.rows || state.right_vec.size() != w.cols) {
        throw ShapeMismatch("spectral_norm_power: state dims do not match " + w.shape_str());
    }
    double sigma = 0.0;
    for (std::size_t it = 0; it < iters; ++it) {
        Vector wv = matvec(w, state.right_vec);
        const double wn = norm2(wv);
        if (wn == 0.0) return {0.0, std::move(state)};
        for (double& x : wv) x /= wn;
        state.left_vec = std::move(wv);

        Vector wtu = matvec_t(w, state.left_vec);
        const double un = norm2(wtu);
        if (un == 0.0) return {0.0, std::move(state)};
        for (double& x : wtu) x /= un;
        state.right_vec = std::move(wtu);
        sigma = un;  // ||W^T u|| with unit u is the Rayleigh estimate
    }
    if (iters == 0) {
        sigma = dot(state.left_vec, matvec(w, state.right_vec));
    }
    return {std::abs(sigma), std::move(state)};
}

Matrix spectral_normalize(const Matrix& w, const PowerIterState& state) {
    if (w.empty()) return w;
    const double sigma = std::abs(dot(state.left_vec, matvec(w, state.right_vec)));
    const double denom = std::max(sigma, 1e-12);
    return (1.0 / denom) * w;
}

EighResult eigh(const Matrix& a) {
    if (a.rows != a.cols) throw NotSymmetric("eigh: non-square " + a.shape_str());
    const std::size_t n = a.rows;
    Matrix d = a;
    Matrix v = Matrix::identity(n);
    const std::size_t max_sweeps = 64;
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += d(i, j) * d(i, j);
        if (std::sqrt(off) <= 1e-14 * std::max(1.0, frobenius_norm(a))) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = d(p, q);
                if (apq == 0.0) continue;
                const double theta = (d(q, q) - d(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double dkp = d(k, p), dkq = d(k, q);
                    d(k, p) = c * dkp - s * dkq;
                    d(k, q) = s * dkp + c * dkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double dpk = d(p, k), dqk = d(q, k);
                    d(p, k) = c * dpk - s * dqk;
                    d(q, k) = s * dpk + c * dqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    EighResult res;
    res.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) res.values[i] = d(i, i);
    // sort ascending, permuting eigenvector columns alongside
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return res.values[x] < res.values[y]; });
    Vector sorted_vals(n);
    Matrix sorted_vecs(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        sorted_vals[j] = res.values[order[j]];
        for (std::size_t i = 0; i < n; ++i) sorted_vecs(i, j) = v(i, order[j]);
    }
    res.values = std::move(sorted_vals);
    res.vectors = std::move(sorted_vecs);
    return res;
}

Matrix random_orthogonal(std::size_t rows, std::size_t cols, Rng& rng) {
    if (cols > rows) throw ShapeMismatch("random_orthogonal: cols > rows");
    Matrix a = rng.normal_matrix(rows, cols);
    for (std::size_t j = 0; j < cols; ++j) {
        for (std::size_t pass = 0; pass < 2; ++pass) {  // re-orthogonalize for accuracy
            for (std::size_t k = 0; k < j; ++k) {
                double proj = 0.0;
                for (std::size_t i = 0; i < rows; ++i) proj += a(i, j) * a(i, k);
                for (std::size_t i = 0; i < rows; ++i) a(i, j) -= proj * a(i, k);
            }
        }
        double nrm = 0.0;
        for (std::size_t i = 0; i < rows; ++i) nrm += a(i, j) * a(i, j);
        nrm = std::sqrt(nrm);
        if (nrm < 1e-12) {
            a(j % rows, j) = 1.0;
            nrm = 1.0;
        }
        for (std::size_t i = 0; i < rows; ++i) a(i, j) /= nrm;
    }
    return a;
}

Matrix ridge_projector(const Matrix& u, double lambda_proj) {
    if (lambda_proj < 0.0) throw InvalidScale("ridge_projector: negative lambda_proj");
    const std::size_t m = u.rows;
    const std::size_t n = u.cols;
    Matrix gram = matmul(u, transpose(u));  // M x M

    Matrix p(n, n);
    if (lambda_proj > 0.0) {
        for (std::size_t i = 0; i < m; ++i) gram(i, i) += lambda_proj;
        const Matrix l = cholesky_jittered(gram, {1e-12, 10.0, 1e-10}).l;
        const Matrix ginv_u = cholesky_solve(l, u);  // (UU^T + lambda I)^{-1} U
        p = matmul(transpose(u), ginv_u);
    } else {
        // pseudoinverse path used by the exact-projector lemma checks
        const EighResult eg = eigh(gram);
        const double cutoff = 1e-10 * std::max(0.0, eg.values.back());
        Matrix scaled(m, m);  // V diag(1/eig on retained) V^T
        std::size_t rank = 0;
        for (std::size_t k = 0; k < m; ++k) {
            if (eg.values[k] > cutoff && eg.values[k] > 0.0) {
                ++rank;
                const double inv = 1.0 / eg.values[k];
                for (std::size_t i = 0; i < m; ++i) {
                    const double vik = eg.vectors(i, k) * inv;
                    for (std::size_t j = 0; j < m; ++j) scaled(i, j) += vik * eg.vectors(j, k);
                }
            }
        }
        if (rank == 0) throw SingularGram("ridge_projector: Gram matrix has numerical rank 0");
        p = matmul(transpose(u), matmul(scaled, u));
    }
    // symmetrize; solves leave tiny asymmetries
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double avg = 0.5 * (p(i, j) + p(j, i));
            p(i, j) = avg;
            p(j, i) = avg;
        }
    }
    return p;
}

}  // namespace fidgp
