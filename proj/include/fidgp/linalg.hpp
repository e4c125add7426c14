#pragma once

#include <cstddef>
#include <utility>

#include "fidgp/matrix.hpp"
#include "fidgp/rng.hpp"

namespace fidgp {

/// Geometric escalation schedule for the diagonal jitter added to a
/// Gram matrix before Cholesky: {0, initial, initial*growth, ...} up to
/// max_jitter.
struct JitterSchedule {
    double initial = 1e-6;
    double growth_factor = 10.0;
    double max_jitter = 1e-2;
};

struct CholeskyResult {
    Matrix l;            // lower triangular
    double jitter_used;  // diagonal shift that made the factorization succeed
};

/// Cholesky of a symmetric matrix with escalating jitter. Succeeds with
/// the first shift in the schedule for which all pivots stay positive and
/// L L^T reconstructs A + jitter I to 1e-8 relative Frobenius.
CholeskyResult cholesky_jittered(const Matrix& a, const JitterSchedule& sched = {});

/// Solve (L L^T) x = b given the lower-triangular factor.
Vector cholesky_solve(const Matrix& l, const Vector& b);
Matrix cholesky_solve(const Matrix& l, const Matrix& b);

/// Persistent left/right singular-vector estimates for power iteration.
struct PowerIterState {
    Vector left_vec;   // length rows, unit norm
    Vector right_vec;  // length cols, unit norm

    static PowerIterState random_init(std::size_t rows, std::size_t cols, Rng& rng);
};

struct SpectralEstimate {
    double sigma;
    PowerIterState state;
};

/// Largest singular value of W by `iters` rounds of power iteration on
/// W^T W, warm-started from and returning the updated vector pair.
/// A zero matrix yields sigma = 0.
SpectralEstimate spectral_norm_power(const Matrix& w, std::size_t iters, PowerIterState state);

/// W / max(sigma, 1e-12) with sigma from the supplied state (one Rayleigh
/// evaluation, no iteration). Callers refresh the state themselves.
Matrix spectral_normalize(const Matrix& w, const PowerIterState& state);

/// Ridge projector P = U^T (U U^T + lambda I)^{-1} U. With lambda = 0 the
/// Gram inverse falls back to an eigendecomposition pseudoinverse with
/// cutoff 1e-10 * max eigenvalue; rank zero there raises SingularGram.
/// Output is symmetrized and has eigenvalues in [0, 1].
Matrix ridge_projector(const Matrix& u, double lambda_proj);

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues ascend; eigenvectors are the columns of `vectors`.
struct EighResult {
    Vector values;
    Matrix vectors;
};
EighResult eigh(const Matrix& a);

/// Seeded Gaussian draw with orthonormalized columns (rows >= cols).
Matrix random_orthogonal(std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace fidgp
