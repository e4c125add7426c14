#include "fidgp/selfcheck.hpp"

#include <cmath>
#include <sstream>

#include "fidgp/flow.hpp"
#include "fidgp/gaussian.hpp"
#include "fidgp/linalg.hpp"
#include "fidgp/metrics.hpp"
#include "fidgp/ood.hpp"

namespace fidgp {

namespace {

std::string fmt(double v) {
    std::ostringstream ss;
    ss.precision(6);
    ss << v;
    return ss.str();
}

}  // namespace

std::vector<CheckResult> run_selfcheck(std::uint64_t seed) {
    std::vector<CheckResult> results;
    Rng rng(seed);
    const auto check = [&](const std::string& name, bool ok, const std::string& detail) {
        results.push_back({name, ok, detail});
    };

    {  // jittered Cholesky round-trip on random SPD matrices
        double worst = 0.0;
        for (int rep = 0; rep < 20; ++rep) {
            const std::size_t n = 2 + rng.index(10);
            const Matrix a = rng.normal_matrix(n, n);
            Matrix spd = matmul(a, transpose(a));
            const CholeskyResult res = cholesky_jittered(spd);
            const Matrix rec = matmul(res.l, transpose(res.l));
            Matrix target = spd;
            for (std::size_t i = 0; i < n; ++i) target(i, i) += res.jitter_used;
            worst = std::max(worst, frobenius_norm(rec - target) / frobenius_norm(target));
        }
        check("cholesky-roundtrip", worst <= 1e-8, "max rel err " + fmt(worst));
    }

    {  // power iteration vs the Jacobi eigensolver on W^T W
        double worst = 0.0;
        for (int rep = 0; rep < 20; ++rep) {
            const std::size_t r = 2 + rng.index(8), c = 2 + rng.index(8);
            const Matrix w = rng.normal_matrix(r, c);
            const double sig =
                spectral_norm_power(w, 5000, PowerIterState::random_init(r, c, rng)).sigma;
            const EighResult eg = eigh(matmul(transpose(w), w));
            const double exact = std::sqrt(std::max(0.0, eg.values.back()));
            worst = std::max(worst, std::abs(sig - exact) / exact);
        }
        check("spectral-norm-vs-eigh", worst <= 1e-6, "max rel err " + fmt(worst));
    }

    {  // conditional Gaussian closed form
        JointGaussian j{{0.0, 0.0}, Matrix{{2.0, 1.0}, {1.0, 2.0}}, 1};
        const ConditionalGaussian cond = conditional_gaussian(j, {1.0});
        const bool ok =
            std::abs(cond.mean[0] - 0.5) < 1e-12 && std::abs(cond.cov(0, 0) - 1.5) < 1e-12;
        check("conditional-gaussian", ok,
              "mean " + fmt(cond.mean[0]) + ", cov " + fmt(cond.cov(0, 0)));
    }

    {  // conditional weight KL closed form vs Monte Carlo
        const double lambda = 0.5;
        const double exact = conditional_weight_kl(1, lambda);
        double mc = 0.0;
        const std::size_t n = 200000;
        Rng mc_rng = rng.split(11);
        for (std::size_t i = 0; i < n; ++i) {
            const double x = lambda * mc_rng.normal();
            // log N(x; 0, lambda^2) - log N(x; 0, 1)
            mc += -0.5 * x * x / (lambda * lambda) - std::log(lambda) + 0.5 * x * x;
        }
        mc /= static_cast<double>(n);
        const double se = 3.0 / std::sqrt(static_cast<double>(n));
        check("conditional-kl-vs-mc", std::abs(mc - exact) <= 3.0 * se + 1e-3,
              "closed " + fmt(exact) + " vs mc " + fmt(mc));
    }

    {  // flow inverse round-trip and log-det consistency
        Rng frng = rng.split(21);
        FlowPrior flow = FlowPrior::create(8, 4, 16, 2.0, frng);
        for (CouplingLayer& cl : flow.layers()) {  // perturb away from identity
            for (double& v : cl.scale_l2.w.data) v = 0.3 * frng.normal();
            for (double& v : cl.shift_l2.w.data) v = 0.3 * frng.normal();
        }
        flow.refresh_power(50);
        double worst = 0.0;
        for (int rep = 0; rep < 50; ++rep) {
            const Vector u0 = frng.normal_vector(8);
            const auto [u, ld] = flow.forward(u0);
            const Vector back = flow.inverse(u);
            for (std::size_t i = 0; i < 8; ++i) worst = std::max(worst, std::abs(back[i] - u0[i]));
            const double ld_back = flow.forward(back).second;
            worst = std::max(worst, std::abs(ld - ld_back));
        }
        check("flow-roundtrip", worst <= 1e-6, "max err " + fmt(worst));
    }

    {  // Matheron draw matches the direct reparameterized law
        Rng mrng = rng.split(31);
        KroneckerTransforms kt = KroneckerTransforms::identity(3, 3, 2, 2);
        Matrix u(2, 2, {0.5, -0.2, 0.1, 0.8});
        const double sigma_p = 1.0, lambda = 0.05;
        const std::size_t n = 20000;
        Matrix mean_acc(3, 3);
        for (std::size_t i = 0; i < n; ++i) {
            const Matrix w = matheron_sample(kt, u, sigma_p, lambda, mrng);
            for (std::size_t k = 0; k < w.data.size(); ++k) mean_acc.data[k] += w.data[k];
        }
        const Matrix expected = matrix_normal_cond_mean(kt, u);
        double worst = 0.0;
        for (std::size_t k = 0; k < mean_acc.data.size(); ++k) {
            worst = std::max(worst, std::abs(mean_acc.data[k] / static_cast<double>(n) -
                                             expected.data[k]));
        }
        const double tol = 5.0 * lambda * sigma_p / std::sqrt(static_cast<double>(n));
        check("matheron-mean", worst <= tol, "max dev " + fmt(worst) + " tol " + fmt(tol));
    }

    {  // AUROC hand value
        const double a = auroc({0.1, 0.4}, {0.3, 0.9});
        check("auroc-hand-value", std::abs(a - 0.75) < 1e-12, "auroc " + fmt(a));
    }

    {  // metric hand values
        Matrix probs(2, 2, {0.5, 0.5, 0.5, 0.5});
        const double n = nll_categorical(probs, {0, 1});
        const double e = ece(probs, {0, 1});
        const bool ok = std::abs(n - std::log(2.0)) < 1e-12 && std::abs(e) < 1e-12;
        check("metrics-hand-values", ok, "nll " + fmt(n) + ", ece " + fmt(e));
    }

    return results;
}

}  // namespace fidgp
