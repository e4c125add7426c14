#pragma once

#include <cstddef>
#include <string>

#include "fidgp/autodiff.hpp"
#include "fidgp/flow.hpp"
#include "fidgp/gaussian.hpp"
#include "fidgp/matrix.hpp"
#include "fidgp/rng.hpp"

namespace fidgp {

enum class SamplingMode { Reparam, Matheron, MeanOnly };

SamplingMode sampling_mode_from_string(const std::string& s);
std::string to_string(SamplingMode mode);

struct InducingLayerOptions {
    std::size_t flow_depth = 4;
    std::size_t flow_hidden = 32;
    double flow_s_cap = 2.0;
    double lambda_init = 0.001;
    double lambda_max = 0.03;
    double sigma_p = 1.0;
    double max_std_u = 0.1;
    double init_log_std = -3.0;  // ~0.05, under the clamp
    bool whitened_u = true;
};

/// A Bayesian linear layer y = x W^T + b whose weight uncertainty lives in
/// an M_out x M_in inducing matrix: W = T_row U T_col^T + residual noise of
/// scale lambda * sigma_p, with a coupling-flow prior over the whitened
/// inducing variables.
struct InducingLayer {
    std::size_t d_in = 0, d_out = 0, m_in = 0, m_out = 0;
    KroneckerTransforms kt;
    DiagGaussianVariational q_v;
    FlowPrior flow;
    Vector lambda_raw;  // single unconstrained scalar
    Vector bias;
    double sigma_p = 1.0;
    double lambda_max = 0.03;
    bool whitened_u = true;

    /// m_in/m_out are clamped to the layer dimensions by the caller.
    static InducingLayer create(std::size_t d_in, std::size_t d_out, std::size_t m_in,
                                std::size_t m_out, const InducingLayerOptions& opts, Rng& rng);

    std::size_t inducing_dim() const { return m_in * m_out; }
    std::size_t weight_dim() const { return d_in * d_out; }

    double lambda() const;

    /// Refresh per-step caches: whitening Cholesky of the transform Grams
    /// and one power-iteration round on every flow sub-map.
    void refresh_cached(std::size_t power_iters);

    /// Posterior-mean inducing matrix in u-space (flow of the variational
    /// mean, mapped through the whitening factors).
    Matrix mean_inducing_u() const;
    Matrix mean_weight() const;

    /// Numeric weight draw in the given mode (no tape).
    Matrix sample_weight(SamplingMode mode, Rng& rng) const;

    void visit_params(const std::string& prefix, const ParamVisitor& fn);
    void visit_state(const std::string& prefix, const ParamVisitor& fn);
};

/// Per-call tensors the ELBO needs alongside the layer output.
struct InducingForwardCache {
    ad::Tensor u0;      // base variational sample
    ad::Tensor logdet;  // flow log-det at u0
    ad::Tensor u;       // flow output, whitened space
    ad::Tensor lam;     // constrained lambda
    ad::Tensor log_q0;  // log q0(u0)
    Vector s_values;    // clamped stds used for the draw
};

/// Batched layer output on a tape: rows of x through the sampled weight.
ad::Tensor inducing_forward_tape(const InducingLayer& layer, const TapeBinding& bind,
                                 const ad::Tensor& x, SamplingMode mode, Rng& rng,
                                 InducingForwardCache* cache);

/// Numeric mirror of inducing_forward_tape; identical draw stream per seed.
Matrix inducing_forward(const InducingLayer& layer, const Matrix& x, SamplingMode mode, Rng& rng);

}  // namespace fidgp
