#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fidgp/autodiff.hpp"
#include "fidgp/gaussian.hpp"
#include "fidgp/linalg.hpp"
#include "fidgp/matrix.hpp"
#include "fidgp/rng.hpp"

namespace fidgp {

/// Maps parameter storage to leaf tensors of one tape. Parameters not in
/// the map participate as constants.
struct TapeBinding {
    ad::Tape* tape = nullptr;
    std::unordered_map<const Vector*, ad::Tensor> leaves;

    ad::Tensor tensor_for(const Vector& storage, ad::Shape shape) const;
    ad::Tensor tensor_for(const Matrix& m) const;
};

using ParamVisitor = std::function<void(const std::string& name, Vector& storage, ad::Shape shape)>;

/// Linear map under a one-sided spectral constraint: forward applies
/// W / max(s, 1) with s the Rayleigh estimate held in the power-iteration
/// state. Dividing only when the estimate exceeds one keeps zero-initialized
/// maps exactly zero while still enforcing sigma_max <= 1.
struct NormalizedLinear {
    Matrix w;
    Vector b;
    PowerIterState state;

    static NormalizedLinear create(std::size_t out_dim, std::size_t in_dim, bool zero_init,
                                   Rng& rng);

    double sigma_estimate() const;
    void refresh_power(std::size_t iters);
    Matrix normalized_weight() const;

    Vector forward(const Vector& x) const;
    /// Tape forward for a rank-1 input; sigma enters the graph as u^T W v
    /// with the state vectors as constants.
    ad::Tensor forward_tape(const TapeBinding& bind, const ad::Tensor& x) const;

    void visit_params(const std::string& prefix, const ParamVisitor& fn);
    void visit_state(const std::string& prefix, const ParamVisitor& fn);
};

/// One affine coupling block. The identity half alternates with layer
/// parity; scale and shift conditioners are two-layer tanh perceptrons with
/// spectrally constrained weights. Scale outputs pass through
/// s_cap * tanh(raw) so each coordinate log-scale stays in [-s_cap, s_cap].
struct CouplingLayer {
    std::size_t dim = 0;
    bool identity_first = true;  // even layers freeze the leading half
    double s_cap = 2.0;
    NormalizedLinear scale_l1, scale_l2;
    NormalizedLinear shift_l1, shift_l2;

    static CouplingLayer create(std::size_t dim, std::size_t parity, std::size_t hidden,
                                double s_cap, Rng& rng);

    std::size_t id_len() const { return identity_first ? dim / 2 : dim - dim / 2; }
    std::pair<Vector, double> forward(const Vector& x) const;
    Vector inverse(const Vector& y) const;
    std::pair<ad::Tensor, ad::Tensor> forward_tape(const TapeBinding& bind,
                                                   const ad::Tensor& x) const;
    void refresh_power(std::size_t iters);
    void visit_params(const std::string& prefix, const ParamVisitor& fn);
    void visit_state(const std::string& prefix, const ParamVisitor& fn);
};

/// Invertible map g over R^dim assembled from coupling blocks. Freshly
/// created flows are exactly the identity (zero-initialized conditioner
/// output layers), so the prior starts as a plain standard normal.
class FlowPrior {
  public:
    FlowPrior() = default;
    static FlowPrior create(std::size_t dim, std::size_t depth, std::size_t hidden, double s_cap,
                            Rng& rng);

    std::size_t dim() const { return dim_; }
    std::size_t depth() const { return layers_.size(); }

    /// u = g(u0) together with log|det J_g(u0)|.
    std::pair<Vector, double> forward(const Vector& u0) const;
    Vector inverse(const Vector& u) const;

    /// log p(u) = log N(g^{-1}(u); 0, I) - log|det J_g(g^{-1}(u))|.
    double log_prior_density(const Vector& u) const;

    std::pair<ad::Tensor, ad::Tensor> forward_tape(const TapeBinding& bind,
                                                   const ad::Tensor& u0) const;

    void refresh_power(std::size_t iters);
    void visit_params(const std::string& prefix, const ParamVisitor& fn);
    void visit_state(const std::string& prefix, const ParamVisitor& fn);

    std::vector<CouplingLayer>& layers() { return layers_; }
    const std::vector<CouplingLayer>& layers() const { return layers_; }

  private:
    std::size_t dim_ = 0;
    std::vector<CouplingLayer> layers_;
};

/// Monte-Carlo KL between the flow-pushed variational distribution and a
/// prior (another flow, or the standard normal when prior == nullptr):
/// mean over samples of log q0(u0) - log|det J_g(u0)| - log p(g(u0)).
double flow_kl_mc(const FlowPrior& f, const DiagGaussianVariational& q, const FlowPrior* prior,
                  std::size_t n_samples, Rng& rng);

/// Feed-forward tanh network whose weights are divided by converged
/// spectral-norm estimates at construction; the composition is certifiably
/// 1-Lipschitz. Used where the separation bounds need a certified map.
class LipschitzMlp {
  public:
    LipschitzMlp() = default;
    static LipschitzMlp create(std::size_t dim, std::size_t depth, std::size_t hidden, Rng& rng);
    static LipschitzMlp identity(std::size_t dim);

    Vector forward(const Vector& x) const;
    std::size_t dim() const { return dim_; }
    bool is_identity() const { return weights_.empty(); }

  private:
    std::size_t dim_ = 0;
    std::vector<Matrix> weights_;  // already normalized
    std::vector<Vector> biases_;
};

}  // namespace fidgp
