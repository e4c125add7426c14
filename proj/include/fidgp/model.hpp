#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "fidgp/layer.hpp"
#include "fidgp/matrix.hpp"
#include "fidgp/rng.hpp"

namespace fidgp {

enum class Likelihood { Gaussian, Categorical };

Likelihood likelihood_from_string(const std::string& s);
std::string to_string(Likelihood lik);

/// Plain learnable dense layer, for backbones that mix deterministic and
/// inducing blocks.
struct DenseLayer {
    Matrix w;  // d_out x d_in
    Vector b;

    static DenseLayer create(std::size_t d_in, std::size_t d_out, Rng& rng);
    void visit_params(const std::string& prefix, const ParamVisitor& fn);
};

struct ModelLayer {
    enum class Kind { Dense, Inducing };
    Kind kind = Kind::Inducing;
    DenseLayer dense;
    InducingLayer inducing;
    bool tanh_activation = true;

    std::size_t in_dim() const;
    std::size_t out_dim() const;
};

struct Batch {
    Matrix x;                         // B x d_in
    Matrix y;                         // B x d_out (gaussian)
    std::vector<std::size_t> labels;  // B (categorical)

    std::size_t size() const { return x.rows; }
};

/// ELBO pieces as they enter the objective (KL terms already scaled by the
/// annealing factor): elbo = loglik - kl_flow - kl_cond.
struct ElboTerms {
    double loglik = 0.0;
    double kl_flow = 0.0;
    double kl_cond = 0.0;

    double elbo() const { return loglik - kl_flow - kl_cond; }
};

struct ElboOptions {
    std::size_t n_total = 1;
    double kl_scale = 1.0;
    SamplingMode mode = SamplingMode::Reparam;
    std::size_t train_samples = 1;
};

/// Feed-forward stack over standardized inputs.
class Model {
  public:
    std::vector<ModelLayer> layers;
    Vector input_mean, input_std;  // per-feature standardization from train data
    Likelihood likelihood = Likelihood::Gaussian;
    double noise_std = 0.1;       // gaussian sigma_n
    double label_smoothing = 0.0; // categorical

    std::size_t in_dim() const { return layers.front().in_dim(); }
    std::size_t out_dim() const { return layers.back().out_dim(); }

    Matrix standardize(const Matrix& x) const;
    void set_standardization(const Matrix& train_x);

    /// One numeric forward pass with the given sampling mode.
    Matrix forward(const Matrix& x, SamplingMode mode, Rng& rng) const;

    /// MC prediction: per-entry mean and standard deviation of the raw
    /// outputs across n_samples passes (zero std for MeanOnly).
    struct Prediction {
        Matrix mean;
        Matrix std;
    };
    Prediction predict(const Matrix& x, std::size_t n_samples, SamplingMode mode, Rng& rng) const;

    /// MC-averaged softmax probabilities (categorical models).
    Matrix predict_probs(const Matrix& x, std::size_t n_samples, SamplingMode mode, Rng& rng) const;

    void refresh_cached(std::size_t power_iters);
    void visit_params(const ParamVisitor& fn);
    void visit_state(const ParamVisitor& fn);

    std::vector<std::size_t> inducing_layer_indices() const;
};

/// Standard desk backbone: widths[0] -> hidden... -> widths.back(), tanh on
/// hidden layers, every layer an inducing layer with dims clamped to the
/// layer shape.
Model make_mlp_model(const std::vector<std::size_t>& widths, std::size_t m_in, std::size_t m_out,
                     const InducingLayerOptions& opts, Likelihood lik, Rng& rng);

struct ElboEval {
    ElboTerms terms;
    std::map<std::string, Vector> grads;  // by parameter name
};

/// Assemble the training objective on a tape and return its value; the
/// same draw stream as elbo_backward under an equal-seeded rng.
ElboTerms elbo_value(Model& model, const Batch& batch, const ElboOptions& opts, Rng& rng);

/// Value plus gradients of -elbo for every learnable parameter.
ElboEval elbo_backward(Model& model, const Batch& batch, const ElboOptions& opts, Rng& rng);

struct TraceRow {
    std::size_t epoch = 0;
    double loglik = 0.0;
    double kl_flow = 0.0;
    double kl_cond = 0.0;
    double lambda_mean = 0.0;
};

struct TrainOptions {
    std::size_t epochs = 200;
    std::size_t batch_size = 100;
    double lr = 1e-3;
    std::string optimizer = "adam";  // or "sgd"
    double momentum = 0.9;
    double kl_warmup_frac = 0.3;
    SamplingMode mode = SamplingMode::Reparam;
    std::size_t train_samples = 1;
    std::uint64_t seed = 42;
    std::size_t power_iters_per_step = 1;
    std::size_t final_power_iters = 50;
};

/// Minibatch variational training on -elbo; deterministic per seed. The
/// trace holds per-epoch means of the objective pieces.
std::vector<TraceRow> train(Model& model, const Batch& data, const TrainOptions& opts);

}  // namespace fidgp
