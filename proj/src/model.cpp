#include "fidgp/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fidgp/errors.hpp"

namespace fidgp {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

Likelihood likelihood_from_string(const std::string& s) {
    if (s == "gaussian") return Likelihood::Gaussian;
    if (s == "categorical") return Likelihood::Categorical;
    throw ConfigError("unknown likelihood '" + s + "'");
}

std::string to_string(Likelihood lik) {
    return lik == Likelihood::Gaussian ? "gaussian" : "categorical";
}

DenseLayer DenseLayer::create(std::size_t d_in, std::size_t d_out, Rng& rng) {
    DenseLayer l;
    l.w = Matrix(d_out, d_in);
    const double scl = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, d_in)));
    for (double& v : l.w.data) v = scl * rng.normal();
    l.b = Vector(d_out, 0.0);
    return l;
}

void DenseLayer::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".w", w.data, ad::Shape{w.rows, w.cols});
    fn(prefix + ".b", b, ad::Shape{b.size()});
}

std::size_t ModelLayer::in_dim() const {
    return kind == Kind::Dense ? dense.w.cols : inducing.d_in;
}

std::size_t ModelLayer::out_dim() const {
    return kind == Kind::Dense ? dense.w.rows : inducing.d_out;
}

Matrix Model::standardize(const Matrix& x) const {
    if (input_mean.empty()) return x;
    if (x.cols != input_mean.size()) {
        throw ShapeMismatch("standardize: x " + x.shape_str() + " vs stats " +
                            std::to_string(input_mean.size()));
    }
    Matrix out = x;
    for (std::size_t i = 0; i < out.rows; ++i) {
        for (std::size_t j = 0; j < out.cols; ++j) {
            out(i, j) = (out(i, j) - input_mean[j]) / input_std[j];
        }
    }
    return out;
}

void Model::set_standardization(const Matrix& train_x) {
    input_mean.assign(train_x.cols, 0.0);
    input_std.assign(train_x.cols, 0.0);
    for (std::size_t j = 0; j < train_x.cols; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < train_x.rows; ++i) m += train_x(i, j);
        m /= static_cast<double>(train_x.rows);
        double var = 0.0;
        for (std::size_t i = 0; i < train_x.rows; ++i) {
            const double d = train_x(i, j) - m;
            var += d * d;
        }
        var /= static_cast<double>(train_x.rows);
        input_mean[j] = m;
        input_std[j] = std::max(std::sqrt(var), 1e-8);
    }
}

Matrix Model::forward(const Matrix& x, SamplingMode mode, Rng& rng) const {
    Matrix h = standardize(x);
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const ModelLayer& layer = layers[li];
        if (layer.kind == ModelLayer::Kind::Dense) {
            Matrix y = matmul(h, transpose(layer.dense.w));
            for (std::size_t i = 0; i < y.rows; ++i)
                for (std::size_t j = 0; j < y.cols; ++j) y(i, j) += layer.dense.b[j];
            h = std::move(y);
        } else {
            h = inducing_forward(layer.inducing, h, mode, rng);
        }
        if (!h.all_finite()) {
            throw NonFiniteActivation("model forward: non-finite activation at layer " +
                                      std::to_string(li));
        }
        if (layer.tanh_activation) {
            for (double& v : h.data) v = std::tanh(v);
        }
    }
    return h;
}

Model::Prediction Model::predict(const Matrix& x, std::size_t n_samples, SamplingMode mode,
                                 Rng& rng) const {
    const std::size_t k = (mode == SamplingMode::MeanOnly) ? 1 : std::max<std::size_t>(1, n_samples);
    Matrix mean(x.rows, out_dim());
    Matrix m2(x.rows, out_dim());
    for (std::size_t s = 0; s < k; ++s) {
        const Matrix y = forward(x, mode, rng);
        for (std::size_t i = 0; i < y.data.size(); ++i) {
            mean.data[i] += y.data[i];
            m2.data[i] += y.data[i] * y.data[i];
        }
    }
    Prediction pred;
    pred.mean = Matrix(x.rows, out_dim());
    pred.std = Matrix(x.rows, out_dim());
    const double kd = static_cast<double>(k);
    for (std::size_t i = 0; i < mean.data.size(); ++i) {
        const double mu = mean.data[i] / kd;
        pred.mean.data[i] = mu;
        const double var = std::max(0.0, m2.data[i] / kd - mu * mu);
        pred.std.data[i] = std::sqrt(var);
    }
    return pred;
}

Matrix Model::predict_probs(const Matrix& x, std::size_t n_samples, SamplingMode mode,
                            Rng& rng) const {
    const std::size_t k = (mode == SamplingMode::MeanOnly) ? 1 : std::max<std::size_t>(1, n_samples);
    Matrix probs(x.rows, out_dim());
    for (std::size_t s = 0; s < k; ++s) {
        const Matrix logits = forward(x, mode, rng);
        for (std::size_t i = 0; i < logits.rows; ++i) {
            double mx = logits(i, 0);
            for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, logits(i, j));
            double z = 0.0;
            for (std::size_t j = 0; j < logits.cols; ++j) z += std::exp(logits(i, j) - mx);
            for (std::size_t j = 0; j < logits.cols; ++j) {
                probs(i, j) += std::exp(logits(i, j) - mx) / z;
            }
        }
    }
    for (double& v : probs.data) v /= static_cast<double>(k);
    return probs;
}

void Model::refresh_cached(std::size_t power_iters) {
    for (ModelLayer& layer : layers) {
        if (layer.kind == ModelLayer::Kind::Inducing) layer.inducing.refresh_cached(power_iters);
    }
}

void Model::visit_params(const ParamVisitor& fn) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string prefix = "layer" + std::to_string(i);
        if (layers[i].kind == ModelLayer::Kind::Dense) {
            layers[i].dense.visit_params(prefix, fn);
        } else {
            layers[i].inducing.visit_params(prefix, fn);
        }
    }
}

void Model::visit_state(const ParamVisitor& fn) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].kind == ModelLayer::Kind::Inducing) {
            layers[i].inducing.visit_state("layer" + std::to_string(i), fn);
        }
    }
}

std::vector<std::size_t> Model::inducing_layer_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].kind == ModelLayer::Kind::Inducing) idx.push_back(i);
    }
    return idx;
}

Model make_mlp_model(const std::vector<std::size_t>& widths, std::size_t m_in, std::size_t m_out,
                     const InducingLayerOptions& opts, Likelihood lik, Rng& rng) {
    if (widths.size() < 2) throw ConfigError("make_mlp_model: need at least input and output dims");
    Model model;
    model.likelihood = lik;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        ModelLayer layer;
        layer.kind = ModelLayer::Kind::Inducing;
        const std::size_t d_in = widths[i];
        const std::size_t d_out = widths[i + 1];
        layer.inducing = InducingLayer::create(d_in, d_out, std::min(m_in, d_in),
                                               std::min(m_out, d_out), opts, rng);
        layer.tanh_activation = (i + 2 < widths.size());  // all but the output layer
        model.layers.push_back(std::move(layer));
    }
    return model;
}

namespace {

struct TapeSetup {
    ad::Tape tape;
    TapeBinding bind;
    std::vector<std::pair<std::string, Vector*>> params;
};

void bind_params(Model& model, TapeSetup& setup) {
    setup.bind.tape = &setup.tape;
    model.visit_params([&](const std::string& name, Vector& storage, ad::Shape shape) {
        setup.params.emplace_back(name, &storage);
        setup.bind.leaves.emplace(&storage, setup.tape.leaf(ad::Tensor(shape, storage)));
    });
}

struct ElboGraph {
    ad::Tensor loss;  // -elbo
    ad::Tensor loglik;
    ad::Tensor kl_flow;
    ad::Tensor kl_cond;
};

ad::Tensor forward_stack(Model& model, const TapeBinding& bind, const ad::Tensor& x0,
                         const ElboOptions& opts, Rng& rng,
                         std::vector<InducingForwardCache>* caches) {
    ad::Tensor h = x0;
    for (ModelLayer& layer : model.layers) {
        if (layer.kind == ModelLayer::Kind::Dense) {
            const ad::Tensor w = bind.tensor_for(layer.dense.w);
            const ad::Tensor b = bind.tensor_for(layer.dense.b, ad::Shape{layer.dense.b.size()});
            h = ad::add(ad::matmul(h, ad::transpose(w)), b);
        } else {
            InducingForwardCache cache;
            h = inducing_forward_tape(layer.inducing, bind, h, opts.mode, rng, &cache);
            if (caches) caches->push_back(std::move(cache));
        }
        if (layer.tanh_activation) h = ad::tanh(h);
    }
    return h;
}

ad::Tensor log_likelihood(const Model& model, const ad::Tensor& outputs, const Batch& batch) {
    const std::size_t b = batch.size();
    if (model.likelihood == Likelihood::Gaussian) {
        const double var = model.noise_std * model.noise_std;
        const ad::Tensor y(batch.y);
        const ad::Tensor sq = ad::sum(ad::square(ad::sub(outputs, y)));
        const double c =
            -0.5 * static_cast<double>(b * batch.y.cols) * (kLog2Pi + 2.0 * std::log(model.noise_std));
        return ad::add_const(ad::scale(sq, -0.5 / var), c);
    }
    // categorical with label smoothing
    const std::size_t classes = outputs.shape()[1];
    if (batch.labels.size() != b) throw ShapeMismatch("log_likelihood: labels size mismatch");
    Matrix targets(b, classes);
    const double eps = model.label_smoothing;
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t c = 0; c < classes; ++c) targets(i, c) = eps / static_cast<double>(classes);
        targets(i, batch.labels[i]) += 1.0 - eps;
    }
    const ad::Tensor log_probs = ad::sub(outputs, ad::logsumexp_rows(outputs));
    return ad::sum(ad::mul(log_probs, ad::Tensor(targets)));
}

ElboGraph build_elbo(Model& model, const TapeBinding& bind, const Batch& batch,
                     const ElboOptions& opts, Rng& rng) {
    if (batch.size() == 0) throw EmptyInput("elbo: empty batch");
    if (opts.kl_scale < 0.0 || opts.kl_scale > 1.0) {
        throw InvalidScale("elbo: kl_scale must lie in [0,1]");
    }
    const Matrix x_std = model.standardize(batch.x);
    const ad::Tensor x0(x_std);

    const std::size_t ns = std::max<std::size_t>(1, opts.train_samples);
    ad::Tensor loglik_acc(0.0);
    ad::Tensor kl_flow_acc(0.0);
    std::vector<InducingForwardCache> last_caches;
    for (std::size_t s = 0; s < ns; ++s) {
        std::vector<InducingForwardCache> caches;
        const ad::Tensor outputs = forward_stack(model, bind, x0, opts, rng, &caches);
        loglik_acc = ad::add(loglik_acc, log_likelihood(model, outputs, batch));
        ad::Tensor kf(0.0);
        for (const InducingForwardCache& cache : caches) {
            // single-sample flow KL estimate sharing the forward draw
            const std::size_t m = cache.u.numel();
            const ad::Tensor log_p = ad::add_const(
                ad::scale(ad::sum(ad::square(cache.u)), -0.5),
                -0.5 * static_cast<double>(m) * kLog2Pi);
            kf = ad::add(kf, ad::sub(ad::sub(cache.log_q0, cache.logdet), log_p));
        }
        kl_flow_acc = ad::add(kl_flow_acc, kf);
        last_caches = std::move(caches);
    }
    const double inv_ns = 1.0 / static_cast<double>(ns);
    const double data_scale =
        static_cast<double>(opts.n_total) / static_cast<double>(batch.size());
    ElboGraph g;
    g.loglik = ad::scale(loglik_acc, inv_ns * data_scale);
    g.kl_flow = ad::scale(kl_flow_acc, inv_ns * opts.kl_scale);

    ad::Tensor kc(0.0);
    for (std::size_t ci = 0, li = 0; li < model.layers.size(); ++li) {
        if (model.layers[li].kind != ModelLayer::Kind::Inducing) continue;
        const InducingLayer& ind = model.layers[li].inducing;
        const ad::Tensor lam = last_caches[ci++].lam;
        const double half_d = 0.5 * static_cast<double>(ind.weight_dim());
        const ad::Tensor term = ad::scale(
            ad::sub(ad::sub(ad::square(lam), ad::Tensor(1.0)), ad::scale(ad::log(lam), 2.0)),
            half_d);
        kc = ad::add(kc, term);
    }
    g.kl_cond = ad::scale(kc, opts.kl_scale);

    g.loss = ad::sub(ad::add(g.kl_flow, g.kl_cond), g.loglik);
    return g;
}

}  // namespace

ElboTerms elbo_value(Model& model, const Batch& batch, const ElboOptions& opts, Rng& rng) {
    TapeSetup setup;
    bind_params(model, setup);
    const ElboGraph g = build_elbo(model, setup.bind, batch, opts, rng);
    ElboTerms terms{g.loglik.scalar(), g.kl_flow.scalar(), g.kl_cond.scalar()};
    return terms;
}

ElboEval elbo_backward(Model& model, const Batch& batch, const ElboOptions& opts, Rng& rng) {
    TapeSetup setup;
    bind_params(model, setup);
    const ElboGraph g = build_elbo(model, setup.bind, batch, opts, rng);
    setup.tape.backward(g.loss);
    ElboEval eval;
    eval.terms = ElboTerms{g.loglik.scalar(), g.kl_flow.scalar(), g.kl_cond.scalar()};
    for (const auto& [name, storage] : setup.params) {
        eval.grads.emplace(name, setup.tape.grad(setup.bind.leaves.at(storage)));
    }
    return eval;
}

std::vector<TraceRow> train(Model& model, const Batch& data, const TrainOptions& opts) {
    std::vector<TraceRow> trace;
    if (opts.epochs == 0) return trace;
    const std::size_t n = data.size();
    if (n == 0) throw EmptyInput("train: empty dataset");
    const std::size_t bs = std::min(opts.batch_size == 0 ? n : opts.batch_size, n);

    Rng rng(opts.seed);
    std::map<std::string, ad::AdamState> adam;
    std::map<std::string, ad::SgdMomentumState> sgd;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    const double warmup_steps = opts.kl_warmup_frac * static_cast<double>(opts.epochs);
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        // Fisher-Yates with the training stream
        for (std::size_t i = n - 1; i > 0; --i) {
            std::swap(order[i], order[rng.index(i + 1)]);
        }
        const double kl_scale =
            warmup_steps <= 0.0
                ? 1.0
                : std::min(1.0, static_cast<double>(epoch + 1) / warmup_steps);

        TraceRow row;
        row.epoch = epoch;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t len = std::min(bs, n - start);
            Batch batch;
            batch.x = Matrix(len, data.x.cols);
            if (model.likelihood == Likelihood::Gaussian) batch.y = Matrix(len, data.y.cols);
            for (std::size_t i = 0; i < len; ++i) {
                const std::size_t src = order[start + i];
                for (std::size_t j = 0; j < data.x.cols; ++j) batch.x(i, j) = data.x(src, j);
                if (model.likelihood == Likelihood::Gaussian) {
                    for (std::size_t j = 0; j < data.y.cols; ++j) batch.y(i, j) = data.y(src, j);
                } else {
                    batch.labels.push_back(data.labels[src]);
                }
            }

            model.refresh_cached(opts.power_iters_per_step);
            ElboOptions eopts;
            eopts.n_total = n;
            eopts.kl_scale = kl_scale;
            eopts.mode = opts.mode;
            eopts.train_samples = opts.train_samples;
            ElboEval eval = elbo_backward(model, batch, eopts, rng);
            if (!std::isfinite(eval.terms.elbo())) {
                throw NonFiniteLoss("train: non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batches));
            }

            model.visit_params([&](const std::string& name, Vector& storage, ad::Shape) {
                const Vector& grad = eval.grads.at(name);
                if (opts.optimizer == "adam") {
                    ad::adam_step(storage, grad, adam[name], opts.lr);
                } else {
                    ad::sgd_momentum_step(storage, grad, sgd[name], opts.lr, opts.momentum);
                }
            });

            row.loglik += eval.terms.loglik;
            row.kl_flow += eval.terms.kl_flow;
            row.kl_cond += eval.terms.kl_cond;
            ++batches;
        }
        const double inv = 1.0 / static_cast<double>(batches);
        row.loglik *= inv;
        row.kl_flow *= inv;
        row.kl_cond *= inv;
        double lam_sum = 0.0;
        std::size_t lam_count = 0;
        for (const ModelLayer& layer : model.layers) {
            if (layer.kind == ModelLayer::Kind::Inducing) {
                lam_sum += layer.inducing.lambda();
                ++lam_count;
            }
        }
        row.lambda_mean = lam_count ? lam_sum / static_cast<double>(lam_count) : 0.0;
        trace.push_back(row);
    }
    // converge the power estimates so the deployed flow is certifiably
    // normalized and prediction does not depend on mid-training lag
    model.refresh_cached(opts.final_power_iters);
    return trace;
}

}  // namespace fidgp
