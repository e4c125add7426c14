#include "fidgp/layer.hpp"

#include <cmath>

#include "fidgp/errors.hpp"

namespace fidgp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

SamplingMode sampling_mode_from_string(const std::string& s) {
    if (s == "reparam") return SamplingMode::Reparam;
    if (s == "matheron") return SamplingMode::Matheron;
    if (s == "mean" || s == "mean_only") return SamplingMode::MeanOnly;
    throw ConfigError("unknown sampling mode '" + s + "'");
}

std::string to_string(SamplingMode mode) {
    switch (mode) {
        case SamplingMode::Reparam: return "reparam";
        case SamplingMode::Matheron: return "matheron";
        case SamplingMode::MeanOnly: return "mean_only";
    }
    return "?";
}

InducingLayer InducingLayer::create(std::size_t d_in, std::size_t d_out, std::size_t m_in,
                                    std::size_t m_out, const InducingLayerOptions& opts, Rng& rng) {
    if (m_in > d_in || m_out > d_out) {
        throw ShapeMismatch("InducingLayer: inducing dims exceed layer dims");
    }
    if (opts.lambda_init <= 0.0 || opts.lambda_init >= opts.lambda_max) {
        throw InvalidScale("InducingLayer: lambda_init must lie in (0, lambda_max)");
    }
    InducingLayer layer;
    layer.d_in = d_in;
    layer.d_out = d_out;
    layer.m_in = m_in;
    layer.m_out = m_out;
    layer.sigma_p = opts.sigma_p;
    layer.lambda_max = opts.lambda_max;
    layer.whitened_u = opts.whitened_u;

    layer.kt.t_row = random_orthogonal(d_out, m_out, rng);
    layer.kt.t_col = random_orthogonal(d_in, m_in, rng);
    layer.kt.l_row = Matrix::identity(m_out);
    layer.kt.l_col = Matrix::identity(m_in);

    const std::size_t m = m_in * m_out;
    layer.q_v.mean.resize(m);
    // width-scaled so the mean weight starts at fan-in magnitude
    const double m_std = std::sqrt(static_cast<double>(d_out) / static_cast<double>(m));
    for (double& v : layer.q_v.mean) v = m_std * rng.normal();
    layer.q_v.log_std.assign(m, opts.init_log_std);
    layer.q_v.max_std = opts.max_std_u;

    layer.flow = FlowPrior::create(m, opts.flow_depth, opts.flow_hidden, opts.flow_s_cap, rng);
    layer.lambda_raw = Vector{logit(opts.lambda_init / opts.lambda_max)};
    layer.bias = Vector(d_out, 0.0);
    return layer;
}

double InducingLayer::lambda() const {
    return lambda_max / (1.0 + std::exp(-lambda_raw[0]));
}

void InducingLayer::refresh_cached(std::size_t power_iters) {
    if (whitened_u) kt.refresh_whitening();
    flow.refresh_power(power_iters);
}

Matrix InducingLayer::mean_inducing_u() const {
    const Vector u_flat = flow.forward(q_v.mean).first;
    Matrix u(m_out, m_in, u_flat);
    if (whitened_u) u = matmul(kt.l_row, matmul(u, transpose(kt.l_col)));
    return u;
}

Matrix InducingLayer::mean_weight() const { return matrix_normal_cond_mean(kt, mean_inducing_u()); }

Matrix InducingLayer::sample_weight(SamplingMode mode, Rng& rng) const {
    if (mode == SamplingMode::MeanOnly) return mean_weight();
    const Vector eps = rng.normal_vector(inducing_dim());
    const Vector s = q_v.std_vector();
    Vector u0(inducing_dim());
    for (std::size_t i = 0; i < u0.size(); ++i) u0[i] = q_v.mean[i] + s[i] * eps[i];
    const Vector v_flat = flow.forward(u0).first;
    const Matrix v(m_out, m_in, v_flat);

    if (mode == SamplingMode::Matheron) {
        return whitened_matheron_sample(kt, v, sigma_p, lambda(), rng);
    }
    Matrix u = v;
    if (whitened_u) u = matmul(kt.l_row, matmul(u, transpose(kt.l_col)));
    Matrix w = matrix_normal_cond_mean(kt, u);
    const Matrix g = rng.normal_matrix(d_out, d_in);
    const double noise = lambda() * sigma_p;
    for (std::size_t i = 0; i < w.data.size(); ++i) w.data[i] += noise * g.data[i];
    return w;
}

void InducingLayer::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".t_row", kt.t_row.data, ad::Shape{kt.t_row.rows, kt.t_row.cols});
    fn(prefix + ".t_col", kt.t_col.data, ad::Shape{kt.t_col.rows, kt.t_col.cols});
    fn(prefix + ".q_mean", q_v.mean, ad::Shape{q_v.mean.size()});
    fn(prefix + ".q_log_std", q_v.log_std, ad::Shape{q_v.log_std.size()});
    fn(prefix + ".lambda_raw", lambda_raw, ad::Shape{});
    fn(prefix + ".bias", bias, ad::Shape{bias.size()});
    flow.visit_params(prefix + ".flow", fn);
}

void InducingLayer::visit_state(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".l_row", kt.l_row.data, ad::Shape{kt.l_row.rows, kt.l_row.cols});
    fn(prefix + ".l_col", kt.l_col.data, ad::Shape{kt.l_col.rows, kt.l_col.cols});
    flow.visit_state(prefix + ".flow", fn);
}

ad::Tensor inducing_forward_tape(const InducingLayer& layer, const TapeBinding& bind,
                                 const ad::Tensor& x, SamplingMode mode, Rng& rng,
                                 InducingForwardCache* cache) {
    const std::size_t m = layer.inducing_dim();
    const ad::Tensor m_leaf = bind.tensor_for(layer.q_v.mean, ad::Shape{m});
    const ad::Tensor ls_leaf = bind.tensor_for(layer.q_v.log_std, ad::Shape{m});
    const double cap = layer.q_v.max_std;
    const ad::Tensor s = ad::scale(ad::tanh(ad::scale(ad::exp(ls_leaf), 1.0 / cap)), cap);

    ad::Tensor u0;
    double eps_sq_sum = 0.0;
    if (mode == SamplingMode::MeanOnly) {
        u0 = m_leaf;
    } else {
        const Vector eps = rng.normal_vector(m);
        for (double e : eps) eps_sq_sum += e * e;
        u0 = ad::add(m_leaf, ad::mul(s, ad::Tensor(eps)));
    }

    auto [u, logdet] = layer.flow.forward_tape(bind, u0);
    ad::Tensor u_mat = ad::reshape(u, ad::Shape{layer.m_out, layer.m_in});

    const ad::Tensor lam =
        ad::scale(ad::sigmoid(bind.tensor_for(layer.lambda_raw, ad::Shape{})), layer.lambda_max);

    ad::Tensor w;
    const ad::Tensor t_row = bind.tensor_for(layer.kt.t_row);
    const ad::Tensor t_col = bind.tensor_for(layer.kt.t_col);
    if (mode == SamplingMode::Matheron) {
        // Pathwise draw in whitened coordinates: the prior part and the
        // correction share the T sandwich, so both stay differentiable in T.
        const Matrix v_prior = rng.normal_matrix(layer.m_out, layer.m_in);
        const Matrix g = rng.normal_matrix(layer.d_out, layer.d_in);
        const Matrix u_prior = matmul(layer.kt.l_row, matmul(v_prior, transpose(layer.kt.l_col)));
        const ad::Tensor l_row(layer.kt.l_row);
        const ad::Tensor l_col(layer.kt.l_col);
        const ad::Tensor delta = ad::sub(u_mat, ad::Tensor(v_prior));
        const ad::Tensor delta_u = ad::matmul(l_row, ad::matmul(delta, ad::transpose(l_col)));
        const ad::Tensor u_total = ad::add(ad::Tensor(u_prior), delta_u);
        w = ad::matmul(t_row, ad::matmul(u_total, ad::transpose(t_col)));
        w = ad::add(w, ad::mul(ad::scale(lam, layer.sigma_p), ad::Tensor(g)));
    } else {
        if (layer.whitened_u) {
            const ad::Tensor l_row(layer.kt.l_row);
            const ad::Tensor l_col(layer.kt.l_col);
            u_mat = ad::matmul(l_row, ad::matmul(u_mat, ad::transpose(l_col)));
        }
        w = ad::matmul(t_row, ad::matmul(u_mat, ad::transpose(t_col)));
        if (mode == SamplingMode::Reparam) {
            const Matrix g = rng.normal_matrix(layer.d_out, layer.d_in);
            w = ad::add(w, ad::mul(ad::scale(lam, layer.sigma_p), ad::Tensor(g)));
        }
    }

    const ad::Tensor bias = bind.tensor_for(layer.bias, ad::Shape{layer.bias.size()});
    const ad::Tensor y = ad::add(ad::matmul(x, ad::transpose(w)), bias);
    for (double v : y.value()) {
        if (!std::isfinite(v)) {
            throw NonFiniteActivation("inducing layer produced a non-finite activation");
        }
    }

    if (cache) {
        cache->u0 = u0;
        cache->logdet = logdet;
        cache->u = u;
        cache->lam = lam;
        cache->s_values = s.value();
        if (mode == SamplingMode::MeanOnly) {
            cache->log_q0 = ad::Tensor(0.0);
        } else {
            const double c = -0.5 * eps_sq_sum - 0.5 * static_cast<double>(m) * kLog2Pi;
            cache->log_q0 = ad::add_const(ad::neg(ad::sum(ad::log(s))), c);
        }
    }
    return y;
}

Matrix inducing_forward(const InducingLayer& layer, const Matrix& x, SamplingMode mode, Rng& rng) {
    if (x.cols != layer.d_in) {
        throw ShapeMismatch("inducing_forward: x " + x.shape_str() + " vs d_in " +
                            std::to_string(layer.d_in));
    }
    const Matrix w = layer.sample_weight(mode, rng);
    Matrix y = matmul(x, transpose(w));
    for (std::size_t i = 0; i < y.rows; ++i) {
        for (std::size_t j = 0; j < y.cols; ++j) {
            y(i, j) += layer.bias[j];
            if (!std::isfinite(y(i, j))) {
                throw NonFiniteActivation("inducing layer produced a non-finite activation");
            }
        }
    }
    return y;
}

}  // namespace fidgp
