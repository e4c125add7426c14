#include "fidgp/flow.hpp"

#include <cmath>

#include "fidgp/errors.hpp"

namespace fidgp {

namespace {

// Converged spectral norm for construction-time certification.
double converged_sigma(const Matrix& w, Rng& rng) {
    if (w.empty()) return 0.0;
    PowerIterState st = PowerIterState::random_init(w.rows, w.cols, rng);
    double prev = -1.0;
    for (int round = 0; round < 200; ++round) {
        SpectralEstimate est = spectral_norm_power(w, 50, std::move(st));
        st = std::move(est.state);
        if (std::abs(est.sigma - prev) <= 1e-14 * std::max(1.0, est.sigma)) return est.sigma;
        prev = est.sigma;
    }
    return prev;
}

}  // namespace

ad::Tensor TapeBinding::tensor_for(const Vector& storage, ad::Shape shape) const {
    auto it = leaves.find(&storage);
    if (it != leaves.end()) {
        if (it->second.shape() != shape) return ad::reshape(it->second, shape);
        return it->second;
    }
    return ad::Tensor(std::move(shape), storage);
}

ad::Tensor TapeBinding::tensor_for(const Matrix& m) const {
    return tensor_for(m.data, ad::Shape{m.rows, m.cols});
}

NormalizedLinear NormalizedLinear::create(std::size_t out_dim, std::size_t in_dim, bool zero_init,
                                          Rng& rng) {
    NormalizedLinear lin;
    lin.w = Matrix(out_dim, in_dim);
    if (!zero_init && in_dim > 0) {
        const double scl = 1.0 / std::sqrt(static_cast<double>(in_dim));
        for (double& v : lin.w.data) v = scl * rng.normal();
    }
    lin.b = Vector(out_dim, 0.0);
    lin.state = PowerIterState::random_init(out_dim, in_dim, rng);
    return lin;
}

double NormalizedLinear::sigma_estimate() const {
    if (w.empty()) return 0.0;
    // signed Rayleigh quotient; matches the tape-side normalization exactly
    return dot(state.left_vec, matvec(w, state.right_vec));
}

void NormalizedLinear::refresh_power(std::size_t iters) {
    if (w.empty()) return;
    state = spectral_norm_power(w, iters, std::move(state)).state;
}

Matrix NormalizedLinear::normalized_weight() const {
    if (w.empty()) return w;
    const double denom = std::max(sigma_estimate(), 1.0);
    return (1.0 / denom) * w;
}

Vector NormalizedLinear::forward(const Vector& x) const {
    Vector y = w.empty() ? Vector(w.rows, 0.0) : matvec(normalized_weight(), x);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
    return y;
}

ad::Tensor NormalizedLinear::forward_tape(const TapeBinding& bind, const ad::Tensor& x) const {
    const ad::Tensor bias = bind.tensor_for(b, ad::Shape{b.size()});
    if (w.cols == 0) return bias;
    const ad::Tensor wt = bind.tensor_for(w);
    const ad::Tensor u(ad::Shape{1, w.rows}, state.left_vec);
    const ad::Tensor v(ad::Shape{w.cols, 1}, state.right_vec);
    const ad::Tensor sigma = ad::reshape(ad::matmul(ad::matmul(u, wt), v), ad::Shape{});
    const ad::Tensor inv = ad::reciprocal(ad::clamp_min(sigma, 1.0));
    const ad::Tensor wn = ad::mul(wt, inv);
    const ad::Tensor xc = ad::reshape(x, ad::Shape{x.numel(), 1});
    return ad::add(ad::reshape(ad::matmul(wn, xc), ad::Shape{w.rows}), bias);
}

void NormalizedLinear::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".w", w.data, ad::Shape{w.rows, w.cols});
    fn(prefix + ".b", b, ad::Shape{b.size()});
}

void NormalizedLinear::visit_state(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".power_left", state.left_vec, ad::Shape{state.left_vec.size()});
    fn(prefix + ".power_right", state.right_vec, ad::Shape{state.right_vec.size()});
}

CouplingLayer CouplingLayer::create(std::size_t dim, std::size_t parity, std::size_t hidden,
                                    double s_cap, Rng& rng) {
    CouplingLayer layer;
    layer.dim = dim;
    layer.identity_first = (parity % 2 == 0);
    layer.s_cap = s_cap;
    const std::size_t n_id = layer.id_len();
    const std::size_t n_tr = dim - n_id;
    layer.scale_l1 = NormalizedLinear::create(hidden, n_id, false, rng);
    layer.scale_l2 = NormalizedLinear::create(n_tr, hidden, true, rng);
    layer.shift_l1 = NormalizedLinear::create(hidden, n_id, false, rng);
    layer.shift_l2 = NormalizedLinear::create(n_tr, hidden, true, rng);
    return layer;
}

std::pair<Vector, double> CouplingLayer::forward(const Vector& x) const {
    if (x.size() != dim) {
        throw DimensionMismatch("CouplingLayer::forward: input " + std::to_string(x.size()) +
                                " vs dim " + std::to_string(dim));
    }
    const std::size_t n_id = id_len();
    const std::size_t n_tr = dim - n_id;
    if (n_tr == 0) return {x, 0.0};
    const std::size_t id_start = identity_first ? 0 : n_tr;
    const std::size_t tr_start = identity_first ? n_id : 0;

    const Vector x_id(x.begin() + static_cast<long>(id_start),
                      x.begin() + static_cast<long>(id_start + n_id));
    Vector h_s = scale_l1.forward(x_id);
    for (double& v : h_s) v = std::tanh(v);
    const Vector raw_s = scale_l2.forward(h_s);
    Vector h_t = shift_l1.forward(x_id);
    for (double& v : h_t) v = std::tanh(v);
    const Vector t = shift_l2.forward(h_t);

    Vector y(dim);
    for (std::size_t i = 0; i < n_id; ++i) y[id_start + i] = x_id[i];
    double logdet = 0.0;
    for (std::size_t i = 0; i < n_tr; ++i) {
        const double s = s_cap * std::tanh(raw_s[i]);
        logdet += s;
        y[tr_start + i] = x[tr_start + i] * std::exp(s) + t[i];
    }
    return {std::move(y), logdet};
}

Vector CouplingLayer::inverse(const Vector& y) const {
    if (y.size() != dim) {
        throw DimensionMismatch("CouplingLayer::inverse: input " + std::to_string(y.size()) +
                                " vs dim " + std::to_string(dim));
    }
    const std::size_t n_id = id_len();
    const std::size_t n_tr = dim - n_id;
    if (n_tr == 0) return y;
    const std::size_t id_start = identity_first ? 0 : n_tr;
    const std::size_t tr_start = identity_first ? n_id : 0;

    const Vector y_id(y.begin() + static_cast<long>(id_start),
                      y.begin() + static_cast<long>(id_start + n_id));
    Vector h_s = scale_l1.forward(y_id);
    for (double& v : h_s) v = std::tanh(v);
    const Vector raw_s = scale_l2.forward(h_s);
    Vector h_t = shift_l1.forward(y_id);
    for (double& v : h_t) v = std::tanh(v);
    const Vector t = shift_l2.forward(h_t);

    Vector x(y);
    for (std::size_t i = 0; i < n_tr; ++i) {
        const double s = s_cap * std::tanh(raw_s[i]);
        x[tr_start + i] = (y[tr_start + i] - t[i]) * std::exp(-s);
    }
    return x;
}

std::pair<ad::Tensor, ad::Tensor> CouplingLayer::forward_tape(const TapeBinding& bind,
                                                              const ad::Tensor& x) const {
    if (x.numel() != dim) {
        throw DimensionMismatch("CouplingLayer::forward_tape: input " + std::to_string(x.numel()) +
                                " vs dim " + std::to_string(dim));
    }
    const std::size_t n_id = id_len();
    const std::size_t n_tr = dim - n_id;
    if (n_tr == 0) return {x, ad::Tensor(0.0)};
    const std::size_t id_start = identity_first ? 0 : n_tr;
    const std::size_t tr_start = identity_first ? n_id : 0;

    const ad::Tensor x_id = ad::slice(x, id_start, n_id);
    const ad::Tensor x_tr = ad::slice(x, tr_start, n_tr);
    const ad::Tensor raw_s = scale_l2.forward_tape(bind, ad::tanh(scale_l1.forward_tape(bind, x_id)));
    const ad::Tensor t = shift_l2.forward_tape(bind, ad::tanh(shift_l1.forward_tape(bind, x_id)));
    const ad::Tensor s = ad::scale(ad::tanh(raw_s), s_cap);
    const ad::Tensor y_tr = ad::add(ad::mul(x_tr, ad::exp(s)), t);
    const ad::Tensor logdet = ad::sum(s);
    const ad::Tensor y = identity_first ? ad::concat(x_id, y_tr) : ad::concat(y_tr, x_id);
    return {y, logdet};
}

void CouplingLayer::refresh_power(std::size_t iters) {
    scale_l1.refresh_power(iters);
    scale_l2.refresh_power(iters);
    shift_l1.refresh_power(iters);
    shift_l2.refresh_power(iters);
}

void CouplingLayer::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    scale_l1.visit_params(prefix + ".scale_l1", fn);
    scale_l2.visit_params(prefix + ".scale_l2", fn);
    shift_l1.visit_params(prefix + ".shift_l1", fn);
    shift_l2.visit_params(prefix + ".shift_l2", fn);
}

void CouplingLayer::visit_state(const std::string& prefix, const ParamVisitor& fn) {
    scale_l1.visit_state(prefix + ".scale_l1", fn);
    scale_l2.visit_state(prefix + ".scale_l2", fn);
    shift_l1.visit_state(prefix + ".shift_l1", fn);
    shift_l2.visit_state(prefix + ".shift_l2", fn);
}

FlowPrior FlowPrior::create(std::size_t dim, std::size_t depth, std::size_t hidden, double s_cap,
                            Rng& rng) {
    FlowPrior f;
    f.dim_ = dim;
    f.layers_.reserve(depth);
    for (std::size_t i = 0; i < depth; ++i) {
        f.layers_.push_back(CouplingLayer::create(dim, i, hidden, s_cap, rng));
    }
    return f;
}

std::pair<Vector, double> FlowPrior::forward(const Vector& u0) const {
    if (u0.size() != dim_) {
        throw DimensionMismatch("FlowPrior::forward: input " + std::to_string(u0.size()) +
                                " vs dim " + std::to_string(dim_));
    }
    Vector u = u0;
    double logdet = 0.0;
    for (const CouplingLayer& layer : layers_) {
        auto [next, ld] = layer.forward(u);
        u = std::move(next);
        logdet += ld;
    }
    return {std::move(u), logdet};
}

Vector FlowPrior::inverse(const Vector& u) const {
    if (u.size() != dim_) {
        throw DimensionMismatch("FlowPrior::inverse: input " + std::to_string(u.size()) +
                                " vs dim " + std::to_string(dim_));
    }
    Vector x = u;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) x = it->inverse(x);
    return x;
}

double FlowPrior::log_prior_density(const Vector& u) const {
    const Vector u0 = inverse(u);
    const double logdet = forward(u0).second;
    return standard_normal_log_density(u0) - logdet;
}

std::pair<ad::Tensor, ad::Tensor> FlowPrior::forward_tape(const TapeBinding& bind,
                                                          const ad::Tensor& u0) const {
    ad::Tensor u = u0;
    ad::Tensor logdet(0.0);
    for (const CouplingLayer& layer : layers_) {
        auto [next, ld] = layer.forward_tape(bind, u);
        u = next;
        logdet = ad::add(logdet, ld);
    }
    return {u, logdet};
}

void FlowPrior::refresh_power(std::size_t iters) {
    for (CouplingLayer& layer : layers_) layer.refresh_power(iters);
}

void FlowPrior::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        layers_[i].visit_params(prefix + ".coupling" + std::to_string(i), fn);
    }
}

void FlowPrior::visit_state(const std::string& prefix, const ParamVisitor& fn) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        layers_[i].visit_state(prefix + ".coupling" + std::to_string(i), fn);
    }
}

double flow_kl_mc(const FlowPrior& f, const DiagGaussianVariational& q, const FlowPrior* prior,
                  std::size_t n_samples, Rng& rng) {
    if (n_samples == 0) throw EmptyInput("flow_kl_mc: n_samples must be >= 1");
    if (q.dim() != f.dim()) {
        throw DimensionMismatch("flow_kl_mc: q dim " + std::to_string(q.dim()) + " vs flow dim " +
                                std::to_string(f.dim()));
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < n_samples; ++k) {
        const Vector u0 = q.sample(rng);
        const auto [u, logdet] = f.forward(u0);
        const double log_p =
            prior ? prior->log_prior_density(u) : standard_normal_log_density(u);
        acc += q.log_density(u0) - logdet - log_p;
    }
    return acc / static_cast<double>(n_samples);
}

LipschitzMlp LipschitzMlp::create(std::size_t dim, std::size_t depth, std::size_t hidden,
                                  Rng& rng) {
    LipschitzMlp net;
    net.dim_ = dim;
    if (depth == 0) return net;
    std::vector<std::size_t> sizes;
    sizes.push_back(dim);
    for (std::size_t i = 0; i + 1 < depth; ++i) sizes.push_back(hidden);
    sizes.push_back(dim);
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        Matrix w(sizes[i + 1], sizes[i]);
        for (double& v : w.data) v = rng.normal();
        const double sigma = converged_sigma(w, rng);
        const double denom = std::max(sigma * (1.0 + 1e-10), 1.0);
        net.weights_.push_back((1.0 / denom) * w);
        Vector b(sizes[i + 1]);
        for (double& v : b) v = 0.1 * rng.normal();
        net.biases_.push_back(std::move(b));
    }
    return net;
}

LipschitzMlp LipschitzMlp::identity(std::size_t dim) {
    LipschitzMlp net;
    net.dim_ = dim;
    return net;
}

Vector LipschitzMlp::forward(const Vector& x) const {
    if (x.size() != dim_) {
        throw DimensionMismatch("LipschitzMlp::forward: input " + std::to_string(x.size()) +
                                " vs dim " + std::to_string(dim_));
    }
    Vector h = x;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        Vector next = matvec(weights_[i], h);
        for (std::size_t j = 0; j < next.size(); ++j) next[j] += biases_[i][j];
        if (i + 1 < weights_.size()) {
            for (double& v : next) v = std::tanh(v);
        }
        h = std::move(next);
    }
    return h;
}

}  // namespace fidgp
