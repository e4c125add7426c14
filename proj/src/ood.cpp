#include "fidgp/ood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fidgp/errors.hpp"

namespace fidgp {

Vector feature_grad_vector(const Vector& h, const Vector& g) {
    if (h.size() != g.size()) {
        throw DimensionMismatch("feature_grad_vector: " + std::to_string(h.size()) + " vs " +
                                std::to_string(g.size()));
    }
    Vector z(h.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = h[i] * g[i];
    return z;
}

Vector KeyLayerProjector::dense_row(std::size_t k) const {
    const auto [i, j] = row_index[k];
    Vector row(n_dim);
    const std::size_t d_out = t_row.rows;
    const std::size_t d_in = t_col.rows;
    for (std::size_t a = 0; a < d_out; ++a) {
        for (std::size_t b = 0; b < d_in; ++b) {
            row[a * d_in + b] = row_scale[k] * t_row(a, i) * t_col(b, j);
        }
    }
    return row;
}

Matrix KeyLayerProjector::dense_projector() const {
    Matrix u(rows(), n_dim);
    for (std::size_t k = 0; k < rows(); ++k) {
        const Vector row = dense_row(k);
        for (std::size_t c = 0; c < n_dim; ++c) u(k, c) = row[c];
    }
    return ridge_projector(u, lambda_proj);
}

namespace {

// ||(I-P) z||^2 = ||z||^2 - 2 c^T y + y^T G y with c = U z, y = (G+lI)^{-1} c.
double residual_from_coeffs(const KeyLayerProjector& p, double z_sq, const Vector& c) {
    const Vector y = cholesky_solve(p.gram_chol, c);
    double r2 = z_sq - 2.0 * dot(c, y);
    const Vector gy = matvec(p.gram, y);
    r2 += dot(y, gy);
    return std::sqrt(std::max(0.0, r2));
}

}  // namespace

double KeyLayerProjector::residual_norm(const Vector& z) const {
    if (z.size() != n_dim) {
        throw DimensionMismatch("residual_norm: z " + std::to_string(z.size()) + " vs N " +
                                std::to_string(n_dim));
    }
    const std::size_t d_out = t_row.rows;
    const std::size_t d_in = t_col.rows;
    const Matrix zm(d_out, d_in, z);
    // c_k = scale_k * t_row_i^T Z t_col_j
    const Matrix a = matmul(transpose(t_row), matmul(zm, t_col));  // M_out x M_in
    Vector c(rows());
    for (std::size_t k = 0; k < rows(); ++k) {
        const auto [i, j] = row_index[k];
        c[k] = row_scale[k] * a(i, j);
    }
    return residual_from_coeffs(*this, dot(z, z), c);
}

double KeyLayerProjector::residual_norm_rank1(const Vector& p, const Vector& q) const {
    if (p.size() != t_row.rows || q.size() != t_col.rows) {
        throw DimensionMismatch("residual_norm_rank1: p " + std::to_string(p.size()) + ", q " +
                                std::to_string(q.size()));
    }
    const Vector tp = matvec_t(t_row, p);  // M_out
    const Vector tq = matvec_t(t_col, q);  // M_in
    Vector c(rows());
    for (std::size_t k = 0; k < rows(); ++k) {
        const auto [i, j] = row_index[k];
        c[k] = row_scale[k] * tp[i] * tq[j];
    }
    const double z_sq = dot(p, p) * dot(q, q);
    return residual_from_coeffs(*this, z_sq, c);
}

double KeyLayerProjector::residual_norm_sandwich(const Matrix& u_w) const {
    // z = vec(T_row U T_col^T): coefficients and norm through the Grams
    const Matrix ruc = matmul(r_row, matmul(u_w, r_col));
    Vector c(rows());
    for (std::size_t k = 0; k < rows(); ++k) {
        const auto [i, j] = row_index[k];
        c[k] = row_scale[k] * ruc(i, j);
    }
    // ||z||^2 = tr(U^T R_row U R_col)
    const Matrix ru = matmul(r_row, u_w);
    const Matrix rc = matmul(u_w, r_col);
    double z_sq = 0.0;
    for (std::size_t i = 0; i < ru.rows; ++i)
        for (std::size_t j = 0; j < ru.cols; ++j) z_sq += ru(i, j) * rc(i, j);
    return residual_from_coeffs(*this, z_sq, c);
}

KeyLayerProjector build_projector(const InducingLayer& layer, std::size_t layer_id,
                                  double lambda_proj, std::size_t max_rows) {
    if (lambda_proj <= 0.0) throw InvalidScale("build_projector: lambda_proj must be positive");
    KeyLayerProjector proj;
    proj.layer_id = layer_id;
    proj.lambda_proj = lambda_proj;
    proj.n_dim = layer.weight_dim();
    proj.t_row = layer.kt.t_row;
    proj.t_col = layer.kt.t_col;
    proj.r_row = matmul(transpose(proj.t_row), proj.t_row);
    proj.r_col = matmul(transpose(proj.t_col), proj.t_col);

    const Matrix u_mean = layer.mean_inducing_u();
    Vector col_norm_row(layer.m_out), col_norm_col(layer.m_in);
    for (std::size_t i = 0; i < layer.m_out; ++i) col_norm_row[i] = std::sqrt(proj.r_row(i, i));
    for (std::size_t j = 0; j < layer.m_in; ++j) col_norm_col[j] = std::sqrt(proj.r_col(j, j));

    struct RowRank {
        double norm;
        std::size_t i, j;
    };
    std::vector<RowRank> ranked;
    ranked.reserve(layer.inducing_dim());
    for (std::size_t i = 0; i < layer.m_out; ++i) {
        for (std::size_t j = 0; j < layer.m_in; ++j) {
            ranked.push_back({std::abs(u_mean(i, j)) * col_norm_row[i] * col_norm_col[j], i, j});
        }
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const RowRank& a, const RowRank& b) {
        return a.norm > b.norm;
    });
    const std::size_t keep = std::min<std::size_t>(max_rows, ranked.size());
    proj.row_index.reserve(keep);
    proj.row_scale.reserve(keep);
    for (std::size_t k = 0; k < keep; ++k) {
        proj.row_index.emplace_back(ranked[k].i, ranked[k].j);
        proj.row_scale.push_back(u_mean(ranked[k].i, ranked[k].j));
    }

    // Gram over retained rows from the transform Grams
    proj.gram = Matrix(keep, keep);
    for (std::size_t k = 0; k < keep; ++k) {
        for (std::size_t l = 0; l <= k; ++l) {
            const auto [ik, jk] = proj.row_index[k];
            const auto [il, jl] = proj.row_index[l];
            const double v =
                proj.row_scale[k] * proj.row_scale[l] * proj.r_row(ik, il) * proj.r_col(jk, jl);
            proj.gram(k, l) = v;
            proj.gram(l, k) = v;
        }
    }
    Matrix shifted = proj.gram;
    for (std::size_t k = 0; k < keep; ++k) shifted(k, k) += lambda_proj;
    proj.gram_chol = cholesky_jittered(shifted, {1e-12, 10.0, 1e-8}).l;
    return proj;
}

std::vector<KeyLayerProjector> build_projectors(const Model& model,
                                                const std::vector<std::size_t>& key_layers,
                                                double lambda_proj, std::size_t max_rows) {
    if (key_layers.empty()) throw EmptyKeyLayers("build_projectors: no key layers");
    std::vector<KeyLayerProjector> projs;
    for (std::size_t idx : key_layers) {
        if (idx >= model.layers.size() ||
            model.layers[idx].kind != ModelLayer::Kind::Inducing) {
            throw EmptyKeyLayers("build_projectors: layer " + std::to_string(idx) +
                                 " is not an inducing layer");
        }
        projs.push_back(build_projector(model.layers[idx].inducing, idx, lambda_proj, max_rows));
    }
    return projs;
}

Matrix score_residuals(const Model& model, const std::vector<KeyLayerProjector>& projectors,
                       const Matrix& x) {
    if (projectors.empty()) throw EmptyKeyLayers("score_residuals: no projectors");

    // posterior-mean weights, fixed across the batch
    std::vector<Matrix> mean_w(model.layers.size());
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const ModelLayer& layer = model.layers[li];
        mean_w[li] = layer.kind == ModelLayer::Kind::Dense ? layer.dense.w
                                                           : layer.inducing.mean_weight();
    }

    const Matrix xs = model.standardize(x);
    Matrix residuals(x.rows, projectors.size());
    for (std::size_t i = 0; i < xs.rows; ++i) {
        ad::Tape tape;
        Vector row(xs.cols);
        for (std::size_t j = 0; j < xs.cols; ++j) row[j] = xs(i, j);
        ad::Tensor h = tape.leaf(ad::Tensor(ad::Shape{1, xs.cols}, row));

        std::vector<ad::Tensor> inputs(model.layers.size());
        std::vector<ad::Tensor> pre(model.layers.size());
        for (std::size_t li = 0; li < model.layers.size(); ++li) {
            const ModelLayer& layer = model.layers[li];
            inputs[li] = h;
            const Vector& b =
                layer.kind == ModelLayer::Kind::Dense ? layer.dense.b : layer.inducing.bias;
            ad::Tensor y = ad::add(ad::matmul(h, ad::transpose(ad::Tensor(mean_w[li]))),
                                   ad::Tensor(b));
            pre[li] = y;
            h = layer.tanh_activation ? ad::tanh(y) : y;
        }

        ad::Tensor loss;
        if (model.likelihood == Likelihood::Gaussian) {
            loss = ad::scale(ad::sum(ad::square(h)), 0.5);
        } else {
            const Vector& out = h.value();
            std::size_t label = 0;
            for (std::size_t c = 1; c < out.size(); ++c) {
                if (out[c] > out[label]) label = c;
            }
            Matrix onehot(1, out.size());
            onehot(0, label) = 1.0;
            const ad::Tensor lse = ad::logsumexp_rows(h);
            const ad::Tensor picked = ad::sum(ad::mul(h, ad::Tensor(onehot)));
            loss = ad::sub(ad::reshape(lse, ad::Shape{}), picked);
        }
        tape.backward(loss);

        for (std::size_t pi = 0; pi < projectors.size(); ++pi) {
            const KeyLayerProjector& proj = projectors[pi];
            const std::size_t li = proj.layer_id;
            const Vector x_in = inputs[li].value();
            const Vector y_pre = pre[li].value();
            const Vector g_pre = tape.grad(pre[li]);
            // weight-space feature and gradient, both rank-one in (p, q)
            const Vector p = feature_grad_vector(y_pre, g_pre);
            const Vector q = feature_grad_vector(x_in, x_in);
            residuals(i, pi) = proj.residual_norm_rank1(p, q);
        }
    }
    return residuals;
}

Vector score_batch(const Model& model, const std::vector<KeyLayerProjector>& projectors,
                   const Matrix& x) {
    const Matrix residuals = score_residuals(model, projectors, x);
    Vector scores(x.rows, 0.0);
    for (std::size_t i = 0; i < residuals.rows; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < residuals.cols; ++j) acc += residuals(i, j);
        scores[i] = acc / static_cast<double>(residuals.cols);
    }
    return scores;
}

namespace {

double sigma_max_sampled(const Matrix& m, Rng& rng) {
    if (m.empty()) return 0.0;
    PowerIterState st = PowerIterState::random_init(m.rows, m.cols, rng);
    return spectral_norm_power(m, 500, std::move(st)).sigma;
}

}  // namespace

MarginReport margin_report(const InducingLayer& layer, const KeyLayerProjector& proj,
                           std::size_t n_probe, std::size_t n_e_samples, Rng& rng) {
    if (n_probe < 64) throw EmptyInput("margin_report: n_probe must be >= 64");
    MarginReport report;
    report.n_probe = n_probe;
    report.n_e_samples = n_e_samples;

    // ||E||: largest spectral norm of sampled weight residuals W - E[W|u]
    const double noise = layer.lambda() * layer.sigma_p;
    double e_norm = 0.0;
    for (std::size_t k = 0; k < n_e_samples; ++k) {
        Matrix e = rng.normal_matrix(layer.d_out, layer.d_in);
        for (double& v : e.data) v *= noise;
        e_norm = std::max(e_norm, sigma_max_sampled(e, rng));
    }
    report.e_norm_estimate = e_norm;

    // representative magnitude of the base variational draw
    const Vector s = layer.q_v.std_vector();
    double rho_sq = 0.0;
    for (std::size_t i = 0; i < layer.inducing_dim(); ++i) {
        rho_sq += layer.q_v.mean[i] * layer.q_v.mean[i] + s[i] * s[i];
    }
    const double rho = std::sqrt(rho_sq);

    const auto objective = [&](const Vector& v) {
        Vector scaled(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) scaled[i] = rho * v[i];
        const Vector u = layer.flow.forward(scaled).first;
        Matrix u_mat(layer.m_out, layer.m_in, u);
        if (layer.whitened_u) {
            u_mat = matmul(layer.kt.l_row, matmul(u_mat, transpose(layer.kt.l_col)));
        }
        return proj.residual_norm_sandwich(u_mat);
    };

    const std::size_t m = layer.inducing_dim();
    const double fd_h = 1e-4;
    const double step = 1e-2;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < n_probe; ++p) {
        Vector v = rng.unit_vector(m);
        double fv = objective(v);
        for (std::size_t it = 0; it < 50; ++it) {
            Vector grad(m);
            for (std::size_t i = 0; i < m; ++i) {
                Vector vp = v, vm = v;
                vp[i] += fd_h;
                vm[i] -= fd_h;
                grad[i] = (objective(vp) - objective(vm)) / (2.0 * fd_h);
            }
            for (std::size_t i = 0; i < m; ++i) v[i] -= step * grad[i];
            const double nrm = norm2(v);
            if (nrm > 0) {
                for (double& x : v) x /= nrm;
            }
            fv = objective(v);
        }
        best = std::min(best, fv);
    }
    report.s_estimate = best;
    report.separation_holds = report.s_estimate > 2.0 * report.e_norm_estimate;
    return report;
}

LemmaSeparationResult lemma_separation_demo(std::size_t dim_n, std::size_t dim_m,
                                            const LipschitzMlp& g_core, double epsilon, Rng& rng,
                                            std::size_t n_samples) {
    if (dim_m >= dim_n) throw DimensionMismatch("lemma_separation_demo: need dim_M < dim_N");
    if (!g_core.is_identity() && g_core.dim() != dim_m) {
        throw DimensionMismatch("lemma_separation_demo: g acts on the M-dim row space");
    }
    const std::size_t n = dim_n, m = dim_m;

    // orthonormal frame: first m columns span the inducing row space V
    const Matrix q = random_orthogonal(n, n, rng);
    Matrix q_v(n, m), q_c(n, n - m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) q_v(i, j) = q(i, j);
        for (std::size_t j = m; j < n; ++j) q_c(i, j - m) = q(i, j);
    }

    // known inducing matrix with row space V; exact projector via pinv path
    const Matrix g_m = rng.normal_matrix(m, m);
    const Matrix u_proj = matmul(g_m, transpose(q_v));  // m x n
    const Matrix p = ridge_projector(u_proj, 0.0);

    // input frame: ID inputs come from the subspace the mean map sends into V
    const Matrix qx = random_orthogonal(n, n, rng);
    Matrix x_par(n, m), x_perp(n, n - m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) x_par(i, j) = qx(i, j);
        for (std::size_t j = m; j < n; ++j) x_perp(i, j - m) = qx(i, j);
    }
    const Matrix ma = rng.normal_matrix(m, m);
    const Matrix mb = rng.normal_matrix(n - m, n - m);
    // W_mean = Q_V Ma X_par^T + Q_c Mb X_perp^T
    const Matrix w_mean =
        matmul(q_v, matmul(ma, transpose(x_par))) + matmul(q_c, matmul(mb, transpose(x_perp)));

    // E with spectral norm exactly epsilon
    Matrix e = rng.normal_matrix(n, n);
    {
        PowerIterState st = PowerIterState::random_init(n, n, rng);
        const double sig = spectral_norm_power(e, 2000, std::move(st)).sigma;
        for (double& v : e.data) v *= epsilon / sig;
    }
    const Matrix w_full = w_mean + e;

    const auto g_apply = [&](const Vector& x) {
        Vector xi_v = matvec_t(q_v, x);
        const Vector xi_c = matvec_t(q_c, x);
        if (!g_core.is_identity()) xi_v = g_core.forward(xi_v);
        Vector out = matvec(q_v, xi_v);
        const Vector oc = matvec(q_c, xi_c);
        for (std::size_t i = 0; i < n; ++i) out[i] += oc[i];
        return out;
    };
    const auto residual = [&](const Vector& w) {
        const Vector gx = g_apply(w);
        Vector r = gx;
        const Vector pr = matvec(p, gx);
        for (std::size_t i = 0; i < n; ++i) r[i] -= pr[i];
        return norm2(r);
    };

    LemmaSeparationResult res;
    res.e_norm = epsilon;
    res.id_residuals.reserve(n_samples);
    res.ood_residuals.reserve(n_samples);

    res.sup_id = 0.0;
    for (std::size_t k = 0; k < n_samples; ++k) {
        const Vector w = rng.unit_vector(m);
        Vector x = matvec(x_par, w);
        const double nrm = norm2(x);
        for (double& v : x) v /= nrm;
        const double d = residual(matvec(w_full, x));
        res.id_residuals.push_back(d);
        res.sup_id = std::max(res.sup_id, d);
    }

    res.inf_ood = std::numeric_limits<double>::infinity();
    res.s_measured = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n_samples; ++k) {
        const Vector wp = rng.unit_vector(m);
        const Vector wq = rng.unit_vector(n - m);
        const double beta = rng.uniform(0.5, 1.0);
        const double alpha = std::sqrt(1.0 - beta * beta);
        Vector x = matvec(x_par, wp);
        const Vector xp = matvec(x_perp, wq);
        for (std::size_t i = 0; i < n; ++i) x[i] = alpha * x[i] + beta * xp[i];
        const double nrm = norm2(x);
        for (double& v : x) v /= nrm;

        const double d = residual(matvec(w_full, x));
        res.ood_residuals.push_back(d);
        res.inf_ood = std::min(res.inf_ood, d);
        res.s_measured = std::min(res.s_measured, residual(matvec(w_mean, x)));
    }

    res.premise = res.s_measured > 2.0 * epsilon;
    res.certified = res.sup_id < res.inf_ood;
    return res;
}

double auroc(const Vector& scores_id, const Vector& scores_ood) {
    if (scores_id.empty() || scores_ood.empty()) throw EmptyInput("auroc: empty score vector");
    struct Item {
        double score;
        bool ood;
    };
    std::vector<Item> items;
    items.reserve(scores_id.size() + scores_ood.size());
    for (double s : scores_id) items.push_back({s, false});
    for (double s : scores_ood) items.push_back({s, true});
    std::sort(items.begin(), items.end(),
              [](const Item& a, const Item& b) { return a.score < b.score; });

    // midranks over tie groups
    const std::size_t n = items.size();
    Vector ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && items[j + 1].score == items[i].score) ++j;
        const double mid = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k) ranks[k] = mid;
        i = j + 1;
    }
    double rank_sum_ood = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (items[k].ood) rank_sum_ood += ranks[k];
    }
    const double n_o = static_cast<double>(scores_ood.size());
    const double n_i = static_cast<double>(scores_id.size());
    const double u = rank_sum_ood - n_o * (n_o + 1.0) / 2.0;
    return u / (n_i * n_o);
}

}  // namespace fidgp
