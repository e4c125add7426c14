#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fidgp/checkpoint.hpp"
#include "fidgp/counting.hpp"
#include "fidgp/datasets.hpp"
#include "fidgp/flow.hpp"
#include "fidgp/gaussian.hpp"
#include "fidgp/harness.hpp"
#include "fidgp/linalg.hpp"
#include "fidgp/metrics.hpp"
#include "fidgp/model.hpp"
#include "fidgp/ood.hpp"
#include "fidgp/selfcheck.hpp"

namespace py = pybind11;
using namespace fidgp;

namespace {

Matrix matrix_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw ShapeMismatch("expected a 2-D array");
    Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::copy(a.data(), a.data() + m.size(), m.data.begin());
    return m;
}

py::array_t<double> numpy_from_matrix(const Matrix& m) {
    py::array_t<double> out({m.rows, m.cols});
    std::copy(m.data.begin(), m.data.end(), out.mutable_data());
    return out;
}

Vector vector_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 1) throw ShapeMismatch("expected a 1-D array");
    return Vector(a.data(), a.data() + a.shape(0));
}

py::array_t<double> numpy_from_vector(const Vector& v) {
    py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

}  // namespace

PYBIND11_MODULE(_fidgp, m) {
    m.doc() = "Flow-induced diagonal GP layers: core numerical operations";

    py::register_exception<NotSymmetric>(m, "NotSymmetricError");
    py::register_exception<NotPositiveDefinite>(m, "NotPositiveDefiniteError");
    py::register_exception<ShapeMismatch>(m, "ShapeMismatchError");
    py::register_exception<DimensionMismatch>(m, "DimensionMismatchError");
    py::register_exception<InvalidScale>(m, "InvalidScaleError");
    py::register_exception<SingularGram>(m, "SingularGramError");
    py::register_exception<ConfigError>(m, "ConfigError");

    // ---- linear algebra ----
    m.def(
        "cholesky_jittered",
        [](const py::array_t<double>& a, double initial, double growth, double max_jitter) {
            JitterSchedule sched{initial, growth, max_jitter};
            const CholeskyResult res = cholesky_jittered(matrix_from_numpy(a), sched);
            return py::make_tuple(numpy_from_matrix(res.l), res.jitter_used);
        },
        py::arg("a"), py::arg("initial") = 1e-6, py::arg("growth") = 10.0,
        py::arg("max_jitter") = 1e-2,
        "Jittered Cholesky; returns (L, jitter_used).");

    m.def(
        "spectral_norm",
        [](const py::array_t<double>& w, std::size_t iters, std::uint64_t seed) {
            const Matrix mat = matrix_from_numpy(w);
            Rng rng(seed);
            auto state = PowerIterState::random_init(mat.rows, mat.cols, rng);
            return spectral_norm_power(mat, iters, std::move(state)).sigma;
        },
        py::arg("w"), py::arg("iters") = 5000, py::arg("seed") = 0,
        "Largest singular value via power iteration.");

    m.def(
        "ridge_projector",
        [](const py::array_t<double>& u, double lambda_proj) {
            return numpy_from_matrix(ridge_projector(matrix_from_numpy(u), lambda_proj));
        },
        py::arg("u"), py::arg("lambda_proj"),
        "P = U^T (U U^T + lambda I)^{-1} U; exact pseudoinverse at lambda = 0.");

    // ---- gaussian operations ----
    m.def(
        "conditional_gaussian",
        [](const py::array_t<double>& mean, const py::array_t<double>& cov, std::size_t split,
           const py::array_t<double>& y_obs) {
            JointGaussian j{vector_from_numpy(mean), matrix_from_numpy(cov), split};
            const ConditionalGaussian c = conditional_gaussian(j, vector_from_numpy(y_obs));
            return py::make_tuple(numpy_from_vector(c.mean), numpy_from_matrix(c.cov));
        },
        py::arg("mean"), py::arg("cov"), py::arg("split_index"), py::arg("y_obs"));

    m.def("conditional_weight_kl", &conditional_weight_kl, py::arg("d"), py::arg("lambda_"));

    m.def(
        "diag_gaussian_kl",
        [](const py::array_t<double>& mean, const py::array_t<double>& log_std, double max_std) {
            DiagGaussianVariational q{vector_from_numpy(mean), vector_from_numpy(log_std),
                                      max_std};
            return diag_gaussian_kl(q);
        },
        py::arg("mean"), py::arg("log_std"), py::arg("max_std") = 0.1);

    m.def(
        "matrix_normal_cond_mean",
        [](const py::array_t<double>& t_row, const py::array_t<double>& t_col,
           const py::array_t<double>& u) {
            KroneckerTransforms kt;
            kt.t_row = matrix_from_numpy(t_row);
            kt.t_col = matrix_from_numpy(t_col);
            return numpy_from_matrix(matrix_normal_cond_mean(kt, matrix_from_numpy(u)));
        },
        py::arg("t_row"), py::arg("t_col"), py::arg("u"));

    m.def(
        "matheron_sample",
        [](const py::array_t<double>& t_row, const py::array_t<double>& t_col,
           const py::array_t<double>& u, double sigma_p, double lambda, std::uint64_t seed) {
            KroneckerTransforms kt;
            kt.t_row = matrix_from_numpy(t_row);
            kt.t_col = matrix_from_numpy(t_col);
            kt.refresh_whitening();
            Rng rng(seed);
            return numpy_from_matrix(
                matheron_sample(kt, matrix_from_numpy(u), sigma_p, lambda, rng));
        },
        py::arg("t_row"), py::arg("t_col"), py::arg("u"), py::arg("sigma_p"), py::arg("lambda_"),
        py::arg("seed"));

    // ---- normalizing flow ----
    py::class_<FlowPrior>(m, "FlowPrior")
        .def_static(
            "create",
            [](std::size_t dim, std::size_t depth, std::size_t hidden, double s_cap,
               std::uint64_t seed) {
                Rng rng(seed);
                return FlowPrior::create(dim, depth, hidden, s_cap, rng);
            },
            py::arg("dim"), py::arg("depth") = 4, py::arg("hidden") = 32, py::arg("s_cap") = 2.0,
            py::arg("seed") = 0)
        .def_property_readonly("dim", &FlowPrior::dim)
        .def("forward",
             [](const FlowPrior& f, const py::array_t<double>& u0) {
                 const auto [u, logdet] = f.forward(vector_from_numpy(u0));
                 return py::make_tuple(numpy_from_vector(u), logdet);
             })
        .def("inverse",
             [](const FlowPrior& f, const py::array_t<double>& u) {
                 return numpy_from_vector(f.inverse(vector_from_numpy(u)));
             })
        .def("log_prior_density",
             [](const FlowPrior& f, const py::array_t<double>& u) {
                 return f.log_prior_density(vector_from_numpy(u));
             })
        .def(
            "kl_mc",
            [](const FlowPrior& f, const py::array_t<double>& mean,
               const py::array_t<double>& log_std, std::size_t n_samples, std::uint64_t seed,
               double max_std) {
                DiagGaussianVariational q{vector_from_numpy(mean), vector_from_numpy(log_std),
                                          max_std};
                Rng rng(seed);
                return flow_kl_mc(f, q, nullptr, n_samples, rng);
            },
            py::arg("mean"), py::arg("log_std"), py::arg("n_samples") = 1000, py::arg("seed") = 0,
            py::arg("max_std") = 10.0);

    // ---- metrics, data, scoring ----
    m.def(
        "auroc",
        [](const py::array_t<double>& id_scores, const py::array_t<double>& ood_scores) {
            return auroc(vector_from_numpy(id_scores), vector_from_numpy(ood_scores));
        },
        py::arg("scores_id"), py::arg("scores_ood"));

    m.def(
        "ece",
        [](const py::array_t<double>& probs, const std::vector<std::size_t>& labels,
           std::size_t n_bins) { return ece(matrix_from_numpy(probs), labels, n_bins); },
        py::arg("probs"), py::arg("labels"), py::arg("n_bins") = 15);

    m.def(
        "rmse",
        [](const py::array_t<double>& pred, const py::array_t<double>& target) {
            return rmse(vector_from_numpy(pred), vector_from_numpy(target));
        },
        py::arg("predictions"), py::arg("targets"));

    m.def(
        "gen_regression1d",
        [](std::size_t n_per_cluster, std::uint64_t seed, std::size_t grid_points) {
            const Regression1DDataset ds = gen_regression1d(n_per_cluster, seed, grid_points);
            py::dict out;
            out["x_train"] = numpy_from_vector(ds.x_train);
            out["y_train"] = numpy_from_vector(ds.y_train);
            out["x_test"] = numpy_from_vector(ds.x_test);
            out["f_test"] = numpy_from_vector(ds.f_test);
            return out;
        },
        py::arg("n_per_cluster") = 100, py::arg("seed") = 42, py::arg("grid_points") = 200);

    m.def(
        "count_params",
        [](const std::string& manifest, std::size_t m_in, std::size_t m_out,
           const std::string& mode, std::size_t k) {
            CountOptions opts;
            opts.m_in = m_in;
            opts.m_out = m_out;
            opts.mode = sampling_mode_from_string(mode);
            opts.matheron_components = k;
            const auto layers =
                manifest == "resnet18" ? resnet18_manifest() : load_manifest_file(manifest);
            const ParamCountReport r = compressed_param_count(layers, opts);
            py::dict out;
            out["total"] = r.total;
            out["converted"] = r.converted;
            out["unconverted_dense"] = r.unconverted_dense;
            out["bias_params"] = r.bias_params;
            out["flow_params"] = r.flow_params;
            out["dense_total"] = r.dense_total;
            out["compression"] = r.compression;
            return out;
        },
        py::arg("manifest") = "resnet18", py::arg("m_in") = 128, py::arg("m_out") = 128,
        py::arg("mode") = "matheron", py::arg("k") = 2);

    // ---- end-to-end pipelines ----
    py::class_<Model>(m, "Model")
        .def("predict",
             [](Model& model, const py::array_t<double>& x, std::size_t n_samples,
                const std::string& mode, std::uint64_t seed) {
                 Rng rng(seed);
                 const Model::Prediction pred = model.predict(
                     matrix_from_numpy(x), n_samples, sampling_mode_from_string(mode), rng);
                 return py::make_tuple(numpy_from_matrix(pred.mean), numpy_from_matrix(pred.std));
             },
             py::arg("x"), py::arg("n_samples") = 8, py::arg("mode") = "reparam",
             py::arg("seed") = 0)
        .def("predict_probs", [](Model& model, const py::array_t<double>& x,
                                 std::size_t n_samples, const std::string& mode,
                                 std::uint64_t seed) {
            Rng rng(seed);
            return numpy_from_matrix(model.predict_probs(
                matrix_from_numpy(x), n_samples, sampling_mode_from_string(mode), rng));
        }, py::arg("x"), py::arg("n_samples") = 8, py::arg("mode") = "reparam", py::arg("seed") = 0);

    py::class_<TraceRow>(m, "TraceRow")
        .def_readonly("epoch", &TraceRow::epoch)
        .def_readonly("loglik", &TraceRow::loglik)
        .def_readonly("kl_flow", &TraceRow::kl_flow)
        .def_readonly("kl_cond", &TraceRow::kl_cond)
        .def_readonly("lambda_mean", &TraceRow::lambda_mean);

    m.def(
        "train_from_config",
        [](const std::string& config_text) {
            const RunConfig cfg = parse_config_text(config_text);
            TrainRun run = run_training(cfg);
            return py::make_tuple(std::move(run.model), run.trace);
        },
        py::arg("config_text"),
        "Parse a config, train deterministically, return (model, trace).");

    m.def(
        "score_ood",
        [](Model& model, const std::string& config_text, const py::array_t<double>& id_x,
           const py::array_t<double>& ood_x, bool with_margins) {
            const RunConfig cfg = parse_config_text(config_text);
            const OodRun run = run_ood_scoring(model, cfg, matrix_from_numpy(id_x),
                                               matrix_from_numpy(ood_x), with_margins);
            py::dict out;
            out["scores_id"] = numpy_from_vector(run.scores_id);
            out["scores_ood"] = numpy_from_vector(run.scores_ood);
            out["auroc"] = run.auroc_value;
            py::list margins;
            for (const MarginReport& mr : run.margins) {
                py::dict d;
                d["s_estimate"] = mr.s_estimate;
                d["e_norm_estimate"] = mr.e_norm_estimate;
                d["separation_holds"] = mr.separation_holds;
                margins.append(d);
            }
            out["margins"] = margins;
            return out;
        },
        py::arg("model"), py::arg("config_text"), py::arg("id_x"), py::arg("ood_x"),
        py::arg("with_margins") = false);

    m.def("save_checkpoint",
          [](const std::string& path, Model& model, const std::string& config_text) {
              save_checkpoint(path, model, parse_config_text(config_text));
          });
    m.def("load_checkpoint", [](const std::string& path) {
        LoadedCheckpoint loaded = load_checkpoint(path);
        return py::make_tuple(std::move(loaded.model), config_to_text(loaded.cfg));
    });

    m.def("selfcheck", [](std::uint64_t seed) {
        py::list out;
        for (const CheckResult& r : run_selfcheck(seed)) {
            py::dict d;
            d["name"] = r.name;
            d["passed"] = r.passed;
            d["detail"] = r.detail;
            out.append(d);
        }
        return out;
    }, py::arg("seed") = 42);
}
