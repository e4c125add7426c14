#include "fidgp/harness.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fidgp/errors.hpp"

namespace fidgp {

Model build_model_from_config(const RunConfig& cfg, Rng& rng) {
    std::size_t in_dim = 0, out_dim = 0;
    Likelihood lik = Likelihood::Gaussian;
    if (cfg.task == "regression1d") {
        in_dim = 1;
        out_dim = 1;
    } else if (cfg.task == "toy_classification") {
        in_dim = 2;
        out_dim = 2;
        lik = Likelihood::Categorical;
    } else {
        throw ConfigError("unknown task '" + cfg.task + "'");
    }
    std::vector<std::size_t> widths;
    widths.push_back(in_dim);
    for (std::size_t i = 0; i < cfg.n_hidden; ++i) widths.push_back(cfg.hidden_width);
    widths.push_back(out_dim);

    InducingLayerOptions opts;
    opts.flow_depth = cfg.flow_depth;
    opts.flow_hidden = cfg.flow_hidden;
    opts.flow_s_cap = cfg.flow_s_cap;
    opts.lambda_init = cfg.lambda_init;
    opts.lambda_max = cfg.lambda_max;
    opts.sigma_p = cfg.prior_sd;
    opts.max_std_u = cfg.max_std_u;
    opts.whitened_u = cfg.whitened_u;

    Model model = make_mlp_model(widths, cfg.m_in, cfg.m_out, opts, lik, rng);
    model.noise_std = cfg.noise_std;
    model.label_smoothing = cfg.label_smoothing;
    // standardization stats default to identity until fitted on data
    model.input_mean.assign(in_dim, 0.0);
    model.input_std.assign(in_dim, 1.0);
    return model;
}

void apply_env_seed(RunConfig& cfg) {
    if (const char* env = std::getenv("FIDGP_SEED")) {
        try {
            std::size_t pos = 0;
            const unsigned long long v = std::stoull(env, &pos);
            if (pos != std::string(env).size()) throw std::invalid_argument(env);
            cfg.seed = v;
        } catch (const std::exception&) {
            throw ConfigError("FIDGP_SEED is not an integer: '" + std::string(env) + "'");
        }
    }
}

Batch regression_batch(const Regression1DDataset& ds) {
    Batch b;
    b.x = Matrix(ds.x_train.size(), 1, ds.x_train);
    b.y = Matrix(ds.y_train.size(), 1, ds.y_train);
    return b;
}

Batch toy_batch(const Matrix& x, const std::vector<std::size_t>& labels) {
    Batch b;
    b.x = x;
    b.labels = labels;
    return b;
}

TrainRun run_training(const RunConfig& cfg) {
    TrainRun run;
    Rng rng(cfg.seed);
    run.model = build_model_from_config(cfg, rng);

    Batch data;
    if (cfg.task == "regression1d") {
        const Regression1DDataset ds = gen_regression1d(cfg.n_per_cluster, cfg.seed,
                                                        cfg.grid_points);
        data = regression_batch(ds);
    } else {
        const ToyOodDataset ds = gen_toy_ood(cfg.seed, cfg.toy_n_train, cfg.toy_n_test,
                                             cfg.toy_n_ood);
        data = toy_batch(ds.id_train_x, ds.id_train_labels);
    }
    run.model.set_standardization(data.x);

    TrainOptions topts;
    topts.epochs = cfg.epochs;
    topts.batch_size = cfg.batch_size;
    topts.lr = cfg.lr;
    topts.optimizer = cfg.optimizer;
    topts.momentum = cfg.momentum;
    topts.kl_warmup_frac = cfg.kl_warmup_frac;
    topts.mode = sampling_mode_from_string(cfg.sampling_mode);
    topts.train_samples = cfg.train_samples;
    topts.seed = cfg.seed;
    run.trace = train(run.model, data, topts);
    return run;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string trace_to_csv(const std::vector<TraceRow>& trace) {
    std::string out = "epoch,loglik,kl_flow,kl_cond,lambda_mean\n";
    for (const TraceRow& row : trace) {
        out += std::to_string(row.epoch) + "," + format_double(row.loglik) + "," +
               format_double(row.kl_flow) + "," + format_double(row.kl_cond) + "," +
               format_double(row.lambda_mean) + "\n";
    }
    return out;
}

std::string predictions_csv(Model& model, const RunConfig& cfg) {
    if (cfg.task != "regression1d") {
        throw ConfigError("predictions_csv: only the regression1d task has a prediction grid");
    }
    const Regression1DDataset ds = gen_regression1d(cfg.n_per_cluster, cfg.seed, cfg.grid_points);
    const Matrix x(ds.x_test.size(), 1, ds.x_test);
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    const SamplingMode mode = sampling_mode_from_string(cfg.sampling_mode);
    const Model::Prediction pred = model.predict(x, cfg.test_samples, mode, rng);
    std::string out = "x,mean,std,true_f\n";
    for (std::size_t i = 0; i < ds.x_test.size(); ++i) {
        out += format_double(ds.x_test[i]) + "," + format_double(pred.mean(i, 0)) + "," +
               format_double(pred.std(i, 0)) + "," + format_double(ds.f_test[i]) + "\n";
    }
    return out;
}

std::vector<std::size_t> key_layer_indices(const RunConfig& cfg) {
    // hidden layer k (1-based) is produced by model layer k-1
    std::vector<std::size_t> idx;
    for (std::size_t k : cfg.key_layers) idx.push_back(k - 1);
    return idx;
}

OodRun run_ood_scoring(Model& model, const RunConfig& cfg, const Matrix& id_x, const Matrix& ood_x,
                       bool with_margins) {
    OodRun run;
    const std::vector<std::size_t> keys = key_layer_indices(cfg);
    const std::vector<KeyLayerProjector> projs =
        build_projectors(model, keys, cfg.lambda_proj, cfg.projector_max_rows);
    run.scores_id = score_batch(model, projs, id_x);
    run.scores_ood = score_batch(model, projs, ood_x);
    run.auroc_value = auroc(run.scores_id, run.scores_ood);
    if (with_margins) {
        Rng rng(cfg.seed ^ 0xa5a5a5a55a5a5a5aull);
        for (std::size_t i = 0; i < keys.size(); ++i) {
            run.margins.push_back(margin_report(model.layers[keys[i]].inducing, projs[i],
                                                cfg.margin_probes, cfg.margin_e_samples, rng));
        }
    }
    return run;
}

std::string scores_csv(const Vector& scores_id, const Vector& scores_ood) {
    std::string out = "sample_id,score,origin_label\n";
    std::size_t id = 0;
    for (double s : scores_id) {
        out += std::to_string(id++) + "," + format_double(s) + ",id\n";
    }
    for (double s : scores_ood) {
        out += std::to_string(id++) + "," + format_double(s) + ",ood\n";
    }
    return out;
}

std::string margin_report_text(const std::vector<MarginReport>& margins,
                               const std::vector<std::size_t>& layer_ids) {
    std::ostringstream out;
    for (std::size_t i = 0; i < margins.size(); ++i) {
        const MarginReport& m = margins[i];
        out << "margin-report layer=" << layer_ids[i] << "\n";
        out << "  S_estimate = " << format_double(m.s_estimate) << "\n";
        out << "  E_norm_estimate = " << format_double(m.e_norm_estimate) << "\n";
        out << "  separation_holds = " << (m.separation_holds ? "true" : "false") << "\n";
        out << "  n_probe = " << m.n_probe << "\n";
        out << "  n_E_samples = " << m.n_e_samples << "\n";
    }
    return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw ConfigError("write to '" + path + "' failed");
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) throw EmptyInput("csv '" + path + "' is empty");
    std::stringstream header(line);
    std::string col;
    while (std::getline(header, col, ',')) table.columns.push_back(col);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        Vector row;
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw ConfigError("csv '" + path + "' line " + std::to_string(lineno) +
                                  ": non-numeric cell '" + cell + "'");
            }
        }
        if (row.size() != table.columns.size()) {
            throw ConfigError("csv '" + path + "' line " + std::to_string(lineno) +
                              ": expected " + std::to_string(table.columns.size()) + " cells");
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace fidgp
