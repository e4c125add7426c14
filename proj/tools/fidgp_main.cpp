#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fidgp/checkpoint.hpp"
#include "fidgp/counting.hpp"
#include "fidgp/errors.hpp"
#include "fidgp/harness.hpp"
#include "fidgp/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace fidgp;

namespace {

int cmd_generate_data(const std::string& task, std::uint64_t seed, const std::string& out_dir,
                      std::size_t n_per_cluster, std::size_t n_train, std::size_t n_test,
                      std::size_t n_ood) {
    fs::create_directories(out_dir);
    if (task == "regression1d") {
        const Regression1DDataset ds = gen_regression1d(n_per_cluster, seed);
        std::string train = "x,y\n";
        for (std::size_t i = 0; i < ds.x_train.size(); ++i) {
            train += format_double(ds.x_train[i]) + "," + format_double(ds.y_train[i]) + "\n";
        }
        std::string test = "x,true_f\n";
        for (std::size_t i = 0; i < ds.x_test.size(); ++i) {
            test += format_double(ds.x_test[i]) + "," + format_double(ds.f_test[i]) + "\n";
        }
        write_text_file(out_dir + "/regression_train.csv", train);
        write_text_file(out_dir + "/regression_test.csv", test);
        std::cout << "wrote " << out_dir << "/regression_{train,test}.csv\n";
    } else if (task == "toy_classification") {
        const ToyOodDataset ds = gen_toy_ood(seed, n_train, n_test, n_ood);
        const auto dump = [](const Matrix& x, const std::vector<std::size_t>* labels) {
            std::string out = labels ? "x1,x2,label\n" : "x1,x2\n";
            for (std::size_t i = 0; i < x.rows; ++i) {
                out += format_double(x(i, 0)) + "," + format_double(x(i, 1));
                if (labels) out += "," + std::to_string((*labels)[i]);
                out += "\n";
            }
            return out;
        };
        write_text_file(out_dir + "/toy_id_train.csv", dump(ds.id_train_x, &ds.id_train_labels));
        write_text_file(out_dir + "/toy_id_test.csv", dump(ds.id_test_x, &ds.id_test_labels));
        write_text_file(out_dir + "/toy_ood.csv", dump(ds.ood_x, nullptr));
        std::cout << "wrote " << out_dir << "/toy_{id_train,id_test,ood}.csv\n";
    } else {
        throw ConfigError("unknown task '" + task + "'");
    }
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& checkpoint_path,
              const std::string& trace_path) {
    RunConfig cfg = load_config_file(config_path);
    apply_env_seed(cfg);
    TrainRun run = run_training(cfg);
    save_checkpoint(checkpoint_path, run.model, cfg);
    if (!trace_path.empty()) write_text_file(trace_path, trace_to_csv(run.trace));
    std::cout << "trained " << cfg.task << " for " << cfg.epochs << " epochs; checkpoint at "
              << checkpoint_path << "\n";
    if (!run.trace.empty()) {
        const TraceRow& last = run.trace.back();
        std::cout << "final loglik " << format_double(last.loglik) << ", kl_flow "
                  << format_double(last.kl_flow) << ", kl_cond " << format_double(last.kl_cond)
                  << ", lambda " << format_double(last.lambda_mean) << "\n";
    }
    return 0;
}

int cmd_predict(const std::string& checkpoint_path, const std::string& out_path,
                const std::string& mode) {
    LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
    if (!mode.empty()) loaded.cfg.sampling_mode = mode;
    write_text_file(out_path, predictions_csv(loaded.model, loaded.cfg));
    std::cout << "wrote predictions to " << out_path << "\n";
    return 0;
}

Matrix csv_points(const std::string& path) {
    const CsvTable table = read_csv(path);
    if (table.columns.size() < 2) throw ConfigError("expected at least x1,x2 columns in " + path);
    Matrix x(table.rows.size(), 2);
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        x(i, 0) = table.rows[i][0];
        x(i, 1) = table.rows[i][1];
    }
    return x;
}

int cmd_ood_score(const std::string& checkpoint_path, const std::string& id_path,
                  const std::string& ood_path, const std::string& out_dir, bool skip_margins) {
    LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
    const Matrix id_x = csv_points(id_path);
    const Matrix ood_x = csv_points(ood_path);
    fs::create_directories(out_dir);
    const OodRun run = run_ood_scoring(loaded.model, loaded.cfg, id_x, ood_x, !skip_margins);
    write_text_file(out_dir + "/scores.csv", scores_csv(run.scores_id, run.scores_ood));
    if (!run.margins.empty()) {
        write_text_file(out_dir + "/margin.txt",
                        margin_report_text(run.margins, key_layer_indices(loaded.cfg)));
    }
    std::cout << "auroc " << format_double(run.auroc_value) << "\n";
    for (std::size_t i = 0; i < run.margins.size(); ++i) {
        const MarginReport& m = run.margins[i];
        std::cout << "layer " << key_layer_indices(loaded.cfg)[i] << ": S "
                  << format_double(m.s_estimate) << ", ||E|| "
                  << format_double(m.e_norm_estimate) << ", separation_holds "
                  << (m.separation_holds ? "true" : "false") << "\n";
    }
    return 0;
}

int cmd_count_params(const std::string& manifest, std::size_t m, std::size_t m_in,
                     std::size_t m_out, const std::string& mode, std::size_t k_components) {
    CountOptions opts;
    opts.m_in = m_in ? m_in : m;
    opts.m_out = m_out ? m_out : m;
    opts.mode = sampling_mode_from_string(mode);
    opts.matheron_components = k_components;
    const std::vector<ManifestLayer> layers =
        manifest == "resnet18" ? resnet18_manifest() : load_manifest_file(manifest);
    const ParamCountReport report = compressed_param_count(layers, opts);
    std::cout << "total " << report.total << " (converted " << report.converted
              << ", unconverted " << report.unconverted_dense << ")\n";
    std::cout << "dense baseline " << report.dense_total << "\n";
    std::cout << "compression " << format_double(100.0 * report.compression) << "%\n";
    std::cout << "reported separately: biases " << report.bias_params << ", flow params "
              << report.flow_params << "\n";
    return 0;
}

int cmd_selfcheck(std::uint64_t seed) {
    const std::vector<CheckResult> results = run_selfcheck(seed);
    bool all_ok = true;
    for (const CheckResult& r : results) {
        std::cout << (r.passed ? "PASS" : "FAIL") << " " << r.name << " (" << r.detail << ")\n";
        all_ok = all_ok && r.passed;
    }
    if (!all_ok) throw NonFiniteLoss("selfcheck failed");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Flow-induced diagonal GP layers: training, prediction, OoD scoring"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("generate-data", "Write task datasets as CSV");
    std::string gen_task = "regression1d", gen_out = ".";
    std::uint64_t gen_seed = 42;
    std::size_t gen_npc = 100, gen_train = 500, gen_test = 500, gen_ood = 500;
    gen->add_option("--task", gen_task, "regression1d or toy_classification");
    gen->add_option("--seed", gen_seed, "dataset seed");
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--n-per-cluster", gen_npc, "regression cluster size");
    gen->add_option("--n-train", gen_train, "toy ID train size");
    gen->add_option("--n-test", gen_test, "toy ID test size");
    gen->add_option("--n-ood", gen_ood, "toy OoD size");

    auto* tr = app.add_subcommand("train", "Train from a config file");
    std::string tr_config, tr_ckpt = "model.ckpt", tr_trace;
    tr->add_option("--config", tr_config, "config file")->required();
    tr->add_option("--out", tr_ckpt, "checkpoint output path");
    tr->add_option("--trace", tr_trace, "trace CSV output path");

    auto* pr = app.add_subcommand("predict", "Predictive mean/std on the test grid");
    std::string pr_ckpt, pr_out = "predictions.csv", pr_mode;
    pr->add_option("--checkpoint", pr_ckpt, "checkpoint path")->required();
    pr->add_option("--out", pr_out, "predictions CSV path");
    pr->add_option("--mode", pr_mode, "override sampling mode (reparam|matheron|mean_only)");

    auto* od = app.add_subcommand("ood-score", "Score ID/OoD data with a trained model");
    std::string od_ckpt, od_id, od_ood, od_out = "ood-out";
    bool od_skip_margins = false;
    od->add_option("--checkpoint", od_ckpt, "checkpoint path")->required();
    od->add_option("--id", od_id, "ID points CSV")->required();
    od->add_option("--ood", od_ood, "OoD points CSV")->required();
    od->add_option("--out", od_out, "output directory");
    od->add_flag("--skip-margins", od_skip_margins, "skip the margin diagnostics");

    auto* cp = app.add_subcommand("count-params", "Storage counts for a layer manifest");
    std::string cp_manifest = "resnet18", cp_mode = "matheron";
    std::size_t cp_m = 128, cp_m_in = 0, cp_m_out = 0, cp_k = 2;
    cp->add_option("--manifest", cp_manifest, "'resnet18' or a manifest file");
    cp->add_option("--m", cp_m, "inducing size (square)");
    cp->add_option("--m-in", cp_m_in, "override M_in");
    cp->add_option("--m-out", cp_m_out, "override M_out");
    cp->add_option("--mode", cp_mode, "reparam or matheron");
    cp->add_option("--k", cp_k, "stored Matheron components per layer");

    auto* sc = app.add_subcommand("selfcheck", "Run the built-in oracle battery");
    std::uint64_t sc_seed = 42;
    sc->add_option("--seed", sc_seed, "seed for the randomized checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            return cmd_generate_data(gen_task, gen_seed, gen_out, gen_npc, gen_train, gen_test,
                                     gen_ood);
        }
        if (tr->parsed()) return cmd_train(tr_config, tr_ckpt, tr_trace);
        if (pr->parsed()) return cmd_predict(pr_ckpt, pr_out, pr_mode);
        if (od->parsed()) return cmd_ood_score(od_ckpt, od_id, od_ood, od_out, od_skip_margins);
        if (cp->parsed()) return cmd_count_params(cp_manifest, cp_m, cp_m_in, cp_m_out, cp_mode, cp_k);
        if (sc->parsed()) return cmd_selfcheck(sc_seed);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
