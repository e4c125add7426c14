#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace fidgp {

/// Flat run configuration; file keys mirror the field names with dotted
/// sections (inducing.m_out, flow.depth, data.n_per_cluster, ...). Unknown
/// keys are a hard error.
struct RunConfig {
    std::uint64_t seed = 42;
    std::string task = "regression1d";  // or toy_classification
    std::size_t epochs = 800;
    std::size_t batch_size = 100;
    double lr = 1e-3;
    std::string optimizer = "adam";  // or sgd
    double momentum = 0.9;
    double label_smoothing = 0.05;
    std::size_t m_out = 64;
    std::size_t m_in = 64;
    bool whitened_u = true;
    double lambda_init = 0.001;
    double lambda_max = 0.03;
    double prior_sd = 1.0;
    double max_std_u = 0.1;
    bool cache_cholesky = true;
    std::size_t flow_depth = 4;
    std::size_t flow_hidden = 32;
    double flow_s_cap = 2.0;
    std::vector<std::size_t> key_layers = {1, 3};  // 1-based hidden-layer ids
    double lambda_proj = 1e-3;
    double kl_warmup_frac = 0.3;
    std::size_t train_samples = 1;
    std::size_t test_samples = 8;
    std::string sampling_mode = "reparam";
    double noise_std = 0.1;
    std::size_t hidden_width = 100;
    std::size_t n_hidden = 3;
    std::size_t n_per_cluster = 100;
    std::size_t grid_points = 200;
    std::size_t toy_n_train = 500;
    std::size_t toy_n_test = 500;
    std::size_t toy_n_ood = 500;
    std::size_t margin_probes = 1024;
    std::size_t margin_e_samples = 32;
    std::size_t projector_max_rows = 256;

    void validate() const;
};

/// Named hyperparameter presets for the two synthetic-regression setups:
/// A = 64x64 inducing, lambda_max 0.08, prior_sd 0.5;
/// B = 32x32 inducing, lambda_max 0.05, prior_sd 0.3.
void apply_preset(RunConfig& cfg, const std::string& name);

RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);
std::string config_to_text(const RunConfig& cfg);

}  // namespace fidgp
