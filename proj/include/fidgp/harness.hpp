#pragma once

#include <string>
#include <vector>

#include "fidgp/config.hpp"
#include "fidgp/datasets.hpp"
#include "fidgp/model.hpp"
#include "fidgp/ood.hpp"

namespace fidgp {

/// MLP with inducing layers per the config (task fixes in/out dims).
Model build_model_from_config(const RunConfig& cfg, Rng& rng);

/// FIDGP_SEED overrides the config seed when set.
void apply_env_seed(RunConfig& cfg);

Batch regression_batch(const Regression1DDataset& ds);
Batch toy_batch(const Matrix& x, const std::vector<std::size_t>& labels);

struct TrainRun {
    Model model;
    std::vector<TraceRow> trace;
};

/// Generate the task dataset from the config seed, fit standardization,
/// and run training. Fully deterministic per config.
TrainRun run_training(const RunConfig& cfg);

std::string trace_to_csv(const std::vector<TraceRow>& trace);

/// Predictions CSV (x, mean, std, true_f) on the config's test grid.
std::string predictions_csv(Model& model, const RunConfig& cfg);

struct OodRun {
    Vector scores_id;
    Vector scores_ood;
    double auroc_value = 0.0;
    std::vector<MarginReport> margins;  // one per key layer
};

/// Model-layer indices of the config's key hidden layers.
std::vector<std::size_t> key_layer_indices(const RunConfig& cfg);

OodRun run_ood_scoring(Model& model, const RunConfig& cfg, const Matrix& id_x,
                       const Matrix& ood_x, bool with_margins = true);

std::string scores_csv(const Vector& scores_id, const Vector& scores_ood);
std::string margin_report_text(const std::vector<MarginReport>& margins,
                               const std::vector<std::size_t>& layer_ids);

/// Deterministic shortest round-trip formatting shared by all CSV output.
std::string format_double(double v);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

/// Simple numeric CSV reader; expects a header line.
struct CsvTable {
    std::vector<std::string> columns;
    std::vector<Vector> rows;
};
CsvTable read_csv(const std::string& path);

}  // namespace fidgp
