#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fidgp/layer.hpp"

namespace fidgp {

/// One entry of a static layer-shape manifest. Conv layers count with the
/// kernel flattened into the input dimension (d_in = c_in * k * k).
struct ManifestLayer {
    enum class Kind { Conv, Linear, BatchNorm };
    Kind kind = Kind::Conv;
    std::size_t c_in = 0;   // conv in-channels / linear in-features / bn channels
    std::size_t c_out = 0;  // conv out-channels / linear out-features
    std::size_t kernel = 1;
    bool convert = true;  // replaced by an inducing layer when counting

    std::size_t d_in() const;
    std::size_t d_out() const;
    std::size_t dense_params() const;
};

struct CountOptions {
    std::size_t m_in = 128;
    std::size_t m_out = 128;
    SamplingMode mode = SamplingMode::Matheron;
    std::size_t matheron_components = 2;  // stored low-rank pieces per layer
    std::size_t linear_m_in = 128;        // linear layers keep M_in = 128
    std::size_t flow_depth = 4;
    std::size_t flow_hidden = 32;
};

struct ParamCountReport {
    std::size_t total = 0;              // converted storage + unconverted dense
    std::size_t converted = 0;          // sum over converted layers
    std::size_t unconverted_dense = 0;  // dense layers and batch-norm
    std::size_t bias_params = 0;        // reported separately from the total
    std::size_t flow_params = 0;        // reported separately from the total
    std::size_t dense_total = 0;        // deterministic baseline
    double compression = 0.0;           // 1 - total / dense_total
};

/// Storage of one converted layer: d_in M_in + d_out M_out + M_in, plus
/// K * M_in * M_out low-rank components in Matheron mode.
std::size_t converted_layer_params(std::size_t d_in, std::size_t d_out, std::size_t m_in,
                                   std::size_t m_out, SamplingMode mode,
                                   std::size_t matheron_components);

ParamCountReport compressed_param_count(const std::vector<ManifestLayer>& manifest,
                                        const CountOptions& opts);

/// CIFAR-style ResNet-18 shape list (3x3 stem, four stages, linear head).
std::vector<ManifestLayer> resnet18_manifest(std::size_t num_classes = 100);

std::vector<ManifestLayer> load_manifest_file(const std::string& path);

}  // namespace fidgp
