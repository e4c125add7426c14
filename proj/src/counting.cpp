#include "fidgp/counting.hpp"

#include <fstream>
#include <sstream>

#include "fidgp/errors.hpp"

namespace fidgp {

std::size_t ManifestLayer::d_in() const {
    return kind == Kind::Conv ? c_in * kernel * kernel : c_in;
}

std::size_t ManifestLayer::d_out() const { return c_out; }

std::size_t ManifestLayer::dense_params() const {
    switch (kind) {
        case Kind::Conv: return c_in * kernel * kernel * c_out;  // no bias under BN
        case Kind::Linear: return c_in * c_out + c_out;
        case Kind::BatchNorm: return 2 * c_in;
    }
    return 0;
}

std::size_t converted_layer_params(std::size_t d_in, std::size_t d_out, std::size_t m_in,
                                   std::size_t m_out, SamplingMode mode,
                                   std::size_t matheron_components) {
    std::size_t count = d_in * m_in + d_out * m_out + m_in;
    if (mode == SamplingMode::Matheron) count += matheron_components * m_in * m_out;
    return count;
}

namespace {

std::size_t flow_param_count(std::size_t m, const CountOptions& opts) {
    // coupling conditioners: two 2-layer nets per block
    std::size_t total = 0;
    for (std::size_t layer = 0; layer < opts.flow_depth; ++layer) {
        const bool identity_first = (layer % 2 == 0);
        const std::size_t n_id = identity_first ? m / 2 : m - m / 2;
        const std::size_t n_tr = m - n_id;
        const std::size_t h = opts.flow_hidden;
        total += 2 * (h * n_id + h + n_tr * h + n_tr);
    }
    return total;
}

}  // namespace

ParamCountReport compressed_param_count(const std::vector<ManifestLayer>& manifest,
                                        const CountOptions& opts) {
    if (manifest.empty()) throw EmptyInput("compressed_param_count: empty manifest");
    ParamCountReport report;
    for (const ManifestLayer& layer : manifest) {
        report.dense_total += layer.dense_params();
        if (layer.kind == ManifestLayer::Kind::BatchNorm || !layer.convert) {
            report.unconverted_dense += layer.dense_params();
            continue;
        }
        std::size_t m_in = opts.m_in;
        std::size_t m_out = opts.m_out;
        if (layer.kind == ManifestLayer::Kind::Linear) {
            // the head keeps M_in = 128 and M_out = class count
            m_in = opts.linear_m_in;
            m_out = layer.d_out();
        }
        report.converted +=
            converted_layer_params(layer.d_in(), layer.d_out(), m_in, m_out, opts.mode,
                                   opts.matheron_components);
        report.bias_params += layer.d_out();
        report.flow_params += flow_param_count(m_in * m_out, opts);
    }
    report.total = report.converted + report.unconverted_dense;
    report.compression =
        report.dense_total ? 1.0 - static_cast<double>(report.total) /
                                       static_cast<double>(report.dense_total)
                           : 0.0;
    return report;
}

std::vector<ManifestLayer> resnet18_manifest(std::size_t num_classes) {
    using K = ManifestLayer::Kind;
    std::vector<ManifestLayer> m;
    const auto conv = [&](std::size_t cin, std::size_t cout, std::size_t k) {
        m.push_back({K::Conv, cin, cout, k, true});
        m.push_back({K::BatchNorm, cout, 0, 1, false});
    };
    conv(3, 64, 3);  // CIFAR stem
    // stage 1: two basic blocks at 64
    for (int b = 0; b < 2; ++b) {
        conv(64, 64, 3);
        conv(64, 64, 3);
    }
    // stages 2-4 halve resolution; first block carries a 1x1 downsample
    const std::size_t widths[3][2] = {{64, 128}, {128, 256}, {256, 512}};
    for (const auto& [cin, cout] : widths) {
        conv(cin, cout, 3);
        conv(cout, cout, 3);
        conv(cin, cout, 1);  // downsample
        conv(cout, cout, 3);
        conv(cout, cout, 3);
    }
    m.push_back({K::Linear, 512, num_classes, 1, true});
    return m;
}

std::vector<ManifestLayer> load_manifest_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open manifest file '" + path + "'");
    std::vector<ManifestLayer> manifest;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        std::string kind;
        if (!(ss >> kind)) continue;
        ManifestLayer layer;
        if (kind == "conv") {
            layer.kind = ManifestLayer::Kind::Conv;
            if (!(ss >> layer.c_in >> layer.c_out >> layer.kernel)) {
                throw ConfigError("manifest line " + std::to_string(lineno) +
                                  ": expected 'conv c_in c_out k'");
            }
        } else if (kind == "linear") {
            layer.kind = ManifestLayer::Kind::Linear;
            if (!(ss >> layer.c_in >> layer.c_out)) {
                throw ConfigError("manifest line " + std::to_string(lineno) +
                                  ": expected 'linear d_in d_out'");
            }
        } else if (kind == "bn") {
            layer.kind = ManifestLayer::Kind::BatchNorm;
            layer.convert = false;
            if (!(ss >> layer.c_in)) {
                throw ConfigError("manifest line " + std::to_string(lineno) +
                                  ": expected 'bn channels'");
            }
        } else {
            throw ConfigError("manifest line " + std::to_string(lineno) + ": unknown kind '" +
                              kind + "'");
        }
        std::string extra;
        if (ss >> extra) {
            if (extra == "dense") {
                layer.convert = false;
            } else {
                throw ConfigError("manifest line " + std::to_string(lineno) +
                                  ": unexpected token '" + extra + "'");
            }
        }
        manifest.push_back(layer);
    }
    if (manifest.empty()) throw EmptyInput("manifest file '" + path + "' has no layers");
    return manifest;
}

}  // namespace fidgp
