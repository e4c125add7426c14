#pragma once

#include <string>

#include "fidgp/config.hpp"
#include "fidgp/model.hpp"

namespace fidgp {

/// Versioned structured-text checkpoint: schema line, config echo, then one
/// base64-encoded f64 tensor per line for every learnable parameter, the
/// whitening factors, the flow power-iteration vectors, and the input
/// standardization stats. Loading an unknown schema version is an error.
void save_checkpoint(const std::string& path, Model& model, const RunConfig& cfg);

struct LoadedCheckpoint {
    RunConfig cfg;
    Model model;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

std::string encode_base64(const Vector& values);
Vector decode_base64(const std::string& text);

}  // namespace fidgp
