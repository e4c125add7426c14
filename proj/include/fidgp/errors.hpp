#pragma once

#include <stdexcept>
#include <string>

namespace fidgp {

struct NotSymmetric : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NotPositiveDefinite : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SingularGram : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidScale : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NotScalar : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TapeConsumed : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NonFiniteActivation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NonFiniteLoss : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmptyInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmptyKeyLayers : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidProbability : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace fidgp
