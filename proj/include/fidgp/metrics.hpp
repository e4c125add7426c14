#pragma once

#include <cstddef>
#include <vector>

#include "fidgp/matrix.hpp"

namespace fidgp {

/// Mean Gaussian negative log-likelihood of targets under N(mean_i, std_i^2).
double nll_gaussian(const Vector& means, const Vector& stds, const Vector& targets);

/// Mean negative log-probability of the true labels.
double nll_categorical(const Matrix& probs, const std::vector<std::size_t>& labels);

/// Expected calibration error over equal-width confidence bins.
double ece(const Matrix& probs, const std::vector<std::size_t>& labels, std::size_t n_bins = 15);

double rmse(const Vector& predictions, const Vector& targets);

}  // namespace fidgp
