#include "fidgp/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "fidgp/errors.hpp"

namespace fidgp {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void validate_probs(const Matrix& probs) {
    for (std::size_t i = 0; i < probs.rows; ++i) {
        double row_sum = 0.0;
        for (std::size_t j = 0; j < probs.cols; ++j) {
            const double p = probs(i, j);
            if (!(p >= -1e-9 && p <= 1.0 + 1e-9)) {
                throw InvalidProbability("probability out of [0,1] at row " + std::to_string(i));
            }
            row_sum += p;
        }
        if (std::abs(row_sum - 1.0) > 1e-6) {
            throw InvalidProbability("row " + std::to_string(i) + " sums to " +
                                     std::to_string(row_sum));
        }
    }
}
}  // namespace

double nll_gaussian(const Vector& means, const Vector& stds, const Vector& targets) {
    if (means.size() != targets.size() || stds.size() != targets.size() || targets.empty()) {
        throw EmptyInput("nll_gaussian: size mismatch or empty input");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double s = stds[i];
        if (s <= 0.0) throw InvalidProbability("nll_gaussian: non-positive std");
        const double z = (targets[i] - means[i]) / s;
        acc += 0.5 * (kLog2Pi + z * z) + std::log(s);
    }
    return acc / static_cast<double>(targets.size());
}

double nll_categorical(const Matrix& probs, const std::vector<std::size_t>& labels) {
    if (probs.rows != labels.size() || labels.empty()) {
        throw EmptyInput("nll_categorical: size mismatch or empty input");
    }
    validate_probs(probs);
    double acc = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double p = std::max(probs(i, labels[i]), 1e-300);
        acc -= std::log(p);
    }
    return acc / static_cast<double>(labels.size());
}

double ece(const Matrix& probs, const std::vector<std::size_t>& labels, std::size_t n_bins) {
    if (probs.rows != labels.size() || labels.empty() || n_bins == 0) {
        throw EmptyInput("ece: size mismatch or empty input");
    }
    validate_probs(probs);
    Vector bin_conf(n_bins, 0.0), bin_acc(n_bins, 0.0), bin_count(n_bins, 0.0);
    for (std::size_t i = 0; i < probs.rows; ++i) {
        std::size_t arg = 0;
        for (std::size_t j = 1; j < probs.cols; ++j) {
            if (probs(i, j) > probs(i, arg)) arg = j;
        }
        const double conf = probs(i, arg);
        std::size_t bin = static_cast<std::size_t>(conf * static_cast<double>(n_bins));
        if (bin >= n_bins) bin = n_bins - 1;
        bin_conf[bin] += conf;
        bin_acc[bin] += (arg == labels[i]) ? 1.0 : 0.0;
        bin_count[bin] += 1.0;
    }
    double out = 0.0;
    const double n = static_cast<double>(probs.rows);
    for (std::size_t b = 0; b < n_bins; ++b) {
        if (bin_count[b] == 0.0) continue;
        out += (bin_count[b] / n) * std::abs(bin_acc[b] / bin_count[b] - bin_conf[b] / bin_count[b]);
    }
    return out;
}

double rmse(const Vector& predictions, const Vector& targets) {
    if (predictions.size() != targets.size() || targets.empty()) {
        throw EmptyInput("rmse: size mismatch or empty input");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double d = predictions[i] - targets[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(targets.size()));
}

}  // namespace fidgp
