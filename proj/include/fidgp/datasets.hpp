#pragma once

#include <cstddef>
#include <cstdint>

#include "fidgp/matrix.hpp"

namespace fidgp {

/// Two-cluster 1-D regression data: x1 ~ U[0.5, 0.8], x2 ~ U[1.2, 1.6],
/// y ~ N(cos(4x + 0.8), 0.01), plus a uniform noiseless test grid.
struct Regression1DDataset {
    Vector x_train;
    Vector y_train;
    Vector x_test;   // grid over [0, 2.2]
    Vector f_test;   // cos(4x + 0.8)
};

Regression1DDataset gen_regression1d(std::size_t n_per_cluster, std::uint64_t seed,
                                     std::size_t grid_points = 200);

double regression1d_true_f(double x);

/// Two Gaussian blobs (2-class ID data) and a ring of OoD points.
struct ToyOodDataset {
    Matrix id_train_x;
    std::vector<std::size_t> id_train_labels;
    Matrix id_test_x;
    std::vector<std::size_t> id_test_labels;
    Matrix ood_x;
};

ToyOodDataset gen_toy_ood(std::uint64_t seed, std::size_t n_train = 500, std::size_t n_test = 500,
                          std::size_t n_ood = 500);

}  // namespace fidgp
