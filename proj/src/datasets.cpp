#include "fidgp/datasets.hpp"

#include <cmath>

#include "fidgp/errors.hpp"
#include "fidgp/rng.hpp"

namespace fidgp {

double regression1d_true_f(double x) { return std::cos(4.0 * x + 0.8); }

Regression1DDataset gen_regression1d(std::size_t n_per_cluster, std::uint64_t seed,
                                     std::size_t grid_points) {
    if (n_per_cluster == 0) throw EmptyInput("gen_regression1d: n_per_cluster must be >= 1");
    Rng rng(seed);
    Regression1DDataset ds;
    ds.x_train.reserve(2 * n_per_cluster);
    ds.y_train.reserve(2 * n_per_cluster);
    for (std::size_t i = 0; i < n_per_cluster; ++i) {
        ds.x_train.push_back(rng.uniform(0.5, 0.8));
    }
    for (std::size_t i = 0; i < n_per_cluster; ++i) {
        ds.x_train.push_back(rng.uniform(1.2, 1.6));
    }
    for (double x : ds.x_train) {
        ds.y_train.push_back(regression1d_true_f(x) + 0.1 * rng.normal());
    }
    ds.x_test.reserve(grid_points);
    ds.f_test.reserve(grid_points);
    for (std::size_t i = 0; i < grid_points; ++i) {
        const double x = grid_points <= 1
                             ? 0.0
                             : 2.2 * static_cast<double>(i) / static_cast<double>(grid_points - 1);
        ds.x_test.push_back(x);
        ds.f_test.push_back(regression1d_true_f(x));
    }
    return ds;
}

ToyOodDataset gen_toy_ood(std::uint64_t seed, std::size_t n_train, std::size_t n_test,
                          std::size_t n_ood) {
    Rng rng(seed);
    ToyOodDataset ds;
    const auto fill_blobs = [&](Matrix& x, std::vector<std::size_t>& labels, std::size_t n) {
        x = Matrix(n, 2);
        labels.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t cls = i % 2;  // exact 50/50 balance
            const double cx = cls == 0 ? -1.5 : 1.5;
            x(i, 0) = cx + 0.5 * rng.normal();
            x(i, 1) = 0.5 * rng.normal();
            labels[i] = cls;
        }
    };
    fill_blobs(ds.id_train_x, ds.id_train_labels, n_train);
    fill_blobs(ds.id_test_x, ds.id_test_labels, n_test);

    ds.ood_x = Matrix(n_ood, 2);
    for (std::size_t i = 0; i < n_ood; ++i) {
        const double theta = rng.uniform(0.0, 6.283185307179586);
        const double r = 6.0 + 0.2 * rng.uniform(-1.0, 1.0);
        ds.ood_x(i, 0) = r * std::cos(theta);
        ds.ood_x(i, 1) = r * std::sin(theta);
    }
    return ds;
}

}  // namespace fidgp
