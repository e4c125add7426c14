#pragma once

#include <cstdint>
#include <random>

#include "fidgp/matrix.hpp"

namespace fidgp {

/// Seeded random stream with a pinned Box-Muller normal sampler so that
/// draw sequences are reproducible independent of the standard library's
/// distribution internals. Every stochastic routine takes one of these
/// explicitly; identical seeds give identical streams.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() {
        // in (0, 1); never returns exactly 0 so log() stays finite
        const std::uint64_t bits = engine_();
        return (static_cast<double>(bits >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    Vector normal_vector(std::size_t n) {
        Vector v(n);
        for (double& x : v) x = normal();
        return v;
    }

    Matrix normal_matrix(std::size_t r, std::size_t c) {
        Matrix m(r, c);
        for (double& x : m.data) x = normal();
        return m;
    }

    Vector unit_vector(std::size_t n) {
        Vector v = normal_vector(n);
        const double nrm = norm2(v);
        if (nrm > 0) {
            for (double& x : v) x /= nrm;
        } else if (n > 0) {
            v[0] = 1.0;
        }
        return v;
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Independent child stream, deterministic in (parent state, tag).
    Rng split(std::uint64_t tag) {
        return Rng(engine_() ^ (tag * 0x9e3779b97f4a7c15ull + 0x632be59bd9b4e019ull));
    }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

  private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace fidgp
