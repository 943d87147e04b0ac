#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "sllab/errors.hpp"

namespace sllab {

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

/// Deterministic random stream. The engine (mt19937_64) is fully specified by
/// the standard, and all transforms (Box-Muller normal, Marsaglia-Tsang gamma)
/// are implemented here, so an identical (seed, algorithm, draw sequence)
/// reproduces identical samples bit-exactly. Never share one stream across
/// concurrent consumers; derive per-purpose child streams instead.
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed, std::string tag = "root")
        : engine_(seed), seed_(seed), tag_(std::move(tag)) {}

    /// Child stream with seed = parent seed XOR fnv1a64(purpose).
    RngStream derive(std::string_view purpose) const {
        return RngStream(seed_ ^ fnv1a64(purpose), std::string(purpose));
    }

    /// Uniform draw in the open interval (0,1), 53-bit resolution.
    double uniform() {
        for (;;) {
            double u = static_cast<double>(next() >> 11) * 0x1.0p-53;
            if (u > 0.0) return u;
        }
    }

    /// Standard normal via Box-Muller (two uniforms per draw, no caching).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    std::vector<double> normals(std::size_t n) {
        std::vector<double> out(n);
        for (auto& v : out) v = normal();
        return out;
    }

    std::vector<double> uniforms(std::size_t n) {
        std::vector<double> out(n);
        for (auto& v : out) v = uniform();
        return out;
    }

    /// Gamma(shape, 1) via Marsaglia-Tsang; shape < 1 uses the alpha+1 boost.
    double gamma(double shape) {
        require(shape > 0.0, "gamma sampler: shape must be positive");
        if (shape < 1.0) {
            double u = uniform();
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double t = 1.0 + c * x;
            if (t <= 0.0) continue;
            double v = t * t * t;
            double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    /// Uniform index in [0, n). Rejection sampling, no modulo bias.
    std::size_t uniform_index(std::size_t n) {
        require(n > 0, "uniform_index: n must be positive");
        const std::uint64_t span = n;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        for (;;) {
            std::uint64_t r = next();
            if (r < limit) return static_cast<std::size_t>(r % span);
        }
    }

    // Fisher-Yates; std::shuffle's draw pattern is implementation-defined,
    // this one is part of the determinism contract.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t draws() const { return draws_; }
    const std::string& tag() const { return tag_; }

  private:
    static constexpr double kPi = 3.14159265358979323846;

    std::uint64_t next() {
        ++draws_;
        return engine_();
    }

    std::mt19937_64 engine_;
    std::uint64_t seed_;
    std::string tag_;
    std::uint64_t draws_ = 0;
};

}  // namespace sllab
