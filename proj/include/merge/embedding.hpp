#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "merge/error.hpp"
#include "merge/text.hpp"

namespace merge {

// Fixed-dimension real vector for face/image similarity. Values are float32
// end to end; the on-disk format is little-endian IEEE-754 and in-memory
// vectors round-trip bit-exactly.
struct EmbeddingVector {
    std::vector<float> values;

    EmbeddingVector() = default;
    explicit EmbeddingVector(std::vector<float> v) : values(std::move(v)) {}

    size_t dim() const { return values.size(); }

    bool finite() const {
        for (float v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double norm() const {
        double s = 0.0;
        for (float v : values) s += static_cast<double>(v) * v;
        return std::sqrt(s);
    }

    void validate(size_t expected_dim, std::string_view what) const {
        if (values.empty() || (expected_dim != 0 && values.size() != expected_dim))
            throw Error(ErrorKind::dimension_mismatch,
                        std::string(what) + ": embedding dim " + std::to_string(values.size()) +
                            " does not match configured dim " + std::to_string(expected_dim));
        if (!finite())
            throw Error(ErrorKind::invalid_argument,
                        std::string(what) + ": embedding contains NaN or infinity");
    }

    bool operator==(const EmbeddingVector& o) const { return values == o.values; }
};

// cosine(a, b) = dot / (|a||b|) in [-1, 1], clamped against rounding
// overshoot. Zero-norm inputs are undefined and rejected.
inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() == 0 || a.dim() != b.dim())
        throw Error(ErrorKind::dimension_mismatch,
                    "cosine: dims " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        double x = a.values[i], y = b.values[i];
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na == 0.0 || nb == 0.0)
        throw Error(ErrorKind::zero_norm, "cosine: zero-norm input");
    double c = dot / (std::sqrt(na) * std::sqrt(nb));
    if (c > 1.0) c = 1.0;
    if (c < -1.0) c = -1.0;
    return c;
}

namespace detail {
// splitmix64: cheap, high-quality 64-bit mixer used to expand a content hash
// into a float stream.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
}  // namespace detail

// Deterministic pseudo-random unit vector seeded by a 64-bit hash. Same seed
// and dim always produce the same bytes, across process restarts.
inline EmbeddingVector seeded_unit_vector(uint64_t seed, size_t dim) {
    std::vector<float> v(dim);
    uint64_t state = seed;
    double norm_sq = 0.0;
    for (size_t i = 0; i < dim; ++i) {
        // two uniforms -> one gaussian via Box-Muller keeps directions uniform on the sphere
        double u1 = (static_cast<double>(detail::splitmix64(state) >> 11) + 1.0) / 9007199254740993.0;
        double u2 = static_cast<double>(detail::splitmix64(state) >> 11) / 9007199254740992.0;
        double g = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
        v[i] = static_cast<float>(g);
        norm_sq += g * g;
    }
    double norm = std::sqrt(norm_sq);
    if (norm == 0.0) {
        v[0] = 1.0f;  // astronomically unlikely, but keep the unit-norm contract
        norm = 1.0;
    }
    for (auto& x : v) x = static_cast<float>(x / norm);
    return EmbeddingVector(std::move(v));
}

inline EmbeddingVector seeded_unit_vector(std::string_view tag, size_t dim) {
    return seeded_unit_vector(text::fnv1a64(tag), dim);
}

}  // namespace merge
