#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace kcd {

using Rng = std::mt19937_64;

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a(std::string_view text, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Child seed for a named purpose. Distinct tags give independent streams,
/// identical (master, tag) pairs always give the same seed.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) noexcept {
    return splitmix64(fnv1a(tag, splitmix64(master)));
}

inline Rng make_rng(std::uint64_t master, std::string_view tag) {
    return Rng(derive_seed(master, tag));
}

/// Deterministic unit-norm pseudo-random vector keyed by (key, seed).
/// Stands in for encoder output wherever real embeddings are unavailable.
inline Eigen::VectorXd synthetic_embedding(std::string_view key, int dim, std::uint64_t seed) {
    Rng rng(derive_seed(seed, key));
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v[i] = normal(rng);
    double norm = v.norm();
    if (norm == 0.0) {
        v.setZero();
        v[0] = 1.0;
        return v;
    }
    return v / norm;
}

/// Mean of per-token synthetic embeddings, re-normalized. Sentences that
/// share words get correlated vectors, which mimics a mean-pooled encoder.
inline Eigen::VectorXd synthetic_sentence_embedding(std::string_view sentence, int dim, std::uint64_t seed) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim);
    std::size_t pos = 0;
    int tokens = 0;
    while (pos < sentence.size()) {
        while (pos < sentence.size() && sentence[pos] == ' ') ++pos;
        std::size_t end = pos;
        while (end < sentence.size() && sentence[end] != ' ') ++end;
        if (end > pos) {
            acc += synthetic_embedding(sentence.substr(pos, end - pos), dim, seed);
            ++tokens;
        }
        pos = end;
    }
    if (tokens == 0) return synthetic_embedding("", dim, seed);
    double norm = acc.norm();
    return norm > 0.0 ? Eigen::VectorXd(acc / norm) : synthetic_embedding(sentence, dim, seed);
}

template <class T>
void shuffle_in_place(std::vector<T>& items, Rng& rng) {
    std::shuffle(items.begin(), items.end(), rng);
}

} // namespace kcd
