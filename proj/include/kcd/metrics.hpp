#pragma once

#include <span>
#include <string>
#include <vector>

#include "kcd/error.hpp"

namespace kcd {

/// counts[truth][predicted].
struct ConfusionMatrix {
    int classes = 0;
    std::vector<std::vector<long>> counts;

    long total() const {
        long n = 0;
        for (const auto& row : counts)
            for (long c : row) n += c;
        return n;
    }
};

inline ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, int classes) {
    if (truth.size() != predicted.size()) throw ValidationError("confusion_matrix: label and prediction counts differ");
    if (truth.empty()) throw ValidationError("confusion_matrix: empty prediction set");
    ConfusionMatrix m{classes, std::vector<std::vector<long>>(static_cast<std::size_t>(classes), std::vector<long>(static_cast<std::size_t>(classes), 0))};
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= classes || predicted[i] < 0 || predicted[i] >= classes)
            throw ValidationError("confusion_matrix: label out of range");
        ++m.counts[truth[i]][predicted[i]];
    }
    return m;
}

inline double accuracy(const ConfusionMatrix& m) {
    long hit = 0;
    for (int c = 0; c < m.classes; ++c) hit += m.counts[c][c];
    return static_cast<double>(hit) / static_cast<double>(m.total());
}

/// F1 of one class; 0 when the class is never predicted and never present.
inline double f1_score(const ConfusionMatrix& m, int c) {
    long tp = m.counts[c][c], fp = 0, fn = 0;
    for (int k = 0; k < m.classes; ++k) {
        if (k == c) continue;
        fp += m.counts[k][c];
        fn += m.counts[c][k];
    }
    long denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

/// Unweighted mean of per-class F1.
inline double macro_f1(const ConfusionMatrix& m) {
    double s = 0.0;
    for (int c = 0; c < m.classes; ++c) s += f1_score(m, c);
    return s / m.classes;
}

struct Metrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    ConfusionMatrix confusion;
};

inline Metrics compute_metrics(std::span<const int> truth, std::span<const int> predicted, int classes) {
    ConfusionMatrix m = confusion_matrix(truth, predicted, classes);
    return {accuracy(m), macro_f1(m), std::move(m)};
}

} // namespace kcd
