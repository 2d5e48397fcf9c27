#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "kcd/tensor.hpp"

namespace kcd {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment estimates, one pair per parameter, zero at step 0.
struct AdamState {
    std::vector<Matrix> first;
    std::vector<Matrix> second;
    long step = 0;
};

/// One bias-corrected Adam update over `params` using their current grads.
inline void adam_step(std::span<Parameter* const> params, AdamState& state, const AdamOptions& opt) {
    if (!(opt.lr > 0.0)) throw ConfigError("adam_step: learning rate must be positive");
    if (state.first.empty()) {
        state.first.reserve(params.size());
        state.second.reserve(params.size());
        for (const Parameter* p : params) {
            state.first.push_back(Matrix::Zero(p->rows(), p->cols()));
            state.second.push_back(Matrix::Zero(p->rows(), p->cols()));
        }
    }
    if (state.first.size() != params.size()) throw ConfigError("adam_step: parameter list changed between steps");
    ++state.step;
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
    const double step_size = opt.lr / c1;
    const double sqrt_c2 = std::sqrt(c2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        Matrix& m = state.first[i];
        Matrix& v = state.second[i];
        m = opt.beta1 * m + (1.0 - opt.beta1) * p.grad;
        v = opt.beta2 * v + (1.0 - opt.beta2) * p.grad.cwiseAbs2();
        p.value.array() -= step_size * m.array() / (v.array().sqrt() / sqrt_c2 + opt.eps);
    }
}

/// Multiplies the learning rate by `factor` once the monitored value has
/// failed to improve for more than `patience` consecutive epochs.
/// Improvement means falling below best·(1 − rel_threshold).
class ReduceLrOnPlateau {
public:
    ReduceLrOnPlateau(double lr, int patience, double factor, double rel_threshold = 1e-4, double min_lr = 0.0)
        : lr_(lr), patience_(patience), factor_(factor), threshold_(rel_threshold), min_lr_(min_lr) {}

    /// Returns the learning rate to use for the next epoch.
    double step(double metric) {
        if (metric < best_ * (1.0 - threshold_) || best_ == std::numeric_limits<double>::infinity()) {
            best_ = metric;
            bad_epochs_ = 0;
        } else {
            ++bad_epochs_;
        }
        if (bad_epochs_ > patience_) {
            lr_ = std::max(lr_ * factor_, min_lr_);
            bad_epochs_ = 0;
        }
        return lr_;
    }

    double lr() const { return lr_; }

private:
    double lr_;
    int patience_;
    double factor_;
    double threshold_;
    double min_lr_;
    double best_ = std::numeric_limits<double>::infinity();
    int bad_epochs_ = 0;
};

/// Tracks the best validation loss; signals a stop after `patience`
/// epochs without strict improvement.
class EarlyStopping {
public:
    explicit EarlyStopping(int patience) : patience_(patience) {}

    /// Returns true when `metric` is a new best.
    bool update(double metric, int epoch) {
        if (metric < best_) {
            best_ = metric;
            best_epoch_ = epoch;
            return true;
        }
        return false;
    }

    bool should_stop(int epoch) const { return best_epoch_ >= 0 && epoch - best_epoch_ >= patience_; }
    double best() const { return best_; }
    int best_epoch() const { return best_epoch_; }

private:
    int patience_;
    double best_ = std::numeric_limits<double>::infinity();
    int best_epoch_ = -1;
};

} // namespace kcd
