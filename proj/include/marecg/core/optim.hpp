#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "marecg/core/params.hpp"

namespace marecg::num {

// AdamW with decoupled weight decay. Moments live in the ParamStore entries;
// `step` counts applied updates only (skipped steps leave it untouched).
struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

struct OptimState {
    std::uint64_t step = 0;
};

// Returns false (state and params untouched) when any gradient entry is
// non-finite; the trainer counts these as skipped steps.
template <class S>
bool adamw_step(ParamStore<S>& params, OptimState& state, double lr, const AdamConfig& cfg) {
    if (lr <= 0) throw std::invalid_argument("adamw_step: lr must be positive");
    for (const auto& e : params) {
        if (!e.grad.all_finite()) return false;
    }
    std::uint64_t t = state.step + 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (auto& e : params) {
        for (std::size_t i = 0; i < e.value.v.size(); ++i) {
            double p = static_cast<double>(e.value.v[i]);
            double g = static_cast<double>(e.grad.v[i]);
            // Decoupled decay, applied before the moment update.
            p -= lr * cfg.weight_decay * p;
            double m = cfg.beta1 * static_cast<double>(e.moment1.v[i]) + (1.0 - cfg.beta1) * g;
            double v = cfg.beta2 * static_cast<double>(e.moment2.v[i]) + (1.0 - cfg.beta2) * g * g;
            e.moment1.v[i] = static_cast<S>(m);
            e.moment2.v[i] = static_cast<S>(v);
            double mhat = m / bc1;
            double vhat = v / bc2;
            p -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
            e.value.v[i] = static_cast<S>(p);
        }
    }
    state.step = t;
    return true;
}

// Linear warmup from 0 to peak over warmup_epochs, then cosine from peak to
// floor at total_epochs. Accepts fractional epochs.
struct LrSchedule {
    double peak_lr = 1e-4;
    double floor_lr = 1e-6;
    double warmup_epochs = 10.0;
    double total_epochs = 100.0;

    double at(double epoch) const {
        if (epoch < 0 || epoch > total_epochs)
            throw std::invalid_argument("lr_at: epoch outside schedule");
        if (epoch <= warmup_epochs) {
            return warmup_epochs > 0 ? peak_lr * (epoch / warmup_epochs) : peak_lr;
        }
        double span = total_epochs - warmup_epochs;
        double x = (epoch - warmup_epochs) / span;
        return floor_lr + 0.5 * (peak_lr - floor_lr) * (1.0 + std::cos(3.141592653589793 * x));
    }
};

struct ClipResult {
    bool applied = false;   // false => non-finite gradients, step must be skipped
    double norm = 0.0;      // pre-clip global L2 norm
    bool clipped = false;   // true when scaling happened
};

// Global-norm clip over every parameter gradient. Non-finite entries gate the
// whole accumulated step off rather than erroring.
template <class S>
ClipResult clip_and_gate(ParamStore<S>& params, double max_norm = 1.0) {
    ClipResult r;
    double ss = 0.0;
    for (const auto& e : params) {
        for (S g : e.grad.v) {
            double gd = static_cast<double>(g);
            if (!std::isfinite(gd)) {
                r.applied = false;
                return r;
            }
            ss += gd * gd;
        }
    }
    r.norm = std::sqrt(ss);
    r.applied = true;
    if (r.norm > max_norm) {
        r.clipped = true;
        S s = static_cast<S>(max_norm / r.norm);
        for (auto& e : params) {
            for (auto& g : e.grad.v) g *= s;
        }
    }
    return r;
}

// theta_ema <- m * theta_ema + (1 - m) * theta, matched entry by entry.
template <class S>
void ema_update(ParamStore<S>& ema, const ParamStore<S>& live, double momentum) {
    if (ema.size() != live.size()) throw std::invalid_argument("ema_update: store size mismatch");
    for (std::size_t i = 0; i < ema.size(); ++i) {
        auto& t = ema.at(i);
        const auto& s = live.at(i);
        for (std::size_t j = 0; j < t.value.v.size(); ++j) {
            t.value.v[j] = static_cast<S>(momentum * static_cast<double>(t.value.v[j]) +
                                          (1.0 - momentum) * static_cast<double>(s.value.v[j]));
        }
    }
}

}  // namespace marecg::num
