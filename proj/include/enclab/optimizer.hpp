#pragma once

// Adaptive-moment optimizer with decoupled weight decay, plus the linear
// warmup/decay schedule.  Hyperparameter defaults: lr 5e-4, betas
// (0.9, 0.98), eps 1e-6, weight decay 1e-5, warmup fraction 0.06.

#include <cmath>
#include <vector>

#include "enclab/autodiff.hpp"
#include "enclab/errors.hpp"

namespace enclab {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-6;
    double weight_decay = 1e-5;
};

class AdamW {
public:
    AdamW(std::vector<DiffArray> params, AdamWConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const auto& p : params_) {
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        }
    }

    long step_count() const { return t_; }

    void zero_grad() {
        for (auto& p : params_) std::fill(p.grad().begin(), p.grad().end(), 0.0);
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& vals = params_[i].values();
            const auto& grads = params_[i].grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < vals.size(); ++j) {
                const double g = grads[j];
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                vals[j] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                 cfg_.weight_decay * vals[j]);
            }
        }
    }

private:
    std::vector<DiffArray> params_;
    AdamWConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

// Scales all grads so the global norm is at most max_norm; returns the
// norm before clipping.
inline double clip_grad_norm(std::vector<DiffArray>& params, double max_norm) {
    double total = 0.0;
    for (const auto& p : params)
        for (double g : p.grad()) total += g * g;
    const double norm = std::sqrt(total);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& p : params)
            for (double& g : p.grad()) g *= s;
    }
    return norm;
}

// lr(0) = 0, lr(warmup_end) = peak, lr(total) = 0, piecewise linear.
struct LinearWarmupDecay {
    long total_steps = 1;
    double warmup_fraction = 0.06;
    double peak = 5e-4;

    double lr_at(long step) const {
        if (total_steps <= 0) throw ConfigError("schedule: total_steps must be positive");
        const double t = static_cast<double>(step);
        const double total = static_cast<double>(total_steps);
        const double warm = warmup_fraction * total;
        if (t <= 0.0) return 0.0;
        if (t >= total) return 0.0;
        if (t < warm) return peak * t / warm;
        return peak * (total - t) / (total - warm);
    }
};

}  // namespace enclab
