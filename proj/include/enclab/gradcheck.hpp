#pragma once

// Central finite-difference validation of analytic gradients.
//
// The loss builder must be deterministic: it is re-evaluated many times
// with individually perturbed parameters.  Comparison is element-wise
// relative error max(|a−n| / max(|a|, |n|, 1e−8)).

#include <cmath>
#include <functional>
#include <vector>

#include "enclab/autodiff.hpp"
#include "enclab/errors.hpp"

namespace enclab {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

// `build_loss` runs a fresh forward pass and returns the scalar loss.
// `params` are leaves of `g`; every element of every param is checked.
inline GradCheckReport grad_check(Graph& g, const std::function<DiffArray()>& build_loss,
                                  const std::vector<DiffArray>& params, double h = 1e-4) {
    if (h <= 0.0) throw ValueError("grad_check: h must be positive");

    auto eval = [&]() -> double {
        g.reset();
        DiffArray loss = build_loss();
        double v = loss.value();
        if (!std::isfinite(v)) throw ValueError("grad_check: loss is not finite");
        return v;
    };

    // Analytic pass.
    g.zero_grad();
    g.reset();
    DiffArray loss = build_loss();
    if (!std::isfinite(loss.value())) throw ValueError("grad_check: loss is not finite");
    g.backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(p.grad());

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        DiffArray p = params[pi];
        auto& vals = p.values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            vals[i] = orig + h;
            const double fp = eval();
            vals[i] = orig - h;
            const double fm = eval();
            vals[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[pi][i];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            if (rel > report.max_rel_err) report.max_rel_err = rel;
            ++report.checked;
        }
    }
    g.reset();
    return report;
}

}  // namespace enclab
