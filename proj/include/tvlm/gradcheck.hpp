#pragma once

// Finite-difference verification of reverse-mode gradients. Runs in 64-bit;
// central differences with the caller's step size. Large inputs may be
// spot-checked on a seeded coordinate sample instead of every entry.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tvlm/error.hpp"
#include "tvlm/rng.hpp"
#include "tvlm/tensor.hpp"

namespace tvlm {

struct GradCheckEntry {
    std::size_t input_index = 0;
    std::int64_t flat_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    // rel_err = |analytic - numeric| / max(|analytic|, |numeric|, floor)
    std::vector<double> max_rel_err_per_input;
    std::vector<GradCheckEntry> violations;
    double max_rel_err = 0.0;
    double tol = 0.0;
    bool ok() const { return max_rel_err <= tol; }
};

using GradCheckFn = std::function<TensorT<double>(const std::vector<TensorT<double>>&)>;

// `samples_per_input` = 0 checks every coordinate.
inline GradCheckReport grad_check(const GradCheckFn& f, std::vector<TensorT<double>>& inputs,
                                  double step, double tol, std::int64_t samples_per_input = 0,
                                  std::uint64_t sample_seed = 0, double floor = 1e-3) {
    for (auto& in : inputs) in.set_requires_grad(true);
    for (auto& in : inputs) in.zero_grad();

    TensorT<double> out = f(inputs);
    if (out.numel() != 1) throw IncompatError("grad_check expects a scalar-valued function");
    out.backward();

    std::vector<std::vector<double>> analytic;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].has_grad()) {
            throw IncompatError("grad_check: no gradient path from output to input " +
                                std::to_string(i) +
                                " (function is not differentiable along the tested path)");
        }
        analytic.emplace_back(inputs[i].grad(), inputs[i].grad() + inputs[i].numel());
    }

    GradCheckReport report;
    report.tol = tol;
    Rng rng(sample_seed == 0 ? 0x9d2c5680u : sample_seed);

    NoGradGuard ng;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const std::int64_t n = inputs[i].numel();
        std::vector<std::int64_t> coords;
        if (samples_per_input <= 0 || samples_per_input >= n) {
            coords.resize(static_cast<std::size_t>(n));
            for (std::int64_t k = 0; k < n; ++k) coords[static_cast<std::size_t>(k)] = k;
        } else {
            for (std::int64_t k = 0; k < samples_per_input; ++k)
                coords.push_back(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n))));
        }
        double worst = 0.0;
        for (const std::int64_t c : coords) {
            double* slot = inputs[i].mutable_data() + c;
            const double saved = *slot;
            *slot = saved + step;
            const double up = f(inputs).item();
            *slot = saved - step;
            const double down = f(inputs).item();
            *slot = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[i][static_cast<std::size_t>(c)];
            const double denom = std::max({std::abs(a), std::abs(numeric), floor});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > worst) worst = rel;
            if (rel > tol) report.violations.push_back({i, c, a, numeric, rel});
        }
        report.max_rel_err_per_input.push_back(worst);
        report.max_rel_err = std::max(report.max_rel_err, worst);
    }
    return report;
}

}  // namespace tvlm
