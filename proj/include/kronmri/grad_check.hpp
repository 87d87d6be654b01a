#pragma once

#include <functional>

#include "kronmri/tape.hpp"

namespace kronmri {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    bool passed = false;
};

/// Scalar objective evaluated on a fresh tape; it must bind the checked
/// parameters with tape.param() so their gradients can be read back.
using Objective = std::function<Var<double>(Tape<double>&)>;

/// Compares reverse-mode gradients with central differences
/// (f(θ+h·e) − f(θ−h·e)) / 2h, coordinate by coordinate. The relative error
/// denominator is max(|analytic|, |numeric|, 1e-8).
inline GradCheckReport grad_check(const Objective& f, const std::vector<Tensor<double>*>& params, double h,
                                  double tol) {
    std::vector<Tensor<double>> analytic;
    {
        Tape<double> tape;
        Var<double> loss = f(tape);
        tape.backward(loss);
        for (const Tensor<double>* p : params) {
            auto g = tape.grad_of(*p);
            analytic.push_back(g ? *g : Tensor<double>(p->shape()));
        }
    }
    auto eval = [&] {
        Tape<double> tape;
        const double v = f(tape).value().item();
        if (!std::isfinite(v)) throw NumericError("grad_check: objective evaluated to a non-finite value");
        return v;
    };
    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<double>& p = *params[pi];
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double saved = p[i];
            p[i] = saved + h;
            const double up = eval();
            p[i] = saved - h;
            const double down = eval();
            p[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[pi][i];
            if (std::isnan(a) || std::isnan(numeric)) throw NumericError("grad_check: NaN encountered");
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = pi;
                report.worst_index = i;
            }
            ++report.coordinates;
        }
    }
    report.passed = report.max_rel_error < tol;
    return report;
}

}  // namespace kronmri
