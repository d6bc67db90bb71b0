#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "tailor/tensor.hpp"

namespace tailor {

// Central finite-difference gradient checking. The probe evaluates the
// scalar objective twice per coordinate and never touches the analytic
// backward path, so it stays an independent oracle for it.

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t coords_checked = 0;
    bool passed = false;
    double tolerance = 0.0;
};

namespace gradcheck {

inline constexpr double kStep = 1e-5;       // central difference half-step
inline constexpr double kAbsFloor = 1e-7;   // below this, absolute error decides

// Relative error with an absolute floor: tiny gradients are compared
// absolutely so noise around zero does not blow up the ratio.
inline double rel_err(double analytic, double numeric, double abs_floor = kAbsFloor) {
    const double diff = std::fabs(analytic - numeric);
    const double scale = std::max(std::fabs(analytic), std::fabs(numeric));
    if (scale < abs_floor) return diff;  // treated as absolute
    return diff / scale;
}

// Checks d(objective)/d(input[i]) for the listed coordinates.
// `objective(x)` must be a pure function of the probed tensor.
inline GradCheckResult check_input(
    const std::string& name, const Tensor& input, const std::vector<std::size_t>& coords,
    const std::function<double(const Tensor&)>& objective, const Tensor& analytic_grad,
    double tolerance, double step = kStep) {
    GradCheckResult res;
    res.name = name;
    res.tolerance = tolerance;
    for (std::size_t i : coords) {
        const double x0 = input.at(i);
        const double fp = objective(input.with_value(i, x0 + step));
        const double fm = objective(input.with_value(i, x0 - step));
        const double numeric = (fp - fm) / (2.0 * step);
        const double analytic = analytic_grad.at(i);
        const double err = rel_err(analytic, numeric);
        const double abs_err = std::fabs(analytic - numeric);
        if (err > res.max_rel_err) res.max_rel_err = err;
        if (abs_err > res.max_abs_err) res.max_abs_err = abs_err;
        ++res.coords_checked;
    }
    res.passed = res.max_rel_err < tolerance;
    return res;
}

inline std::vector<std::size_t> all_coords(const Tensor& t) {
    std::vector<std::size_t> c(t.numel());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = i;
    return c;
}

// Evenly strided subset of coordinates, at most `count` of them.
inline std::vector<std::size_t> spread_coords(std::size_t numel, std::size_t count) {
    std::vector<std::size_t> c;
    if (numel == 0) return c;
    const std::size_t n = std::min(numel, count);
    for (std::size_t i = 0; i < n; ++i) c.push_back(i * numel / n);
    return c;
}

}  // namespace gradcheck
}  // namespace tailor
