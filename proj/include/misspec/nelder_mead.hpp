#pragma once

// Derivative-free simplex minimizer. Infeasible points are expected to
// evaluate to +inf; the simplex then contracts away from them.

#include "misspec/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace misspec {

struct NelderMeadOptions {
    double reflection = 1.0;
    double expansion = 2.0;
    double contraction = 0.5;
    double shrink = 0.5;
    double x_tolerance = 1e-6;   // simplex diameter (max-norm)
    double f_tolerance = 1e-10;  // spread of vertex values
    int max_iter = 2000;
};

struct NelderMeadResult {
    Vector x;
    double value = std::numeric_limits<double>::infinity();
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

/// Minimizes `f` from `x0` with an axis-aligned initial simplex of edge `step[i]`.
inline NelderMeadResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& x0,
                                    const Vector& step, const NelderMeadOptions& opts = {}) {
    const Index n = x0.size();
    if (n == 0) throw ConfigError("nelder_mead: empty parameter vector");
    if (step.size() != n) throw ConfigError("nelder_mead: step size does not match dimension");

    NelderMeadResult res;
    auto eval = [&](const Vector& x) {
        ++res.evaluations;
        const double v = f(x);
        return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
    };

    std::vector<Vector> pts(static_cast<std::size_t>(n + 1), x0);
    std::vector<double> vals(static_cast<std::size_t>(n + 1));
    for (Index i = 0; i < n; ++i) pts[static_cast<std::size_t>(i + 1)][i] += step[i];
    for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = eval(pts[i]);
    if (std::all_of(vals.begin(), vals.end(), [](double v) { return !std::isfinite(v); }))
        throw DomainError("nelder_mead: no admissible point in the initial simplex");

    std::vector<std::size_t> order(pts.size());
    auto sort_simplex = [&] {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
        std::vector<Vector> p2;
        std::vector<double> v2;
        for (std::size_t k : order) {
            p2.push_back(pts[k]);
            v2.push_back(vals[k]);
        }
        pts = std::move(p2);
        vals = std::move(v2);
    };

    for (res.iterations = 0; res.iterations < opts.max_iter; ++res.iterations) {
        sort_simplex();
        double diameter = 0.0;
        for (std::size_t i = 1; i < pts.size(); ++i)
            diameter = std::max(diameter, (pts[i] - pts[0]).cwiseAbs().maxCoeff());
        const double spread = vals.back() - vals.front();
        if (diameter < opts.x_tolerance || (std::isfinite(spread) && spread < opts.f_tolerance)) {
            res.converged = true;
            break;
        }

        Vector centroid = Vector::Zero(n);
        for (std::size_t i = 0; i + 1 < pts.size(); ++i) centroid += pts[i];
        centroid /= static_cast<double>(n);
        const Vector& worst = pts.back();

        const Vector xr = centroid + opts.reflection * (centroid - worst);
        const double fr = eval(xr);
        if (fr < vals.front()) {
            const Vector xe = centroid + opts.expansion * (xr - centroid);
            const double fe = eval(xe);
            if (fe < fr) {
                pts.back() = xe;
                vals.back() = fe;
            } else {
                pts.back() = xr;
                vals.back() = fr;
            }
            continue;
        }
        if (fr < vals[vals.size() - 2]) {
            pts.back() = xr;
            vals.back() = fr;
            continue;
        }
        // Contraction, outside when the reflected point beats the worst.
        const bool outside = fr < vals.back();
        const Vector xc = outside ? Vector(centroid + opts.contraction * (xr - centroid))
                                  : Vector(centroid + opts.contraction * (worst - centroid));
        const double fc = eval(xc);
        if (fc < (outside ? fr : vals.back())) {
            pts.back() = xc;
            vals.back() = fc;
            continue;
        }
        for (std::size_t i = 1; i < pts.size(); ++i) {
            pts[i] = pts[0] + opts.shrink * (pts[i] - pts[0]);
            vals[i] = eval(pts[i]);
        }
    }
    sort_simplex();
    res.x = pts.front();
    res.value = vals.front();
    return res;
}

}  // namespace misspec
