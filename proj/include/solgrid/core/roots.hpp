#pragma once

#include <functional>

#include "solgrid/core/util.hpp"

namespace solgrid {

/// Brent's method on a bracketing interval [a, b] with f(a) f(b) <= 0.
inline double brent(const std::function<double(double)>& f, double a, double b, double tol = 1e-13,
                    int max_iter = 200) {
    double fa = f(a), fb = f(b);
    if (fa == 0.0) return a;
    if (fb == 0.0) return b;
    if (fa * fb > 0.0) throw NumericsError("brent: root not bracketed");
    double c = a, fc = fa, d = b - a, e = d;
    for (int it = 0; it < max_iter; ++it) {
        if (std::abs(fc) < std::abs(fb)) {
            a = b; b = c; c = a;
            fa = fb; fb = fc; fc = fa;
        }
        const double tol1 = 2.0 * 1e-16 * std::abs(b) + 0.5 * tol;
        const double xm = 0.5 * (c - b);
        if (std::abs(xm) <= tol1 || fb == 0.0) return b;
        if (std::abs(e) >= tol1 && std::abs(fa) > std::abs(fb)) {
            double p, q, r;
            const double s = fb / fa;
            if (a == c) {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                q = fa / fc;
                r = fb / fc;
                p = s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0));
                q = (q - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if (p > 0.0) q = -q;
            p = std::abs(p);
            if (2.0 * p < std::min(3.0 * xm * q - std::abs(tol1 * q), std::abs(e * q))) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += (std::abs(d) > tol1) ? d : (xm > 0.0 ? tol1 : -tol1);
        fb = f(b);
        if ((fb > 0.0) == (fc > 0.0)) { c = a; fc = fa; d = b - a; e = d; }
    }
    return b;
}

/// Scan [lo, hi] on n subintervals, Brent-refine every sign change.
inline std::vector<double> bracketed_roots(const std::function<double(double)>& f, double lo, double hi, int n,
                                           double tol = 1e-13) {
    std::vector<double> roots;
    double x_prev = lo, f_prev = f(lo);
    for (int i = 1; i <= n; ++i) {
        const double x = lo + (hi - lo) * double(i) / double(n);
        const double fx = f(x);
        if (f_prev == 0.0) roots.push_back(x_prev);
        else if (f_prev * fx < 0.0) roots.push_back(brent(f, x_prev, x, tol));
        x_prev = x;
        f_prev = fx;
    }
    return roots;
}

/// Scalar Newton with finite-difference derivative and bisection fallback
/// against an optional bracket.
inline double newton_1d(const std::function<double(double)>& f, double x0, double tol = 1e-13, int max_iter = 60) {
    double x = x0;
    for (int it = 0; it < max_iter; ++it) {
        const double fx = f(x);
        if (std::abs(fx) < tol) return x;
        const double h = 1e-7 * (1.0 + std::abs(x));
        const double d = (f(x + h) - f(x - h)) / (2.0 * h);
        if (d == 0.0) throw NumericsError("newton_1d: zero derivative");
        x -= fx / d;
    }
    return x;
}

}  // namespace solgrid
