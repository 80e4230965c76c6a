#pragma once

#include <functional>
#include <vector>

#include "solgrid/core/util.hpp"

namespace solgrid {

/// Trapezoid rule on a uniform grid (spectrally accurate for integrands that
/// decay to zero at both ends).
template <class T>
inline T trapezoid(const std::vector<T>& f, double dx) {
    if (f.size() < 2) return T{};
    T s = T(0.5) * (f.front() + f.back());
    for (std::size_t i = 1; i + 1 < f.size(); ++i) s += f[i];
    return s * dx;
}

/// Composite Simpson rule; the sample count may be even, in which case the
/// last interval falls back to trapezoid.
template <class T>
inline T simpson(const std::vector<T>& f, double dx) {
    const std::size_t n = f.size();
    if (n < 3) return trapezoid(f, dx);
    const std::size_t m = (n % 2 == 1) ? n : n - 1;
    T s = f[0] + f[m - 1];
    for (std::size_t i = 1; i + 1 < m; ++i) s += f[i] * ((i % 2 == 1) ? T(4) : T(2));
    T total = s * (dx / 3.0);
    if (n % 2 == 0) total += T(0.5) * dx * (f[n - 2] + f[n - 1]);
    return total;
}

/// Cumulative trapezoid from index 0; out[0] = 0.
inline std::vector<double> cumulative_trapezoid(const std::vector<double>& f, double dx) {
    std::vector<double> out(f.size(), 0.0);
    for (std::size_t i = 1; i < f.size(); ++i)
        out[i] = out[i - 1] + 0.5 * dx * (f[i - 1] + f[i]);
    return out;
}

/// Adaptive Simpson on a function handle.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol = 1e-12,
                               int depth = 30) {
    std::function<double(double, double, double, double, double, double, int)> rec =
        [&](double lo, double hi, double flo, double fmid, double fhi, double whole, int d) -> double {
        const double m = 0.5 * (lo + hi);
        const double lm = 0.5 * (lo + m), rm = 0.5 * (m + hi);
        const double flm = f(lm), frm = f(rm);
        const double left = (m - lo) / 6.0 * (flo + 4.0 * flm + fmid);
        const double right = (hi - m) / 6.0 * (fmid + 4.0 * frm + fhi);
        if (d <= 0 || std::abs(left + right - whole) < 15.0 * tol)
            return left + right + (left + right - whole) / 15.0;
        return rec(lo, m, flo, flm, fmid, left, d - 1) + rec(m, hi, fmid, frm, fhi, right, d - 1);
    };
    const double m = 0.5 * (a + b);
    const double fa = f(a), fm = f(m), fb = f(b);
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return rec(a, b, fa, fm, fb, whole, depth);
}

}  // namespace solgrid
