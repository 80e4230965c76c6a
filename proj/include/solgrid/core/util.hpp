#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace solgrid {

using cplx = std::complex<double>;

inline constexpr double pi = 3.14159265358979323846264338327950288;

/// Generic failure of an iterative numerical procedure. Module-specific
/// error types derive from this so callers can catch per contract.
struct NumericsError : std::runtime_error {
    explicit NumericsError(const std::string& what) : std::runtime_error(what) {}
};

inline double sqr(double x) { return x * x; }

inline double wrap_2pi(double x) {
    double y = std::fmod(x, 2.0 * pi);
    if (y < 0.0) y += 2.0 * pi;
    return y;
}

/// Signed wrap to (-pi, pi].
inline double wrap_pi(double x) {
    double y = wrap_2pi(x);
    if (y > pi) y -= 2.0 * pi;
    return y;
}

inline double norm_inf(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

inline double norm_2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

template <class T>
inline void axpy(double a, const std::vector<T>& x, std::vector<T>& y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

/// Least-squares slope of y against x (both same length >= 2).
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) { mx += x[i]; my += y[i]; }
    mx /= double(n); my /= double(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0) throw NumericsError("fit_slope: degenerate abscissae");
    return sxy / sxx;
}

}  // namespace solgrid
