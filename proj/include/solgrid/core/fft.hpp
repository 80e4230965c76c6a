#pragma once

#include <vector>

#include "solgrid/core/util.hpp"

namespace solgrid {

/// In-place radix-2 complex FFT. sign = -1 forward, +1 inverse (inverse is
/// scaled by 1/n). Length must be a power of two.
inline void fft(std::vector<cplx>& a, int sign) {
    const std::size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) throw NumericsError("fft: length must be a power of two");
    // bit reversal
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * pi / double(len);
        const cplx wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cplx w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const cplx u = a[i + k];
                const cplx v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (sign > 0)
        for (auto& x : a) x /= double(n);
}

inline std::vector<cplx> fft_forward(std::vector<cplx> a) { fft(a, -1); return a; }
inline std::vector<cplx> fft_inverse(std::vector<cplx> a) { fft(a, +1); return a; }

/// Signed FFT wavenumber index for bin k of an n-point transform.
inline int fft_wave_index(std::size_t k, std::size_t n) {
    return (k <= n / 2) ? int(k) : int(k) - int(n);
}

/// Spectral derivative of a 2*pi-periodic sampled function (order = 1 or 2).
inline std::vector<double> spectral_derivative_periodic(const std::vector<double>& f, int order) {
    const std::size_t n = f.size();
    std::vector<cplx> a(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = f[i];
    fft(a, -1);
    for (std::size_t k = 0; k < n; ++k) {
        const double m = double(fft_wave_index(k, n));
        cplx factor = (order == 1) ? cplx(0.0, m) : cplx(-m * m, 0.0);
        if (2 * k == n && order == 1) factor = 0.0;  // drop the unmatched Nyquist mode
        a[k] *= factor;
    }
    fft(a, +1);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i].real();
    return out;
}

/// Truncated Fourier series of a smooth 2*pi-periodic real function; cheap to
/// evaluate many times (the samples' spectrum decays fast for smooth data).
class FourierSeries {
public:
    FourierSeries() = default;
    explicit FourierSeries(const std::vector<double>& samples, std::size_t max_modes = 32,
                           double drop_tol = 1e-14) {
        const std::size_t n = samples.size();
        std::vector<cplx> a(n);
        for (std::size_t i = 0; i < n; ++i) a[i] = samples[i];
        fft(a, -1);
        c0_ = a[0].real() / double(n);
        double peak = 0.0;
        for (std::size_t k = 1; k <= std::min(max_modes, n / 2 - 1); ++k) peak = std::max(peak, std::abs(a[k]));
        for (std::size_t k = 1; k <= std::min(max_modes, n / 2 - 1); ++k) {
            const cplx ck = 2.0 * a[k] / double(n);
            if (std::abs(a[k]) >= drop_tol * std::max(peak, 1.0)) modes_.push_back({int(k), ck});
        }
    }

    double operator()(double phi) const {
        double s = c0_;
        for (const auto& [k, c] : modes_)
            s += c.real() * std::cos(k * phi) - c.imag() * std::sin(k * phi);
        return s;
    }

    double derivative(double phi, int order = 1) const {
        double s = 0.0;
        for (const auto& [k, c] : modes_) {
            const double kk = double(k);
            if (order == 1)
                s += -kk * c.real() * std::sin(kk * phi) - kk * c.imag() * std::cos(kk * phi);
            else
                s += -kk * kk * (c.real() * std::cos(kk * phi) - c.imag() * std::sin(kk * phi));
        }
        return s;
    }

private:
    double c0_ = 0.0;
    std::vector<std::pair<int, cplx>> modes_;
};

/// Fourier interpolation of a 2*pi-periodic real sample set at arbitrary phi.
class PeriodicInterpolant {
public:
    explicit PeriodicInterpolant(const std::vector<double>& samples) {
        const std::size_t n = samples.size();
        std::vector<cplx> a(n);
        for (std::size_t i = 0; i < n; ++i) a[i] = samples[i];
        fft(a, -1);
        coef_.resize(n);
        for (std::size_t k = 0; k < n; ++k) coef_[k] = a[k] / double(n);
        n_ = n;
    }

    double operator()(double phi) const {
        // sum over modes -n/2..n/2-1; Nyquist handled as cosine
        cplx s = coef_[0];
        for (std::size_t k = 1; k < n_ / 2; ++k) {
            const cplx e(std::cos(k * phi), std::sin(k * phi));
            s += coef_[k] * e + coef_[n_ - k] * std::conj(e);
        }
        if (n_ % 2 == 0 && n_ >= 2) s += coef_[n_ / 2] * std::cos(double(n_ / 2) * phi);
        return s.real();
    }

private:
    std::size_t n_ = 0;
    std::vector<cplx> coef_;
};

}  // namespace solgrid
