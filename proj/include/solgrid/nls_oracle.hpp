#pragma once

#include <cmath>

#include "solgrid/model.hpp"

namespace solgrid {

/// Closed-form soliton family of the cubic Ginzburg-Landau equation near the
/// nonlinear Schroedinger limit. For small B > 0 and w with B > 2w/(1-w^2),
/// the parameter map below makes
///     U(x) = d1^{-1} sech(x/d2)^{1+iw}
/// an exact localized solution of
///     (1+i/B) U'' - (1+i delta) U + (i+rho)|U|^2 U = 0.
/// The map is obtained by matching the rescaled equation
///     U'' - (1+iw)^2 U + (1+iw)(2+iw)|U|^2 U = 0
/// term by term; the same matching fixes rho and d1 (the coefficients must
/// reproduce (1+iw)(2+iw) = (2-w^2) + 3iw, which pins the 2-w^2 combination).
struct NlsOracle {
    double B = 0.1;
    double w = 0.02;

    void require_admissible() const {
        if (!(B > 0.0) || !(B * (1.0 - w * w) > 2.0 * w))
            throw std::invalid_argument("NlsOracle: need B > 2w/(1-w^2) > 0");
    }

    double beta() const { return 1.0 / B; }
    double d2() const { return std::sqrt(1.0 - w * w - 2.0 * w / B); }
    double d1() const { return std::sqrt((B * (1.0 - w * w) - 2.0 * w) / (2.0 - w * w + 3.0 * w * B)); }
    double rho() const { return (B * (2.0 - w * w) - 3.0 * w) / (2.0 - w * w + 3.0 * w * B); }
    double delta() const { return (1.0 - w * w + 2.0 * w * B) / (B * (1.0 - w * w) - 2.0 * w); }

    CglModelParams model() const {
        require_admissible();
        CglModelParams m;
        m.kind = Nonlinearity::cubic;
        m.beta = beta();
        m.rho = rho();
        m.delta = delta();
        return m;
    }

    // Tail law U ~ r e^{(-alpha + i omega)|x|}.
    double alpha() const { return 1.0 / d2(); }
    double omega() const { return -w / d2(); }

    static double ln_cosh(double y) {
        const double a = std::abs(y);
        return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
    }

    /// sech(y)^{1+iw} evaluated through the stable log form.
    cplx sech_pow(double y) const {
        const cplx e = cplx(1.0, w) * (-ln_cosh(y));
        return std::exp(e);
    }

    cplx profile(double x) const { return sech_pow(x / d2()) / d1(); }

    cplx profile_scaled(double y) const { return sech_pow(y); }

    static double Gamma(double y) { return 1.0 / std::cosh(y); }
    static double Gamma_prime(double y) { return -std::tanh(y) / std::cosh(y); }

    /// First-order odd correction in the adjoint zero mode psi1 = i Gamma' + S
    /// of the rescaled equation, solving
    ///   S'' - S + 2 G^2 S = -w (2 - 3G^2 + 4G^2 ln G) G' + 4B G^2 G'.
    double S(double y) const {
        const double G = Gamma(y), Gp = Gamma_prime(y);
        return -w * (2.0 * y * G + 2.0 * Gp + Gp * ln_cosh(y)) - B * Gp;
    }

    /// First-order even correction in psi2 = Gamma + i Q, solving
    ///   Q'' - Q + 6 G^2 Q = w (2G - 9G^3 - 4G^3 ln G) + 4B G^3.
    double Q(double y) const {
        const double G = Gamma(y), Gp = Gamma_prime(y);
        return w * (2.0 * y * Gp - G + G * ln_cosh(y)) + B * G;
    }

    cplx psi1_raw_scaled(double y) const { return cplx(0.0, 1.0) * Gamma_prime(y) + S(y); }
    cplx psi2_raw_scaled(double y) const { return cplx(Gamma(y), 0.0) + cplx(0.0, 1.0) * Q(y); }

    /// Tail coefficients of the kernel normalized per (phi_i, psi_j) = delta_ij
    /// with phi1 = dU/dx and phi2 = iU, to first order in (w, B).
    cplx s_coeff() const {
        return 3.0 * d1() / B * cplx(-B - w * (2.0 - std::log(2.0)), 1.0);
    }
    cplx q_coeff() const {
        return d1() / (d2() * (2.0 * w - B)) * cplx(1.0, B - w * (1.0 + std::log(2.0)));
    }
    cplx r_coeff() const {
        // sech(y)^{1+iw} ~ 2^{1+iw} e^{-(1+iw) y}
        return std::exp(cplx(1.0, w) * std::log(2.0)) / d1();
    }

    /// Oracle seed for the profile solver on [-X, X].
    ComplexSamples seed(double half_width, double dx) const {
        ComplexSamples g;
        g.x0 = -half_width;
        g.dx = dx;
        const std::size_t n = std::size_t(std::round(2.0 * half_width / dx)) + 1;
        g.values.resize(n);
        for (std::size_t i = 0; i < n; ++i) g.values[i] = profile(g.x(i));
        return g;
    }
};

}  // namespace solgrid
