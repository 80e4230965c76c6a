#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "solgrid/core/quadrature.hpp"
#include "solgrid/core/util.hpp"

namespace solgrid {

enum class Nonlinearity { cubic, quintic, generic };

/// Parameters of the Ginzburg-Landau model
///   du/dt = (1+i beta) u_xx - (1+i delta) u - u H(|u|^2) + mu G(u),
/// where the cubic model has H(z) = -(i+rho) z and the quintic model
/// H(z) = -(i+rho) z + (eps1 + i eps2) z^2. The generic branch takes an
/// explicit coefficient list H(z) = sum_{k>=1} c_k z^k.
struct CglModelParams {
    double beta = 0.0;
    double delta = 0.0;
    double rho = 0.0;
    double eps1 = 0.0;
    double eps2 = 0.0;
    double mu = 0.0;
    Nonlinearity kind = Nonlinearity::cubic;
    std::vector<cplx> h_coeffs;  // generic only; h_coeffs[k] multiplies z^{k+1}

    cplx H(double z) const {
        switch (kind) {
            case Nonlinearity::cubic:
                return -cplx(rho, 1.0) * z;
            case Nonlinearity::quintic:
                return -cplx(rho, 1.0) * z + cplx(eps1, eps2) * z * z;
            case Nonlinearity::generic: {
                cplx s = 0.0;
                double zk = z;
                for (const cplx& c : h_coeffs) { s += c * zk; zk *= z; }
                return s;
            }
        }
        return 0.0;
    }

    cplx H_prime(double z) const {
        switch (kind) {
            case Nonlinearity::cubic:
                return -cplx(rho, 1.0);
            case Nonlinearity::quintic:
                return -cplx(rho, 1.0) + 2.0 * cplx(eps1, eps2) * z;
            case Nonlinearity::generic: {
                cplx s = 0.0;
                double zk = 1.0;
                for (std::size_t k = 0; k < h_coeffs.size(); ++k) {
                    s += double(k + 1) * h_coeffs[k] * zk;
                    zk *= z;
                }
                return s;
            }
        }
        return 0.0;
    }

    /// Quintic dissipativity requires eps1 > 0; mu never enters the profile
    /// solve (profiles are computed at mu = 0).
    void validate() const {
        if (kind == Nonlinearity::quintic && eps1 <= 0.0)
            throw std::invalid_argument("CglModelParams: quintic model requires eps1 > 0");
    }
};

/// Symmetry-breaking term G(u). Constant and low-order polynomial forms cover
/// the supported perturbations; `custom` takes a user handle.
struct BreakingTerm {
    enum class Kind { one, identity, custom };
    Kind kind = Kind::one;
    std::function<cplx(cplx)> fn;

    static BreakingTerm one() { return {Kind::one, {}}; }
    static BreakingTerm identity() { return {Kind::identity, {}}; }
    static BreakingTerm custom(std::function<cplx(cplx)> f) { return {Kind::custom, std::move(f)}; }

    cplx operator()(cplx u) const {
        switch (kind) {
            case Kind::one: return cplx(1.0, 0.0);
            case Kind::identity: return u;
            case Kind::custom: return fn(u);
        }
        return 0.0;
    }
};

/// Uniformly sampled complex-valued function of one real variable.
struct ComplexSamples {
    double x0 = 0.0;
    double dx = 1.0;
    std::vector<cplx> values;

    std::size_t size() const { return values.size(); }
    double x(std::size_t i) const { return x0 + dx * double(i); }
    double x_end() const { return x(values.empty() ? 0 : values.size() - 1); }

    void require_valid() const {
        if (values.size() < 3 || dx <= 0.0) throw std::invalid_argument("ComplexSamples: need >= 3 uniform samples");
    }

    double peak_abs() const {
        double m = 0.0;
        for (const cplx& v : values) m = std::max(m, std::abs(v));
        return m;
    }

    /// Cubic (Catmull-Rom) interpolation; zero outside the sampled domain.
    cplx interp(double xq) const {
        const double s = (xq - x0) / dx;
        if (s < 0.0 || s > double(values.size() - 1)) return 0.0;
        const long i = std::min<long>(long(values.size()) - 2, std::max<long>(0, long(s)));
        const double t = s - double(i);
        const cplx p0 = values[std::max<long>(0, i - 1)];
        const cplx p1 = values[i];
        const cplx p2 = values[i + 1];
        const cplx p3 = values[std::min<long>(long(values.size()) - 1, i + 2)];
        const cplx a = 2.0 * p1;
        const cplx b = p2 - p0;
        const cplx c = 2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3;
        const cplx d = -p0 + 3.0 * p1 - 3.0 * p2 + p3;
        return 0.5 * (a + b * t + c * t * t + d * t * t * t);
    }

    /// 4th-order centered first derivative, one-sided at the ends.
    ComplexSamples derivative() const {
        require_valid();
        const std::size_t n = values.size();
        ComplexSamples d{x0, dx, std::vector<cplx>(n)};
        auto v = [&](long i) -> cplx {
            if (i < 0 || i >= long(n)) return 0.0;  // decaying-function convention
            return values[i];
        };
        for (long i = 0; i < long(n); ++i)
            d.values[i] = (v(i - 2) - 8.0 * v(i - 1) + 8.0 * v(i + 1) - v(i + 2)) / (12.0 * dx);
        return d;
    }

    ComplexSamples reversed() const {
        ComplexSamples r = *this;
        std::reverse(r.values.begin(), r.values.end());
        r.x0 = -x_end();
        return r;
    }
};

/// Re integral f g dx by trapezoid; this bilinear (not sesquilinear) pairing
/// is the one the adjoint kernel is normalized against.
inline double pairing(const ComplexSamples& f, const ComplexSamples& g) {
    std::vector<double> prod(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) prod[i] = (f.values[i] * g.values[i]).real();
    return trapezoid(prod, f.dx);
}

}  // namespace solgrid
