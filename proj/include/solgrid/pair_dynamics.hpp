#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "solgrid/core/dense.hpp"
#include "solgrid/core/fft.hpp"
#include "solgrid/core/roots.hpp"
#include "solgrid/core/rk45.hpp"
#include "solgrid/soliton_profile.hpp"

namespace solgrid::pairdyn {

struct ReducedModelBreakdown : NumericsError { using NumericsError::NumericsError; };
struct NoRoot : NumericsError { using NumericsError::NumericsError; };
struct DegenerateRoot : NumericsError { using NumericsError::NumericsError; };
struct SingularChart : NumericsError { using NumericsError::NumericsError; };

/// Parameters of the two-soliton interaction system. The functional F and its
/// derivatives come either from a computed perturbation functional or from
/// the basic-case cosine closed form.
struct PairParams {
    double a = 1.0, theta1 = 0.0;
    double b = 1.0, theta2 = 0.0;
    double alpha = 1.0, omega = 0.1;
    double nu = 0.0;      // mu e^{2 alpha L}
    double Omega = 0.0;   // (delta - delta0) e^{2 alpha L}
    double v = 0.0;       // frame drift in the pair-center equation
    double phi_star = 0.0;
    double c = 0.0;       // 2 F'(phi* + pi/4)
    double gamma = 0.0;
    double R_min = 0.0;   // 0 = auto (2 / alpha)
    FourierSeries F;

    double theta() const { return theta2 - theta1; }
    double r_min() const { return R_min > 0.0 ? R_min : 2.0 / alpha; }
    double Fval(double phi) const { return F(phi); }
    double Fp(double phi) const { return F.derivative(phi, 1); }
    double Fpp(double phi) const { return F.derivative(phi, 2); }
    double Fpp_sum() const { return Fpp(phi_star + pi / 4.0) + Fpp(phi_star - pi / 4.0); }
    double Fsum_star() const { return Fval(phi_star + pi / 4.0) + Fval(phi_star - pi / 4.0); }

    /// Constructor from measured soliton data; nu, Omega, v supplied by the
    /// caller (they carry the e^{2 alpha L} scaling of the lattice setup).
    static PairParams from_profile_data(const TailAsymptotics& tail, const PerturbationData& pert,
                                        double nu, double Omega, double v = 0.0) {
        PairParams p;
        p.a = tail.a;
        p.theta1 = tail.theta1;
        p.b = tail.b;
        p.theta2 = tail.theta2;
        p.alpha = tail.alpha;
        p.omega = tail.omega;
        p.nu = nu;
        p.Omega = Omega;
        p.v = v;
        p.phi_star = pert.phi_star;
        p.c = pert.c;
        p.gamma = pert.gamma;
        p.F = FourierSeries(pert.F_samples);
        return p;
    }

    /// Basic-case functional F = ctilde cos(phi - zeta), for which phi* = zeta,
    /// c = -ctilde sqrt(2) and gamma = 0.
    static PairParams with_cosine_forcing(double a, double theta1, double b, double theta2, double alpha,
                                          double omega, double ctilde, double zeta, double nu, double Omega,
                                          double v = 0.0) {
        PairParams p;
        p.a = a; p.theta1 = theta1; p.b = b; p.theta2 = theta2;
        p.alpha = alpha; p.omega = omega;
        p.nu = nu; p.Omega = Omega; p.v = v;
        p.phi_star = zeta;
        p.c = -ctilde * std::sqrt(2.0);
        p.gamma = 0.0;
        std::vector<double> samples(256);
        for (std::size_t i = 0; i < samples.size(); ++i)
            samples[i] = ctilde * std::cos(2.0 * pi * double(i) / double(samples.size()) - zeta);
        p.F = FourierSeries(samples);
        return p;
    }
};

struct PairState {
    double R = 0.0, Phi = 0.0, Psi = 0.0, p = 0.0;
    std::vector<double> vec() const { return {R, Phi, Psi, p}; }
    static PairState from(const std::vector<double>& v) { return {v[0], v[1], v[2], v[3]}; }
};

/// Right-hand side of the two-soliton system: internal variables (R, Phi, Psi)
/// plus the pair-center drift p. This is the exact pair reduction of the
/// tail-interaction lattice equations, validated sign-by-sign against direct
/// simulation of the field equation (the R, Psi and p interaction terms carry
/// the opposite sign from some published displays of this system).
inline PairState pair_rhs(const PairState& s, const PairParams& q) {
    const double e = std::exp(-q.alpha * s.R);
    const double cPhi = std::cos(s.Phi), sPhi = std::sin(s.Phi);
    const double Fp_ = q.Fval(s.Psi + 0.5 * s.Phi);
    const double Fm_ = q.Fval(s.Psi - 0.5 * s.Phi);
    PairState d;
    d.R = -q.a * e * std::sin(q.omega * s.R + q.theta1) * cPhi;
    d.Phi = q.b * e * std::cos(q.omega * s.R + q.theta2) * sPhi + q.nu * (Fp_ - Fm_);
    d.Psi = -0.5 * q.b * e * std::sin(q.omega * s.R + q.theta2) * cPhi + 0.5 * q.nu * (Fp_ + Fm_) - q.Omega;
    d.p = q.v - 0.5 * q.a * e * std::cos(q.omega * s.R + q.theta1) * sPhi;
    return d;
}

inline OdeRhs pair_ode(const PairParams& q) {
    return [q](double, const std::vector<double>& y, std::vector<double>& dy) {
        const PairState d = pair_rhs(PairState::from(y), q);
        dy = d.vec();
    };
}

/// Finite-difference Jacobian of the internal (R, Phi, Psi) system.
inline Mat internal_jacobian_fd(const PairState& s, const PairParams& q, double h = 1e-7) {
    Mat j(3, 3);
    for (int c = 0; c < 3; ++c) {
        PairState sp = s, sm = s;
        double* fields_p[3] = {&sp.R, &sp.Phi, &sp.Psi};
        double* fields_m[3] = {&sm.R, &sm.Phi, &sm.Psi};
        *fields_p[c] += h;
        *fields_m[c] -= h;
        const PairState dp = pair_rhs(sp, q), dm = pair_rhs(sm, q);
        j(0, c) = (dp.R - dm.R) / (2 * h);
        j(1, c) = (dp.Phi - dm.Phi) / (2 * h);
        j(2, c) = (dp.Psi - dm.Psi) / (2 * h);
    }
    return j;
}

/// Equilibrium family data at the degenerate (triple zero) point.
struct TripleZeroPoint {
    double Z_star = 0.0;
    double nu_star = 0.0;
    double Omega_star = 0.0;  // Omega making (pi/2, phi*, R0) an equilibrium
    PairState equilibrium;
    double rho1 = 0.0, rho2 = 0.0;
    double rho = 0.0;     // quadratic normal-form coefficient
    double Dprime = 0.0;  // d D / d nu at nu*
    double shf_margin = 0.0;  // |alpha cos(Z*-theta) + omega sin(Z*-theta)|
};

namespace detail {

/// Solve cos Z = -gamma (c nu / b) e^{alpha (Z - theta2) / omega} for Z on a
/// branch near Z_seed. For gamma = 0 the branches are exactly Z = pi/2 + k pi;
/// a measured gamma below the floor is snapped to that case, because the
/// e^{alpha R} factor amplifies gamma-noise beyond any usable bracket.
inline double solve_rn_for_Z(const PairParams& q, double nu, double Z_seed, double gamma_floor = 1e-9) {
    if (std::abs(q.gamma) <= gamma_floor)
        return 0.5 * pi + pi * std::round((Z_seed - 0.5 * pi) / pi);
    auto g = [&](double Z) {
        return std::cos(Z) + q.gamma * q.c * nu / q.b * std::exp(q.alpha * (Z - q.theta2) / q.omega);
    };
    double lo = Z_seed - 0.45 * pi, hi = Z_seed + 0.45 * pi;
    if (g(lo) * g(hi) > 0.0) throw NoRoot("solve_rn_for_Z: no bracket near the seed branch");
    return brent(g, lo, hi);
}

struct TzParts {
    double E, rho1, rho2, m32, D;
};

/// Entries of the equilibrium linearization
///   [ 0    rho1  0   ]
///   [ -rho2  0   c nu]
///   [ 0    m32   0   ]
/// and the triple-zero function D(nu) = c nu m32 - rho1 rho2 whose zero makes
/// all three eigenvalues vanish.
inline TzParts tz_parts(const PairParams& q, double nu, double Z) {
    TzParts t;
    t.E = std::exp(-q.alpha * (Z - q.theta2) / q.omega);
    t.rho1 = q.a * t.E * std::sin(Z - q.theta());
    t.rho2 = q.b * t.E * (q.alpha * std::cos(Z) + q.omega * std::sin(Z));
    t.m32 = 0.25 * q.c * nu + 0.5 * q.b * t.E * std::sin(Z);
    t.D = q.c * nu * t.m32 - t.rho1 * t.rho2;
    return t;
}

}  // namespace detail

/// The 3x3 linearization of the internal system at the (rn)-equilibrium,
/// assembled from the closed-form entries.
inline Mat triple_zero_matrix(double rho1, double rho2, double c_nu, double m32) {
    Mat m(3, 3);
    m(0, 1) = rho1;
    m(1, 0) = -rho2;
    m(1, 2) = c_nu;
    m(2, 1) = m32;
    return m;
}

struct TripleZeroOptions {
    double Z_branch = 0.0;  // 0 = auto: first branch with R in [r_lo, r_hi]
    double r_lo_factor = 1.0, r_hi_factor = 40.0;  // admissible R0 in units of 1/alpha
    double degenerate_rel_tol = 1e-8;  // |D'| threshold relative to the local D scale
};

/// All triple-zero candidates on one (rn)-branch. D(nu) restricted to the
/// branch is a near-quadratic in nu whose natural scale is b E0 / |c|, so the
/// gamma = 0 closed-form roots seed a Newton polish (which also absorbs the
/// Z(nu) dependence at gamma != 0).
inline std::vector<TripleZeroPoint> find_triple_zero_all(const PairParams& q,
                                                         const TripleZeroOptions& opt = {}) {
    double Z_seed = opt.Z_branch;
    if (Z_seed == 0.0) {
        // smallest admissible R0: interaction scales degrade exponentially
        // with R0, so the innermost branch is the numerically meaningful one
        const double r_lo = opt.r_lo_factor / q.alpha, r_hi = opt.r_hi_factor / q.alpha;
        double best_r = 1e300;
        for (int k = -200; k <= 200; ++k) {
            const double Z = 0.5 * pi + double(k) * pi;
            const double R0 = (Z - q.theta2) / q.omega;
            if (R0 >= r_lo && R0 <= r_hi && R0 < best_r) { best_r = R0; Z_seed = Z; }
        }
        if (best_r == 1e300) throw NoRoot("find_triple_zero: no admissible Z branch in the R window");
    }
    const double Z0 = detail::solve_rn_for_Z(q, 0.0, Z_seed);
    const auto p0 = detail::tz_parts(q, 0.0, Z0);

    // quadratic seeds: (c^2/4) nu^2 + (b/2) c E0 sin(Z0) nu - rho1 rho2 = 0
    const double Aq = 0.25 * q.c * q.c;
    const double Bq = 0.5 * q.b * q.c * p0.E * std::sin(Z0);
    const double Cq = -p0.rho1 * p0.rho2;
    const double disc = Bq * Bq - 4.0 * Aq * Cq;
    if (disc < 0.0)
        throw NoRoot("find_triple_zero: D(nu) has no real root on this branch (quadratic inequality fails)");
    std::vector<double> seeds = {(-Bq + std::sqrt(disc)) / (2.0 * Aq), (-Bq - std::sqrt(disc)) / (2.0 * Aq)};

    auto Dof = [&](double nu) {
        const double Z = detail::solve_rn_for_Z(q, nu, Z_seed);
        return detail::tz_parts(q, nu, Z).D;
    };

    std::vector<TripleZeroPoint> out;
    for (double nu_star : seeds) {
        if (nu_star == 0.0) continue;
        for (int it = 0; it < 50; ++it) {  // polish (no-op at gamma = 0)
            const double f = Dof(nu_star);
            const double h = 1e-7 * std::abs(nu_star);
            const double dp = (Dof(nu_star + h) - Dof(nu_star - h)) / (2.0 * h);
            if (dp == 0.0) break;
            const double step = f / dp;
            nu_star -= step;
            if (std::abs(step) < 1e-14 * std::abs(nu_star)) break;
        }
        const double h = 1e-6 * std::abs(nu_star);
        const double dp = (Dof(nu_star + h) - Dof(nu_star - h)) / (2.0 * h);
        const double d_scale = std::abs(Aq * nu_star * nu_star) + std::abs(Bq * nu_star) + std::abs(Cq);
        if (std::abs(dp * nu_star) <= opt.degenerate_rel_tol * d_scale) continue;

        TripleZeroPoint tz;
        tz.nu_star = nu_star;
        tz.Z_star = detail::solve_rn_for_Z(q, nu_star, Z_seed);
        const auto parts = detail::tz_parts(q, nu_star, tz.Z_star);
        tz.rho1 = parts.rho1;
        tz.rho2 = parts.rho2;
        tz.Dprime = dp;
        tz.rho = 0.25 * sqr(parts.rho1 * parts.rho2) * nu_star * q.Fpp_sum();
        tz.shf_margin = std::abs(q.alpha * std::cos(tz.Z_star - q.theta()) +
                                 q.omega * std::sin(tz.Z_star - q.theta()));
        tz.equilibrium.R = (tz.Z_star - q.theta2) / q.omega;
        tz.equilibrium.Phi = 0.5 * pi;
        tz.equilibrium.Psi = q.phi_star;
        tz.equilibrium.p = 0.0;
        tz.Omega_star = 0.5 * nu_star * q.Fsum_star();
        out.push_back(tz);
    }
    if (out.empty()) throw DegenerateRoot("find_triple_zero: every D root has |D'| below tolerance");
    std::sort(out.begin(), out.end(),
              [](const TripleZeroPoint& x, const TripleZeroPoint& y) { return std::abs(x.nu_star) > std::abs(y.nu_star); });
    return out;
}

/// Primary triple-zero point (largest |nu*| root of the first admissible branch).
inline TripleZeroPoint find_triple_zero(const PairParams& q, const TripleZeroOptions& opt = {}) {
    return find_triple_zero_all(q, opt).front();
}

/// Affine Jordan chart at the triple zero plus the singular scaling to the
/// third-order normal form variables (Y, Y', Y'').
struct NormalFormChart {
    Mat jordan;      // columns v1 v2 v3
    Mat jordan_inv;
    PairState base;  // chart origin (the equilibrium)
    double s = 0.1;
    double E = 0.0;
    double eps1_nf = 0.0, eps2_nf = 0.0;
    double rho = 0.0;
    double nu = 0.0, Omega = 0.0;  // parameter point realizing (eps1, eps2)

    std::vector<double> to_nf(const PairState& st) const {
        const std::vector<double> x = {st.R - base.R, st.Phi - base.Phi, st.Psi - base.Psi};
        const std::vector<double> y = jordan_inv.apply(x);
        const double k1 = s * s * s / eps1_nf, k2 = s * s / eps1_nf, k3 = s / eps1_nf;
        return {y[0] * k1, y[1] * k2, y[2] * k3};
    }

    PairState from_nf(const std::vector<double>& Y, double p = 0.0) const {
        const double k1 = eps1_nf / (s * s * s), k2 = eps1_nf / (s * s), k3 = eps1_nf / s;
        const std::vector<double> y = {Y[0] * k1, Y[1] * k2, Y[2] * k3};
        const std::vector<double> x = jordan.apply(y);
        return {base.R + x[0], base.Phi + x[1], base.Psi + x[2], p};
    }

    /// Slow time sigma = s tau.
    double sigma_of_tau(double tau) const { return s * tau; }
};

/// Build the chart at scaling parameter s and unfolding E: the parameters
/// (nu, Omega) are positioned so that eps2 = D(nu) = E s^2 and
/// eps1 = nu/2 [F(phi*+pi/4)+F(phi*-pi/4)] - Omega = -s^6 / rho.
inline NormalFormChart build_chart(const PairParams& q, const TripleZeroPoint& tz, double s, double E,
                                   const TripleZeroOptions& opt = {}) {
    NormalFormChart ch;
    ch.s = s;
    ch.E = E;
    ch.rho = tz.rho;
    ch.eps2_nf = E * s * s;
    ch.eps1_nf = -std::pow(s, 6) / tz.rho;

    // Newton in nu for D(nu) = eps2, seeded at nu*
    double Z_seed = tz.Z_star;
    auto Dof = [&](double nu) {
        const double Z = detail::solve_rn_for_Z(q, nu, Z_seed);
        return detail::tz_parts(q, nu, Z).D;
    };
    double nu = tz.nu_star;
    for (int it = 0; it < 60; ++it) {
        const double f = Dof(nu) - ch.eps2_nf;
        if (std::abs(f) < 1e-14 * (1.0 + std::abs(ch.eps2_nf))) break;
        const double h = 1e-7 * (1.0 + std::abs(nu));
        const double dp = (Dof(nu + h) - Dof(nu - h)) / (2.0 * h);
        nu -= f / dp;
    }
    ch.nu = nu;
    const double Z = detail::solve_rn_for_Z(q, nu, Z_seed);
    const auto parts = detail::tz_parts(q, nu, Z);

    PairParams qq = q;
    qq.nu = nu;
    ch.Omega = 0.5 * nu * q.Fsum_star() - ch.eps1_nf;

    ch.base.R = (Z - q.theta2) / q.omega;
    ch.base.Phi = 0.5 * pi;
    ch.base.Psi = q.phi_star;
    ch.base.p = 0.0;

    // Jordan triple: M v1 = 0, M v2 = v1 (at D = 0), M v3 = v2
    const double cnu = q.c * nu;
    Mat V(3, 3);
    V(0, 0) = cnu * parts.rho1;
    V(2, 0) = parts.rho1 * parts.rho2;
    V(1, 1) = cnu;
    V(2, 2) = 1.0;
    const double det = sqr(cnu) * parts.rho1;
    if (std::abs(det) < 1e-14) throw SingularChart("build_chart: Jordan basis is singular");
    Mat Vi(3, 3);
    Vi(0, 0) = 1.0 / (cnu * parts.rho1);
    Vi(1, 1) = 1.0 / cnu;
    Vi(2, 0) = -parts.rho2 / cnu;
    Vi(2, 2) = 1.0;
    ch.jordan = V;
    ch.jordan_inv = Vi;
    return ch;
}

/// Parameters realizing the chart: same tail data with (nu, Omega) moved to
/// the chart's unfolding point.
inline PairParams chart_params(const PairParams& q, const NormalFormChart& ch) {
    PairParams out = q;
    out.nu = ch.nu;
    out.Omega = ch.Omega;
    return out;
}

struct PairIntegrateOptions {
    double rtol = 1e-10;
    double atol = 1e-12;
    double h_max = 5.0;
};

/// Integrate the pair system with the R_min validity guard.
inline Trajectory integrate_pair(const PairState& y0, const PairParams& q, double T,
                                 const PairIntegrateOptions& opt = {}) {
    if (y0.R < q.r_min())
        throw ReducedModelBreakdown("integrate_pair: initial R below the weak-interaction floor");
    OdeOptions o;
    o.rtol = opt.rtol;
    o.atol = opt.atol;
    o.h_max = opt.h_max;
    Trajectory traj;
    OdeRhs rhs = [&q](double, const std::vector<double>& y, std::vector<double>& dy) {
        if (y[0] < q.r_min())
            throw ReducedModelBreakdown("integrate_pair: R crossed below the weak-interaction floor");
        const PairState d = pair_rhs(PairState::from(y), q);
        dy = d.vec();
    };
    Dopri5(rhs, o).integrate(0.0, y0.vec(), T, &traj);
    return traj;
}

/// Period-averaged drift (1/T) int g d tau along a stored loop, where g is the
/// p-equation right-hand side.
inline double averaged_drift(const Trajectory& loop, const PairParams& q, double t0, double t1) {
    const int n = 4000;
    std::vector<double> vals(n + 1);
    std::vector<double> y;
    const double h = (t1 - t0) / n;
    for (int i = 0; i <= n; ++i) {
        loop.eval(t0 + h * i, y);
        vals[i] = pair_rhs(PairState::from(y), q).p;
    }
    return trapezoid(vals, h) / (t1 - t0);
}

/// Distance on the internal cylinder: R is linear, Phi and Psi are angles.
inline double cylinder_distance(const std::vector<double>& y1, const std::vector<double>& y2) {
    return std::sqrt(sqr(y1[0] - y2[0]) + sqr(wrap_pi(y1[1] - y2[1])) + sqr(wrap_pi(y1[2] - y2[2])));
}

/// A periodic orbit of the internal (R, Phi, Psi) system with its center drift.
struct PairCycle {
    PairState x0;
    double period = 0.0;
    double drift = 0.0;          // period-averaged dp/dtau
    double closure_error = 0.0;  // |flow_T(x0) - x0|
    Trajectory orbit;            // one period, internal + p
};

namespace detail {

inline std::vector<double> flow_internal(const PairParams& q, const std::vector<double>& x0, double T,
                                         double rtol = 1e-12) {
    OdeRhs rhs = [&q](double, const std::vector<double>& y, std::vector<double>& dy) {
        const PairState d = pair_rhs({y[0], y[1], y[2], 0.0}, q);
        dy = {d.R, d.Phi, d.Psi};
    };
    OdeOptions o;
    o.rtol = rtol;
    o.atol = rtol * 1e-2;
    return integrate_to(rhs, 0.0, x0, T);
}

}  // namespace detail

/// Newton polish of a close-return seed into a periodic orbit: unknowns
/// (x0, T) with the phase fixed by freezing the coordinate of largest flow
/// component at the seed.
inline PairCycle polish_cycle(const PairParams& q, const PairState& seed, double period_seed,
                              double tol = 1e-9, int max_iter = 60) {
    std::vector<double> x = {seed.R, seed.Phi, seed.Psi};
    double T = period_seed;
    const PairState f0 = pair_rhs(seed, q);
    const double comp[3] = {std::abs(f0.R), std::abs(f0.Phi), std::abs(f0.Psi)};
    int anchor = 0;
    for (int i = 1; i < 3; ++i)
        if (comp[i] > comp[anchor]) anchor = i;

    auto gfun = [&](const std::vector<double>& xx, double TT) {
        auto xe = detail::flow_internal(q, xx, TT);
        // periodicity on the cylinder: the phases may wind
        return std::vector<double>{xe[0] - xx[0], wrap_pi(xe[1] - xx[1]), wrap_pi(xe[2] - xx[2])};
    };

    double err = 1e300;
    for (int it = 0; it < max_iter; ++it) {
        auto g = gfun(x, T);
        err = norm_2(g);
        if (err < tol) break;
        // FD Jacobian in the two non-anchor coordinates and T
        int free_idx[2], nf = 0;
        for (int i = 0; i < 3; ++i)
            if (i != anchor) free_idx[nf++] = i;
        Mat J(3, 3);
        const double h = 1e-7;
        for (int c = 0; c < 2; ++c) {
            auto xp = x;
            xp[free_idx[c]] += h;
            auto gp = gfun(xp, T);
            for (int r = 0; r < 3; ++r) J(r, c) = (gp[r] - g[r]) / h;
        }
        {
            auto xe = detail::flow_internal(q, x, T);
            const PairState fe = pair_rhs({xe[0], xe[1], xe[2], 0.0}, q);
            const double fT[3] = {fe.R, fe.Phi, fe.Psi};
            for (int r = 0; r < 3; ++r) J(r, 2) = fT[r];
        }
        std::vector<double> rhs = {-g[0], -g[1], -g[2]};
        auto d = solve_dense(J, rhs);
        // capped, backtracked update
        const double cap = 0.5;
        double scale = 1.0;
        for (int i = 0; i < 3; ++i) scale = std::min(scale, cap / std::max(cap, std::abs(d[i])));
        bool accepted = false;
        for (int back = 0; back < 10; ++back) {
            auto x_try = x;
            x_try[free_idx[0]] += scale * d[0];
            x_try[free_idx[1]] += scale * d[1];
            const double T_try = T + scale * d[2];
            if (T_try < 0.1) { scale *= 0.5; continue; }
            if (norm_2(gfun(x_try, T_try)) < err) {
                x = x_try;
                T = T_try;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if (!accepted) break;
    }
    if (err > tol) throw NonConvergence("polish_cycle: Newton stalled", {err});

    PairCycle cyc;
    cyc.x0 = {x[0], x[1], x[2], 0.0};
    cyc.period = T;
    cyc.closure_error = err;
    PairIntegrateOptions io;
    io.rtol = 1e-11;
    io.atol = 1e-13;
    cyc.orbit = integrate_pair(cyc.x0, q, T, io);
    cyc.drift = averaged_drift(cyc.orbit, q, 0.0, T);
    return cyc;
}

/// Close-return scan on a long internal-system trajectory: candidate cycles
/// where the state revisits itself within `eps` after at least `t_min_period`.
inline std::vector<std::pair<PairState, double>> close_return_seeds(const PairParams& q, const PairState& y0,
                                                                    double T, double t_min_period,
                                                                    double t_max_period, double eps,
                                                                    std::size_t max_seeds = 8) {
    if (y0.R < q.r_min())
        throw ReducedModelBreakdown("close_return_seeds: initial R below the weak-interaction floor");
    // keep whatever part of the run stays in the validity window
    Trajectory traj;
    {
        OdeOptions o;
        PairIntegrateOptions io;
        o.rtol = io.rtol;
        o.atol = io.atol;
        o.h_max = io.h_max;
        OdeRhs rhs = [&q](double, const std::vector<double>& y, std::vector<double>& dy) {
            if (y[0] < q.r_min())
                throw ReducedModelBreakdown("close_return_seeds: R crossed the floor");
            const PairState d = pair_rhs(PairState::from(y), q);
            dy = d.vec();
        };
        try {
            Dopri5(rhs, o).integrate(0.0, y0.vec(), T, &traj);
        } catch (const NumericsError&) {
        }
    }
    T = traj.t_end();
    const double dt = 0.05;
    std::vector<std::pair<PairState, double>> seeds;
    std::vector<double> yi, yj;
    for (double t = 5.0; t + t_min_period <= T && seeds.size() < max_seeds; t += 2.0) {
        traj.eval(t, yi);
        double best = 1e300, best_dt = 0.0;
        for (double s = t_min_period; s <= t_max_period && t + s <= T; s += dt) {
            traj.eval(t + s, yj);
            const double d = cylinder_distance(yi, yj);
            if (d < best) { best = d; best_dt = s; }
        }
        if (best < eps) {
            seeds.push_back({PairState::from(yi), best_dt});
            t += t_max_period;  // skip ahead; nearby starts give the same orbit
        }
    }
    return seeds;
}

/// For two cycles with distinct averaged drifts, a frame velocity v strictly
/// between -drift1 and -drift2 makes the drift integrals have opposite signs.
inline double frame_velocity_between(double drift1, double drift2) {
    return -0.5 * (drift1 + drift2);
}

struct CycleHarvestOptions {
    double run_time = 500.0;
    double t_min_period = 1.0;
    double t_max_period = 16.0;
    double close_eps = 0.08;
    double r_max = 3.0;      // reject orbits that wander into the dead-interaction zone
    std::size_t want = 4;
    int starts = 6;
    std::uint64_t seed = 77;
};

/// Periodic orbits of the internal system in the bound-interaction zone,
/// found by close returns on long runs and polished by Newton. Orbits whose
/// R leaves [R_min, r_max] are discarded (the far field is pure phase
/// rotation with no center drift).
inline std::vector<PairCycle> harvest_cycles(const PairParams& q, const PairState& start,
                                             const CycleHarvestOptions& opt = {}) {
    std::vector<PairCycle> cycles;
    RngStream rng(opt.seed, 3);
    for (int trial = 0; trial < opt.starts && cycles.size() < opt.want; ++trial) {
        PairState y0 = start;
        if (trial > 0) {
            y0.R += 0.15 * trial;
            y0.Phi += rng.uniform(-1.0, 1.0);
            y0.Psi += rng.uniform(-1.0, 1.0);
        }
        std::vector<std::pair<PairState, double>> seeds;
        try {
            seeds = close_return_seeds(q, y0, opt.run_time, opt.t_min_period, opt.t_max_period,
                                       opt.close_eps, 10);
        } catch (const NumericsError&) {
            continue;
        }
        for (auto& [st, T] : seeds) {
            if (cycles.size() >= opt.want) break;
            try {
                auto cyc = polish_cycle(q, st, T);
                double r_lo = 1e300, r_hi = 0.0;
                std::vector<double> y;
                for (double t = 0.0; t <= cyc.period; t += cyc.period / 256.0) {
                    cyc.orbit.eval(t, y);
                    r_lo = std::min(r_lo, y[0]);
                    r_hi = std::max(r_hi, y[0]);
                }
                if (r_hi > opt.r_max || r_lo < q.r_min()) continue;
                bool dup = false;
                for (const auto& c : cycles)
                    if (std::abs(c.period - cyc.period) < 1e-3 && std::abs(c.drift - cyc.drift) < 1e-3)
                        dup = true;
                if (!dup) cycles.push_back(std::move(cyc));
            } catch (const NumericsError&) {
            }
        }
    }
    return cycles;
}

/// Newton refinement of an internal-system equilibrium from a seed state.
inline PairState find_equilibrium(const PairParams& q, const PairState& seed, double tol = 1e-12) {
    std::vector<double> x = {seed.R, seed.Phi, seed.Psi};
    for (int it = 0; it < 60; ++it) {
        const PairState f = pair_rhs({x[0], x[1], x[2], 0.0}, q);
        std::vector<double> g = {f.R, f.Phi, f.Psi};
        if (norm_2(g) < tol) break;
        Mat J = internal_jacobian_fd({x[0], x[1], x[2], 0.0}, q);
        auto d = solve_dense(J, g);
        for (int i = 0; i < 3; ++i) x[i] -= d[i];
    }
    return {x[0], x[1], x[2], 0.0};
}

/// Shilnikov loop search for the pair system, run through the normal-form
/// chart: distances and splittings are measured in the scaled (Y, Y', Y'')
/// coordinates where the loop geometry is O(1).
struct PairShilnikov {
    PairParams base;
    TripleZeroPoint tz;
    double s = 0.2;
    double sigma_max = 110.0;      // integration horizon in slow time
    double capture_radius = 0.5;   // in NF units
    double leave_radius = 1.0;
    double dip_radius = 0.9;
    double takeoff_nf = 1e-6;      // takeoff along the unstable direction, NF units
    double rtol = 1e-12;

    struct Shot {
        bool has_meas = false;
        double splitting = 0.0;
        double t_return = 0.0;  // in tau time
        double distance = 1e300;
        double dip_distance = 1e300;
        NormalFormChart chart;
        PairParams params;
        PairState equilibrium;   // the O- analog of the pair system
        Trajectory traj;         // internal coordinates (R, Phi, Psi)
    };

    /// Vector field in NF coordinates (per slow time sigma), via the chart.
    static std::vector<double> nf_field(const std::vector<double>& Y, const NormalFormChart& ch,
                                        const PairParams& qq) {
        const PairState st = ch.from_nf(Y);
        const PairState d = pair_rhs(st, qq);
        const std::vector<double> dx = {d.R, d.Phi, d.Psi};
        const std::vector<double> dy = ch.jordan_inv.apply(dx);
        const double k1 = ch.s * ch.s * ch.s / ch.eps1_nf, k2 = ch.s * ch.s / ch.eps1_nf,
                     k3 = ch.s / ch.eps1_nf;
        return {dy[0] * k1 / ch.s, dy[1] * k2 / ch.s, dy[2] * k3 / ch.s};
    }

    static Mat nf_jacobian_fd(const std::vector<double>& Y, const NormalFormChart& ch, const PairParams& qq,
                              double h = 0.02) {
        Mat J(3, 3);
        for (int c = 0; c < 3; ++c) {
            auto Yp = Y, Ym = Y;
            Yp[c] += h;
            Ym[c] -= h;
            auto fp = nf_field(Yp, ch, qq), fm = nf_field(Ym, ch, qq);
            for (int r = 0; r < 3; ++r) J(r, c) = (fp[r] - fm[r]) / (2.0 * h);
        }
        return J;
    }

    Shot shoot(double E) const {
        Shot sh;
        sh.chart = build_chart(base, tz, s, E);
        sh.params = chart_params(base, sh.chart);
        // O- analog: Newton from the chart image of (-1, 0, 0)
        sh.equilibrium = find_equilibrium(sh.params, sh.chart.from_nf({-1.0, 0.0, 0.0}));
        const std::vector<double> Yeq = sh.chart.to_nf(sh.equilibrium);

        Mat J = nf_jacobian_fd(Yeq, sh.chart, sh.params);
        auto ev = eigenvalues(J);
        double xi1 = 0.0;
        for (const cplx& e : ev)
            if (std::abs(e.imag()) < 1e-9 * std::abs(e) + 1e-12 && e.real() > xi1) xi1 = e.real();
        if (xi1 <= 0.0) return sh;
        auto vu = eigenvector(J, xi1);
        if (vu[0] < 0.0)
            for (auto& v : vu) v = -v;  // orient toward increasing Y
        auto w = eigenvector(J.transposed(), xi1);
        const double wn = norm_2(w);

        std::vector<double> Y0 = Yeq;
        for (int i = 0; i < 3; ++i) Y0[i] += takeoff_nf * vu[i];
        const PairState x0 = sh.chart.from_nf(Y0);

        OdeOptions o;
        o.rtol = rtol;
        o.atol = rtol * 1e-2;
        o.h_max = 2.0 / s;
        OdeRhs rhs = [&](double, const std::vector<double>& y, std::vector<double>& dy) {
            const PairState d = pair_rhs({y[0], y[1], y[2], 0.0}, sh.params);
            dy = {d.R, d.Phi, d.Psi};
            if (!std::isfinite(dy[0] + dy[1] + dy[2])) throw StepFailure("pair shot: non-finite field");
        };
        try {
            Dopri5(rhs, o).integrate(0.0, {x0.R, x0.Phi, x0.Psi}, sigma_max / s, &sh.traj);
        } catch (const StepFailure&) {
        } catch (const ReducedModelBreakdown&) {
        }
        const double t_end = sh.traj.t_end();
        const double dt = 0.01 / s;
        bool left = false;
        double d_prev = 0.0, d_prev2 = 0.0;
        std::vector<double> y;
        auto nf_dist = [&](const std::vector<double>& st, double* split = nullptr) {
            auto Y = sh.chart.to_nf({st[0], st[1], st[2], 0.0});
            if (!std::isfinite(Y[0] + Y[1] + Y[2])) return 1e300;
            double dsq = 0.0, sp = 0.0;
            for (int i = 0; i < 3; ++i) {
                dsq += sqr(Y[i] - Yeq[i]);
                sp += w[i] * (Y[i] - Yeq[i]);
            }
            if (split) *split = sp / wn;
            return std::sqrt(dsq);
        };
        for (double t = 0.0; t <= t_end; t += dt) {
            sh.traj.eval(t, y);
            const double d = nf_dist(y);
            if (!left && d > leave_radius) left = true;
            if (left) {
                sh.dip_distance = std::min(sh.dip_distance, d);
                if (!sh.has_meas && t >= 2.0 * dt && d_prev <= d && d_prev <= d_prev2 &&
                    d_prev < capture_radius) {
                    double a = t - 2.0 * dt, b = t;
                    for (int it = 0; it < 70; ++it) {
                        const double m1 = a + (b - a) / 3.0, m2 = b - (b - a) / 3.0;
                        std::vector<double> y1, y2;
                        sh.traj.eval(m1, y1);
                        sh.traj.eval(m2, y2);
                        if (nf_dist(y1) < nf_dist(y2)) b = m2; else a = m1;
                    }
                    const double tm = 0.5 * (a + b);
                    sh.traj.eval(tm, y);
                    double sp = 0.0;
                    sh.has_meas = true;
                    sh.t_return = tm;
                    sh.distance = nf_dist(y, &sp);
                    sh.splitting = sp;
                }
            }
            d_prev2 = d_prev;
            d_prev = d;
        }
        return sh;
    }

    /// Bisect the first-return splitting over [E_lo, E_hi]; both endpoints must
    /// measure a return with opposite splitting signs.
    double find_loop_E(double E_lo, double E_hi) const {
        auto sa = shoot(E_lo), sb = shoot(E_hi);
        if (!sa.has_meas || !sb.has_meas || sa.splitting * sb.splitting > 0.0)
            throw NoRoot("PairShilnikov::find_loop_E: bracket does not straddle a loop");
        double a = E_lo, b = E_hi, fa = sa.splitting;
        for (int it = 0; it < 60 && std::abs(b - a) > 1e-13; ++it) {
            const double m = 0.5 * (a + b);
            auto sm = shoot(m);
            if (!sm.has_meas) throw NoRoot("PairShilnikov::find_loop_E: lost the return mid-bisection");
            if ((fa < 0.0) == (sm.splitting < 0.0)) { a = m; fa = sm.splitting; } else { b = m; }
        }
        return 0.5 * (a + b);
    }
};

}  // namespace solgrid::pairdyn
