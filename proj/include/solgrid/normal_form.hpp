#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "solgrid/core/dense.hpp"
#include "solgrid/core/quadrature.hpp"
#include "solgrid/core/rk45.hpp"

namespace solgrid::normal_form {

/// State (Y, Y', Y'') of the third-order equation Y''' = 1 - Y^2 + E Y'.
struct NfState {
    double Y = 0.0, dY = 0.0, ddY = 0.0;
    std::vector<double> vec() const { return {Y, dY, ddY}; }
    static NfState from(const std::vector<double>& v) { return {v[0], v[1], v[2]}; }
};

inline double E_star() { return -19.0 / std::cbrt(2475.0); }

inline OdeRhs nf_rhs(double E) {
    return [E](double, const std::vector<double>& y, std::vector<double>& dy) {
        dy = {y[1], y[2], 1.0 - y[0] * y[0] + E * y[1]};
    };
}

/// Companion Jacobian of the flow at a state (only Y enters).
inline Mat nf_jacobian(double Y, double E) {
    Mat j(3, 3);
    j(0, 1) = 1.0;
    j(1, 2) = 1.0;
    j(2, 0) = -2.0 * Y;
    j(2, 1) = E;
    return j;
}

struct NfOptions {
    double rtol = 1e-11;
    double atol = 1e-13;
    double escape_norm = 1e3;  // the cubic nonlinearity admits finite-time blowup
    double h_max = 0.5;
};

inline Trajectory integrate_nf(const NfState& y0, double E, double T, const NfOptions& opt = {}) {
    OdeOptions o;
    o.rtol = opt.rtol;
    o.atol = opt.atol;
    o.escape_norm = opt.escape_norm;
    o.h_max = opt.h_max;
    Trajectory traj;
    try {
        Dopri5(nf_rhs(E), o).integrate(0.0, y0.vec(), T, &traj);
    } catch (const StepFailure&) {
        // escape is reported through the truncated trajectory, not as failure
    }
    return traj;
}

/// Exact heteroclinic of the limit equation at E = E*, connecting Y = -1 to
/// Y = +1 (Tsuzuki): Y = -(9/2) tanh(k s) + (11/2) tanh^3(k s), k^3 = 11/120.
inline NfState explicit_heteroclinic(double sigma) {
    const double k = std::cbrt(11.0 / 120.0);
    const double t = std::tanh(k * sigma);
    const double A = -4.5, B = 5.5;
    NfState s;
    s.Y = A * t + B * t * t * t;
    s.dY = k * (A + (3.0 * B - A) * t * t - 3.0 * B * t * t * t * t);
    s.ddY = k * k * (2.0 * (3.0 * B - A) * t - (18.0 * B - 2.0 * A) * t * t * t + 12.0 * B * t * t * t * t * t);
    return s;
}

/// Residual of the exact heteroclinic in the equation at E*, via the closed
/// third derivative Y''' = k^3 (2(3B-A) - (60B-8A) t^2 + (114B-6A) t^4 - 60B t^6).
inline double heteroclinic_residual(double sigma) {
    const double k = std::cbrt(11.0 / 120.0);
    const double t = std::tanh(k * sigma);
    const double A = -4.5, B = 5.5;
    const double t2 = t * t, t4 = t2 * t2, t6 = t4 * t2;
    const double dddY = k * k * k * (2.0 * (3.0 * B - A) - (60.0 * B - 8.0 * A) * t2 +
                                     (114.0 * B - 6.0 * A) * t4 - 60.0 * B * t6);
    const NfState s = explicit_heteroclinic(sigma);
    return std::abs(dddY - (1.0 - s.Y * s.Y + E_star() * s.dY));
}

struct EquilibriumSpectrum {
    cplx roots[3];           // sorted: real root first, then the complex pair
    double xi1 = 0.0;        // the real root
    cplx xi_pair;            // one member of the complex pair (if any)
    bool saddle_focus = false;
    double shilnikov_quantity = 0.0;  // xi1 + Re xi_pair (O- orientation)
};

/// Roots of xi^3 - E xi + 2 Y0 = 0 for the equilibrium Y = Y0 (= +-1).
inline EquilibriumSpectrum equilibrium_eigenvalues(double E, double Y0) {
    auto closed = cubic_roots_closed_form(0.0, -E, 2.0 * Y0);
    EquilibriumSpectrum out;
    // order: the real root with largest |imag|=0, then pair
    std::vector<cplx> real_roots, pair_roots;
    for (const cplx& r : closed)
        (std::abs(r.imag()) < 1e-12 ? real_roots : pair_roots).push_back(r);
    if (pair_roots.size() == 2) {
        out.saddle_focus = true;
        out.xi1 = real_roots[0].real();
        out.xi_pair = (pair_roots[0].imag() > 0.0) ? pair_roots[0] : pair_roots[1];
        out.roots[0] = real_roots[0];
        out.roots[1] = out.xi_pair;
        out.roots[2] = std::conj(out.xi_pair);
        out.shilnikov_quantity = out.xi1 + out.xi_pair.real();
    } else {
        std::sort(real_roots.begin(), real_roots.end(),
                  [](cplx a, cplx b) { return a.real() > b.real(); });
        out.xi1 = real_roots[0].real();
        for (int i = 0; i < 3; ++i) out.roots[i] = real_roots[i];
        out.shilnikov_quantity = out.xi1 + real_roots[1].real();
    }
    return out;
}

/// Same cubic through the companion-matrix eigensolver (independent route).
inline std::vector<cplx> equilibrium_eigenvalues_companion(double E, double Y0) {
    return cubic_roots_companion(0.0, -E, 2.0 * Y0);
}

struct HomoclinicRecord {
    double E = 0.0;
    Trajectory loop;            // takeoff from O- to the closest return
    double t_return = 0.0;      // time of the closest approach on `loop`
    double equilibrium_Y = -1.0;
    double xi1 = 0.0;
    cplx xi23;
    double shilnikov_quantity = 0.0;
    double closure_defect = 0.0;  // distance of the return point to the stable plane of O-
    double return_distance = 0.0; // distance of the return point to O- itself
    double gloop_value = 0.0;     // int (Y+1) d sigma along the loop
    double dwell_near_plus = 0.0; // time with |Y-1| < 0.2
};

struct HomoclinicSearchOptions {
    double takeoff = 1e-6;       // h0 along the unstable eigenvector
    double t_max = 90.0;
    double capture_radius = 0.5; // accepted return distance for a record
    double dip_radius = 0.9;     // a pass below this marks a candidate window
    double leave_radius = 1.0;
    double defect_tol = 1e-6;
    double span = 0.35;          // search |E - E*| <= span
    int points_per_decade = 60;
    double min_offset = 5e-5;    // innermost scanned |E - E*|
    int refine_depth = 5;
    // The loop windows alternate sides of E* every half winding; the primary
    // family on the E > E* side has monotone dwell and drift integrals, which
    // is what the downstream cycle-pair selection wants. Enable both sides to
    // see the interleaved family as well.
    bool both_sides = false;
    NfOptions ode;
};

struct NoReturnDetected : NumericsError { using NumericsError::NumericsError; };
struct BisectionFailure : NumericsError { using NumericsError::NumericsError; };
struct NonConvergedTail : NumericsError { using NumericsError::NumericsError; };

namespace detail {

struct ShotResult {
    double dip_distance = 1e300;  // deepest approach to O- over the whole shot
    bool has_meas = false;        // a first return below the capture radius exists
    double t_return = 0.0;        // time of the first capture-radius local minimum
    double distance = 1e300;      // distance at that first return
    double splitting = 0.0;       // signed distance to the stable eigenplane of O-
    Trajectory traj;
};

/// Shoot along the unstable manifold of O-. The splitting is measured at the
/// FIRST local minimum of the distance to O- below the capture radius; later
/// spiral minima amplify the residual unstable component and are not reliable.
/// The stable eigenplane normal is the left eigenvector of xi1:
/// w = (2/xi1, xi1, 1) normalized.
inline ShotResult shoot(double E, const HomoclinicSearchOptions& opt) {
    const auto spec = equilibrium_eigenvalues(E, -1.0);
    const double xi1 = spec.xi1;
    std::vector<double> vu = {1.0, xi1, xi1 * xi1};
    const double vn = norm_2(vu);
    std::vector<double> w = {2.0 / xi1, xi1, 1.0};
    const double wn = norm_2(w);

    std::vector<double> y0 = {-1.0 + opt.takeoff * vu[0] / vn, opt.takeoff * vu[1] / vn,
                              opt.takeoff * vu[2] / vn};
    OdeOptions o;
    o.rtol = opt.ode.rtol;
    o.atol = opt.ode.atol;
    o.escape_norm = opt.ode.escape_norm;
    o.h_max = opt.ode.h_max;
    ShotResult res;
    try {
        Dopri5(nf_rhs(E), o).integrate(0.0, y0, opt.t_max, &res.traj);
    } catch (const StepFailure&) {
    }
    const double t_end = res.traj.t_end();
    const double dt = 0.01;
    bool left = false;
    double d_prev = 0.0, d_prev2 = 0.0;
    std::vector<double> y;
    for (double t = 0.0; t <= t_end; t += dt) {
        res.traj.eval(t, y);
        const double d = std::sqrt(sqr(y[0] + 1.0) + sqr(y[1]) + sqr(y[2]));
        if (!left && d > opt.leave_radius) left = true;
        if (left) {
            res.dip_distance = std::min(res.dip_distance, d);
            if (!res.has_meas && t >= 2.0 * dt && d_prev <= d && d_prev <= d_prev2 &&
                d_prev < opt.capture_radius) {
                // polish the minimum by ternary search on the dense output
                double a = t - 2.0 * dt, b = t;
                for (int it = 0; it < 70; ++it) {
                    const double m1 = a + (b - a) / 3.0, m2 = b - (b - a) / 3.0;
                    std::vector<double> y1, y2;
                    res.traj.eval(m1, y1);
                    res.traj.eval(m2, y2);
                    const double f1 = sqr(y1[0] + 1.0) + sqr(y1[1]) + sqr(y1[2]);
                    const double f2 = sqr(y2[0] + 1.0) + sqr(y2[1]) + sqr(y2[2]);
                    if (f1 < f2) b = m2; else a = m1;
                }
                const double tm = 0.5 * (a + b);
                res.traj.eval(tm, y);
                res.has_meas = true;
                res.t_return = tm;
                res.distance = std::sqrt(sqr(y[0] + 1.0) + sqr(y[1]) + sqr(y[2]));
                res.splitting = (w[0] * (y[0] + 1.0) + w[1] * y[1] + w[2] * y[2]) / wn;
            }
        }
        d_prev2 = d_prev;
        d_prev = d;
    }
    return res;
}

}  // namespace detail

namespace detail {

inline void finalize_root(double e_root, const HomoclinicSearchOptions& opt,
                          std::vector<HomoclinicRecord>& records) {
    auto final_shot = shoot(e_root, opt);
    if (!final_shot.has_meas || std::abs(final_shot.splitting) > opt.defect_tol)
        return;
    for (const auto& r : records)
        if (std::abs(r.E - e_root) < 1e-9) return;  // duplicate window
    HomoclinicRecord rec;
    rec.E = e_root;
    rec.loop = std::move(final_shot.traj);
    rec.t_return = final_shot.t_return;
    const auto spec = equilibrium_eigenvalues(e_root, -1.0);
    rec.xi1 = spec.xi1;
    rec.xi23 = spec.xi_pair;
    rec.shilnikov_quantity = spec.shilnikov_quantity;
    rec.closure_defect = std::abs(final_shot.splitting);
    rec.return_distance = final_shot.distance;
    const int n = 20000;
    std::vector<double> vals(n + 1);
    double dwell = 0.0;
    std::vector<double> y;
    const double h = rec.t_return / n;
    for (int i = 0; i <= n; ++i) {
        rec.loop.eval(h * double(i), y);
        vals[i] = y[0] + 1.0;
        if (std::abs(y[0] - 1.0) < 0.2) dwell += h;
    }
    rec.gloop_value = trapezoid(vals, h);
    rec.dwell_near_plus = dwell;
    records.push_back(std::move(rec));
}

/// Linear scan of [e_lo, e_hi]; bisect splitting sign changes where both
/// endpoints see a deep pass, otherwise zoom on the deepest approach.
inline void refine_window(double e_lo, double e_hi, int depth, const HomoclinicSearchOptions& opt,
                          std::vector<HomoclinicRecord>& records) {
    const int n = 48;
    std::vector<ShotResult> shots(n + 1);
    double best_d = 1e300;
    int best_i = -1;
    for (int i = 0; i <= n; ++i) {
        const double e = e_lo + (e_hi - e_lo) * double(i) / double(n);
        shots[i] = shoot(e, opt);
        if (shots[i].dip_distance < best_d) { best_d = shots[i].dip_distance; best_i = i; }
    }
    bool bisected = false;
    for (int i = 0; i < n; ++i) {
        if (!shots[i].has_meas || !shots[i + 1].has_meas) continue;
        if (shots[i].splitting * shots[i + 1].splitting >= 0.0) continue;
        double a = e_lo + (e_hi - e_lo) * double(i) / double(n);
        double b = e_lo + (e_hi - e_lo) * double(i + 1) / double(n);
        double fa = shots[i].splitting;
        bool ok = true;
        for (int it = 0; it < 64 && std::abs(b - a) > 1e-15 * (1.0 + std::abs(a)); ++it) {
            const double m = 0.5 * (a + b);
            auto sm = shoot(m, opt);
            if (!sm.has_meas) { ok = false; break; }
            if ((fa < 0.0) == (sm.splitting < 0.0)) { a = m; fa = sm.splitting; } else { b = m; }
        }
        if (ok) {
            finalize_root(0.5 * (a + b), opt, records);
            bisected = true;
        }
    }
    if (!bisected && depth > 0 && best_i >= 0) {
        const int lo = std::max(0, best_i - 1), hi = std::min(n, best_i + 1);
        refine_window(e_lo + (e_hi - e_lo) * double(lo) / double(n),
                      e_lo + (e_hi - e_lo) * double(hi) / double(n), depth - 1, opt, records);
    }
}

}  // namespace detail

/// Locate parameter values with a homoclinic loop to the saddle-focus O-:
/// log-uniform scan of |E - E*| on both sides, candidate windows where the
/// excursion's deepest approach to O- dips, then splitting-sign bisection
/// inside each window (with recursive zoom for windows narrower than the
/// scan step).
inline std::vector<HomoclinicRecord> find_homoclinic_parameters(std::size_t count,
                                                                const HomoclinicSearchOptions& opt = {}) {
    const double es = E_star();
    std::vector<double> offsets;
    const double decades = std::log10(opt.span / opt.min_offset);
    const int n_scan = std::max(8, int(std::ceil(decades * opt.points_per_decade)));
    for (int i = 0; i <= n_scan; ++i)
        offsets.push_back(opt.span * std::pow(opt.min_offset / opt.span, double(i) / double(n_scan)));

    std::vector<HomoclinicRecord> records;
    std::vector<double> sides = {+1.0};
    if (opt.both_sides) sides.push_back(-1.0);
    for (double side : sides) {
        std::vector<double> dists(offsets.size(), 1e300);
        for (std::size_t i = 0; i < offsets.size(); ++i)
            dists[i] = detail::shoot(es + side * offsets[i], opt).dip_distance;
        for (std::size_t i = 0; i < offsets.size(); ++i) {
            const bool local_min = dists[i] < opt.dip_radius &&
                                   (i == 0 || dists[i] <= dists[i - 1]) &&
                                   (i + 1 == offsets.size() || dists[i] <= dists[i + 1]);
            if (!local_min) continue;
            const double lo = (i + 1 < offsets.size()) ? offsets[i + 1] : offsets[i] * 0.8;
            const double hi = (i > 0) ? offsets[i - 1] : offsets[i] * 1.25;
            double a = es + side * lo, b = es + side * hi;
            if (a > b) std::swap(a, b);
            detail::refine_window(a, b, opt.refine_depth, opt, records);
        }
    }
    if (records.empty())
        throw NoReturnDetected("find_homoclinic_parameters: no splitting sign change in any dip window");
    std::sort(records.begin(), records.end(), [&](const HomoclinicRecord& x, const HomoclinicRecord& y) {
        return std::abs(x.E - es) > std::abs(y.E - es);
    });
    if (records.size() > count) records.resize(count);
    return records;
}

/// int (Y+1) d sigma over a stored loop, with a Simpson cross-check; the
/// integrand must have decayed at both ends.
inline double gloop_integral(const HomoclinicRecord& rec, double* simpson_value = nullptr) {
    const int n = 20001;
    std::vector<double> vals(n);
    std::vector<double> y;
    const double h = rec.t_return / double(n - 1);
    for (int i = 0; i < n; ++i) {
        rec.loop.eval(h * double(i), y);
        vals[i] = y[0] + 1.0;
    }
    if (std::abs(vals.front()) > 1e-4 || std::abs(vals.back()) > 2.0 * rec.return_distance + 1e-4)
        throw NonConvergedTail("gloop_integral: loop endpoints not settled at Y = -1");
    if (simpson_value) *simpson_value = simpson(vals, h);
    return trapezoid(vals, h);
}

/// Propagate the tangent-volume determinant along a trajectory of the flow
/// (variational equation on the 3x3 frame); the field is divergence-free, so
/// the determinant stays 1 for exact arithmetic.
inline double tangent_volume_after(const NfState& y0, double E, double T, const NfOptions& opt = {}) {
    OdeRhs rhs = [E](double, const std::vector<double>& s, std::vector<double>& ds) {
        ds.resize(12);
        ds[0] = s[1];
        ds[1] = s[2];
        ds[2] = 1.0 - s[0] * s[0] + E * s[1];
        // columns of the frame evolve by the Jacobian [[0,1,0],[0,0,1],[-2Y,E,0]]
        for (int c = 0; c < 3; ++c) {
            const double v0 = s[3 + 3 * c], v1 = s[4 + 3 * c], v2 = s[5 + 3 * c];
            ds[3 + 3 * c] = v1;
            ds[4 + 3 * c] = v2;
            ds[5 + 3 * c] = -2.0 * s[0] * v0 + E * v1;
        }
    };
    std::vector<double> s0 = {y0.Y, y0.dY, y0.ddY, 1, 0, 0, 0, 1, 0, 0, 0, 1};
    OdeOptions o;
    o.rtol = opt.rtol;
    o.atol = opt.atol;
    o.escape_norm = opt.escape_norm;
    auto s = integrate_to(rhs, 0.0, s0, T, o);
    Mat m(3, 3);
    for (int c = 0; c < 3; ++c)
        for (int r = 0; r < 3; ++r) m(r, c) = s[3 + 3 * c + r];
    // 3x3 determinant
    return m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
           m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
           m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
}

}  // namespace solgrid::normal_form
