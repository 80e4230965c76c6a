#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "solgrid/core/util.hpp"

namespace solgrid {

struct StepFailure : NumericsError {
    explicit StepFailure(const std::string& what) : NumericsError(what) {}
};

using OdeRhs = std::function<void(double t, const std::vector<double>& y, std::vector<double>& dy)>;

struct OdeOptions {
    double rtol = 1e-8;
    double atol = 1e-10;
    double h_init = 1e-3;
    double h_max = 1.0;
    double h_min = 1e-14;
    double escape_norm = 0.0;        // abort when |y|_inf exceeds this (0 = off)
    std::size_t max_steps = 50'000'000;
};

/// One accepted Dormand-Prince 5(4) step with the 4th-order dense interpolant.
struct DenseStep {
    double t0, h;
    std::vector<double> r1, r2, r3, r4, r5;

    void eval(double t, std::vector<double>& y) const {
        const double th = (t - t0) / h, th1 = 1.0 - th;
        const std::size_t n = r1.size();
        y.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            y[i] = r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])));
    }
};

/// Adaptive trajectory with dense output over [t_begin, t_end].
class Trajectory {
public:
    double t_begin() const { return steps_.empty() ? t0_ : steps_.front().t0; }
    double t_end() const { return steps_.empty() ? t0_ : steps_.back().t0 + steps_.back().h; }

    void eval(double t, std::vector<double>& y) const {
        if (steps_.empty()) throw NumericsError("Trajectory: empty");
        // locate step by binary search on t0
        std::size_t lo = 0, hi = steps_.size() - 1;
        while (lo < hi) {
            std::size_t mid = (lo + hi + 1) / 2;
            if (steps_[mid].t0 <= t) lo = mid; else hi = mid - 1;
        }
        steps_[lo].eval(t, y);
    }

    std::vector<double> at(double t) const {
        std::vector<double> y;
        eval(t, y);
        return y;
    }

    const std::vector<DenseStep>& steps() const { return steps_; }
    std::vector<DenseStep>& steps() { return steps_; }
    void set_t0(double t0) { t0_ = t0; }

private:
    double t0_ = 0.0;
    std::vector<DenseStep> steps_;
};

/// Dormand-Prince RK5(4) integrator. Forward time only; integrate backward by
/// negating the vector field at the call site (helpers below).
class Dopri5 {
public:
    explicit Dopri5(OdeRhs rhs, OdeOptions opt = {}) : f_(std::move(rhs)), opt_(opt) {}

    /// Integrate from (t0, y0) to t1 > t0. If `store` is non-null, dense steps
    /// are appended. Returns the endpoint state.
    std::vector<double> integrate(double t0, std::vector<double> y, double t1, Trajectory* store = nullptr) {
        const std::size_t n = y.size();
        std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), yt(n), y5(n), y4(n);
        double t = t0;
        double h = std::min(opt_.h_init, t1 - t0);
        if (store) store->set_t0(t0);
        f_(t, y, k1);
        std::size_t steps = 0;
        while (t < t1) {
            if (++steps > opt_.max_steps) throw StepFailure("Dopri5: step budget exhausted");
            h = std::min(h, t1 - t);
            if (h < opt_.h_min) throw StepFailure("Dopri5: step size underflow");

            stage(y, k1, yt, h, {0.2});
            f_(t + 0.2 * h, yt, k2);
            stage(y, {&k1, &k2}, yt, h, {3.0 / 40.0, 9.0 / 40.0});
            f_(t + 0.3 * h, yt, k3);
            stage(y, {&k1, &k2, &k3}, yt, h, {44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0});
            f_(t + 0.8 * h, yt, k4);
            stage(y, {&k1, &k2, &k3, &k4}, yt, h,
                  {19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0});
            f_(t + 8.0 / 9.0 * h, yt, k5);
            stage(y, {&k1, &k2, &k3, &k4, &k5}, yt, h,
                  {9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0});
            f_(t + h, yt, k6);
            stage(y, {&k1, &k2, &k3, &k4, &k5, &k6}, y5, h,
                  {35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0});
            f_(t + h, y5, k7);

            double err = 0.0;
            static constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                                    e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double ei = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
                const double sc = opt_.atol + opt_.rtol * std::max(std::abs(y[i]), std::abs(y5[i]));
                err += sqr(ei / sc);
            }
            err = std::sqrt(err / double(n));

            if (err <= 1.0) {
                if (store) store->steps().push_back(make_dense(t, h, y, y5, k1, k3, k4, k5, k6, k7));
                t += h;
                y.swap(y5);
                k1.swap(k7);
                if (opt_.escape_norm > 0.0 && norm_inf(y) > opt_.escape_norm)
                    throw StepFailure("Dopri5: trajectory escaped guard radius");
                h *= std::clamp(0.9 * std::pow(std::max(err, 1e-10), -0.2), 0.2, 5.0);
                h = std::min(h, opt_.h_max);
            } else {
                h *= std::clamp(0.9 * std::pow(err, -0.2), 0.2, 1.0);
            }
        }
        return y;
    }

private:
    static void stage(const std::vector<double>& y, const std::vector<double>& k, std::vector<double>& out,
                      double h, std::initializer_list<double> a) {
        const double a1 = *a.begin();
        out.resize(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] + h * a1 * k[i];
    }

    static void stage(const std::vector<double>& y, std::initializer_list<const std::vector<double>*> ks,
                      std::vector<double>& out, double h, std::initializer_list<double> a) {
        out.assign(y.begin(), y.end());
        auto ai = a.begin();
        for (const auto* k : ks) {
            const double c = h * (*ai++);
            if (c != 0.0)
                for (std::size_t i = 0; i < y.size(); ++i) out[i] += c * (*k)[i];
        }
    }

    static DenseStep make_dense(double t, double h, const std::vector<double>& y0, const std::vector<double>& y1,
                                const std::vector<double>& k1, const std::vector<double>& k3,
                                const std::vector<double>& k4, const std::vector<double>& k5,
                                const std::vector<double>& k6, const std::vector<double>& k7) {
        static constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                                d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                                d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
        const std::size_t n = y0.size();
        DenseStep s;
        s.t0 = t; s.h = h;
        s.r1 = y0;
        s.r2.resize(n); s.r3.resize(n); s.r4.resize(n); s.r5.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double dy = y1[i] - y0[i];
            s.r2[i] = dy;
            s.r3[i] = h * k1[i] - dy;
            s.r4[i] = dy - h * k7[i] - s.r3[i];
            s.r5[i] = h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] + d6 * k6[i] + d7 * k7[i]);
        }
        return s;
    }

    OdeRhs f_;
    OdeOptions opt_;
};

/// Convenience: integrate forward and return trajectory with dense output.
inline Trajectory integrate_dense(const OdeRhs& rhs, double t0, const std::vector<double>& y0, double t1,
                                  const OdeOptions& opt = {}) {
    Trajectory traj;
    Dopri5 solver(rhs, opt);
    solver.integrate(t0, y0, t1, &traj);
    return traj;
}

inline std::vector<double> integrate_to(const OdeRhs& rhs, double t0, const std::vector<double>& y0, double t1,
                                        const OdeOptions& opt = {}) {
    Dopri5 solver(rhs, opt);
    return solver.integrate(t0, y0, t1);
}

/// Integrate backward in time over [t1, t0], t1 < t0, by time reversal.
inline std::vector<double> integrate_backward(const OdeRhs& rhs, double t0, const std::vector<double>& y0,
                                              double t1, const OdeOptions& opt = {}) {
    OdeRhs rev = [&rhs](double s, const std::vector<double>& y, std::vector<double>& dy) {
        rhs(-s, y, dy);
        for (double& v : dy) v = -v;
    };
    Dopri5 solver(rev, opt);
    return solver.integrate(-t0, y0, -t1);
}

/// Locate a zero crossing of `event` along a dense trajectory, scanning with
/// stride `dt_scan` from t_from; returns the refined crossing time or NaN.
inline double locate_event(const Trajectory& traj, const std::function<double(double, const std::vector<double>&)>& event,
                           double t_from, double dt_scan, int direction = +1) {
    std::vector<double> y;
    const double t_end = traj.t_end();
    if (t_from >= t_end) return std::numeric_limits<double>::quiet_NaN();
    traj.eval(t_from, y);
    double t_prev = t_from, g_prev = event(t_prev, y);
    for (double t = t_from + dt_scan; t <= t_end + 1e-15; t += dt_scan) {
        const double tc = std::min(t, t_end);
        traj.eval(tc, y);
        const double g = event(tc, y);
        const bool crossed = (g_prev < 0.0 && g >= 0.0 && direction >= 0) ||
                             (g_prev > 0.0 && g <= 0.0 && direction <= 0);
        if (crossed) {
            double a = t_prev, b = tc, ga = g_prev;
            for (int it = 0; it < 80; ++it) {
                const double m = 0.5 * (a + b);
                traj.eval(m, y);
                const double gm = event(m, y);
                if ((ga < 0.0) == (gm < 0.0)) { a = m; ga = gm; } else { b = m; }
            }
            return 0.5 * (a + b);
        }
        t_prev = tc;
        g_prev = g;
        if (tc >= t_end) break;
    }
    return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace solgrid
