#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "solgrid/core/banded.hpp"
#include "solgrid/core/dense.hpp"
#include "solgrid/core/quadrature.hpp"
#include "solgrid/core/rk45.hpp"
#include "solgrid/lattice.hpp"

namespace solgrid::lattice {

struct NormalizationBlowup : NumericsError { using NumericsError::NumericsError; };
struct NoContraction : NumericsError { using NumericsError::NumericsError; };
struct BvpFailure : NumericsError { using NumericsError::NumericsError; };
struct OptimizationStall : NumericsError { using NumericsError::NumericsError; };

using CellRhs = std::function<void(const double* y, double* dy)>;

namespace detail {

inline Mat fd_jacobian(const CellRhs& f, const std::vector<double>& y, double h = 1e-7) {
    const int n = int(y.size());
    Mat j(n, n);
    std::vector<double> yp = y, ym = y, fp(n), fm(n);
    for (int c = 0; c < n; ++c) {
        yp[c] += h;
        ym[c] -= h;
        f(yp.data(), fp.data());
        f(ym.data(), fm.data());
        for (int r = 0; r < n; ++r) j(r, c) = (fp[r] - fm[r]) / (2.0 * h);
        yp[c] = y[c];
        ym[c] = y[c];
    }
    return j;
}

}  // namespace detail

/// Base orbit samples with the bounded adjoint solution y*(t) normalized by
/// <y* . ydot> = 1, and everything the manifold machinery needs evaluated by
/// (periodic) interpolation: y0, f(y0), f'(y0), y*, mollified variants.
class AdjointOrbitData {
public:
    /// Construct for a periodic orbit through x0 with the given period. The
    /// adjoint is seeded with the left Floquet vector of multiplier 1 and
    /// propagated with renormalization.
    static AdjointOrbitData periodic(const CellRhs& f, const std::vector<double>& x0, double period,
                                     std::size_t n_samples = 1024, double rtol = 1e-12) {
        AdjointOrbitData d;
        d.periodic_ = true;
        d.span_ = period;
        d.dim_ = int(x0.size());
        d.fill_base(f, x0, n_samples, rtol);

        // monodromy and its left eigenvector at multiplier 1
        Mat mono = d.monodromy(f, x0, rtol);
        std::vector<double> w = eigenvector(mono.transposed(), 1.0);
        std::vector<double> f0(d.dim_);
        f(x0.data(), f0.data());
        const double nrm = dot(w, f0);
        if (std::abs(nrm) < 1e-12 * norm_2(w) * norm_2(f0))
            throw NormalizationBlowup("AdjointOrbitData: <y*, ydot> cannot be normalized");
        for (auto& v : w) v /= nrm;
        d.fill_adjoint(f, w, rtol);
        return d;
    }

    /// Construct for a finite trajectory segment (t in [0, span]); the adjoint
    /// is propagated backward from a terminal value, typically borrowed from
    /// the asymptotic cycle the segment approaches.
    static AdjointOrbitData segment(const CellRhs& f, const std::vector<double>& x0, double span,
                                    const std::vector<double>& ystar_end, std::size_t n_samples = 2048,
                                    double rtol = 1e-12) {
        AdjointOrbitData d;
        d.periodic_ = false;
        d.span_ = span;
        d.dim_ = int(x0.size());
        d.fill_base(f, x0, n_samples, rtol);
        d.fill_adjoint_backward(f, ystar_end, rtol);
        return d;
    }

    int dim() const { return dim_; }
    double span() const { return span_; }
    bool is_periodic() const { return periodic_; }
    double normalization_drift() const { return norm_drift_; }
    double periodicity_defect() const { return period_defect_; }

    std::vector<double> y(double t) const { return interp(y_, t); }
    std::vector<double> ydot(double t) const { return interp(fy_, t); }
    std::vector<double> ystar(double t) const { return interp(ystar_, t); }

    /// Mollified coefficient samples: A(t) = smoothed f'(y0(t)), b(t) =
    /// smoothed y*(t); c(t) = <b . f(y0)> - 1; bp = db/dt.
    void mollify(const CellRhs& f, double mu_moll) {
        const std::size_t n = y_.size();
        const double h = span_ / double(periodic_ ? n : n - 1);
        // bump kernel on [-1, 1] scaled to width mu_moll
        const int half = std::max<int>(1, int(std::ceil(mu_moll / h)));
        std::vector<double> kern(2 * half + 1);
        double ksum = 0.0;
        for (int i = -half; i <= half; ++i) {
            const double u = double(i) / double(half + 0.5);
            kern[i + half] = std::exp(-1.0 / std::max(1e-12, 1.0 - u * u));
            ksum += kern[i + half];
        }
        for (auto& v : kern) v /= ksum;

        std::vector<Mat> jac(n, Mat(dim_, dim_));
        for (std::size_t i = 0; i < n; ++i) jac[i] = detail::fd_jacobian(f, y_[i]);

        A_.assign(n, Mat(dim_, dim_));
        b_.assign(n, std::vector<double>(dim_, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            for (int o = -half; o <= half; ++o) {
                const std::size_t s = index_clamped(long(i) + o, n);
                const double wk = kern[o + half];
                for (int r = 0; r < dim_; ++r) {
                    b_[i][r] += wk * ystar_[s][r];
                    for (int c = 0; c < dim_; ++c) A_[i](r, c) += wk * jac[s](r, c);
                }
            }
        }
        bp_.assign(n, std::vector<double>(dim_, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t ip = index_clamped(long(i) + 1, n), im = index_clamped(long(i) - 1, n);
            for (int r = 0; r < dim_; ++r) bp_[i][r] = (b_[ip][r] - b_[im][r]) / (2.0 * h);
        }
        c_.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) c_[i] = dot(b_[i], fy_[i]) - 1.0;
        mollified_ = true;
    }

    bool has_mollified() const { return mollified_; }
    Mat A(double t) const { return interp_mat(A_, t); }
    std::vector<double> b(double t) const { return interp(b_, t); }
    std::vector<double> bprime(double t) const { return interp(bp_, t); }
    double c(double t) const { return interp_scalar(c_, t); }

    /// Monodromy (one period) or span-long variational matrix.
    Mat monodromy(const CellRhs& f, const std::vector<double>& x0, double rtol = 1e-12) const {
        const int n = dim_;
        OdeRhs rhs = [&](double, const std::vector<double>& s, std::vector<double>& ds) {
            ds.assign(n + n * n, 0.0);
            f(s.data(), ds.data());
            Mat j = detail::fd_jacobian(f, std::vector<double>(s.begin(), s.begin() + n));
            for (int c = 0; c < n; ++c)
                for (int r = 0; r < n; ++r)
                    for (int k = 0; k < n; ++k) ds[n + c * n + r] += j(r, k) * s[n + c * n + k];
        };
        std::vector<double> s0 = x0;
        for (int c = 0; c < n; ++c)
            for (int r = 0; r < n; ++r) s0.push_back(r == c ? 1.0 : 0.0);
        OdeOptions o;
        o.rtol = rtol;
        o.atol = rtol * 1e-2;
        auto s = integrate_to(rhs, 0.0, s0, span_, o);
        Mat m(n, n);
        for (int c = 0; c < n; ++c)
            for (int r = 0; r < n; ++r) m(r, c) = s[n + c * n + r];
        return m;
    }

private:
    static std::size_t wrap_index(long i, std::size_t n) {
        long m = i % long(n);
        if (m < 0) m += long(n);
        return std::size_t(m);
    }
    std::size_t index_clamped(long i, std::size_t n) const {
        if (periodic_) return wrap_index(i, n);
        return std::size_t(std::clamp<long>(i, 0, long(n) - 1));
    }

    void fill_base(const CellRhs& f, const std::vector<double>& x0, std::size_t n_samples, double rtol) {
        OdeRhs rhs = [&](double, const std::vector<double>& s, std::vector<double>& ds) {
            ds.resize(s.size());
            f(s.data(), ds.data());
        };
        OdeOptions o;
        o.rtol = rtol;
        o.atol = rtol * 1e-2;
        Trajectory traj;
        Dopri5(rhs, o).integrate(0.0, x0, span_, &traj);
        y_.resize(n_samples);
        fy_.resize(n_samples);
        const double h = span_ / double(periodic_ ? n_samples : n_samples - 1);
        for (std::size_t i = 0; i < n_samples; ++i) {
            y_[i] = traj.at(std::min(span_, h * double(i)));
            fy_[i].resize(dim_);
            f(y_[i].data(), fy_[i].data());
        }
    }

    void fill_adjoint(const CellRhs& f, const std::vector<double>& w0, double rtol) {
        // backward propagation around the period with pointwise renormalization;
        // for an attracting orbit the adjoint's non-neutral mode grows forward,
        // so the backward sweep damps the parasitic content instead of
        // amplifying the seed error of the left Floquet vector
        const std::size_t n = y_.size();
        const double h = span_ / double(n);
        ystar_.assign(n, std::vector<double>(dim_));
        norm_drift_ = 0.0;
        OdeOptions o;
        o.rtol = rtol;
        o.atol = rtol * 1e-2;
        std::vector<double> cur = w0;  // value at phase 0 === phase span
        for (long i = long(n) - 1; i >= 0; --i) {
            const double t1 = (i + 1 == long(n)) ? span_ : h * double(i + 1);
            // adjoint equation reversed in time: d/ds v(-s) = +J^T v
            OdeRhs rev = [&](double s, const std::vector<double>& v, std::vector<double>& dv) {
                Mat j = detail::fd_jacobian(f, y_at_time(-s));
                dv.assign(dim_, 0.0);
                for (int r = 0; r < dim_; ++r)
                    for (int c = 0; c < dim_; ++c) dv[r] += j(c, r) * v[c];
            };
            cur = integrate_to(rev, -t1, cur, -(t1 - h), o);
            const double nrm = dot(cur, fy_[std::size_t(i)]);
            norm_drift_ = std::max(norm_drift_, std::abs(nrm - 1.0));
            if (std::abs(nrm) < 1e-8)
                throw NormalizationBlowup("AdjointOrbitData: <y*, ydot> collapsed during propagation");
            for (auto& v : cur) v /= nrm;
            ystar_[std::size_t(i)] = cur;
        }
        period_defect_ = 0.0;
        for (int r = 0; r < dim_; ++r)
            period_defect_ = std::max(period_defect_, std::abs(ystar_[0][r] - w0[r]));
    }

    void fill_adjoint_backward(const CellRhs& f, const std::vector<double>& wend, double rtol) {
        const std::size_t n = y_.size();
        const double h = span_ / double(n - 1);
        ystar_.assign(n, std::vector<double>(dim_));
        OdeOptions o;
        o.rtol = rtol;
        o.atol = rtol * 1e-2;
        std::vector<double> cur = wend;
        norm_drift_ = 0.0;
        for (long i = long(n) - 1; i >= 0; --i) {
            if (i + 1 < long(n)) {
                // integrate the adjoint backwards over one sample step
                const double t1 = h * double(i + 1);
                OdeRhs rev = [&](double s, const std::vector<double>& v, std::vector<double>& dv) {
                    Mat j = detail::fd_jacobian(f, y_at_time(-s));
                    dv.assign(dim_, 0.0);
                    for (int r = 0; r < dim_; ++r)
                        for (int c = 0; c < dim_; ++c) dv[r] += j(c, r) * v[c];
                };
                cur = integrate_to(rev, -t1, cur, -(t1 - h), o);
            }
            const double nrm = dot(cur, fy_[std::size_t(i)]);
            norm_drift_ = std::max(norm_drift_, std::abs(nrm - 1.0));
            if (std::abs(nrm) < 1e-8)
                throw NormalizationBlowup("AdjointOrbitData: <y*, ydot> collapsed during propagation");
            for (auto& v : cur) v /= nrm;
            ystar_[std::size_t(i)] = cur;
        }
        period_defect_ = 0.0;
    }

    std::vector<double> y_at_time(double t) const { return interp(y_, t); }

    template <class Store>
    std::vector<double> interp(const Store& store, double t) const {
        const std::size_t n = store.size();
        const double h = span_ / double(periodic_ ? n : n - 1);
        double s = t / h;
        if (periodic_) {
            s = std::fmod(s, double(n));
            if (s < 0) s += double(n);
        } else {
            s = std::clamp(s, 0.0, double(n - 1));
        }
        const std::size_t i0 = std::min<std::size_t>(n - 1, std::size_t(s));
        const std::size_t i1 = index_clamped(long(i0) + 1, n);
        const double w = s - double(i0);
        std::vector<double> out(dim_);
        for (int r = 0; r < dim_; ++r) out[r] = (1.0 - w) * store[i0][r] + w * store[i1][r];
        return out;
    }

    Mat interp_mat(const std::vector<Mat>& store, double t) const {
        const std::size_t n = store.size();
        const double h = span_ / double(periodic_ ? n : n - 1);
        double s = t / h;
        if (periodic_) {
            s = std::fmod(s, double(n));
            if (s < 0) s += double(n);
        } else {
            s = std::clamp(s, 0.0, double(n - 1));
        }
        const std::size_t i0 = std::min<std::size_t>(n - 1, std::size_t(s));
        const std::size_t i1 = index_clamped(long(i0) + 1, n);
        const double w = s - double(i0);
        Mat out(dim_, dim_);
        for (int r = 0; r < dim_; ++r)
            for (int c = 0; c < dim_; ++c) out(r, c) = (1.0 - w) * store[i0](r, c) + w * store[i1](r, c);
        return out;
    }

    double interp_scalar(const std::vector<double>& store, double t) const {
        const std::size_t n = store.size();
        const double h = span_ / double(periodic_ ? n : n - 1);
        double s = t / h;
        if (periodic_) {
            s = std::fmod(s, double(n));
            if (s < 0) s += double(n);
        } else {
            s = std::clamp(s, 0.0, double(n - 1));
        }
        const std::size_t i0 = std::min<std::size_t>(n - 1, std::size_t(s));
        const std::size_t i1 = index_clamped(long(i0) + 1, n);
        const double w = s - double(i0);
        return (1.0 - w) * store[i0] + w * store[i1];
    }

    bool periodic_ = true;
    double span_ = 0.0;
    int dim_ = 0;
    bool mollified_ = false;
    double norm_drift_ = 0.0;
    double period_defect_ = 0.0;
    std::vector<std::vector<double>> y_, fy_, ystar_, b_, bp_;
    std::vector<double> c_;
    std::vector<Mat> A_;
};

/// Linear two-point solver for the bounded-solution surrogate
///   v' - A(t) v + <b(t) . v> f(t) = h(t)
/// on a window, with dichotomy boundary conditions: rows annihilating the
/// stable+neutral part at the left end and the unstable part at the right end
/// (so only backward-decaying content enters from the left and forward-
/// decaying from the right). Box-scheme collocation on a uniform grid.
class BoundedSolutionSolver {
public:
    /// bc_left / bc_right: rows (each of length dim) for the two ends.
    BoundedSolutionSolver(std::vector<Mat> m_mid, std::vector<std::vector<double>> bc_left,
                          std::vector<std::vector<double>> bc_right, double dt)
        : m_(std::move(m_mid)), bcl_(std::move(bc_left)), bcr_(std::move(bc_right)), dt_(dt) {
        dim_ = m_.front().rows();
        n_steps_ = m_.size();
        if (bcl_.size() + bcr_.size() != std::size_t(dim_))
            throw BvpFailure("BoundedSolutionSolver: boundary rows must total the system dimension");
    }

    /// h_mid: right-hand side at interval midpoints (n_steps entries).
    std::vector<std::vector<double>> solve(const std::vector<std::vector<double>>& h_mid) const {
        const int n = dim_;
        const std::size_t m = n_steps_;
        const std::size_t n_tot = std::size_t(n) * (m + 1);
        BandMatrix A(int(n_tot), 2 * n - 1, 2 * n - 1);
        std::vector<double> rhs(n_tot, 0.0);
        std::size_t row = 0;
        for (const auto& l : bcl_) {
            for (int c = 0; c < n; ++c) A.add(int(row), c, l[c]);
            ++row;
        }
        for (std::size_t i = 0; i < m; ++i) {
            const Mat& M = m_[i];
            for (int r = 0; r < n; ++r) {
                for (int c = 0; c < n; ++c) {
                    const double mc = 0.5 * M(r, c);
                    A.add(int(row), int(i * n + c), -1.0 * ((r == c) ? 1.0 / dt_ : 0.0) - mc);
                    A.add(int(row), int((i + 1) * n + c), ((r == c) ? 1.0 / dt_ : 0.0) - mc);
                }
                rhs[row] = h_mid[i][r];
                ++row;
            }
        }
        for (const auto& l : bcr_) {
            for (int c = 0; c < n; ++c) A.add(int(row), int(m * n + c), l[c]);
            ++row;
        }
        auto x = BandLu(A).solve(rhs);
        std::vector<std::vector<double>> v(m + 1, std::vector<double>(n));
        for (std::size_t i = 0; i <= m; ++i)
            for (int r = 0; r < n; ++r) v[i][r] = x[i * n + r];
        return v;
    }

private:
    std::vector<Mat> m_;
    std::vector<std::vector<double>> bcl_, bcr_;
    double dt_;
    int dim_ = 0;
    std::size_t n_steps_ = 0;
};

/// Dichotomy boundary rows from the Floquet structure of the homogeneous
/// operator v' = [A - f b^T] v along the unperturbed base orbit: left rows
/// annihilate everything but the unstable modes, right rows annihilate the
/// unstable modes.
struct DichotomyRows {
    std::vector<std::vector<double>> left;
    std::vector<std::vector<double>> right;
    double hyperbolic_rate = 0.0;  // min |log mu| / T over non-neutral modes
};

inline DichotomyRows dichotomy_rows(const AdjointOrbitData& base, double window_left_phase,
                                    double window_right_phase, double rtol = 1e-11) {
    const int n = base.dim();
    const double T = base.span();
    auto fundamental_from = [&](double phase0) {
        OdeRhs rhs = [&](double t, const std::vector<double>& s, std::vector<double>& ds) {
            Mat A = base.A(t);
            const auto f = base.ydot(t);
            const auto b = base.b(t);
            ds.assign(n * n, 0.0);
            for (int c = 0; c < n; ++c)
                for (int r = 0; r < n; ++r) {
                    double acc = 0.0;
                    for (int k = 0; k < n; ++k) acc += (A(r, k) - f[r] * b[k]) * s[c * n + k];
                    ds[c * n + r] = acc;
                }
        };
        std::vector<double> s0(n * n, 0.0);
        for (int i = 0; i < n; ++i) s0[i * n + i] = 1.0;
        OdeOptions o;
        o.rtol = rtol;
        o.atol = rtol * 1e-2;
        auto s = integrate_to(rhs, phase0, s0, phase0 + T, o);
        Mat m(n, n);
        for (int c = 0; c < n; ++c)
            for (int r = 0; r < n; ++r) m(r, c) = s[c * n + r];
        return m;
    };

    auto rows_for = [&](double phase, bool annihilate_unstable) {
        Mat mono = fundamental_from(phase);
        auto mu = eigenvalues(mono);
        // left eigenvectors: real eigenvalue case handled by inverse iteration
        std::vector<std::vector<double>> rows;
        double rate = 1e300;
        for (const auto& m : mu) {
            const bool unstable = std::abs(m) > 1.0 + 1e-6;
            if (std::abs(std::abs(m) - 1.0) > 1e-6) rate = std::min(rate, std::abs(std::log(std::abs(m))) / T);
            if (unstable != annihilate_unstable) continue;
            if (std::abs(m.imag()) < 1e-9 * (1.0 + std::abs(m.real()))) {
                rows.push_back(eigenvector(mono.transposed(), m.real()));
            } else {
                // complex pair: two real rows from Re/Im of the left eigenvector;
                // realified via the invariant 2-plane of the transposed matrix
                if (m.imag() < 0.0) continue;  // take one member of the pair
                Mat mt = mono.transposed();
                // real inverse iteration on (M^T^2 - 2 Re m M^T + |m|^2 I)
                Mat k = mt * mt;
                for (int r = 0; r < n; ++r)
                    for (int c = 0; c < n; ++c)
                        k(r, c) += -2.0 * m.real() * mt(r, c) + ((r == c) ? std::norm(m) : 0.0);
                auto v1 = nullspace_vector(k);
                auto v2 = mt.apply(v1);
                // orthogonalize the plane basis
                const double pr = dot(v1, v2) / dot(v1, v1);
                for (int i = 0; i < n; ++i) v2[i] -= pr * v1[i];
                const double nv2 = norm_2(v2);
                if (nv2 > 1e-12)
                    for (auto& x : v2) x /= nv2;
                rows.push_back(v1);
                rows.push_back(v2);
            }
        }
        return std::pair{rows, rate};
    };

    DichotomyRows out;
    auto [lrows, lrate] = rows_for(window_left_phase, false);   // annihilate stable + neutral
    auto [rrows, rrate] = rows_for(window_right_phase, true);   // annihilate unstable
    out.left = lrows;
    out.right = rrows;
    out.hyperbolic_rate = std::min(lrate, rrate);
    return out;
}

struct ManifoldCorrectionOptions {
    double window = 20.0;   // half-width T_w
    double dt = 0.05;
    double mu_moll = 0.1;
    double kappa = 0.1;     // p-weight in the convergence metric
    int max_iter = 100;
    double tol = 1e-10;
};

/// Windowed Picard iteration for the invariant-manifold correction: produces
/// per-cell fields v_k(t), phases phi_k(t) and drifts p_k(t) on the window
/// [-T_w, T_w], anchored at phi_k(0) = Phi0_k, p_k(0) = P0_k.
struct ManifoldCorrection {
    std::vector<double> t;                              // grid
    std::vector<std::vector<std::vector<double>>> v;    // [cell][time][dim_y]
    std::vector<std::vector<double>> phi;               // [cell][time]
    std::vector<std::vector<std::vector<double>>> p;    // [cell][time][dim_p]
    std::vector<double> deltas;                         // successive-difference norms
    double contraction_factor = 0.0;
    double v_norm = 0.0;
    double hyperbolic_rate = 0.0;
    bool converged = false;

    double phase_condition_defect(const std::vector<AdjointOrbitData>& bases) const {
        // max over interior samples of <b_k(phi_k) . v_k>
        double worst = 0.0;
        const std::size_t m = t.size();
        for (std::size_t k = 0; k < v.size(); ++k)
            for (std::size_t i = m / 8; i + m / 8 < m; ++i)
                worst = std::max(worst, std::abs(dot(bases[k].b(phi[k][i]), v[k][i])));
        return worst;
    }
};

inline ManifoldCorrection invariant_manifold_correction(const GenericLds& lds,
                                                        std::vector<AdjointOrbitData>& bases,
                                                        const std::vector<double>& Phi0,
                                                        const std::vector<double>& P0,
                                                        const ManifoldCorrectionOptions& opt = {}) {
    const std::size_t K = lds.n_cells;
    const int ny = lds.dim_y, np = lds.dim_p;
    const std::size_t m = std::size_t(std::llround(2.0 * opt.window / opt.dt));
    const std::size_t nt = m + 1;

    for (auto& b : bases)
        if (!b.has_mollified())
            throw BvpFailure("invariant_manifold_correction: call mollify() on the base data first");

    ManifoldCorrection mc;
    mc.t.resize(nt);
    for (std::size_t i = 0; i < nt; ++i) mc.t[i] = -opt.window + opt.dt * double(i);

    // boundary projections per cell at the unperturbed end phases; the O(eps)
    // phase drift only perturbs the window-edge layers
    std::vector<DichotomyRows> bc(K);
    double rate = 1e300;
    for (std::size_t k = 0; k < K; ++k) {
        bc[k] = dichotomy_rows(bases[k], Phi0[k] - opt.window, Phi0[k] + opt.window);
        rate = std::min(rate, bc[k].hyperbolic_rate);
    }
    mc.hyperbolic_rate = rate;

    mc.v.assign(K, std::vector<std::vector<double>>(nt, std::vector<double>(ny, 0.0)));
    mc.phi.assign(K, std::vector<double>(nt));
    mc.p.assign(K, std::vector<std::vector<double>>(nt, std::vector<double>(np, 0.0)));
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t i = 0; i < nt; ++i) {
            mc.phi[k][i] = Phi0[k] + mc.t[i];
            for (int d = 0; d < np; ++d) mc.p[k][i][d] = P0[d + k * np];
        }

    std::vector<double> Y(lds.y_size()), P(lds.p_size());
    auto assemble_state = [&](std::size_t i) {
        for (std::size_t k = 0; k < K; ++k) {
            auto z = bases[k].y(mc.phi[k][i]);
            for (int d = 0; d < ny; ++d) Y[k * ny + d] = z[d] + mc.v[k][i][d];
            for (int d = 0; d < np; ++d) P[k * np + d] = mc.p[k][i][d];
        }
    };

    double prev_delta = -1.0;
    std::vector<double> ratios;
    for (int it = 0; it < opt.max_iter; ++it) {
        // per-cell, per-time pieces q_k(t) and h_k(t)
        std::vector<std::vector<double>> q(K, std::vector<double>(nt, 0.0));
        std::vector<std::vector<std::vector<double>>> h(K, std::vector<std::vector<double>>(nt));
        std::vector<std::vector<std::vector<double>>> gz(K, std::vector<std::vector<double>>(nt));
        std::vector<double> fz(ny), fzv(ny), Fk(ny), Gk(np);
        for (std::size_t i = 0; i < nt; ++i) {
            assemble_state(i);
            for (std::size_t k = 0; k < K; ++k) {
                const double ph = mc.phi[k][i];
                const auto z = bases[k].y(ph);
                const auto b = bases[k].b(ph);
                const auto bp = bases[k].bprime(ph);
                // evaluate the cell field at the interpolated point exactly, so
                // the fixed point at eps = 0 is v = 0 to rounding (mixing the
                // interpolated ydot samples here leaves an interpolation floor)
                std::vector<double> fz0(ny);
                lds.f(k, z.data(), fz0.data());
                std::vector<double> zv(ny);
                for (int d = 0; d < ny; ++d) zv[d] = z[d] + mc.v[k][i][d];
                lds.f(k, zv.data(), fzv.data());
                lds.eval_F(k, Y, P, Fk);
                std::vector<double> df(ny);
                for (int d = 0; d < ny; ++d) df[d] = fzv[d] - fz0[d];
                const double bv = dot(bp, mc.v[k][i]);
                const double qk = (dot(df, b) + bv + lds.epsilon * dot(Fk, b)) /
                                  (1.0 + bases[k].c(ph) - bv);
                q[k][i] = qk;
                Mat A = bases[k].A(ph);
                auto Av = A.apply(mc.v[k][i]);
                h[k][i].resize(ny);
                for (int d = 0; d < ny; ++d)
                    h[k][i][d] = df[d] - Av[d] + lds.epsilon * Fk[d] - qk * fz0[d];
                gz[k][i].resize(np);
                lds.g(k, zv.data(), gz[k][i].data());
                lds.eval_G(k, Y, P, Gk);
                for (int d = 0; d < np; ++d) gz[k][i][d] += lds.epsilon * Gk[d];
            }
        }

        // new iterate
        double delta = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            // midpoint operator matrices M = A - f b^T at the current phases
            std::vector<Mat> mm(m, Mat(ny, ny));
            std::vector<std::vector<double>> hm(m, std::vector<double>(ny));
            for (std::size_t i = 0; i < m; ++i) {
                const double ph = 0.5 * (mc.phi[k][i] + mc.phi[k][i + 1]);
                Mat A = bases[k].A(ph);
                const auto f0 = bases[k].ydot(ph);
                const auto b = bases[k].b(ph);
                for (int r = 0; r < ny; ++r)
                    for (int c = 0; c < ny; ++c) mm[i](r, c) = A(r, c) - f0[r] * b[c];
                for (int d = 0; d < ny; ++d) hm[i][d] = 0.5 * (h[k][i][d] + h[k][i + 1][d]);
            }
            BoundedSolutionSolver solver(mm, bc[k].left, bc[k].right, opt.dt);
            auto v_new = solver.solve(hm);

            // phases and drifts by cumulative quadrature anchored at t = 0
            std::vector<double> phi_new(nt), work(nt);
            const std::size_t i0 = nt / 2;
            for (std::size_t i = 0; i < nt; ++i) work[i] = q[k][i];
            auto cq = cumulative_trapezoid(work, opt.dt);
            for (std::size_t i = 0; i < nt; ++i)
                phi_new[i] = Phi0[k] + mc.t[i] + (cq[i] - cq[i0]);
            std::vector<std::vector<double>> p_new(nt, std::vector<double>(np));
            for (int d = 0; d < np; ++d) {
                for (std::size_t i = 0; i < nt; ++i) work[i] = gz[k][i][d];
                auto cg = cumulative_trapezoid(work, opt.dt);
                for (std::size_t i = 0; i < nt; ++i) p_new[i][d] = P0[d + k * np] + (cg[i] - cg[i0]);
            }

            for (std::size_t i = 0; i < nt; ++i) {
                for (int d = 0; d < ny; ++d)
                    delta = std::max(delta, std::abs(v_new[i][d] - mc.v[k][i][d]));
                delta = std::max(delta, std::abs(phi_new[i] - mc.phi[k][i]));
                for (int d = 0; d < np; ++d)
                    delta = std::max(delta, opt.kappa * std::abs(p_new[i][d] - mc.p[k][i][d]));
            }
            mc.v[k] = std::move(v_new);
            mc.phi[k] = std::move(phi_new);
            mc.p[k] = std::move(p_new);
        }

        mc.deltas.push_back(delta);
        if (prev_delta > 0.0 && delta > 0.0) ratios.push_back(delta / prev_delta);
        prev_delta = delta;
        if (delta <= opt.tol) {
            mc.converged = true;
            break;
        }
        if (ratios.size() >= 4) {
            const double mean = std::accumulate(ratios.end() - 3, ratios.end(), 0.0) / 3.0;
            if (mean >= 1.0)
                throw NoContraction("invariant_manifold_correction: iteration not contracting (factor >= 1)");
        }
    }
    if (!ratios.empty()) {
        double prod = 1.0;
        for (double r : ratios) prod *= r;
        mc.contraction_factor = std::pow(prod, 1.0 / double(ratios.size()));
    }
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t i = 0; i < nt; ++i)
            for (int d = 0; d < lds.dim_y; ++d) mc.v_norm = std::max(mc.v_norm, std::abs(mc.v[k][i][d]));
    return mc;
}

/// First-order reduced dynamics on the invariant manifold: phases driven by
/// the adjoint-projected coupling, drifts by g along the corrected state.
struct FirstOrderRun {
    std::vector<double> t;
    std::vector<std::vector<double>> Phi;  // [time][cell]
    std::vector<std::vector<double>> P;    // [time][cell * dim_p]
    bool corrected = false;                // whether the w-correction entered the drift
};

inline FirstOrderRun first_order_manifold_dynamics(const GenericLds& lds,
                                                   std::vector<AdjointOrbitData>& bases,
                                                   const std::vector<double>& Phi0,
                                                   const std::vector<double>& P0, double T,
                                                   bool include_w = true, double dt_out = 0.05,
                                                   const ManifoldCorrectionOptions& wopt = {}) {
    const std::size_t K = lds.n_cells;
    const int ny = lds.dim_y, np = lds.dim_p;

    // optional w-correction along the zero-order flow, solved on a padded
    // window so the interior of [0, T] is clean of boundary effects
    ManifoldCorrection w;
    bool have_w = false;
    if (include_w && lds.epsilon != 0.0) {
        ManifoldCorrectionOptions o = wopt;
        o.window = 0.5 * T + 8.0;
        o.dt = std::min(o.dt, dt_out);
        std::vector<double> Phi_mid(K);
        for (std::size_t k = 0; k < K; ++k) Phi_mid[k] = Phi0[k] + 0.5 * T;
        // anchor p at the zero-order midpoint value
        std::vector<double> P_mid = P0;
        for (std::size_t k = 0; k < K; ++k) {
            const int n_q = 400;
            std::vector<double> samp(n_q + 1);
            std::vector<double> gtmp(np);
            for (int d = 0; d < np; ++d) {
                for (int i = 0; i <= n_q; ++i) {
                    auto z = bases[k].y(Phi0[k] + 0.5 * T * double(i) / double(n_q));
                    lds.g(k, z.data(), gtmp.data());
                    samp[i] = gtmp[d];
                }
                P_mid[k * np + d] += trapezoid(samp, 0.5 * T / double(n_q));
            }
        }
        w = invariant_manifold_correction(lds, bases, Phi_mid, P_mid, o);
        have_w = true;
    }

    // reduced ODE for (Phi, P)
    OdeRhs rhs = [&](double t, const std::vector<double>& s, std::vector<double>& ds) {
        ds.assign(s.size(), 0.0);
        std::vector<double> Y(lds.y_size()), P(lds.p_size());
        for (std::size_t k = 0; k < K; ++k) {
            auto z = bases[k].y(s[k]);
            for (int d = 0; d < ny; ++d) Y[k * ny + d] = z[d];
            if (have_w) {
                // w is stored on the padded window centered at Phi0 + T/2
                const double tw = t - 0.5 * T;
                const std::size_t nt = w.t.size();
                const double h = w.t[1] - w.t[0];
                double si = (tw - w.t.front()) / h;
                si = std::clamp(si, 0.0, double(nt - 1));
                const std::size_t i0 = std::min<std::size_t>(nt - 2, std::size_t(si));
                const double fr = si - double(i0);
                for (int d = 0; d < ny; ++d)
                    Y[k * ny + d] += (1.0 - fr) * w.v[k][i0][d] + fr * w.v[k][i0 + 1][d];
            }
            for (int d = 0; d < np; ++d) P[k * np + d] = s[K + k * np + d];
        }
        std::vector<double> Fk(ny), Gk(np), gk(np);
        for (std::size_t k = 0; k < K; ++k) {
            lds.eval_F(k, Y, P, Fk);
            const auto ys = bases[k].ystar(s[k]);
            ds[k] = 1.0 + lds.epsilon * dot(Fk, ys);
            std::vector<double> zv(Y.begin() + k * ny, Y.begin() + (k + 1) * ny);
            lds.g(k, zv.data(), gk.data());
            lds.eval_G(k, Y, P, Gk);
            for (int d = 0; d < np; ++d) ds[K + k * np + d] = gk[d] + lds.epsilon * Gk[d];
        }
    };

    std::vector<double> s0 = Phi0;
    s0.insert(s0.end(), P0.begin(), P0.end());
    OdeOptions o;
    o.rtol = 1e-11;
    o.atol = 1e-13;
    Trajectory traj;
    Dopri5(rhs, o).integrate(0.0, s0, T, &traj);

    FirstOrderRun run;
    run.corrected = have_w;
    for (double t = 0.0; t <= T + 1e-12; t += dt_out) {
        auto s = traj.at(std::min(t, T));
        run.t.push_back(t);
        run.Phi.push_back(std::vector<double>(s.begin(), s.begin() + K));
        run.P.push_back(std::vector<double>(s.begin() + K, s.end()));
    }
    return run;
}

/// Forward-convergence (asymptotic phase) measurement: given per-cell base
/// orbits y1 (a forward-converging segment) and y2 (its target cycle), find
/// the phase/drift offsets of the solution on the second manifold that track
/// the first, and fit the exponential decay rate of the difference.
struct AsymptoticPhaseReport {
    double rate = 0.0;             // fitted exponential decay rate
    double terminal_mismatch = 0.0;
    std::vector<double> offsets;   // optimized phase offsets per cell
};

inline AsymptoticPhaseReport asymptotic_phase_convergence_test(const GenericLds& lds,
                                                               std::vector<AdjointOrbitData>& seg,
                                                               std::vector<AdjointOrbitData>& cyc,
                                                               const std::vector<double>& Phi0,
                                                               const std::vector<double>& P0, double T,
                                                               double dt_out = 0.1) {
    const std::size_t K = lds.n_cells;
    auto run1 = first_order_manifold_dynamics(lds, seg, Phi0, P0, T, lds.epsilon != 0.0, dt_out);

    // difference of the two manifold states at matched times given offsets
    auto diff_curve = [&](const std::vector<double>& theta) {
        std::vector<double> Phi2(K);
        for (std::size_t k = 0; k < K; ++k) Phi2[k] = theta[k];
        auto run2 = first_order_manifold_dynamics(lds, cyc, Phi2, P0, T, lds.epsilon != 0.0, dt_out);
        std::vector<double> d(run1.t.size(), 0.0);
        for (std::size_t i = 0; i < run1.t.size(); ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                auto a = seg[k].y(run1.Phi[i][k]);
                auto b = cyc[k].y(run2.Phi[i][k]);
                for (int r = 0; r < lds.dim_y; ++r) acc += sqr(a[r] - b[r]);
            }
            d[i] = std::sqrt(acc);
        }
        return d;
    };

    // coordinate descent on the terminal mismatch over the phase offsets
    std::vector<double> theta(K, 0.0);
    auto terminal = [&](const std::vector<double>& th) { return diff_curve(th).back(); };
    double best = terminal(theta);
    for (int round = 0; round < 3; ++round) {
        for (std::size_t k = 0; k < K; ++k) {
            double lo = theta[k] - 0.6 * cyc[k].span(), hi = theta[k] + 0.6 * cyc[k].span();
            for (int it = 0; it < 40; ++it) {
                const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
                auto t1 = theta, t2 = theta;
                t1[k] = m1;
                t2[k] = m2;
                if (terminal(t1) < terminal(t2)) hi = m2; else lo = m1;
            }
            theta[k] = 0.5 * (lo + hi);
        }
        const double now = terminal(theta);
        if (now > 0.99 * best && round > 0) break;
        best = now;
    }

    auto d = diff_curve(theta);
    AsymptoticPhaseReport rep;
    rep.offsets = theta;
    rep.terminal_mismatch = d.back();
    // fit the decay rate on the clean exponential stretch: from the point the
    // difference has dropped below a third of its maximum until it reaches the
    // matching floor
    const double dmax = *std::max_element(d.begin(), d.end());
    const double floor_level = std::max(1e-9, 1e-5 * dmax);
    std::vector<double> ts, ls;
    bool started = false;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (!started && d[i] < 0.3 * dmax) started = true;
        if (!started) continue;
        if (d[i] <= floor_level) break;
        ts.push_back(run1.t[i]);
        ls.push_back(std::log(d[i]));
    }
    // a flat (already matched) difference curve has no decay stretch to fit
    rep.rate = (ts.size() >= 4) ? -fit_slope(ts, ls) : std::numeric_limits<double>::quiet_NaN();
    return rep;
}

}  // namespace solgrid::lattice
