#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "solgrid/core/banded.hpp"
#include "solgrid/core/dense.hpp"
#include "solgrid/core/fft.hpp"
#include "solgrid/core/roots.hpp"
#include "solgrid/core/rng.hpp"
#include "solgrid/model.hpp"

namespace solgrid {

struct NonConvergence : NumericsError {
    std::vector<double> residual_history;
    NonConvergence(const std::string& what, std::vector<double> hist)
        : NumericsError(what), residual_history(std::move(hist)) {}
};
struct DomainTooSmall : NumericsError { using NumericsError::NumericsError; };
struct DegenerateKernel : NumericsError { using NumericsError::NumericsError; };
struct NormalizationSingular : NumericsError { using NumericsError::NumericsError; };
struct FitResidualTooLarge : NumericsError { using NumericsError::NumericsError; };
struct AmbiguousBranch : NumericsError { using NumericsError::NumericsError; };
struct NoAdmissibleRoot : NumericsError { using NumericsError::NumericsError; };

/// Stationary soliton of the model at mu = 0, on a symmetric grid, with the
/// matching delta* returned by the solver.
struct SolitonProfile {
    CglModelParams model;   // delta field holds delta*
    ComplexSamples u;       // full symmetric domain [-X, X]
    double delta_star = 0.0;
    double residual_norm = 0.0;

    double symmetry_defect() const {
        double m = 0.0;
        const std::size_t n = u.size();
        for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::abs(u.values[i] - u.values[n - 1 - i]));
        return m;
    }
};

struct SolitonSolveOptions {
    double newton_tol = 1e-10;   // residual tolerance relative to the equation magnitude
    int max_iter = 60;
    double tail_floor_rel = 1e-8;  // required end decay relative to peak
};

namespace detail_profile {

// Real 2x2 blocks of complex multiplication (c z) and conjugation (d conj(z)).
struct Block {
    double a00, a01, a10, a11;
    static Block mul(cplx c) { return {c.real(), -c.imag(), c.imag(), c.real()}; }
    static Block conj_mul(cplx d) { return {d.real(), d.imag(), d.imag(), -d.real()}; }
    Block operator+(const Block& o) const { return {a00 + o.a00, a01 + o.a01, a10 + o.a10, a11 + o.a11}; }
};

enum class LeftBc { even_reflection, dirichlet };

/// Assemble the real band matrix of phi -> (1+i beta) phi'' + c_i phi + d_i conj(phi)
/// on a uniform grid with 4th-order differences, homogeneous Dirichlet on the
/// right (and on the left unless even reflection is requested).
inline BandMatrix assemble_operator(const std::vector<cplx>& c, const std::vector<cplx>& d, double beta,
                                    double h, LeftBc left) {
    const int m = int(c.size());
    BandMatrix A(2 * m, 5, 5);
    const double s = 1.0 / (12.0 * h * h);
    const double w2[5] = {-s, 16.0 * s, -30.0 * s, 16.0 * s, -s};
    const cplx lap(1.0, beta);
    for (int i = 0; i < m; ++i) {
        for (int o = -2; o <= 2; ++o) {
            int j = i + o;
            if (j >= m) continue;  // Dirichlet ghost on the right
            if (j < 0) {
                if (left == LeftBc::even_reflection) j = -j;  // U(-x) = U(x)
                else continue;                                 // Dirichlet ghost
            }
            if (j >= m) continue;
            const Block blk = Block::mul(lap * w2[o + 2]);
            A.add(2 * i, 2 * j, blk.a00);
            A.add(2 * i, 2 * j + 1, blk.a01);
            A.add(2 * i + 1, 2 * j, blk.a10);
            A.add(2 * i + 1, 2 * j + 1, blk.a11);
        }
        const Block blk = Block::mul(c[i]) + Block::conj_mul(d[i]);
        A.add(2 * i, 2 * i, blk.a00);
        A.add(2 * i, 2 * i + 1, blk.a01);
        A.add(2 * i + 1, 2 * i, blk.a10);
        A.add(2 * i + 1, 2 * i + 1, blk.a11);
    }
    return A;
}

/// 4th-order second difference of a complex array with boundary conventions.
inline std::vector<cplx> second_difference(const std::vector<cplx>& u, double h, LeftBc left) {
    const long m = long(u.size());
    std::vector<cplx> out(m);
    auto at = [&](long j) -> cplx {
        if (j >= m) return 0.0;
        if (j < 0) return left == LeftBc::even_reflection ? u[-j] : cplx(0.0);
        return u[j];
    };
    const double s = 1.0 / (12.0 * h * h);
    for (long i = 0; i < m; ++i)
        out[i] = s * (-at(i - 2) + 16.0 * at(i - 1) - 30.0 * at(i) + 16.0 * at(i + 1) - at(i + 2));
    return out;
}

inline std::vector<cplx> stationary_residual(const std::vector<cplx>& u, const CglModelParams& model,
                                             double delta, double h, LeftBc left) {
    auto lap = second_difference(u, h, left);
    std::vector<cplx> r(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double z = std::norm(u[i]);
        r[i] = cplx(1.0, model.beta) * lap[i] - cplx(1.0, delta) * u[i] - u[i] * model.H(z);
    }
    return r;
}

}  // namespace detail_profile

/// Max-norm of the stationary residual of a full-domain profile, measured at
/// interior points (the end points are Dirichlet data, not equations).
inline double profile_residual_norm(const ComplexSamples& u, const CglModelParams& model, double delta) {
    auto r = detail_profile::stationary_residual(u.values, model, delta, u.dx, detail_profile::LeftBc::dirichlet);
    double m = 0.0;
    for (std::size_t i = 1; i + 1 < r.size(); ++i) m = std::max(m, std::abs(r[i]));
    return m;
}

/// Newton solve of the stationary equation on the even-symmetric subspace,
/// with delta as the unknown balancing the phase gauge Im U(0) = 0.
inline SolitonProfile solve_stationary_soliton(const CglModelParams& model_in, const ComplexSamples& guess,
                                               const SolitonSolveOptions& opt = {}) {
    using namespace detail_profile;
    guess.require_valid();
    CglModelParams model = model_in;
    model.validate();

    // Build the half grid [0, X] from the symmetrized, gauge-rotated guess.
    const double h = guess.dx;
    const double x_left = guess.x0, x_right = guess.x_end();
    if (std::abs(x_left + x_right) > 0.5 * h)
        throw std::invalid_argument("solve_stationary_soliton: guess domain must be symmetric");
    const long mid = long(std::llround(-x_left / h));
    const long m_pts = long(guess.size()) - mid - 1;  // points 1..m after x=0, unknowns 0..m-1
    if (m_pts < 8) throw std::invalid_argument("solve_stationary_soliton: domain too coarse");

    cplx u0 = guess.values[mid];
    const cplx gauge = (std::abs(u0) > 0.0) ? std::exp(cplx(0.0, -std::arg(u0))) : cplx(1.0, 0.0);
    std::vector<cplx> u(m_pts);
    for (long i = 0; i < m_pts; ++i) {
        const cplx up = guess.values[mid + i];
        const cplx um = guess.values[mid - std::min(i, mid)];
        u[i] = gauge * 0.5 * (up + um);
    }
    double delta = model.delta;

    const int n = int(2 * m_pts);
    std::vector<double> residual_history;
    auto residual_vec = [&](const std::vector<cplx>& uu, double dd) {
        auto rc = stationary_residual(uu, model, dd, h, LeftBc::even_reflection);
        std::vector<double> f(n + 1);
        for (long i = 0; i < m_pts; ++i) { f[2 * i] = rc[i].real(); f[2 * i + 1] = rc[i].imag(); }
        f[n] = uu[0].imag();  // gauge
        return f;
    };

    auto fnorm = [&](const std::vector<double>& f) { return norm_inf(f); };
    auto eq_scale = [&](const std::vector<cplx>& uu, double dd) {
        double peak = 0.0;
        for (const cplx& v : uu) peak = std::max(peak, std::abs(v));
        return 1.0 + std::abs(cplx(1.0, dd)) * peak;
    };

    std::vector<double> f = residual_vec(u, delta);
    double fn = fnorm(f);
    bool converged = false;
    for (int it = 0; it < opt.max_iter && !converged; ++it) {
        residual_history.push_back(fn);
        if (fn <= opt.newton_tol * eq_scale(u, delta)) { converged = true; break; }

        std::vector<cplx> c(m_pts), d(m_pts);
        std::vector<double> dcol(n), grow(n, 0.0);
        for (long i = 0; i < m_pts; ++i) {
            const double z = std::norm(u[i]);
            c[i] = -cplx(1.0, delta) - model.H(z) - z * model.H_prime(z);
            d[i] = -u[i] * u[i] * model.H_prime(z);
            const cplx dd = -cplx(0.0, 1.0) * u[i];  // dR/d delta
            dcol[2 * i] = dd.real();
            dcol[2 * i + 1] = dd.imag();
        }
        grow[1] = 1.0;  // d(gauge)/d Im U_0
        BandMatrix J = assemble_operator(c, d, model.beta, h, LeftBc::even_reflection);

        std::vector<double> rhs(n);
        for (int i = 0; i < n; ++i) rhs[i] = -f[i];
        auto [du, ddelta] = BorderedBandSolve{J, dcol, grow, 0.0}.solve(rhs, -f[n]);

        // trust cap on the delta component; the delta response can be stiff
        // near parameter degeneracies and a full step then leaves the basin
        double step = 1.0;
        const double delta_cap = 0.25 * (1.0 + std::abs(delta));
        if (std::abs(ddelta) > delta_cap) step = delta_cap / std::abs(ddelta);

        bool accepted = false;
        for (int back = 0; back < 14; ++back) {
            std::vector<cplx> u_try = u;
            for (long i = 0; i < m_pts; ++i) u_try[i] += step * cplx(du[2 * i], du[2 * i + 1]);
            const double delta_try = delta + step * ddelta;
            auto f_try = residual_vec(u_try, delta_try);
            const double fn_try = fnorm(f_try);
            if (fn_try < fn) {
                u.swap(u_try);
                delta = delta_try;
                f.swap(f_try);
                fn = fn_try;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;  // stalled; the post-loop check reports it
    }
    if (!converged && fn > opt.newton_tol * eq_scale(u, delta)) {
        residual_history.push_back(fn);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.3e", fn);
        throw NonConvergence(std::string("solve_stationary_soliton: Newton stalled at residual ") + buf,
                             residual_history);
    }

    // Mirror to the full domain.
    SolitonProfile prof;
    prof.model = model;
    prof.model.delta = delta;
    prof.delta_star = delta;
    prof.u.dx = h;
    prof.u.x0 = -double(m_pts) * h;
    prof.u.values.resize(2 * m_pts + 1);
    for (long i = 0; i < m_pts; ++i) {
        prof.u.values[m_pts + i] = u[i];
        prof.u.values[m_pts - i] = u[i];
    }
    prof.u.values[2 * m_pts] = 0.0;
    prof.u.values[0] = 0.0;
    prof.residual_norm = profile_residual_norm(prof.u, model, delta);

    const double peak = prof.u.peak_abs();
    const double tail = std::abs(u[m_pts - 1]);
    if (tail > opt.tail_floor_rel * peak)
        throw DomainTooSmall("solve_stationary_soliton: |U| at the boundary is " + std::to_string(tail / peak) +
                             " of peak; enlarge the domain");
    return prof;
}

/// Ramp the quintic coefficients up from zero with warm-started solves and
/// adaptive step halving; the direct Newton from a cubic seed can overshoot
/// when the delta response is stiff (small 2w - B divisor near the
/// Schroedinger limit, where the quintic term is not a weak perturbation).
inline SolitonProfile solve_quintic_by_ramp(const CglModelParams& target, const ComplexSamples& seed,
                                            int n_steps = 6, const SolitonSolveOptions& opt = {}) {
    if (target.kind != Nonlinearity::quintic)
        return solve_stationary_soliton(target, seed, opt);
    CglModelParams m = target;
    m.kind = Nonlinearity::cubic;
    SolitonProfile prof = solve_stationary_soliton(m, seed, opt);
    m.kind = Nonlinearity::quintic;
    double frac = 0.0;
    double step = 1.0 / double(n_steps);
    int attempts = 0;
    while (frac < 1.0) {
        if (++attempts > 512) throw NonConvergence("solve_quintic_by_ramp: continuation step underflow", {});
        const double next = std::min(1.0, frac + step);
        m.eps1 = target.eps1 * next;
        m.eps2 = target.eps2 * next;
        m.delta = prof.delta_star;
        try {
            SolitonProfile trial = solve_stationary_soliton(m, prof.u, opt);
            if (trial.u.peak_abs() < 1e-3 * prof.u.peak_abs())
                throw NonConvergence("solve_quintic_by_ramp: collapsed to the trivial branch", {});
            prof = trial;
            frac = next;
            step = std::min(step * 2.0, 1.0 - frac + 1e-16);
        } catch (const NonConvergence&) {
            step *= 0.5;
            if (step < 1e-6) throw;
        }
    }
    return prof;
}

/// Discretized linearization L_U and its conjugate L_U^dagger on the full
/// domain, in the real 2N x 2N representation (the conjugation term makes the
/// operator real-linear only). The conjugate is taken with respect to the
/// bilinear pairing Re int f g dx, so the conj-term coefficient of L^dagger is
/// the full complex conjugate of the one in L.
struct LinearizedOperator {
    BandMatrix L;
    BandMatrix Ldag;
    double dx;
    std::size_t n_points;
    double x0;

    static std::vector<double> pack(const ComplexSamples& f) {
        std::vector<double> v(2 * f.size());
        for (std::size_t i = 0; i < f.size(); ++i) { v[2 * i] = f.values[i].real(); v[2 * i + 1] = f.values[i].imag(); }
        return v;
    }

    ComplexSamples unpack(const std::vector<double>& v) const {
        ComplexSamples f;
        f.x0 = x0;
        f.dx = dx;
        f.values.resize(n_points);
        for (std::size_t i = 0; i < n_points; ++i) f.values[i] = cplx(v[2 * i], v[2 * i + 1]);
        return f;
    }

    ComplexSamples apply(const ComplexSamples& f) const { return unpack(L.apply(pack(f))); }
    ComplexSamples apply_adjoint(const ComplexSamples& f) const { return unpack(Ldag.apply(pack(f))); }
};

inline LinearizedOperator build_linearization(const SolitonProfile& prof) {
    using namespace detail_profile;
    const std::size_t n = prof.u.size();
    std::vector<cplx> cl(n), dl(n), cd(n), ddg(n);
    for (std::size_t i = 0; i < n; ++i) {
        const cplx ui = prof.u.values[i];
        const double z = std::norm(ui);
        const cplx lin = -cplx(1.0, prof.delta_star) - prof.model.H(z) - z * prof.model.H_prime(z);
        const cplx conj_coef = -ui * ui * prof.model.H_prime(z);
        cl[i] = lin;
        dl[i] = conj_coef;
        cd[i] = lin;                     // multiplication terms are self-conjugate in this pairing
        ddg[i] = std::conj(conj_coef);   // conjugation term picks up the full conjugate
    }
    return LinearizedOperator{
        assemble_operator(cl, dl, prof.model.beta, prof.u.dx, LeftBc::dirichlet),
        assemble_operator(cd, ddg, prof.model.beta, prof.u.dx, LeftBc::dirichlet),
        prof.u.dx, n, prof.u.x0};
}

/// Zero modes of the conjugate linearization with biorthonormalization
/// (phi_i, psi_j) = delta_ij against phi1 = dU/dx (odd) and phi2 = iU (even).
struct AdjointKernel {
    ComplexSamples psi1;  // odd
    ComplexSamples psi2;  // even
    double gram[2][2] = {{0, 0}, {0, 0}};
    double spectral_gap = 0.0;       // |third smallest eigenvalue|
    double kernel_eigs[2] = {0, 0};  // two smallest magnitudes
    double adjoint_residual = 0.0;   // max of |Ldag psi| / |psi|
};

namespace detail_profile {

/// Eigenvalues of A nearest zero via shift-invert Arnoldi with m steps.
inline std::vector<cplx> smallest_eigenvalues(const BandMatrix& A, int m, std::uint64_t seed) {
    const int n = A.size();
    m = std::min(m, n);
    BandLu lu(A);
    std::vector<std::vector<double>> q;
    Mat hess(m + 1, m);
    RngStream rng(seed, 17);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1, 1);
    double nv = norm_2(v);
    for (auto& x : v) x /= nv;
    q.push_back(v);
    int built = 0;
    for (int k = 0; k < m; ++k) {
        std::vector<double> w = lu.solve(q[k]);
        for (int j = 0; j <= k; ++j) {
            const double hjk = dot(q[j], w);
            hess(j, k) = hjk;
            axpy(-hjk, q[j], w);
        }
        // one reorthogonalization pass
        for (int j = 0; j <= k; ++j) {
            const double c = dot(q[j], w);
            hess(j, k) += c;
            axpy(-c, q[j], w);
        }
        const double nw = norm_2(w);
        hess(k + 1, k) = nw;
        built = k + 1;
        if (nw < 1e-300) break;
        for (auto& x : w) x /= nw;
        q.push_back(w);
    }
    Mat hm(built, built);
    for (int i = 0; i < built; ++i)
        for (int j = 0; j < built; ++j) hm(i, j) = hess(i, j);
    auto thetas = eigenvalues(hm);
    std::vector<cplx> lambdas;
    for (const cplx& th : thetas)
        if (std::abs(th) > 1e-300) lambdas.push_back(1.0 / th);
    std::sort(lambdas.begin(), lambdas.end(), [](cplx a, cplx b) { return std::abs(a) < std::abs(b); });
    return lambdas;
}

/// Dominant k-dimensional invariant subspace of inv(A), orthonormal columns.
inline std::vector<std::vector<double>> inverse_subspace(const BandMatrix& A, int k, int iters, std::uint64_t seed) {
    const int n = A.size();
    BandLu lu(A);
    RngStream rng(seed, 29);
    std::vector<std::vector<double>> x(k, std::vector<double>(n));
    for (auto& col : x)
        for (auto& v : col) v = rng.uniform(-1, 1);
    for (int it = 0; it < iters; ++it) {
        for (auto& col : x) col = lu.solve(col);
        for (int i = 0; i < k; ++i) {  // modified Gram-Schmidt
            for (int j = 0; j < i; ++j) axpy(-dot(x[j], x[i]), x[j], x[i]);
            const double nv = norm_2(x[i]);
            if (nv < 1e-300) throw NumericsError("inverse_subspace: collapsed basis");
            for (auto& v : x[i]) v /= nv;
        }
    }
    return x;
}

inline ComplexSamples unpack_samples(const std::vector<double>& v, double x0, double dx) {
    ComplexSamples f;
    f.x0 = x0;
    f.dx = dx;
    f.values.resize(v.size() / 2);
    for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] = cplx(v[2 * i], v[2 * i + 1]);
    return f;
}

/// Parity projection of a centered sample set: keep the odd or even part.
inline ComplexSamples parity_project(const ComplexSamples& f, bool odd) {
    ComplexSamples g = f;
    const std::size_t n = f.size();
    for (std::size_t i = 0; i < n; ++i) {
        const cplx mirrored = f.values[n - 1 - i];
        g.values[i] = 0.5 * (f.values[i] + (odd ? -mirrored : mirrored));
    }
    return g;
}

inline double l2_norm(const ComplexSamples& f) {
    double s = 0.0;
    for (const cplx& v : f.values) s += std::norm(v);
    return std::sqrt(s * f.dx);
}

}  // namespace detail_profile

struct AdjointKernelOptions {
    int arnoldi_steps = 30;
    double zero_tol_factor = 1e-6;  // "zero" eigenvalue threshold = factor * spectral gap
    std::uint64_t seed = 12345;
};

inline AdjointKernel compute_adjoint_kernel(const SolitonProfile& prof, const AdjointKernelOptions& opt = {}) {
    using namespace detail_profile;
    LinearizedOperator lin = build_linearization(prof);

    auto lambdas = smallest_eigenvalues(lin.Ldag, opt.arnoldi_steps, opt.seed);
    if (lambdas.size() < 3) throw DegenerateKernel("compute_adjoint_kernel: spectrum probe too small");
    const double gap = std::abs(lambdas[2]);
    const double ztol = opt.zero_tol_factor * gap;
    if (!(std::abs(lambdas[0]) <= ztol && std::abs(lambdas[1]) <= ztol))
        throw DegenerateKernel("compute_adjoint_kernel: kernel dimension != 2 at tolerance " + std::to_string(ztol));

    auto basis = inverse_subspace(lin.Ldag, 2, 6, opt.seed);
    ComplexSamples v1 = unpack_samples(basis[0], prof.u.x0, prof.u.dx);
    ComplexSamples v2 = unpack_samples(basis[1], prof.u.x0, prof.u.dx);

    auto pick_parity = [&](bool odd) {
        ComplexSamples a = parity_project(v1, odd), b = parity_project(v2, odd);
        return (l2_norm(a) >= l2_norm(b)) ? a : b;
    };
    ComplexSamples psi1 = pick_parity(true);
    ComplexSamples psi2 = pick_parity(false);

    ComplexSamples phi1 = prof.u.derivative();  // odd
    ComplexSamples phi2 = prof.u;               // phi2 = iU
    for (auto& v : phi2.values) v *= cplx(0.0, 1.0);

    const double n11 = pairing(phi1, psi1);
    const double n22 = pairing(phi2, psi2);
    const double scale1 = l2_norm(phi1) * l2_norm(psi1);
    const double scale2 = l2_norm(phi2) * l2_norm(psi2);
    if (std::abs(n11) < 1e-10 * scale1 || std::abs(n22) < 1e-10 * scale2)
        throw NormalizationSingular("compute_adjoint_kernel: <phi_i, psi_i> vanishes");
    for (auto& v : psi1.values) v /= n11;
    for (auto& v : psi2.values) v /= n22;

    AdjointKernel out;
    out.psi1 = psi1;
    out.psi2 = psi2;
    out.gram[0][0] = pairing(phi1, psi1);
    out.gram[0][1] = pairing(phi1, psi2);
    out.gram[1][0] = pairing(phi2, psi1);
    out.gram[1][1] = pairing(phi2, psi2);
    out.spectral_gap = gap;
    out.kernel_eigs[0] = std::abs(lambdas[0]);
    out.kernel_eigs[1] = std::abs(lambdas[1]);
    const double r1 = l2_norm(lin.apply_adjoint(psi1)) / l2_norm(psi1);
    const double r2 = l2_norm(lin.apply_adjoint(psi2)) / l2_norm(psi2);
    out.adjoint_residual = std::max(r1, r2);
    return out;
}

/// Exponential tail data: U ~ r e^{lambda |x|}, psi1 ~ s e^{lambda |x|} sign x,
/// psi2 ~ q e^{lambda |x|}, lambda = -alpha + i omega from the dispersion
/// identity lambda^2 (1+i beta) = (1+i delta).
struct TailAsymptotics {
    double alpha = 0.0;
    double omega = 0.0;
    cplx r, s, q;
    double a = 0.0, theta1 = 0.0;
    double b = 0.0, theta2 = 0.0;
    double theta = 0.0;
    double fit_residual = 0.0;  // worst relative LSQ residual over the three fits

    cplx lambda() const { return cplx(-alpha, omega); }

    double quadra_residual(double beta, double delta) const {
        return std::abs(lambda() * lambda() * cplx(1.0, beta) - cplx(1.0, delta));
    }
};

struct TailFitOptions {
    double window_hi = 1e-4;  // fit window by amplitude relative to peak
    double window_lo = 1e-8;
    double max_rel_residual = 1e-2;
};

namespace detail_profile {

struct TailFit {
    cplx coeff;
    double rel_residual;
};

inline TailFit fit_tail(const ComplexSamples& f, cplx lambda, std::size_t i_lo, std::size_t i_hi) {
    cplx num = 0.0;
    double den = 0.0, fnorm = 0.0;
    for (std::size_t i = i_lo; i <= i_hi; ++i) {
        const cplx e = std::exp(lambda * f.x(i));
        num += std::conj(e) * f.values[i];
        den += std::norm(e);
        fnorm += std::norm(f.values[i]);
    }
    const cplx coeff = num / den;
    double res = 0.0;
    for (std::size_t i = i_lo; i <= i_hi; ++i) {
        const cplx e = std::exp(lambda * f.x(i));
        res += std::norm(f.values[i] - coeff * e);
    }
    return {coeff, std::sqrt(res / std::max(fnorm, 1e-300))};
}

}  // namespace detail_profile

inline TailAsymptotics extract_tail_asymptotics(const SolitonProfile& prof, const AdjointKernel& kernel,
                                                const TailFitOptions& opt = {}) {
    using namespace detail_profile;
    const cplx ratio = cplx(1.0, prof.delta_star) / cplx(1.0, prof.model.beta);
    cplx root = std::sqrt(ratio);
    if (std::abs(root.real()) < 1e-12 * std::abs(root))
        throw AmbiguousBranch("extract_tail_asymptotics: dispersion roots coincide on the imaginary axis");
    if (root.real() < 0.0) root = -root;
    const cplx lambda = -root;

    TailAsymptotics tail;
    tail.alpha = -lambda.real();
    tail.omega = lambda.imag();

    const double peak = prof.u.peak_abs();
    const std::size_t n = prof.u.size();
    const std::size_t mid = n / 2;
    std::size_t i_lo = mid, i_hi = mid;
    for (std::size_t i = mid; i < n; ++i)
        if (std::abs(prof.u.values[i]) <= opt.window_hi * peak) { i_lo = i; break; }
    for (std::size_t i = n; i-- > mid;)
        if (std::abs(prof.u.values[i]) >= opt.window_lo * peak) { i_hi = i; break; }
    if (i_hi <= i_lo + 8)
        throw FitResidualTooLarge("extract_tail_asymptotics: tail window too short; enlarge domain");

    const TailFit fr = fit_tail(prof.u, lambda, i_lo, i_hi);
    const TailFit fs = fit_tail(kernel.psi1, lambda, i_lo, i_hi);
    const TailFit fq = fit_tail(kernel.psi2, lambda, i_lo, i_hi);
    tail.r = fr.coeff;
    tail.s = fs.coeff;
    tail.q = fq.coeff;
    tail.fit_residual = std::max({fr.rel_residual, fs.rel_residual, fq.rel_residual});
    if (tail.fit_residual > opt.max_rel_residual)
        throw FitResidualTooLarge("extract_tail_asymptotics: tail not asymptotic, residual " +
                                  std::to_string(tail.fit_residual));

    const cplx ab1 = 4.0 * cplx(0.0, 1.0) * tail.s * tail.r * cplx(1.0, prof.model.beta) * lambda;
    const cplx ab2 = 4.0 * cplx(0.0, 1.0) * tail.q * tail.r * cplx(1.0, prof.model.beta) * lambda;
    tail.a = std::abs(ab1);
    tail.theta1 = std::arg(ab1);
    tail.b = std::abs(ab2);
    tail.theta2 = std::arg(ab2);
    tail.theta = tail.theta2 - tail.theta1;
    return tail;
}

/// The functional F(phi) = Re int e^{-i phi} psi2 G(e^{i phi} U) dx together
/// with the selected root phi* of F'(phi+pi/4) + F'(phi-pi/4) = 0 and the
/// derived constants c and gamma.
struct PerturbationData {
    std::vector<double> F_samples;  // on the uniform grid phi_j = 2 pi j / n
    double phi_star = 0.0;
    double c = 0.0;
    double gamma = 0.0;
    double ctilde = 0.0;  // |int psi2 dx|
    double zeta = 0.0;    // arg int psi2 dx
    std::vector<double> admissible_roots;

    double F(double phi) const { return PeriodicInterpolant(F_samples)(phi); }
};

enum class QuadratureRule { trapezoid, simpson };

inline PerturbationData compute_perturbation_functional(const SolitonProfile& prof, const AdjointKernel& kernel,
                                                        const BreakingTerm& G, std::size_t n_phi = 1024,
                                                        QuadratureRule rule = QuadratureRule::trapezoid) {
    PerturbationData out;
    out.F_samples.resize(n_phi);
    std::vector<double> integrand(prof.u.size());
    for (std::size_t j = 0; j < n_phi; ++j) {
        const double phi = 2.0 * pi * double(j) / double(n_phi);
        const cplx rot = std::exp(cplx(0.0, phi));
        for (std::size_t i = 0; i < prof.u.size(); ++i)
            integrand[i] = (std::conj(rot) * kernel.psi2.values[i] * G(rot * prof.u.values[i])).real();
        out.F_samples[j] = (rule == QuadratureRule::trapezoid) ? trapezoid(integrand, prof.u.dx)
                                                               : simpson(integrand, prof.u.dx);
    }

    std::vector<cplx> psi2_int(prof.u.size());
    for (std::size_t i = 0; i < prof.u.size(); ++i) psi2_int[i] = kernel.psi2.values[i];
    const cplx zsum = trapezoid(psi2_int, prof.u.dx);
    out.ctilde = std::abs(zsum);
    out.zeta = std::arg(zsum);

    auto fprime = spectral_derivative_periodic(out.F_samples, 1);
    auto fsecond = spectral_derivative_periodic(out.F_samples, 2);
    PeriodicInterpolant Fp(fprime), Fpp(fsecond);
    const double fp_scale = norm_inf(fprime);
    const double fpp_scale = norm_inf(fsecond);

    auto sum_fp = [&](double phi) { return Fp(phi + pi / 4.0) + Fp(phi - pi / 4.0); };
    auto roots = bracketed_roots(sum_fp, 0.0, 2.0 * pi, int(2 * n_phi));

    std::vector<double> admissible;
    for (double r : roots) {
        const double c = 2.0 * Fp(r + pi / 4.0);
        const double pp = Fpp(r + pi / 4.0) + Fpp(r - pi / 4.0);
        if (std::abs(c) > 1e-8 * std::max(fp_scale, 1e-300) &&
            std::abs(pp) > 1e-8 * std::max(fpp_scale, 1e-300))
            admissible.push_back(wrap_2pi(r));
    }
    std::sort(admissible.begin(), admissible.end());
    if (admissible.empty())
        throw NoAdmissibleRoot("compute_perturbation_functional: no root of (F'(+pi/4)+F'(-pi/4)) passes the c, F'' checks");
    out.admissible_roots = admissible;

    // Prefer the branch with c < 0 (the basic-case convention phi* = zeta),
    // breaking ties by the smallest representative.
    double chosen = admissible.front();
    for (double r : admissible)
        if (2.0 * Fp(r + pi / 4.0) < 0.0) { chosen = r; break; }
    out.phi_star = chosen;
    out.c = 2.0 * Fp(chosen + pi / 4.0);
    PeriodicInterpolant F(out.F_samples);
    out.gamma = (F(chosen + pi / 4.0) - F(chosen - pi / 4.0)) / out.c;
    return out;
}

/// Named clauses of the genericity conditions with margins; report-only.
struct ChaosConditionReport {
    bool a_nonzero = false, b_nonzero = false, omega_nonzero = false;
    bool omega_ne_two_gamma_alpha = false, cos_theta_nonzero = false, mixed_combo_nonzero = false;
    bool quadratic_inequality = false;
    double margin_a = 0, margin_b = 0, margin_omega = 0, margin_omega_gamma = 0;
    double margin_cos_theta = 0, margin_mixed = 0, margin_quadratic = 0;
    bool pass = false;
};

inline ChaosConditionReport check_chaos_conditions(const TailAsymptotics& tail, const PerturbationData& pert,
                                                   double zero_tol = 1e-12) {
    ChaosConditionReport rep;
    const double g = pert.gamma;
    rep.margin_a = std::abs(tail.a);
    rep.margin_b = std::abs(tail.b);
    rep.margin_omega = std::abs(tail.omega);
    rep.margin_omega_gamma = std::abs(tail.omega - 2.0 * g * tail.alpha);
    rep.margin_cos_theta = std::abs(std::cos(tail.theta));
    rep.margin_mixed = std::abs(tail.alpha * std::sin(tail.theta) + tail.omega * std::cos(tail.theta));
    const double ab = tail.a / tail.b;
    const double lhs = 4.0 * tail.omega * ab * (std::cos(tail.theta) + 2.0 * g * std::sin(tail.theta));
    const double rhs = sqr(1.0 + 2.0 * g * ab * (tail.alpha * std::cos(tail.theta) + tail.omega * std::sin(tail.theta)));
    rep.margin_quadratic = rhs - lhs;

    rep.a_nonzero = rep.margin_a > zero_tol;
    rep.b_nonzero = rep.margin_b > zero_tol;
    rep.omega_nonzero = rep.margin_omega > zero_tol;
    rep.omega_ne_two_gamma_alpha = rep.margin_omega_gamma > zero_tol;
    rep.cos_theta_nonzero = rep.margin_cos_theta > zero_tol;
    rep.mixed_combo_nonzero = rep.margin_mixed > zero_tol;
    rep.quadratic_inequality = rep.margin_quadratic > 0.0;
    rep.pass = rep.a_nonzero && rep.b_nonzero && rep.omega_nonzero && rep.omega_ne_two_gamma_alpha &&
               rep.cos_theta_nonzero && rep.mixed_combo_nonzero && rep.quadratic_inequality;
    return rep;
}

}  // namespace solgrid
