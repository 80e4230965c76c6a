#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "solgrid/nls_oracle.hpp"
#include "solgrid/soliton_profile.hpp"

using namespace solgrid;

namespace {

SolitonProfile& cubic_profile() {
    static SolitonProfile prof = [] {
        NlsOracle oracle{0.1, 0.02};
        return solve_stationary_soliton(oracle.model(), oracle.seed(20.0, 0.01));
    }();
    return prof;
}

AdjointKernel& cubic_kernel() {
    static AdjointKernel k = compute_adjoint_kernel(cubic_profile());
    return k;
}

}  // namespace

TEST_CASE("oracle closed form satisfies the cubic stationary equation") {
    NlsOracle oracle{0.1, 0.02};
    auto model = oracle.model();
    auto seed = oracle.seed(20.0, 0.02);
    // residual of the exact solution limited only by FD truncation,
    // ~ h^4 |U^(6)| |1+i beta| / 90 ~ 3e-5 at this resolution
    const double res = profile_residual_norm(seed, model, oracle.delta());
    CHECK(res < 1e-4);

    // S and Q satisfy their defining ODEs (finite-difference check)
    const double h = 1e-4;
    for (double y : {-2.3, -0.7, 0.4, 1.9}) {
        const double G = NlsOracle::Gamma(y), Gp = NlsOracle::Gamma_prime(y);
        const double lnG = -NlsOracle::ln_cosh(y);
        const double Spp = (oracle.S(y + h) - 2 * oracle.S(y) + oracle.S(y - h)) / (h * h);
        const double lhsS = Spp - oracle.S(y) + 2 * G * G * oracle.S(y);
        const double rhsS = -oracle.w * (2 - 3 * G * G + 4 * G * G * lnG) * Gp + 4 * oracle.B * G * G * Gp;
        CHECK(lhsS == doctest::Approx(rhsS).epsilon(1e-5));
        const double Qpp = (oracle.Q(y + h) - 2 * oracle.Q(y) + oracle.Q(y - h)) / (h * h);
        const double lhsQ = Qpp - oracle.Q(y) + 6 * G * G * oracle.Q(y);
        const double rhsQ = oracle.w * (2 * G - 9 * G * G * G - 4 * G * G * G * lnG) + 4 * oracle.B * G * G * G;
        CHECK(lhsQ == doctest::Approx(rhsQ).epsilon(1e-5));
    }
}

TEST_CASE("newton solver reproduces the closed-form soliton") {
    NlsOracle oracle{0.1, 0.02};
    const auto& prof = cubic_profile();
    CHECK(prof.residual_norm < 1e-8);
    CHECK(prof.delta_star == doctest::Approx(oracle.delta()).epsilon(1e-8));
    CHECK(prof.symmetry_defect() == 0.0);
    CHECK(std::abs(prof.u.interp(0.0).imag()) < 1e-12);

    double err = 0.0, peak = 0.0;
    for (std::size_t i = 0; i < prof.u.size(); ++i) {
        err = std::max(err, std::abs(prof.u.values[i] - oracle.profile(prof.u.x(i))));
        peak = std::max(peak, std::abs(prof.u.values[i]));
    }
    CHECK(err / peak < 1e-6);
}

TEST_CASE("perturbed seed converges to the same solution") {
    NlsOracle oracle{0.1, 0.02};
    auto seed = oracle.seed(20.0, 0.02);
    RngStream rng(5, 5);
    for (auto& v : seed.values) v *= 1.0 + 0.05 * rng.uniform(-1, 1);
    auto prof = solve_stationary_soliton(oracle.model(), seed);
    CHECK(prof.delta_star == doctest::Approx(oracle.delta()).epsilon(1e-7));
}

TEST_CASE("grid refinement shrinks the truncation error at 4th order") {
    // large domain so the Dirichlet-tail contribution (which scales like
    // tail/h^2) stays far below the interior truncation error
    NlsOracle oracle{0.12, 0.015};
    auto model = oracle.model();
    const double res_h = profile_residual_norm(oracle.seed(32.0, 0.04), model, oracle.delta());
    const double res_h2 = profile_residual_norm(oracle.seed(32.0, 0.02), model, oracle.delta());
    const double order = std::log2(res_h / res_h2);
    CHECK(order > 3.6);  // 2nd order would give ~2; the scheme is 4th order
}

TEST_CASE("quintic continuation from the cubic seed") {
    // moderate-amplitude soliton (B = 0.5) so eps = 1e-3 is a weak
    // perturbation; the deep NLS limit has |u|^4 ~ 1e3 and is strongly shifted
    NlsOracle oracle{0.5, 0.1};
    auto model = oracle.model();
    model.kind = Nonlinearity::quintic;
    model.eps1 = 1e-3;
    model.eps2 = 1e-3;
    auto prof = solve_quintic_by_ramp(model, oracle.seed(20.0, 0.02));
    CHECK(prof.residual_norm < 1e-7);
    CHECK(prof.u.peak_abs() > 1.0);  // not the trivial branch
    const double shift = std::abs(prof.delta_star - oracle.delta());
    MESSAGE("quintic delta shift = ", shift);
    CHECK(shift > 0.0);
    CHECK(shift < 0.05 * std::abs(oracle.delta()));
}

TEST_CASE("linearization annihilates the symmetry modes and is band-adjoint") {
    const auto& prof = cubic_profile();
    auto lin = build_linearization(prof);

    ComplexSamples phi1 = prof.u.derivative();
    ComplexSamples phi2 = prof.u;
    for (auto& v : phi2.values) v *= cplx(0.0, 1.0);

    // skip the two outermost rows at each end: those are Dirichlet data points
    const double scale = prof.u.peak_abs();
    auto r1 = lin.apply(phi1);
    auto r2 = lin.apply(phi2);
    double m1 = 0, m2 = 0;
    for (std::size_t i = 2; i + 2 < r1.size(); ++i) {
        m1 = std::max(m1, std::abs(r1.values[i]));
        m2 = std::max(m2, std::abs(r2.values[i]));
    }
    CHECK(m1 / scale < 5e-6);  // translation mode, limited by FD truncation
    // phase mode is zero exactly to the stationarity residual of the profile
    CHECK(m2 < 10.0 * prof.residual_norm + 1e-12);

    // adjoint identity for the bilinear pairing: Sigma L^T Sigma = Ldag,
    // checked weakly through random, strongly decaying test functions
    RngStream rng(11, 2);
    for (int t = 0; t < 3; ++t) {
        ComplexSamples f = prof.u, g = prof.u;
        for (std::size_t i = 0; i < f.size(); ++i) {
            const double env = std::exp(-0.1 * sqr(f.x(i)));
            f.values[i] = env * cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));
            g.values[i] = env * cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));
        }
        const double left = pairing(lin.apply(f), g);
        const double right = pairing(f, lin.apply_adjoint(g));
        CHECK(std::abs(left - right) < 1e-7 * (std::abs(left) + 1.0));
    }
}

TEST_CASE("zero profile reduces the linearization to constant coefficients") {
    SolitonProfile zero;
    zero.model = NlsOracle{0.1, 0.02}.model();
    zero.delta_star = zero.model.delta;
    zero.u.x0 = -5.0;
    zero.u.dx = 0.1;
    zero.u.values.assign(101, cplx(0.0, 0.0));
    auto lin = build_linearization(zero);
    // apply to e^{ikx} windowed: operator must act as (1+ib)(d^2/dx^2) - (1+id)
    ComplexSamples f = zero.u;
    for (std::size_t i = 0; i < f.size(); ++i) f.values[i] = std::exp(-0.5 * sqr(f.x(i)));
    auto lf = lin.apply(f);
    // compare against direct evaluation at an interior point
    const std::size_t i = 50;
    const double h = f.dx;
    const cplx lap = (-f.values[i - 2] + 16.0 * f.values[i - 1] - 30.0 * f.values[i] + 16.0 * f.values[i + 1] -
                      f.values[i + 2]) / (12.0 * h * h);
    const cplx want = cplx(1.0, zero.model.beta) * lap - cplx(1.0, zero.delta_star) * f.values[i];
    CHECK(std::abs(lf.values[i] - want) < 1e-12);
}

TEST_CASE("adjoint kernel: parity, biorthonormality, NLS limit") {
    NlsOracle oracle{0.1, 0.02};
    const auto& prof = cubic_profile();
    const auto& ker = cubic_kernel();

    CHECK(std::abs(ker.gram[0][0] - 1.0) < 1e-8);
    CHECK(std::abs(ker.gram[1][1] - 1.0) < 1e-8);
    CHECK(std::abs(ker.gram[0][1]) < 1e-8);
    CHECK(std::abs(ker.gram[1][0]) < 1e-8);
    CHECK(ker.spectral_gap > 1e-3);
    CHECK(ker.adjoint_residual < 1e-6);

    // parity within tolerance relative to peak
    auto parity_defect = [](const ComplexSamples& f, bool odd) {
        double m = 0.0, peak = 0.0;
        const std::size_t n = f.size();
        for (std::size_t i = 0; i < n; ++i) {
            const cplx mirror = f.values[n - 1 - i];
            m = std::max(m, std::abs(f.values[i] + (odd ? mirror : -mirror)));
            peak = std::max(peak, std::abs(f.values[i]));
        }
        return m / peak;
    };
    CHECK(parity_defect(ker.psi1, true) < 1e-8);
    CHECK(parity_defect(ker.psi2, false) < 1e-8);

    // first-order closed forms: psi1 ~ tau1 (i G' + S)(x/d2), psi2 ~ tau2 (G + iQ)(x/d2)
    // with tau fixed by the computed normalization; compare shapes pointwise.
    const double d1 = oracle.d1(), d2 = oracle.d2(), B = oracle.B;
    const double tau1 = -3.0 * d1 / (2.0 * B);
    const double tau2 = d1 / (2.0 * d2 * (2.0 * oracle.w - B));
    double err1 = 0.0, err2 = 0.0, pk1 = 0.0, pk2 = 0.0;
    for (std::size_t i = 0; i < prof.u.size(); ++i) {
        const double y = prof.u.x(i) / d2;
        err1 = std::max(err1, std::abs(ker.psi1.values[i] - tau1 * oracle.psi1_raw_scaled(y)));
        err2 = std::max(err2, std::abs(ker.psi2.values[i] - tau2 * oracle.psi2_raw_scaled(y)));
        pk1 = std::max(pk1, std::abs(ker.psi1.values[i]));
        pk2 = std::max(pk2, std::abs(ker.psi2.values[i]));
    }
    // corrections are O(w^2 + B^2) ~ 1e-2 relative
    CHECK(err1 / pk1 < 0.05);
    CHECK(err2 / pk2 < 0.05);
}

TEST_CASE("raw adjoint inner products reproduce the leading scaling laws") {
    // I1 = -d1 / tau1 ~ (2/3) B, I2 = (d1/d2) / tau2 ~ 2 (2w - B), where tau_i
    // is the coefficient of the computed (normalized) psi_i along the leading
    // oracle shape; the projections are exact against the first-order parts.
    auto measure = [](double B, double w) {
        NlsOracle oracle{B, w};
        auto prof = solve_stationary_soliton(oracle.model(), oracle.seed(22.0, 0.02));
        auto ker = compute_adjoint_kernel(prof);
        const double d2 = oracle.d2();
        double n1 = 0, dnm1 = 0, n2 = 0, dnm2 = 0;
        for (std::size_t i = 0; i < prof.u.size(); ++i) {
            const double y = prof.u.x(i) / d2;
            const cplx w1 = cplx(0.0, 1.0) * NlsOracle::Gamma_prime(y);
            const cplx w2 = NlsOracle::Gamma(y);
            n1 += (std::conj(w1) * ker.psi1.values[i]).real();
            dnm1 += std::norm(w1);
            n2 += (std::conj(w2) * ker.psi2.values[i]).real();
            dnm2 += std::norm(w2);
        }
        const double tau1 = n1 / dnm1, tau2 = n2 / dnm2;
        return std::pair{-oracle.d1() / tau1, (oracle.d1() / d2) / tau2};
    };

    // slope in B of I1 at w = B/4, Richardson across base points
    auto slopeB_I1 = [&](double B) {
        const double h = 0.25 * B;
        const auto [i1p, i2p] = measure(B + h, B / 4);
        const auto [i1m, i2m] = measure(B - h, B / 4);
        return std::pair{(i1p - i1m) / (2 * h), (i2p - i2m) / (2 * h)};
    };
    const auto [s1a, s2a] = slopeB_I1(0.08);
    const auto [s1b, s2b] = slopeB_I1(0.04);
    const double slope_I1_B = 2 * s1b - s1a;  // extrapolate base-point error
    const double slope_I2_B = 2 * s2b - s2a;
    CHECK(std::abs(slope_I1_B - 2.0 / 3.0) < 0.05 * (2.0 / 3.0));
    CHECK(std::abs(slope_I2_B - (-2.0)) < 0.05 * 2.0);

    // slope in w of I2 at fixed small B
    auto slopew_I2 = [&](double B, double w0) {
        const double h = 0.5 * w0;
        const auto [i1p, i2p] = measure(B, w0 + h);
        const auto [i1m, i2m] = measure(B, w0 - h);
        (void)i1p; (void)i1m;
        return (i2p - i2m) / (2 * h);
    };
    const double sw_a = slopew_I2(0.08, 0.012);
    const double sw_b = slopew_I2(0.04, 0.006);
    const double slope_I2_w = 2 * sw_b - sw_a;
    CHECK(std::abs(slope_I2_w - 4.0) < 0.05 * 4.0);
}

TEST_CASE("tail asymptotics: dispersion identity and closed-form coefficients") {
    NlsOracle oracle{0.1, 0.02};
    const auto& prof = cubic_profile();
    const auto& ker = cubic_kernel();
    auto tail = extract_tail_asymptotics(prof, ker);

    CHECK(tail.quadra_residual(prof.model.beta, prof.delta_star) < 1e-12);
    CHECK(tail.alpha == doctest::Approx(oracle.alpha()).epsilon(1e-8));
    CHECK(tail.omega == doctest::Approx(oracle.omega()).epsilon(1e-8));
    CHECK(tail.a > 0.0);
    CHECK(tail.b > 0.0);
    CHECK(tail.fit_residual < 1e-3);

    // closed-form leading tail coefficients (first order in w, B)
    CHECK(std::abs(tail.r - oracle.r_coeff()) / std::abs(oracle.r_coeff()) < 0.02);
    CHECK(std::abs(tail.s - oracle.s_coeff()) / std::abs(oracle.s_coeff()) < 0.05);
    CHECK(std::abs(tail.q - oracle.q_coeff()) / std::abs(oracle.q_coeff()) < 0.05);

    // independent log-linear regression for alpha on a shifted window
    const double peak = prof.u.peak_abs();
    std::vector<double> xs, ys;
    for (std::size_t i = prof.u.size() / 2; i < prof.u.size(); ++i) {
        const double amp = std::abs(prof.u.values[i]);
        if (amp < 3e-5 * peak && amp > 3e-7 * peak) {
            xs.push_back(prof.u.x(i));
            ys.push_back(std::log(amp));
        }
    }
    const double alpha_fit = -fit_slope(xs, ys);
    CHECK(std::abs(alpha_fit - tail.alpha) / tail.alpha < 0.01);

    // two-window robustness of the fitted r
    TailFitOptions shifted;
    shifted.window_hi = 3e-5;
    shifted.window_lo = 3e-7;
    auto tail2 = extract_tail_asymptotics(prof, ker, shifted);
    CHECK(std::abs(tail2.r - tail.r) / std::abs(tail.r) < 0.01);
}

TEST_CASE("perturbation functional: closed form for G = 1, zero for G = 0, quadrature oracle for G = u") {
    const auto& prof = cubic_profile();
    const auto& ker = cubic_kernel();

    auto pert = compute_perturbation_functional(prof, ker, BreakingTerm::one());
    // F(phi) = ctilde cos(phi - zeta)
    for (std::size_t j = 0; j < pert.F_samples.size(); j += 37) {
        const double phi = 2.0 * pi * double(j) / double(pert.F_samples.size());
        CHECK(pert.F_samples[j] == doctest::Approx(pert.ctilde * std::cos(phi - pert.zeta)).epsilon(1e-8));
    }
    CHECK(std::abs(wrap_pi(pert.phi_star - pert.zeta)) < 1e-8);
    CHECK(pert.c == doctest::Approx(-pert.ctilde * std::sqrt(2.0)).epsilon(1e-8));
    CHECK(std::abs(pert.gamma) < 1e-8);

    // G = 0 gives F identically zero and no admissible root
    CHECK_THROWS_AS(
        compute_perturbation_functional(prof, ker, BreakingTerm::custom([](cplx) { return cplx(0.0, 0.0); })),
        NoAdmissibleRoot);

    // G(u) = u: dual-quadrature agreement on gamma and c
    auto p_trap = compute_perturbation_functional(prof, ker, BreakingTerm::identity(), 1024, QuadratureRule::trapezoid);
    auto p_simp = compute_perturbation_functional(prof, ker, BreakingTerm::identity(), 1024, QuadratureRule::simpson);
    CHECK(p_trap.c == doctest::Approx(p_simp.c).epsilon(1e-9));
    CHECK(std::abs(p_trap.gamma - p_simp.gamma) < 1e-9);
}

TEST_CASE("chaos conditions pass at NLS-limit parameters and fail for omega = 0") {
    const auto& prof = cubic_profile();
    const auto& ker = cubic_kernel();
    auto tail = extract_tail_asymptotics(prof, ker);
    auto pert = compute_perturbation_functional(prof, ker, BreakingTerm::one());

    auto rep = check_chaos_conditions(tail, pert);
    CHECK(rep.pass);
    CHECK(rep.margin_quadratic > 0.0);

    auto tail0 = tail;
    tail0.omega = 0.0;
    auto rep0 = check_chaos_conditions(tail0, pert);
    CHECK_FALSE(rep0.omega_nonzero);
    CHECK_FALSE(rep0.pass);
}

TEST_CASE("kernel eigenvalue structure: exactly two near zero, measured gap") {
    const auto& ker = cubic_kernel();
    CHECK(ker.kernel_eigs[0] < 1e-6 * ker.spectral_gap);
    CHECK(ker.kernel_eigs[1] < 1e-6 * ker.spectral_gap);
    MESSAGE("spectral gap = ", ker.spectral_gap);
}
