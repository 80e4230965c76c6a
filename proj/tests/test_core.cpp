#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "solgrid/core/banded.hpp"
#include "solgrid/core/dense.hpp"
#include "solgrid/core/fft.hpp"
#include "solgrid/core/quadrature.hpp"
#include "solgrid/core/rk45.hpp"
#include "solgrid/core/rng.hpp"
#include "solgrid/core/roots.hpp"

using namespace solgrid;

TEST_CASE("dense LU solves random systems") {
    RngStream rng(42, 0);
    for (int trial = 0; trial < 5; ++trial) {
        const int n = 3 + trial * 7;
        Mat a(n, n);
        std::vector<double> x_true(n);
        for (int i = 0; i < n; ++i) {
            x_true[i] = rng.uniform(-1, 1);
            for (int j = 0; j < n; ++j) a(i, j) = rng.uniform(-1, 1);
            a(i, i) += 2.0;
        }
        auto b = a.apply(x_true);
        auto x = solve_dense(a, b);
        for (int i = 0; i < n; ++i) CHECK(x[i] == doctest::Approx(x_true[i]).epsilon(1e-10));
    }
}

TEST_CASE("eigenvalues of a known matrix") {
    // companion of (x-1)(x-2)(x-3) = x^3 - 6x^2 + 11x - 6
    auto ev = cubic_roots_companion(-6.0, 11.0, -6.0);
    REQUIRE(ev.size() == 3);
    CHECK(ev[0].real() == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(ev[1].real() == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(ev[2].real() == doctest::Approx(3.0).epsilon(1e-10));

    // rotation-like block has the conjugate pair +-i alongside 5
    Mat r(3, 3);
    r(0, 1) = -1.0; r(1, 0) = 1.0; r(2, 2) = 5.0;
    auto ev2 = eigenvalues(r);
    std::sort(ev2.begin(), ev2.end(), [](cplx a, cplx b) { return std::abs(a) < std::abs(b); });
    CHECK(std::abs(ev2[0] - cplx(0, -1)) < 1e-10);
    CHECK(std::abs(ev2[1] - cplx(0, 1)) < 1e-10);
    CHECK(std::abs(ev2[2] - cplx(5, 0)) < 1e-10);
}

TEST_CASE("cubic closed form agrees with companion matrix") {
    RngStream rng(7, 3);
    for (int t = 0; t < 50; ++t) {
        const double a2 = rng.uniform(-3, 3), a1 = rng.uniform(-3, 3), a0 = rng.uniform(-3, 3);
        auto r1 = cubic_roots_companion(a2, a1, a0);
        auto r2 = cubic_roots_closed_form(a2, a1, a0);
        // compare as multisets by nearest matching
        for (auto& z : r1) {
            double best = 1e99;
            for (auto& w : r2) best = std::min(best, std::abs(z - w));
            CHECK(best < 1e-8);
        }
    }
}

TEST_CASE("banded LU matches dense on random banded systems") {
    RngStream rng(9, 1);
    for (int trial = 0; trial < 4; ++trial) {
        const int n = 40 + 13 * trial, kl = 3, ku = 5;
        BandMatrix ab(n, kl, ku);
        Mat a(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = std::max(0, i - kl); j <= std::min(n - 1, i + ku); ++j) {
                const double v = rng.uniform(-1, 1) + (i == j ? 3.0 : 0.0);
                ab.at(i, j) = v;
                a(i, j) = v;
            }
        std::vector<double> x_true(n);
        for (int i = 0; i < n; ++i) x_true[i] = rng.uniform(-2, 2);
        auto b = a.apply(x_true);
        auto x = BandLu(ab).solve(b);
        for (int i = 0; i < n; ++i) CHECK(x[i] == doctest::Approx(x_true[i]).epsilon(1e-9));
    }
}

TEST_CASE("bordered banded solve handles nearly singular core") {
    // A = diag(1, eps, 1, ...) style near-singularity killed by the border
    const int n = 20;
    BandMatrix a(n, 1, 1);
    for (int i = 0; i < n; ++i) a.at(i, i) = (i == n / 2) ? 1e-13 : 2.0;
    for (int i = 0; i + 1 < n; ++i) { a.at(i, i + 1) = 0.3; a.at(i + 1, i) = -0.2; }
    std::vector<double> c(n, 0.0), r(n, 0.0);
    c[n / 2] = 1.0;
    r[n / 2] = 1.0;
    std::vector<double> b(n, 1.0);
    auto [x, y] = BorderedBandSolve{a, c, r, 0.0}.solve(b, 0.5);
    // residual check on the full bordered system
    auto ax = a.apply(x);
    for (int i = 0; i < n; ++i) CHECK(std::abs(ax[i] + c[i] * y - b[i]) < 1e-9);
    CHECK(std::abs(dot(r, x) - 0.5) < 1e-9);
}

TEST_CASE("dopri5 integrates the harmonic oscillator with dense output") {
    OdeRhs rhs = [](double, const std::vector<double>& y, std::vector<double>& dy) {
        dy = {y[1], -y[0]};
    };
    OdeOptions opt;
    opt.rtol = 1e-10;
    opt.atol = 1e-12;
    auto traj = integrate_dense(rhs, 0.0, {1.0, 0.0}, 10.0, opt);
    for (double t = 0.0; t <= 10.0; t += 0.37) {
        auto y = traj.at(t);
        CHECK(y[0] == doctest::Approx(std::cos(t)).epsilon(1e-7));
        CHECK(y[1] == doctest::Approx(-std::sin(t)).epsilon(1e-7));
    }
}

TEST_CASE("dopri5 tolerance halving shrinks endpoint error") {
    OdeRhs rhs = [](double, const std::vector<double>& y, std::vector<double>& dy) {
        dy = {y[0] * y[1], -y[1] + std::sin(y[0])};
    };
    auto run = [&](double tol) {
        OdeOptions opt;
        opt.rtol = tol;
        opt.atol = tol * 1e-2;
        return integrate_to(rhs, 0.0, {0.4, 1.1}, 8.0, opt);
    };
    auto ref = run(1e-13);
    auto coarse = run(1e-7);
    auto fine = run(1e-9);
    double ec = std::abs(coarse[0] - ref[0]) + std::abs(coarse[1] - ref[1]);
    double ef = std::abs(fine[0] - ref[0]) + std::abs(fine[1] - ref[1]);
    CHECK(ef < std::max(ec, 1e-12));
    CHECK(ec < 1e-6);
}

TEST_CASE("event location finds circle crossing") {
    OdeRhs rhs = [](double, const std::vector<double>& y, std::vector<double>& dy) {
        dy = {y[1], -y[0]};
    };
    auto traj = integrate_dense(rhs, 0.0, {1.0, 0.0}, 8.0);
    // y0 crosses zero upward at t = 3*pi/2
    auto t = locate_event(traj, [](double, const std::vector<double>& y) { return y[0]; }, 0.1, 0.05, +1);
    CHECK(t == doctest::Approx(1.5 * pi).epsilon(1e-8));
}

TEST_CASE("fft round trip and spectral derivative") {
    const std::size_t n = 128;
    std::vector<cplx> a(n);
    RngStream rng(3, 3);
    for (auto& x : a) x = cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));
    auto b = fft_inverse(fft_forward(a));
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);

    std::vector<double> f(n), want(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = 2.0 * pi * double(i) / double(n);
        f[i] = std::sin(3.0 * x) + 0.5 * std::cos(x);
        want[i] = 3.0 * std::cos(3.0 * x) - 0.5 * std::sin(x);
    }
    auto df = spectral_derivative_periodic(f, 1);
    for (std::size_t i = 0; i < n; ++i) CHECK(df[i] == doctest::Approx(want[i]).epsilon(1e-10));

    PeriodicInterpolant interp(f);
    for (double phi = 0.0; phi < 2.0 * pi; phi += 0.173)
        CHECK(interp(phi) == doctest::Approx(std::sin(3 * phi) + 0.5 * std::cos(phi)).epsilon(1e-10));
}

TEST_CASE("quadrature rules on decaying integrand") {
    const double dx = 0.01;
    std::vector<double> f;
    for (double x = -20.0; x <= 20.0 + 1e-12; x += dx) f.push_back(std::exp(-x * x / 2.0));
    const double want = std::sqrt(2.0 * pi);
    CHECK(trapezoid(f, dx) == doctest::Approx(want).epsilon(1e-12));
    CHECK(simpson(f, dx) == doctest::Approx(want).epsilon(1e-12));
    CHECK(adaptive_simpson([](double x) { return std::exp(-x * x / 2.0); }, -20, 20) ==
          doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("brent and scan find trig roots") {
    auto roots = bracketed_roots([](double x) { return std::sin(x); }, 0.5, 10.0, 200);
    REQUIRE(roots.size() == 3);
    CHECK(roots[0] == doctest::Approx(pi).epsilon(1e-12));
    CHECK(roots[1] == doctest::Approx(2 * pi).epsilon(1e-12));
    CHECK(roots[2] == doctest::Approx(3 * pi).epsilon(1e-12));
}

TEST_CASE("rng streams are deterministic and decorrelated") {
    RngStream a(123, 5), b(123, 5), c(123, 6);
    for (int i = 0; i < 100; ++i) {
        const double x = a.uniform();
        CHECK(x == b.uniform());
        CHECK(x != c.uniform());
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
    }
    // rough moment sanity for the normal draw
    RngStream d(9, 0);
    double m = 0, v = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) { const double x = d.normal(); m += x; v += x * x; }
    m /= n; v = v / n - m * m;
    CHECK(std::abs(m) < 0.03);
    CHECK(v == doctest::Approx(1.0).epsilon(0.05));
}
