#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "solgrid/lattice.hpp"
#include "solgrid/manifold.hpp"

using namespace solgrid;
using namespace solgrid::lattice;
using pairdyn::PairParams;
using pairdyn::PairState;

namespace {

// bench cell with basic-case cosine forcing; O(1) scales
PairParams bench_cell(double nu = 0.8, double Omega = -0.3, double v = 0.0) {
    auto p = PairParams::with_cosine_forcing(1.0, 0.45, 3.0, 1.1, 1.0, 1.0, 1.0, 0.6, nu, Omega, v);
    p.R_min = 0.5;
    return p;
}

// planar oscillator cell: attracting unit circle with phase speed 1
void planar_f(const double* y, double* dy) {
    const double r2 = y[0] * y[0] + y[1] * y[1];
    dy[0] = y[0] - y[1] - y[0] * r2;
    dy[1] = y[0] + y[1] - y[1] * r2;
}

GenericLds planar_ring(std::size_t K, double eps) {
    GenericLds lds;
    lds.dim_y = 2;
    lds.dim_p = 1;
    lds.n_cells = K;
    lds.epsilon = eps;
    lds.coupling_bound = 6.0;
    lds.f = [](std::size_t, const double* y, double* dy) { planar_f(y, dy); };
    lds.g = [](std::size_t, const double* y, double* dp) { dp[0] = y[0] + 0.2; };
    lds.F_eps = [K](std::size_t k, const std::vector<double>& Y, const std::vector<double>&, double* out) {
        const std::size_t l = (k + K - 1) % K, r = (k + 1) % K;
        for (int d = 0; d < 2; ++d) out[d] = Y[2 * l + d] + Y[2 * r + d] - 2.0 * Y[2 * k + d];
    };
    lds.G_eps = [K](std::size_t k, const std::vector<double>& Y, const std::vector<double>&, double* out) {
        const std::size_t r = (k + 1) % K;
        out[0] = 0.3 * (Y[2 * r] - Y[2 * k + 1]);
    };
    return lds;
}

std::vector<AdjointOrbitData> planar_bases(std::size_t K, double mu_moll = 0.1) {
    std::vector<AdjointOrbitData> bases;
    CellRhs f = [](const double* y, double* dy) { planar_f(y, dy); };
    for (std::size_t k = 0; k < K; ++k) {
        auto d = AdjointOrbitData::periodic(f, {1.0, 0.0}, 2.0 * pi, 4096);
        d.mollify(f, mu_moll);
        bases.push_back(std::move(d));
    }
    return bases;
}

}  // namespace

TEST_CASE("lattice config snapping and decoupled identity") {
    auto cfg = make_lattice_config(bench_cell(), 3, 10.0, Boundary::free);
    CHECK(std::abs(std::remainder(cfg.L, pi / std::abs(cfg.cell.omega))) < 1e-12);
    CHECK(std::abs(cfg.snap_shift) <= 0.5 * pi / std::abs(cfg.cell.omega) + 1e-12);

    // decoupled limit: cells evolve by the two-soliton system exactly
    LatticeConfig far = cfg;
    far.L = 800.0;  // e^{-alpha L} underflows to zero
    REQUIRE(far.decoupled());
    PairLatticeState cells = {{2.1, 0.7, 1.3, 0.0}, {2.6, -0.4, 0.2, 0.1}, {1.9, 2.2, 4.0, -0.2}};
    auto d = lds_rhs_pairs(cells, far);
    for (std::size_t j = 0; j < cells.size(); ++j) {
        auto want = pairdyn::pair_rhs(cells[j], far.cell);
        CHECK(d[j].R == want.R);
        CHECK(d[j].Phi == want.Phi);
        CHECK(d[j].Psi == want.Psi);
        CHECK(d[j].p == want.p);
    }
}

TEST_CASE("raw chain: single soliton and mirror symmetry") {
    auto cfg = make_lattice_config(bench_cell(0.9, -0.2), 2, 9.0, Boundary::free);
    auto rp = RawParams::from_config(cfg);

    // single soliton: no coupling, phase driven by the forcing alone
    RawState one;
    one.xi = {3.0};
    one.phi = {1.2};
    RawState d1;
    lds_rhs_raw(one, rp, d1);
    CHECK(d1.xi[0] == 0.0);
    CHECK(d1.phi[0] == doctest::Approx(rp.mu * rp.F(1.2) - rp.delta_offset).epsilon(1e-14));

    // mirror: xi -> -xi reversed, phi reversed: d(xi) negates, d(phi) preserved
    RngStream rng(3, 1);
    RawState s;
    const int n = 6;
    double x = 0.0;
    for (int j = 0; j < n; ++j) {
        x += 18.0 + rng.uniform(0, 2);
        s.xi.push_back(x);
        s.phi.push_back(rng.uniform(0, 2 * pi));
    }
    RawState m;
    for (int j = n - 1; j >= 0; --j) {
        m.xi.push_back(-s.xi[j]);
        m.phi.push_back(s.phi[j]);
    }
    RawState ds, dm;
    lds_rhs_raw(s, rp, ds);
    lds_rhs_raw(m, rp, dm);
    for (int j = 0; j < n; ++j) {
        CHECK(dm.xi[j] == doctest::Approx(-ds.xi[n - 1 - j]).epsilon(1e-12));
        CHECK(dm.phi[j] == doctest::Approx(ds.phi[n - 1 - j]).epsilon(1e-12));
    }
}

TEST_CASE("pair representation matches the raw model to the coupling order") {
    // derivatives of the pair coordinates computed from the raw chain approach
    // the decoupled pair system at rate e^{-2 alpha L} relative (next-order
    // inter-pair coupling), and the discrepancy halves in log when L grows by
    // ln 2 / alpha
    auto cell = bench_cell(0.7, -0.25);
    PairLatticeState cells = {{1.9, 0.8, 1.1, 0.05}, {2.3, -0.5, 0.4, -0.1}, {2.0, 1.9, 3.3, 0.0}};
    auto discrepancy = [&](double L_req) {
        auto cfg = make_lattice_config(cell, cells.size(), L_req, Boundary::free);
        auto d_lat = lds_rhs_pairs(cells, cfg);
        double worst = 0.0;
        for (std::size_t j = 0; j < cells.size(); ++j) {
            auto want = pairdyn::pair_rhs(cells[j], cfg.cell);
            worst = std::max({worst, std::abs(d_lat[j].R - want.R), std::abs(d_lat[j].Phi - want.Phi),
                              std::abs(d_lat[j].Psi - want.Psi), std::abs(d_lat[j].p - want.p)});
        }
        return worst;
    };
    const double dL = std::log(2.0) / cell.alpha;
    const double e1 = discrepancy(9.0);
    const double e2 = discrepancy(9.0 + 2.0 * pi);  // snapped grid: move by full pi-units
    CHECK(e1 > 0.0);
    CHECK(e2 < e1);
    // inter-pair terms scale as e^{-2 alpha L}: growing L by ~2pi drops them
    // by e^{-4 pi alpha} in this configuration; just require a strong decay
    CHECK(e2 < 0.05 * e1);
    (void)dL;
}

TEST_CASE("interaction locality: a cell only feels its neighbors") {
    auto cfg = make_lattice_config(bench_cell(), 5, 9.0, Boundary::free);
    PairLatticeState cells(5);
    RngStream rng(9, 9);
    for (auto& c : cells) c = {1.8 + rng.uniform(0, 1), rng.uniform(0, 6), rng.uniform(0, 6), rng.uniform(-1, 1)};
    auto d0 = lds_rhs_pairs(cells, cfg);
    PairLatticeState pert = cells;
    pert[2].R += 0.17;
    pert[2].Psi -= 0.3;
    auto d1 = lds_rhs_pairs(pert, cfg);
    for (std::size_t j : {std::size_t(0), std::size_t(4)}) {
        CHECK(d1[j].R == d0[j].R);
        CHECK(d1[j].Phi == d0[j].Phi);
        CHECK(d1[j].Psi == d0[j].Psi);
        CHECK(d1[j].p == d0[j].p);
    }
    bool neighbor_changed = false;
    for (std::size_t j : {std::size_t(1), std::size_t(3)})
        if (d1[j].Phi != d0[j].Phi || d1[j].R != d0[j].R) neighbor_changed = true;
    CHECK(neighbor_changed);
}

TEST_CASE("translation-symmetric data stays synchronized on the ring") {
    auto cfg = make_lattice_config(bench_cell(0.5, -0.1), 4, 9.0, Boundary::periodic);
    PairState c0{2.05, 1.0, 0.7, 0.0};
    PairLatticeState cells(4, c0);
    auto traj = integrate_lattice(cells, cfg, 40.0);
    auto end = unpack_cells(traj.at(40.0));
    for (std::size_t j = 1; j < end.size(); ++j) {
        CHECK(std::abs(end[j].R - end[0].R) < 1e-9);
        CHECK(std::abs(end[j].Phi - end[0].Phi) < 1e-9);
        CHECK(std::abs(end[j].Psi - end[0].Psi) < 1e-9);
        CHECK(std::abs(end[j].p - end[0].p) < 1e-9);
    }
}

TEST_CASE("uncoupled ring reproduces independent pair runs; time reversal returns") {
    // a long-lived, non-chaotic bound cell: solver-path differences between
    // the stacked and single-cell integrations stay unamplified over T = 100
    auto regular = PairParams::with_cosine_forcing(1.0, 1.9555, 2.052, 2.4334, 1.0, 1.0, 1.0, 0.0,
                                                   0.2811, 0.6643);
    regular.R_min = 0.7;
    auto cfg = make_lattice_config(regular, 3, 9.0, Boundary::free);
    LatticeConfig far = cfg;
    far.L = 800.0;
    PairLatticeState cells = {{2.2, 1.0, 0.5, 0.0}, {2.3, 0.9, 0.8, 0.1}, {2.25, 1.2, 0.6, -0.2}};
    auto traj = integrate_lattice(cells, far, 100.0);
    auto end = unpack_cells(traj.at(100.0));
    for (std::size_t j = 0; j < cells.size(); ++j) {
        pairdyn::PairIntegrateOptions io;
        io.rtol = 1e-10;
        io.atol = 1e-12;
        auto single = pairdyn::integrate_pair(cells[j], far.cell, 100.0, io);
        auto se = single.at(100.0);
        CHECK(std::abs(end[j].R - se[0]) < 1e-8);
        CHECK(std::abs(end[j].Phi - se[1]) < 1e-8);
        CHECK(std::abs(end[j].Psi - se[2]) < 1e-8);
        CHECK(std::abs(end[j].p - se[3]) < 1e-8);
    }

    // forward then reverse over a short horizon returns the initial state
    auto fwd = integrate_lattice(cells, cfg, 5.0);
    auto mid = unpack_cells(fwd.at(5.0));
    OdeRhs rev = [&cfg](double, const std::vector<double>& v, std::vector<double>& dv) {
        auto d = lds_rhs_pairs(unpack_cells(v), cfg);
        dv = pack_cells(d);
        for (auto& x : dv) x = -x;
    };
    OdeOptions o;
    o.rtol = 1e-11;
    o.atol = 1e-13;
    auto back = integrate_to(rev, 0.0, pack_cells(mid), 5.0, o);
    auto start = pack_cells(cells);
    for (std::size_t i = 0; i < back.size(); ++i) CHECK(std::abs(back[i] - start[i]) < 1e-8);
}

TEST_CASE("adjoint orbit: planar oracle, constancy, scalar cell") {
    CellRhs f = [](const double* y, double* dy) { planar_f(y, dy); };
    auto base = AdjointOrbitData::periodic(f, {1.0, 0.0}, 2.0 * pi, 4096);
    CHECK(base.normalization_drift() < 1e-7);
    CHECK(base.periodicity_defect() < 1e-6);
    for (double t = 0.0; t < 2.0 * pi; t += 0.37) {
        auto ys = base.ystar(t);
        CHECK(std::abs(ys[0] - (-std::sin(t))) < 1e-5);
        CHECK(std::abs(ys[1] - std::cos(t)) < 1e-5);
    }

    // <y* . v> constant along any variational solution
    OdeRhs var = [&](double t, const std::vector<double>& v, std::vector<double>& dv) {
        // Jacobian of the planar field along the circle
        const double c = std::cos(t), s = std::sin(t);
        // f'(y) at y = (c, s): d/dy [y - y r^2 ...]
        Mat j(2, 2);
        j(0, 0) = 1.0 - (3.0 * c * c + s * s);
        j(0, 1) = -1.0 - 2.0 * c * s;
        j(1, 0) = 1.0 - 2.0 * c * s;
        j(1, 1) = 1.0 - (c * c + 3.0 * s * s);
        dv = {j(0, 0) * v[0] + j(0, 1) * v[1], j(1, 0) * v[0] + j(1, 1) * v[1]};
    };
    OdeOptions o;
    o.rtol = 1e-12;
    o.atol = 1e-14;
    Trajectory vt;
    Dopri5(var, o).integrate(0.0, {0.3, -0.8}, 2.0 * pi, &vt);
    double c0 = 0.0;
    bool first = true;
    for (double t = 0.0; t <= 2.0 * pi; t += 0.1) {
        auto v = vt.at(t);
        auto ys = base.ystar(t);
        const double c = ys[0] * v[0] + ys[1] * v[1];
        if (first) { c0 = c; first = false; }
        CHECK(std::abs(c - c0) < 1e-5 * (1.0 + std::abs(c0)));
    }

    // scalar cell: y* = 1/f(y) is forced by the normalization
    CellRhs f1 = [](const double* y, double* dy) { dy[0] = 1.0 + 0.3 * std::sin(y[0]); };
    auto seg = AdjointOrbitData::segment(f1, {0.2}, 8.0, {1.0});
    for (double t = 0.5; t < 7.5; t += 0.9) {
        auto y = seg.y(t);
        double fy;
        f1(y.data(), &fy);
        CHECK(seg.ystar(t)[0] == doctest::Approx(1.0 / fy).epsilon(1e-6));
    }
}

TEST_CASE("manifold correction: zero at eps = 0, linear scaling, phase condition") {
    const std::size_t K = 3;
    auto bases = planar_bases(K);
    std::vector<double> Phi0 = {0.3, 2.1, 4.4}, P0 = {0.0, 0.1, -0.2};
    ManifoldCorrectionOptions opt;
    opt.window = 8.0;
    opt.dt = 0.05;

    auto lds0 = planar_ring(K, 0.0);
    auto mc0 = invariant_manifold_correction(lds0, bases, Phi0, P0, opt);
    CHECK(mc0.converged);
    CHECK(mc0.deltas.size() <= 2);
    CHECK(mc0.v_norm < 1e-14);

    std::vector<double> logeps, lognorm;
    double prev_factor = 0.0;
    for (double eps : {0.08, 0.04, 0.02, 0.01}) {
        auto lds = planar_ring(K, eps);
        auto mc = invariant_manifold_correction(lds, bases, Phi0, P0, opt);
        CHECK(mc.converged);
        CHECK(mc.contraction_factor < 1.0);
        if (prev_factor > 0.0) CHECK(mc.contraction_factor <= prev_factor * 1.25);
        prev_factor = mc.contraction_factor;
        logeps.push_back(std::log(eps));
        lognorm.push_back(std::log(mc.v_norm));
    }
    const double slope = fit_slope(logeps, lognorm);
    MESSAGE("||V|| vs eps slope = ", slope);
    CHECK(slope > 0.9);
    CHECK(slope < 1.1);

    // the anchored phase condition <b(phi_k) . v_k> = 0 holds to the order of
    // the collocation scheme: second order in the grid step
    {
        auto lds = planar_ring(K, 0.08);
        auto mc_h = invariant_manifold_correction(lds, bases, Phi0, P0, opt);
        ManifoldCorrectionOptions fine = opt;
        fine.dt = 0.5 * opt.dt;
        auto mc_f = invariant_manifold_correction(lds, bases, Phi0, P0, fine);
        const double d_h = mc_h.phase_condition_defect(bases);
        const double d_f = mc_f.phase_condition_defect(bases);
        MESSAGE("phase-condition defect: ", d_h, " -> ", d_f, " on step halving");
        CHECK(d_h < 1e-3);
        CHECK(d_f < 0.35 * d_h);  // ~4x for a second-order scheme
    }
}

TEST_CASE("manifold correction: window doubling leaves the interior unchanged") {
    const std::size_t K = 2;
    auto bases = planar_bases(K);
    std::vector<double> Phi0 = {0.9, 3.6}, P0 = {0.0, 0.0};
    auto lds = planar_ring(K, 0.05);
    ManifoldCorrectionOptions o1, o2;
    o1.window = 6.0;
    o2.window = 12.0;
    o1.dt = o2.dt = 0.05;
    auto m1 = invariant_manifold_correction(lds, bases, Phi0, P0, o1);
    auto m2 = invariant_manifold_correction(lds, bases, Phi0, P0, o2);
    // compare v on |t| <= 3 (interior of the smaller window)
    double worst = 0.0;
    const std::size_t off1 = std::size_t((o1.window - 3.0) / o1.dt);
    const std::size_t off2 = std::size_t((o2.window - 3.0) / o2.dt);
    const std::size_t count = std::size_t(6.0 / o1.dt);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t i = 0; i <= count; ++i)
            for (int d = 0; d < 2; ++d)
                worst = std::max(worst, std::abs(m1.v[k][off1 + i][d] - m2.v[k][off2 + i][d]));
    MESSAGE("interior window-doubling change = ", worst, " vs ||V|| = ", m1.v_norm);
    CHECK(worst <= std::exp(-m1.hyperbolic_rate * 3.0) * m1.v_norm + 1e-12);
}

TEST_CASE("first-order reduced dynamics: eps = 0 exactness and superlinear accuracy") {
    const std::size_t K = 3;
    auto bases = planar_bases(K);
    std::vector<double> Phi0 = {0.2, 1.9, 3.8}, P0 = {0.0, 0.0, 0.0};
    const double T = 6.0;

    // eps = 0: phases advance linearly, p by plain quadrature of g
    {
        auto lds = planar_ring(K, 0.0);
        auto run = first_order_manifold_dynamics(lds, bases, Phi0, P0, T, false, 0.1);
        for (std::size_t i = 0; i < run.t.size(); ++i)
            for (std::size_t k = 0; k < K; ++k)
                CHECK(std::abs(run.Phi[i][k] - (Phi0[k] + run.t[i])) < 1e-10);  // exact: no coupling term
        // p_k(t) = int (cos(Phi0 + s) + 0.2) ds
        const auto& pT = run.P.back();
        for (std::size_t k = 0; k < K; ++k) {
            const double want = std::sin(Phi0[k] + T) - std::sin(Phi0[k]) + 0.2 * T;
            CHECK(std::abs(pT[k] - want) < 1e-5);  // base-orbit interpolation limited
        }
    }

    // superlinear deviation from the direct lattice over an eps ladder
    std::vector<double> devs;
    ManifoldCorrectionOptions wopt;
    wopt.window = 8.0;
    wopt.dt = 0.05;
    for (double eps : {0.04, 0.02, 0.01, 0.005}) {
        auto lds = planar_ring(K, eps);
        auto mc = invariant_manifold_correction(lds, bases, Phi0, P0, wopt);
        // start the direct run on the corrected manifold state
        std::vector<double> Y0(lds.y_size()), P0v = P0;
        const std::size_t mid = mc.t.size() / 2;
        for (std::size_t k = 0; k < K; ++k) {
            auto z = bases[k].y(Phi0[k]);
            for (int d = 0; d < 2; ++d) Y0[2 * k + d] = z[d] + mc.v[k][mid][d];
        }
        auto direct = integrate_lattice(lds, Y0, P0v, T);
        auto run = first_order_manifold_dynamics(lds, bases, Phi0, P0, T, true, 0.1, wopt);
        double dev = 0.0;
        for (std::size_t i = 0; i < run.t.size(); ++i) {
            auto s = direct.at(run.t[i]);
            for (std::size_t k = 0; k < K; ++k)
                dev = std::max(dev, std::abs(s[lds.y_size() + k] - run.P[i][k]));
        }
        devs.push_back(dev);
    }
    MESSAGE("first-order deviations: ", devs[0], " ", devs[1], " ", devs[2], " ", devs[3]);
    for (std::size_t i = 0; i + 1 < devs.size(); ++i) CHECK(devs[i] / devs[i + 1] > 2.0);
}

TEST_CASE("asymptotic phase: identical bases vanish; rate matches the Floquet contraction") {
    const std::size_t K = 2;
    CellRhs f = [](const double* y, double* dy) { planar_f(y, dy); };
    auto cyc = planar_bases(K);

    // converging segment: spiral-in from r = 1.6, long enough to reach the cycle
    const double span = 14.0;
    std::vector<AdjointOrbitData> seg;
    for (std::size_t k = 0; k < K; ++k) {
        auto s = AdjointOrbitData::segment(f, {1.6, 0.0}, span, cyc[k].ystar(span));
        s.mollify(f, 0.1);
        seg.push_back(std::move(s));
    }

    auto lds0 = planar_ring(K, 0.0);
    std::vector<double> Phi0 = {0.0, 0.0}, P0 = {0.0, 0.0};

    // identical bases: the optimizer finds the zero-offset match
    {
        std::vector<AdjointOrbitData> cyc2 = planar_bases(K);
        auto rep = asymptotic_phase_convergence_test(lds0, cyc, cyc2, Phi0, P0, 10.0);
        CHECK(rep.terminal_mismatch < 1e-6);
    }

    // segment vs cycle at eps = 0: decay at the radial Floquet rate 2
    auto rep0 = asymptotic_phase_convergence_test(lds0, seg, cyc, Phi0, P0, 12.0);
    MESSAGE("eps=0 rate = ", rep0.rate);
    CHECK(std::abs(rep0.rate - 2.0) < 0.4);

    // small eps: still exponential, rate at least half the uncoupled one
    auto ldse = planar_ring(K, 0.02);
    auto repe = asymptotic_phase_convergence_test(ldse, seg, cyc, Phi0, P0, 12.0);
    MESSAGE("eps=0.02 rate = ", repe.rate);
    CHECK(repe.rate > 0.5 * rep0.rate);
}

TEST_CASE("coupling bound audit stays within the declared constant") {
    auto lds = planar_ring(4, 0.07);
    RngStream rng(17, 3);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> Y(lds.y_size()), P(lds.p_size());
        for (auto& v : Y) v = rng.uniform(-1.2, 1.2);
        for (auto& v : P) v = rng.uniform(-2, 2);
        CHECK(lds.coupling_sample_max(Y, P) <= lds.coupling_bound);
    }
}
