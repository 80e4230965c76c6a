#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "solgrid/controller.hpp"
#include "solgrid/normal_form.hpp"

using namespace solgrid;
using namespace solgrid::control;

namespace {

ChaoticCell& pm_cell() {
    static ChaoticCell cell = make_symbol_cell({+1.0, -1.0});
    return cell;
}

DriftVectors& pm_dv() {
    static DriftVectors dv = compute_drift_vectors(pm_cell());
    return dv;
}

}  // namespace

TEST_CASE("drift vectors: averages, span, positive combination, cone") {
    auto& dv = pm_dv();
    REQUIRE(dv.b.size() == 2);
    CHECK(dv.b[0][0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(dv.b[1][0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(dv.spans);
    CHECK(dv.has_positive_combination);
    CHECK(dv.A.size() == 2);
    CHECK(dv.A[0] >= 1.0);
    CHECK(dv.A[1] >= 1.0);
    CHECK(std::abs(dv.A[0] * dv.b[0][0] + dv.A[1] * dv.b[1][0]) < 1e-8);
    CHECK(dv.delta_cone == doctest::Approx(1.0).epsilon(1e-12));

    // recomputation stability of the period averages
    auto dv2 = compute_drift_vectors(pm_cell());
    CHECK(std::abs(dv2.b[0][0] - dv.b[0][0]) < 1e-12);

    // constant nonzero drifts admit no positive combination
    auto cc = make_symbol_cell({0.7, 0.7});
    auto dvc = compute_drift_vectors(cc);
    CHECK(dvc.spans);
    CHECK_FALSE(dvc.has_positive_combination);
}

TEST_CASE("feasibility certificate against a brute-force simplex grid") {
    // dim P = 2, three cycles; nullspace coefficients checked by grid search
    DriftVectors dv;
    dv.dim_p = 2;
    dv.b = {{1.0, 0.2}, {-0.5, 0.8}, {-0.3, -0.9}};
    Mat gram(3, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) gram(i, j) = dot(dv.b[i], dv.b[j]);
    auto v = nullspace_vector(gram);
    if (v[0] < 0)
        for (auto& x : v) x = -x;
    REQUIRE(v[0] > 0);
    REQUIRE(v[1] > 0);
    REQUIRE(v[2] > 0);
    std::vector<double> comb = {v[0] * dv.b[0][0] + v[1] * dv.b[1][0] + v[2] * dv.b[2][0],
                                v[0] * dv.b[0][1] + v[1] * dv.b[1][1] + v[2] * dv.b[2][1]};
    CHECK(norm_2(comb) < 1e-8 * norm_2(v));

    // independent simplex-grid oracle: a feasible positive point exists
    double best = 1e300;
    for (int i = 1; i < 60; ++i)
        for (int j = 1; j + i < 60; ++j) {
            const double a = i / 60.0, b = j / 60.0, c = 1.0 - a - b;
            std::vector<double> s = {a * dv.b[0][0] + b * dv.b[1][0] + c * dv.b[2][0],
                                     a * dv.b[0][1] + b * dv.b[1][1] + c * dv.b[2][1]};
            best = std::min(best, norm_2(s));
        }
    CHECK(best < 0.05);
}

TEST_CASE("direction selector: forced sign, convention at zero, cone bound, scaling invariance") {
    auto& dv = pm_dv();
    CHECK(select_direction({0.7}, dv) == 1);  // drift -1 opposes positive p
    CHECK(select_direction({-0.4}, dv) == 0);
    CHECK(select_direction({0.0}, dv) == 0);  // convention: first cycle

    // Monte-Carlo audit of the cone inequality in dim 2
    DriftVectors dv2;
    dv2.dim_p = 2;
    dv2.b = {{1.0, 0.1}, {-0.6, 0.75}, {-0.25, -0.8}};
    dv2.spans = true;
    double delta = 1e300;
    for (const auto& p : control::detail::sphere_sample(2, 4096)) {
        double best = -1e300;
        for (const auto& bi : dv2.b) best = std::max(best, -control::detail::cosine(p, bi));
        delta = std::min(delta, best);
    }
    dv2.delta_cone = delta;
    REQUIRE(dv2.delta_cone > 0.0);
    RngStream rng(42, 7);
    for (int t = 0; t < 10000; ++t) {
        const double th = rng.uniform(0, 2 * pi);
        std::vector<double> p = {std::cos(th), std::sin(th)};
        const auto j = select_direction(p, dv2);
        CHECK(control::detail::cosine(p, dv2.b[j]) <= -dv2.delta_cone + 2e-3);  // sphere-sample resolution
        // invariance under positive rescaling
        std::vector<double> ps = {13.7 * p[0], 13.7 * p[1]};
        CHECK(select_direction(ps, dv2) == j);
    }
}

TEST_CASE("plans: replay determinism, 1D ping-pong boundedness, epoch budget guard") {
    auto& cell = pm_cell();
    auto& dv = pm_dv();
    auto p1 = build_symbolic_plan(cell, dv, 4, 200, 10.0, 60.0, 1234);
    auto p2 = build_symbolic_plan(cell, dv, 4, 200, 10.0, 60.0, 1234);
    REQUIRE(p1.records.size() == p2.records.size());
    for (std::size_t k = 0; k < p1.records.size(); ++k)
        for (std::size_t e = 0; e < p1.records[k].size(); ++e) {
            CHECK(p1.records[k][e].target == p2.records[k][e].target);
            CHECK(p1.records[k][e].variant == p2.records[k][e].variant);
            CHECK(p1.records[k][e].forced == p2.records[k][e].forced);
        }
    auto p3 = build_symbolic_plan(cell, dv, 4, 200, 10.0, 60.0, 1235);
    bool differs = false;
    for (std::size_t e = 0; e < p1.records[0].size() && !differs; ++e)
        if (p1.records[0][e].target != p3.records[0][e].target ||
            p1.records[0][e].variant != p3.records[0][e].variant)
            differs = true;
    CHECK(differs);

    // single cell, drifts +-1, p0 = 0: |p| never exceeds T_epoch + initial
    auto rep = verify_boundedness(p1, cell, dv);
    CHECK(rep.ok);
    CHECK(rep.max_p <= r_analytic(dv, 10.0));

    CHECK_THROWS_AS(build_symbolic_plan(cell, dv, 1, 10, 0.6, 50.0, 7), EpochTooShort);
}

TEST_CASE("pseudo-orbit synthesis: exact laps, zero defects, drift quadrature") {
    auto& cell = pm_cell();
    auto& dv = pm_dv();

    // a no-transition plan: pure cycle repetition with zero defects
    SymbolicPlan stay;
    stay.n_cells = 1;
    stay.epochs = 3;
    stay.T_epoch = 4.0;
    stay.records = {{EpochRecord{0, 0, 0, false}, EpochRecord{0, 0, 0, false}, EpochRecord{0, 0, 0, false}}};
    auto po = synthesize_pseudo_orbit(stay, cell, 0);
    CHECK(po.gamma_eff == 0.0);
    for (double d : po.junction_defects) CHECK(d == 0.0);
    // one exact lap: delta p = T b
    auto pt = integrate_p_along(po, {0.0});
    CHECK(pt.back()[0] == doctest::Approx(po.duration() * dv.b[0][0]).epsilon(1e-10));

    // transitions: still exact joins for the symbolic cell
    auto plan = build_symbolic_plan(cell, dv, 1, 40, 10.0, 60.0, 99);
    auto po2 = synthesize_pseudo_orbit(plan, cell, 0);
    CHECK(po2.gamma_eff == 0.0);

    // controlled plan: p stays bounded along the sampled pseudo-orbit
    auto traj = integrate_p_along(po2, {0.0});
    double max_p = 0.0;
    for (const auto& p : traj) max_p = std::max(max_p, std::abs(p[0]));
    CHECK(max_p <= r_analytic(dv, 10.0) + 1.0);
}

TEST_CASE("controlled ensemble stays bounded; uncontrolled baseline diffuses") {
    auto& cell = pm_cell();
    auto& dv = pm_dv();
    const double T_epoch = 10.0;
    const double Ra = r_analytic(dv, T_epoch);
    const std::size_t cells = 8, epochs = 2000, plans = 10;

    std::size_t exceed_uncontrolled = 0;
    for (std::size_t s = 0; s < plans; ++s) {
        auto cp = build_symbolic_plan(cell, dv, cells, epochs, T_epoch, Ra, 1000 + s, true);
        auto rep = verify_boundedness(cp, cell, dv);
        CHECK(rep.ok);
        CHECK(rep.max_p <= Ra);

        auto up = build_symbolic_plan(cell, dv, cells, epochs, T_epoch, Ra, 1000 + s, false);
        auto urep = verify_boundedness(up, cell, dv);
        if (urep.max_p > Ra) ++exceed_uncontrolled;
    }
    MESSAGE("uncontrolled exceedances: ", exceed_uncontrolled, "/", plans);
    CHECK(exceed_uncontrolled >= plans * 9 / 10);
}

TEST_CASE("moving-frame drifts") {
    auto& dv = pm_dv();
    DriftVectors two = dv;
    two.b = {{2.0}, {0.5}};
    auto shifted = drift_frame_transform(two, {1.0});
    CHECK(shifted.b[0][0] == doctest::Approx(1.0));
    CHECK(shifted.b[1][0] == doctest::Approx(-0.5));
    CHECK(shifted.has_positive_combination);
    CHECK(shifted.b[0][0] * shifted.b[1][0] < 0.0);

    CHECK_THROWS_AS(drift_frame_transform(two, {2.0}), NotInteriorPoint);
    CHECK_THROWS_AS(drift_frame_transform(two, {0.5}), NotInteriorPoint);
}

TEST_CASE("pattern counting and the entropy lower bound") {
    auto& cell = pm_cell();
    auto& dv = pm_dv();
    const double T_epoch = 10.0, spacing = 3.0;
    const double R_huge = 1e9;  // no forcing: every plan admissible

    // n = 0 (1 cell), l = 1: 4 plans
    auto e1 = entropy_lower_bound(cell, dv, 1, 1, T_epoch, spacing, R_huge);
    CHECK(e1.pattern_count == 4);
    CHECK(e1.all_admissible);
    CHECK(e1.pairwise_distinguishable);

    // n = 1 (3 cells), l = 1: 64 plans
    auto e2 = entropy_lower_bound(cell, dv, 3, 1, T_epoch, spacing, R_huge);
    CHECK(e2.pattern_count == 64);

    // n = 1 (3 cells), l = 2: exactly 4^6 = 4096, bound = ln 4 / (2 T Delta)
    auto e3 = entropy_lower_bound(cell, dv, 3, 2, T_epoch, spacing, R_huge);
    CHECK(e3.pattern_count == 4096);
    CHECK(e3.all_admissible);
    const double want = std::log(4.0) / (2.0 * T_epoch * spacing);
    CHECK(e3.lower_bound == doctest::Approx(want).epsilon(1e-12));

    // larger (n, l) with sampling: converges to the same bound
    auto e4 = entropy_lower_bound(cell, dv, 9, 8, T_epoch, spacing, R_huge, 0.0, 2000, 5);
    CHECK(std::abs(e4.lower_bound - want) < 0.05 * want);
}

TEST_CASE("saddle-focus drift criterion ties to the loop integral") {
    // constant g: integral is exactly zero -> inconclusive
    std::vector<double> zero(1001, 0.0);
    CHECK_THROWS_AS(saddle_focus_criterion(zero, 0.01), IntegralNearZero);

    // g = Y + 1 along a found homoclinic loop: equals the loop drift integral
    auto recs = normal_form::find_homoclinic_parameters(1);
    const auto& r = recs.front();
    const int n = 20001;
    std::vector<double> vals(n);
    std::vector<double> y;
    const double h = r.t_return / double(n - 1);
    for (int i = 0; i < n; ++i) {
        r.loop.eval(h * double(i), y);
        vals[i] = y[0] + 1.0;
    }
    auto rep = saddle_focus_criterion(vals, h);
    CHECK(rep.conclusive);
    CHECK(rep.loop_integral > 0.0);
    CHECK(rep.loop_integral == doctest::Approx(r.gloop_value).epsilon(1e-6));
}

TEST_CASE("ode-backed pair cell: mirror cycles with opposite drifts and harvested transitions") {
    using namespace solgrid::pairdyn;
    auto q = PairParams::with_cosine_forcing(1.0, 2.0762, 8.755, 2.0839, 1.0, 1.0, 1.0, 0.0, 3.4824,
                                             -7.4764);
    q.R_min = 0.7;

    // one asymmetric cycle from the attractor plus its mirror image (the pair
    // system commutes with Phi -> -Phi, which negates the drift)
    CycleHarvestOptions hopt;
    hopt.r_max = 6.0;
    hopt.t_min_period = 0.5;
    hopt.t_max_period = 10.0;
    hopt.run_time = 600.0;
    hopt.close_eps = 0.05;
    hopt.want = 1;
    auto found = harvest_cycles(q, {2.2, 1.0, 0.5, 0.0}, hopt);
    REQUIRE(!found.empty());
    const auto& c1 = found.front();
    REQUIRE(std::abs(c1.drift) > 1e-5);
    auto c2 = polish_cycle(q, {c1.x0.R, -c1.x0.Phi, c1.x0.Psi, 0.0}, c1.period);
    CHECK(c2.closure_error < 1e-8);
    CHECK(c2.period == doctest::Approx(c1.period).epsilon(1e-8));
    CHECK(c2.drift == doctest::Approx(-c1.drift).epsilon(1e-6));

    // distinct averaged drifts and an opposite-sign frame velocity
    const double v = frame_velocity_between(c1.drift, c2.drift);
    CHECK((c1.drift + v) * (c2.drift + v) < 0.0);

    // build the cell with shooting-computed connecting segments
    PairCellReport rep;
    auto cell = build_pair_cell(q, {c1, c2}, 1e-3, {}, &rep);
    MESSAGE("pair cell: ", rep.connections_found, "/", rep.connections_possible,
            " transition segments, worst defect ", rep.worst_defect);
    CHECK(cell.cycles.size() == 2);
    for (const auto& z : cell.cycles) CHECK(z.closure_defect() == 0.0);
    // the alphabet may be degraded (missing connections are reported, not fatal)
    CHECK(rep.worst_defect <= cell.gluing_tolerance);
    if (rep.connections_found > 0) {
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j)
                for (std::size_t m = 0; m < cell.n_variants(i, j); ++m) {
                    const auto& seg = cell.connection(i, j, m);
                    CHECK(seg.duration > 0.0);
                }
    }
}
