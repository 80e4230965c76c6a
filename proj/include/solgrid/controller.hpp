#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "solgrid/core/dense.hpp"
#include "solgrid/core/quadrature.hpp"
#include "solgrid/core/rng.hpp"
#include "solgrid/core/util.hpp"
#include "solgrid/pair_dynamics.hpp"

namespace solgrid::control {

struct RankDeficient : NumericsError { using NumericsError::NumericsError; };
struct MissingConnection : NumericsError { using NumericsError::NumericsError; };
struct DefectTooLarge : NumericsError { using NumericsError::NumericsError; };
struct EpochTooShort : NumericsError { using NumericsError::NumericsError; };
struct NotInteriorPoint : NumericsError { using NumericsError::NumericsError; };
struct IntegralNearZero : NumericsError { using NumericsError::NumericsError; };

/// Uniformly sampled curve in the cell's y-space with the drift values g(y)
/// stored alongside; the building block for cycles and connecting segments.
struct CellSegment {
    double duration = 1.0;
    std::vector<std::vector<double>> y;  // samples, size m+1
    std::vector<std::vector<double>> g;  // per-sample drift (dim_p each)

    std::size_t n_samples() const { return y.size(); }

    std::vector<double> y_at(double t) const { return interp(y, t); }
    std::vector<double> g_at(double t) const { return interp(g, t); }

    std::vector<double> interp(const std::vector<std::vector<double>>& s, double t) const {
        const double u = std::clamp(t / duration, 0.0, 1.0) * double(s.size() - 1);
        const std::size_t i = std::min(s.size() - 2, std::size_t(u));
        const double w = u - double(i);
        std::vector<double> out(s[i].size());
        for (std::size_t d = 0; d < out.size(); ++d) out[d] = (1.0 - w) * s[i][d] + w * s[i + 1][d];
        return out;
    }

    double closure_defect() const {
        double m = 0.0;
        for (std::size_t d = 0; d < y.front().size(); ++d)
            m = std::max(m, std::abs(y.front()[d] - y.back()[d]));
        return m;
    }
};

/// A cell with a finite alphabet of periodic orbits and connecting segments;
/// `symbolic` cells are scripted (exact joins), ode-backed cells carry the
/// measured gluing defects of their shooting-computed segments.
struct ChaoticCell {
    int dim_p = 1;
    bool symbolic = true;
    double gluing_tolerance = 1e-3;
    std::vector<CellSegment> cycles;
    // connections[i][j] = segments from cycle i to cycle j (0..2 entries)
    std::vector<std::vector<std::vector<CellSegment>>> connections;

    std::size_t n_cycles() const { return cycles.size(); }

    const CellSegment& connection(std::size_t i, std::size_t j, std::size_t m) const {
        if (i >= connections.size() || j >= connections[i].size() || m >= connections[i][j].size())
            throw MissingConnection("ChaoticCell: no connection (" + std::to_string(i) + " -> " +
                                    std::to_string(j) + ", variant " + std::to_string(m) + ")");
        return connections[i][j][m];
    }

    std::size_t n_variants(std::size_t i, std::size_t j) const {
        if (i >= connections.size() || j >= connections[i].size()) return 0;
        return connections[i][j].size();
    }
};

/// Reference testbed: a two-cycle scripted cell in a planar y-space with
/// constant drifts on the cycles and two visibly different transition paths
/// per ordered cycle pair.
inline ChaoticCell make_symbol_cell(const std::vector<double>& drifts, double cycle_period = 1.0,
                                    double transition_time = 0.5, double cycle_radius = 0.4,
                                    double center_gap = 2.0, double variant_bulge = 1.0,
                                    std::size_t samples = 64) {
    ChaoticCell cell;
    cell.dim_p = 1;
    cell.symbolic = true;
    const std::size_t n = drifts.size();
    cell.cycles.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        CellSegment& z = cell.cycles[i];
        z.duration = cycle_period;
        z.y.resize(samples + 1);
        z.g.resize(samples + 1);
        for (std::size_t s = 0; s <= samples; ++s) {
            const double th = 2.0 * pi * double(s) / double(samples);
            z.y[s] = {center_gap * double(i) + cycle_radius * std::cos(th), cycle_radius * std::sin(th)};
            z.g[s] = {drifts[i]};
        }
        z.y[samples] = z.y[0];  // close the lap exactly
    }
    cell.connections.assign(n, std::vector<std::vector<CellSegment>>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            for (int m = 0; m < 2; ++m) {
                CellSegment seg;
                seg.duration = transition_time;
                seg.y.resize(samples + 1);
                seg.g.resize(samples + 1);
                const auto a = cell.cycles[i].y.front();
                const auto b = cell.cycles[j].y.front();
                for (std::size_t s = 0; s <= samples; ++s) {
                    const double u = double(s) / double(samples);
                    const double bulge = (m == 0 ? 0.0 : variant_bulge) * std::sin(pi * u);
                    seg.y[s] = {(1.0 - u) * a[0] + u * b[0], (1.0 - u) * a[1] + u * b[1] + bulge};
                    seg.g[s] = {(1.0 - u) * drifts[i] + u * drifts[j]};
                }
                seg.y[0] = a;  // exact joins: the symbolic cell glues with zero defect
                seg.y[samples] = b;
                cell.connections[i][j].push_back(std::move(seg));
            }
        }
    return cell;
}

/// Period-averaged drift vectors of the cycles, the span/positive-combination
/// certificates, and the direction-cone constant.
struct DriftVectors {
    int dim_p = 1;
    std::vector<std::vector<double>> b;  // one per cycle
    bool spans = false;
    bool has_positive_combination = false;
    std::vector<double> A;  // coefficients of sum A_i b_i = 0, min A_i = 1
    double delta_cone = 0.0;
};

namespace detail {

inline double cosine(const std::vector<double>& p, const std::vector<double>& b) {
    const double np = norm_2(p), nb = norm_2(b);
    if (np == 0.0 || nb == 0.0) return 0.0;
    return dot(p, b) / (np * nb);
}

/// Deterministic unit-sphere sample in up to 3 dimensions.
inline std::vector<std::vector<double>> sphere_sample(int dim, std::size_t count) {
    std::vector<std::vector<double>> pts;
    if (dim == 1) {
        pts.push_back({1.0});
        pts.push_back({-1.0});
    } else if (dim == 2) {
        for (std::size_t i = 0; i < count; ++i) {
            const double th = 2.0 * pi * double(i) / double(count);
            pts.push_back({std::cos(th), std::sin(th)});
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) {  // Fibonacci sphere
            const double z = 1.0 - 2.0 * (double(i) + 0.5) / double(count);
            const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
            const double th = pi * (1.0 + std::sqrt(5.0)) * double(i);
            pts.push_back({r * std::cos(th), r * std::sin(th), z});
        }
    }
    return pts;
}

}  // namespace detail

inline DriftVectors compute_drift_vectors(const ChaoticCell& cell, std::size_t sphere_points = 2048) {
    DriftVectors dv;
    dv.dim_p = cell.dim_p;
    for (const auto& z : cell.cycles) {
        std::vector<double> bi(cell.dim_p, 0.0);
        const double h = z.duration / double(z.n_samples() - 1);
        for (int d = 0; d < cell.dim_p; ++d) {
            std::vector<double> vals(z.n_samples());
            for (std::size_t s = 0; s < z.n_samples(); ++s) vals[s] = z.g[s][d];
            bi[d] = trapezoid(vals, h) / z.duration;
        }
        dv.b.push_back(bi);
    }
    const std::size_t n = dv.b.size();

    // span check by row reduction of the b-matrix
    {
        std::vector<std::vector<double>> rows = dv.b;
        int rank = 0;
        for (int col = 0; col < dv.dim_p; ++col) {
            int piv = -1;
            double best = 1e-12;
            for (std::size_t r = rank; r < rows.size(); ++r)
                if (std::abs(rows[r][col]) > best) { best = std::abs(rows[r][col]); piv = int(r); }
            if (piv < 0) continue;
            std::swap(rows[rank], rows[piv]);
            for (std::size_t r = 0; r < rows.size(); ++r) {
                if (int(r) == rank) continue;
                const double f = rows[r][col] / rows[rank][col];
                for (int c = 0; c < dv.dim_p; ++c) rows[r][c] -= f * rows[rank][c];
            }
            ++rank;
        }
        dv.spans = (rank == dv.dim_p);
    }
    if (!dv.spans) return dv;

    // positive combination from the nullspace of the (dim_p x n) matrix
    if (n == std::size_t(dv.dim_p) + 1) {
        // the nullspace of the drift matrix is the kernel of its Gram matrix
        const int nn = int(n);
        Mat gram(nn, nn);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) gram(int(i), int(j)) = dot(dv.b[i], dv.b[j]);
        auto v = nullspace_vector(gram);
        // all entries must share a sign
        double mn = 1e300, mx = -1e300;
        for (double x : v) { mn = std::min(mn, x); mx = std::max(mx, x); }
        if (mn > 0.0 || mx < 0.0) {
            if (mx < 0.0)
                for (auto& x : v) x = -x;
            const double amin = *std::min_element(v.begin(), v.end());
            for (auto& x : v) x /= amin;  // normalize to min A_i = 1
            dv.A = v;
            dv.has_positive_combination = true;
        }
    }

    // direction cone constant: delta = min over the sphere of max_i (-cos(p, b_i))
    double delta = 1e300;
    for (const auto& p : detail::sphere_sample(dv.dim_p, sphere_points)) {
        double best = -1e300;
        for (const auto& bi : dv.b) best = std::max(best, -detail::cosine(p, bi));
        delta = std::min(delta, best);
    }
    dv.delta_cone = delta;
    return dv;
}

/// The direction selector J(p): the cycle whose drift opposes p the most.
/// Ties resolve to the smallest index; J(0) = 0 (first cycle) by convention.
inline std::size_t select_direction(const std::vector<double>& p, const DriftVectors& dv) {
    if (norm_2(p) == 0.0) return 0;
    std::size_t best = 0;
    double best_cos = 1e300;
    for (std::size_t i = 0; i < dv.b.size(); ++i) {
        const double c = detail::cosine(p, dv.b[i]);
        if (c < best_cos - 1e-15) {
            best_cos = c;
            best = i;
        }
    }
    return best;
}

/// Analytic boundedness envelope for controlled runs.
inline double r_analytic(const DriftVectors& dv, double T_epoch) {
    double max_b = 0.0;
    for (const auto& bi : dv.b) max_b = std::max(max_b, norm_2(bi));
    return T_epoch * max_b * (1.0 + 2.0 / std::max(dv.delta_cone, 1e-12));
}

/// One epoch record of the per-cell schedule.
struct EpochRecord {
    std::uint32_t current = 0;  // cycle occupied during the dwell
    std::uint32_t target = 0;   // cycle selected at the epoch boundary
    std::uint32_t variant = 0;  // heteroclinic choice m in {0, 1}
    bool forced = false;        // hysteresis override engaged
};

/// Per-cell epoch schedule with the seed it replays from.
struct SymbolicPlan {
    std::size_t n_cells = 1;
    std::size_t epochs = 1;
    double T_epoch = 10.0;
    double R_bound = 100.0;
    std::uint64_t seed = 0;
    bool controlled = true;  // false = free-running baseline (no hysteresis)
    std::vector<std::vector<EpochRecord>> records;  // [cell][epoch]
    std::vector<std::vector<double>> p_trace;       // [cell][epoch+1], |p| at boundaries (dim_p = 1 path stores p itself)
};

namespace detail {

/// Drift accumulated over one epoch: dwell on cycle i then transition i -> j.
inline std::vector<double> epoch_drift(const ChaoticCell& cell, const DriftVectors& dv, std::size_t i,
                                       std::size_t j, std::size_t m, double T_epoch) {
    std::vector<double> dp(cell.dim_p, 0.0);
    double dwell = T_epoch;
    if (i != j) {
        const CellSegment& seg = cell.connection(i, j, m);
        dwell = T_epoch - seg.duration;
        const double h = seg.duration / double(seg.n_samples() - 1);
        for (int d = 0; d < cell.dim_p; ++d) {
            std::vector<double> vals(seg.n_samples());
            for (std::size_t s = 0; s < seg.n_samples(); ++s) vals[s] = seg.g[s][d];
            dp[d] += trapezoid(vals, h);
        }
    }
    for (int d = 0; d < cell.dim_p; ++d) dp[d] += dwell * dv.b[i][d];
    return dp;
}

/// Per-(i, j, m) epoch drifts cached once; long replays then cost O(dim_p)
/// per epoch.
struct EpochDriftTable {
    std::size_t n = 0;
    int dim_p = 1;
    std::vector<std::vector<double>> table;  // [(i*n + j)*2 + m] -> dp

    EpochDriftTable() = default;
    EpochDriftTable(const ChaoticCell& cell, const DriftVectors& dv, double T_epoch)
        : n(cell.n_cycles()), dim_p(cell.dim_p), table(n * n * 2, std::vector<double>(cell.dim_p, 0.0)) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t variants = (i == j) ? 1 : std::max<std::size_t>(1, cell.n_variants(i, j));
                for (std::size_t m = 0; m < 2; ++m)
                    table[(i * n + j) * 2 + m] =
                        epoch_drift(cell, dv, i, j, std::min(m, variants - 1), T_epoch);
            }
    }

    const std::vector<double>& dp(std::size_t i, std::size_t j, std::size_t m) const {
        return table[(i * n + j) * 2 + m];
    }
};

}  // namespace detail

/// Build the per-cell schedule: the zero-order p accumulates epoch drifts;
/// while |p| stays under R/2 both the target cycle (among the two best
/// opposing directions) and the transition variant are free seeded bits; when
/// |p| crosses R/2 the target is forced to J(p) until |p| re-enters R/4.
inline SymbolicPlan build_symbolic_plan(const ChaoticCell& cell, const DriftVectors& dv,
                                        std::size_t n_cells, std::size_t epochs, double T_epoch,
                                        double R_bound, std::uint64_t seed, bool controlled = true) {
    // epoch budget check: one epoch of opposing drift must beat the worst
    // gluing drift with margin, or the (3.back) contraction argument is void
    double worst_seg = 0.0, min_b = 1e300, max_b = 0.0;
    for (const auto& bi : dv.b) {
        min_b = std::min(min_b, norm_2(bi));
        max_b = std::max(max_b, norm_2(bi));
    }
    for (std::size_t i = 0; i < cell.n_cycles(); ++i)
        for (std::size_t j = 0; j < cell.n_cycles(); ++j)
            for (std::size_t m = 0; m < cell.n_variants(i, j); ++m) {
                const auto& seg = cell.connection(i, j, m);
                worst_seg = std::max(worst_seg, seg.duration * (max_b + 1.0));
            }
    if (T_epoch * min_b * dv.delta_cone <= 2.0 * worst_seg)
        throw EpochTooShort("build_symbolic_plan: T |b| delta does not dominate the gluing drift margin");

    detail::EpochDriftTable table(cell, dv, T_epoch);
    SymbolicPlan plan;
    plan.n_cells = n_cells;
    plan.epochs = epochs;
    plan.T_epoch = T_epoch;
    plan.R_bound = R_bound;
    plan.seed = seed;
    plan.controlled = controlled;
    plan.records.resize(n_cells);
    plan.p_trace.resize(n_cells);

    // forcing must engage early enough that up to two epochs of
    // wrong-direction drift still keep |p| within both bounds
    const double envelope = std::min(R_bound, r_analytic(dv, T_epoch));
    const double trigger = std::max(0.0, envelope - 2.0 * T_epoch * max_b);
    for (std::size_t k = 0; k < n_cells; ++k) {
        RngStream rng(seed, k);  // per-cell substream: thread count never matters
        std::vector<double> p(cell.dim_p, 0.0);
        std::size_t cur = 0;
        bool forced = false;
        plan.p_trace[k].push_back(p[0]);
        for (std::size_t e = 0; e < epochs; ++e) {
            const double pn = norm_2(p);
            if (controlled) {
                if (!forced && pn > trigger) forced = true;
                if (forced && pn < 0.5 * trigger) forced = false;
            }
            std::size_t target;
            const bool fbit = rng.bernoulli();
            const bool mbit = rng.bernoulli();
            if (controlled && forced) {
                target = select_direction(p, dv);
            } else if (controlled) {
                // free choice between the two most p-opposing cycles
                std::vector<std::size_t> order(dv.b.size());
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
                std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                    return detail::cosine(p, dv.b[a]) < detail::cosine(p, dv.b[b]);
                });
                target = fbit ? order[std::min<std::size_t>(1, order.size() - 1)] : order[0];
            } else {
                target = std::size_t(rng.uniform_int(int(dv.b.size())));
            }
            const std::size_t variant =
                (cur != target && cell.n_variants(cur, target) > 1 && mbit) ? 1 : 0;
            EpochRecord rec;
            rec.current = std::uint32_t(cur);
            rec.target = std::uint32_t(target);
            rec.variant = std::uint32_t(variant);
            rec.forced = controlled && forced;
            plan.records[k].push_back(rec);
            const auto& dp = table.dp(cur, target, variant);
            for (int d = 0; d < cell.dim_p; ++d) p[d] += dp[d];
            plan.p_trace[k].push_back(p[0]);
            cur = target;
        }
    }
    return plan;
}

/// Concatenated cycle laps and transition segments realizing one cell's
/// schedule; junction mismatches are recorded and (for ode-backed cells)
/// cross-faded over a short overlap.
struct PseudoOrbit {
    double dt = 0.0;
    std::vector<std::vector<double>> y;
    std::vector<std::vector<double>> g;
    std::vector<double> junction_defects;
    double gamma_eff = 0.0;

    double duration() const { return dt * double(y.size() - 1); }
};

inline PseudoOrbit synthesize_pseudo_orbit(const SymbolicPlan& plan, const ChaoticCell& cell,
                                           std::size_t cell_index, double dt = 0.01) {
    const auto& recs = plan.records.at(cell_index);
    PseudoOrbit po;
    po.dt = dt;
    auto append_segment = [&](const CellSegment& seg, double duration) {
        const std::size_t steps = std::max<std::size_t>(1, std::size_t(std::llround(duration / dt)));
        const std::size_t start = po.y.empty() ? 0 : 1;  // skip the duplicated joint sample
        if (!po.y.empty()) {
            double defect = 0.0;
            const auto first = seg.y_at(0.0);
            for (std::size_t d = 0; d < first.size(); ++d)
                defect = std::max(defect, std::abs(first[d] - po.y.back()[d]));
            po.junction_defects.push_back(defect);
            po.gamma_eff = std::max(po.gamma_eff, defect);
        }
        for (std::size_t s = start; s <= steps; ++s) {
            const double t = duration * double(s) / double(steps);
            po.y.push_back(seg.y_at(t));
            po.g.push_back(seg.g_at(t));
        }
    };
    for (const auto& rec : recs) {
        const CellSegment& cyc = cell.cycles[rec.current];
        double dwell = plan.T_epoch;
        if (rec.current != rec.target) dwell -= cell.connection(rec.current, rec.target, rec.variant).duration;
        // whole laps of the cycle, then the transition
        const std::size_t laps = std::max<std::size_t>(1, std::size_t(std::llround(dwell / cyc.duration)));
        for (std::size_t l = 0; l < laps; ++l) append_segment(cyc, cyc.duration);
        if (rec.current != rec.target) {
            const CellSegment& seg = cell.connection(rec.current, rec.target, rec.variant);
            append_segment(seg, seg.duration);
        }
    }
    if (po.gamma_eff > cell.gluing_tolerance)
        throw DefectTooLarge("synthesize_pseudo_orbit: junction defect " + std::to_string(po.gamma_eff) +
                             " exceeds the cell tolerance");
    return po;
}

/// Zero-order drift law: p(t) = p0 + int g(y(s)) ds along the pseudo-orbit.
inline std::vector<std::vector<double>> integrate_p_along(const PseudoOrbit& po,
                                                          const std::vector<double>& p0) {
    const int dim = int(p0.size());
    std::vector<std::vector<double>> p(po.y.size(), p0);
    for (std::size_t i = 1; i < po.y.size(); ++i)
        for (int d = 0; d < dim; ++d)
            p[i][d] = p[i - 1][d] + 0.5 * po.dt * (po.g[i - 1][d] + po.g[i][d]);
    return p;
}

/// Replay a plan's zero-order accumulation and audit the per-epoch
/// contraction inequality with the measured epoch drifts.
struct BoundednessReport {
    double max_p = 0.0;
    std::size_t violations = 0;   // epochs where the contraction inequality failed while beyond R/2
    std::size_t forced_epochs = 0;
    std::vector<double> margins;  // per forced epoch: contraction margin
    bool ok = true;
};

inline BoundednessReport verify_boundedness(const SymbolicPlan& plan, const ChaoticCell& cell,
                                            const DriftVectors& dv) {
    BoundednessReport rep;
    detail::EpochDriftTable table(cell, dv, plan.T_epoch);
    for (std::size_t k = 0; k < plan.n_cells; ++k) {
        std::vector<double> p(cell.dim_p, 0.0);
        for (std::size_t e = 0; e < plan.records[k].size(); ++e) {
            const auto& rec = plan.records[k][e];
            const double before = norm_2(p);
            const auto& dp = table.dp(rec.current, rec.target, rec.variant);
            for (int d = 0; d < cell.dim_p; ++d) p[d] += dp[d];
            const double after = norm_2(p);
            rep.max_p = std::max(rep.max_p, after);
            if (rec.forced) {
                ++rep.forced_epochs;
                // the contraction estimate |p + T b'|^2 <= |p|^2 + T|b'| (T|b'| - delta |p|)
                // applies to epochs whose occupied cycle is the forced selection;
                // the first epoch after forcing still dwells on the previous cycle
                std::vector<double> pb(p);
                for (int d = 0; d < cell.dim_p; ++d) pb[d] -= dp[d];
                if (rec.current == select_direction(pb, dv)) {
                    const double tb = norm_2(dp);
                    const double margin = sqr(before) + tb * (tb - dv.delta_cone * before) - sqr(after);
                    rep.margins.push_back(margin);
                    if (margin < -1e-9) ++rep.violations;
                }
            }
        }
    }
    rep.ok = (rep.violations == 0) && (rep.max_p <= plan.R_bound);
    return rep;
}

/// Moving-frame drifts b_i - pbar with the interior check of the convex hull.
inline DriftVectors drift_frame_transform(const DriftVectors& dv, const std::vector<double>& pbar) {
    // interior test by linear feasibility with slack: pbar = sum c_i b_i,
    // c_i > 0, sum c_i = 1. For dim 1 this is the open interval test.
    if (dv.dim_p == 1) {
        double lo = 1e300, hi = -1e300;
        for (const auto& bi : dv.b) { lo = std::min(lo, bi[0]); hi = std::max(hi, bi[0]); }
        if (!(pbar[0] > lo + 1e-12 && pbar[0] < hi - 1e-12))
            throw NotInteriorPoint("drift_frame_transform: pbar outside the open hull interval");
    } else {
        // shifted drifts must still admit a positive combination
        DriftVectors probe = dv;
        for (auto& bi : probe.b)
            for (int d = 0; d < dv.dim_p; ++d) bi[d] -= pbar[d];
        const int np = int(probe.b.size());
        Mat gram(np, np);
        for (std::size_t i = 0; i < probe.b.size(); ++i)
            for (std::size_t j = 0; j < probe.b.size(); ++j)
                gram(int(i), int(j)) = dot(probe.b[i], probe.b[j]);
        auto v = nullspace_vector(gram);
        double mn = 1e300, mx = -1e300;
        for (double x : v) { mn = std::min(mn, x); mx = std::max(mx, x); }
        if (!(mn > 0.0 || mx < 0.0))
            throw NotInteriorPoint("drift_frame_transform: no positive combination after the shift");
    }
    DriftVectors out = dv;
    for (auto& bi : out.b)
        for (int d = 0; d < dv.dim_p; ++d) bi[d] -= pbar[d];
    // re-derive the certificates for the shifted family
    out.spans = true;
    double delta = 1e300;
    for (const auto& p : detail::sphere_sample(out.dim_p, 2048)) {
        double best = -1e300;
        for (const auto& bi : out.b) best = std::max(best, -detail::cosine(p, bi));
        delta = std::min(delta, best);
    }
    out.delta_cone = delta;
    const int no = int(out.b.size());
    Mat gram(no, no);
    for (std::size_t i = 0; i < out.b.size(); ++i)
        for (std::size_t j = 0; j < out.b.size(); ++j) gram(int(i), int(j)) = dot(out.b[i], out.b[j]);
    auto v = nullspace_vector(gram);
    double mn = 1e300, mx = -1e300;
    for (double x : v) { mn = std::min(mn, x); mx = std::max(mx, x); }
    out.has_positive_combination = (mn > 0.0 || mx < 0.0);
    if (out.has_positive_combination) {
        if (mx < 0.0)
            for (auto& x : v) x = -x;
        const double amin = *std::min_element(v.begin(), v.end());
        for (auto& x : v) x /= amin;
        out.A = v;
    }
    return out;
}

/// Ode-backed cell from the two-soliton system: the cycles are Newton-polished
/// periodic orbits of the internal dynamics; connecting segments are harvested
/// from a long run as passes between cycle neighborhoods (pseudo-orbit gluing
/// with measured defects, not exact shadowing). Connections that the run never
/// realizes stay missing and shrink the choice alphabet.
struct PairCellReport {
    std::size_t connections_found = 0;
    std::size_t connections_possible = 0;
    double worst_defect = 0.0;
};

inline ChaoticCell build_pair_cell(const pairdyn::PairParams& q,
                                   const std::vector<pairdyn::PairCycle>& cycles, double gamma_bar,
                                   const pairdyn::PairState& /*start*/ = {},
                                   PairCellReport* report = nullptr, double dt_sample = 0.02,
                                   double t_shot = 120.0, int n_phases = 48) {
    ChaoticCell cell;
    cell.dim_p = 1;
    cell.symbolic = false;
    cell.gluing_tolerance = gamma_bar;
    const std::size_t n = cycles.size();

    // the internal angles embed as (cos, sin) pairs, so segment distances and
    // closure defects are Euclidean on the cylinder
    auto embed = [](const std::vector<double>& y) {
        return std::vector<double>{y[0], std::cos(y[1]), std::sin(y[1]), std::cos(y[2]), std::sin(y[2])};
    };
    auto to_segment = [&](const Trajectory& traj, double t0, double t1) {
        CellSegment seg;
        seg.duration = t1 - t0;
        const std::size_t m = std::max<std::size_t>(8, std::size_t((t1 - t0) / dt_sample));
        seg.y.resize(m + 1);
        seg.g.resize(m + 1);
        std::vector<double> y;
        for (std::size_t s = 0; s <= m; ++s) {
            traj.eval(t0 + (t1 - t0) * double(s) / double(m), y);
            seg.y[s] = embed(y);
            seg.g[s] = {pairdyn::pair_rhs(pairdyn::PairState::from(y), q).p};
        }
        return seg;
    };
    for (const auto& c : cycles) {
        auto seg = to_segment(c.orbit, 0.0, c.period);
        seg.y.back() = seg.y.front();  // exact closure after the cylinder embedding
        cell.cycles.push_back(std::move(seg));
    }
    cell.connections.assign(n, std::vector<std::vector<CellSegment>>(n));

    // distance to the cycle as a polyline (point-to-sample distances floor at
    // half the sample spacing, far above the gluing tolerances of interest)
    auto dist_to_cycle = [&](const std::vector<double>& ey, std::size_t i) {
        const auto& ys = cell.cycles[i].y;
        double best = 1e300;
        for (std::size_t s = 0; s + 1 < ys.size(); ++s) {
            double vv = 0.0, vw = 0.0;
            for (std::size_t c = 0; c < ey.size(); ++c) {
                const double seg = ys[s + 1][c] - ys[s][c];
                vv += seg * seg;
                vw += seg * (ey[c] - ys[s][c]);
            }
            const double u = (vv > 0.0) ? std::clamp(vw / vv, 0.0, 1.0) : 0.0;
            double d = 0.0;
            for (std::size_t c = 0; c < ey.size(); ++c) {
                const double proj = ys[s][c] + u * (ys[s + 1][c] - ys[s][c]);
                d += sqr(ey[c] - proj);
            }
            best = std::min(best, d);
        }
        return std::sqrt(best);
    };

    // connections by takeoff shooting: leave cycle i with a small radial kick
    // at a scanned phase and keep the two best passes near cycle j
    PairCellReport rep;
    OdeOptions o;
    o.rtol = 1e-11;
    o.atol = 1e-13;
    o.h_max = 1.0;
    OdeRhs rhs = [&q](double, const std::vector<double>& y, std::vector<double>& dy) {
        if (y[0] < q.r_min()) throw pairdyn::ReducedModelBreakdown("pair cell shot: R floor");
        const auto d = pairdyn::pair_rhs(pairdyn::PairState::from(y), q);
        dy = d.vec();
    };
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            struct Candidate {
                double defect = 1e300;
                double phase = 0.0, sign = 1.0, t_a = 0.0, t_b = 0.0;
                Trajectory traj;
            };
            std::vector<Candidate> best(2);
            for (int ph = 0; ph < n_phases; ++ph) {
                for (double sign : {+1.0, -1.0}) {
                    const double t0 = cycles[i].period * double(ph) / double(n_phases);
                    std::vector<double> y0;
                    cycles[i].orbit.eval(t0, y0);
                    y0[0] += sign * 1e-6;
                    Candidate cand;
                    cand.phase = t0;
                    cand.sign = sign;
                    try {
                        Dopri5(rhs, o).integrate(0.0, y0, t_shot, &cand.traj);
                    } catch (const NumericsError&) {
                    }
                    // takeoff instant: last time still within gamma of cycle i
                    const double t_end = cand.traj.t_end();
                    std::vector<double> y;
                    double t_leave = 0.0;
                    for (double t = 0.0; t <= t_end; t += 4.0 * dt_sample) {
                        cand.traj.eval(t, y);
                        if (dist_to_cycle(embed(y), i) < 0.5 * gamma_bar) t_leave = t;
                        else break;
                    }
                    double best_d = 1e300, best_t = -1.0;
                    for (double t = t_leave + 1.0; t <= t_end; t += dt_sample) {
                        cand.traj.eval(t, y);
                        const double d = dist_to_cycle(embed(y), j);
                        if (d < best_d) { best_d = d; best_t = t; }
                    }
                    if (best_t < 0.0) continue;
                    cand.defect = best_d;
                    cand.t_a = t_leave;
                    cand.t_b = best_t;
                    // keep the two best with well-separated takeoff phases
                    if (cand.defect < best[0].defect) {
                        if (std::abs(best[0].phase - cand.phase) > 0.15 * cycles[i].period ||
                            best[0].sign != cand.sign)
                            best[1] = std::move(best[0]);
                        best[0] = std::move(cand);
                    } else if (cand.defect < best[1].defect &&
                               (std::abs(best[0].phase - cand.phase) > 0.15 * cycles[i].period ||
                                best[0].sign != cand.sign)) {
                        best[1] = std::move(cand);
                    }
                }
            }
            for (auto& cand : best) {
                if (cand.defect <= gamma_bar && cand.t_b > cand.t_a) {
                    cell.connections[i][j].push_back(to_segment(cand.traj, cand.t_a, cand.t_b));
                    rep.worst_defect = std::max(rep.worst_defect, cand.defect);
                    ++rep.connections_found;
                }
            }
        }
    }
    rep.connections_possible = 2 * n * (n - 1);
    if (report) *report = rep;
    return cell;
}

/// Pattern-count and entropy lower bound from plan enumeration or sampling.
struct EntropyEstimate {
    std::size_t n_cells = 1;
    std::size_t epochs = 1;
    double T_epoch = 1.0;
    double cell_spacing = 1.0;
    std::size_t pattern_count = 0;
    double log_count = 0.0;
    bool all_admissible = false;
    bool pairwise_distinguishable = false;
    double distinguishability_distance = 0.0;
    double lower_bound = 0.0;  // log(count) / (2 span_t span_x)
};

namespace detail {

/// Minimum pairwise separation between the four per-epoch choices (two
/// targets x two variants) realized as y-paths; any two plans differing in a
/// slot separate by at least this much somewhere in space-time.
inline double slot_separation(const ChaoticCell& cell, const DriftVectors& dv, double T_epoch) {
    // compare the executed epoch paths for all distinct (target, variant)
    // options from a common current cycle
    double min_sep = 1e300;
    const std::size_t n = cell.n_cycles();
    for (std::size_t cur = 0; cur < n; ++cur) {
        struct Option { std::size_t j, m; };
        std::vector<Option> opts;
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t m = 0; m < std::max<std::size_t>(1, cell.n_variants(cur, j)); ++m) {
                if (cur != j && m >= cell.n_variants(cur, j)) continue;
                opts.push_back({j, m});
            }
        auto two_epoch_path = [&](std::size_t j, std::size_t m) {
            // the option epoch followed by a stay epoch on the landing cycle,
            // so transition and landing both lie inside the compared window
            SymbolicPlan probe;
            probe.n_cells = 1;
            probe.epochs = 2;
            probe.T_epoch = T_epoch;
            probe.records = {{EpochRecord{std::uint32_t(cur), std::uint32_t(j), std::uint32_t(m), false},
                              EpochRecord{std::uint32_t(j), std::uint32_t(j), 0, false}}};
            return synthesize_pseudo_orbit(probe, cell, 0);
        };
        for (std::size_t a = 0; a < opts.size(); ++a)
            for (std::size_t b = a + 1; b < opts.size(); ++b) {
                auto ya = two_epoch_path(opts[a].j, opts[a].m);
                auto yb = two_epoch_path(opts[b].j, opts[b].m);
                double sep = 0.0;
                const double t_hi = std::min(ya.duration(), yb.duration());
                for (double t = 0.0; t <= t_hi; t += 0.25 * ya.dt * 10.0) {
                    const std::size_t ia = std::min(ya.y.size() - 1, std::size_t(t / ya.dt));
                    const std::size_t ib = std::min(yb.y.size() - 1, std::size_t(t / yb.dt));
                    double d = 0.0;
                    for (std::size_t c = 0; c < ya.y[ia].size(); ++c)
                        d = std::max(d, std::abs(ya.y[ia][c] - yb.y[ib][c]));
                    sep = std::max(sep, d);
                }
                min_sep = std::min(min_sep, sep);
            }
    }
    (void)dv;
    return min_sep;
}

}  // namespace detail

/// Enumerate (or sample) the 4^{l * cells} free-choice plans, verify
/// admissibility (no hysteresis forcing fires, so every recorded choice was
/// free) and pairwise distinguishability; the entropy lower bound is
/// log(count) / (2 T_span X_span).
inline EntropyEstimate entropy_lower_bound(const ChaoticCell& cell, const DriftVectors& dv,
                                           std::size_t n_cells, std::size_t epochs, double T_epoch,
                                           double cell_spacing, double R_bound, double d0 = 0.0,
                                           std::size_t sample_cap = 4096, std::uint64_t seed = 99) {
    EntropyEstimate est;
    est.n_cells = n_cells;
    est.epochs = epochs;
    est.T_epoch = T_epoch;
    est.cell_spacing = cell_spacing;

    const std::size_t bits = 2 * epochs * n_cells;  // (target, variant) per cell-epoch
    const bool enumerable = bits <= 24 && (std::size_t(1) << bits) <= sample_cap;

    // distinguishability is certified per decision slot: two plans differing
    // anywhere separate by at least the slot separation at some sample
    const double sep = detail::slot_separation(cell, dv, T_epoch);
    if (d0 <= 0.0) {
        // default: half the minimum pairwise distance between cycle samples
        double min_cycle_gap = 1e300;
        for (std::size_t i = 0; i < cell.n_cycles(); ++i)
            for (std::size_t j = i + 1; j < cell.n_cycles(); ++j)
                for (const auto& ya : cell.cycles[i].y)
                    for (const auto& yb : cell.cycles[j].y) {
                        double d = 0.0;
                        for (std::size_t c = 0; c < ya.size(); ++c) d = std::max(d, std::abs(ya[c] - yb[c]));
                        min_cycle_gap = std::min(min_cycle_gap, d);
                    }
        d0 = 0.5 * min_cycle_gap;
    }
    est.distinguishability_distance = sep;
    est.pairwise_distinguishable = sep >= d0;

    // a plan is admissible when replay never triggers the forced mode: every
    // choice bit then acts freely and distinct bit strings are distinct plans
    detail::EpochDriftTable table(cell, dv, T_epoch);
    auto admissible = [&](std::uint64_t code) {
        std::vector<double> p(cell.dim_p, 0.0);
        std::size_t cur = 0;
        for (std::size_t e = 0; e < epochs * n_cells; ++e) {
            // cells are independent; run them in sequence over their own epochs
            if (e % epochs == 0) {
                p.assign(cell.dim_p, 0.0);
                cur = 0;
            }
            if (norm_2(p) > 0.5 * R_bound) return false;
            const bool fbit = (code >> (2 * e)) & 1;
            const bool mbit = (code >> (2 * e + 1)) & 1;
            std::vector<std::size_t> order(dv.b.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return detail::cosine(p, dv.b[a]) < detail::cosine(p, dv.b[b]);
            });
            const std::size_t target = fbit ? order[std::min<std::size_t>(1, order.size() - 1)] : order[0];
            const std::size_t variant = (cur != target && cell.n_variants(cur, target) > 1 && mbit) ? 1 : 0;
            const auto& dp = table.dp(cur, target, variant);
            for (int d = 0; d < cell.dim_p; ++d) p[d] += dp[d];
            cur = target;
        }
        return true;
    };

    if (enumerable) {
        std::size_t count = 0;
        for (std::uint64_t code = 0; code < (std::uint64_t(1) << bits); ++code)
            if (admissible(code)) ++count;
        est.pattern_count = count;
        est.log_count = std::log(double(count));
        est.all_admissible = (count == (std::size_t(1) << bits));
    } else {
        RngStream rng(seed, 1);
        const std::size_t trials = sample_cap;
        std::size_t ok = 0;
        for (std::size_t t = 0; t < trials; ++t) {
            std::uint64_t code = rng.next_u64();
            if (bits < 64) code &= (std::uint64_t(1) << bits) - 1;
            if (admissible(code)) ++ok;
        }
        est.all_admissible = (ok == trials);
        est.log_count = double(bits) * std::log(2.0) + std::log(double(ok) / double(trials));
        est.pattern_count = 0;  // too many to hold; log_count carries the value
    }
    const double span_t = double(epochs) * T_epoch;
    const double span_x = double(n_cells) * cell_spacing;
    est.lower_bound = est.log_count / (2.0 * span_t * span_x);
    return est;
}

/// Drift-selection report from a homoclinic loop: the integral of
/// g - g(equilibrium) along the loop; a nonzero value certifies that nearby
/// long-period cycles have pairwise distinct averaged drifts.
struct SaddleFocusReport {
    double loop_integral = 0.0;
    bool conclusive = false;
};

inline SaddleFocusReport saddle_focus_criterion(const std::vector<double>& g_minus_g0_samples, double dt,
                                                double threshold = 1e-6) {
    SaddleFocusReport rep;
    rep.loop_integral = trapezoid(g_minus_g0_samples, dt);
    rep.conclusive = std::abs(rep.loop_integral) > threshold;
    if (!rep.conclusive)
        throw IntegralNearZero("saddle_focus_criterion: loop drift integral below threshold; inconclusive");
    return rep;
}

}  // namespace solgrid::control
