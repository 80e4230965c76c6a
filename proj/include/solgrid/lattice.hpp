#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "solgrid/core/rk45.hpp"
#include "solgrid/pair_dynamics.hpp"

namespace solgrid::lattice {

using pairdyn::PairParams;
using pairdyn::PairState;
using pairdyn::ReducedModelBreakdown;

enum class Boundary { periodic, free };

/// Grid-of-pairs configuration: soliton gaps alternate 2L (inside a pair) and
/// 4L (between pairs), so pair centers sit 6L apart. L is snapped to a
/// multiple of pi/|omega| so the tail oscillation factor over 2L is exactly 1.
struct LatticeConfig {
    std::size_t n_pairs = 1;
    double L = 10.0;
    double snap_shift = 0.0;  // L_requested - L after snapping
    Boundary boundary = Boundary::free;
    PairParams cell;

    double coupling_epsilon() const { return std::exp(-cell.alpha * L); }
    double cell_stride() const { return 6.0 * L; }
    double base_center(std::size_t j) const { return cell_stride() * double(j); }
    double ring_length() const { return cell_stride() * double(n_pairs); }
    bool decoupled() const { return coupling_epsilon() == 0.0; }

    // raw-time forcing amplitudes corresponding to the cell's (nu, Omega)
    double mu_raw() const { return cell.nu * sqr(coupling_epsilon()); }
    double delta_offset_raw() const { return cell.Omega * sqr(coupling_epsilon()); }
};

inline LatticeConfig make_lattice_config(PairParams cell, std::size_t n_pairs, double L_requested,
                                         Boundary boundary = Boundary::free) {
    LatticeConfig cfg;
    cfg.cell = std::move(cell);
    cfg.n_pairs = n_pairs;
    cfg.boundary = boundary;
    const double unit = pi / std::abs(cfg.cell.omega);
    const double n = std::max(1.0, std::round(L_requested / unit));
    cfg.L = n * unit;
    cfg.snap_shift = L_requested - cfg.L;
    return cfg;
}

/// Raw soliton-chain coordinates: positions and phases of 2K solitons.
struct RawState {
    std::vector<double> xi;
    std::vector<double> phi;
    std::size_t size() const { return xi.size(); }
};

/// Parameters of the raw tail-interaction chain in unscaled time.
struct RawParams {
    double a = 1.0, theta1 = 0.0, b = 1.0, theta2 = 0.0, alpha = 1.0, omega = 0.1;
    double mu = 0.0, delta_offset = 0.0;
    FourierSeries F;
    Boundary boundary = Boundary::free;
    double ring_length = 0.0;  // periodic wrap circumference
    double min_gap = 0.0;      // separation floor (0 = unchecked)

    cplx lambda() const { return cplx(-alpha, omega); }
    cplx Ka() const { return -cplx(0.0, 0.5 * a) * std::exp(cplx(0.0, theta1)); }
    cplx Kb() const { return -cplx(0.0, 0.5 * b) * std::exp(cplx(0.0, theta2)); }

    static RawParams from_config(const LatticeConfig& cfg) {
        RawParams rp;
        rp.a = cfg.cell.a;
        rp.theta1 = cfg.cell.theta1;
        rp.b = cfg.cell.b;
        rp.theta2 = cfg.cell.theta2;
        rp.alpha = cfg.cell.alpha;
        rp.omega = cfg.cell.omega;
        rp.mu = cfg.mu_raw();
        rp.delta_offset = cfg.delta_offset_raw();
        rp.F = cfg.cell.F;
        rp.boundary = cfg.boundary;
        rp.ring_length = cfg.ring_length();
        rp.min_gap = 2.0 * cfg.cell.r_min();
        return rp;
    }
};

/// Tail-interaction right-hand side of the soliton chain:
///   d xi_j  =  Re[Ka (e^{lambda d+ + i dphi+} - e^{lambda d- + i dphi-})]
///   d phi_j = -Re[Kb (e^{lambda d+ + i dphi+} + e^{lambda d- + i dphi-})]
///             + mu F(phi_j) - delta_offset,
/// with d+- the distances to the right/left neighbors. Only adjacent solitons
/// interact; end solitons of a free chain see a single neighbor.
inline void lds_rhs_raw(const RawState& s, const RawParams& q, RawState& out) {
    const std::size_t n = s.size();
    out.xi.assign(n, 0.0);
    out.phi.assign(n, 0.0);
    const cplx lam = q.lambda();
    const cplx ka = q.Ka(), kb = q.Kb();
    for (std::size_t j = 0; j < n; ++j) {
        cplx e_plus = 0.0, e_minus = 0.0;
        const bool has_right = (j + 1 < n) || (q.boundary == Boundary::periodic && n > 1);
        const bool has_left = (j > 0) || (q.boundary == Boundary::periodic && n > 1);
        if (has_right) {
            const std::size_t r = (j + 1) % n;
            double d = s.xi[r] - s.xi[j];
            if (r <= j) d += q.ring_length;
            if (q.min_gap > 0.0 && d < q.min_gap)
                throw ReducedModelBreakdown("lds_rhs_raw: separation fell below the validity floor");
            e_plus = std::exp(lam * d + cplx(0.0, s.phi[r] - s.phi[j]));
        }
        if (has_left) {
            const std::size_t l = (j + n - 1) % n;
            double d = s.xi[j] - s.xi[l];
            if (l >= j) d += q.ring_length;
            if (q.min_gap > 0.0 && d < q.min_gap)
                throw ReducedModelBreakdown("lds_rhs_raw: separation fell below the validity floor");
            e_minus = std::exp(lam * d + cplx(0.0, s.phi[l] - s.phi[j]));
        }
        out.xi[j] = (ka * (e_plus - e_minus)).real();
        out.phi[j] = -(kb * (e_plus + e_minus)).real() + q.mu * q.F(s.phi[j]) - q.delta_offset;
    }
}

using PairLatticeState = std::vector<PairState>;

/// Embed pair coordinates into the raw chain on the base grid. R is the
/// deviation of the intra-pair gap from 2L; p the deviation of the pair
/// center from its grid point.
inline RawState pairs_to_raw(const PairLatticeState& cells, const LatticeConfig& cfg) {
    RawState raw;
    raw.xi.resize(2 * cells.size());
    raw.phi.resize(2 * cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
        const PairState& c = cells[j];
        const double center = cfg.base_center(j) + c.p;
        const double half = 0.5 * (2.0 * cfg.L + c.R);
        raw.xi[2 * j] = center - half;
        raw.xi[2 * j + 1] = center + half;
        raw.phi[2 * j] = c.Psi + 0.5 * c.Phi;
        raw.phi[2 * j + 1] = c.Psi - 0.5 * c.Phi;
    }
    return raw;
}

inline PairLatticeState raw_to_pairs(const RawState& raw, const LatticeConfig& cfg) {
    PairLatticeState cells(raw.size() / 2);
    for (std::size_t j = 0; j < cells.size(); ++j) {
        const double xl = raw.xi[2 * j], xr = raw.xi[2 * j + 1];
        cells[j].R = (xr - xl) - 2.0 * cfg.L;
        cells[j].p = 0.5 * (xl + xr) - cfg.base_center(j);
        cells[j].Phi = raw.phi[2 * j] - raw.phi[2 * j + 1];
        cells[j].Psi = 0.5 * (raw.phi[2 * j] + raw.phi[2 * j + 1]);
    }
    return cells;
}

/// Pair-coordinate lattice right-hand side in the slow time tau = t e^{-2 alpha L}:
/// the exact pushforward of the raw chain dynamics, so the leading intra-pair
/// terms match the two-soliton system and the inter-pair terms carry the true
/// O(e^{-alpha L}) coupling. At coupling_epsilon = 0 the cells decouple to
/// pair_rhs exactly.
inline PairLatticeState lds_rhs_pairs(const PairLatticeState& cells, const LatticeConfig& cfg) {
    PairLatticeState out(cells.size());
    if (cfg.decoupled()) {
        for (std::size_t j = 0; j < cells.size(); ++j) out[j] = pairdyn::pair_rhs(cells[j], cfg.cell);
        return out;
    }
    const RawState raw = pairs_to_raw(cells, cfg);
    const RawParams rp = RawParams::from_config(cfg);
    RawState d;
    lds_rhs_raw(raw, rp, d);
    const double scale = 1.0 / sqr(cfg.coupling_epsilon());  // e^{+2 alpha L}
    for (std::size_t j = 0; j < cells.size(); ++j) {
        out[j].R = scale * (d.xi[2 * j + 1] - d.xi[2 * j]);
        out[j].p = cfg.cell.v + scale * 0.5 * (d.xi[2 * j] + d.xi[2 * j + 1]);
        out[j].Phi = scale * (d.phi[2 * j] - d.phi[2 * j + 1]);
        out[j].Psi = scale * 0.5 * (d.phi[2 * j] + d.phi[2 * j + 1]);
    }
    return out;
}

struct LatticeIntegrateOptions {
    double rtol = 1e-10;
    double atol = 1e-12;
    double h_max = 5.0;
};

/// Integrate the pair-form lattice over tau; state is packed cell-major
/// (R, Phi, Psi, p) per cell.
inline std::vector<double> pack_cells(const PairLatticeState& cells) {
    std::vector<double> v;
    v.reserve(4 * cells.size());
    for (const auto& c : cells) {
        v.push_back(c.R);
        v.push_back(c.Phi);
        v.push_back(c.Psi);
        v.push_back(c.p);
    }
    return v;
}

inline PairLatticeState unpack_cells(const std::vector<double>& v) {
    PairLatticeState cells(v.size() / 4);
    for (std::size_t j = 0; j < cells.size(); ++j)
        cells[j] = {v[4 * j], v[4 * j + 1], v[4 * j + 2], v[4 * j + 3]};
    return cells;
}

inline Trajectory integrate_lattice(const PairLatticeState& cells0, const LatticeConfig& cfg, double T,
                                    const LatticeIntegrateOptions& opt = {}) {
    OdeOptions o;
    o.rtol = opt.rtol;
    o.atol = opt.atol;
    o.h_max = opt.h_max;
    OdeRhs rhs = [&cfg](double, const std::vector<double>& v, std::vector<double>& dv) {
        const auto d = lds_rhs_pairs(unpack_cells(v), cfg);
        dv = pack_cells(d);
    };
    Trajectory traj;
    Dopri5(rhs, o).integrate(0.0, pack_cells(cells0), T, &traj);
    return traj;
}

/// Generic weakly coupled skew-product lattice: per-cell hyperbolic dynamics
/// y_k' = f_k(y_k) + eps F_k(Y, P), drift p_k' = g_k(y_k) + eps G_k(Y, P).
struct GenericLds {
    int dim_y = 2;
    int dim_p = 1;
    std::size_t n_cells = 1;
    double epsilon = 0.0;
    double coupling_bound = 1.0;  // declared sup-norm bound on F, G

    std::function<void(std::size_t k, const double* y, double* dy)> f;
    std::function<void(std::size_t k, const double* y, double* dp)> g;
    // couplings see the stacked state; may be empty when epsilon = 0
    std::function<void(std::size_t k, const std::vector<double>& Y, const std::vector<double>& P, double* out)> F_eps;
    std::function<void(std::size_t k, const std::vector<double>& Y, const std::vector<double>& P, double* out)> G_eps;

    std::size_t y_size() const { return n_cells * std::size_t(dim_y); }
    std::size_t p_size() const { return n_cells * std::size_t(dim_p); }

    void eval_F(std::size_t k, const std::vector<double>& Y, const std::vector<double>& P,
                std::vector<double>& out) const {
        out.assign(dim_y, 0.0);
        if (F_eps) F_eps(k, Y, P, out.data());
    }
    void eval_G(std::size_t k, const std::vector<double>& Y, const std::vector<double>& P,
                std::vector<double>& out) const {
        out.assign(dim_p, 0.0);
        if (G_eps) G_eps(k, Y, P, out.data());
    }

    /// Stochastic audit of the declared (fgcr) coupling bound.
    double coupling_sample_max(const std::vector<double>& Y, const std::vector<double>& P) const {
        double m = 0.0;
        std::vector<double> tmp;
        for (std::size_t k = 0; k < n_cells; ++k) {
            eval_F(k, Y, P, tmp);
            for (double v : tmp) m = std::max(m, std::abs(v));
            eval_G(k, Y, P, tmp);
            for (double v : tmp) m = std::max(m, std::abs(v));
        }
        return m;
    }
};

/// Direct integration of the coupled generic LDS; state = [Y | P] stacked.
inline Trajectory integrate_lattice(const GenericLds& lds, const std::vector<double>& Y0,
                                    const std::vector<double>& P0, double T,
                                    const LatticeIntegrateOptions& opt = {}) {
    const std::size_t ny = lds.y_size(), np = lds.p_size();
    OdeOptions o;
    o.rtol = opt.rtol;
    o.atol = opt.atol;
    o.h_max = opt.h_max;
    OdeRhs rhs = [&lds, ny, np](double, const std::vector<double>& s, std::vector<double>& ds) {
        ds.assign(ny + np, 0.0);
        std::vector<double> Y(s.begin(), s.begin() + ny), P(s.begin() + ny, s.end());
        std::vector<double> tmp;
        for (std::size_t k = 0; k < lds.n_cells; ++k) {
            lds.f(k, Y.data() + k * lds.dim_y, ds.data() + k * lds.dim_y);
            lds.g(k, Y.data() + k * lds.dim_y, ds.data() + ny + k * lds.dim_p);
            if (lds.epsilon != 0.0) {
                lds.eval_F(k, Y, P, tmp);
                for (int i = 0; i < lds.dim_y; ++i) ds[k * lds.dim_y + i] += lds.epsilon * tmp[i];
                lds.eval_G(k, Y, P, tmp);
                for (int i = 0; i < lds.dim_p; ++i) ds[ny + k * lds.dim_p + i] += lds.epsilon * tmp[i];
            }
        }
    };
    std::vector<double> s0 = Y0;
    s0.insert(s0.end(), P0.begin(), P0.end());
    Trajectory traj;
    Dopri5(rhs, o).integrate(0.0, s0, T, &traj);
    return traj;
}

}  // namespace solgrid::lattice
