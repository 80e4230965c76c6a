#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "solgrid/core/util.hpp"

namespace solgrid {

/// Real banded matrix with kl sub- and ku super-diagonals, LAPACK-style band
/// storage with kl extra rows of fill for the pivoted factorization.
class BandMatrix {
public:
    BandMatrix(int n, int kl, int ku)
        : n_(n), kl_(kl), ku_(ku), ld_(2 * kl + ku + 1), ab_(std::size_t(ld_) * n, 0.0) {}

    int size() const { return n_; }
    int lower() const { return kl_; }
    int upper() const { return ku_; }

    bool in_band(int i, int j) const { return j - i <= ku_ && i - j <= kl_; }

    double& at(int i, int j) { return ab_[idx(i, j)]; }
    double at(int i, int j) const { return ab_[idx(i, j)]; }

    void add(int i, int j, double v) {
        if (!in_band(i, j)) {
            if (v != 0.0) throw NumericsError("BandMatrix: write outside band");
            return;
        }
        ab_[idx(i, j)] += v;
    }

    std::vector<double> apply(const std::vector<double>& x) const {
        std::vector<double> y(n_, 0.0);
        for (int i = 0; i < n_; ++i) {
            const int j0 = std::max(0, i - kl_), j1 = std::min(n_ - 1, i + ku_);
            double s = 0.0;
            for (int j = j0; j <= j1; ++j) s += ab_[idx(i, j)] * x[j];
            y[i] = s;
        }
        return y;
    }

    std::vector<double> apply_transpose(const std::vector<double>& x) const {
        std::vector<double> y(n_, 0.0);
        for (int i = 0; i < n_; ++i) {
            const int j0 = std::max(0, i - kl_), j1 = std::min(n_ - 1, i + ku_);
            for (int j = j0; j <= j1; ++j) y[j] += ab_[idx(i, j)] * x[i];
        }
        return y;
    }

private:
    friend class BandLu;
    int idx(int i, int j) const { return (kl_ + ku_ + i - j) * n_ + j; }

    int n_, kl_, ku_, ld_;
    std::vector<double> ab_;
};

/// LU factorization of a banded matrix with partial pivoting (gbtrf-style);
/// the factored form owns a copy of the band storage.
class BandLu {
public:
    explicit BandLu(const BandMatrix& a)
        : n_(a.n_), kl_(a.kl_), ku_(a.ku_), kv_(a.kl_ + a.ku_), ab_(a.ab_), piv_(a.n_) {
        for (int j = 0; j < n_; ++j) {
            const int km = std::min(kl_, n_ - 1 - j);  // candidate pivot rows below j
            int p = 0;
            double best = std::abs(entry(j, j));
            for (int i = 1; i <= km; ++i) {
                const double v = std::abs(entry(j + i, j));
                if (v > best) { best = v; p = i; }
            }
            piv_[j] = j + p;
            if (best == 0.0) throw NumericsError("BandLu: singular matrix");
            const int ju = std::min(n_ - 1, j + kv_);  // last column touched by row j after fill
            if (p != 0) {
                for (int k = j; k <= ju; ++k) std::swap(entry(j, k), entry(j + p, k));
            }
            const double pivot = entry(j, j);
            for (int i = 1; i <= km; ++i) {
                double& l = entry(j + i, j);
                l /= pivot;
                const double lij = l;
                if (lij == 0.0) continue;
                for (int k = j + 1; k <= ju; ++k) entry(j + i, k) -= lij * entry(j, k);
            }
        }
    }

    std::vector<double> solve(std::vector<double> b) const {
        for (int j = 0; j < n_ - 1; ++j) {
            if (piv_[j] != j) std::swap(b[j], b[piv_[j]]);
            const int km = std::min(kl_, n_ - 1 - j);
            for (int i = 1; i <= km; ++i) b[j + i] -= entry(j + i, j) * b[j];
        }
        for (int j = n_ - 1; j >= 0; --j) {
            b[j] /= entry(j, j);
            const int i0 = std::max(0, j - kv_);
            for (int i = i0; i < j; ++i) b[i] -= entry(i, j) * b[j];
        }
        return b;
    }

private:
    // Band index valid for the fill-extended band |i - j| <= kl + ku.
    double& entry(int i, int j) { return ab_[std::size_t(kl_ + ku_ + i - j) * n_ + j]; }
    double entry(int i, int j) const { return ab_[std::size_t(kl_ + ku_ + i - j) * n_ + j]; }

    int n_, kl_, ku_, kv_;
    std::vector<double> ab_;
    std::vector<int> piv_;
};

/// Solve the bordered system [A c; r^T d] [x; y] = [b; g] where A is banded.
/// Block elimination with one pass of iterative refinement on the full system;
/// adequate even when A alone is nearly singular, as in gauge-bordered Newton
/// systems where the border removes the kernel.
struct BorderedBandSolve {
    const BandMatrix& a;
    const std::vector<double>& c;  // extra column
    const std::vector<double>& r;  // extra row
    double d;

    std::pair<std::vector<double>, double> solve(const std::vector<double>& b, double g) const {
        BandLu lu(a);
        auto once = [&](const std::vector<double>& rhs, double rhs_g) {
            std::vector<double> z = lu.solve(rhs);
            std::vector<double> w = lu.solve(c);
            const double denom = d - dot(r, w);
            if (denom == 0.0) throw NumericsError("BorderedBandSolve: singular bordered system");
            // y solves r.(z - y w) + d y = g  =>  y (d - r.w) = g - r.z
            const double y = (rhs_g - dot(r, z)) / denom;
            std::vector<double> x = z;
            axpy(-y, w, x);
            return std::make_pair(x, y);
        };
        auto [x, y] = once(b, g);
        // one refinement pass against the exact bordered residual
        std::vector<double> res = a.apply(x);
        for (int i = 0; i < a.size(); ++i) res[i] = b[i] - res[i] - c[i] * y;
        double res_g = g - dot(r, x) - d * y;
        auto [dx, dy] = once(res, res_g);
        axpy(1.0, dx, x);
        y += dy;
        return {x, y};
    }
};

}  // namespace solgrid
