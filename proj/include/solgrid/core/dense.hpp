#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "solgrid/core/util.hpp"

namespace solgrid {

/// Dense row-major real matrix. Small sizes only (Newton blocks, monodromy,
/// Arnoldi projections); no attempt at blocking or BLAS.
class Mat {
public:
    Mat() = default;
    Mat(int rows, int cols, double fill = 0.0) : r_(rows), c_(cols), a_(std::size_t(rows) * cols, fill) {}

    static Mat identity(int n) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    int rows() const { return r_; }
    int cols() const { return c_; }
    double& operator()(int i, int j) { return a_[std::size_t(i) * c_ + j]; }
    double operator()(int i, int j) const { return a_[std::size_t(i) * c_ + j]; }
    double* data() { return a_.data(); }
    const double* data() const { return a_.data(); }

    Mat transposed() const {
        Mat t(c_, r_);
        for (int i = 0; i < r_; ++i)
            for (int j = 0; j < c_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    std::vector<double> apply(const std::vector<double>& x) const {
        std::vector<double> y(r_, 0.0);
        for (int i = 0; i < r_; ++i) {
            double s = 0.0;
            for (int j = 0; j < c_; ++j) s += (*this)(i, j) * x[j];
            y[i] = s;
        }
        return y;
    }

    friend Mat operator*(const Mat& a, const Mat& b) {
        Mat c(a.r_, b.c_);
        for (int i = 0; i < a.r_; ++i)
            for (int k = 0; k < a.c_; ++k) {
                const double aik = a(i, k);
                if (aik == 0.0) continue;
                for (int j = 0; j < b.c_; ++j) c(i, j) += aik * b(k, j);
            }
        return c;
    }

    double norm_inf() const {
        double m = 0.0;
        for (int i = 0; i < r_; ++i) {
            double s = 0.0;
            for (int j = 0; j < c_; ++j) s += std::abs((*this)(i, j));
            m = std::max(m, s);
        }
        return m;
    }

private:
    int r_ = 0, c_ = 0;
    std::vector<double> a_;
};

/// LU factorization with partial pivoting, in place. Returns the pivot
/// permutation; throws on exact singularity.
class DenseLu {
public:
    explicit DenseLu(Mat a) : lu_(std::move(a)), piv_(lu_.rows()) {
        const int n = lu_.rows();
        for (int i = 0; i < n; ++i) piv_[i] = i;
        for (int j = 0; j < n; ++j) {
            int p = j;
            double best = std::abs(lu_(j, j));
            for (int i = j + 1; i < n; ++i)
                if (std::abs(lu_(i, j)) > best) { best = std::abs(lu_(i, j)); p = i; }
            if (best == 0.0) throw NumericsError("DenseLu: singular matrix");
            if (p != j) {
                for (int k = 0; k < n; ++k) std::swap(lu_(p, k), lu_(j, k));
                std::swap(piv_[p], piv_[j]);
            }
            for (int i = j + 1; i < n; ++i) {
                lu_(i, j) /= lu_(j, j);
                const double lij = lu_(i, j);
                if (lij == 0.0) continue;
                for (int k = j + 1; k < n; ++k) lu_(i, k) -= lij * lu_(j, k);
            }
        }
    }

    std::vector<double> solve(const std::vector<double>& b) const {
        const int n = lu_.rows();
        std::vector<double> x(n);
        for (int i = 0; i < n; ++i) x[i] = b[piv_[i]];
        for (int i = 1; i < n; ++i) {
            double s = x[i];
            for (int j = 0; j < i; ++j) s -= lu_(i, j) * x[j];
            x[i] = s;
        }
        for (int i = n - 1; i >= 0; --i) {
            double s = x[i];
            for (int j = i + 1; j < n; ++j) s -= lu_(i, j) * x[j];
            x[i] = s / lu_(i, i);
        }
        return x;
    }

private:
    Mat lu_;
    std::vector<int> piv_;
};

inline std::vector<double> solve_dense(Mat a, const std::vector<double>& b) {
    return DenseLu(std::move(a)).solve(b);
}

namespace detail {

/// Balancing by diagonal similarity (Parlett-Reinsch), improves eigenvalue
/// accuracy for badly scaled matrices.
inline void balance(Mat& a) {
    const int n = a.rows();
    const double radix = 2.0;
    bool done = false;
    while (!done) {
        done = true;
        for (int i = 0; i < n; ++i) {
            double r = 0.0, c = 0.0;
            for (int j = 0; j < n; ++j)
                if (j != i) { c += std::abs(a(j, i)); r += std::abs(a(i, j)); }
            if (c != 0.0 && r != 0.0) {
                double g = r / radix, f = 1.0, s = c + r;
                while (c < g) { f *= radix; c *= radix * radix; }
                g = r * radix;
                while (c > g) { f /= radix; c /= radix * radix; }
                if ((c + r) / f < 0.95 * s) {
                    done = false;
                    g = 1.0 / f;
                    for (int j = 0; j < n; ++j) a(i, j) *= g;
                    for (int j = 0; j < n; ++j) a(j, i) *= f;
                }
            }
        }
    }
}

/// Reduction to upper Hessenberg form by stabilized elementary similarity.
inline void to_hessenberg(Mat& a) {
    const int n = a.rows();
    for (int m = 1; m < n - 1; ++m) {
        double x = 0.0;
        int i = m;
        for (int j = m; j < n; ++j)
            if (std::abs(a(j, m - 1)) > std::abs(x)) { x = a(j, m - 1); i = j; }
        if (i != m) {
            for (int j = m - 1; j < n; ++j) std::swap(a(i, j), a(m, j));
            for (int j = 0; j < n; ++j) std::swap(a(j, i), a(j, m));
        }
        if (x != 0.0) {
            for (int k = m + 1; k < n; ++k) {
                double y = a(k, m - 1);
                if (y != 0.0) {
                    y /= x;
                    a(k, m - 1) = y;
                    for (int j = m; j < n; ++j) a(k, j) -= y * a(m, j);
                    for (int j = 0; j < n; ++j) a(j, m) += y * a(j, k);
                }
            }
        }
    }
    for (int i = 2; i < n; ++i)
        for (int j = 0; j < i - 1; ++j) a(i, j) = 0.0;
}

/// Francis double-shift QR on an upper Hessenberg matrix; eigenvalues only.
inline std::vector<cplx> hqr(Mat& a) {
    const int n0 = a.rows();
    std::vector<cplx> w(n0);
    double anorm = 0.0;
    for (int i = 0; i < n0; ++i)
        for (int j = std::max(i - 1, 0); j < n0; ++j) anorm += std::abs(a(i, j));
    int nn = n0 - 1;
    double t = 0.0;
    while (nn >= 0) {
        int its = 0;
        int l;
        do {
            for (l = nn; l >= 1; --l) {
                double s = std::abs(a(l - 1, l - 1)) + std::abs(a(l, l));
                if (s == 0.0) s = anorm;
                if (std::abs(a(l, l - 1)) + s == s) { a(l, l - 1) = 0.0; break; }
            }
            double x = a(nn, nn);
            if (l == nn) {
                w[nn--] = cplx(x + t, 0.0);
            } else {
                double y = a(nn - 1, nn - 1);
                double wv = a(nn, nn - 1) * a(nn - 1, nn);
                if (l == nn - 1) {
                    double p = 0.5 * (y - x);
                    double q = p * p + wv;
                    double z = std::sqrt(std::abs(q));
                    x += t;
                    if (q >= 0.0) {
                        z = p + (p >= 0.0 ? std::abs(z) : -std::abs(z));
                        w[nn - 1] = w[nn] = cplx(x + z, 0.0);
                        if (z != 0.0) w[nn] = cplx(x - wv / z, 0.0);
                    } else {
                        w[nn - 1] = cplx(x + p, z);
                        w[nn] = std::conj(w[nn - 1]);
                    }
                    nn -= 2;
                } else {
                    if (its == 60) throw NumericsError("hqr: too many iterations");
                    double p = 0.0, q = 0.0, z = 0.0, r = 0.0, s = 0.0;
                    if (its == 10 || its == 20) {
                        t += x;
                        for (int i = 0; i <= nn; ++i) a(i, i) -= x;
                        s = std::abs(a(nn, nn - 1)) + std::abs(a(nn - 1, nn - 2));
                        y = x = 0.75 * s;
                        wv = -0.4375 * s * s;
                    }
                    ++its;
                    int m;
                    for (m = nn - 2; m >= l; --m) {
                        z = a(m, m);
                        r = x - z;
                        s = y - z;
                        p = (r * s - wv) / a(m + 1, m) + a(m, m + 1);
                        q = a(m + 1, m + 1) - z - r - s;
                        r = a(m + 2, m + 1);
                        s = std::abs(p) + std::abs(q) + std::abs(r);
                        p /= s; q /= s; r /= s;
                        if (m == l) break;
                        double u = std::abs(a(m, m - 1)) * (std::abs(q) + std::abs(r));
                        double v = std::abs(p) * (std::abs(a(m - 1, m - 1)) + std::abs(z) + std::abs(a(m + 1, m + 1)));
                        if (u + v == v) break;
                    }
                    for (int i = m + 2; i <= nn; ++i) {
                        a(i, i - 2) = 0.0;
                        if (i != m + 2) a(i, i - 3) = 0.0;
                    }
                    for (int k = m; k <= nn - 1; ++k) {
                        if (k != m) {
                            p = a(k, k - 1);
                            q = a(k + 1, k - 1);
                            r = (k != nn - 1) ? a(k + 2, k - 1) : 0.0;
                            x = std::abs(p) + std::abs(q) + std::abs(r);
                            if (x != 0.0) { p /= x; q /= x; r /= x; }
                        }
                        s = std::sqrt(p * p + q * q + r * r);
                        if (p < 0.0) s = -s;
                        if (s == 0.0) continue;
                        if (k == m) {
                            if (l != m) a(k, k - 1) = -a(k, k - 1);
                        } else {
                            a(k, k - 1) = -s * x;
                        }
                        p += s;
                        x = p / s; double yy = q / s; z = r / s;
                        q /= p; r /= p;
                        for (int j = k; j <= nn; ++j) {
                            p = a(k, j) + q * a(k + 1, j);
                            if (k != nn - 1) {
                                p += r * a(k + 2, j);
                                a(k + 2, j) -= p * z;
                            }
                            a(k + 1, j) -= p * yy;
                            a(k, j) -= p * x;
                        }
                        int mmin = (nn < k + 3) ? nn : k + 3;
                        for (int i = l; i <= mmin; ++i) {
                            p = x * a(i, k) + yy * a(i, k + 1);
                            if (k != nn - 1) {
                                p += z * a(i, k + 2);
                                a(i, k + 2) -= p * r;
                            }
                            a(i, k + 1) -= p * q;
                            a(i, k) -= p;
                        }
                    }
                }
            }
        } while (l < nn - 1 && nn >= 0);
    }
    return w;
}

}  // namespace detail

/// All eigenvalues of a dense real matrix (balance + Hessenberg + QR).
inline std::vector<cplx> eigenvalues(Mat a) {
    if (a.rows() != a.cols()) throw NumericsError("eigenvalues: matrix not square");
    if (a.rows() == 0) return {};
    if (a.rows() == 1) return {cplx(a(0, 0), 0.0)};
    detail::balance(a);
    detail::to_hessenberg(a);
    auto w = detail::hqr(a);
    std::sort(w.begin(), w.end(), [](const cplx& x, const cplx& y) {
        if (x.real() != y.real()) return x.real() < y.real();
        return x.imag() < y.imag();
    });
    return w;
}

/// Real eigenvector for an (approximately known) real eigenvalue, by inverse
/// iteration on a regularized shift.
inline std::vector<double> eigenvector(const Mat& a, double lambda, int iters = 20) {
    const int n = a.rows();
    Mat shifted = a;
    double scale = std::max(a.norm_inf(), 1.0);
    for (int i = 0; i < n; ++i) shifted(i, i) -= lambda + 1e-13 * scale;
    DenseLu lu(shifted);
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = 1.0 / std::sqrt(double(n)) * (1.0 + 0.01 * i);
    for (int it = 0; it < iters; ++it) {
        v = lu.solve(v);
        double nv = norm_2(v);
        if (nv == 0.0) throw NumericsError("eigenvector: inverse iteration collapsed");
        for (double& x : v) x /= nv;
    }
    return v;
}

/// One-dimensional nullspace direction of a (nearly) rank-deficient square
/// matrix, via inverse iteration at shift 0.
inline std::vector<double> nullspace_vector(const Mat& a) { return eigenvector(a, 0.0); }

/// Roots of the monic cubic x^3 + a2 x^2 + a1 x + a0 via its companion matrix.
inline std::vector<cplx> cubic_roots_companion(double a2, double a1, double a0) {
    Mat c(3, 3);
    c(0, 1) = 1.0;
    c(1, 2) = 1.0;
    c(2, 0) = -a0; c(2, 1) = -a1; c(2, 2) = -a2;
    return eigenvalues(c);
}

/// Roots of the same cubic by Cardano-style closed form (independent route).
inline std::vector<cplx> cubic_roots_closed_form(double a2, double a1, double a0) {
    // depressed cubic t^3 + p t + q, x = t - a2/3
    const double p = a1 - a2 * a2 / 3.0;
    const double q = 2.0 * a2 * a2 * a2 / 27.0 - a2 * a1 / 3.0 + a0;
    const double shift = -a2 / 3.0;
    const double disc = q * q / 4.0 + p * p * p / 27.0;
    std::vector<cplx> roots;
    if (disc >= 0.0) {
        const double sd = std::sqrt(disc);
        const double u = std::cbrt(-q / 2.0 + sd);
        const double v = std::cbrt(-q / 2.0 - sd);
        const double t1 = u + v;
        roots.push_back(cplx(t1 + shift, 0.0));
        // remaining pair from quadratic t^2 + t1 t + (t1^2 + p)
        const cplx half(-t1 / 2.0, 0.0);
        const double rad = t1 * t1 / 4.0 - (t1 * t1 + p);
        if (rad >= 0.0) {
            roots.push_back(cplx(half.real() + std::sqrt(rad) + shift, 0.0));
            roots.push_back(cplx(half.real() - std::sqrt(rad) + shift, 0.0));
        } else {
            const double im = std::sqrt(-rad);
            roots.push_back(cplx(half.real() + shift, im));
            roots.push_back(cplx(half.real() + shift, -im));
        }
    } else {
        // three real roots, trigonometric form
        const double r = std::sqrt(-p * p * p / 27.0);
        const double phi = std::acos(std::clamp(-q / (2.0 * r), -1.0, 1.0));
        const double m = 2.0 * std::sqrt(-p / 3.0);
        for (int k = 0; k < 3; ++k)
            roots.push_back(cplx(m * std::cos((phi + 2.0 * pi * k) / 3.0) + shift, 0.0));
    }
    std::sort(roots.begin(), roots.end(), [](const cplx& x, const cplx& y) {
        if (x.real() != y.real()) return x.real() < y.real();
        return x.imag() < y.imag();
    });
    return roots;
}

}  // namespace solgrid
