#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "fedsso/errors.hpp"
#include "fedsso/rng.hpp"
#include "fedsso/vec.hpp"

namespace fedsso {

// Dense square matrix, row-major, used for the approximate Hessian and its
// inverse. Dimensions stay at desk scale (d <= a few thousand), so plain
// O(d^2)/O(d^3) algebra is fine.
class SymMatrix {
public:
    SymMatrix() = default;
    explicit SymMatrix(std::size_t n) : n_(n), a_(n * n, 0.0) {}

    static SymMatrix identity(std::size_t n) {
        SymMatrix m(n);
        for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    static SymMatrix diagonal(const std::vector<double>& d) {
        SymMatrix m(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) m.at(i, i) = d[i];
        return m;
    }

    std::size_t dim() const { return n_; }

    double& at(std::size_t i, std::size_t j) { return a_[i * n_ + j]; }
    double at(std::size_t i, std::size_t j) const { return a_[i * n_ + j]; }

    ParamVector matvec(const ParamVector& x) const {
        vec::check_dim(x, n_, "matvec");
        ParamVector y(n_, 0.0);
        for (std::size_t i = 0; i < n_; ++i) {
            double s = 0.0;
            const double* row = &a_[i * n_];
            for (std::size_t j = 0; j < n_; ++j) s += row[j] * x[j];
            y[i] = s;
        }
        return y;
    }

    double trace() const {
        double t = 0.0;
        for (std::size_t i = 0; i < n_; ++i) t += at(i, i);
        return t;
    }

    // max_ij |a_ij - a_ji|
    double max_asymmetry() const {
        double m = 0.0;
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = i + 1; j < n_; ++j)
                m = std::max(m, std::abs(at(i, j) - at(j, i)));
        return m;
    }

    void symmetrize() {
        for (std::size_t i = 0; i < n_; ++i) {
            for (std::size_t j = i + 1; j < n_; ++j) {
                double v = 0.5 * (at(i, j) + at(j, i));
                at(i, j) = v;
                at(j, i) = v;
            }
        }
    }

    // A += c * v v^T
    void add_outer(const ParamVector& v, double c) {
        vec::check_dim(v, n_, "add_outer");
        for (std::size_t i = 0; i < n_; ++i) {
            const double cvi = c * v[i];
            for (std::size_t j = 0; j < n_; ++j) a_[i * n_ + j] += cvi * v[j];
        }
    }

    bool all_finite() const {
        for (double x : a_) {
            if (!std::isfinite(x)) return false;
        }
        return true;
    }

private:
    std::size_t n_ = 0;
    std::vector<double> a_;
};

// Lower-triangular Cholesky factor of an SPD matrix; factorization failure is
// how positive definiteness is detected at runtime.
class CholeskyFactor {
public:
    static std::optional<CholeskyFactor> factor(const SymMatrix& a) {
        const std::size_t n = a.dim();
        CholeskyFactor f;
        f.n_ = n;
        f.l_.assign(n * n, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            double d = a.at(j, j);
            for (std::size_t k = 0; k < j; ++k) d -= f.l_[j * n + k] * f.l_[j * n + k];
            if (!(d > 0.0) || !std::isfinite(d)) return std::nullopt;
            const double ljj = std::sqrt(d);
            f.l_[j * n + j] = ljj;
            for (std::size_t i = j + 1; i < n; ++i) {
                double s = a.at(i, j);
                for (std::size_t k = 0; k < j; ++k) s -= f.l_[i * n + k] * f.l_[j * n + k];
                f.l_[i * n + j] = s / ljj;
            }
        }
        return f;
    }

    // Solves A x = b given A = L L^T.
    ParamVector solve(const ParamVector& b) const {
        vec::check_dim(b, n_, "cholesky solve");
        ParamVector y(b);
        for (std::size_t i = 0; i < n_; ++i) {
            double s = y[i];
            for (std::size_t k = 0; k < i; ++k) s -= l_[i * n_ + k] * y[k];
            y[i] = s / l_[i * n_ + i];
        }
        for (std::size_t ii = n_; ii > 0; --ii) {
            const std::size_t i = ii - 1;
            double s = y[i];
            for (std::size_t k = i + 1; k < n_; ++k) s -= l_[k * n_ + i] * y[k];
            y[i] = s / l_[i * n_ + i];
        }
        return y;
    }

private:
    std::size_t n_ = 0;
    std::vector<double> l_;
};

inline bool is_spd(const SymMatrix& a) { return CholeskyFactor::factor(a).has_value(); }

// Extreme eigenvalues of a symmetric matrix by power iteration; the smallest
// one comes from a second pass on (shift*I - A).
struct EigenExtremes {
    double min_eig;
    double max_eig;
};

namespace detail {

inline double power_iteration(const SymMatrix& a, double shift, double rel_tol, int max_iters) {
    const std::size_t n = a.dim();
    ParamVector v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 1e-3 * static_cast<double>(i % 7);
    double nv = vec::norm2(v);
    for (double& x : v) x /= nv;
    double lam = 0.0;
    for (int it = 0; it < max_iters; ++it) {
        ParamVector w = a.matvec(v);
        if (shift != 0.0) {
            for (std::size_t i = 0; i < n; ++i) w[i] = shift * v[i] - w[i];
        }
        double lam_new = vec::dot(v, w);
        double nw = vec::norm2(w);
        if (nw == 0.0) return 0.0;  // v in the kernel: eigenvalue 0
        for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / nw;
        // Rayleigh residual against the current estimate.
        ParamVector r = a.matvec(v);
        if (shift != 0.0) {
            for (std::size_t i = 0; i < n; ++i) r[i] = shift * v[i] - r[i];
        }
        double rq = vec::dot(v, r);
        double res = 0.0;
        for (std::size_t i = 0; i < n; ++i) res += (r[i] - rq * v[i]) * (r[i] - rq * v[i]);
        res = std::sqrt(res);
        if (res <= rel_tol * (std::abs(rq) + 1e-30) && it > 0 &&
            std::abs(rq - lam_new) <= rel_tol * (std::abs(rq) + 1e-30)) {
            return rq;
        }
        lam = lam_new;
    }
    return lam;
}

}  // namespace detail

// Dense SPD matrix with a linearly spaced spectrum, rotated by a seeded
// Givens sweep so it is not diagonal.
inline SymMatrix rotated_spectrum_matrix(std::size_t d, double eig_min, double eig_max,
                                         std::uint64_t seed) {
    if (d < 1 || !(eig_min > 0.0) || !(eig_max >= eig_min))
        throw InvalidParam("rotated_spectrum_matrix: bad spectrum");
    std::vector<double> diag(d);
    for (std::size_t i = 0; i < d; ++i)
        diag[i] = d == 1 ? eig_min
                         : eig_min + (eig_max - eig_min) * static_cast<double>(i) /
                                         static_cast<double>(d - 1);
    SymMatrix a = SymMatrix::diagonal(diag);
    Rng rng = Rng::derive(seed, {0x59dau});
    for (std::size_t r = 0; r + 1 < d; ++r) {
        const double theta = rng.uniform(0.1, 1.2);
        const double c = std::cos(theta), s = std::sin(theta);
        for (std::size_t j = 0; j < d; ++j) {
            const double u = a.at(r, j), v = a.at(r + 1, j);
            a.at(r, j) = c * u - s * v;
            a.at(r + 1, j) = s * u + c * v;
        }
        for (std::size_t i = 0; i < d; ++i) {
            const double u = a.at(i, r), v = a.at(i, r + 1);
            a.at(i, r) = c * u - s * v;
            a.at(i, r + 1) = s * u + c * v;
        }
    }
    a.symmetrize();
    return a;
}

inline EigenExtremes extreme_eigenvalues(const SymMatrix& a, double rel_tol = 1e-8,
                                         int max_iters = 100000) {
    // Gershgorin bound gives a shift that makes (shift*I - A) PSD.
    double bound = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < a.dim(); ++j) row += std::abs(a.at(i, j));
        bound = std::max(bound, row);
    }
    if (bound == 0.0) return {0.0, 0.0};
    double lam_max = detail::power_iteration(a, 0.0, rel_tol, max_iters);
    // |lam_max| from plain power iteration is the dominant |eigenvalue|; for
    // SPD inputs it is the maximum. Use the shifted pass for the minimum.
    double shifted = detail::power_iteration(a, bound, rel_tol, max_iters);
    double lam_min = bound - shifted;
    if (lam_max < lam_min) std::swap(lam_max, lam_min);
    return {lam_min, lam_max};
}

}  // namespace fedsso
