#pragma once

#include <cmath>
#include <utility>

#include "fedsso/errors.hpp"
#include "fedsso/sym_matrix.hpp"
#include "fedsso/vec.hpp"

namespace fedsso {

enum class InverseMode {
    SpdSolve,    // Cholesky factor-and-solve per application
    DualInverse  // maintain the inverse incrementally (dual rank-two form)
};

// Server-side approximate Hessian state. B is rebuilt to the identity every
// reset_period rounds and kept symmetric positive definite by curvature
// clipping; on the rare factorization failure it falls back to the identity.
struct BfgsState {
    SymMatrix B;
    SymMatrix H;  // maintained inverse; only touched in DualInverse mode
    ParamVector prev_x;
    ParamVector prev_ghat;
    double lambda_lo = 1e-4;
    double lambda_hi = 9999.0;
    int reset_period = 200;
    int rounds_since_reset = 0;
    InverseMode inverse_mode = InverseMode::SpdSolve;

    // diagnostics for the most recent update
    bool last_clipped = false;
    bool last_skipped = false;
    bool enforcement_triggered = false;

    static BfgsState make(std::size_t dim, double lambda_lo, double lambda_hi,
                          int reset_period, InverseMode mode) {
        if (!(lambda_lo > 0.0) || !(lambda_hi > lambda_lo))
            throw InvalidParam("bfgs: need 0 < lambda < Lambda");
        if (reset_period < 1) throw InvalidParam("bfgs: reset_period must be >= 1");
        BfgsState s;
        s.B = SymMatrix::identity(dim);
        s.H = SymMatrix::identity(dim);
        s.lambda_lo = lambda_lo;
        s.lambda_hi = lambda_hi;
        s.reset_period = reset_period;
        s.inverse_mode = mode;
        return s;
    }
};

// Averaged-gradient estimate for the round: g = (x_k - v_k) / (alpha * tau).
inline ParamVector lighthouse_grad(const ParamVector& x_k, const ParamVector& v_k,
                                   double alpha, int tau) {
    vec::check_dim(v_k, x_k.size(), "lighthouse_grad");
    const double at = alpha * static_cast<double>(tau);
    if (!(at > 1e-300)) throw InvalidParam("lighthouse_grad: alpha*tau underflow");
    ParamVector g(x_k.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (x_k[i] - v_k[i]) / at;
    return g;
}

// Curvature value for the rank-two update. The raw inner product y^T s is
// kept only while lambda < |y|^2 / cur < Lambda; otherwise it is forced to
// 2/(lambda+Lambda) * |y|^2, which lands the ratio at the interval midpoint.
inline double enforce_curvature(const ParamVector& y_hat, const ParamVector& s,
                                double lambda_lo, double lambda_hi) {
    const double cur = vec::dot(y_hat, s);
    const double y2 = vec::dot(y_hat, y_hat);
    if (cur > 0.0) {
        const double ratio = y2 / cur;
        if (ratio > lambda_lo && ratio < lambda_hi) return cur;
    }
    return 2.0 / (lambda_lo + lambda_hi) * y2;
}

namespace detail {

// Rebuild H = B^{-1} from scratch (column-by-column Cholesky solve). Only
// used as a repair path when the incremental form degenerates.
inline void rebuild_inverse(BfgsState& state) {
    auto f = CholeskyFactor::factor(state.B);
    const std::size_t n = state.B.dim();
    if (!f) {
        state.H = SymMatrix::identity(n);
        return;
    }
    ParamVector e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        e[j] = 1.0;
        ParamVector col = f->solve(e);
        for (std::size_t i = 0; i < n; ++i) state.H.at(i, j) = col[i];
        e[j] = 0.0;
    }
    state.H.symmetrize();
}

// Incremental inverse for B_new = B + y y^T / cur - (Bs)(Bs)^T / sBs,
// via two Sherman-Morrison steps. Valid for clipped cur as well.
inline void update_inverse(BfgsState& state, const ParamVector& y_hat, double cur,
                           const ParamVector& bs, double s_bs) {
    const std::size_t n = state.H.dim();
    ParamVector hy = state.H.matvec(y_hat);
    const double d1 = cur + vec::dot(y_hat, hy);
    if (!(d1 > 0.0) || !std::isfinite(d1)) {
        rebuild_inverse(state);
        return;
    }
    state.H.add_outer(hy, -1.0 / d1);
    ParamVector hu = state.H.matvec(bs);
    const double d2 = s_bs - vec::dot(bs, hu);
    if (!(d2 > 0.0) || !std::isfinite(d2)) {
        rebuild_inverse(state);
        return;
    }
    state.H.add_outer(hu, 1.0 / d2);
    state.H.symmetrize();
}

}  // namespace detail

// One BFGS update with the clipped curvature. Every reset_period-th round
// the matrix is rebuilt to the identity; near-zero y or s skips the update
// (clipping a vanishing y would inject a near-singular rank-two term).
inline void bfgs_update(BfgsState& state, const ParamVector& y_hat, const ParamVector& s,
                        int round_k) {
    state.last_clipped = false;
    state.last_skipped = false;
    state.enforcement_triggered = false;

    if (round_k % state.reset_period == 0) {
        state.B = SymMatrix::identity(state.B.dim());
        state.H = SymMatrix::identity(state.H.dim());
        state.rounds_since_reset = 0;
        return;
    }
    state.rounds_since_reset += 1;

    if (vec::norm2(y_hat) <= 1e-12 || vec::norm2(s) <= 1e-12) {
        state.last_skipped = true;
        return;
    }
    ParamVector bs = state.B.matvec(s);
    const double s_bs = vec::dot(s, bs);
    if (s_bs <= 1e-14 * vec::dot(s, s)) {
        state.last_skipped = true;
        return;
    }

    const double raw = vec::dot(y_hat, s);
    const double cur = enforce_curvature(y_hat, s, state.lambda_lo, state.lambda_hi);
    state.last_clipped = (cur != raw);

    state.B.add_outer(y_hat, 1.0 / cur);
    state.B.add_outer(bs, -1.0 / s_bs);
    state.B.symmetrize();

    if (!state.B.all_finite() || !is_spd(state.B)) {
        state.B = SymMatrix::identity(state.B.dim());
        state.H = SymMatrix::identity(state.H.dim());
        state.enforcement_triggered = true;
        return;
    }
    if (state.inverse_mode == InverseMode::DualInverse)
        detail::update_inverse(state, y_hat, cur, bs, s_bs);
}

// B^{-1} g under the state's configured inverse strategy.
inline ParamVector apply_inverse(const BfgsState& state, const ParamVector& g) {
    vec::check_dim(g, state.B.dim(), "apply_inverse");
    if (state.inverse_mode == InverseMode::DualInverse) return state.H.matvec(g);
    auto f = CholeskyFactor::factor(state.B);
    if (!f) throw SingularHessian("apply_inverse: Cholesky factorization failed");
    return f->solve(g);
}

// Quasi-Newton global step: x_{k+1} = x_k - eta * B^{-1} (x_k - v_k)/(alpha*tau).
inline ParamVector server_step(const ParamVector& x_k, const ParamVector& v_k,
                               const BfgsState& state, double eta, double alpha, int tau) {
    if (!(eta > 0.0)) throw InvalidParam("server_step: eta must be > 0");
    ParamVector dir = apply_inverse(state, lighthouse_grad(x_k, v_k, alpha, tau));
    ParamVector x = x_k;
    vec::axpy(-eta, dir, x);
    return x;
}

// Parameters feeding the convex-theory schedule.
struct ScheduleParams {
    double L = 1.0;
    double mu = 1.0;
    double kappa_lo = 0.1;  // lower bound on the spectrum of B^{-1}
    double kappa_hi = 10.0;
    int tau = 1;
    int num_clients = 1;
};

struct StepSizes {
    double alpha;
    double eta;
};

// O(1/k) schedule:
//   gamma^{-1} = min{ N L / (2 kappa_lo mu), mu / (2L) }
//   eta_k = (2/mu) / (k + gamma),  alpha_k = eta_k L kappa_hi^2 / (mu tau kappa_lo)
inline StepSizes schedule_theory_convex(int k, const ScheduleParams& p) {
    if (k < 1) throw InvalidParam("schedule: k must be >= 1");
    if (!(p.mu > 0.0) || !(p.L >= p.mu) || !(p.kappa_lo > 0.0) || !(p.kappa_hi >= p.kappa_lo) ||
        p.tau < 1 || p.num_clients < 1)
        throw InvalidParam("schedule: invalid parameters");
    const double inv_gamma =
        std::min(static_cast<double>(p.num_clients) * p.L / (2.0 * p.kappa_lo * p.mu),
                 p.mu / (2.0 * p.L));
    const double gamma = 1.0 / inv_gamma;
    const double eta = (2.0 / p.mu) / (static_cast<double>(k) + gamma);
    const double alpha =
        eta * p.L * p.kappa_hi * p.kappa_hi / (p.mu * static_cast<double>(p.tau) * p.kappa_lo);
    return {alpha, eta};
}

inline double theory_convex_gamma(const ScheduleParams& p) {
    const double inv_gamma =
        std::min(static_cast<double>(p.num_clients) * p.L / (2.0 * p.kappa_lo * p.mu),
                 p.mu / (2.0 * p.L));
    return 1.0 / inv_gamma;
}

// Stationarity schedule: alpha_k = 1/(2 sqrt(6) tau L k), eta_k = 1/sqrt(k).
inline StepSizes schedule_theory_nonconvex(int k, double L, int tau) {
    if (k < 1) throw InvalidParam("schedule: k must be >= 1");
    if (!(L > 0.0) || tau < 1) throw InvalidParam("schedule: invalid parameters");
    const double alpha =
        1.0 / (2.0 * std::sqrt(6.0) * static_cast<double>(tau) * L * static_cast<double>(k));
    const double eta = 1.0 / std::sqrt(static_cast<double>(k));
    return {alpha, eta};
}

}  // namespace fedsso
