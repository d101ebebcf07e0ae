#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "fedsso/engine.hpp"
#include "fedsso/errors.hpp"
#include "fedsso/metrics.hpp"
#include "fedsso/model.hpp"
#include "fedsso/sym_matrix.hpp"
#include "fedsso/vec.hpp"

namespace fedsso {

// ---------------------------------------------------------------------------
// Lighthouse existence oracle (one dimension, exact gradients)
// ---------------------------------------------------------------------------

struct Lighthouse1dResult {
    double x_hat = 0.0;
    double residual = 0.0;   // |f'(x_hat) - gbar|
    double avg_grad = 0.0;   // gbar over the simulated round
    double hull_lo = 0.0;
    double hull_hi = 0.0;
    bool in_hull = false;
    bool sign_change = false;  // auxiliary function bracketed a root
};

// Simulates an N-client, tau-step round with exact scalar gradients, then
// bisects f'(x) = gbar over the hull of every visited iterate. The auxiliary
// function may fail to bracket for exotic inputs; that is reported, not
// asserted.
inline Lighthouse1dResult lighthouse_oracle_1d(
    const std::vector<std::function<double(double)>>& client_grads, double x_k, double alpha,
    int tau) {
    if (client_grads.empty()) throw InvalidParam("lighthouse oracle: no clients");
    if (!(alpha > 0.0) || tau < 1) throw InvalidParam("lighthouse oracle: bad alpha/tau");
    const std::size_t n = client_grads.size();
    std::vector<double> visited;
    double grad_total = 0.0;
    for (const auto& gi : client_grads) {
        double x = x_k;
        visited.push_back(x);
        for (int j = 0; j < tau; ++j) {
            const double g = gi(x);
            grad_total += g;
            x -= alpha * g;
            visited.push_back(x);
        }
    }
    const double gbar = grad_total / (static_cast<double>(n) * tau);
    auto mean_grad = [&](double x) {
        double s = 0.0;
        for (const auto& gi : client_grads) s += gi(x);
        return s / static_cast<double>(n);
    };
    auto h = [&](double x) { return mean_grad(x) - gbar; };

    Lighthouse1dResult out;
    out.avg_grad = gbar;
    out.hull_lo = *std::min_element(visited.begin(), visited.end());
    out.hull_hi = *std::max_element(visited.begin(), visited.end());

    // Bracket hunt over visited points (sorted), then bisection.
    std::sort(visited.begin(), visited.end());
    const double tol = 1e-10;
    double lo = visited.front(), hi = visited.back();
    bool have_bracket = false;
    double prev_x = visited.front();
    double prev_h = h(prev_x);
    if (std::abs(prev_h) <= tol) {
        out.x_hat = prev_x;
        out.residual = std::abs(prev_h);
        out.sign_change = true;
        out.in_hull = true;
        return out;
    }
    for (std::size_t i = 1; i < visited.size(); ++i) {
        const double cur_h = h(visited[i]);
        if (std::abs(cur_h) <= tol) {
            out.x_hat = visited[i];
            out.residual = std::abs(cur_h);
            out.sign_change = true;
            out.in_hull = true;
            return out;
        }
        if ((prev_h < 0.0) != (cur_h < 0.0)) {
            lo = prev_x;
            hi = visited[i];
            have_bracket = true;
            break;
        }
        prev_x = visited[i];
        prev_h = cur_h;
    }
    if (!have_bracket) {
        // no sign change on the hull: report the best visited point
        double best = visited.front(), best_h = std::abs(h(best));
        for (double x : visited) {
            const double v = std::abs(h(x));
            if (v < best_h) {
                best = x;
                best_h = v;
            }
        }
        out.x_hat = best;
        out.residual = best_h;
        out.sign_change = false;
        out.in_hull = true;
        return out;
    }

    double h_lo = h(lo);
    double mid = 0.5 * (lo + hi);
    for (int it = 0; it < 500; ++it) {
        mid = 0.5 * (lo + hi);
        const double hm = h(mid);
        if (std::abs(hm) <= tol) break;
        if ((hm < 0.0) == (h_lo < 0.0)) {
            lo = mid;
            h_lo = hm;
        } else {
            hi = mid;
        }
    }
    out.x_hat = mid;
    out.residual = std::abs(h(mid));
    out.sign_change = true;
    out.in_hull = (mid >= out.hull_lo - 1e-12 && mid <= out.hull_hi + 1e-12);
    return out;
}

// ---------------------------------------------------------------------------
// SPD spectrum probe
// ---------------------------------------------------------------------------

// Extreme eigenvalues of a symmetric matrix (shifted power iteration,
// relative tolerance 1e-8). Throws InvalidMatrix for asymmetric input.
inline EigenExtremes spd_spectrum(const SymMatrix& b_hat) {
    double scale = 1.0;
    for (std::size_t i = 0; i < b_hat.dim(); ++i)
        scale = std::max(scale, std::abs(b_hat.at(i, i)));
    if (b_hat.max_asymmetry() > 1e-9 * scale)
        throw InvalidMatrix("spd_spectrum: matrix is not symmetric");
    return extreme_eigenvalues(b_hat, 1e-8);
}

// ---------------------------------------------------------------------------
// Centralized clipped-BFGS oracle
// ---------------------------------------------------------------------------

// Deliberately self-contained reimplementation: naive dense matrix, LU solve,
// and the clipping rule written out again. Used only to cross-check the
// federated path in its degenerate configuration.
namespace oracle_detail {

using Mat = std::vector<std::vector<double>>;

inline Mat eye(std::size_t n) {
    Mat m(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) m[i][i] = 1.0;
    return m;
}

inline std::vector<double> lu_solve(Mat a, std::vector<double> b) {
    const std::size_t n = a.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (a[piv][col] == 0.0) throw OracleFailure("bfgs oracle: singular matrix");
        std::swap(a[piv], a[col]);
        std::swap(b[piv], b[col]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r][col] / a[col][col];
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n, 0.0);
    for (std::size_t ii = n; ii > 0; --ii) {
        const std::size_t i = ii - 1;
        double s = b[i];
        for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
        x[i] = s / a[i][i];
    }
    return x;
}

}  // namespace oracle_detail

// Iterates x <- x - eta * B^{-1} grad f(x) with the clipped rank-two update,
// starting from B = I; returns the iterates x_1..x_steps (post-step points).
inline std::vector<ParamVector> centralized_bfgs_oracle(const ModelSpec& model,
                                                        const ParamVector& x0,
                                                        std::span<const Sample> samples,
                                                        int steps, double eta,
                                                        double lambda_lo, double lambda_hi) {
    using oracle_detail::Mat;
    const std::size_t d = model.dim();
    Mat b = oracle_detail::eye(d);
    ParamVector x = x0;
    ParamVector g_prev, x_prev;
    std::vector<ParamVector> trajectory;
    for (int k = 1; k <= steps; ++k) {
        ParamVector g = grad(model, x, samples);
        if (k >= 2) {
            std::vector<double> y(d), s(d);
            for (std::size_t i = 0; i < d; ++i) {
                y[i] = g[i] - g_prev[i];
                s[i] = x[i] - x_prev[i];
            }
            double ny = 0.0, ns = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                ny += y[i] * y[i];
                ns += s[i] * s[i];
            }
            if (std::sqrt(ny) > 1e-12 && std::sqrt(ns) > 1e-12) {
                std::vector<double> bs(d, 0.0);
                for (std::size_t i = 0; i < d; ++i)
                    for (std::size_t j = 0; j < d; ++j) bs[i] += b[i][j] * s[j];
                double sbs = 0.0;
                for (std::size_t i = 0; i < d; ++i) sbs += s[i] * bs[i];
                if (sbs > 1e-14 * ns) {
                    double cur = 0.0;
                    for (std::size_t i = 0; i < d; ++i) cur += y[i] * s[i];
                    const double ratio = ny / cur;
                    if (!(cur > 0.0 && ratio > lambda_lo && ratio < lambda_hi))
                        cur = 2.0 / (lambda_lo + lambda_hi) * ny;
                    for (std::size_t i = 0; i < d; ++i)
                        for (std::size_t j = 0; j < d; ++j)
                            b[i][j] += y[i] * y[j] / cur - bs[i] * bs[j] / sbs;
                    for (std::size_t i = 0; i < d; ++i)
                        for (std::size_t j = i + 1; j < d; ++j) {
                            const double v = 0.5 * (b[i][j] + b[j][i]);
                            b[i][j] = v;
                            b[j][i] = v;
                        }
                }
            }
        }
        x_prev = x;
        g_prev = g;
        ParamVector dir = oracle_detail::lu_solve(b, g);
        if (!vec::all_finite(dir)) throw OracleFailure("bfgs oracle: non-finite direction");
        for (std::size_t i = 0; i < d; ++i) x[i] -= eta * dir[i];
        if (vec::norm2(x) > 1e12) throw OracleFailure("bfgs oracle: diverged");
        trajectory.push_back(x);
    }
    return trajectory;
}

// ---------------------------------------------------------------------------
// O(1/k) rate check
// ---------------------------------------------------------------------------

struct RateReport {
    bool bounded = false;
    double sup_early = 0.0;
    double sup_late = 0.0;
};

// Checks that w_k = (k + gamma) (f(x_k) - f*) does not grow: the late-window
// sup stays within 1.5x of the early-window sup, consistent with a finite nu.
inline RateReport rate_check(const std::vector<RoundRecord>& records, double f_star,
                             double gamma) {
    if (records.size() < 10) throw InvalidParam("rate_check: too few rounds");
    const int last = records.back().round;
    const int early_lo = std::max(1, last / 10);
    const int mid = last / 2;
    RateReport rep;
    rep.sup_early = -1e300;
    rep.sup_late = -1e300;
    for (const RoundRecord& r : records) {
        const double gap = r.train_loss - f_star;
        if (gap < -1e-9)
            throw InconsistentOracle("rate_check: f(x_k) below f* at round " +
                                     std::to_string(r.round));
        const double w = (static_cast<double>(r.round) + gamma) * gap;
        if (r.round >= early_lo && r.round <= mid) rep.sup_early = std::max(rep.sup_early, w);
        if (r.round >= mid) rep.sup_late = std::max(rep.sup_late, w);
    }
    rep.bounded = rep.sup_late <= 1.5 * rep.sup_early;
    return rep;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

// Max over coordinates of |fd_j - g_j| / (1 + |g_j|), with central
// differences at h_j = h * (1 + |x_j|).
inline double fd_gradient_check(const ModelSpec& model, const ParamVector& params,
                                std::span<const Sample> samples, double h) {
    if (!(h > 0.0)) throw InvalidParam("fd_gradient_check: h must be > 0");
    ParamVector g = grad(model, params, samples);
    ParamVector x = params;
    double worst = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double hj = h * (1.0 + std::abs(x[j]));
        const double saved = x[j];
        x[j] = saved + hj;
        const double fp = loss(model, x, samples);
        x[j] = saved - hj;
        const double fm = loss(model, x, samples);
        x[j] = saved;
        const double fd = (fp - fm) / (2.0 * hj);
        worst = std::max(worst, std::abs(fd - g[j]) / (1.0 + std::abs(g[j])));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// The executable check suite behind `fedsim verify`
// ---------------------------------------------------------------------------

struct CheckResult {
    std::string name;
    bool passed = false;
    double measured = 0.0;
    double threshold = 0.0;
    std::string note;
};

namespace detail {

inline FederatedDataset make_blob_federation(std::uint64_t seed, int classes, int features,
                                             int n_total, double spread, int clients,
                                             int labels_per_client) {
    auto samples = synth_blobs(seed, classes, features, n_total, spread);
    auto [train, test] = train_test_split(samples, 0.75, seed + 1);
    FederatedDataset data;
    data.train_shards = partition_label_skew(train, clients, labels_per_client, seed + 2);
    data.test_set = std::move(test);
    data.num_features = features;
    data.num_classes = classes;
    return data;
}

inline ModelSpec make_test_quadratic(std::size_t d, double lo, double hi) {
    return ModelSpec::quadratic(rotated_spectrum_matrix(d, lo, hi, 77),
                                std::vector<double>(d, 0.0));
}

}  // namespace detail

inline std::vector<CheckResult> run_all_checks() {
    std::vector<CheckResult> results;
    auto push = [&](const std::string& name, bool ok, double measured, double threshold,
                    std::string note = "") {
        results.push_back({name, ok, measured, threshold, std::move(note)});
    };

    // 1. lighthouse, two quadratic clients
    {
        std::vector<std::function<double(double)>> grads = {
            [](double x) { return x - 1.0; }, [](double x) { return x + 1.0; }};
        auto r = lighthouse_oracle_1d(grads, 2.0, 0.1, 3);
        push("lighthouse_1d_residual", r.sign_change && r.residual <= 1e-10, r.residual, 1e-10);
        push("lighthouse_1d_in_hull", r.in_hull, r.in_hull ? 1.0 : 0.0, 1.0);
    }

    // 2. lighthouse, coordinatewise over a separable 5-d objective
    {
        bool all_ok = true;
        double worst = 0.0;
        Rng rng = Rng::derive(5, {0x11f0});
        for (int c = 0; c < 5; ++c) {
            const double a1 = rng.uniform(0.5, 2.0), a2 = rng.uniform(0.5, 2.0);
            const double c1 = rng.uniform(-1.0, 1.0), c2 = rng.uniform(-1.0, 1.0);
            std::vector<std::function<double(double)>> grads = {
                [a1, c1](double x) { return a1 * (x - c1); },
                [a2, c2](double x) { return a2 * (x - c2); }};
            auto r = lighthouse_oracle_1d(grads, 1.5, 0.1, 3);
            worst = std::max(worst, r.residual);
            all_ok = all_ok && r.sign_change && r.in_hull && r.residual <= 1e-10;
        }
        push("lighthouse_coordinatewise", all_ok, worst, 1e-10);
    }

    // 3. SPD spectrum + trace bound over a full FedSSO run (with resets)
    {
        ModelSpec model = ModelSpec::mclr(3, 6, 1e-3);
        FederatedDataset data = detail::make_blob_federation(11, 3, 6, 600, 0.4, 5, 2);
        AlgoConfig cfg;
        cfg.algorithm = Algorithm::FedSso;
        cfg.alpha = 0.05;
        cfg.eta = 0.5;
        cfg.tau = 5;
        cfg.batch_size = 20;
        cfg.rounds = 60;
        cfg.reset_period = 25;
        cfg.seed = 3;
        double min_eig = 1e300, max_inv = 0.0, min_inv = 1e300;
        double worst_trace_slack = 1e300;
        bool all_spd = true;
        RoundHooks hooks;
        hooks.on_round = [&](const ServerState& server, const RoundRecord&) {
            if (!server.bfgs_ready) return;
            auto ext = spd_spectrum(server.bfgs.B);
            min_eig = std::min(min_eig, ext.min_eig);
            all_spd = all_spd && is_spd(server.bfgs.B);
            min_inv = std::min(min_inv, 1.0 / ext.max_eig);
            max_inv = std::max(max_inv, 1.0 / ext.min_eig);
            const double bound = static_cast<double>(server.bfgs.B.dim()) +
                                 static_cast<double>(server.bfgs.rounds_since_reset) *
                                     server.bfgs.lambda_hi;
            worst_trace_slack = std::min(worst_trace_slack, bound - server.bfgs.B.trace());
        };
        auto res = run_experiment(cfg, model, data, hooks);
        std::ostringstream note;
        note << "inverse spectrum within [" << min_inv << ", " << max_inv << "]";
        push("spd_cholesky_every_round", all_spd && !res.diverged, all_spd ? 1.0 : 0.0, 1.0);
        push("spd_min_eigenvalue", min_eig >= 1e-12, min_eig, 1e-12, note.str());
        push("spd_trace_bound", worst_trace_slack >= 0.0, worst_trace_slack, 0.0);
    }

    // 4. degenerate equivalence vs the centralized oracle
    {
        ModelSpec model = detail::make_test_quadratic(10, 0.5, 3.0);
        ParamVector x0(10, 1.0);
        std::vector<Sample> dummy{{std::vector<double>{0.0}, 0}};
        FederatedDataset data;
        data.train_shards.push_back({0, dummy, 1.0});
        data.num_features = 1;
        data.num_classes = 1;
        AlgoConfig cfg;
        cfg.algorithm = Algorithm::FedSso;
        cfg.alpha = 0.1;
        cfg.eta = 0.5;
        cfg.tau = 1;
        cfg.batch_size = 0;
        cfg.rounds = 50;
        cfg.reset_period = 1000;  // R > K: no reset
        std::vector<ParamVector> fed;
        RoundHooks hooks;
        hooks.on_round = [&](const ServerState& s, const RoundRecord&) { fed.push_back(s.x); };
        run_experiment(cfg, model, data, hooks, x0);
        auto oracle = centralized_bfgs_oracle(model, x0, dummy, 50, 0.5, 1e-4, 9999.0);
        double worst = 0.0;
        for (std::size_t i = 0; i < oracle.size() && i < fed.size(); ++i)
            worst = std::max(worst, vec::norm_inf(vec::sub(fed[i], oracle[i])));
        push("degenerate_equivalence", fed.size() == oracle.size() && worst <= 1e-10, worst,
             1e-10);
    }

    // 5. O(1/k) rate on a strongly convex quadratic, theory schedule
    {
        ModelSpec model = detail::make_test_quadratic(10, 0.5, 1.0);
        auto sm = estimate_smoothness(model, {});
        std::vector<Sample> dummy(10, Sample{std::vector<double>{0.0}, 0});
        FederatedDataset data;
        for (int c = 0; c < 5; ++c)
            data.train_shards.push_back(
                {c, std::vector<Sample>(dummy.begin(), dummy.begin() + 2), 0.2});
        data.num_features = 1;
        data.num_classes = 1;
        AlgoConfig cfg;
        cfg.algorithm = Algorithm::FedSso;
        cfg.schedule = Schedule::TheoryConvex;
        cfg.tau = 5;
        cfg.batch_size = 0;
        cfg.rounds = 2000;
        cfg.kappa_lo = 1.0 / sm.L;
        cfg.kappa_hi = 1.0 / sm.mu;
        auto res = run_experiment(cfg, model, data, {}, ParamVector(10, 1.0));
        // f* by Newton: one exact solve on the quadratic
        auto f = CholeskyFactor::factor(model.quad_matrix());
        ParamVector x_star = f->solve(model.quad_offset());
        const double f_star = loss(model, x_star, {});
        ScheduleParams p{sm.L, sm.mu, cfg.kappa_lo, cfg.kappa_hi, cfg.tau, 5};
        auto rep = rate_check(res.records, f_star, theory_convex_gamma(p));
        std::ostringstream note;
        note << "sup_early=" << rep.sup_early << " sup_late=" << rep.sup_late;
        push("rate_check_bounded", rep.bounded && !res.diverged,
             rep.sup_early > 0 ? rep.sup_late / rep.sup_early : 0.0, 1.5, note.str());
    }

    // 6. finite-difference gradient checks
    {
        ModelSpec quad = detail::make_test_quadratic(8, 0.5, 4.0);
        Rng rng = Rng::derive(9, {0xfd});
        ParamVector xq(8);
        for (double& v : xq) v = rng.normal();
        const double e0 = fd_gradient_check(quad, xq, {}, 1e-6);
        push("fd_quadratic", e0 <= 1e-8, e0, 1e-8);

        ModelSpec mclr = ModelSpec::mclr(4, 7, 1e-3);
        auto samples = synth_blobs(21, 4, 7, 60, 0.5);
        ParamVector xm(mclr.dim());
        for (double& v : xm) v = 0.3 * rng.normal();
        const double e1 = fd_gradient_check(mclr, xm, samples, 1e-6);
        push("fd_mclr", e1 <= 1e-5, e1, 1e-5);

        ModelSpec mlp = ModelSpec::mlp(6, 5, 3);
        auto ms = synth_blobs(22, 3, 6, 40, 0.5);
        ParamVector xp = mlp.init_params(4);
        const double e2 = fd_gradient_check(mlp, xp, ms, 1e-5);
        push("fd_mlp", e2 <= 1e-4, e2, 1e-4);
    }

    // 7. communication accounting consistency, all executable algorithms
    {
        ModelSpec model = ModelSpec::mclr(3, 5, 1e-3);
        FederatedDataset data = detail::make_blob_federation(31, 3, 5, 400, 0.5, 4, 2);
        const CommModel comm{static_cast<long long>(model.dim()), 4};
        bool ok = true;
        long long worst = 0;
        for (Algorithm algo : {Algorithm::FedSgd, Algorithm::FedAvg, Algorithm::Scaffold,
                               Algorithm::FedDane, Algorithm::FedSso}) {
            AlgoConfig cfg;
            cfg.algorithm = algo;
            cfg.alpha = 0.05;
            cfg.rounds = 5;
            cfg.batch_size = 10;
            auto res = run_experiment(cfg, model, data);
            const long long expect = bits_per_round(algo, comm);
            for (const auto& r : res.records) {
                const long long per_client = (r.bytes_up + r.bytes_down) / 4;
                worst = std::max(worst, std::llabs(per_client - expect));
                ok = ok && per_client == expect;
                const int m = algo == Algorithm::FedDane ? 8 : 4;
                ok = ok && r.messages_up == m && r.messages_down == m;
            }
        }
        push("accounting_consistency", ok, static_cast<double>(worst), 0.0);
    }

    // 8. Table-level totals for the reference MCLR shape (d = 7850)
    {
        const CommModel comm{7850, 4};
        const bool ok = comm.n_c() == 62800 &&
                        bits_per_round(Algorithm::FedAvg, comm) * 200 == 12560000 &&
                        bits_per_round(Algorithm::FedSso, comm) * 20 == 1256000 &&
                        bits_per_round(Algorithm::Scaffold, comm) * 71 == 8917600;
        push("accounting_reference_totals", ok, ok ? 1.0 : 0.0, 1.0);
    }

    return results;
}

}  // namespace fedsso
