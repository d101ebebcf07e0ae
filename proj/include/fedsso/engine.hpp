#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fedsso/data.hpp"
#include "fedsso/errors.hpp"
#include "fedsso/metrics.hpp"
#include "fedsso/model.hpp"
#include "fedsso/rng.hpp"
#include "fedsso/sso.hpp"
#include "fedsso/vec.hpp"

namespace fedsso {

enum class Schedule { Constant, TheoryConvex, TheoryNonconvex };

inline const char* schedule_name(Schedule s) {
    switch (s) {
        case Schedule::Constant: return "constant";
        case Schedule::TheoryConvex: return "theory_convex";
        case Schedule::TheoryNonconvex: return "theory_nonconvex";
    }
    return "?";
}

struct AlgoConfig {
    Algorithm algorithm = Algorithm::FedAvg;
    double alpha = 0.01;  // local step size
    double eta = 1.0;     // global step size (FedSSO only)
    int tau = 5;          // local steps per round
    int batch_size = 100; // <= 0 means full shard
    Schedule schedule = Schedule::Constant;
    int rounds = 200;
    std::uint64_t seed = 1;
    int threads = 1;
    int bytes_per_scalar = 4;

    // FedSSO
    double lambda_lo = 1e-4;
    double lambda_hi = 9999.0;
    int reset_period = 200;
    InverseMode inverse_mode = InverseMode::SpdSolve;
    double kappa_lo = 0.1;
    double kappa_hi = 10.0;

    // FedDANE proximal coefficient
    double mu_prox = 0.001;

    // smoothness overrides for the theory schedules (required for the MLP)
    std::optional<double> smoothness_L;
    std::optional<double> smoothness_mu;

    void validate() {
        if (algorithm == Algorithm::FedNl)
            throw UnknownAlgorithm("fednl is accounted for but not executable");
        if (!(alpha > 0.0)) throw InvalidParam("alpha must be > 0");
        if (!(eta > 0.0)) throw InvalidParam("eta must be > 0");
        if (tau < 1) throw InvalidParam("tau must be >= 1");
        if (rounds < 0) throw InvalidParam("rounds must be >= 0");
        if (threads < 1) threads = 1;
        if (bytes_per_scalar < 1) throw InvalidParam("bytes_per_scalar must be >= 1");
        if (algorithm == Algorithm::FedSgd) tau = 1;
    }
};

struct ClientState {
    int client_id = 0;
    ParamVector control_variate;  // Scaffold only
};

struct ServerState {
    ParamVector x;
    int round = 0;

    // per-algorithm extras
    ParamVector scaffold_c;
    BfgsState bfgs;
    bool bfgs_ready = false;
};

// Optional instrumentation. on_round fires after each completed round;
// on_local_grads receives each client's summed stochastic gradients for the
// round (ascending client order), which is what the lighthouse estimate
// averages.
struct RoundHooks {
    std::function<void(const ServerState&, const RoundRecord&)> on_round;
    std::function<void(int, const std::vector<ParamVector>&)> on_local_grads;
};

struct ExperimentResult {
    std::vector<RoundRecord> records;
    bool diverged = false;
    int diverged_round = 0;
};

namespace detail {

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mu;
    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const int nw = static_cast<int>(std::min<std::size_t>(threads, n));
    pool.reserve(nw);
    for (int t = 0; t < nw; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline std::size_t effective_batch(int batch_size, std::size_t shard_size) {
    if (batch_size <= 0) return shard_size;
    return std::min<std::size_t>(static_cast<std::size_t>(batch_size), shard_size);
}

}  // namespace detail

// tau steps of x <- x - alpha * (stochastic_grad(x) + correction). When
// grad_sum is non-null it accumulates the raw stochastic gradients (without
// the correction), one contribution per local step.
inline ParamVector local_update(const ModelSpec& model, const ClientShard& shard,
                                const ParamVector& x_start, double alpha, int tau,
                                int batch_size, Rng& rng,
                                const ParamVector* correction = nullptr,
                                ParamVector* grad_sum = nullptr) {
    if (!(alpha > 0.0)) throw InvalidParam("local_update: alpha must be > 0");
    if (tau < 1) throw InvalidParam("local_update: tau must be >= 1");
    const std::size_t batch = detail::effective_batch(batch_size, shard.samples.size());
    ParamVector x = x_start;
    for (int j = 0; j < tau; ++j) {
        ParamVector g = stochastic_grad(model, x, shard, batch, rng);
        if (grad_sum) vec::axpy(1.0, g, *grad_sum);
        if (correction) vec::axpy(1.0, *correction, g);
        vec::axpy(-alpha, g, x);
    }
    return x;
}

// v = sum_i p_i x_i, accumulated in the given (ascending client id) order so
// results are bitwise independent of scheduling.
inline ParamVector aggregate(std::span<const ParamVector> updates,
                             std::span<const double> weights) {
    if (updates.size() != weights.size() || updates.empty())
        throw InvalidDimension("aggregate: updates/weights size mismatch");
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    if (std::abs(wsum - 1.0) > 1e-9)
        throw WeightError("aggregate: weights sum to " + std::to_string(wsum));
    ParamVector v(updates[0].size(), 0.0);
    for (std::size_t i = 0; i < updates.size(); ++i) {
        vec::check_dim(updates[i], v.size(), "aggregate");
        vec::axpy(weights[i], updates[i], v);
    }
    return v;
}

namespace detail {

inline std::vector<const ClientShard*> shards_by_id(const FederatedDataset& data) {
    std::vector<const ClientShard*> out;
    out.reserve(data.train_shards.size());
    for (const ClientShard& s : data.train_shards) out.push_back(&s);
    std::sort(out.begin(), out.end(), [](const ClientShard* a, const ClientShard* b) {
        return a->client_id < b->client_id;
    });
    return out;
}

inline double global_train_loss(const ModelSpec& model, const FederatedDataset& data,
                                const ParamVector& x) {
    double total = 0.0;
    for (const ClientShard* s : shards_by_id(data))
        total += s->weight * loss(model, x, std::span<const Sample>(s->samples));
    return total;
}

inline ParamVector global_train_grad(const ModelSpec& model, const FederatedDataset& data,
                                     const ParamVector& x) {
    ParamVector g(x.size(), 0.0);
    for (const ClientShard* s : shards_by_id(data)) {
        ParamVector gi = grad(model, x, std::span<const Sample>(s->samples));
        vec::axpy(s->weight, gi, g);
    }
    return g;
}

struct RoundTraffic {
    long long bytes_up = 0;
    long long bytes_down = 0;
    int messages_up = 0;
    int messages_down = 0;

    void broadcast(std::size_t n_clients, std::size_t scalars, int bps) {
        messages_down += static_cast<int>(n_clients);
        bytes_down += static_cast<long long>(n_clients) * scalars * bps;
    }
    void gather(std::size_t n_clients, std::size_t scalars, int bps) {
        messages_up += static_cast<int>(n_clients);
        bytes_up += static_cast<long long>(n_clients) * scalars * bps;
    }
};

inline Rng client_rng(const AlgoConfig& cfg, int round_k, int client_id) {
    return Rng::derive(cfg.seed, {0xc11e27u, static_cast<std::uint64_t>(round_k),
                                  static_cast<std::uint64_t>(client_id)});
}

}  // namespace detail

// Per-round step sizes under the configured schedule.
inline StepSizes round_step_sizes(const AlgoConfig& cfg, int k, const SmoothnessInfo& sm,
                                  int num_clients) {
    switch (cfg.schedule) {
        case Schedule::Constant:
            return {cfg.alpha, cfg.eta};
        case Schedule::TheoryConvex: {
            ScheduleParams p;
            p.L = sm.L;
            p.mu = sm.mu;
            p.kappa_lo = cfg.kappa_lo;
            p.kappa_hi = cfg.kappa_hi;
            p.tau = cfg.tau;
            p.num_clients = num_clients;
            return schedule_theory_convex(k, p);
        }
        case Schedule::TheoryNonconvex:
            return schedule_theory_nonconvex(k, sm.L, cfg.tau);
    }
    throw InvalidParam("round_step_sizes: unknown schedule");
}

// Executes one communication round of the configured algorithm and returns
// the filled RoundRecord. server.round is advanced by exactly one.
inline RoundRecord run_round(const ModelSpec& model, const FederatedDataset& data,
                             const AlgoConfig& cfg, ServerState& server,
                             std::vector<ClientState>& clients, const SmoothnessInfo& sm,
                             const RoundHooks& hooks = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    const int k = server.round + 1;
    const std::size_t n = data.train_shards.size();
    const std::size_t d = server.x.size();
    vec::check_dim(server.x, model.dim(), "run_round");
    if (clients.size() != n) throw InvalidParam("run_round: clients/shards size mismatch");
    const StepSizes step = round_step_sizes(cfg, k, sm, static_cast<int>(n));

    // All per-client work and the final summation run in ascending client_id
    // order, regardless of how the shard list happens to be arranged.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return data.train_shards[a].client_id < data.train_shards[b].client_id;
    });
    auto shard_at = [&](std::size_t i) -> const ClientShard& {
        return data.train_shards[order[i]];
    };

    std::vector<double> weights(n);
    for (std::size_t i = 0; i < n; ++i) weights[i] = shard_at(i).weight;

    detail::RoundTraffic traffic;
    const int bps = cfg.bytes_per_scalar;
    std::vector<ParamVector> updates(n);
    std::vector<ParamVector> grad_sums;
    const bool want_grads = static_cast<bool>(hooks.on_local_grads);
    if (want_grads) grad_sums.assign(n, ParamVector(d, 0.0));

    ParamVector x_new;
    bool enforcement = false;

    switch (cfg.algorithm) {
        case Algorithm::FedSgd:
        case Algorithm::FedAvg: {
            traffic.broadcast(n, d, bps);
            detail::parallel_for(n, cfg.threads, [&](std::size_t i) {
                Rng rng = detail::client_rng(cfg, k, shard_at(i).client_id);
                updates[i] = local_update(model, shard_at(i), server.x, step.alpha,
                                          cfg.tau, cfg.batch_size, rng, nullptr,
                                          want_grads ? &grad_sums[i] : nullptr);
            });
            traffic.gather(n, d, bps);
            x_new = aggregate(updates, weights);
            break;
        }
        case Algorithm::Scaffold: {
            if (server.scaffold_c.size() != d) server.scaffold_c.assign(d, 0.0);
            // broadcast carries (x, c): doubled payload, single message
            traffic.broadcast(n, 2 * d, bps);
            std::vector<ParamVector> dc(n);
            detail::parallel_for(n, cfg.threads, [&](std::size_t i) {
                ClientState& cs = clients[order[i]];
                if (cs.control_variate.size() != d) cs.control_variate.assign(d, 0.0);
                ParamVector correction = vec::sub(server.scaffold_c, cs.control_variate);
                Rng rng = detail::client_rng(cfg, k, shard_at(i).client_id);
                updates[i] = local_update(model, shard_at(i), server.x, step.alpha,
                                          cfg.tau, cfg.batch_size, rng, &correction,
                                          want_grads ? &grad_sums[i] : nullptr);
                // Option II: c_i+ = c_i - c + (x_k - y_i) / (tau * alpha)
                ParamVector ci_new = vec::sub(cs.control_variate, server.scaffold_c);
                ParamVector drift = vec::sub(server.x, updates[i]);
                vec::axpy(1.0 / (step.alpha * cfg.tau), drift, ci_new);
                dc[i] = vec::sub(ci_new, cs.control_variate);
                cs.control_variate = std::move(ci_new);
            });
            traffic.gather(n, 2 * d, bps);
            x_new = aggregate(updates, weights);
            for (std::size_t i = 0; i < n; ++i)
                vec::axpy(1.0 / static_cast<double>(n), dc[i], server.scaffold_c);
            break;
        }
        case Algorithm::FedDane: {
            // phase A: gather local full gradients, form the global gradient
            traffic.broadcast(n, d, bps);
            std::vector<ParamVector> local_grads(n);
            detail::parallel_for(n, cfg.threads, [&](std::size_t i) {
                local_grads[i] =
                    grad(model, server.x, std::span<const Sample>(shard_at(i).samples));
            });
            traffic.gather(n, d, bps);
            ParamVector g_global = aggregate(local_grads, weights);
            // phase B: clients run tau steps on the proximal subproblem
            traffic.broadcast(n, d, bps);
            detail::parallel_for(n, cfg.threads, [&](std::size_t i) {
                const ClientShard& shard = shard_at(i);
                const std::size_t batch =
                    detail::effective_batch(cfg.batch_size, shard.samples.size());
                Rng rng = detail::client_rng(cfg, k, shard.client_id);
                ParamVector y = server.x;
                for (int j = 0; j < cfg.tau; ++j) {
                    ParamVector g = stochastic_grad(model, y, shard, batch, rng);
                    if (want_grads) vec::axpy(1.0, g, grad_sums[i]);
                    // grad of f_i(y) + <grad f(x) - grad f_i(x), y> + mu/2 |y-x|^2
                    vec::axpy(1.0, g_global, g);
                    vec::axpy(-1.0, local_grads[i], g);
                    ParamVector prox = vec::sub(y, server.x);
                    vec::axpy(cfg.mu_prox, prox, g);
                    vec::axpy(-step.alpha, g, y);
                }
                updates[i] = std::move(y);
            });
            traffic.gather(n, d, bps);
            x_new = aggregate(updates, weights);
            break;
        }
        case Algorithm::FedSso: {
            traffic.broadcast(n, d, bps);
            detail::parallel_for(n, cfg.threads, [&](std::size_t i) {
                Rng rng = detail::client_rng(cfg, k, shard_at(i).client_id);
                updates[i] = local_update(model, shard_at(i), server.x, step.alpha,
                                          cfg.tau, cfg.batch_size, rng, nullptr,
                                          want_grads ? &grad_sums[i] : nullptr);
            });
            traffic.gather(n, d, bps);
            ParamVector v_k = aggregate(updates, weights);
            ParamVector ghat = lighthouse_grad(server.x, v_k, step.alpha, cfg.tau);
            if (!server.bfgs_ready) {
                // round-1 bootstrap: step with B = I, no curvature pair yet
                server.bfgs = BfgsState::make(d, cfg.lambda_lo, cfg.lambda_hi,
                                              cfg.reset_period, cfg.inverse_mode);
                server.bfgs_ready = true;
            } else {
                ParamVector y_hat = vec::sub(ghat, server.bfgs.prev_ghat);
                ParamVector s = vec::sub(server.x, server.bfgs.prev_x);
                bfgs_update(server.bfgs, y_hat, s, k);
                enforcement = server.bfgs.enforcement_triggered;
            }
            x_new = server_step(server.x, v_k, server.bfgs, step.eta, step.alpha, cfg.tau);
            server.bfgs.prev_x = server.x;
            server.bfgs.prev_ghat = std::move(ghat);
            break;
        }
        case Algorithm::FedNl:
            throw UnknownAlgorithm("run_round: fednl is not executable");
    }

    if (want_grads) hooks.on_local_grads(k, grad_sums);

    if (!vec::all_finite(x_new) || vec::norm2(x_new) > 1e12) throw DivergenceDetected(k);

    RoundRecord rec;
    rec.round = k;
    rec.train_loss = detail::global_train_loss(model, data, x_new);
    if (std::isnan(rec.train_loss)) throw DivergenceDetected(k);
    rec.test_accuracy =
        (model.kind() != ModelKind::Quadratic && !data.test_set.empty())
            ? accuracy(model, x_new, std::span<const Sample>(data.test_set))
            : 0.0;
    rec.global_grad_norm = vec::norm2(detail::global_train_grad(model, data, x_new));
    rec.bytes_up = traffic.bytes_up;
    rec.bytes_down = traffic.bytes_down;
    rec.messages_up = traffic.messages_up;
    rec.messages_down = traffic.messages_down;
    rec.enforcement_triggered = enforcement;

    server.x = std::move(x_new);
    server.round = k;

    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                            t0)
                      .count();
    return rec;
}

// Runs cfg.rounds rounds from the model's default initial point (or x0 when
// provided). On divergence the loop stops early and the completed rounds'
// records are kept.
inline ExperimentResult run_experiment(AlgoConfig cfg, const ModelSpec& model,
                                       const FederatedDataset& data,
                                       const RoundHooks& hooks = {},
                                       std::optional<ParamVector> x0 = std::nullopt) {
    cfg.validate();
    if (data.train_shards.empty()) throw InvalidParam("run_experiment: no train shards");

    SmoothnessInfo sm{1.0, 1.0, 0.0};
    if (cfg.schedule != Schedule::Constant) {
        if (cfg.smoothness_L && cfg.smoothness_mu) {
            sm = SmoothnessInfo{*cfg.smoothness_L, *cfg.smoothness_mu, 0.0};
        } else {
            std::vector<Sample> pooled;
            for (const auto& s : data.train_shards)
                pooled.insert(pooled.end(), s.samples.begin(), s.samples.end());
            sm = estimate_smoothness(model, pooled);
            if (cfg.smoothness_L) sm.L = *cfg.smoothness_L;
            if (cfg.smoothness_mu) sm.mu = *cfg.smoothness_mu;
        }
        if (!(sm.L > 0.0)) throw InvalidParam("run_experiment: nonpositive L estimate");
        if (cfg.schedule == Schedule::TheoryConvex && !(sm.mu > 0.0))
            throw InvalidParam("run_experiment: theory_convex needs mu > 0");
    }

    ServerState server;
    server.x = x0 ? std::move(*x0) : model.init_params(cfg.seed);
    vec::check_dim(server.x, model.dim(), "run_experiment x0");
    server.scaffold_c.assign(server.x.size(), 0.0);
    std::vector<ClientState> clients(data.train_shards.size());
    for (std::size_t i = 0; i < clients.size(); ++i)
        clients[i].client_id = data.train_shards[i].client_id;

    ExperimentResult out;
    out.records.reserve(cfg.rounds);
    for (int k = 0; k < cfg.rounds; ++k) {
        try {
            RoundRecord rec = run_round(model, data, cfg, server, clients, sm, hooks);
            if (hooks.on_round) hooks.on_round(server, rec);
            out.records.push_back(rec);
        } catch (const DivergenceDetected& e) {
            out.diverged = true;
            out.diverged_round = e.round;
            break;
        }
    }
    return out;
}

}  // namespace fedsso
