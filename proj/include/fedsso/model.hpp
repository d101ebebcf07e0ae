#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedsso/errors.hpp"
#include "fedsso/rng.hpp"
#include "fedsso/sym_matrix.hpp"
#include "fedsso/vec.hpp"

namespace fedsso {

// One labeled example. Features are dense; desk-scale dimensions only.
struct Sample {
    std::vector<double> features;
    int label = 0;
};

// One client's slice of the training data plus its aggregation weight.
struct ClientShard {
    int client_id = 0;
    std::vector<Sample> samples;
    double weight = 0.0;  // p_i, sums to 1 across a federation
};

struct SmoothnessInfo {
    double L = 0.0;      // Lipschitz-smoothness constant
    double mu = 0.0;     // strong-convexity constant
    double sigma = 0.0;  // gradient-noise bound (informational)
};

enum class ModelKind { Mclr, Quadratic, Mlp };

// Model descriptor. Parameters live in a flat vector; the layout per kind:
//   MCLR:      [W (C x F, row-major), b (C)]
//   Quadratic: [x (d)] for f(x) = 1/2 x^T A x - b^T x  (samples are ignored)
//   MLP:       [W1 (H x F), b1 (H), W2 (C x H), b2 (C)], tanh hidden layer
class ModelSpec {
public:
    static ModelSpec mclr(int num_classes, int num_features, double l2_coeff) {
        if (num_classes < 2 || num_features < 1)
            throw InvalidParam("mclr: need num_classes >= 2 and num_features >= 1");
        if (l2_coeff < 0.0) throw InvalidParam("mclr: l2_coeff must be >= 0");
        ModelSpec m;
        m.kind_ = ModelKind::Mclr;
        m.num_classes_ = num_classes;
        m.num_features_ = num_features;
        m.l2_coeff_ = l2_coeff;
        return m;
    }

    static ModelSpec quadratic(SymMatrix a, std::vector<double> b) {
        if (a.dim() == 0 || a.dim() != b.size())
            throw InvalidDimension("quadratic: A and b dimensions disagree");
        if (a.max_asymmetry() > 1e-10) throw InvalidMatrix("quadratic: A is not symmetric");
        if (!is_spd(a)) throw InvalidMatrix("quadratic: A is not positive definite");
        ModelSpec m;
        m.kind_ = ModelKind::Quadratic;
        m.quad_a_ = std::move(a);
        m.quad_b_ = std::move(b);
        return m;
    }

    static ModelSpec mlp(int num_features, int hidden_width, int num_classes) {
        if (num_classes < 2 || num_features < 1 || hidden_width < 1)
            throw InvalidParam("mlp: bad shape");
        ModelSpec m;
        m.kind_ = ModelKind::Mlp;
        m.num_classes_ = num_classes;
        m.num_features_ = num_features;
        m.hidden_ = hidden_width;
        return m;
    }

    ModelKind kind() const { return kind_; }
    int num_classes() const { return num_classes_; }
    int num_features() const { return num_features_; }
    int hidden_width() const { return hidden_; }
    double l2_coeff() const { return l2_coeff_; }
    const SymMatrix& quad_matrix() const { return quad_a_; }
    const std::vector<double>& quad_offset() const { return quad_b_; }

    std::size_t dim() const {
        switch (kind_) {
            case ModelKind::Mclr:
                return static_cast<std::size_t>(num_classes_) * num_features_ + num_classes_;
            case ModelKind::Quadratic:
                return quad_a_.dim();
            case ModelKind::Mlp:
                return static_cast<std::size_t>(hidden_) * num_features_ + hidden_ +
                       static_cast<std::size_t>(num_classes_) * hidden_ + num_classes_;
        }
        return 0;
    }

    // Default starting point: zeros for the convex models, scaled random
    // normals for the MLP (zero init would be a saddle).
    ParamVector init_params(std::uint64_t seed) const {
        ParamVector x(dim(), 0.0);
        if (kind_ == ModelKind::Mlp) {
            Rng rng = Rng::derive(seed, {0x1217u});
            const double s1 = 1.0 / std::sqrt(static_cast<double>(num_features_));
            const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden_));
            std::size_t p = 0;
            for (int i = 0; i < hidden_ * num_features_; ++i) x[p++] = s1 * rng.normal();
            p += hidden_;  // b1 stays zero
            for (int i = 0; i < num_classes_ * hidden_; ++i) x[p++] = s2 * rng.normal();
        }
        return x;
    }

private:
    ModelKind kind_ = ModelKind::Quadratic;
    int num_classes_ = 0;
    int num_features_ = 0;
    int hidden_ = 0;
    double l2_coeff_ = 0.0;
    SymMatrix quad_a_;
    std::vector<double> quad_b_;
};

namespace detail {

inline void softmax_inplace(std::vector<double>& z) {
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (double& v : z) {
        v = std::exp(v - m);
        s += v;
    }
    for (double& v : z) v /= s;
}

inline void check_samples(const ModelSpec& model, std::span<const Sample> samples) {
    if (model.kind() == ModelKind::Quadratic) return;  // samples ignored
    if (samples.empty()) throw EmptyBatch("empty sample list");
    for (const Sample& s : samples) {
        if (static_cast<int>(s.features.size()) != model.num_features())
            throw InvalidDimension("sample feature width != model num_features");
        if (s.label < 0 || s.label >= model.num_classes())
            throw LabelError("label " + std::to_string(s.label) + " out of range");
    }
}

// MCLR forward: class probabilities for one sample.
inline std::vector<double> mclr_probs(const ModelSpec& m, const ParamVector& w,
                                      const Sample& s) {
    const int C = m.num_classes();
    const int F = m.num_features();
    std::vector<double> z(C);
    for (int c = 0; c < C; ++c) {
        double acc = w[static_cast<std::size_t>(C) * F + c];  // bias
        const double* row = &w[static_cast<std::size_t>(c) * F];
        for (int f = 0; f < F; ++f) acc += row[f] * s.features[f];
        z[c] = acc;
    }
    softmax_inplace(z);
    return z;
}

struct MlpForward {
    std::vector<double> hidden;  // tanh activations
    std::vector<double> probs;
};

inline MlpForward mlp_forward(const ModelSpec& m, const ParamVector& w, const Sample& s) {
    const int F = m.num_features(), H = m.hidden_width(), C = m.num_classes();
    const std::size_t w1 = 0, b1 = static_cast<std::size_t>(H) * F,
                      w2 = b1 + H, b2 = w2 + static_cast<std::size_t>(C) * H;
    MlpForward out;
    out.hidden.resize(H);
    for (int h = 0; h < H; ++h) {
        double acc = w[b1 + h];
        const double* row = &w[w1 + static_cast<std::size_t>(h) * F];
        for (int f = 0; f < F; ++f) acc += row[f] * s.features[f];
        out.hidden[h] = std::tanh(acc);
    }
    out.probs.resize(C);
    for (int c = 0; c < C; ++c) {
        double acc = w[b2 + c];
        const double* row = &w[w2 + static_cast<std::size_t>(c) * H];
        for (int h = 0; h < H; ++h) acc += row[h] * out.hidden[h];
        out.probs[c] = acc;
    }
    softmax_inplace(out.probs);
    return out;
}

}  // namespace detail

// Mean per-sample loss plus the l2 penalty (MCLR weights only; bias exempt).
inline double loss(const ModelSpec& model, const ParamVector& params,
                   std::span<const Sample> samples) {
    vec::check_dim(params, model.dim(), "loss");
    detail::check_samples(model, samples);
    switch (model.kind()) {
        case ModelKind::Quadratic: {
            ParamVector ax = model.quad_matrix().matvec(params);
            return 0.5 * vec::dot(params, ax) - vec::dot(model.quad_offset(), params);
        }
        case ModelKind::Mclr: {
            double total = 0.0;
            for (const Sample& s : samples) {
                auto p = detail::mclr_probs(model, params, s);
                total += -std::log(std::max(p[s.label], 1e-300));
            }
            double penalty = 0.0;
            const std::size_t nw = static_cast<std::size_t>(model.num_classes()) *
                                   model.num_features();
            for (std::size_t i = 0; i < nw; ++i) penalty += params[i] * params[i];
            return total / static_cast<double>(samples.size()) +
                   0.5 * model.l2_coeff() * penalty;
        }
        case ModelKind::Mlp: {
            double total = 0.0;
            for (const Sample& s : samples) {
                auto fwd = detail::mlp_forward(model, params, s);
                total += -std::log(std::max(fwd.probs[s.label], 1e-300));
            }
            return total / static_cast<double>(samples.size());
        }
    }
    throw InvalidParam("loss: unknown model kind");
}

// Exact full-batch gradient of loss(), same flat layout as params.
inline ParamVector grad(const ModelSpec& model, const ParamVector& params,
                        std::span<const Sample> samples) {
    vec::check_dim(params, model.dim(), "grad");
    detail::check_samples(model, samples);
    ParamVector g(model.dim(), 0.0);
    switch (model.kind()) {
        case ModelKind::Quadratic: {
            g = model.quad_matrix().matvec(params);
            vec::axpy(-1.0, model.quad_offset(), g);
            return g;
        }
        case ModelKind::Mclr: {
            const int C = model.num_classes(), F = model.num_features();
            const double inv_n = 1.0 / static_cast<double>(samples.size());
            for (const Sample& s : samples) {
                auto p = detail::mclr_probs(model, params, s);
                for (int c = 0; c < C; ++c) {
                    const double delta = (p[c] - (c == s.label ? 1.0 : 0.0)) * inv_n;
                    double* row = &g[static_cast<std::size_t>(c) * F];
                    for (int f = 0; f < F; ++f) row[f] += delta * s.features[f];
                    g[static_cast<std::size_t>(C) * F + c] += delta;
                }
            }
            const std::size_t nw = static_cast<std::size_t>(C) * F;
            for (std::size_t i = 0; i < nw; ++i) g[i] += model.l2_coeff() * params[i];
            return g;
        }
        case ModelKind::Mlp: {
            const int F = model.num_features(), H = model.hidden_width(),
                      C = model.num_classes();
            const std::size_t w1 = 0, b1 = static_cast<std::size_t>(H) * F,
                              w2 = b1 + H, b2 = w2 + static_cast<std::size_t>(C) * H;
            const double inv_n = 1.0 / static_cast<double>(samples.size());
            for (const Sample& s : samples) {
                auto fwd = detail::mlp_forward(model, params, s);
                std::vector<double> dz(C);
                for (int c = 0; c < C; ++c)
                    dz[c] = (fwd.probs[c] - (c == s.label ? 1.0 : 0.0)) * inv_n;
                std::vector<double> dh(H, 0.0);
                for (int c = 0; c < C; ++c) {
                    double* row = &g[w2 + static_cast<std::size_t>(c) * H];
                    const double* wrow = &params[w2 + static_cast<std::size_t>(c) * H];
                    for (int h = 0; h < H; ++h) {
                        row[h] += dz[c] * fwd.hidden[h];
                        dh[h] += dz[c] * wrow[h];
                    }
                    g[b2 + c] += dz[c];
                }
                for (int h = 0; h < H; ++h) {
                    const double da = dh[h] * (1.0 - fwd.hidden[h] * fwd.hidden[h]);
                    double* row = &g[w1 + static_cast<std::size_t>(h) * F];
                    for (int f = 0; f < F; ++f) row[f] += da * s.features[f];
                    g[b1 + h] += da;
                }
            }
            return g;
        }
    }
    throw InvalidParam("grad: unknown model kind");
}

// Gradient over a uniformly sampled without-replacement batch. With
// batch_size == shard size this is exactly grad() (same summation order,
// no rng draw), so full-batch runs reproduce bitwise.
inline ParamVector stochastic_grad(const ModelSpec& model, const ParamVector& params,
                                   const ClientShard& shard, std::size_t batch_size,
                                   Rng& rng) {
    if (batch_size == 0 || batch_size > shard.samples.size())
        throw InvalidBatch("batch_size " + std::to_string(batch_size) + " vs shard size " +
                           std::to_string(shard.samples.size()));
    if (batch_size == shard.samples.size())
        return grad(model, params, std::span<const Sample>(shard.samples));
    auto idx = rng.sample_without_replacement(shard.samples.size(), batch_size);
    std::vector<Sample> batch;
    batch.reserve(batch_size);
    for (std::size_t i : idx) batch.push_back(shard.samples[i]);
    return grad(model, params, std::span<const Sample>(batch));
}

// Fraction of samples whose argmax class matches the label; ties go to the
// lowest class index.
inline double accuracy(const ModelSpec& model, const ParamVector& params,
                       std::span<const Sample> samples) {
    if (model.kind() == ModelKind::Quadratic)
        throw UnsupportedMetric("accuracy: not defined for the quadratic model");
    vec::check_dim(params, model.dim(), "accuracy");
    detail::check_samples(model, samples);
    std::size_t hits = 0;
    for (const Sample& s : samples) {
        std::vector<double> p = model.kind() == ModelKind::Mclr
                                    ? detail::mclr_probs(model, params, s)
                                    : detail::mlp_forward(model, params, s).probs;
        int best = 0;
        for (int c = 1; c < model.num_classes(); ++c) {
            if (p[c] > p[best]) best = c;
        }
        if (best == s.label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

// L and mu estimates used by the theory step-size schedules.
//   Quadratic: exact extreme eigenvalues of A (power iteration, tol 1e-8).
//   MCLR: L = 1/4 * lambda_max(X~^T X~ / n) + l2 with X~ the bias-augmented
//         design matrix; mu = l2 (the regularizer is the only strongly
//         convex term).
inline SmoothnessInfo estimate_smoothness(const ModelSpec& model,
                                          std::span<const Sample> samples) {
    switch (model.kind()) {
        case ModelKind::Quadratic: {
            auto ext = extreme_eigenvalues(model.quad_matrix(), 1e-8);
            return {ext.max_eig, ext.min_eig, 0.0};
        }
        case ModelKind::Mclr: {
            detail::check_samples(model, samples);
            const int F = model.num_features();
            SymMatrix gram(static_cast<std::size_t>(F) + 1);
            const double inv_n = 1.0 / static_cast<double>(samples.size());
            for (const Sample& s : samples) {
                std::vector<double> x(s.features);
                x.push_back(1.0);
                gram.add_outer(x, inv_n);
            }
            auto ext = extreme_eigenvalues(gram, 1e-8);
            return {0.25 * ext.max_eig + model.l2_coeff(), model.l2_coeff(), 0.0};
        }
        case ModelKind::Mlp:
            throw NotEstimable("estimate_smoothness: supply L manually for the MLP");
    }
    throw InvalidParam("estimate_smoothness: unknown model kind");
}

}  // namespace fedsso
