#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <span>

#include "fedsso/data.hpp"
#include "fedsso/model.hpp"
#include "fedsso/verify.hpp"

using namespace fedsso;

namespace {

// Straightforward per-sample oracle for the MCLR loss: independent summation,
// no shared softmax plumbing.
double mclr_loss_oracle(int C, int F, double l2, const ParamVector& w,
                        std::span<const Sample> samples) {
    double total = 0.0;
    for (const Sample& s : samples) {
        std::vector<double> z(C, 0.0);
        for (int c = 0; c < C; ++c) {
            for (int f = 0; f < F; ++f) z[c] += w[c * F + f] * s.features[f];
            z[c] += w[C * F + c];
        }
        double denom = 0.0;
        for (int c = 0; c < C; ++c) denom += std::exp(z[c]);
        total += std::log(denom) - z[s.label];
    }
    double pen = 0.0;
    for (int i = 0; i < C * F; ++i) pen += w[i] * w[i];
    return total / static_cast<double>(samples.size()) + 0.5 * l2 * pen;
}

std::vector<Sample> two_class_batch() {
    std::vector<Sample> s;
    for (int i = 0; i < 4; ++i) {
        Sample a;
        a.features = {static_cast<double>(i), 1.0};
        a.label = i % 2;
        s.push_back(a);
    }
    return s;
}

}  // namespace

TEST_CASE("mclr loss at zero parameters is ln(num_classes)", "[model]") {
    ModelSpec m = ModelSpec::mclr(2, 2, 0.0);
    auto batch = two_class_batch();
    ParamVector zero(m.dim(), 0.0);
    CHECK(loss(m, zero, batch) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("quadratic loss and gradient", "[model]") {
    ModelSpec m = ModelSpec::quadratic(SymMatrix::identity(2), {0.0, 0.0});
    ParamVector x{3.0, 4.0};
    CHECK(loss(m, x, {}) == Catch::Approx(12.5));
    ParamVector g = grad(m, x, {});
    CHECK(g[0] == Catch::Approx(3.0));
    CHECK(g[1] == Catch::Approx(4.0));
}

TEST_CASE("quadratic construction requires SPD", "[model]") {
    CHECK_THROWS_AS(ModelSpec::quadratic(SymMatrix::diagonal({1.0, -1.0}), {0.0, 0.0}),
                    InvalidMatrix);
    SymMatrix asym(2);
    asym.at(0, 0) = 1.0;
    asym.at(1, 1) = 1.0;
    asym.at(0, 1) = 0.5;  // asymmetric
    CHECK_THROWS_AS(ModelSpec::quadratic(asym, {0.0, 0.0}), InvalidMatrix);
}

TEST_CASE("mclr loss matches the naive summation oracle", "[model]") {
    ModelSpec m = ModelSpec::mclr(3, 4, 0.01);
    auto samples = synth_blobs(5, 3, 4, 10, 0.7);
    Rng rng(31);
    ParamVector w(m.dim());
    for (double& v : w) v = 0.5 * rng.normal();
    const double got = loss(m, w, samples);
    const double want = mclr_loss_oracle(3, 4, 0.01, w, samples);
    CHECK(got == Catch::Approx(want).epsilon(1e-12));
}

TEST_CASE("loss is invariant to sample order", "[model]") {
    ModelSpec m = ModelSpec::mclr(3, 4, 0.001);
    auto samples = synth_blobs(6, 3, 4, 30, 0.5);
    Rng rng(8);
    ParamVector w(m.dim());
    for (double& v : w) v = 0.3 * rng.normal();
    const double before = loss(m, w, samples);
    std::vector<Sample> shuffled = samples;
    rng.shuffle(shuffled);
    CHECK(loss(m, w, shuffled) == Catch::Approx(before).epsilon(1e-12));
}

TEST_CASE("gradient error contracts", "[model]") {
    ModelSpec m = ModelSpec::mclr(2, 3, 0.0);
    auto batch = synth_blobs(3, 2, 3, 8, 0.4);
    ParamVector w(m.dim(), 0.1);
    CHECK_THROWS_AS(grad(m, ParamVector(3, 0.0), batch), InvalidDimension);
    CHECK_THROWS_AS(grad(m, w, std::span<const Sample>{}), EmptyBatch);
    std::vector<Sample> bad = batch;
    bad[0].label = 9;
    CHECK_THROWS_AS(grad(m, w, bad), LabelError);
}

TEST_CASE("mclr gradient vanishes at an oracle minimizer", "[model]") {
    // long full-gradient descent is the oracle that finds the minimizer
    ModelSpec m = ModelSpec::mclr(2, 2, 0.1);
    auto samples = synth_blobs(9, 2, 2, 40, 0.3);
    ParamVector w(m.dim(), 0.0);
    for (int it = 0; it < 20000; ++it) {
        ParamVector g = grad(m, w, samples);
        vec::axpy(-0.5, g, w);
    }
    CHECK(vec::norm2(grad(m, w, samples)) <= 1e-8);
}

TEST_CASE("finite differences agree with analytic gradients", "[model]") {
    Rng rng(13);
    SECTION("quadratic") {
        ModelSpec m = ModelSpec::quadratic(rotated_spectrum_matrix(6, 0.5, 4.0, 2),
                                           std::vector<double>(6, 0.25));
        ParamVector x(6);
        for (double& v : x) v = rng.normal();
        CHECK(fd_gradient_check(m, x, {}, 1e-6) <= 1e-5);
    }
    SECTION("mclr over random seeds") {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            ModelSpec m = ModelSpec::mclr(3, 5, 0.01);
            auto samples = synth_blobs(seed, 3, 5, 20, 0.6);
            ParamVector w(m.dim());
            for (double& v : w) v = 0.4 * rng.normal();
            CHECK(fd_gradient_check(m, w, samples, 1e-6) <= 1e-5);
        }
    }
    SECTION("mlp") {
        ModelSpec m = ModelSpec::mlp(4, 6, 3);
        auto samples = synth_blobs(15, 3, 4, 25, 0.5);
        ParamVector w = m.init_params(3);
        CHECK(fd_gradient_check(m, w, samples, 1e-5) <= 1e-4);
    }
}

TEST_CASE("stochastic gradient determinism and full-batch equality", "[model]") {
    ModelSpec m = ModelSpec::mclr(3, 4, 0.001);
    ClientShard shard{0, synth_blobs(20, 3, 4, 24, 0.5), 1.0};
    ParamVector w(m.dim(), 0.05);

    Rng r1(99), r2(99);
    ParamVector g1 = stochastic_grad(m, w, shard, 8, r1);
    ParamVector g2 = stochastic_grad(m, w, shard, 8, r2);
    CHECK(g1 == g2);  // bitwise

    Rng r3(1);
    ParamVector full = stochastic_grad(m, w, shard, shard.samples.size(), r3);
    CHECK(full == grad(m, w, shard.samples));  // bitwise

    CHECK_THROWS_AS(stochastic_grad(m, w, shard, shard.samples.size() + 1, r3), InvalidBatch);
}

TEST_CASE("stochastic gradient is unbiased", "[model]") {
    ModelSpec m = ModelSpec::mclr(2, 3, 0.0);
    ClientShard shard{0, synth_blobs(44, 2, 3, 30, 0.8), 1.0};
    ParamVector w(m.dim(), 0.2);
    ParamVector full = grad(m, w, shard.samples);

    const int trials = 10000;
    Rng rng(123);
    ParamVector mean(m.dim(), 0.0), m2(m.dim(), 0.0);
    for (int t = 0; t < trials; ++t) {
        ParamVector g = stochastic_grad(m, w, shard, 10, rng);
        for (std::size_t j = 0; j < g.size(); ++j) {
            const double delta = g[j] - mean[j];
            mean[j] += delta / (t + 1);
            m2[j] += delta * (g[j] - mean[j]);
        }
    }
    for (std::size_t j = 0; j < mean.size(); ++j) {
        const double sd = std::sqrt(m2[j] / (trials - 1));
        CHECK(std::abs(mean[j] - full[j]) <= 3.0 * sd / std::sqrt(double(trials)) + 1e-12);
    }
}

TEST_CASE("accuracy argmax with lowest-index tie break", "[model]") {
    ModelSpec m = ModelSpec::mclr(2, 2, 0.0);
    auto batch = two_class_batch();  // balanced labels
    ParamVector zero(m.dim(), 0.0);
    // all-zero params predict class 0 everywhere
    CHECK(accuracy(m, zero, batch) == Catch::Approx(0.5));

    ModelSpec q = ModelSpec::quadratic(SymMatrix::identity(2), {0.0, 0.0});
    CHECK_THROWS_AS(accuracy(q, ParamVector(2, 0.0), batch), UnsupportedMetric);
}

TEST_CASE("separable data reaches perfect accuracy", "[model]") {
    ModelSpec m = ModelSpec::mclr(2, 3, 0.0);
    auto samples = synth_blobs(77, 2, 3, 60, 1e-3);
    ParamVector w(m.dim(), 0.0);
    for (int it = 0; it < 3000; ++it) vec::axpy(-1.0, grad(m, w, samples), w);
    CHECK(accuracy(m, w, samples) == 1.0);
}

TEST_CASE("accuracy equals a per-sample loop oracle", "[model]") {
    ModelSpec m = ModelSpec::mclr(4, 6, 0.0);
    auto samples = synth_blobs(31, 4, 6, 100, 1.0);
    Rng rng(2);
    ParamVector w(m.dim());
    for (double& v : w) v = rng.normal();
    int hits = 0;
    for (const Sample& s : samples) {
        // independent argmax on raw logits
        double best_z = -1e300;
        int best_c = 0;
        for (int c = 0; c < 4; ++c) {
            double z = w[4 * 6 + c];
            for (int f = 0; f < 6; ++f) z += w[c * 6 + f] * s.features[f];
            if (z > best_z) {
                best_z = z;
                best_c = c;
            }
        }
        if (best_c == s.label) ++hits;
    }
    CHECK(accuracy(m, w, samples) == Catch::Approx(hits / 100.0));
}

TEST_CASE("mclr loss is convex along random segments", "[model]") {
    ModelSpec m = ModelSpec::mclr(3, 4, 0.01);
    auto samples = synth_blobs(41, 3, 4, 25, 0.5);
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        ParamVector a(m.dim()), b(m.dim()), mid(m.dim());
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = rng.normal();
            b[i] = rng.normal();
            mid[i] = 0.5 * (a[i] + b[i]);
        }
        CHECK(loss(m, mid, samples) <=
              0.5 * (loss(m, a, samples) + loss(m, b, samples)) + 1e-12);
    }
}

TEST_CASE("smoothness estimates", "[model]") {
    SECTION("diagonal quadratic") {
        ModelSpec m = ModelSpec::quadratic(SymMatrix::diagonal({1.0, 4.0}), {0.0, 0.0});
        auto sm = estimate_smoothness(m, {});
        CHECK(sm.L == Catch::Approx(4.0).epsilon(1e-7));
        CHECK(sm.mu == Catch::Approx(1.0).epsilon(1e-7));
    }
    SECTION("mclr mu is the regularizer") {
        ModelSpec m = ModelSpec::mclr(2, 3, 0.01);
        std::vector<Sample> unit_rows;
        for (int i = 0; i < 6; ++i) {
            Sample s;
            s.features = {i % 2 ? 1.0 : 0.0, i % 2 ? 0.0 : 1.0, 0.0};
            s.label = i % 2;
            unit_rows.push_back(s);
        }
        auto sm = estimate_smoothness(m, unit_rows);
        CHECK(sm.mu == Catch::Approx(0.01));
        CHECK(sm.L > sm.mu);
    }
    SECTION("mlp is not estimable") {
        ModelSpec m = ModelSpec::mlp(3, 4, 2);
        CHECK_THROWS_AS(estimate_smoothness(m, {}), NotEstimable);
    }
}

#ifdef FEDSSO_HAVE_EIGEN
#include <Eigen/Dense>
TEST_CASE("mclr smoothness matches a dense eigensolve oracle", "[model]") {
    // fixed 50x5 design matrix
    Rng rng(50);
    std::vector<Sample> samples;
    for (int i = 0; i < 50; ++i) {
        Sample s;
        s.features.resize(5);
        for (double& v : s.features) v = rng.normal();
        s.label = i % 2;
        samples.push_back(s);
    }
    ModelSpec m = ModelSpec::mclr(2, 5, 0.003);
    auto sm = estimate_smoothness(m, samples);

    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(6, 6);
    for (const Sample& s : samples) {
        Eigen::VectorXd x(6);
        for (int f = 0; f < 5; ++f) x(f) = s.features[f];
        x(5) = 1.0;
        gram += x * x.transpose() / 50.0;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    const double want = 0.25 * es.eigenvalues().maxCoeff() + 0.003;
    CHECK(std::abs(sm.L - want) <= 1e-6);
}
#endif
