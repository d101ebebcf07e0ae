#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fedsso/verify.hpp"

using namespace fedsso;

TEST_CASE("lighthouse with a single local step sits at the start point", "[verify]") {
    std::vector<std::function<double(double)>> grads = {
        [](double x) { return 2.0 * (x - 0.3); }, [](double x) { return 0.5 * (x + 1.0); }};
    auto r = lighthouse_oracle_1d(grads, 0.8, 0.05, 1);
    // tau = 1: the averaged gradient is the mean gradient at x_k itself
    CHECK(r.sign_change);
    CHECK(std::abs(r.x_hat - 0.8) <= 1e-9);
    CHECK(r.residual <= 1e-10);
}

TEST_CASE("lighthouse matches the closed form for two quadratic clients", "[verify]") {
    // f1' (x) = x - 1, f2'(x) = x + 1, alpha = 0.1, tau = 3
    std::vector<std::function<double(double)>> grads = {
        [](double x) { return x - 1.0; }, [](double x) { return x + 1.0; }};
    const double x_k = 2.0;
    auto r = lighthouse_oracle_1d(grads, x_k, 0.1, 3);
    // per-client iterates contract toward +-1 by (1-alpha) per step, so the
    // averaged gradient is (S/3) x_k with S = 1 + 0.9 + 0.81
    const double S = 1.0 + 0.9 + 0.81;
    const double gbar = S / 3.0 * x_k;
    // mean gradient is f'(x) = x, so x_hat solves x = gbar exactly
    CHECK(r.sign_change);
    CHECK(r.in_hull);
    CHECK(std::abs(r.avg_grad - gbar) <= 1e-12);
    CHECK(std::abs(r.x_hat - gbar) <= 1e-9);
    CHECK(r.residual <= 1e-10);
}

TEST_CASE("constant-gradient clients make every point a lighthouse", "[verify]") {
    std::vector<std::function<double(double)>> grads = {[](double) { return 0.7; },
                                                        [](double) { return -0.2; }};
    auto r = lighthouse_oracle_1d(grads, 1.0, 0.1, 4);
    CHECK(r.sign_change);  // |h| <= tol immediately
    CHECK(r.residual <= 1e-12);
}

TEST_CASE("spd_spectrum rejects asymmetric input and matches diagonals", "[verify]") {
    SymMatrix bad(2);
    bad.at(0, 1) = 1.0;
    bad.at(1, 0) = 0.0;
    CHECK_THROWS_AS(spd_spectrum(bad), InvalidMatrix);

    auto d = spd_spectrum(SymMatrix::diagonal({0.5, 3.0}));
    CHECK(d.min_eig == Catch::Approx(0.5).epsilon(1e-7));
    CHECK(d.max_eig == Catch::Approx(3.0).epsilon(1e-7));

    auto i5 = spd_spectrum(SymMatrix::identity(5));
    CHECK(i5.min_eig == Catch::Approx(1.0));
    CHECK(i5.max_eig == Catch::Approx(1.0));
}

TEST_CASE("centralized bfgs oracle converges on a quadratic", "[verify]") {
    ModelSpec m = ModelSpec::quadratic(rotated_spectrum_matrix(2, 0.8, 2.5, 4),
                                       {0.3, -0.4});
    auto traj = centralized_bfgs_oracle(m, {1.0, 1.0}, {}, 50, 0.6, 1e-4, 9999.0);
    REQUIRE(traj.size() == 50);
    CHECK(vec::norm2(grad(m, traj.back(), {})) <= 1e-8);
}

TEST_CASE("oracle's first step with identity B is plain gradient descent", "[verify]") {
    ModelSpec m = ModelSpec::quadratic(SymMatrix::diagonal({2.0, 0.5}), {0.0, 0.0});
    ParamVector x0{1.0, -2.0};
    auto traj = centralized_bfgs_oracle(m, x0, {}, 1, 0.3, 1e-4, 9999.0);
    ParamVector g = grad(m, x0, {});
    CHECK(traj[0][0] == Catch::Approx(x0[0] - 0.3 * g[0]));
    CHECK(traj[0][1] == Catch::Approx(x0[1] - 0.3 * g[1]));
}

TEST_CASE("rate check on constructed sequences", "[verify]") {
    const double gamma = 4.0;
    SECTION("exact 1/(k+gamma) decay is bounded") {
        std::vector<RoundRecord> recs;
        for (int k = 1; k <= 500; ++k) {
            RoundRecord r;
            r.round = k;
            r.train_loss = 1.0 / (k + gamma);  // f* = 0
            recs.push_back(r);
        }
        auto rep = rate_check(recs, 0.0, gamma);
        CHECK(rep.bounded);
        CHECK(rep.sup_early == Catch::Approx(1.0).epsilon(1e-9));
        CHECK(rep.sup_late == Catch::Approx(1.0).epsilon(1e-9));
    }
    SECTION("1/sqrt(k) decay is flagged as unbounded") {
        std::vector<RoundRecord> recs;
        for (int k = 1; k <= 4000; ++k) {
            RoundRecord r;
            r.round = k;
            r.train_loss = 1.0 / std::sqrt(static_cast<double>(k));
            recs.push_back(r);
        }
        CHECK_FALSE(rate_check(recs, 0.0, gamma).bounded);
    }
    SECTION("loss below f* trips the oracle consistency guard") {
        std::vector<RoundRecord> recs;
        for (int k = 1; k <= 100; ++k) {
            RoundRecord r;
            r.round = k;
            r.train_loss = -1.0;
            recs.push_back(r);
        }
        CHECK_THROWS_AS(rate_check(recs, 0.0, gamma), InconsistentOracle);
    }
}

TEST_CASE("full check suite passes and reports every check", "[verify]") {
    auto results = run_all_checks();
    CHECK(results.size() >= 10);
    for (const auto& r : results) {
        INFO(r.name << " measured=" << r.measured << " threshold=" << r.threshold << " "
                    << r.note);
        CHECK(r.passed);
        CHECK_FALSE(r.name.empty());
    }
}

TEST_CASE("skipping symmetrization breaks the SPD checks", "[verify]") {
    // mutation probe for the verifier: a deliberately broken update (no
    // symmetrize, no clip) must be caught by the same instruments the
    // verifier uses
    const std::size_t d = 6;
    Rng rng(3);
    SymMatrix b = SymMatrix::identity(d);
    bool caught = false;
    for (int k = 0; k < 60 && !caught; ++k) {
        ParamVector y(d), s(d);
        for (std::size_t i = 0; i < d; ++i) {
            y[i] = rng.normal();
            s[i] = rng.normal();
        }
        const double cur = vec::dot(y, s);  // unclipped: sign not enforced
        if (std::abs(cur) < 1e-9) continue;
        ParamVector bs = b.matvec(s);
        const double sbs = vec::dot(s, bs);
        if (std::abs(sbs) < 1e-12) continue;
        b.add_outer(y, 1.0 / cur);
        b.add_outer(bs, -1.0 / sbs);
        caught = !is_spd(b);
    }
    CHECK(caught);
}
