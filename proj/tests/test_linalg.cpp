#include <catch2/catch_amalgamated.hpp>

#include "fedsso/rng.hpp"
#include "fedsso/sym_matrix.hpp"
#include "fedsso/vec.hpp"

#ifdef FEDSSO_HAVE_EIGEN
#include <Eigen/Dense>
#endif

using namespace fedsso;

TEST_CASE("rng streams are reproducible and salt-sensitive", "[linalg]") {
    Rng a = Rng::derive(42, {1, 2});
    Rng b = Rng::derive(42, {1, 2});
    Rng c = Rng::derive(42, {1, 3});
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        all_equal = all_equal && x == b.next_u64();
        any_diff = any_diff || x != c.next_u64();
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("bounded and sampling stay in range", "[linalg]") {
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) CHECK(rng.bounded(13) < 13);
    auto idx = rng.sample_without_replacement(50, 20);
    REQUIRE(idx.size() == 20);
    CHECK(std::is_sorted(idx.begin(), idx.end()));
    for (std::size_t i = 1; i < idx.size(); ++i) CHECK(idx[i] != idx[i - 1]);
}

TEST_CASE("normal sampler has sane moments", "[linalg]") {
    Rng rng(11);
    double sum = 0.0, sum2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sum2 += x * x;
    }
    CHECK(std::abs(sum / n) < 0.02);
    CHECK(std::abs(sum2 / n - 1.0) < 0.02);
}

TEST_CASE("cholesky solves SPD systems", "[linalg]") {
    SymMatrix a = rotated_spectrum_matrix(12, 0.3, 5.0, 3);
    Rng rng(5);
    ParamVector x(12);
    for (double& v : x) v = rng.normal();
    ParamVector b = a.matvec(x);
    auto f = CholeskyFactor::factor(a);
    REQUIRE(f.has_value());
    ParamVector xs = f->solve(b);
    CHECK(vec::norm_inf(vec::sub(xs, x)) < 1e-10);
}

TEST_CASE("cholesky rejects indefinite matrices", "[linalg]") {
    SymMatrix a = SymMatrix::diagonal({1.0, -0.5, 2.0});
    CHECK_FALSE(CholeskyFactor::factor(a).has_value());
    CHECK_FALSE(is_spd(a));
}

TEST_CASE("extreme eigenvalues of a diagonal matrix", "[linalg]") {
    SymMatrix a = SymMatrix::diagonal({1.0, 4.0});
    auto ext = extreme_eigenvalues(a);
    CHECK(ext.min_eig == Catch::Approx(1.0).epsilon(1e-7));
    CHECK(ext.max_eig == Catch::Approx(4.0).epsilon(1e-7));

    auto id = extreme_eigenvalues(SymMatrix::identity(5));
    CHECK(id.min_eig == Catch::Approx(1.0).epsilon(1e-7));
    CHECK(id.max_eig == Catch::Approx(1.0).epsilon(1e-7));
}

#ifdef FEDSSO_HAVE_EIGEN
TEST_CASE("power iteration matches a dense eigensolver on random SPD", "[linalg]") {
    // independent oracle: Eigen's SelfAdjointEigenSolver on A^T A + I
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const int d = 8 + trial;
        Eigen::MatrixXd m(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) m(i, j) = rng.normal();
        Eigen::MatrixXd spd = m.transpose() * m + Eigen::MatrixXd::Identity(d, d);
        SymMatrix a(d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) a.at(i, j) = spd(i, j);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(spd);
        const double lo = es.eigenvalues().minCoeff();
        const double hi = es.eigenvalues().maxCoeff();
        auto ext = extreme_eigenvalues(a, 1e-10);
        CHECK(std::abs(ext.max_eig - hi) <= 1e-6 * hi);
        CHECK(std::abs(ext.min_eig - lo) <= 1e-6 * std::max(lo, 1.0));
    }
}
#endif

TEST_CASE("rotated spectrum matrix keeps its spectrum", "[linalg]") {
    SymMatrix a = rotated_spectrum_matrix(10, 0.5, 3.0, 9);
    CHECK(a.max_asymmetry() < 1e-12);
    auto ext = extreme_eigenvalues(a);
    CHECK(ext.min_eig == Catch::Approx(0.5).epsilon(1e-6));
    CHECK(ext.max_eig == Catch::Approx(3.0).epsilon(1e-6));
    // off-diagonal mass exists (it is not a diagonal matrix)
    double off = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i)
        for (std::size_t j = 0; j < a.dim(); ++j)
            if (i != j) off += std::abs(a.at(i, j));
    CHECK(off > 0.1);
}
