#include <doctest.h>

#include <random>

#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"
#include "slog/errors.hpp"
#include "slog/surrogate.hpp"

using namespace slog;

namespace {

struct Problem {
    Eigen::MatrixXd z;
    Eigen::VectorXd q, w;
};

Problem random_problem(std::uint64_t seed, int n, int m) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1), pos(0.05, 1);
    Problem p{Eigen::MatrixXd(n, m), Eigen::VectorXd(n), Eigen::VectorXd(n)};
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) p.z(i, j) = u(rng);
        p.q(i) = u(rng);
        p.w(i) = pos(rng);
    }
    return p;
}

double smooth_target(const Eigen::VectorXd& z) { return std::sin(1.5 * z(0)) * std::cos(z(1)) + 0.3 * z(2); }

}  // namespace

TEST_CASE("single point fit is q / (1 + ridge)") {
    Eigen::MatrixXd z(1, 3);
    z << 0.1, -0.2, 0.3;
    const auto s = Surrogate::fit(z, Eigen::VectorXd::Constant(1, 0.8), Eigen::VectorXd::Ones(1), {1.0, 0.25});
    CHECK(std::abs(s.predict(z.row(0).transpose()) - 0.8 / 1.25) <= 1e-12);
    CHECK(s.predict_grad(z.row(0).transpose()).isZero(0));
}

TEST_CASE("interpolation limit") {
    Eigen::MatrixXd z(1, 2);
    z << 0.4, 0.4;
    const auto s = Surrogate::fit(z, Eigen::VectorXd::Constant(1, -0.6), Eigen::VectorXd::Ones(1), {1.0, 1e-12});
    CHECK(std::abs(s.predict(z.row(0).transpose()) + 0.6) <= 1e-9);
}

TEST_CASE("constant targets are reproduced at the centers") {
    auto p = random_problem(4, 12, 3);
    p.q.setConstant(0.37);
    p.w.setOnes();
    const auto s = Surrogate::fit(p.z, p.q, p.w, {1.0, 1e-10});
    for (int i = 0; i < 12; ++i) CHECK(std::abs(s.predict(p.z.row(i).transpose()) - 0.37) <= 1e-6);
}

TEST_CASE("uniform weights match an unweighted Gauss-Jordan solve") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto p = random_problem(seed, 30, 4);
        p.w.setOnes();
        const auto s = Surrogate::fit(p.z, p.q, p.w, {0.9, 1e-2});
        const Eigen::VectorXd ref = oracle::krr_alpha(p.z, p.q, 0.9, 1e-2);
        CHECK((s.alpha() - ref).cwiseAbs().maxCoeff() <= 1e-9);
    }
}

TEST_CASE("weighted fit satisfies the normal equations") {
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        const auto p = random_problem(seed * 7, 40, 8);
        const auto s = Surrogate::fit(p.z, p.q, p.w, {1.0, 1e-2});
        const Eigen::MatrixXd k = kernel_matrix(p.z, 1.0);
        const Eigen::VectorXd lhs = p.w.asDiagonal() * (k * s.alpha()) + 1e-2 * s.alpha();
        const Eigen::VectorXd rhs = p.w.asDiagonal() * p.q;
        CHECK((lhs - rhs).norm() <= 1e-8 * rhs.norm());
        CHECK(s.relative_residual() <= kSurrogateResidualTol);
    }
}

TEST_CASE("prediction equals direct re-summation") {
    const auto p = random_problem(8, 25, 5);
    const auto s = Surrogate::fit(p.z, p.q, p.w, {0.7, 1e-2});
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int t = 0; t < 20; ++t) {
        Eigen::VectorXd z(5);
        for (auto& v : z) v = u(rng);
        CHECK(s.predict(z) == doctest::Approx(oracle::krr_predict(s.centers(), s.alpha(), 0.7, z)).epsilon(1e-12));
    }
}

TEST_CASE("prediction decays far from the centers") {
    const auto p = random_problem(9, 10, 3);
    const auto s = Surrogate::fit(p.z, p.q, p.w, {0.5, 1e-2});
    CHECK(std::abs(s.predict(Eigen::VectorXd::Constant(3, 50.0))) < 1e-12);
}

TEST_CASE("predict_grad matches finite differences and is linear in alpha") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto in = gradcheck::random_instance(seed);
        CHECK(gradcheck::predict_grad_error(in, seed) <= 1e-5);
    }
    const auto p = random_problem(10, 10, 3);
    const auto s = Surrogate::fit(p.z, p.q, p.w, {1.0, 1e-2});
    const auto scaled = Surrogate::from_parts(s.centers(), 3.0 * s.alpha(), {1.0, 1e-2});
    const Eigen::VectorXd z = Eigen::VectorXd::Constant(3, 0.1);
    CHECK((scaled.predict_grad(z) - 3.0 * s.predict_grad(z)).norm() <= 1e-12 * std::max(1.0, s.predict_grad(z).norm()));
}

TEST_CASE("rmse identities") {
    const auto p = random_problem(11, 20, 3);
    const auto s = Surrogate::fit(p.z, p.q, p.w, {1.0, 1e-2});
    Eigen::VectorXd exact(20);
    for (int i = 0; i < 20; ++i) exact(i) = s.predict(p.z.row(i).transpose());
    CHECK(rmse(s, p.z, exact) == 0.0);
    const auto zero = Surrogate::from_parts(p.z, Eigen::VectorXd::Zero(20), {1.0, 1e-2});
    const Eigen::VectorXd centered = p.q.array() - p.q.mean();
    CHECK(rmse(zero, p.z, centered) == doctest::Approx(std::sqrt(centered.squaredNorm() / 20)).epsilon(1e-14));
    CHECK_THROWS(rmse(s, Eigen::MatrixXd(0, 3), Eigen::VectorXd(0)));
}

TEST_CASE("fit errors") {
    const auto p = random_problem(12, 5, 2);
    try {
        (void)Surrogate::fit(p.z, p.q, Eigen::VectorXd::Zero(5), {1.0, 1e-2});
        FAIL("expected FitError");
    } catch (const FitError&) {
    }
    CHECK_THROWS_AS(Surrogate::fit(p.z, p.q, p.w, {0.0, 1e-2}), ConfigError);
    CHECK_THROWS_AS(Surrogate::fit(p.z, p.q, p.w, {1.0, -1.0}), ConfigError);
    Eigen::VectorXd neg = p.w;
    neg(0) = -1;
    CHECK_THROWS_AS(Surrogate::fit(p.z, p.q, neg, {1.0, 1e-2}), ConfigError);
}

TEST_CASE("every fit gets a fresh id") {
    const auto p = random_problem(13, 6, 2);
    const auto a = Surrogate::fit(p.z, p.q, p.w, {1.0, 1e-2});
    const auto b = Surrogate::fit(p.z, p.q, p.w, {1.0, 1e-2});
    CHECK(a.fit_id() != b.fit_id());
    CHECK(a.alpha() == b.alpha());
}

TEST_CASE("json dump round-trips") {
    const auto p = random_problem(14, 6, 2);
    const auto s = Surrogate::fit(p.z, p.q, p.w, {0.5, 1e-3});
    const auto back = Surrogate::from_json(s.to_json());
    CHECK(back.alpha() == s.alpha());
    CHECK(back.centers() == s.centers());
    CHECK(back.sigma() == 0.5);
    CHECK(back.ridge() == 1e-3);
}

TEST_CASE("more data does not hurt on a smooth target") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-1, 1);
    auto sample = [&](int n) {
        Eigen::MatrixXd z(n, 3);
        Eigen::VectorXd q(n);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < 3; ++j) z(i, j) = u(rng);
            q(i) = smooth_target(z.row(i).transpose());
        }
        return std::pair{z, q};
    };
    const auto [test_z, test_q] = sample(300);
    const auto [z200, q200] = sample(200);
    const Eigen::MatrixXd z25 = z200.topRows(25);
    const Eigen::VectorXd q25 = q200.head(25);
    const auto s25 = Surrogate::fit(z25, q25, Eigen::VectorXd::Ones(25), {1.0, 1e-2});
    const auto s200 = Surrogate::fit(z200, q200, Eigen::VectorXd::Ones(200), {1.0, 1e-2});
    CHECK(rmse(s200, test_z, test_q) <= rmse(s25, test_z, test_q));
}

TEST_CASE("hyperparameter search keeps the best grid point") {
    const auto train = random_problem(30, 40, 3);
    const auto val = random_problem(31, 20, 3);
    const auto r = select_hyperparameters(train.z, train.q, train.w, val.z, val.q);
    CHECK(r.trials.size() == 9);
    for (const auto& [h, e] : r.trials) CHECK(r.best_rmse <= e);
}
