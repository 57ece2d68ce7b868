#include <random>

#include "doctest.h"
#include "gid/common.hpp"
#include "gid/sinkhorn.hpp"

using namespace gid;

namespace {

Eigen::MatrixXd random_logits(int m, int b, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    Eigen::MatrixXd l(m, b);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < b; ++j) l(i, j) = u(rng);
    return l;
}

// Plain-domain Sinkhorn in long double, same update order.
Eigen::MatrixXd reference_plan(const Eigen::MatrixXd& l, double eps, int iters) {
    const auto m = l.rows(), b = l.cols();
    std::vector<std::vector<long double>> q(static_cast<std::size_t>(m), std::vector<long double>(static_cast<std::size_t>(b)));
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < b; ++j) q[i][j] = std::exp(static_cast<long double>(l(i, j)) / eps);
    for (int it = 0; it < iters; ++it) {
        for (auto& row : q) {
            long double s = 0;
            for (auto v : row) s += v;
            for (auto& v : row) v = v / s / m;
        }
        for (Eigen::Index j = 0; j < b; ++j) {
            long double s = 0;
            for (Eigen::Index i = 0; i < m; ++i) s += q[i][j];
            for (Eigen::Index i = 0; i < m; ++i) q[i][j] = q[i][j] / s / b;
        }
    }
    Eigen::MatrixXd out(m, b);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < b; ++j) out(i, j) = static_cast<double>(q[i][j]);
    return out;
}

}  // namespace

TEST_CASE("plan agrees with a plain long double implementation") {
    for (int iters : {1, 3, 20}) {
        const auto l = random_logits(4, 9, static_cast<std::uint64_t>(iters));
        const auto r = sinkhorn_pseudo_labels({l, 0.5, iters});
        CHECK((r.y_hat - reference_plan(l, 0.5, iters)).cwiseAbs().maxCoeff() < 1e-13);
    }
}

TEST_CASE("marginals converge and targets are column-stochastic") {
    const auto l = random_logits(5, 40, 7, 3.0);
    const auto r = sinkhorn_pseudo_labels({l, 0.05, 1000});
    CHECK((r.y_hat.rowwise().sum().array() - 1.0 / 5).abs().maxCoeff() < 1e-6);
    CHECK((r.y_hat.colwise().sum().array() - 1.0 / 40).abs().maxCoeff() < 1e-12);
    CHECK((r.targets.colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK((r.targets - r.y_hat * 40.0).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(r.y_hat.minCoeff() >= 0.0);
}

TEST_CASE("converged plan is a local optimum of the regularised objective") {
    const auto l = random_logits(3, 6, 8);
    const double eps = 0.3;
    const auto y = sinkhorn_pseudo_labels({l, eps, 2000}).y_hat;
    const double base = transport_objective(y, l, eps);
    // Perturbations that keep both marginals fixed.
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 6; ++j) {
            const int k = (i + 1) % 3, c = (j + 1) % 6;
            for (double t : {1e-4, -1e-4}) {
                Eigen::MatrixXd z = y;
                z(i, j) += t;
                z(k, c) += t;
                z(i, c) -= t;
                z(k, j) -= t;
                CHECK(transport_objective(z, l, eps) <= base + 1e-12);
            }
        }
    }
}

TEST_CASE("large logits stay finite at small epsilon") {
    auto l = random_logits(4, 16, 9, 50.0);
    const auto r = sinkhorn_pseudo_labels({l, 0.01, 3});
    CHECK(r.y_hat.allFinite());
    CHECK((r.targets.colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("uniform logits give the uniform plan") {
    const auto r = sinkhorn_pseudo_labels({Eigen::MatrixXd::Constant(3, 4, 2.0), 0.05, 1});
    CHECK((r.y_hat.array() - 1.0 / 12).abs().maxCoeff() < 1e-15);
    CHECK(plan_entropy(r.y_hat) == doctest::Approx(std::log(12.0)));
}

TEST_CASE("harden_targets and objective by hand") {
    Eigen::MatrixXd t(3, 3);
    t << 0.2, 0.5, 0.4,
         0.7, 0.5, 0.2,
         0.1, 0.0, 0.4;
    Eigen::MatrixXd h(3, 3);
    h << 0, 1, 1,
         1, 0, 0,
         0, 0, 0;
    CHECK(harden_targets(t) == h);

    Eigen::MatrixXd y(2, 2);
    y << 0.5, 0, 0, 0.5;
    Eigen::MatrixXd l(2, 2);
    l << 1, 2, 3, 4;
    // <Y, L> = 2.5; H = log 2.
    CHECK(transport_objective(y, l, 0.1) == doctest::Approx(2.5 + 0.1 * std::log(2.0)));
}

TEST_CASE("invalid problems are rejected") {
    CHECK_THROWS_AS(sinkhorn_pseudo_labels({Eigen::MatrixXd::Zero(2, 2), 0.0, 3}), ValidationError);
    CHECK_THROWS_AS(sinkhorn_pseudo_labels({Eigen::MatrixXd::Zero(0, 2), 0.05, 3}), ValidationError);
    CHECK_THROWS_AS(sinkhorn_pseudo_labels({Eigen::MatrixXd::Zero(2, 2), 0.05, 0}), ValidationError);
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(2, 2);
    l(1, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(sinkhorn_pseudo_labels({l, 0.05, 3}), ValidationError);
}
