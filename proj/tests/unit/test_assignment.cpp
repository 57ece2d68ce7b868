#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

#include "doctest.h"
#include "gid/assignment.hpp"
#include "gid/common.hpp"

using namespace gid;

namespace {

// Exhaustive oracle: smallest cost, and the lexicographically first
// permutation reaching it (std::next_permutation enumerates in that order).
std::pair<double, std::vector<int>> brute_force(const Eigen::MatrixXd& c) {
    std::vector<int> p(static_cast<std::size_t>(c.rows()));
    std::iota(p.begin(), p.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> arg;
    do {
        double s = 0;
        for (std::size_t i = 0; i < p.size(); ++i) s += c(static_cast<Eigen::Index>(i), p[i]);
        if (s < best) {
            best = s;
            arg = p;
        }
    } while (std::next_permutation(p.begin(), p.end()));
    return {best, arg};
}

}  // namespace

TEST_CASE("hungarian matches exhaustive search on random integer matrices") {
    std::mt19937_64 rng(42);
    for (int k = 1; k <= 6; ++k) {
        for (int rep = 0; rep < 200; ++rep) {
            std::uniform_int_distribution<int> dist(0, rep % 2 ? 3 : 50);  // small range forces ties
            Eigen::MatrixXd c(k, k);
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) c(i, j) = dist(rng);
            const auto [best, perm] = brute_force(c);
            const Mapping m = hungarian(c);
            REQUIRE(m.total_cost == best);
            REQUIRE(m.perm == perm);
        }
    }
}

TEST_CASE("hungarian on hand cases") {
    Eigen::MatrixXd c(3, 3);
    c << 4, 1, 3,
         2, 0, 5,
         3, 2, 2;
    const auto m = hungarian(c);
    CHECK(m.total_cost == 5.0);
    CHECK(m.perm == std::vector<int>{1, 0, 2});

    CHECK(hungarian(Eigen::MatrixXd::Zero(4, 4)).perm == std::vector<int>{0, 1, 2, 3});
    CHECK(hungarian(Eigen::MatrixXd(0, 0)).perm.empty());

    Eigen::MatrixXd neg(2, 2);
    neg << -1e9, 0, 0, -1e9;
    CHECK(hungarian(neg).total_cost == -2e9);
}

TEST_CASE("hungarian maximises agreement when given a negated contingency table") {
    Eigen::MatrixXd counts(3, 3);
    counts << 0, 9, 1,
              8, 0, 0,
              1, 0, 7;
    CHECK(hungarian(-counts).perm == std::vector<int>{1, 0, 2});
}

TEST_CASE("hungarian rejects bad input") {
    CHECK_THROWS_AS(hungarian(Eigen::MatrixXd::Zero(2, 3)), ValidationError);
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(2, 2);
    c(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(hungarian(c), ValidationError);
    c(0, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(hungarian(c), ValidationError);
}

TEST_CASE("align_clusters recovers a shuffled centroid order") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0, 1);
    Eigen::MatrixXd prev(5, 4);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) prev(i, j) = 10 * n(rng);
    const std::vector<int> shuffle{3, 0, 4, 1, 2};  // current row r = prev row shuffle[r]
    Eigen::MatrixXd cur(5, 4);
    for (int r = 0; r < 5; ++r) cur.row(r) = prev.row(shuffle[static_cast<std::size_t>(r)]) + 0.01 * Eigen::RowVectorXd::Ones(4);
    const auto m = align_clusters(prev, cur);
    const auto relabel = relabel_from_alignment(m);
    for (int r = 0; r < 5; ++r) {
        CHECK(relabel[static_cast<std::size_t>(r)] == shuffle[static_cast<std::size_t>(r)]);
        CHECK(m.perm[static_cast<std::size_t>(shuffle[static_cast<std::size_t>(r)])] == r);
    }
    CHECK(m.total_cost == doctest::Approx(5 * 4 * 1e-4));
}

TEST_CASE("align_clusters needs matching shapes") {
    CHECK_THROWS_AS(align_clusters(Eigen::MatrixXd::Zero(2, 3), Eigen::MatrixXd::Zero(3, 3)), ValidationError);
    CHECK_THROWS_AS(align_clusters(Eigen::MatrixXd::Zero(2, 3), Eigen::MatrixXd::Zero(2, 2)), ValidationError);
}
