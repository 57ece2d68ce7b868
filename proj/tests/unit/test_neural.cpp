#include <random>

#include "doctest.h"
#include "gid/common.hpp"
#include "gid/neural.hpp"
#include "test_util.hpp"

using namespace gid;

namespace {

Eigen::MatrixXd gaussian(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0, 1);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
    return m;
}

Eigen::MatrixXd random_simplex_rows(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    Eigen::MatrixXd m = gaussian(r, c, seed).array().exp();
    for (Eigen::Index i = 0; i < r; ++i) m.row(i) /= m.row(i).sum();
    return m;
}

JointBatch random_batch(const JointModel& model, std::uint64_t seed) {
    const auto n = static_cast<Eigen::Index>(model.n_ind());
    const auto m = static_cast<Eigen::Index>(model.n_ood());
    const auto d = static_cast<Eigen::Index>(model.input_dim());
    const auto r = static_cast<Eigen::Index>(model.repr_dim());
    JointBatch b;
    b.ind_x = gaussian(5, d, seed + 1);
    b.ind_targets = Eigen::MatrixXd::Zero(5, n + m);
    for (Eigen::Index i = 0; i < 5; ++i) b.ind_targets(i, i % n) = 1.0;
    b.ind_mask = dropout_mask(5, r, 0.3, seed + 2);
    b.ood_x = gaussian(4, d, seed + 3);
    b.ood_mask1 = dropout_mask(4, r, 0.3, seed + 4);
    b.ood_mask2 = dropout_mask(4, r, 0.3, seed + 5);
    b.ood_targets_for_view1 = Eigen::MatrixXd::Zero(4, n + m);
    b.ood_targets_for_view2 = Eigen::MatrixXd::Zero(4, n + m);
    b.ood_targets_for_view1.rightCols(m) = random_simplex_rows(4, m, seed + 6);
    b.ood_targets_for_view2.rightCols(m) = random_simplex_rows(4, m, seed + 7);
    return b;
}

// Largest relative error between analytic and central-difference gradients.
double gradient_error(JointModel model, const JointBatch& batch) {
    const auto analytic = joint_loss(model, batch).grads;
    auto blocks = model.parameter_blocks();
    const auto gblocks = analytic.parameter_blocks();
    double worst = 0.0;
    const double h = 1e-6;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        for (std::size_t i = 0; i < blocks[b].size(); ++i) {
            const double keep = blocks[b][i];
            blocks[b][i] = keep + h;
            const double up = joint_loss(model, batch).loss;
            blocks[b][i] = keep - h;
            const double down = joint_loss(model, batch).loss;
            blocks[b][i] = keep;
            const double numeric = (up - down) / (2 * h);
            const double g = gblocks[b][i];
            worst = std::max(worst, std::abs(numeric - g) / std::max(1e-3, std::abs(numeric) + std::abs(g)));
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("joint loss gradients agree with finite differences") {
    for (int enc : {1, 2}) {
        for (int head : {1, 2}) {
            const auto model = JointModel::create({6, 7, 3, 2, enc, head}, static_cast<std::uint64_t>(10 * enc + head));
            CHECK(gradient_error(model, random_batch(model, 99)) < 1e-6);
        }
    }
}

TEST_CASE("joint loss by hand for a zero model") {
    // All logits zero, so every cross-entropy is log(N+M) and the loss is too.
    const auto model = JointModel::create({4, 0, 2, 3, 1, 1}, 1).zeros_like();
    const auto batch = random_batch(model, 5);
    CHECK(joint_loss(model, batch).loss == doctest::Approx(std::log(5.0)).epsilon(1e-14));
}

TEST_CASE("cross entropy and its gradient") {
    Eigen::RowVectorXd l(3);
    l << 1.0, 2.0, 3.0;
    Eigen::RowVectorXd t(3);
    t << 0.0, 0.25, 0.75;
    const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
    const auto r = cross_entropy(l, t);
    CHECK(r.loss == doctest::Approx(0.25 * (lse - 2) + 0.75 * (lse - 3)).epsilon(1e-14));
    for (int c = 0; c < 3; ++c) CHECK(r.grad(c) == doctest::Approx(std::exp(l(c) - lse) - t(c)).epsilon(1e-14));
    // Shift invariance with huge logits.
    const auto big = cross_entropy(l.array() + 1e4, t);
    CHECK(big.loss == doctest::Approx(r.loss).epsilon(1e-9));
    Eigen::RowVectorXd bad(3);
    bad << 0.5, 0.6, 0.0;
    CHECK_THROWS_AS(cross_entropy(l, bad), ValidationError);
}

TEST_CASE("batch cross entropy divides by the normaliser") {
    const auto logits = gaussian(4, 3, 2);
    const auto targets = random_simplex_rows(4, 3, 3);
    const auto b = batch_cross_entropy(logits, targets, 8.0);
    double sum = 0;
    for (Eigen::Index i = 0; i < 4; ++i) sum += cross_entropy(logits.row(i), targets.row(i)).loss;
    CHECK(b.loss == doctest::Approx(sum / 8.0).epsilon(1e-14));
    CHECK((b.dlogits - (softmax_rows(logits) - targets) / 8.0).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("dropout mask statistics") {
    const auto m = dropout_mask(400, 250, 0.5, 17);
    const double zeros = (m.array() == 0.0).cast<double>().mean();
    // 100000 Bernoulli draws: standard error 0.0016.
    CHECK(zeros == doctest::Approx(0.5).epsilon(0.02));
    CHECK(((m.array() == 0.0) || (m.array() == 2.0)).all());
    CHECK(m.mean() == doctest::Approx(1.0).epsilon(0.02));
    CHECK(dropout_mask(3, 3, 0.5, 17) == dropout_mask(3, 3, 0.5, 17));
    CHECK(dropout_mask(3, 3, 0.0, 17) == Eigen::MatrixXd::Ones(3, 3));
    CHECK_THROWS_AS(dropout_mask(3, 3, 1.0, 1), ValidationError);
}

TEST_CASE("evaluation mode ignores the seed, training mode does not") {
    const auto model = JointModel::create({5, 8, 2, 2, 1, 1}, 3);
    const auto x = gaussian(6, 5, 4);
    CHECK(forward(model, x, 0.0, 1).logits() == forward(model, x, 0.0, 2).logits());
    CHECK_FALSE(forward(model, x, 0.5, 1).logits() == forward(model, x, 0.5, 2).logits());
    CHECK(forward(model, x, 0.5, 1).logits() == forward(model, x, 0.5, 1).logits());
    CHECK(forward(model, x).logits().cols() == 4);
    CHECK_THROWS_AS(forward(model, gaussian(2, 4, 1)), ValidationError);
}

TEST_CASE("forward pass by hand") {
    auto model = JointModel::create({2, 2, 1, 1, 1, 1}, 0).zeros_like();
    model.encoder[0].weight << 1, 0, 0, 2;
    model.encoder[0].bias << 0.5, 0;
    model.ind_head[0].weight << 1, 1;
    model.ood_head[0].weight << 1, -1;
    model.ood_head[0].bias << 0.25;
    Eigen::MatrixXd x(1, 2);
    x << 0.1, 0.2;
    const double h0 = std::tanh(0.6), h1 = std::tanh(0.4);
    const auto l = forward(model, x).logits();
    CHECK(l(0, 0) == doctest::Approx(h0 + h1).epsilon(1e-15));
    CHECK(l(0, 1) == doctest::Approx(h0 - h1 + 0.25).epsilon(1e-15));
}

TEST_CASE("parameter initialisation bounds and counts") {
    const auto model = JointModel::create({9, 16, 3, 4, 2, 2}, 5);
    CHECK(model.repr_dim() == 16);
    CHECK(model.n_classes() == 7);
    // encoder 9->16, 16->16; heads 16->16->3 and 16->16->4.
    const std::size_t expected = (9 * 16 + 16) + (16 * 16 + 16) + (16 * 16 + 16) + (16 * 3 + 3) + (16 * 16 + 16) + (16 * 4 + 4);
    CHECK(model.parameter_count() == expected);
    CHECK(model.encoder[0].weight.cwiseAbs().maxCoeff() <= 1.0 / 3.0);
    CHECK(model.ind_head[1].weight.cwiseAbs().maxCoeff() <= 0.25);
    CHECK(JointModel::create({9, 16, 3, 4, 2, 2}, 5).encoder[0].weight == model.encoder[0].weight);
    CHECK(JointModel::create({9, 0, 3, 4, 1, 1}, 5).repr_dim() == 9);
    CHECK_THROWS_AS(JointModel::create({9, 0, 3, 4, 0, 1}, 5), ValidationError);
}

TEST_CASE("sgd step by hand") {
    auto model = JointModel::create({1, 1, 1, 1, 1, 1}, 2).zeros_like();
    model.encoder[0].weight(0, 0) = 2.0;
    auto grads = model.zeros_like();
    grads.encoder[0].weight(0, 0) = 0.5;
    auto state = OptimizerState::for_model(model, 0.9, 0.1);
    sgd_step(model, grads, state, 0.1);
    // v = 0.5 + 0.1*2 = 0.7, w = 2 - 0.07
    CHECK(model.encoder[0].weight(0, 0) == doctest::Approx(1.93));
    sgd_step(model, grads, state, 0.1);
    // v = 0.9*0.7 + 0.5 + 0.1*1.93 = 1.323, w = 1.93 - 0.1323
    CHECK(model.encoder[0].weight(0, 0) == doctest::Approx(1.7977));
    CHECK(state.step == 2);
}

TEST_CASE("learning rate schedule values") {
    ScheduleConfig s{0.4, 0.01, 10, 101};
    CHECK(lr_at(s, 0) == doctest::Approx(0.04));
    CHECK(lr_at(s, 9) == doctest::Approx(0.4));
    CHECK(lr_at(s, 10) == doctest::Approx(0.4));
    CHECK(lr_at(s, 55) == doctest::Approx(0.205));
    CHECK(lr_at(s, 100) == doctest::Approx(0.01));
    for (int e = 11; e <= 100; ++e) CHECK(lr_at(s, e) <= lr_at(s, e - 1));
    CHECK_THROWS_AS(lr_at(s, 101), ValidationError);
    CHECK_THROWS_AS(lr_at(ScheduleConfig{0.4, 0.01, 10, 10}, 0), ValidationError);
}

TEST_CASE("checkpoint round trip stores float32 parameters") {
    TempDir tmp;
    const auto model = JointModel::create({4, 6, 2, 3, 2, 1}, 8);
    save_checkpoint(model, {77, 12}, tmp / "m.ckpt");
    const auto [back, info] = load_checkpoint(tmp / "m.ckpt");
    CHECK(info.seed == 77);
    CHECK(info.epoch == 12);
    CHECK(back.shape().encoder_depth == 2);
    const auto a = model.parameter_blocks();
    const auto b = back.parameter_blocks();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) CHECK(b[i][j] == static_cast<double>(static_cast<float>(a[i][j])));
    // Saving the reloaded model gives the same bytes.
    save_checkpoint(back, info, tmp / "m2.ckpt");
    CHECK(slurp(tmp / "m.ckpt") == slurp(tmp / "m2.ckpt"));

    std::string bytes = slurp(tmp / "m.ckpt");
    bytes.resize(bytes.size() - 4);
    std::ofstream(tmp / "bad.ckpt", std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_checkpoint(tmp / "bad.ckpt"), FormatError);
}
