#include "gid/sinkhorn.hpp"

#include <cmath>

#include "gid/common.hpp"

namespace gid {
namespace {

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& values) {
    const double peak = values.maxCoeff();
    return peak + std::log((values.array() - peak).exp().sum());
}

}  // namespace

PseudoLabelMatrix sinkhorn_pseudo_labels(const SinkhornProblem& problem) {
    const auto m = problem.logits.rows();
    const auto b = problem.logits.cols();
    if (m < 1 || b < 1) {
        throw ValidationError("sinkhorn: logits must have at least one row and one column");
    }
    if (!(problem.epsilon > 0.0) || !std::isfinite(problem.epsilon)) {
        throw ValidationError("sinkhorn: epsilon must be positive");
    }
    if (problem.n_iter < 1) {
        throw ValidationError("sinkhorn: n_iter must be at least 1");
    }
    if (!problem.logits.allFinite()) {
        throw ValidationError("sinkhorn: logits contain non-finite values");
    }

    // exp(L / eps) overflows quickly for small eps, so keep log Q throughout.
    Eigen::MatrixXd log_q = problem.logits / problem.epsilon;
    log_q.array() -= log_q.maxCoeff();
    const double log_m = std::log(static_cast<double>(m));
    const double log_b = std::log(static_cast<double>(b));
    for (int it = 0; it < problem.n_iter; ++it) {
        for (Eigen::Index r = 0; r < m; ++r) {
            log_q.row(r).array() -= log_sum_exp(log_q.row(r).transpose()) + log_m;
        }
        for (Eigen::Index c = 0; c < b; ++c) {
            log_q.col(c).array() -= log_sum_exp(log_q.col(c)) + log_b;
        }
    }

    PseudoLabelMatrix out;
    out.y_hat = log_q.array().exp().matrix();
    out.targets = out.y_hat;
    for (Eigen::Index c = 0; c < b; ++c) {
        out.targets.col(c) /= out.targets.col(c).sum();
    }
    return out;
}

Eigen::MatrixXd harden_targets(const Eigen::MatrixXd& targets) {
    Eigen::MatrixXd hard = Eigen::MatrixXd::Zero(targets.rows(), targets.cols());
    for (Eigen::Index c = 0; c < targets.cols(); ++c) {
        Eigen::Index best = 0;
        for (Eigen::Index r = 1; r < targets.rows(); ++r) {
            if (targets(r, c) > targets(best, c)) {
                best = r;
            }
        }
        hard(best, c) = 1.0;
    }
    return hard;
}

double plan_entropy(const Eigen::MatrixXd& y_hat) {
    double h = 0.0;
    for (Eigen::Index i = 0; i < y_hat.size(); ++i) {
        const double y = y_hat.data()[i];
        if (y > 0.0) {
            h -= y * std::log(y);
        }
    }
    return h;
}

double transport_objective(const Eigen::MatrixXd& y_hat, const Eigen::MatrixXd& logits,
                           double epsilon) {
    return (y_hat.array() * logits.array()).sum() + epsilon * plan_entropy(y_hat);
}

}  // namespace gid
