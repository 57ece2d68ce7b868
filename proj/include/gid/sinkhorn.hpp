#pragma once

#include <Eigen/Dense>

namespace gid {

/// Entropy-regularised assignment of B samples (columns of `logits`) to M
/// clusters (rows), constrained to row sums 1/M and column sums 1/B.
struct SinkhornProblem {
    Eigen::MatrixXd logits;  // M x B
    double epsilon = 0.05;
    int n_iter = 3;
};

struct PseudoLabelMatrix {
    /// Transport plan, M x B, non-negative.
    Eigen::MatrixXd y_hat;
    /// y_hat with every column rescaled to sum to 1: column i is the soft
    /// pseudo-label of sample i.
    Eigen::MatrixXd targets;
};

/// Sinkhorn-Knopp scaling of exp(logits / epsilon), carried out in the log
/// domain. Each round normalises rows to 1/M, then columns to 1/B.
/// Throws ValidationError on non-finite logits, empty shapes or epsilon <= 0.
PseudoLabelMatrix sinkhorn_pseudo_labels(const SinkhornProblem& problem);

/// Replace each soft target column by a one-hot vector at its argmax
/// (ties to the lowest row).
Eigen::MatrixXd harden_targets(const Eigen::MatrixXd& targets);

/// Sum_ij Y_ij L_ij + epsilon * H(Y), with H(Y) = -Sum_ij Y_ij log Y_ij.
double transport_objective(const Eigen::MatrixXd& y_hat, const Eigen::MatrixXd& logits,
                           double epsilon);

double plan_entropy(const Eigen::MatrixXd& y_hat);

}  // namespace gid
