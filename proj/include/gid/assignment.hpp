#pragma once

#include <vector>

#include <Eigen/Dense>

namespace gid {

/// Row i is assigned to column perm[i].
struct Mapping {
    std::vector<int> perm;
    double total_cost = 0.0;
};

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Among equal-cost optima the lexicographically smallest `perm` is returned.
/// Maximization problems are solved by passing the negated matrix.
/// Throws ValidationError for non-square or non-finite input.
Mapping hungarian(const Eigen::MatrixXd& cost);

/// Matches previous-epoch centroids (rows of `previous`) to current ones so the
/// summed squared Euclidean distance is minimal: previous cluster i corresponds
/// to current cluster perm[i].
Mapping align_clusters(const Eigen::MatrixXd& previous, const Eigen::MatrixXd& current);

/// Inverse view of an alignment: relabel[current id] = previous id.
std::vector<int> relabel_from_alignment(const Mapping& alignment);

}  // namespace gid
