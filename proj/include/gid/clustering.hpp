#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace gid {

/// Result of k-means: per-row cluster index, centroids (one per row) and the
/// summed squared distance of every sample to its assigned centroid.
struct ClusterAssignment {
    std::vector<int> labels;
    Eigen::MatrixXd centroids;
    double inertia = 0.0;
    int iterations = 0;
    /// Inertia after each assignment step of the winning restart.
    std::vector<double> inertia_trace;

    std::vector<std::size_t> cluster_sizes() const;
};

struct KMeansOptions {
    int max_iter = 300;
    /// Stop once the summed squared centroid shift falls below
    /// tol * (mean per-feature variance of the data).
    double tol = 1e-4;
    int restarts = 1;
};

/// Lloyd's algorithm from k-means++ seeding. Rows of `data` are samples.
/// Deterministic for a given seed. Throws ValidationError when k exceeds the
/// number of distinct rows.
ClusterAssignment kmeans(const Eigen::MatrixXd& data, int k, std::uint64_t seed,
                         const KMeansOptions& options = {});

/// Nearest-centroid labels (ties go to the lowest index).
std::vector<int> assign_nearest(const Eigen::MatrixXd& data, const Eigen::MatrixXd& centroids,
                                double* inertia = nullptr);

std::size_t count_distinct_rows(const Eigen::MatrixXd& data);

/// Mean silhouette coefficient with Euclidean distances. Labels may be any
/// integers; samples in singleton clusters contribute 0, as do samples whose
/// a and b are both zero. Throws ValidationError for fewer than two clusters.
double silhouette(const Eigen::MatrixXd& data, const std::vector<int>& labels);

struct KEstimateConfig {
    int k_prime = 0;
    /// Minimum cluster size counted as confident; <= 0 means n / k_prime.
    double threshold = 0.0;

    void validate() const;
};

/// Over-cluster with k_prime clusters and count the clusters whose size
/// reaches the threshold.
int estimate_k(const Eigen::MatrixXd& data, const KEstimateConfig& config, std::uint64_t seed,
               const KMeansOptions& options = {});

}  // namespace gid
