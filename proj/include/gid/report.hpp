#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gid/evaluation.hpp"
#include "json.hpp"

namespace gid {

struct Projection2D {
    /// n x 2 scores on the top two principal components.
    Eigen::MatrixXd coords;
    /// 2 x d unit components; each one's largest-magnitude entry is positive.
    Eigen::MatrixXd components;
    Eigen::Vector2d explained_variance;
};

/// PCA of the centred rows. Needs at least two rows.
Projection2D pca_2d(const Eigen::MatrixXd& data);

/// x,y,gold,predicted with one row per sample.
std::string projection_csv(const Projection2D& projection, const std::vector<std::int64_t>& gold,
                           const std::vector<std::int64_t>& predicted);

struct DomainSilhouette {
    std::uint32_t domain = 0;
    std::string name;
    std::size_t n_samples = 0;
    std::size_t n_classes = 0;
    /// Empty when the domain has fewer than two classes or distinct rows.
    std::optional<double> sc;
};

/// Per domain: k-means (k = gold classes present) on the given representations
/// and the silhouette of the result. Higher means the representation learned
/// from IND data separates that domain's classes better.
std::vector<DomainSilhouette> domain_silhouettes(const Eigen::MatrixXd& representations,
                                                 const std::vector<std::int64_t>& gold,
                                                 const std::vector<std::uint32_t>& domains,
                                                 const std::vector<std::string>& domain_names,
                                                 std::uint64_t seed);

std::string domain_silhouettes_csv(const std::vector<DomainSilhouette>& rows);

/// Mean and sample standard deviation (0 for one run) of every metric.
nlohmann::ordered_json aggregate_metrics(const std::vector<MetricsReport>& runs);

/// One header line and one row per run: seed plus the six metrics.
std::string metrics_csv(const std::vector<std::uint64_t>& seeds, const std::vector<MetricsReport>& runs);

}  // namespace gid
