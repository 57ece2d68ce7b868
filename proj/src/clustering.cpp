#include "gid/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <string>

#include "gid/common.hpp"
#include "parallel.hpp"

namespace gid {
namespace {

Eigen::MatrixXd kmeanspp_seeds(const Eigen::MatrixXd& data, int k, std::mt19937_64& rng) {
    const auto n = data.rows();
    Eigen::MatrixXd centroids(k, data.cols());
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    centroids.row(0) = data.row(first(rng));

    Eigen::VectorXd closest(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        closest(i) = (data.row(i) - centroids.row(0)).squaredNorm();
    }
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int c = 1; c < k; ++c) {
        const double total = closest.sum();
        const double target = unit(rng) * total;
        double running = 0.0;
        Eigen::Index chosen = -1;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (closest(i) <= 0.0) {
                continue;
            }
            running += closest(i);
            chosen = i;
            if (running > target) {
                break;
            }
        }
        centroids.row(c) = data.row(chosen);
        for (Eigen::Index i = 0; i < n; ++i) {
            closest(i) = std::min(closest(i), (data.row(i) - centroids.row(c)).squaredNorm());
        }
    }
    return centroids;
}

ClusterAssignment lloyd(const Eigen::MatrixXd& data, int k, std::uint64_t seed,
                        const KMeansOptions& options) {
    const auto n = data.rows();
    const auto dim = data.cols();
    std::mt19937_64 rng(seed);

    ClusterAssignment result;
    result.centroids = kmeanspp_seeds(data, k, rng);

    const Eigen::RowVectorXd mean = data.colwise().mean();
    const double variance =
        dim > 0 ? (data.rowwise() - mean).squaredNorm() / static_cast<double>(n * dim) : 0.0;
    const double shift_tol = options.tol * variance;

    for (int iter = 0; iter < options.max_iter; ++iter) {
        double inertia = 0.0;
        result.labels = assign_nearest(data, result.centroids, &inertia);
        result.inertia_trace.push_back(inertia);
        result.iterations = iter + 1;

        Eigen::MatrixXd updated = Eigen::MatrixXd::Zero(k, dim);
        std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int c = result.labels[static_cast<std::size_t>(i)];
            updated.row(c) += data.row(i);
            ++counts[static_cast<std::size_t>(c)];
        }
        std::vector<char> taken(static_cast<std::size_t>(n), 0);
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                updated.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
                continue;
            }
            // Empty cluster: move it onto the sample farthest from its own centroid.
            Eigen::Index farthest = -1;
            double best = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (taken[static_cast<std::size_t>(i)]) {
                    continue;
                }
                const double d =
                    (data.row(i) - result.centroids.row(result.labels[static_cast<std::size_t>(i)]))
                        .squaredNorm();
                if (d > best) {
                    best = d;
                    farthest = i;
                }
            }
            taken[static_cast<std::size_t>(farthest)] = 1;
            updated.row(c) = data.row(farthest);
        }
        const double shift = (updated - result.centroids).squaredNorm();
        result.centroids = std::move(updated);
        if (shift <= shift_tol) {
            break;
        }
    }
    double inertia = 0.0;
    result.labels = assign_nearest(data, result.centroids, &inertia);
    result.inertia = inertia;
    result.inertia_trace.push_back(inertia);
    return result;
}

}  // namespace

std::vector<std::size_t> ClusterAssignment::cluster_sizes() const {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(centroids.rows()), 0);
    for (int label : labels) {
        ++sizes[static_cast<std::size_t>(label)];
    }
    return sizes;
}

std::vector<int> assign_nearest(const Eigen::MatrixXd& data, const Eigen::MatrixXd& centroids,
                                double* inertia) {
    const auto n = static_cast<std::size_t>(data.rows());
    std::vector<int> labels(n, 0);
    std::vector<double> dist(n, 0.0);
    detail::parallel_for(n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int best_c = 0;
            for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
                const double d =
                    (data.row(static_cast<Eigen::Index>(i)) - centroids.row(c)).squaredNorm();
                if (d < best) {
                    best = d;
                    best_c = static_cast<int>(c);
                }
            }
            labels[i] = best_c;
            dist[i] = best;
        }
    });
    if (inertia != nullptr) {
        double total = 0.0;
        for (double d : dist) {
            total += d;
        }
        *inertia = total;
    }
    return labels;
}

std::size_t count_distinct_rows(const Eigen::MatrixXd& data) {
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(data.rows()));
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
        auto& row = rows[static_cast<std::size_t>(i)];
        row.resize(static_cast<std::size_t>(data.cols()));
        for (Eigen::Index j = 0; j < data.cols(); ++j) {
            row[static_cast<std::size_t>(j)] = data(i, j);
        }
    }
    std::sort(rows.begin(), rows.end());
    return static_cast<std::size_t>(std::unique(rows.begin(), rows.end()) - rows.begin());
}

ClusterAssignment kmeans(const Eigen::MatrixXd& data, int k, std::uint64_t seed,
                         const KMeansOptions& options) {
    if (k < 1) {
        throw ValidationError("kmeans: k must be at least 1");
    }
    if (options.max_iter < 1 || options.restarts < 1) {
        throw ValidationError("kmeans: max_iter and restarts must be at least 1");
    }
    if (!data.allFinite()) {
        throw ValidationError("kmeans: data has non-finite entries");
    }
    const std::size_t distinct = count_distinct_rows(data);
    if (static_cast<std::size_t>(k) > distinct) {
        throw ValidationError("kmeans: k=" + std::to_string(k) + " exceeds the " +
                              std::to_string(distinct) + " distinct points");
    }
    ClusterAssignment best;
    for (int r = 0; r < options.restarts; ++r) {
        const std::uint64_t run_seed = r == 0 ? seed : derive_seed(seed, static_cast<std::uint64_t>(r));
        ClusterAssignment candidate = lloyd(data, k, run_seed, options);
        if (r == 0 || candidate.inertia < best.inertia) {
            best = std::move(candidate);
        }
    }
    return best;
}

double silhouette(const Eigen::MatrixXd& data, const std::vector<int>& labels) {
    if (static_cast<std::size_t>(data.rows()) != labels.size()) {
        throw ValidationError("silhouette: label count does not match sample count");
    }
    std::map<int, int> index;
    for (int label : labels) {
        index.emplace(label, 0);
    }
    if (index.size() < 2) {
        throw ValidationError("silhouette: needs at least two clusters");
    }
    int next = 0;
    for (auto& [label, slot] : index) {
        slot = next++;
    }
    const auto k = static_cast<std::size_t>(next);
    const auto n = labels.size();
    std::vector<int> cluster(n);
    std::vector<double> sizes(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        cluster[i] = index[labels[i]];
        sizes[static_cast<std::size_t>(cluster[i])] += 1.0;
    }

    std::vector<double> scores(n, 0.0);
    detail::parallel_for(n, [&](std::size_t begin, std::size_t end) {
        std::vector<double> sums(k);
        for (std::size_t i = begin; i < end; ++i) {
            const auto own = static_cast<std::size_t>(cluster[i]);
            if (sizes[own] < 2.0) {
                continue;
            }
            std::fill(sums.begin(), sums.end(), 0.0);
            for (std::size_t j = 0; j < n; ++j) {
                if (j != i) {
                    sums[static_cast<std::size_t>(cluster[j])] +=
                        (data.row(static_cast<Eigen::Index>(i)) - data.row(static_cast<Eigen::Index>(j)))
                            .norm();
                }
            }
            const double a = sums[own] / (sizes[own] - 1.0);
            double b = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                if (c != own) {
                    b = std::min(b, sums[c] / sizes[c]);
                }
            }
            const double denom = std::max(a, b);
            scores[i] = denom > 0.0 ? (b - a) / denom : 0.0;
        }
    });
    double total = 0.0;
    for (double s : scores) {
        total += s;
    }
    return total / static_cast<double>(n);
}

void KEstimateConfig::validate() const {
    if (k_prime < 1) {
        throw ValidationError("estimate_k: k_prime must be at least 1");
    }
    if (!std::isfinite(threshold) || threshold < 0.0) {
        throw ValidationError("estimate_k: threshold must be a finite non-negative number");
    }
}

int estimate_k(const Eigen::MatrixXd& data, const KEstimateConfig& config, std::uint64_t seed,
               const KMeansOptions& options) {
    config.validate();
    if (data.rows() == 0) {
        throw ValidationError("estimate_k: no data");
    }
    const ClusterAssignment clusters = kmeans(data, config.k_prime, seed, options);
    const double t = config.threshold > 0.0
                         ? config.threshold
                         : static_cast<double>(data.rows()) / static_cast<double>(config.k_prime);
    int k = 0;
    for (std::size_t size : clusters.cluster_sizes()) {
        if (static_cast<double>(size) >= t) {
            ++k;
        }
    }
    return k;
}

}  // namespace gid
