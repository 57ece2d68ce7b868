#include "gid/report.hpp"

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "gid/clustering.hpp"
#include "gid/common.hpp"

namespace gid {
namespace {

const char* const kMetricNames[] = {"ind_acc", "ind_f1", "ood_acc", "ood_f1", "all_acc", "all_f1"};

std::vector<double> metric_values(const MetricsReport& m) {
    return {m.ind_acc, m.ind_f1, m.ood_acc, m.ood_f1, m.all_acc, m.all_f1};
}

std::string fmt(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

}  // namespace

Projection2D pca_2d(const Eigen::MatrixXd& data) {
    if (data.rows() < 2 || data.cols() < 1) {
        throw ValidationError("pca_2d needs at least two rows and one column");
    }
    const Eigen::RowVectorXd mean = data.colwise().mean();
    const Eigen::MatrixXd centred = data.rowwise() - mean;
    const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(data.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) {
        throw DataError("pca_2d: eigen decomposition failed");
    }
    Projection2D out;
    out.components = Eigen::MatrixXd::Zero(2, data.cols());
    const Eigen::Index d = data.cols();
    for (Eigen::Index k = 0; k < 2; ++k) {
        // Eigenvalues come in ascending order; with one column the second axis stays zero.
        if (k >= d) {
            break;
        }
        Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - k);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) {
            v = -v;
        }
        out.components.row(k) = v.transpose();
        out.explained_variance(k) = std::max(0.0, solver.eigenvalues()(d - 1 - k));
    }
    if (d < 2) {
        out.explained_variance(1) = 0.0;
    }
    out.coords = centred * out.components.transpose();
    return out;
}

std::string projection_csv(const Projection2D& projection, const std::vector<std::int64_t>& gold,
                           const std::vector<std::int64_t>& predicted) {
    const auto n = static_cast<std::size_t>(projection.coords.rows());
    if (gold.size() != n || predicted.size() != n) {
        throw ValidationError("projection_csv: label count differs from row count");
    }
    std::ostringstream out;
    out.precision(17);
    out << "x,y,gold,predicted\n";
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        out << projection.coords(r, 0) << ',' << projection.coords(r, 1) << ',' << gold[i] << ','
            << predicted[i] << '\n';
    }
    return out.str();
}

std::vector<DomainSilhouette> domain_silhouettes(const Eigen::MatrixXd& representations,
                                                 const std::vector<std::int64_t>& gold,
                                                 const std::vector<std::uint32_t>& domains,
                                                 const std::vector<std::string>& domain_names,
                                                 std::uint64_t seed) {
    const auto n = static_cast<std::size_t>(representations.rows());
    if (gold.size() != n || domains.size() != n) {
        throw ValidationError("domain_silhouettes: one gold label and domain per row required");
    }
    std::map<std::uint32_t, std::vector<std::size_t>> rows;
    for (std::size_t i = 0; i < n; ++i) {
        rows[domains[i]].push_back(i);
    }
    std::vector<DomainSilhouette> out;
    for (const auto& [domain, idx] : rows) {
        DomainSilhouette row;
        row.domain = domain;
        row.name = domain < domain_names.size() ? domain_names[domain] : std::to_string(domain);
        row.n_samples = idx.size();
        std::set<std::int64_t> classes;
        Eigen::MatrixXd x(static_cast<Eigen::Index>(idx.size()), representations.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            x.row(static_cast<Eigen::Index>(i)) = representations.row(static_cast<Eigen::Index>(idx[i]));
            classes.insert(gold[idx[i]]);
        }
        row.n_classes = classes.size();
        const int k = static_cast<int>(classes.size());
        if (k >= 2 && count_distinct_rows(x) >= classes.size()) {
            const auto clusters = kmeans(x, k, derive_seed(seed, domain));
            row.sc = silhouette(x, clusters.labels);
        }
        out.push_back(std::move(row));
    }
    return out;
}

std::string domain_silhouettes_csv(const std::vector<DomainSilhouette>& rows) {
    std::ostringstream out;
    out << "domain,name,n_samples,n_classes,sc\n";
    for (const auto& r : rows) {
        out << r.domain << ',' << r.name << ',' << r.n_samples << ',' << r.n_classes << ',';
        if (r.sc) {
            out << fmt(*r.sc);
        }
        out << '\n';
    }
    return out.str();
}

nlohmann::ordered_json aggregate_metrics(const std::vector<MetricsReport>& runs) {
    if (runs.empty()) {
        throw ValidationError("aggregate_metrics: no runs");
    }
    nlohmann::ordered_json out;
    const double n = static_cast<double>(runs.size());
    for (std::size_t k = 0; k < std::size(kMetricNames); ++k) {
        std::vector<double> values;
        for (const auto& r : runs) {
            values.push_back(metric_values(r)[k]);
        }
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= n;
        double ss = 0.0;
        for (double v : values) ss += (v - mean) * (v - mean);
        const double std = runs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
        out[kMetricNames[k]] = {{"mean", mean}, {"std", std}, {"values", values}};
    }
    return out;
}

std::string metrics_csv(const std::vector<std::uint64_t>& seeds, const std::vector<MetricsReport>& runs) {
    if (seeds.size() != runs.size()) {
        throw ValidationError("metrics_csv: one seed per run required");
    }
    std::ostringstream out;
    out << "seed";
    for (const char* name : kMetricNames) out << ',' << name;
    out << '\n';
    for (std::size_t i = 0; i < runs.size(); ++i) {
        out << seeds[i];
        for (double v : metric_values(runs[i])) out << ',' << fmt(v);
        out << '\n';
    }
    return out.str();
}

}  // namespace gid
