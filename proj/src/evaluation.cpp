#include "gid/evaluation.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "gid/assignment.hpp"
#include "gid/common.hpp"

namespace gid {
namespace {

// Matches predicted classes `rows` to gold classes `cols` maximising the
// contingency counts. Rows are first put in a canonical order (by their full
// count profile) so the result does not depend on how predicted ids are
// numbered, even when several optimal matchings exist.
void match_block(const Eigen::MatrixXi& contingency, const std::vector<int>& rows,
                 const std::vector<int>& cols, std::vector<int>& mapping) {
    std::vector<int> order = rows;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        for (Eigen::Index g = 0; g < contingency.cols(); ++g) {
            if (contingency(a, g) != contingency(b, g)) {
                return contingency(a, g) > contingency(b, g);
            }
        }
        return false;
    });
    const auto k = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd cost(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index j = 0; j < k; ++j) {
            cost(i, j) = -static_cast<double>(contingency(order[static_cast<std::size_t>(i)],
                                                          cols[static_cast<std::size_t>(j)]));
        }
    }
    const Mapping m = hungarian(cost);
    for (std::size_t i = 0; i < order.size(); ++i) {
        mapping[static_cast<std::size_t>(order[i])] = cols[static_cast<std::size_t>(m.perm[i])];
    }
}

}  // namespace

MetricsReport evaluate_gid(const std::vector<std::int64_t>& predictions,
                           const std::vector<std::int64_t>& gold, std::size_t n_ind,
                           std::size_t n_ood, const EvalOptions& options) {
    if (predictions.size() != gold.size()) {
        throw ValidationError("evaluate_gid: predictions and gold lengths differ");
    }
    const auto total = static_cast<std::int64_t>(n_ind + n_ood);
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (predictions[i] < 0 || predictions[i] >= total || gold[i] < 0 || gold[i] >= total) {
            throw ValidationError("evaluate_gid: class id out of range at sample " + std::to_string(i));
        }
    }
    const auto c = static_cast<Eigen::Index>(total);

    // contingency(p, g): samples predicted p with gold g, before mapping.
    Eigen::MatrixXi contingency = Eigen::MatrixXi::Zero(c, c);
    for (std::size_t i = 0; i < gold.size(); ++i) {
        ++contingency(predictions[i], gold[i]);
    }

    MetricsReport report;
    report.mapping.resize(static_cast<std::size_t>(total));
    std::iota(report.mapping.begin(), report.mapping.end(), 0);
    std::vector<int> block;
    const int first = options.map_all_classes ? 0 : static_cast<int>(n_ind);
    for (int p = first; p < static_cast<int>(total); ++p) {
        block.push_back(p);
    }
    match_block(contingency, block, block, report.mapping);

    report.confusion = Eigen::MatrixXi::Zero(c, c);
    std::size_t ind_correct = 0;
    std::size_t ood_correct = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        const int mapped = report.mapping[static_cast<std::size_t>(predictions[i])];
        ++report.confusion(gold[i], mapped);
        const bool correct = mapped == gold[i];
        if (gold[i] < static_cast<std::int64_t>(n_ind)) {
            ++report.n_ind_samples;
            ind_correct += correct ? 1 : 0;
        } else {
            ++report.n_ood_samples;
            ood_correct += correct ? 1 : 0;
        }
    }
    auto pct = [](std::size_t num, std::size_t den) {
        return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
    };
    report.ind_acc = pct(ind_correct, report.n_ind_samples);
    report.ood_acc = pct(ood_correct, report.n_ood_samples);
    report.all_acc = pct(ind_correct + ood_correct, gold.size());

    std::vector<double> f1(static_cast<std::size_t>(total), 0.0);
    for (Eigen::Index k = 0; k < c; ++k) {
        const double tp = report.confusion(k, k);
        const double gold_count = report.confusion.row(k).sum();
        const double pred_count = report.confusion.col(k).sum();
        if (gold_count == 0) {
            report.warnings.push_back("class " + std::to_string(k) + " has no gold test samples; F1 set to 0");
        }
        if (tp > 0) {
            const double precision = tp / pred_count;
            const double recall = tp / gold_count;
            f1[static_cast<std::size_t>(k)] = 2.0 * precision * recall / (precision + recall);
        }
    }
    auto mean_f1 = [&](std::size_t lo, std::size_t hi) {
        if (hi <= lo) return 0.0;
        double sum = 0.0;
        for (std::size_t k = lo; k < hi; ++k) sum += f1[k];
        return 100.0 * sum / static_cast<double>(hi - lo);
    };
    report.ind_f1 = mean_f1(0, n_ind);
    report.ood_f1 = mean_f1(n_ind, n_ind + n_ood);
    report.all_f1 = mean_f1(0, n_ind + n_ood);
    return report;
}

nlohmann::ordered_json metrics_to_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["ind_acc"] = report.ind_acc;
    j["ind_f1"] = report.ind_f1;
    j["ood_acc"] = report.ood_acc;
    j["ood_f1"] = report.ood_f1;
    j["all_acc"] = report.all_acc;
    j["all_f1"] = report.all_f1;
    j["n_ind_samples"] = report.n_ind_samples;
    j["n_ood_samples"] = report.n_ood_samples;
    j["mapping"] = report.mapping;
    j["warnings"] = report.warnings;
    return j;
}

std::string confusion_to_csv(const MetricsReport& report) {
    std::ostringstream out;
    out << "gold";
    for (Eigen::Index p = 0; p < report.confusion.cols(); ++p) {
        out << ",pred_" << p;
    }
    out << '\n';
    for (Eigen::Index g = 0; g < report.confusion.rows(); ++g) {
        out << g;
        for (Eigen::Index p = 0; p < report.confusion.cols(); ++p) {
            out << ',' << report.confusion(g, p);
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace gid
