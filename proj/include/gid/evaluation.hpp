#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace gid {

/// IND/OOD/ALL accuracy and macro-F1, in percent, after mapping predicted OOD
/// classes onto gold OOD classes.
struct MetricsReport {
    double ind_acc = 0.0;
    double ind_f1 = 0.0;
    double ood_acc = 0.0;
    double ood_f1 = 0.0;
    double all_acc = 0.0;
    double all_f1 = 0.0;
    std::size_t n_ind_samples = 0;
    std::size_t n_ood_samples = 0;
    /// mapping[p] is the gold class that predicted class p is scored as.
    std::vector<int> mapping;
    /// (N+M) x (N+M) counts, rows gold, columns mapped prediction.
    Eigen::MatrixXi confusion;
    std::vector<std::string> warnings;
};

struct EvalOptions {
    /// Map every predicted class through the Hungarian matching instead of
    /// only the OOD block; used for methods whose IND outputs are clusters too.
    bool map_all_classes = false;
};

/// Predicted OOD ids are matched to gold OOD ids by maximising agreement on
/// the test contingency table (IND ids map to themselves). Classes with no
/// gold and no predicted samples score F1 = 0 and add a warning.
/// Throws ValidationError on length mismatch or ids outside [0, N+M).
MetricsReport evaluate_gid(const std::vector<std::int64_t>& predictions,
                           const std::vector<std::int64_t>& gold, std::size_t n_ind,
                           std::size_t n_ood, const EvalOptions& options = {});

nlohmann::ordered_json metrics_to_json(const MetricsReport& report);
std::string confusion_to_csv(const MetricsReport& report);

}  // namespace gid
