#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gid/benchmark.hpp"
#include "gid/clustering.hpp"
#include "gid/evaluation.hpp"
#include "gid/neural.hpp"

namespace gid {

enum class Method { kmeans_pipeline, deepaligned_pipeline, deepaligned_mix, e2e };

Method parse_method(const std::string& name);
std::string to_string(Method method);

struct TrainConfig {
    Method method = Method::e2e;
    std::size_t batch_size = 512;
    /// Epochs of every training stage (outer iterations for DeepAligned loops).
    int epochs = 100;
    /// Epochs of IND pretraining inside the pipelines; negative means `epochs`.
    int pretrain_epochs = -1;
    /// lr_base, lr_min and warmup; total_epochs is set per stage.
    ScheduleConfig schedule;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    /// Dropout of the two augmented views in the end-to-end method.
    double dropout_p = 0.5;
    double epsilon = 0.05;
    int sk_iters = 3;
    bool hard_pseudo_labels = false;
    /// DeepAligned-Mix: train IND rows on gold labels instead of cluster ids.
    bool mix_gold_ind = false;
    std::uint64_t seed = 0;
    /// Encoder width; 0 means the input dimension. Wider than the input keeps
    /// directions IND pretraining does not use.
    std::size_t repr_dim = 128;
    int encoder_depth = 1;
    int head_depth = 1;
    /// Stop a stage after this many epochs without a better validation SC.
    int early_stop_patience = 10;
    KMeansOptions kmeans{300, 1e-4, 10};

    void validate() const;
};

struct EpochRecord {
    std::string stage;
    int epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
    /// Silhouette of validation representations under the predicted labels.
    std::optional<double> val_sc;
};

struct RunReport {
    Method method = Method::e2e;
    std::uint64_t seed = 0;
    MetricsReport metrics;
    std::vector<EpochRecord> curve;
    /// Cluster purity of the OOD training pseudo-labels against hidden gold,
    /// one entry per epoch of the stage that produces them. Diagnostic only.
    std::vector<double> pseudo_label_purity;
    int best_epoch = -1;
    std::vector<std::string> warnings;
    JointModel model;
    std::vector<std::string> test_ids;
    std::vector<std::int64_t> test_gold;
    std::vector<std::int64_t> test_predictions;
    std::string checkpoint_path;
    double elapsed_seconds = 0.0;
};

/// Argmax of the concatenated logits without dropout; ties go to the lowest id.
std::vector<std::int64_t> predict(const JointModel& model, const Eigen::MatrixXd& samples);

/// Encoder output (evaluation mode).
Eigen::MatrixXd representations(const JointModel& model, const Eigen::MatrixXd& samples);

/// Fraction of samples whose cluster's majority gold class matches their own.
/// Gold -1 (out-of-scope noise) counts as its own class.
double cluster_purity(const std::vector<int>& clusters, const std::vector<std::int64_t>& gold);

/// Trains encoder + IND head with N-way cross-entropy on ind_train and keeps
/// the epoch with the best ind_val accuracy. The OOD head keeps its
/// initialisation. Uses config.epochs epochs.
JointModel pretrain_ind(const GidSplit& split, const TrainConfig& config,
                        std::vector<EpochRecord>* curve = nullptr);

/// Stage two of a pipeline: trains an (N+M)-way classifier on gold IND labels
/// plus the given OOD pseudo-labels (one per ood_train row, in [0, M)),
/// starting from the pretrained encoder and IND head with a zero OOD head.
/// Returns the selected model; test data is not touched.
JointModel train_joint_classifier(const GidSplit& split, const JointModel& pretrained,
                                  const std::vector<int>& ood_pseudo_labels,
                                  const TrainConfig& config, std::vector<EpochRecord>* curve = nullptr,
                                  int* best_epoch = nullptr);

/// k-means or DeepAligned clustering of OOD representations, then a joint classifier.
RunReport run_pipeline(const GidSplit& split, const TrainConfig& config);

/// Iterative clustering of IND and OOD together into N+M clusters; every
/// predicted class is mapped through the Hungarian matching at evaluation.
RunReport run_deepaligned_mix(const GidSplit& split, const TrainConfig& config);

/// Joint IND + OOD training with swapped-prediction pseudo-labels from
/// Sinkhorn-Knopp on each dropout view.
RunReport run_e2e(const GidSplit& split, const TrainConfig& config);

/// Dispatches on config.method.
RunReport run_method(const GidSplit& split, const TrainConfig& config);

nlohmann::ordered_json train_config_to_json(const TrainConfig& config);
nlohmann::ordered_json run_report_to_json(const RunReport& report, bool include_timing);
/// stage,epoch,loss,lr,val_sc
std::string loss_curve_csv(const RunReport& report);

}  // namespace gid
