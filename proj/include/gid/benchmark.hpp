#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "gid/dataset.hpp"
#include "json.hpp"

namespace gid {

/// A sample inside a benchmark partition. `label` is the position in
/// [0, N+M) or -1 when the label has been stripped.
struct GidSample {
    std::string id;
    std::vector<float> vector;
    std::int64_t label = -1;
};

/// Rows of a partition as an n x dim matrix.
Eigen::MatrixXd partition_matrix(const std::vector<GidSample>& samples);
std::vector<std::int64_t> partition_labels(const std::vector<GidSample>& samples);

enum class SplitMode { single_domain, multi_domain_overlapping, cross_domain };

SplitMode parse_split_mode(const std::string& name);
std::string to_string(SplitMode mode);

struct SplitConfig {
    SplitMode mode = SplitMode::multi_domain_overlapping;
    /// Fraction of classes (of domains in cross_domain mode) that become OOD.
    double ood_ratio = 0.4;
    double val_fraction = 0.1;
    double test_fraction = 0.1;
    std::uint64_t seed = 0;
    /// Keep at most this many IND training samples per class.
    std::optional<std::size_t> ind_samples_per_class;

    void validate() const;
};

struct DatasetRef {
    std::string path;
    std::string sha256;
};

enum class NoiseKind { ood_noise, ind_noise };

NoiseKind parse_noise_kind(const std::string& name);
std::string to_string(NoiseKind kind);

/// Samples appended to ood_train by apply_noise. `gold` keeps each entry's
/// class position for diagnostics (-1 for out-of-scope noise).
struct NoiseBatch {
    NoiseKind kind = NoiseKind::ood_noise;
    DatasetRef pool;
    std::vector<std::string> ids;
    std::vector<std::int64_t> gold;
};

/// Partitioned GID benchmark: labeled IND train/val, unlabeled OOD train/val
/// and a fully labeled test set over all N+M classes.
///
/// Reads of the test partition go through test(), which counts them and
/// calls the optional audit hook, so trainers can be checked for leakage.
class GidSplit {
public:
    std::size_t n_ind_classes = 0;
    std::size_t n_ood_classes = 0;
    std::vector<GidSample> ind_train;
    std::vector<GidSample> ind_val;
    std::vector<GidSample> ood_train;
    std::vector<GidSample> ood_val;
    /// Original class id -> position; IND classes occupy [0, N).
    std::map<std::int64_t, std::int64_t> class_mapping;
    /// Gold positions of stripped samples, for diagnostics only.
    std::unordered_map<std::string, std::int64_t> hidden_gold;
    std::vector<NoiseBatch> noise;
    DatasetRef dataset;
    nlohmann::ordered_json provenance = nlohmann::ordered_json::array();

    std::size_t n_classes() const { return n_ind_classes + n_ood_classes; }

    const std::vector<GidSample>& test() const;
    std::vector<GidSample>& mutable_test() { return test_; }
    /// Uncounted access for benchmark construction and serialization only.
    const std::vector<GidSample>& peek_test() const { return test_; }
    std::size_t test_reads() const { return test_reads_; }
    void set_test_audit(std::function<void()> hook) { audit_ = std::move(hook); }

    /// Gold position of every ood_train sample (-1 for out-of-scope noise).
    std::vector<std::int64_t> ood_train_gold() const;

    /// Throws ValidationError when the partition invariants do not hold.
    void validate() const;

private:
    std::vector<GidSample> test_;
    mutable std::size_t test_reads_ = 0;
    std::function<void()> audit_;
};

GidSplit build_split(const EmbeddingDataset& dataset, const SplitConfig& config);

struct ImbalanceConfig {
    /// n_max / n_min across OOD train classes.
    double rho = 1.0;
};

/// Target count of the j-th (1-based) OOD class: floor(n_min * rho^((j-1)/M)).
std::size_t imbalance_count(double n_min, double rho, std::size_t j, std::size_t m);

GidSplit apply_imbalance(const GidSplit& split, const ImbalanceConfig& config, std::uint64_t seed);

struct NoiseConfig {
    NoiseKind kind = NoiseKind::ood_noise;
    /// Fraction of the current ood_train size to add.
    double ratio = 0.0;
    EmbeddingDataset pool;
    DatasetRef pool_ref;
};

/// round(ratio * |ood_train|), halves away from zero.
std::size_t noise_count(double ratio, std::size_t ood_train_size);

GidSplit apply_noise(const GidSplit& split, const NoiseConfig& config, std::uint64_t seed);

/// Split manifest: class mapping, partition id lists, noise batches and
/// provenance, referencing the dataset by path and content hash.
nlohmann::ordered_json split_to_manifest(const GidSplit& split);
void save_manifest(const GidSplit& split, const std::filesystem::path& path);

/// Rebuilds a split from its manifest. Relative dataset paths are resolved
/// against the current directory, then against the manifest's directory.
/// A dataset whose hash differs from the recorded one is a DataError.
GidSplit load_manifest(const std::filesystem::path& path);

/// Loads the dataset a manifest refers to, with the same path resolution and
/// hash check as load_manifest.
EmbeddingDataset load_referenced_dataset(const DatasetRef& ref, const std::filesystem::path& manifest);

}  // namespace gid
