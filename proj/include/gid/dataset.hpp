#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace gid {

/// One embedded query. `label` absent means unlabeled.
struct SampleRecord {
    std::string id;
    std::vector<float> vector;
    std::optional<std::int64_t> label;
    std::optional<std::uint32_t> domain;

    bool operator==(const SampleRecord&) const = default;
};

/// Rows of fixed-dimension embeddings with optional class labels and domain tags.
struct EmbeddingDataset {
    std::size_t dim = 0;
    std::vector<SampleRecord> samples;
    std::map<std::int64_t, std::string> label_names;
    std::map<std::uint32_t, std::string> domain_names;

    bool has_labels() const;
    bool has_domains() const;
    std::size_t size() const { return samples.size(); }

    /// Throws ValidationError when any invariant is broken.
    void validate() const;

    /// Sample vectors as an n x dim double matrix.
    Eigen::MatrixXd matrix() const;

    bool operator==(const EmbeddingDataset&) const = default;
};

enum class DatasetFormat { binary, jsonl };

DatasetFormat parse_dataset_format(const std::string& name);
/// Infers the format from the extension: `.jsonl` is JSONL, everything else binary.
DatasetFormat format_for_path(const std::filesystem::path& path);

EmbeddingDataset load_dataset(const std::filesystem::path& path, DatasetFormat format);
void save_dataset(const EmbeddingDataset& dataset, const std::filesystem::path& path,
                  DatasetFormat format);

inline EmbeddingDataset load_dataset(const std::filesystem::path& path) {
    return load_dataset(path, format_for_path(path));
}
inline void save_dataset(const EmbeddingDataset& dataset, const std::filesystem::path& path) {
    save_dataset(dataset, path, format_for_path(path));
}

/// Sidecar holding label/domain names (and ids when they are not the row index).
std::filesystem::path names_sidecar_path(const std::filesystem::path& path);

/// Size in bytes of a GIDE file with the given shape and flags.
std::uint64_t binary_file_size(std::uint64_t n_samples, std::uint64_t dim, bool has_labels,
                               bool has_domains);

/// Hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

/// Gaussian-blob stand-in for a labeled intent corpus.
struct SyntheticSpec {
    std::size_t num_classes = 0;
    std::size_t samples_per_class = 0;
    std::size_t dim = 0;
    /// Distance between class means, in units of within_class_std (absolute
    /// when the std is 0).
    double class_separation = 1.0;
    double within_class_std = 1.0;
    /// Domain id per class; empty means no domain tags.
    std::vector<std::uint32_t> class_domains;
    std::uint64_t seed = 0;
    std::string id_prefix;

    void validate() const;
};

/// Contiguous blocks: class c belongs to domain floor(c * num_domains / num_classes).
std::vector<std::uint32_t> contiguous_domains(std::size_t num_classes, std::size_t num_domains);

/// Class means used by generate_synthetic, one row per class.
Eigen::MatrixXd synthetic_class_means(const SyntheticSpec& spec);

EmbeddingDataset generate_synthetic(const SyntheticSpec& spec);

}  // namespace gid
