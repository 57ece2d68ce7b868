#include "gid/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include <openssl/evp.h>

#include "gid/common.hpp"
#include "json.hpp"

namespace gid {
namespace {

using nlohmann::json;

constexpr std::array<char, 4> kMagic = {'G', 'I', 'D', 'E'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kFlagLabels = 1u << 0;
constexpr std::uint32_t kFlagDomains = 1u << 1;
constexpr std::uint32_t kMissingDomain = 0xFFFFFFFFu;
constexpr std::uint64_t kHeaderBytes = 4 + 4 + 8 + 8 + 4;

template <typename T>
void put_le(std::string& out, T value) {
    std::make_unsigned_t<T> bits;
    std::memcpy(&bits, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
    }
}

void put_float(std::string& out, float value) {
    std::uint32_t bits;
    std::memcpy(&bits, &value, sizeof bits);
    put_le(out, bits);
}

class ByteReader {
public:
    ByteReader(const std::string& bytes, std::string source)
        : bytes_(bytes), source_(std::move(source)) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        std::make_unsigned_t<T> bits = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            bits |= static_cast<std::make_unsigned_t<T>>(
                        static_cast<unsigned char>(bytes_[pos_ + i]))
                    << (8 * i);
        }
        pos_ += sizeof(T);
        T value;
        std::memcpy(&value, &bits, sizeof(T));
        return value;
    }

    float get_float() {
        const auto bits = get<std::uint32_t>();
        float value;
        std::memcpy(&value, &bits, sizeof value);
        return value;
    }

    void need(std::uint64_t count) const {
        if (bytes_.size() - pos_ < count) {
            throw FormatError(source_ + ": truncated GIDE file");
        }
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    const std::string& bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

bool ids_are_row_indices(const EmbeddingDataset& d) {
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        if (d.samples[i].id != std::to_string(i)) {
            return false;
        }
    }
    return true;
}

void write_sidecar(const EmbeddingDataset& d, const std::filesystem::path& path,
                   bool include_ids) {
    const auto sidecar = names_sidecar_path(path);
    json doc = json::object();
    if (!d.label_names.empty()) {
        json names = json::object();
        for (const auto& [id, name] : d.label_names) {
            names[std::to_string(id)] = name;
        }
        doc["label_names"] = std::move(names);
    }
    if (!d.domain_names.empty()) {
        json names = json::object();
        for (const auto& [id, name] : d.domain_names) {
            names[std::to_string(id)] = name;
        }
        doc["domain_names"] = std::move(names);
    }
    if (include_ids) {
        json ids = json::array();
        for (const auto& s : d.samples) {
            ids.push_back(s.id);
        }
        doc["ids"] = std::move(ids);
    }
    std::error_code ec;
    if (doc.empty()) {
        std::filesystem::remove(sidecar, ec);
        return;
    }
    write_file(sidecar, doc.dump(2) + "\n");
}

void read_sidecar(EmbeddingDataset& d, const std::filesystem::path& path, bool apply_ids) {
    const auto sidecar = names_sidecar_path(path);
    if (!std::filesystem::exists(sidecar)) {
        return;
    }
    json doc;
    try {
        doc = json::parse(read_file(sidecar));
    } catch (const json::exception& e) {
        throw FormatError(sidecar.string() + ": " + e.what());
    }
    if (doc.contains("label_names")) {
        for (const auto& [key, value] : doc["label_names"].items()) {
            d.label_names[std::stoll(key)] = value.get<std::string>();
        }
    }
    if (doc.contains("domain_names")) {
        for (const auto& [key, value] : doc["domain_names"].items()) {
            d.domain_names[static_cast<std::uint32_t>(std::stoul(key))] = value.get<std::string>();
        }
    }
    if (apply_ids && doc.contains("ids")) {
        const auto& ids = doc["ids"];
        if (ids.size() != d.samples.size()) {
            throw FormatError(sidecar.string() + ": id count does not match sample count");
        }
        for (std::size_t i = 0; i < ids.size(); ++i) {
            d.samples[i].id = ids[i].get<std::string>();
        }
    }
}

std::string encode_binary(const EmbeddingDataset& d) {
    const bool labels = d.has_labels();
    const bool domains = d.has_domains();
    std::string out;
    out.reserve(binary_file_size(d.samples.size(), d.dim, labels, domains));
    out.append(kMagic.data(), kMagic.size());
    put_le(out, kVersion);
    put_le(out, static_cast<std::uint64_t>(d.samples.size()));
    put_le(out, static_cast<std::uint64_t>(d.dim));
    put_le(out, (labels ? kFlagLabels : 0u) | (domains ? kFlagDomains : 0u));
    for (const auto& s : d.samples) {
        for (float v : s.vector) {
            put_float(out, v);
        }
    }
    if (labels) {
        for (const auto& s : d.samples) {
            put_le(out, s.label.value_or(-1));
        }
    }
    if (domains) {
        for (const auto& s : d.samples) {
            put_le(out, s.domain.value_or(kMissingDomain));
        }
    }
    return out;
}

EmbeddingDataset decode_binary(const std::string& bytes, const std::string& source) {
    ByteReader in(bytes, source);
    in.need(kMagic.size());
    if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
        throw FormatError(source + ": bad magic, expected GIDE");
    }
    for (std::size_t i = 0; i < kMagic.size(); ++i) {
        in.get<std::uint8_t>();
    }
    const auto version = in.get<std::uint32_t>();
    if (version != kVersion) {
        throw FormatError(source + ": unsupported GIDE version " + std::to_string(version));
    }
    const auto n = in.get<std::uint64_t>();
    const auto dim = in.get<std::uint64_t>();
    const auto flags = in.get<std::uint32_t>();
    if ((flags & ~(kFlagLabels | kFlagDomains)) != 0) {
        throw FormatError(source + ": unknown flag bits");
    }
    const bool labels = (flags & kFlagLabels) != 0;
    const bool domains = (flags & kFlagDomains) != 0;
    if (dim == 0 || in.remaining() != binary_file_size(n, dim, labels, domains) - kHeaderBytes) {
        throw FormatError(source + ": payload size does not match header");
    }

    EmbeddingDataset d;
    d.dim = dim;
    d.samples.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        auto& s = d.samples[i];
        s.id = std::to_string(i);
        s.vector.resize(dim);
        for (auto& v : s.vector) {
            v = in.get_float();
        }
    }
    if (labels) {
        for (auto& s : d.samples) {
            const auto label = in.get<std::int64_t>();
            if (label >= 0) {
                s.label = label;
            } else if (label != -1) {
                throw FormatError(source + ": negative label other than -1");
            }
        }
    }
    if (domains) {
        for (auto& s : d.samples) {
            const auto domain = in.get<std::uint32_t>();
            if (domain != kMissingDomain) {
                s.domain = domain;
            }
        }
    }
    return d;
}

std::string encode_jsonl(const EmbeddingDataset& d) {
    std::string out;
    for (const auto& s : d.samples) {
        json row;
        row["id"] = s.id;
        json embedding = json::array();
        for (float v : s.vector) {
            embedding.push_back(v);
        }
        row["embedding"] = std::move(embedding);
        row["label"] = s.label ? json(*s.label) : json(nullptr);
        row["domain"] = s.domain ? json(*s.domain) : json(nullptr);
        out += row.dump();
        out += '\n';
    }
    return out;
}

EmbeddingDataset decode_jsonl(const std::string& text, const std::string& source) {
    EmbeddingDataset d;
    std::istringstream lines(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const std::string where = source + ":" + std::to_string(line_no);
        json row;
        try {
            row = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(where + ": " + e.what());
        }
        if (!row.is_object() || !row.contains("id") || !row.contains("embedding") ||
            !row["embedding"].is_array()) {
            throw FormatError(where + ": expected object with id and embedding");
        }
        SampleRecord s;
        s.id = row["id"].is_string() ? row["id"].get<std::string>() : row["id"].dump();
        for (const auto& v : row["embedding"]) {
            if (!v.is_number()) {
                throw FormatError(where + ": non-numeric embedding component");
            }
            s.vector.push_back(static_cast<float>(v.get<double>()));
        }
        if (row.contains("label") && !row["label"].is_null()) {
            const auto label = row["label"].get<std::int64_t>();
            if (label >= 0) {
                s.label = label;
            }
        }
        if (row.contains("domain") && !row["domain"].is_null()) {
            s.domain = row["domain"].get<std::uint32_t>();
        }
        if (d.samples.empty()) {
            d.dim = s.vector.size();
        } else if (s.vector.size() != d.dim) {
            throw ValidationError(where + ": dimension " + std::to_string(s.vector.size()) +
                                  " does not match " + std::to_string(d.dim));
        }
        d.samples.push_back(std::move(s));
    }
    return d;
}

}  // namespace

bool EmbeddingDataset::has_labels() const {
    return std::any_of(samples.begin(), samples.end(),
                       [](const SampleRecord& s) { return s.label.has_value(); });
}

bool EmbeddingDataset::has_domains() const {
    return std::any_of(samples.begin(), samples.end(),
                       [](const SampleRecord& s) { return s.domain.has_value(); });
}

void EmbeddingDataset::validate() const {
    if (dim == 0 && !samples.empty()) {
        throw ValidationError("dataset dim must be positive");
    }
    std::unordered_set<std::string> seen;
    seen.reserve(samples.size());
    for (const auto& s : samples) {
        if (s.vector.size() != dim) {
            throw ValidationError("sample " + s.id + " has dimension " +
                                  std::to_string(s.vector.size()) + ", expected " +
                                  std::to_string(dim));
        }
        for (float v : s.vector) {
            if (!std::isfinite(v)) {
                throw ValidationError("sample " + s.id + " has a non-finite component");
            }
        }
        if (s.label) {
            if (*s.label < 0) {
                throw ValidationError("sample " + s.id + " has a negative label");
            }
            if (!label_names.empty() &&
                static_cast<std::size_t>(*s.label) >= label_names.size()) {
                throw ValidationError("sample " + s.id + " label outside label_names");
            }
        }
        if (s.domain && *s.domain == kMissingDomain) {
            throw ValidationError("sample " + s.id + " uses the reserved domain id");
        }
        if (!seen.insert(s.id).second) {
            throw ValidationError("duplicate sample id " + s.id);
        }
    }
}

Eigen::MatrixXd EmbeddingDataset::matrix() const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::size_t j = 0; j < dim; ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = samples[i].vector[j];
        }
    }
    return m;
}

DatasetFormat parse_dataset_format(const std::string& name) {
    if (name == "binary" || name == "gide") {
        return DatasetFormat::binary;
    }
    if (name == "jsonl") {
        return DatasetFormat::jsonl;
    }
    throw ValidationError("unknown dataset format: " + name);
}

DatasetFormat format_for_path(const std::filesystem::path& path) {
    return path.extension() == ".jsonl" ? DatasetFormat::jsonl : DatasetFormat::binary;
}

std::filesystem::path names_sidecar_path(const std::filesystem::path& path) {
    return std::filesystem::path(path.string() + ".names.json");
}

std::uint64_t binary_file_size(std::uint64_t n_samples, std::uint64_t dim, bool has_labels,
                               bool has_domains) {
    return kHeaderBytes + n_samples * dim * 4 + (has_labels ? n_samples * 8 : 0) +
           (has_domains ? n_samples * 4 : 0);
}

EmbeddingDataset load_dataset(const std::filesystem::path& path, DatasetFormat format) {
    const std::string bytes = read_file(path);
    EmbeddingDataset d;
    if (format == DatasetFormat::binary) {
        d = decode_binary(bytes, path.string());
        read_sidecar(d, path, true);
    } else {
        d = decode_jsonl(bytes, path.string());
        read_sidecar(d, path, false);
    }
    d.validate();
    return d;
}

void save_dataset(const EmbeddingDataset& dataset, const std::filesystem::path& path,
                  DatasetFormat format) {
    dataset.validate();
    if (format == DatasetFormat::binary) {
        if (dataset.dim == 0) {
            throw ValidationError("binary datasets need a positive dim");
        }
        write_file(path, encode_binary(dataset));
        write_sidecar(dataset, path, !ids_are_row_indices(dataset));
    } else {
        write_file(path, encode_jsonl(dataset));
        write_sidecar(dataset, path, false);
    }
}

std::string file_sha256(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int length = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &length, EVP_sha256(), nullptr) !=
        1) {
        throw IoError("sha256 failed for " + path.string());
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string hex;
    for (unsigned int i = 0; i < length; ++i) {
        hex.push_back(kHex[digest[i] >> 4]);
        hex.push_back(kHex[digest[i] & 0xF]);
    }
    return hex;
}

void SyntheticSpec::validate() const {
    if (num_classes == 0 || samples_per_class == 0 || dim == 0) {
        throw ValidationError("synthetic spec needs positive num_classes, samples_per_class and dim");
    }
    if (!(class_separation > 0.0) || !std::isfinite(class_separation)) {
        throw ValidationError("class_separation must be positive");
    }
    // Zero spread is accepted: every sample then sits on its class mean.
    if (!(within_class_std >= 0.0) || !std::isfinite(within_class_std)) {
        throw ValidationError("within_class_std must be non-negative");
    }
    if (!class_domains.empty() && class_domains.size() != num_classes) {
        throw ValidationError("class_domains must list one domain per class");
    }
}

std::vector<std::uint32_t> contiguous_domains(std::size_t num_classes, std::size_t num_domains) {
    if (num_domains == 0 || num_domains > num_classes) {
        throw ValidationError("num_domains must be in [1, num_classes]");
    }
    std::vector<std::uint32_t> domains(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        domains[c] = static_cast<std::uint32_t>(c * num_domains / num_classes);
    }
    return domains;
}

Eigen::MatrixXd synthetic_class_means(const SyntheticSpec& spec) {
    spec.validate();
    const auto k = static_cast<Eigen::Index>(spec.num_classes);
    const auto d = static_cast<Eigen::Index>(spec.dim);
    std::mt19937_64 rng(derive_seed(spec.seed, 0));
    std::normal_distribution<double> normal(0.0, 1.0);

    Eigen::MatrixXd directions(k, d);
    for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            directions(i, j) = normal(rng);
        }
    }
    if (k <= d) {
        // Orthonormal rows: pairwise distances of the scaled means are exact.
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(directions.transpose());
        Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, k);
        directions = q.transpose();
    } else {
        directions.rowwise().normalize();
    }
    // With zero spread the separation is an absolute distance.
    const double unit = spec.within_class_std > 0.0 ? spec.within_class_std : 1.0;
    const double radius = spec.class_separation * unit / std::sqrt(2.0);
    return directions * radius;
}

EmbeddingDataset generate_synthetic(const SyntheticSpec& spec) {
    const Eigen::MatrixXd means = synthetic_class_means(spec);
    std::mt19937_64 rng(derive_seed(spec.seed, 1));
    std::normal_distribution<double> normal(0.0, 1.0);

    EmbeddingDataset d;
    d.dim = spec.dim;
    d.samples.reserve(spec.num_classes * spec.samples_per_class);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        d.label_names[static_cast<std::int64_t>(c)] = "class_" + std::to_string(c);
        for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
            SampleRecord s;
            s.id = spec.id_prefix + std::to_string(d.samples.size());
            s.vector.resize(spec.dim);
            for (std::size_t j = 0; j < spec.dim; ++j) {
                const double mean = means(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j));
                s.vector[j] = static_cast<float>(mean + spec.within_class_std * normal(rng));
            }
            s.label = static_cast<std::int64_t>(c);
            if (!spec.class_domains.empty()) {
                s.domain = spec.class_domains[c];
            }
            d.samples.push_back(std::move(s));
        }
    }
    std::set<std::uint32_t> domains(spec.class_domains.begin(), spec.class_domains.end());
    for (auto dom : domains) {
        d.domain_names[dom] = "domain_" + std::to_string(dom);
    }
    return d;
}

}  // namespace gid
