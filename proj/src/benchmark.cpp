#include "gid/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "gid/common.hpp"

namespace gid {
namespace {

using nlohmann::ordered_json;

GidSample to_gid_sample(const SampleRecord& record, std::int64_t label) {
    return GidSample{record.id, record.vector, label};
}

template <typename T>
void shuffle_with(std::vector<T>& values, std::mt19937_64& rng) {
    std::shuffle(values.begin(), values.end(), rng);
}

ordered_json config_json(const SplitConfig& c) {
    ordered_json j;
    j["mode"] = to_string(c.mode);
    j["ood_ratio"] = c.ood_ratio;
    j["val_fraction"] = c.val_fraction;
    j["test_fraction"] = c.test_fraction;
    j["seed"] = c.seed;
    j["ind_samples_per_class"] =
        c.ind_samples_per_class ? ordered_json(*c.ind_samples_per_class) : ordered_json(nullptr);
    return j;
}

std::filesystem::path resolve_path(const std::string& recorded, const std::filesystem::path& manifest) {
    const std::filesystem::path p(recorded);
    if (p.is_absolute() || std::filesystem::exists(p)) {
        return p;
    }
    const auto beside = manifest.parent_path() / p;
    return std::filesystem::exists(beside) ? beside : p;
}

EmbeddingDataset load_checked(const DatasetRef& ref, const std::filesystem::path& manifest) {
    const auto path = resolve_path(ref.path, manifest);
    if (!ref.sha256.empty()) {
        const std::string actual = file_sha256(path);
        if (actual != ref.sha256) {
            throw DataError(path.string() + ": content hash differs from the manifest");
        }
    }
    return load_dataset(path);
}

ordered_json ref_json(const DatasetRef& ref) {
    ordered_json j;
    j["path"] = ref.path;
    j["sha256"] = ref.sha256;
    return j;
}

DatasetRef ref_from_json(const ordered_json& j) {
    return DatasetRef{j.at("path").get<std::string>(), j.value("sha256", std::string{})};
}

}  // namespace

Eigen::MatrixXd partition_matrix(const std::vector<GidSample>& samples) {
    const auto dim = samples.empty() ? 0 : samples.front().vector.size();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::size_t j = 0; j < dim; ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = samples[i].vector[j];
        }
    }
    return m;
}

std::vector<std::int64_t> partition_labels(const std::vector<GidSample>& samples) {
    std::vector<std::int64_t> labels;
    labels.reserve(samples.size());
    for (const auto& s : samples) {
        labels.push_back(s.label);
    }
    return labels;
}

SplitMode parse_split_mode(const std::string& name) {
    if (name == "single_domain" || name == "sd") return SplitMode::single_domain;
    if (name == "multi_domain_overlapping" || name == "multi_domain" || name == "md") {
        return SplitMode::multi_domain_overlapping;
    }
    if (name == "cross_domain" || name == "cd") return SplitMode::cross_domain;
    throw ConfigError("unknown split mode: " + name);
}

std::string to_string(SplitMode mode) {
    switch (mode) {
        case SplitMode::single_domain: return "single_domain";
        case SplitMode::multi_domain_overlapping: return "multi_domain_overlapping";
        case SplitMode::cross_domain: return "cross_domain";
    }
    return "unknown";
}

NoiseKind parse_noise_kind(const std::string& name) {
    if (name == "ood_noise" || name == "ood-noise") return NoiseKind::ood_noise;
    if (name == "ind_noise" || name == "ind-noise") return NoiseKind::ind_noise;
    throw ConfigError("unknown noise kind: " + name);
}

std::string to_string(NoiseKind kind) {
    return kind == NoiseKind::ood_noise ? "ood_noise" : "ind_noise";
}

void SplitConfig::validate() const {
    if (!(ood_ratio > 0.0 && ood_ratio < 1.0)) {
        throw ConfigError("ood_ratio must be in (0, 1)");
    }
    if (!(val_fraction > 0.0 && val_fraction < 1.0) || !(test_fraction > 0.0 && test_fraction < 1.0) ||
        val_fraction + test_fraction >= 1.0) {
        throw ConfigError("val_fraction and test_fraction must be in (0, 1) and sum below 1");
    }
    if (ind_samples_per_class && *ind_samples_per_class == 0) {
        throw ConfigError("ind_samples_per_class must be positive");
    }
}

const std::vector<GidSample>& GidSplit::test() const {
    ++test_reads_;
    if (audit_) {
        audit_();
    }
    return test_;
}

std::vector<std::int64_t> GidSplit::ood_train_gold() const {
    std::vector<std::int64_t> gold;
    gold.reserve(ood_train.size());
    for (const auto& s : ood_train) {
        const auto it = hidden_gold.find(s.id);
        gold.push_back(it == hidden_gold.end() ? -1 : it->second);
    }
    return gold;
}

void GidSplit::validate() const {
    if (n_ind_classes == 0 || n_ood_classes == 0) {
        throw ValidationError("split needs at least one IND and one OOD class");
    }
    std::unordered_set<std::string> ids;
    auto check = [&](const std::vector<GidSample>& part, const char* name, bool labeled,
                     std::int64_t lo, std::int64_t hi) {
        for (const auto& s : part) {
            if (!ids.insert(s.id).second) {
                throw ValidationError(std::string("sample ") + s.id + " appears twice (" + name + ")");
            }
            if (labeled && (s.label < lo || s.label >= hi)) {
                throw ValidationError(std::string(name) + " sample " + s.id + " has label out of range");
            }
            if (!labeled && s.label != -1) {
                throw ValidationError(std::string(name) + " sample " + s.id + " carries a label");
            }
        }
    };
    const auto n = static_cast<std::int64_t>(n_ind_classes);
    const auto total = static_cast<std::int64_t>(n_classes());
    check(ind_train, "ind_train", true, 0, n);
    check(ind_val, "ind_val", true, 0, n);
    check(ood_train, "ood_train", false, 0, 0);
    check(ood_val, "ood_val", false, 0, 0);
    check(test_, "test", true, 0, total);
}

GidSplit build_split(const EmbeddingDataset& dataset, const SplitConfig& config) {
    config.validate();
    dataset.validate();
    for (const auto& s : dataset.samples) {
        if (!s.label) {
            throw ConfigError("build_split: sample " + s.id + " is unlabeled");
        }
    }

    std::map<std::int64_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        by_class[*dataset.samples[i].label].push_back(i);
    }
    std::vector<std::int64_t> classes;
    for (const auto& [c, rows] : by_class) {
        classes.push_back(c);
    }

    std::mt19937_64 rng(config.seed);
    std::set<std::int64_t> ood_classes;
    if (config.mode == SplitMode::cross_domain) {
        if (!dataset.has_domains()) {
            throw ConfigError("cross_domain mode needs domain tags");
        }
        std::map<std::uint32_t, std::set<std::int64_t>> domain_classes;
        std::map<std::int64_t, std::uint32_t> class_domain;
        for (const auto& s : dataset.samples) {
            if (!s.domain) {
                throw ConfigError("cross_domain mode: sample " + s.id + " has no domain");
            }
            const auto [it, inserted] = class_domain.emplace(*s.label, *s.domain);
            if (!inserted && it->second != *s.domain) {
                throw ConfigError("cross_domain mode: class " + std::to_string(*s.label) +
                                  " spans several domains");
            }
            domain_classes[*s.domain].insert(*s.label);
        }
        std::vector<std::uint32_t> domains;
        for (const auto& [d, cls] : domain_classes) {
            domains.push_back(d);
        }
        const auto m_domains = static_cast<std::size_t>(
            std::lround(config.ood_ratio * static_cast<double>(domains.size())));
        if (m_domains == 0 || m_domains >= domains.size()) {
            throw ConfigError("ood_ratio " + std::to_string(config.ood_ratio) + " over " +
                              std::to_string(domains.size()) + " domains leaves no IND or no OOD domain");
        }
        shuffle_with(domains, rng);
        for (std::size_t i = 0; i < m_domains; ++i) {
            ood_classes.insert(domain_classes[domains[i]].begin(), domain_classes[domains[i]].end());
        }
    } else {
        if (config.mode == SplitMode::single_domain) {
            std::set<std::uint32_t> domains;
            for (const auto& s : dataset.samples) {
                if (s.domain) domains.insert(*s.domain);
            }
            if (domains.size() > 1) {
                throw ConfigError("single_domain mode on a dataset with " +
                                  std::to_string(domains.size()) + " domains");
            }
        }
        const auto m = static_cast<std::size_t>(
            std::lround(config.ood_ratio * static_cast<double>(classes.size())));
        if (m == 0 || m >= classes.size()) {
            throw ConfigError("ood_ratio " + std::to_string(config.ood_ratio) + " over " +
                              std::to_string(classes.size()) + " classes leaves no IND or no OOD class");
        }
        std::vector<std::int64_t> order = classes;
        shuffle_with(order, rng);
        ood_classes.insert(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
    }

    GidSplit split;
    split.n_ood_classes = ood_classes.size();
    split.n_ind_classes = classes.size() - ood_classes.size();
    std::int64_t next_ind = 0;
    std::int64_t next_ood = static_cast<std::int64_t>(split.n_ind_classes);
    for (auto c : classes) {
        split.class_mapping[c] = ood_classes.count(c) ? next_ood++ : next_ind++;
    }

    std::vector<std::size_t> ind_train, ind_val, ood_train, ood_val, test;
    for (auto c : classes) {
        std::vector<std::size_t> rows = by_class[c];
        shuffle_with(rows, rng);
        const double n = static_cast<double>(rows.size());
        const auto n_test = static_cast<std::size_t>(std::lround(config.test_fraction * n));
        const auto n_val = static_cast<std::size_t>(std::lround(config.val_fraction * n));
        if (n_test + n_val > rows.size()) {
            throw DataError("class " + std::to_string(c) + " is too small to split");
        }
        const bool ood = ood_classes.count(c) > 0;
        auto it = rows.begin();
        test.insert(test.end(), it, it + static_cast<std::ptrdiff_t>(n_test));
        it += static_cast<std::ptrdiff_t>(n_test);
        auto& val = ood ? ood_val : ind_val;
        val.insert(val.end(), it, it + static_cast<std::ptrdiff_t>(n_val));
        it += static_cast<std::ptrdiff_t>(n_val);
        auto end = rows.end();
        if (!ood && config.ind_samples_per_class) {
            end = it + static_cast<std::ptrdiff_t>(
                           std::min<std::size_t>(*config.ind_samples_per_class,
                                                 static_cast<std::size_t>(rows.end() - it)));
        }
        auto& train = ood ? ood_train : ind_train;
        train.insert(train.end(), it, end);
    }

    auto fill = [&](std::vector<std::size_t>& rows, std::vector<GidSample>& out, bool strip) {
        std::sort(rows.begin(), rows.end());
        out.reserve(rows.size());
        for (auto r : rows) {
            const auto& record = dataset.samples[r];
            const auto position = split.class_mapping.at(*record.label);
            out.push_back(to_gid_sample(record, strip ? -1 : position));
            if (strip) {
                split.hidden_gold[record.id] = position;
            }
        }
    };
    fill(ind_train, split.ind_train, false);
    fill(ind_val, split.ind_val, false);
    fill(ood_train, split.ood_train, true);
    fill(ood_val, split.ood_val, true);
    fill(test, split.mutable_test(), false);

    ordered_json step;
    step["op"] = "split";
    step["config"] = config_json(config);
    split.provenance.push_back(std::move(step));
    return split;
}

std::size_t imbalance_count(double n_min, double rho, std::size_t j, std::size_t m) {
    return static_cast<std::size_t>(
        std::floor(n_min * std::pow(rho, static_cast<double>(j - 1) / static_cast<double>(m))));
}

GidSplit apply_imbalance(const GidSplit& split, const ImbalanceConfig& config, std::uint64_t seed) {
    if (!(config.rho >= 1.0) || !std::isfinite(config.rho)) {
        throw ConfigError("imbalance ratio rho must be >= 1");
    }
    const auto gold = split.ood_train_gold();
    const auto first_ood = static_cast<std::int64_t>(split.n_ind_classes);
    // Positions of OOD classes ascend with their original ids, so iterating
    // the map sorts by original class id.
    std::map<std::int64_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i] >= first_ood) {
            by_class[gold[i]].push_back(i);
        }
    }
    std::size_t n_max = 0;
    for (const auto& [c, rows] : by_class) {
        n_max = std::max(n_max, rows.size());
    }
    std::map<std::int64_t, std::int64_t> original_of;
    for (const auto& [orig, pos] : split.class_mapping) {
        original_of[pos] = orig;
    }

    const double n_min = static_cast<double>(n_max) / config.rho;
    const std::size_t m = by_class.size();
    std::mt19937_64 rng(seed);
    std::vector<char> keep(gold.size(), 1);
    std::size_t j = 1;
    for (auto& [c, rows] : by_class) {
        const std::size_t target = imbalance_count(n_min, config.rho, j++, m);
        if (rows.size() < target) {
            throw DataError("imbalance: OOD class " + std::to_string(original_of[c]) + " has " +
                            std::to_string(rows.size()) + " samples, needs " + std::to_string(target));
        }
        shuffle_with(rows, rng);
        for (std::size_t k = target; k < rows.size(); ++k) {
            keep[rows[k]] = 0;
        }
    }

    GidSplit out = split;
    out.ood_train.clear();
    for (std::size_t i = 0; i < split.ood_train.size(); ++i) {
        if (keep[i]) {
            out.ood_train.push_back(split.ood_train[i]);
        } else {
            out.hidden_gold.erase(split.ood_train[i].id);
        }
    }
    ordered_json step;
    step["op"] = "imbalance";
    step["rho"] = config.rho;
    step["seed"] = seed;
    out.provenance.push_back(std::move(step));
    return out;
}

std::size_t noise_count(double ratio, std::size_t ood_train_size) {
    return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(ood_train_size)));
}

GidSplit apply_noise(const GidSplit& split, const NoiseConfig& config, std::uint64_t seed) {
    if (!(config.ratio >= 0.0) || !std::isfinite(config.ratio)) {
        throw ConfigError("noise ratio must be >= 0");
    }
    const std::size_t count = noise_count(config.ratio, split.ood_train.size());
    if (count == 0) {
        return split;
    }
    config.pool.validate();
    if (config.pool.size() < count) {
        throw DataError("noise pool has " + std::to_string(config.pool.size()) + " samples, " +
                        std::to_string(count) + " requested");
    }
    const std::size_t dim = split.ood_train.empty() ? config.pool.dim : split.ood_train.front().vector.size();
    if (config.pool.dim != dim) {
        throw ValidationError("noise pool dimension differs from the split");
    }
    std::unordered_set<std::string> used;
    for (const auto* part : {&split.ind_train, &split.ind_val, &split.ood_train, &split.ood_val}) {
        for (const auto& s : *part) used.insert(s.id);
    }
    for (const auto& s : split.peek_test()) used.insert(s.id);
    for (const auto& s : config.pool.samples) {
        if (used.count(s.id)) {
            throw DataError("noise pool sample " + s.id + " already belongs to the split");
        }
    }

    std::vector<std::size_t> order(config.pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    shuffle_with(order, rng);
    order.resize(count);
    std::sort(order.begin(), order.end());

    GidSplit out = split;
    NoiseBatch batch;
    batch.kind = config.kind;
    batch.pool = config.pool_ref;
    for (auto r : order) {
        const auto& record = config.pool.samples[r];
        std::int64_t gold = -1;
        if (config.kind == NoiseKind::ind_noise) {
            const auto it = record.label ? split.class_mapping.find(*record.label) : split.class_mapping.end();
            if (it == split.class_mapping.end() || it->second >= static_cast<std::int64_t>(split.n_ind_classes)) {
                throw DataError("IND noise sample " + record.id + " is not from an IND class");
            }
            gold = it->second;
        }
        out.ood_train.push_back(to_gid_sample(record, -1));
        out.hidden_gold[record.id] = gold;
        batch.ids.push_back(record.id);
        batch.gold.push_back(gold);
    }
    out.noise.push_back(std::move(batch));
    ordered_json step;
    step["op"] = to_string(config.kind);
    step["ratio"] = config.ratio;
    step["count"] = count;
    step["seed"] = seed;
    out.provenance.push_back(std::move(step));
    return out;
}

nlohmann::ordered_json split_to_manifest(const GidSplit& split) {
    ordered_json j;
    j["format"] = "gid-split";
    j["version"] = 1;
    j["dataset"] = ref_json(split.dataset);
    j["n_ind_classes"] = split.n_ind_classes;
    j["n_ood_classes"] = split.n_ood_classes;
    ordered_json mapping = ordered_json::object();
    for (const auto& [orig, pos] : split.class_mapping) {
        mapping[std::to_string(orig)] = pos;
    }
    j["class_mapping"] = std::move(mapping);
    auto ids = [](const std::vector<GidSample>& part) {
        ordered_json list = ordered_json::array();
        for (const auto& s : part) list.push_back(s.id);
        return list;
    };
    ordered_json partitions;
    partitions["ind_train"] = ids(split.ind_train);
    partitions["ind_val"] = ids(split.ind_val);
    partitions["ood_train"] = ids(split.ood_train);
    partitions["ood_val"] = ids(split.ood_val);
    partitions["test"] = ids(split.peek_test());
    j["partitions"] = std::move(partitions);
    ordered_json noise = ordered_json::array();
    for (const auto& batch : split.noise) {
        ordered_json b;
        b["kind"] = to_string(batch.kind);
        b["pool"] = ref_json(batch.pool);
        b["ids"] = batch.ids;
        b["gold"] = batch.gold;
        noise.push_back(std::move(b));
    }
    j["noise"] = std::move(noise);
    j["provenance"] = split.provenance;
    return j;
}

void save_manifest(const GidSplit& split, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write manifest " + path.string());
    }
    out << split_to_manifest(split).dump(2) << '\n';
}

GidSplit load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest " + path.string());
    }
    ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    if (j.value("format", "") != "gid-split") {
        throw FormatError(path.string() + ": not a gid split manifest");
    }

    GidSplit split;
    split.dataset = ref_from_json(j.at("dataset"));
    split.n_ind_classes = j.at("n_ind_classes").get<std::size_t>();
    split.n_ood_classes = j.at("n_ood_classes").get<std::size_t>();
    for (const auto& [key, value] : j.at("class_mapping").items()) {
        split.class_mapping[std::stoll(key)] = value.get<std::int64_t>();
    }
    split.provenance = j.value("provenance", ordered_json::array());

    const EmbeddingDataset dataset = load_checked(split.dataset, path);
    std::unordered_map<std::string, const SampleRecord*> records;
    for (const auto& s : dataset.samples) {
        records.emplace(s.id, &s);
    }
    std::vector<EmbeddingDataset> pools;
    pools.reserve(j.value("noise", ordered_json::array()).size());
    std::unordered_map<std::string, std::int64_t> noise_gold;
    for (const auto& b : j.value("noise", ordered_json::array())) {
        NoiseBatch batch;
        batch.kind = parse_noise_kind(b.at("kind").get<std::string>());
        batch.pool = ref_from_json(b.at("pool"));
        batch.ids = b.at("ids").get<std::vector<std::string>>();
        batch.gold = b.at("gold").get<std::vector<std::int64_t>>();
        if (batch.pool.path == split.dataset.path) {
            // IND noise drawn from held-out rows of the same dataset.
        } else {
            pools.push_back(load_checked(batch.pool, path));
            for (const auto& s : pools.back().samples) {
                records.emplace(s.id, &s);
            }
        }
        for (std::size_t i = 0; i < batch.ids.size(); ++i) {
            noise_gold[batch.ids[i]] = batch.gold.at(i);
        }
        split.noise.push_back(std::move(batch));
    }

    auto part = [&](const char* name, std::vector<GidSample>& out, bool strip) {
        for (const auto& id_json : j.at("partitions").at(name)) {
            const auto id = id_json.get<std::string>();
            const auto it = records.find(id);
            if (it == records.end()) {
                throw DataError(path.string() + ": unknown sample id " + id + " in " + name);
            }
            const SampleRecord& record = *it->second;
            std::int64_t position = -1;
            if (const auto ng = noise_gold.find(id); ng != noise_gold.end()) {
                position = ng->second;
            } else if (record.label) {
                position = split.class_mapping.at(*record.label);
            }
            out.push_back(to_gid_sample(record, strip ? -1 : position));
            if (strip) {
                split.hidden_gold[id] = position;
            }
        }
    };
    part("ind_train", split.ind_train, false);
    part("ind_val", split.ind_val, false);
    part("ood_train", split.ood_train, true);
    part("ood_val", split.ood_val, true);
    part("test", split.mutable_test(), false);
    split.validate();
    return split;
}

EmbeddingDataset load_referenced_dataset(const DatasetRef& ref, const std::filesystem::path& manifest) {
    return load_checked(ref, manifest);
}

}  // namespace gid
