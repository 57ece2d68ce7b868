#include <set>

#include "doctest.h"
#include "gid/benchmark.hpp"
#include "gid/common.hpp"
#include "gid/dataset.hpp"
#include "test_util.hpp"

using namespace gid;

namespace {

EmbeddingDataset synth(int classes, int per_class, int domains = 0, std::uint64_t seed = 1,
                       const std::string& prefix = "") {
    SyntheticSpec spec;
    spec.num_classes = static_cast<std::size_t>(classes);
    spec.samples_per_class = static_cast<std::size_t>(per_class);
    spec.dim = 4;
    spec.class_separation = 3.0;
    spec.seed = seed;
    spec.id_prefix = prefix;
    if (domains > 0) spec.class_domains = contiguous_domains(spec.num_classes, static_cast<std::size_t>(domains));
    return generate_synthetic(spec);
}

std::set<std::string> ids_of(const std::vector<GidSample>& part) {
    std::set<std::string> out;
    for (const auto& s : part) out.insert(s.id);
    return out;
}

}  // namespace

TEST_CASE("multi-domain split of 150 classes") {
    const auto data = synth(150, 150, 10);
    SplitConfig cfg;
    cfg.seed = 3;
    auto split = build_split(data, cfg);
    CHECK(split.n_ind_classes == 90);
    CHECK(split.n_ood_classes == 60);
    CHECK(split.ind_train.size() == 10800);
    CHECK(split.ood_train.size() == 7200);
    CHECK(split.ind_val.size() == 90 * 15);
    CHECK(split.ood_val.size() == 60 * 15);
    CHECK(split.peek_test().size() == 150 * 15);
    split.validate();

    // Partitions are disjoint and cover the dataset.
    std::set<std::string> all;
    std::size_t total = 0;
    const std::vector<GidSample>* parts[] = {&split.ind_train, &split.ind_val, &split.ood_train, &split.ood_val, &split.peek_test()};
    for (const auto* part : parts) {
        const auto ids = ids_of(*part);
        total += ids.size();
        all.insert(ids.begin(), ids.end());
    }
    CHECK(total == all.size());
    CHECK(all.size() == data.size());

    // OOD training and validation labels are stripped; gold is kept aside.
    for (const auto& s : split.ood_train) {
        CHECK(s.label == -1);
        CHECK(split.hidden_gold.at(s.id) >= 90);
    }
    for (const auto& s : split.ind_train) CHECK(s.label < 90);
    std::set<std::int64_t> test_labels;
    for (const auto& s : split.peek_test()) test_labels.insert(s.label);
    CHECK(test_labels.size() == 150);
}

TEST_CASE("single-domain split of 77 classes rounds the OOD count") {
    auto cfg = SplitConfig{};
    cfg.mode = SplitMode::single_domain;
    const auto split = build_split(synth(77, 20), cfg);
    CHECK(split.n_ind_classes == 46);
    CHECK(split.n_ood_classes == 31);
    CHECK_THROWS_AS(build_split(synth(10, 20, 2), cfg), ConfigError);
}

TEST_CASE("cross-domain split keeps whole domains out") {
    SplitConfig cfg;
    cfg.mode = SplitMode::cross_domain;
    cfg.ood_ratio = 0.4;
    const auto data = synth(10, 20, 5);
    const auto split = build_split(data, cfg);
    // Two of five domains, two classes each.
    CHECK(split.n_ood_classes == 4);
    std::map<std::string, std::uint32_t> domain_of;
    for (const auto& s : data.samples) domain_of[s.id] = *s.domain;
    std::set<std::uint32_t> ind_domains, ood_domains;
    for (const auto& s : split.ind_train) ind_domains.insert(domain_of[s.id]);
    for (const auto& s : split.ood_train) ood_domains.insert(domain_of[s.id]);
    CHECK(ood_domains.size() == 2);
    for (auto d : ood_domains) CHECK(ind_domains.count(d) == 0);
    CHECK_THROWS_AS(build_split(synth(10, 20), cfg), ConfigError);
}

TEST_CASE("split is deterministic per seed and respects the IND cap") {
    const auto data = synth(10, 30);
    SplitConfig cfg;
    cfg.seed = 5;
    const auto a = build_split(data, cfg);
    const auto b = build_split(data, cfg);
    CHECK(split_to_manifest(a) == split_to_manifest(b));
    cfg.seed = 6;
    CHECK_FALSE(split_to_manifest(build_split(data, cfg)) == split_to_manifest(a));
    cfg.ind_samples_per_class = 7;
    CHECK(build_split(data, cfg).ind_train.size() == 6 * 7);
}

TEST_CASE("bad split configurations") {
    const auto data = synth(5, 10);
    SplitConfig cfg;
    cfg.ood_ratio = 0.05;  // rounds to zero OOD classes
    CHECK_THROWS_AS(build_split(data, cfg), ConfigError);
    cfg.ood_ratio = 0.95;
    CHECK_THROWS_AS(build_split(data, cfg), ConfigError);
    cfg.ood_ratio = 0.4;
    cfg.val_fraction = 0.6;
    cfg.test_fraction = 0.6;
    CHECK_THROWS(build_split(data, cfg));
}

TEST_CASE("test partition reads are counted and audited") {
    auto split = build_split(synth(5, 20), SplitConfig{});
    int hook_calls = 0;
    split.set_test_audit([&] { ++hook_calls; });
    CHECK(split.test_reads() == 0);
    (void)split.peek_test();
    CHECK(split.test_reads() == 0);
    (void)split.test();
    (void)split.test();
    CHECK(split.test_reads() == 2);
    CHECK(hook_calls == 2);
}

TEST_CASE("manifest round trip and hash check") {
    TempDir tmp;
    const auto data = synth(10, 20, 0, 2);
    save_dataset(data, tmp / "data.gide");
    auto split = build_split(data, SplitConfig{});
    split.dataset = {(tmp / "data.gide").string(), file_sha256(tmp / "data.gide")};
    save_manifest(split, tmp / "split.json");
    const auto back = load_manifest(tmp / "split.json");
    CHECK(split_to_manifest(back) == split_to_manifest(split));
    REQUIRE(back.ood_train.size() == split.ood_train.size());
    for (std::size_t i = 0; i < back.ood_train.size(); ++i) {
        CHECK(back.ood_train[i].vector == split.ood_train[i].vector);
        CHECK(back.ood_train[i].label == -1);
    }
    CHECK(back.hidden_gold == split.hidden_gold);
    CHECK(back.peek_test().size() == split.peek_test().size());

    // A different file under the same path no longer matches the hash.
    save_dataset(synth(10, 20, 0, 3), tmp / "data.gide");
    CHECK_THROWS_AS(load_manifest(tmp / "split.json"), DataError);
}

TEST_CASE("imbalance counts by hand") {
    // n_min = 12 / 4 = 3; 3 * 4^(1/3) = 4.76; 3 * 4^(2/3) = 7.56.
    CHECK(imbalance_count(3.0, 4.0, 1, 3) == 3);
    CHECK(imbalance_count(3.0, 4.0, 2, 3) == 4);
    CHECK(imbalance_count(3.0, 4.0, 3, 3) == 7);
    CHECK(imbalance_count(120.0, 1.0, 7, 60) == 120);
}

TEST_CASE("apply_imbalance trims OOD classes in original class order") {
    const auto data = synth(10, 100);
    SplitConfig cfg;
    cfg.seed = 4;
    const auto split = build_split(data, cfg);
    const auto out = apply_imbalance(split, {4.0}, 9);
    out.validate();
    std::map<std::int64_t, std::size_t> counts;
    for (auto g : out.ood_train_gold()) ++counts[g];
    // 80 per class before; n_min = 20 and M = 4.
    const std::vector<std::size_t> expected{20, 28, 40, 56};
    std::size_t j = 0;
    for (const auto& [pos, n] : counts) CHECK(n == expected[j++]);
    CHECK(out.ind_train.size() == split.ind_train.size());
    CHECK(ids_of(out.peek_test()) == ids_of(split.peek_test()));
    CHECK_THROWS_AS(apply_imbalance(split, {0.5}, 9), ConfigError);
}

TEST_CASE("noise counts round halves away from zero") {
    CHECK(noise_count(0.05, 7200) == 360);
    CHECK(noise_count(0.25, 2) == 1);
    CHECK(noise_count(0.25, 6) == 2);
    CHECK(noise_count(0.0, 100) == 0);
}

TEST_CASE("apply_noise appends pool samples and records them") {
    const auto data = synth(10, 20);
    const auto split = build_split(data, SplitConfig{});
    NoiseConfig cfg;
    cfg.kind = NoiseKind::ood_noise;
    cfg.ratio = 0.5;
    cfg.pool = synth(3, 30, 0, 8, "noise_");
    cfg.pool_ref = {"pool.gide", "00"};
    const auto out = apply_noise(split, cfg, 1);
    CHECK(out.ood_train.size() == split.ood_train.size() + 32);
    REQUIRE(out.noise.size() == 1);
    CHECK(out.noise[0].ids.size() == 32);
    for (auto g : out.noise[0].gold) CHECK(g == -1);
    const auto gold = out.ood_train_gold();
    CHECK(std::count(gold.begin(), gold.end(), -1) == 32);

    cfg.ratio = 10.0;
    CHECK_THROWS_AS(apply_noise(split, cfg, 1), DataError);
    cfg.ratio = 0.1;
    cfg.pool = data;  // ids collide with the split
    CHECK_THROWS_AS(apply_noise(split, cfg, 1), DataError);
}
