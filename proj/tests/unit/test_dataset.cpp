#include <cmath>
#include <fstream>

#include "doctest.h"
#include "gid/common.hpp"
#include "gid/dataset.hpp"
#include "test_util.hpp"

using namespace gid;

namespace {

EmbeddingDataset small_dataset() {
    EmbeddingDataset d;
    d.dim = 3;
    for (int i = 0; i < 5; ++i) {
        SampleRecord s;
        s.id = std::to_string(i);
        s.vector = {float(i), float(-i) * 0.5f, 1.25f};
        s.label = i % 2;
        s.domain = static_cast<std::uint32_t>(i % 3);
        d.samples.push_back(s);
    }
    d.label_names = {{0, "even"}, {1, "odd"}};
    d.domain_names = {{0, "a"}, {1, "b"}, {2, "c"}};
    return d;
}

}  // namespace

TEST_CASE("binary round trip keeps vectors, labels, domains and names") {
    TempDir tmp;
    const auto d = small_dataset();
    save_dataset(d, tmp / "d.gide");
    CHECK(std::filesystem::exists(names_sidecar_path(tmp / "d.gide")));
    CHECK(load_dataset(tmp / "d.gide") == d);
}

TEST_CASE("binary file size follows the header + payload layout") {
    TempDir tmp;
    const auto d = small_dataset();
    save_dataset(d, tmp / "d.gide");
    // 4 magic + 4 version + 8 n + 8 dim + 4 flags, then float32, int64, uint32 columns.
    const std::uint64_t expected = 28 + 5 * 3 * 4 + 5 * 8 + 5 * 4;
    CHECK(std::filesystem::file_size(tmp / "d.gide") == expected);
    CHECK(binary_file_size(5, 3, true, true) == expected);
    CHECK(binary_file_size(5, 3, false, false) == 28 + 60);
    CHECK(binary_file_size(1000, 768, true, false) == 28 + 1000ull * 768 * 4 + 8000);
}

TEST_CASE("unlabeled rows survive the binary format") {
    TempDir tmp;
    auto d = small_dataset();
    d.samples[2].label.reset();
    d.samples[4].domain.reset();
    save_dataset(d, tmp / "d.gide");
    const auto back = load_dataset(tmp / "d.gide");
    CHECK_FALSE(back.samples[2].label.has_value());
    CHECK_FALSE(back.samples[4].domain.has_value());
    CHECK(back == d);
}

TEST_CASE("custom ids are kept through the sidecar") {
    TempDir tmp;
    auto d = small_dataset();
    for (auto& s : d.samples) s.id = "q" + s.id;
    save_dataset(d, tmp / "d.gide");
    CHECK(load_dataset(tmp / "d.gide") == d);
}

TEST_CASE("jsonl round trip") {
    TempDir tmp;
    auto d = small_dataset();
    d.samples[1].label.reset();
    save_dataset(d, tmp / "d.jsonl");
    CHECK(format_for_path(tmp / "d.jsonl") == DatasetFormat::jsonl);
    CHECK(load_dataset(tmp / "d.jsonl") == d);
}

TEST_CASE("corrupt binary files are format errors") {
    TempDir tmp;
    save_dataset(small_dataset(), tmp / "d.gide");
    std::string bytes = slurp(tmp / "d.gide");
    SUBCASE("bad magic") {
        bytes[0] = 'X';
    }
    SUBCASE("truncated payload") {
        bytes.resize(bytes.size() - 3);
    }
    SUBCASE("trailing bytes") {
        bytes += "zz";
    }
    std::ofstream(tmp / "bad.gide", std::ios::binary) << bytes;
    std::filesystem::copy_file(names_sidecar_path(tmp / "d.gide"), names_sidecar_path(tmp / "bad.gide"));
    CHECK_THROWS_AS(load_dataset(tmp / "bad.gide"), FormatError);
}

TEST_CASE("missing file is an IO error") {
    CHECK_THROWS_AS(load_dataset("/nonexistent/x.gide"), IoError);
}

TEST_CASE("validate rejects inconsistent datasets") {
    auto d = small_dataset();
    SUBCASE("dimension mismatch") {
        d.samples[1].vector.push_back(0.0f);
    }
    SUBCASE("non-finite component") {
        d.samples[0].vector[0] = std::nanf("");
    }
    SUBCASE("duplicate id") {
        d.samples[3].id = "0";
    }
    CHECK_THROWS_AS(d.validate(), ValidationError);
}

TEST_CASE("sha256 of a known string") {
    TempDir tmp;
    std::ofstream(tmp / "abc.txt", std::ios::binary) << "abc";
    CHECK(file_sha256(tmp / "abc.txt") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("synthetic generator: counts, class-major order, determinism") {
    SyntheticSpec spec;
    spec.num_classes = 10;
    spec.samples_per_class = 120;
    spec.dim = 32;
    spec.class_separation = 6.0;
    spec.seed = 1;
    const auto a = generate_synthetic(spec);
    CHECK(a.size() == 1200);
    CHECK(a.dim == 32);
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a.samples[i].label.has_value());
        CHECK(*a.samples[i].label == static_cast<std::int64_t>(i / 120));
    }
    CHECK(generate_synthetic(spec) == a);
    spec.seed = 2;
    CHECK_FALSE(generate_synthetic(spec) == a);
}

TEST_CASE("synthetic class means are separated by exactly sep * std") {
    SyntheticSpec spec;
    spec.num_classes = 6;
    spec.samples_per_class = 1;
    spec.dim = 8;
    spec.class_separation = 2.5;
    spec.within_class_std = 1.5;
    spec.seed = 9;
    const auto means = synthetic_class_means(spec);
    for (int i = 0; i < 6; ++i) {
        for (int j = i + 1; j < 6; ++j) {
            CHECK((means.row(i) - means.row(j)).norm() == doctest::Approx(3.75).epsilon(1e-12));
        }
    }
}

TEST_CASE("synthetic sample means converge to the class means") {
    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.samples_per_class = 4000;
    spec.dim = 4;
    spec.class_separation = 4.0;
    spec.within_class_std = 2.0;
    spec.seed = 5;
    const auto d = generate_synthetic(spec);
    const auto means = synthetic_class_means(spec);
    for (int c = 0; c < 3; ++c) {
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(4);
        double sq = 0.0;
        for (int i = 0; i < 4000; ++i) {
            const auto& v = d.samples[static_cast<std::size_t>(c * 4000 + i)].vector;
            for (int j = 0; j < 4; ++j) {
                sum(j) += v[static_cast<std::size_t>(j)];
                sq += std::pow(v[static_cast<std::size_t>(j)] - means(c, j), 2);
            }
        }
        // Standard error of each coordinate mean is 2/sqrt(4000) ~ 0.032.
        CHECK((sum / 4000.0 - means.row(c).transpose()).cwiseAbs().maxCoeff() < 0.15);
        CHECK(std::sqrt(sq / (4000.0 * 4)) == doctest::Approx(2.0).epsilon(0.05));
    }
}

TEST_CASE("zero within-class std puts every sample on its class mean") {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.samples_per_class = 3;
    spec.dim = 2;
    spec.class_separation = 1.0;
    spec.within_class_std = 0.0;
    const auto d = generate_synthetic(spec);
    const auto means = synthetic_class_means(spec);
    for (const auto& s : d.samples) {
        for (std::size_t j = 0; j < 2; ++j) CHECK(s.vector[j] == static_cast<float>(means(*s.label, static_cast<Eigen::Index>(j))));
    }
    // The separation becomes an absolute distance.
    CHECK((means.row(0) - means.row(1)).norm() == doctest::Approx(1.0));
}

TEST_CASE("synthetic spec validation") {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.samples_per_class = 3;
    spec.dim = 2;
    SUBCASE("no classes") { spec.num_classes = 0; }
    SUBCASE("negative std") { spec.within_class_std = -1.0; }
    SUBCASE("domain list of wrong length") { spec.class_domains = {0}; }
    CHECK_THROWS_AS(generate_synthetic(spec), ValidationError);
}

TEST_CASE("contiguous domains and id prefix") {
    CHECK(contiguous_domains(10, 3) == std::vector<std::uint32_t>{0, 0, 0, 0, 1, 1, 1, 2, 2, 2});
    SyntheticSpec spec;
    spec.num_classes = 4;
    spec.samples_per_class = 2;
    spec.dim = 3;
    spec.class_domains = contiguous_domains(4, 2);
    spec.id_prefix = "oos_";
    const auto d = generate_synthetic(spec);
    CHECK(d.samples[5].id == "oos_5");
    CHECK(d.samples[5].domain == 1u);
    CHECK(d.domain_names.at(1) == "domain_1");
}
