#include <sstream>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "gid/benchmark.hpp"
#include "gid/cli.hpp"
#include "gid/dataset.hpp"
#include "gid/neural.hpp"
#include "gid/trainers.hpp"
#include "test_util.hpp"

using namespace gid;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result gid_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

nlohmann::json read_json(const std::filesystem::path& p) { return nlohmann::json::parse(slurp(p)); }

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(slurp(p));
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::istringstream l(line);
        std::string cell;
        while (std::getline(l, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

// Small benchmark shared by the train/eval/report cases.
void make_benchmark(const TempDir& tmp) {
    REQUIRE(gid_cli({"synth", "--classes", "5", "--per-class", "60", "--dim", "8", "--sep", "6", "--domains", "2",
                     "--seed", "1", "-o", (tmp / "d.gide").string()})
                .code == 0);
    REQUIRE(gid_cli({"split", "--dataset", (tmp / "d.gide").string(), "--seed", "1", "-o",
                     (tmp / "split.json").string()})
                .code == 0);
}

}  // namespace

TEST_CASE("synth writes the requested samples deterministically") {
    TempDir tmp;
    const std::vector<std::string> args{"synth", "--classes", "10", "--per-class", "120", "--dim", "32", "--sep", "6",
                                        "--seed", "1", "-o"};
    auto a = args, b = args;
    a.push_back((tmp / "a.gide").string());
    b.push_back((tmp / "b.gide").string());
    CHECK(gid_cli(a).code == 0);
    CHECK(gid_cli(b).code == 0);
    CHECK(load_dataset(tmp / "a.gide").size() == 1200);
    CHECK(slurp(tmp / "a.gide") == slurp(tmp / "b.gide"));
    CHECK(slurp(names_sidecar_path(tmp / "a.gide")) == slurp(names_sidecar_path(tmp / "b.gide")));
}

TEST_CASE("usage errors exit with 2, runtime errors with 1") {
    TempDir tmp;
    const auto missing = gid_cli({"synth", "--classes", "3", "--dim", "2", "-o", (tmp / "x.gide").string()});
    CHECK(missing.code == 2);
    CHECK_FALSE(missing.err.empty());
    CHECK(gid_cli({"frobnicate"}).code == 2);
    CHECK(gid_cli({}).code == 2);
    CHECK(gid_cli({"--help"}).code == 0);
    const auto io = gid_cli({"split", "--dataset", (tmp / "none.gide").string(), "-o", (tmp / "s.json").string()});
    CHECK(io.code == 1);
    CHECK(io.err.find("none.gide") != std::string::npos);
}

TEST_CASE("config file values apply and command-line flags win") {
    TempDir tmp;
    std::ofstream(tmp / "gid.conf") << "# desk defaults\nper-class = 7\ndim=3\nclasses = 2\nseed=4\n";
    CHECK(gid_cli({"--config", (tmp / "gid.conf").string(), "synth", "--classes", "3", "-o",
                   (tmp / "c.gide").string()})
              .code == 0);
    const auto d = load_dataset(tmp / "c.gide");
    CHECK(d.size() == 21);
    CHECK(d.dim == 3);

    std::ofstream(tmp / "typo.conf") << "per_clas = 7\n";
    CHECK(gid_cli({"--config", (tmp / "typo.conf").string(), "synth", "--classes", "3", "--per-class", "2",
                   "--dim", "2", "-o", (tmp / "t.gide").string()})
              .code == 2);
}

TEST_CASE("split and variants through the command line") {
    TempDir tmp;
    REQUIRE(gid_cli({"synth", "--classes", "150", "--per-class", "150", "--dim", "4", "--domains", "10", "--seed",
                     "2", "-o", (tmp / "big.gide").string()})
                .code == 0);
    const auto r = gid_cli({"split", "--dataset", (tmp / "big.gide").string(), "--mode", "md", "--ood-ratio", "0.4",
                            "--seed", "3", "-o", (tmp / "md.json").string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("N=90 M=60") != std::string::npos);
    const auto m = read_json(tmp / "md.json");
    CHECK(m["n_ind_classes"] == 90);
    CHECK(m["n_ood_classes"] == 60);
    CHECK(m["partitions"]["ood_train"].size() == 7200);

    REQUIRE(gid_cli({"variant", "-m", (tmp / "md.json").string(), "--kind", "imbalance", "--rho", "1", "-o",
                     (tmp / "imb.json").string()})
                .code == 0);
    const auto imb = read_json(tmp / "imb.json");
    for (const char* part : {"ind_train", "ind_val", "ood_train", "ood_val", "test"})
        CHECK(imb["partitions"][part].size() == m["partitions"][part].size());

    REQUIRE(gid_cli({"synth", "--classes", "4", "--per-class", "100", "--dim", "4", "--seed", "9", "--id-prefix",
                     "oos_", "-o", (tmp / "pool.gide").string()})
                .code == 0);
    REQUIRE(gid_cli({"variant", "-m", (tmp / "md.json").string(), "--kind", "ood-noise", "--ratio", "0.05", "--pool",
                     (tmp / "pool.gide").string(), "-o", (tmp / "noise.json").string()})
                .code == 0);
    CHECK(read_json(tmp / "noise.json")["partitions"]["ood_train"].size() == 7200 + 360);
    CHECK(load_manifest(tmp / "noise.json").ood_train.size() == 7560);

    CHECK(gid_cli({"variant", "-m", (tmp / "md.json").string(), "--kind", "ood-noise", "--ratio", "0.05", "-o",
                   (tmp / "bad.json").string()})
              .code != 0);
}

TEST_CASE("train writes a report with every metric, eval and report read it back") {
    TempDir tmp;
    make_benchmark(tmp);
    const auto split = (tmp / "split.json").string();
    const auto r = gid_cli({"train", "-m", split, "--method", "e2e", "--epochs", "50", "--seed", "7", "--lr-base",
                            "0.1", "-o", (tmp / "run").string()});
    REQUIRE(r.code == 0);
    const auto report = read_json(tmp / "run" / "report.json");
    for (const char* k : {"ind_acc", "ood_acc", "ood_f1", "all_acc", "all_f1"}) CHECK(report["metrics"].contains(k));
    CHECK(report["method"] == "e2e");
    CHECK_FALSE(report.contains("elapsed_seconds"));
    for (const char* f : {"model.ckpt", "loss_curve.csv", "predictions.csv", "confusion.csv", "aggregate.json"})
        CHECK(std::filesystem::exists(tmp / "run" / f));

    // Gold as predictions scores 100 everywhere.
    const auto preds = read_csv(tmp / "run" / "predictions.csv");
    {
        std::ofstream perfect(tmp / "perfect.csv");
        perfect << "id,gold,predicted\n";
        for (std::size_t i = 1; i < preds.size(); ++i) perfect << preds[i][0] << "," << preds[i][1] << "," << preds[i][1] << "\n";
    }
    REQUIRE(gid_cli({"eval", "--predictions", (tmp / "perfect.csv").string(), "-m", split, "-o",
                     (tmp / "perfect.json").string()})
                .code == 0);
    const auto perfect = read_json(tmp / "perfect.json");
    for (const char* k : {"ind_acc", "ind_f1", "ood_acc", "ood_f1", "all_acc", "all_f1"}) CHECK(perfect[k] == 100.0);

    // The report's projection matches an SVD of the test representations.
    REQUIRE(gid_cli({"report", "--run-dir", (tmp / "run").string(), "-m", split, "--domain-sc", "-o",
                     (tmp / "rep").string()})
                .code == 0);
    const auto rows = read_csv(tmp / "rep" / "projection_seed_7.csv");
    const GidSplit s = load_manifest(split);
    const auto x = partition_matrix(s.peek_test());
    REQUIRE(rows.size() == static_cast<std::size_t>(x.rows()) + 1);
    const auto model = load_checkpoint(tmp / "run" / "model.ckpt").first;
    const Eigen::MatrixXd reps = representations(model, x);
    const Eigen::MatrixXd centred = reps.rowwise() - reps.colwise().mean();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinU);
    const auto gold = partition_labels(s.peek_test());
    const auto predicted = predict(model, x);
    for (int c = 0; c < 2; ++c) {
        const Eigen::VectorXd ref = svd.matrixU().col(c) * svd.singularValues()(c);
        Eigen::VectorXd got(x.rows());
        for (Eigen::Index i = 0; i < x.rows(); ++i) got(i) = std::stod(rows[static_cast<std::size_t>(i) + 1][static_cast<std::size_t>(c)]);
        const double sign = ref.dot(got) >= 0 ? 1.0 : -1.0;
        CHECK((got - sign * ref).cwiseAbs().maxCoeff() < 1e-4);
    }
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        CHECK(std::stoll(rows[static_cast<std::size_t>(i) + 1][2]) == gold[static_cast<std::size_t>(i)]);
        CHECK(std::stoll(rows[static_cast<std::size_t>(i) + 1][3]) == predicted[static_cast<std::size_t>(i)]);
    }
    CHECK(std::filesystem::exists(tmp / "rep" / "domain_sc_seed_7.csv"));
    CHECK(std::filesystem::exists(tmp / "rep" / "summary.json"));
}

TEST_CASE("multi-seed training aggregates mean and std, parallel gives the same files") {
    TempDir tmp;
    make_benchmark(tmp);
    const std::vector<std::string> base{"train", "-m", (tmp / "split.json").string(), "--method", "kmeans_pipeline",
                                        "--epochs", "5", "--seeds", "1,2,3", "-o"};
    auto seq = base, par = base;
    seq.push_back((tmp / "seq").string());
    par.push_back((tmp / "par").string());
    par.push_back("--parallel");
    const auto r = gid_cli(seq);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("+-") != std::string::npos);
    const auto agg = read_json(tmp / "seq" / "aggregate.json");
    for (const char* k : {"ind_acc", "ood_acc", "ood_f1", "all_acc", "all_f1"}) {
        CHECK(agg["aggregate"][k].contains("mean"));
        CHECK(agg["aggregate"][k].contains("std"));
        CHECK(agg["aggregate"][k]["values"].size() == 3);
    }
    REQUIRE(gid_cli(par).code == 0);
    CHECK(slurp(tmp / "seq" / "aggregate.json") == slurp(tmp / "par" / "aggregate.json"));
    CHECK(slurp(tmp / "seq" / "seed_2" / "model.ckpt") == slurp(tmp / "par" / "seed_2" / "model.ckpt"));
    CHECK(gid_cli({"train", "-m", (tmp / "split.json").string(), "--seeds", "1,x", "-o", (tmp / "bad").string()}).code == 2);
}

TEST_CASE("estimate-k on exact balanced clusters") {
    TempDir tmp;
    REQUIRE(gid_cli({"synth", "--classes", "10", "--per-class", "20", "--dim", "12", "--std", "0", "-o",
                     (tmp / "exact.gide").string()})
                .code == 0);
    const auto r = gid_cli({"estimate-k", "--dataset", (tmp / "exact.gide").string(), "--k-prime", "10"});
    REQUIRE(r.code == 0);
    CHECK(r.out == "10\n");
    CHECK(gid_cli({"estimate-k", "--k-prime", "10"}).code == 2);
}
