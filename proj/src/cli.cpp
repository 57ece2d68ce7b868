#include "gid/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "gid/benchmark.hpp"
#include "gid/clustering.hpp"
#include "gid/common.hpp"
#include "gid/dataset.hpp"
#include "gid/evaluation.hpp"
#include "gid/neural.hpp"
#include "gid/report.hpp"
#include "gid/trainers.hpp"

namespace fs = std::filesystem;

namespace gid::cli {
namespace {

class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !out.write(text.data(), static_cast<std::streamsize>(text.size()))) {
        throw IoError("cannot write " + path.string());
    }
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
    write_text(path, j.dump(2) + "\n");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        out.push_back(trim(field));
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    for (const auto& f : split_commas(text)) {
        if (f.empty() || f.find_first_not_of("0123456789") != std::string::npos) {
            throw UsageError("--seeds expects comma-separated non-negative integers, got '" + text + "'");
        }
        seeds.push_back(std::stoull(f));
    }
    if (seeds.empty()) {
        throw UsageError("--seeds is empty");
    }
    return seeds;
}

// key=value lines, '#' starts a comment. Keys use option names with '-' or '_'.
std::vector<std::pair<std::string, std::string>> read_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw UsageError("cannot open config file " + path.string());
    }
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw UsageError(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
        }
        std::string key = trim(line.substr(0, eq));
        std::replace(key.begin(), key.end(), '_', '-');
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
            value = value.substr(1, value.size() - 2);
        }
        if (key.empty()) {
            throw UsageError(path.string() + ":" + std::to_string(line_no) + ": empty key");
        }
        entries.emplace_back(key, value);
    }
    return entries;
}

struct SynthArgs {
    std::size_t classes = 0, per_class = 0, dim = 0, domains = 0;
    double sep = 1.0, std = 1.0;
    std::uint64_t seed = 0;
    std::string id_prefix, output, format;
};

struct SplitArgs {
    std::string dataset, output, mode = "md";
    double ood_ratio = 0.4, val_fraction = 0.1, test_fraction = 0.1;
    std::size_t ind_per_class = 0;
    std::uint64_t seed = 0;
};

struct VariantArgs {
    std::string manifest, output, kind, pool;
    double ratio = 0.0, rho = 1.0;
    std::uint64_t seed = 0;
};

struct TrainArgs {
    std::string manifest, out_dir, method = "e2e", seeds;
    TrainConfig config;
    bool parallel = false, record_time = false;
};

struct EvalArgs {
    std::string predictions, manifest, output, confusion;
    std::size_t n_ind = 0, n_ood = 0;
    bool map_all = false;
};

struct EstimateArgs {
    std::string dataset, manifest, checkpoint, partition = "ood_train";
    int k_prime = 0;
    double threshold = 0.0;
    int restarts = 10;
    std::uint64_t seed = 0;
};

struct ReportArgs {
    std::string run_dir, manifest, output;
    bool domain_sc = false;
    std::uint64_t seed = 0;
};

// ---------------------------------------------------------------- synth

void cmd_synth(const SynthArgs& a, std::ostream& out) {
    SyntheticSpec spec;
    spec.num_classes = a.classes;
    spec.samples_per_class = a.per_class;
    spec.dim = a.dim;
    spec.class_separation = a.sep;
    spec.within_class_std = a.std;
    spec.seed = a.seed;
    spec.id_prefix = a.id_prefix;
    if (a.domains > 0) {
        spec.class_domains = contiguous_domains(a.classes, a.domains);
    }
    const EmbeddingDataset data = generate_synthetic(spec);
    const DatasetFormat format = a.format.empty() ? format_for_path(a.output) : parse_dataset_format(a.format);
    if (fs::path(a.output).has_parent_path()) {
        fs::create_directories(fs::path(a.output).parent_path());
    }
    save_dataset(data, a.output, format);
    out << "wrote " << data.size() << " samples (" << a.classes << " classes, dim " << a.dim << ") to "
        << a.output << "\n";
}

// ---------------------------------------------------------------- split

void print_split(const GidSplit& s, std::ostream& out) {
    out << "N=" << s.n_ind_classes << " M=" << s.n_ood_classes << " ind_train=" << s.ind_train.size()
        << " ind_val=" << s.ind_val.size() << " ood_train=" << s.ood_train.size()
        << " ood_val=" << s.ood_val.size() << " test=" << s.peek_test().size() << "\n";
}

void cmd_split(const SplitArgs& a, std::ostream& out) {
    SplitConfig config;
    config.mode = parse_split_mode(a.mode);
    config.ood_ratio = a.ood_ratio;
    config.val_fraction = a.val_fraction;
    config.test_fraction = a.test_fraction;
    config.seed = a.seed;
    if (a.ind_per_class > 0) {
        config.ind_samples_per_class = a.ind_per_class;
    }
    const EmbeddingDataset data = load_dataset(a.dataset);
    GidSplit split = build_split(data, config);
    split.dataset = DatasetRef{a.dataset, file_sha256(a.dataset)};
    save_manifest(split, a.output);
    print_split(split, out);
}

// ---------------------------------------------------------------- variant

void cmd_variant(const VariantArgs& a, std::ostream& out) {
    const GidSplit split = load_manifest(a.manifest);
    GidSplit result;
    if (a.kind == "imbalance") {
        result = apply_imbalance(split, ImbalanceConfig{a.rho}, a.seed);
    } else {
        NoiseConfig config;
        config.kind = parse_noise_kind(a.kind);
        config.ratio = a.ratio;
        if (!a.pool.empty()) {
            config.pool = load_dataset(a.pool);
            config.pool_ref = DatasetRef{a.pool, file_sha256(a.pool)};
        } else if (config.kind == NoiseKind::ind_noise) {
            // Held-out rows of IND classes from the split's own dataset.
            const EmbeddingDataset data = load_referenced_dataset(split.dataset, a.manifest);
            std::set<std::string> used;
            for (const auto* part : {&split.ind_train, &split.ind_val, &split.ood_train, &split.ood_val}) {
                for (const auto& s : *part) used.insert(s.id);
            }
            for (const auto& s : split.peek_test()) used.insert(s.id);
            config.pool.dim = data.dim;
            config.pool.label_names = data.label_names;
            for (const auto& s : data.samples) {
                if (used.count(s.id) || !s.label) continue;
                const auto it = split.class_mapping.find(*s.label);
                if (it != split.class_mapping.end() &&
                    it->second < static_cast<std::int64_t>(split.n_ind_classes)) {
                    SampleRecord r = s;
                    r.domain.reset();
                    config.pool.samples.push_back(std::move(r));
                }
            }
            config.pool_ref = split.dataset;
        } else {
            throw ConfigError("variant --kind ood-noise needs --pool");
        }
        result = apply_noise(split, config, a.seed);
    }
    save_manifest(result, a.output);
    print_split(result, out);
}

// ---------------------------------------------------------------- train

std::string predictions_csv(const RunReport& r) {
    std::ostringstream s;
    s << "id,gold,predicted\n";
    for (std::size_t i = 0; i < r.test_ids.size(); ++i) {
        s << r.test_ids[i] << ',' << r.test_gold[i] << ',' << r.test_predictions[i] << '\n';
    }
    return s.str();
}

void write_run(const RunReport& r, const TrainConfig& config, const fs::path& dir, bool record_time) {
    fs::create_directories(dir);
    save_checkpoint(r.model, CheckpointInfo{r.seed, r.best_epoch}, dir / "model.ckpt");
    RunReport copy_ref = r;
    copy_ref.checkpoint_path = "model.ckpt";
    nlohmann::ordered_json j = run_report_to_json(copy_ref, record_time);
    j["config"] = train_config_to_json(config);
    write_json(dir / "report.json", j);
    write_text(dir / "loss_curve.csv", loss_curve_csv(r));
    write_text(dir / "predictions.csv", predictions_csv(r));
    write_text(dir / "confusion.csv", confusion_to_csv(r.metrics));
}

void cmd_train(TrainArgs a, std::ostream& out) {
    a.config.method = parse_method(a.method);
    std::vector<std::uint64_t> seeds{a.config.seed};
    if (!a.seeds.empty()) {
        seeds = parse_seed_list(a.seeds);
    }
    a.config.validate();
    const GidSplit split = load_manifest(a.manifest);
    const fs::path dir(a.out_dir);
    fs::create_directories(dir);

    std::vector<RunReport> reports(seeds.size());
    std::vector<TrainConfig> configs(seeds.size(), a.config);
    std::vector<std::exception_ptr> errors(seeds.size());
    auto one = [&](std::size_t i) {
        try {
            configs[i].seed = seeds[i];
            GidSplit own = split;  // test-read counters are per run
            reports[i] = run_method(own, configs[i]);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    if (a.parallel && seeds.size() > 1) {
        std::vector<std::thread> workers;
        for (std::size_t i = 0; i < seeds.size(); ++i) workers.emplace_back(one, i);
        for (auto& w : workers) w.join();
    } else {
        for (std::size_t i = 0; i < seeds.size(); ++i) one(i);
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    nlohmann::ordered_json agg;
    agg["method"] = to_string(a.config.method);
    agg["manifest"] = a.manifest;
    agg["seeds"] = seeds;
    nlohmann::ordered_json runs = nlohmann::ordered_json::array();
    std::vector<MetricsReport> metrics;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const std::string sub = seeds.size() == 1 ? "." : "seed_" + std::to_string(seeds[i]);
        write_run(reports[i], configs[i], dir / sub, a.record_time);
        runs.push_back({{"seed", seeds[i]}, {"dir", sub}});
        metrics.push_back(reports[i].metrics);
        out << "seed " << seeds[i] << ": IND ACC " << reports[i].metrics.ind_acc << " OOD ACC "
            << reports[i].metrics.ood_acc << " OOD F1 " << reports[i].metrics.ood_f1 << " ALL ACC "
            << reports[i].metrics.all_acc << " ALL F1 " << reports[i].metrics.all_f1 << "\n";
    }
    agg["runs"] = std::move(runs);
    agg["aggregate"] = aggregate_metrics(metrics);
    agg["config"] = train_config_to_json(a.config);
    write_json(dir / "aggregate.json", agg);
    write_text(dir / "metrics.csv", metrics_csv(seeds, metrics));
    if (seeds.size() > 1) {
        for (const char* k : {"ind_acc", "ood_acc", "ood_f1", "all_acc", "all_f1"}) {
            out << k << " " << agg["aggregate"][k]["mean"].get<double>() << " +- "
                << agg["aggregate"][k]["std"].get<double>() << "\n";
        }
    }
}

// ---------------------------------------------------------------- eval

struct PredictionTable {
    std::vector<std::string> ids;
    std::vector<std::int64_t> gold, predicted;
};

PredictionTable read_predictions(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::string line;
    if (!std::getline(in, line)) {
        throw FormatError(path.string() + ": empty predictions file");
    }
    const auto header = split_commas(trim(line));
    const auto col = [&](const std::string& name) -> long {
        const auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : static_cast<long>(it - header.begin());
    };
    const long id_col = col("id"), gold_col = col("gold"), pred_col = col("predicted");
    if (gold_col < 0 || pred_col < 0) {
        throw FormatError(path.string() + ": header needs 'gold' and 'predicted' columns");
    }
    PredictionTable t;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        const auto f = split_commas(line);
        if (f.size() != header.size()) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": wrong column count");
        }
        try {
            t.gold.push_back(std::stoll(f[static_cast<std::size_t>(gold_col)]));
            t.predicted.push_back(std::stoll(f[static_cast<std::size_t>(pred_col)]));
        } catch (const std::logic_error&) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": non-integer class id");
        }
        t.ids.push_back(id_col >= 0 ? f[static_cast<std::size_t>(id_col)] : std::to_string(t.ids.size()));
    }
    return t;
}

void cmd_eval(const EvalArgs& a, std::ostream& out) {
    std::size_t n_ind = a.n_ind, n_ood = a.n_ood;
    if (!a.manifest.empty()) {
        std::ifstream in(a.manifest);
        if (!in) throw IoError("cannot open manifest " + a.manifest);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(a.manifest + ": " + e.what());
        }
        n_ind = j.at("n_ind_classes").get<std::size_t>();
        n_ood = j.at("n_ood_classes").get<std::size_t>();
    }
    if (n_ind == 0 && n_ood == 0) {
        throw UsageError("eval needs --manifest or --n-ind/--n-ood");
    }
    const PredictionTable t = read_predictions(a.predictions);
    EvalOptions options;
    options.map_all_classes = a.map_all;
    const MetricsReport m = evaluate_gid(t.predicted, t.gold, n_ind, n_ood, options);
    const std::string text = metrics_to_json(m).dump(2) + "\n";
    if (a.output.empty()) {
        out << text;
    } else {
        write_text(a.output, text);
    }
    if (!a.confusion.empty()) {
        write_text(a.confusion, confusion_to_csv(m));
    }
}

// ---------------------------------------------------------------- estimate-k

void cmd_estimate_k(const EstimateArgs& a, std::ostream& out) {
    if (a.dataset.empty() == a.manifest.empty()) {
        throw UsageError("estimate-k needs exactly one of --dataset and --manifest");
    }
    Eigen::MatrixXd x;
    if (!a.dataset.empty()) {
        x = load_dataset(a.dataset).matrix();
    } else {
        const GidSplit split = load_manifest(a.manifest);
        if (a.partition == "ood_train") x = partition_matrix(split.ood_train);
        else if (a.partition == "ood_val") x = partition_matrix(split.ood_val);
        else if (a.partition == "ind_train") x = partition_matrix(split.ind_train);
        else if (a.partition == "test") x = partition_matrix(split.test());
        else throw UsageError("unknown --partition " + a.partition);
    }
    if (!a.checkpoint.empty()) {
        x = representations(load_checkpoint(a.checkpoint).first, x);
    }
    KEstimateConfig config;
    config.k_prime = a.k_prime;
    config.threshold = a.threshold;
    KMeansOptions options;
    options.restarts = a.restarts;
    out << estimate_k(x, config, a.seed, options) << "\n";
}

// ---------------------------------------------------------------- report

void cmd_report(const ReportArgs& a, std::ostream& out) {
    const fs::path run_dir(a.run_dir);
    const fs::path dst(a.output);
    fs::create_directories(dst);
    const auto agg = nlohmann::json::parse(read_text(run_dir / "aggregate.json"));
    const GidSplit split = load_manifest(a.manifest);
    const std::vector<GidSample>& test = split.test();
    const Eigen::MatrixXd x_test = partition_matrix(test);
    const auto gold = partition_labels(test);

    std::optional<EmbeddingDataset> data;
    if (a.domain_sc) {
        data = load_referenced_dataset(split.dataset, a.manifest);
        if (!data->has_domains()) {
            throw DataError("--domain-sc needs a dataset with domain tags");
        }
    }

    std::vector<std::uint64_t> seeds;
    std::vector<MetricsReport> metrics;
    for (const auto& run : agg.at("runs")) {
        const auto seed = run.at("seed").get<std::uint64_t>();
        const fs::path dir = run_dir / run.at("dir").get<std::string>();
        const std::string tag = "seed_" + std::to_string(seed);
        const auto [model, info] = load_checkpoint(dir / "model.ckpt");
        const PredictionTable recorded = read_predictions(dir / "predictions.csv");
        EvalOptions options;
        options.map_all_classes = agg.at("method").get<std::string>() == "deepaligned_mix";
        seeds.push_back(seed);
        metrics.push_back(evaluate_gid(recorded.predicted, recorded.gold, split.n_ind_classes,
                                       split.n_ood_classes, options));

        write_text(dst / ("loss_curve_" + tag + ".csv"), read_text(dir / "loss_curve.csv"));
        const Eigen::MatrixXd reps = representations(model, x_test);
        write_text(dst / ("projection_" + tag + ".csv"),
                   projection_csv(pca_2d(reps), gold, predict(model, x_test)));

        if (data) {
            std::map<std::string, std::uint32_t> domain_of;
            for (const auto& s : data->samples) {
                if (s.domain) domain_of[s.id] = *s.domain;
            }
            std::vector<std::int64_t> ood_gold;
            std::vector<std::uint32_t> domains;
            std::vector<std::size_t> rows;
            const auto hidden = split.ood_train_gold();
            for (std::size_t i = 0; i < split.ood_train.size(); ++i) {
                const auto it = domain_of.find(split.ood_train[i].id);
                if (it == domain_of.end() || hidden[i] < 0) continue;
                rows.push_back(i);
                ood_gold.push_back(hidden[i]);
                domains.push_back(it->second);
            }
            const Eigen::MatrixXd x_ood = partition_matrix(split.ood_train);
            Eigen::MatrixXd selected(static_cast<Eigen::Index>(rows.size()), x_ood.cols());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                selected.row(static_cast<Eigen::Index>(i)) = x_ood.row(static_cast<Eigen::Index>(rows[i]));
            }
            std::vector<std::string> names;
            for (const auto& [id, name] : data->domain_names) {
                if (names.size() <= id) names.resize(id + 1);
                names[id] = name;
            }
            write_text(dst / ("domain_sc_" + tag + ".csv"),
                       domain_silhouettes_csv(domain_silhouettes(representations(model, selected), ood_gold,
                                                                 domains, names, a.seed)));
        }
    }
    write_text(dst / "metrics.csv", metrics_csv(seeds, metrics));
    nlohmann::ordered_json summary;
    summary["method"] = agg.at("method");
    summary["seeds"] = seeds;
    summary["aggregate"] = aggregate_metrics(metrics);
    write_json(dst / "summary.json", summary);
    out << "wrote report for " << seeds.size() << " run(s) to " << dst.string() << "\n";
}

// ---------------------------------------------------------------- wiring

struct Commands {
    SynthArgs synth;
    SplitArgs split;
    VariantArgs variant;
    TrainArgs train;
    EvalArgs eval;
    EstimateArgs estimate;
    ReportArgs report;
};

void build_app(CLI::App& app, Commands& c) {
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.add_option("--config", "key=value config file (default ./gid.conf when present)");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled embedding dataset");
    synth->add_option("--classes", c.synth.classes, "number of classes")->required();
    synth->add_option("--per-class", c.synth.per_class, "samples per class")->required();
    synth->add_option("--dim", c.synth.dim, "embedding dimension")->required();
    synth->add_option("--sep", c.synth.sep, "distance between class means in units of --std")->capture_default_str();
    synth->add_option("--std", c.synth.std, "within-class standard deviation")->capture_default_str();
    synth->add_option("--domains", c.synth.domains, "number of contiguous domains (0 = none)");
    synth->add_option("--seed", c.synth.seed);
    synth->add_option("--id-prefix", c.synth.id_prefix);
    synth->add_option("--format", c.synth.format, "binary or jsonl (default from extension)");
    synth->add_option("-o,--output", c.synth.output)->required();

    auto* split = app.add_subcommand("split", "Build a GID benchmark split manifest from a dataset");
    split->add_option("--dataset", c.split.dataset)->required();
    split->add_option("--mode", c.split.mode, "sd, md or cd")->capture_default_str();
    split->add_option("--ood-ratio", c.split.ood_ratio)->capture_default_str();
    split->add_option("--val-fraction", c.split.val_fraction)->capture_default_str();
    split->add_option("--test-fraction", c.split.test_fraction)->capture_default_str();
    split->add_option("--ind-per-class", c.split.ind_per_class, "cap on IND train samples per class");
    split->add_option("--seed", c.split.seed, "seed of the class and sample shuffles");
    split->add_option("-o,--output", c.split.output)->required();

    auto* variant = app.add_subcommand("variant", "Derive a noise or imbalance variant of a split");
    variant->add_option("-m,--manifest", c.variant.manifest)->required();
    variant->add_option("--kind", c.variant.kind)
        ->required()
        ->check(CLI::IsMember({"ood-noise", "ind-noise", "imbalance"}));
    variant->add_option("--ratio", c.variant.ratio, "noise samples as a fraction of ood_train");
    variant->add_option("--rho", c.variant.rho, "imbalance ratio n_max / n_min");
    variant->add_option("--pool", c.variant.pool, "dataset to draw noise samples from");
    variant->add_option("--seed", c.variant.seed);
    variant->add_option("-o,--output", c.variant.output)->required();

    auto& t = c.train.config;
    auto* train = app.add_subcommand("train", "Train a GID method on a split");
    train->add_option("-m,--manifest", c.train.manifest)->required();
    train->add_option("--method", c.train.method, "kmeans_pipeline, deepaligned_pipeline, deepaligned_mix, e2e")
        ->capture_default_str();
    train->add_option("--epochs", t.epochs)->capture_default_str();
    train->add_option("--pretrain-epochs", t.pretrain_epochs, "IND pretraining epochs (default --epochs)");
    train->add_option("--batch-size", t.batch_size)->capture_default_str();
    train->add_option("--lr-base", t.schedule.lr_base)->capture_default_str();
    train->add_option("--lr-min", t.schedule.lr_min)->capture_default_str();
    train->add_option("--warmup", t.schedule.warmup_epochs)->capture_default_str();
    train->add_option("--momentum", t.momentum)->capture_default_str();
    train->add_option("--weight-decay", t.weight_decay)->capture_default_str();
    train->add_option("--dropout", t.dropout_p)->capture_default_str();
    train->add_option("--epsilon", t.epsilon)->capture_default_str();
    train->add_option("--sk-iters", t.sk_iters)->capture_default_str();
    train->add_flag("--hard-pseudo-labels", t.hard_pseudo_labels);
    train->add_flag("--mix-gold-ind", t.mix_gold_ind);
    train->add_option("--repr-dim", t.repr_dim, "representation width (0 = input dim)");
    train->add_option("--encoder-depth", t.encoder_depth)->capture_default_str();
    train->add_option("--head-depth", t.head_depth)->capture_default_str();
    train->add_option("--patience", t.early_stop_patience, "early-stop patience on validation SC (0 = off)")
        ->capture_default_str();
    train->add_option("--kmeans-restarts", t.kmeans.restarts)->capture_default_str();
    train->add_option("--seed", t.seed)->capture_default_str();
    train->add_option("--seeds", c.train.seeds, "comma-separated seeds; reports mean and std");
    train->add_flag("--parallel", c.train.parallel, "run --seeds concurrently");
    train->add_flag("--record-time", c.train.record_time, "add wall-clock time to report.json");
    train->add_option("-o,--out-dir", c.train.out_dir)->required();

    auto* eval = app.add_subcommand("eval", "Score a predictions CSV (columns gold, predicted)");
    eval->add_option("--predictions", c.eval.predictions)->required();
    eval->add_option("-m,--manifest", c.eval.manifest, "take N and M from this manifest");
    eval->add_option("--n-ind", c.eval.n_ind);
    eval->add_option("--n-ood", c.eval.n_ood);
    eval->add_flag("--map-all", c.eval.map_all, "map every predicted class through the matching");
    eval->add_option("-o,--output", c.eval.output, "metrics JSON (default stdout)");
    eval->add_option("--confusion", c.eval.confusion, "confusion matrix CSV");

    auto* est = app.add_subcommand("estimate-k", "Estimate the number of clusters by over-clustering");
    est->add_option("--dataset", c.estimate.dataset);
    est->add_option("-m,--manifest", c.estimate.manifest);
    est->add_option("--partition", c.estimate.partition, "partition of --manifest")->capture_default_str();
    est->add_option("--checkpoint", c.estimate.checkpoint, "encode vectors with this model first");
    est->add_option("--k-prime", c.estimate.k_prime)->required();
    est->add_option("--threshold", c.estimate.threshold, "minimum cluster size (default n/k')");
    est->add_option("--kmeans-restarts", c.estimate.restarts, "k-means restarts, best inertia kept")
        ->capture_default_str();
    est->add_option("--seed", c.estimate.seed);

    auto* report = app.add_subcommand("report", "Emit metric, loss-curve and projection CSVs for a run");
    report->add_option("--run-dir", c.report.run_dir)->required();
    report->add_option("-m,--manifest", c.report.manifest)->required();
    report->add_flag("--domain-sc", c.report.domain_sc, "per-domain silhouette of OOD representations");
    report->add_option("--seed", c.report.seed);
    report->add_option("-o,--output", c.report.output)->required();
}

// Long option names of every subcommand, without the leading dashes.
std::map<std::string, std::set<std::string>> option_names(CLI::App& app) {
    std::map<std::string, std::set<std::string>> names;
    for (auto* sub : app.get_subcommands({})) {
        for (const auto* opt : sub->get_options()) {
            for (const auto& l : opt->get_lnames()) names[sub->get_name()].insert(l);
        }
    }
    return names;
}

// Config entries become flags placed right after the subcommand name, so any
// flag given on the command line comes later and wins.
std::vector<std::string> merge_config(CLI::App& app, std::vector<std::string> args) {
    std::optional<std::string> config;
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw UsageError("--config needs a file");
            config = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    if (!config && fs::exists("gid.conf")) {
        config = "gid.conf";
    }
    if (!config) {
        return rest;
    }
    const auto names = option_names(app);
    const auto sub_it = std::find_if(rest.begin(), rest.end(), [&](const std::string& a) { return names.count(a) > 0; });
    std::vector<std::string> injected;
    for (const auto& [key, value] : read_config(*config)) {
        bool known = false;
        for (const auto& [sub, opts] : names) known = known || opts.count(key);
        if (!known) {
            throw UsageError(*config + ": unknown key '" + key + "'");
        }
        if (sub_it != rest.end() && names.at(*sub_it).count(key)) {
            injected.push_back("--" + key + "=" + value);
        }
    }
    if (sub_it != rest.end()) {
        rest.insert(sub_it + 1, injected.begin(), injected.end());
    }
    return rest;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app("Generalized intent discovery over precomputed embeddings", "gid");
    Commands c;
    build_app(app, c);
    try {
        std::vector<std::string> merged = merge_config(app, args);
        std::reverse(merged.begin(), merged.end());  // CLI11 consumes from the back
        app.parse(merged);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << "run 'gid --help' for usage\n";
        return 2;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "synth") cmd_synth(c.synth, out);
        else if (name == "split") cmd_split(c.split, out);
        else if (name == "variant") cmd_variant(c.variant, out);
        else if (name == "train") cmd_train(c.train, out);
        else if (name == "eval") cmd_eval(c.eval, out);
        else if (name == "estimate-k") cmd_estimate_k(c.estimate, out);
        else if (name == "report") cmd_report(c.report, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace gid::cli
