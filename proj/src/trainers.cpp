#include "gid/trainers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "gid/assignment.hpp"
#include "gid/common.hpp"
#include "gid/sinkhorn.hpp"

namespace gid {
namespace {

using Clock = std::chrono::steady_clock;

// Seed tags, so every random stream of a run is independent.
enum SeedTag : std::uint64_t {
    kInitTag = 11,
    kPretrainTag = 12,
    kClusterTag = 13,
    kAlignTrainTag = 14,
    kJointTag = 15,
    kE2eTag = 16,
    kMixTag = 17,
};

ScheduleConfig stage_schedule(const TrainConfig& config, int epochs) {
    ScheduleConfig s = config.schedule;
    s.total_epochs = epochs;
    s.warmup_epochs = std::min(s.warmup_epochs, std::max(0, epochs - 1));
    return s;
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& x, const std::vector<std::size_t>& idx,
                        std::size_t begin, std::size_t end) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(end - begin), x.cols());
    for (std::size_t i = begin; i < end; ++i) {
        out.row(static_cast<Eigen::Index>(i - begin)) = x.row(static_cast<Eigen::Index>(idx[i]));
    }
    return out;
}

Eigen::MatrixXd one_hot(const std::vector<int>& labels, const std::vector<std::size_t>& idx,
                        std::size_t begin, std::size_t end, Eigen::Index width, int offset = 0) {
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(end - begin), width);
    for (std::size_t i = begin; i < end; ++i) {
        t(static_cast<Eigen::Index>(i - begin), labels[idx[i]] + offset) = 1.0;
    }
    return t;
}

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

// One epoch of cross-entropy on the logit columns [offset, offset + width).
double train_epoch_ce(JointModel& model, OptimizerState& state, const Eigen::MatrixXd& x,
                      const std::vector<int>& labels, Eigen::Index offset, Eigen::Index width,
                      std::size_t batch_size, double lr, std::mt19937_64& rng) {
    const std::size_t n = labels.size();
    if (n == 0) {
        return 0.0;
    }
    const auto order = shuffled(n, rng);
    double total = 0.0;
    for (std::size_t begin = 0; begin < n; begin += batch_size) {
        const std::size_t end = std::min(n, begin + batch_size);
        const Eigen::MatrixXd xb = rows_of(x, order, begin, end);
        const Eigen::MatrixXd tb = one_hot(labels, order, begin, end, width);
        const ForwardPass pass = forward(model, xb);
        const BatchLoss bl = batch_cross_entropy(pass.logits().middleCols(offset, width), tb,
                                                 static_cast<double>(end - begin));
        Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(pass.logits().rows(), pass.logits().cols());
        dlogits.middleCols(offset, width) = bl.dlogits;
        sgd_step(model, backward(model, pass, dlogits), state, lr);
        total += bl.loss * static_cast<double>(end - begin);
    }
    return total / static_cast<double>(n);
}

std::vector<int> to_int(const std::vector<std::int64_t>& v) {
    return std::vector<int>(v.begin(), v.end());
}

// Silhouette of the validation representations (IND and OOD) under the
// model's predictions. A collapsed prediction scores -1.
std::optional<double> val_sc(const JointModel& model, const Eigen::MatrixXd& val) {
    if (val.rows() < 2) {
        return std::nullopt;
    }
    const ForwardPass pass = forward(model, val);
    std::vector<int> labels(static_cast<std::size_t>(val.rows()));
    for (Eigen::Index r = 0; r < val.rows(); ++r) {
        Eigen::Index arg = 0;
        pass.logits().row(r).maxCoeff(&arg);
        labels[static_cast<std::size_t>(r)] = static_cast<int>(arg);
    }
    if (std::set<int>(labels.begin(), labels.end()).size() < 2) {
        return -1.0;
    }
    return silhouette(pass.encoder.representation(), labels);
}

Eigen::MatrixXd validation_matrix(const GidSplit& split) {
    const auto dim = !split.ind_val.empty()   ? split.ind_val.front().vector.size()
                     : !split.ood_val.empty() ? split.ood_val.front().vector.size()
                                              : 0;
    Eigen::MatrixXd v(static_cast<Eigen::Index>(split.ind_val.size() + split.ood_val.size()),
                      static_cast<Eigen::Index>(dim));
    if (v.rows() > 0) {
        v << partition_matrix(split.ind_val), partition_matrix(split.ood_val);
    }
    return v;
}

std::optional<double> cluster_sc(const Eigen::MatrixXd& reps, const std::vector<int>& labels) {
    if (reps.rows() < 2 || std::set<int>(labels.begin(), labels.end()).size() < 2) {
        return std::nullopt;
    }
    return silhouette(reps, labels);
}

// Tracks the best validation score; without scores the latest epoch wins.
class Selector {
public:
    /// Epochs before `grace` never count towards the patience. With
    /// `score_grace` their scores are ignored too: each is provisionally
    /// selected and the first scored epoch after the grace period replaces it.
    Selector(int patience, int grace, bool score_grace = true)
        : patience_(patience), grace_(grace), score_grace_(score_grace) {}

    /// True when this epoch becomes the selected one.
    bool update(std::optional<double> score, int epoch) {
        if (!score || (score_grace_ && epoch < grace_)) {
            best_epoch_ = epoch;
            return true;
        }
        if (!has_best_ || *score > best_) {
            has_best_ = true;
            best_ = *score;
            best_epoch_ = epoch;
            stale_ = 0;
            return true;
        }
        if (epoch >= grace_) {
            ++stale_;
        }
        return false;
    }

    bool should_stop() const { return patience_ > 0 && has_best_ && stale_ >= patience_; }
    int best_epoch() const { return best_epoch_; }

private:
    int patience_;
    int grace_;
    bool score_grace_;
    bool has_best_ = false;
    double best_ = 0.0;
    int best_epoch_ = -1;
    int stale_ = 0;
};

JointModel initial_model(const GidSplit& split, const TrainConfig& config) {
    ModelShape shape;
    shape.input_dim = split.ind_train.empty() ? split.ood_train.front().vector.size()
                                              : split.ind_train.front().vector.size();
    shape.repr_dim = config.repr_dim;
    shape.n_ind = split.n_ind_classes;
    shape.n_ood = split.n_ood_classes;
    shape.encoder_depth = config.encoder_depth;
    shape.head_depth = config.head_depth;
    return JointModel::create(shape, derive_seed(config.seed, kInitTag));
}

TrainConfig with_pretrain_epochs(const TrainConfig& config) {
    TrainConfig pre = config;
    pre.epochs = config.pretrain_epochs >= 0 ? config.pretrain_epochs : config.epochs;
    return pre;
}

void finish(RunReport& report, const GidSplit& split, const EvalOptions& eval_options,
            Clock::time_point start) {
    const std::vector<GidSample>& test = split.test();
    report.test_ids.clear();
    for (const auto& s : test) {
        report.test_ids.push_back(s.id);
    }
    report.test_gold = partition_labels(test);
    report.test_predictions = predict(report.model, partition_matrix(test));
    report.metrics = evaluate_gid(report.test_predictions, report.test_gold, split.n_ind_classes,
                                  split.n_ood_classes, eval_options);
    report.elapsed_seconds = std::chrono::duration<double>(Clock::now() - start).count();
}

// Relabels `labels`/`centroids` so cluster i lines up with previous cluster i.
void align_to_previous(const Eigen::MatrixXd& previous, ClusterAssignment& clusters) {
    const std::vector<int> relabel = relabel_from_alignment(align_clusters(previous, clusters.centroids));
    Eigen::MatrixXd centroids(clusters.centroids.rows(), clusters.centroids.cols());
    for (std::size_t c = 0; c < relabel.size(); ++c) {
        centroids.row(relabel[c]) = clusters.centroids.row(static_cast<Eigen::Index>(c));
    }
    for (auto& label : clusters.labels) {
        label = relabel[static_cast<std::size_t>(label)];
    }
    clusters.centroids = std::move(centroids);
}

}  // namespace

Method parse_method(const std::string& name) {
    if (name == "kmeans_pipeline" || name == "kmeans") return Method::kmeans_pipeline;
    if (name == "deepaligned_pipeline" || name == "deepaligned") return Method::deepaligned_pipeline;
    if (name == "deepaligned_mix" || name == "mix") return Method::deepaligned_mix;
    if (name == "e2e") return Method::e2e;
    throw ConfigError("unknown method: " + name);
}

std::string to_string(Method method) {
    switch (method) {
        case Method::kmeans_pipeline: return "kmeans_pipeline";
        case Method::deepaligned_pipeline: return "deepaligned_pipeline";
        case Method::deepaligned_mix: return "deepaligned_mix";
        case Method::e2e: return "e2e";
    }
    return "unknown";
}

void TrainConfig::validate() const {
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (sk_iters < 1) throw ConfigError("sk_iters must be at least 1");
    if (!(schedule.lr_min > 0.0 && schedule.lr_min <= schedule.lr_base)) {
        throw ConfigError("schedule needs 0 < lr_min <= lr_base");
    }
    if (schedule.warmup_epochs < 0) throw ConfigError("warmup_epochs must be non-negative");
    if (momentum < 0.0 || weight_decay < 0.0) throw ConfigError("momentum and weight_decay must be >= 0");
}

std::vector<std::int64_t> predict(const JointModel& model, const Eigen::MatrixXd& samples) {
    const ForwardPass pass = forward(model, samples);
    std::vector<std::int64_t> out(static_cast<std::size_t>(samples.rows()));
    for (Eigen::Index r = 0; r < samples.rows(); ++r) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < pass.logits().cols(); ++c) {
            if (pass.logits()(r, c) > pass.logits()(r, best)) {
                best = c;
            }
        }
        out[static_cast<std::size_t>(r)] = best;
    }
    return out;
}

Eigen::MatrixXd representations(const JointModel& model, const Eigen::MatrixXd& samples) {
    return encode(model, samples).representation();
}

double cluster_purity(const std::vector<int>& clusters, const std::vector<std::int64_t>& gold) {
    if (clusters.empty()) {
        return 0.0;
    }
    std::map<int, std::map<std::int64_t, std::size_t>> counts;
    for (std::size_t i = 0; i < clusters.size(); ++i) {
        ++counts[clusters[i]][gold[i]];
    }
    std::size_t majority = 0;
    for (const auto& [cluster, by_gold] : counts) {
        std::size_t best = 0;
        for (const auto& [g, n] : by_gold) best = std::max(best, n);
        majority += best;
    }
    return static_cast<double>(majority) / static_cast<double>(clusters.size());
}

JointModel pretrain_ind(const GidSplit& split, const TrainConfig& config, std::vector<EpochRecord>* curve) {
    config.validate();
    if (split.ind_train.empty()) {
        throw DataError("pretrain_ind: ind_train is empty");
    }
    JointModel model = initial_model(split, config);
    if (config.epochs == 0) {
        return model;
    }
    const std::vector<Dense> untouched_ood_head = model.ood_head;
    const Eigen::MatrixXd x = partition_matrix(split.ind_train);
    const auto labels = to_int(partition_labels(split.ind_train));
    const Eigen::MatrixXd x_val = partition_matrix(split.ind_val);
    const auto val_labels = partition_labels(split.ind_val);
    const auto n_ind = static_cast<Eigen::Index>(split.n_ind_classes);

    const ScheduleConfig schedule = stage_schedule(config, config.epochs);
    OptimizerState state = OptimizerState::for_model(model, config.momentum, config.weight_decay);
    std::mt19937_64 rng(derive_seed(config.seed, kPretrainTag));
    // The first epoch reaching the best IND validation accuracy is kept; IND
    // overfitting beyond it squashes directions the OOD classes need.
    Selector selector(config.early_stop_patience, schedule.warmup_epochs, false);
    JointModel best = model;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at(schedule, epoch);
        const double loss = train_epoch_ce(model, state, x, labels, 0, n_ind, config.batch_size, lr, rng);
        std::optional<double> acc;
        if (x_val.rows() > 0) {
            const ForwardPass pass = forward(model, x_val);
            std::size_t correct = 0;
            for (Eigen::Index r = 0; r < x_val.rows(); ++r) {
                Eigen::Index arg = 0;
                pass.logits().row(r).leftCols(n_ind).maxCoeff(&arg);
                correct += arg == val_labels[static_cast<std::size_t>(r)] ? 1 : 0;
            }
            acc = static_cast<double>(correct) / static_cast<double>(x_val.rows());
        }
        if (selector.update(acc, epoch)) {
            best = model;
        }
        if (curve) {
            curve->push_back({"pretrain", epoch, loss, lr, std::nullopt});
        }
        if (selector.should_stop()) {
            break;
        }
    }
    best.ood_head = untouched_ood_head;
    return best;
}

JointModel train_joint_classifier(const GidSplit& split, const JointModel& pretrained,
                                  const std::vector<int>& ood_pseudo_labels, const TrainConfig& config,
                                  std::vector<EpochRecord>* curve, int* best_epoch) {
    if (ood_pseudo_labels.size() != split.ood_train.size()) {
        throw ValidationError("train_joint_classifier: one pseudo-label per ood_train row required");
    }
    JointModel model = pretrained;
    for (auto& layer : model.ood_head) {
        layer.weight.setZero();
        layer.bias.setZero();
    }
    const auto n_ind = static_cast<int>(split.n_ind_classes);
    std::vector<int> labels = to_int(partition_labels(split.ind_train));
    for (int p : ood_pseudo_labels) {
        if (p < 0 || p >= static_cast<int>(split.n_ood_classes)) {
            throw ValidationError("train_joint_classifier: pseudo-label out of range");
        }
        labels.push_back(n_ind + p);
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(model.input_dim()));
    x << partition_matrix(split.ind_train), partition_matrix(split.ood_train);
    const Eigen::MatrixXd x_val = validation_matrix(split);
    if (config.epochs == 0) {
        return model;
    }

    const ScheduleConfig schedule = stage_schedule(config, config.epochs);
    OptimizerState state = OptimizerState::for_model(model, config.momentum, config.weight_decay);
    std::mt19937_64 rng(derive_seed(config.seed, kJointTag));
    Selector selector(config.early_stop_patience, schedule.warmup_epochs);
    JointModel best = model;
    const auto width = static_cast<Eigen::Index>(model.n_classes());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at(schedule, epoch);
        const double loss = train_epoch_ce(model, state, x, labels, 0, width, config.batch_size, lr, rng);
        const auto sc = val_sc(model, x_val);
        if (selector.update(sc, epoch)) {
            best = model;
        }
        if (curve) {
            curve->push_back({"joint", epoch, loss, lr, sc});
        }
        if (selector.should_stop()) {
            break;
        }
    }
    if (best_epoch) {
        *best_epoch = selector.best_epoch();
    }
    return best;
}

RunReport run_pipeline(const GidSplit& split, const TrainConfig& config) {
    if (config.method != Method::kmeans_pipeline && config.method != Method::deepaligned_pipeline) {
        throw ConfigError("run_pipeline: method must be kmeans_pipeline or deepaligned_pipeline");
    }
    config.validate();
    const auto start = Clock::now();
    RunReport report;
    report.method = config.method;
    report.seed = config.seed;

    const JointModel pretrained = pretrain_ind(split, with_pretrain_epochs(config), &report.curve);
    const Eigen::MatrixXd x_ood = partition_matrix(split.ood_train);
    const Eigen::MatrixXd x_ood_val = partition_matrix(split.ood_val);
    const auto gold = split.ood_train_gold();
    const int m = static_cast<int>(split.n_ood_classes);

    std::vector<int> pseudo;
    if (config.method == Method::kmeans_pipeline) {
        const ClusterAssignment clusters =
            kmeans(representations(pretrained, x_ood), m, derive_seed(config.seed, kClusterTag), config.kmeans);
        pseudo = clusters.labels;
        report.pseudo_label_purity.push_back(cluster_purity(pseudo, gold));
    } else {
        // DeepAligned: per outer iteration one k-means pass, alignment with
        // the previous centroids, and one epoch of pseudo-label CE on the OOD head.
        JointModel model = pretrained;
        OptimizerState state = OptimizerState::for_model(model, config.momentum, config.weight_decay);
        const ScheduleConfig schedule = stage_schedule(config, std::max(config.epochs, 1));
        std::mt19937_64 rng(derive_seed(config.seed, kAlignTrainTag));
        Selector selector(config.early_stop_patience, schedule.warmup_epochs);
        std::optional<Eigen::MatrixXd> previous;
        const int outer = std::max(config.epochs, 1);
        for (int epoch = 0; epoch < outer; ++epoch) {
            ClusterAssignment clusters =
                kmeans(representations(model, x_ood), m,
                       derive_seed(derive_seed(config.seed, kClusterTag), static_cast<std::uint64_t>(epoch)),
                       config.kmeans);
            if (previous) {
                align_to_previous(*previous, clusters);
            }
            previous = clusters.centroids;
            report.pseudo_label_purity.push_back(cluster_purity(clusters.labels, gold));

            std::optional<double> sc;
            if (x_ood_val.rows() > 1) {
                sc = cluster_sc(representations(model, x_ood_val),
                                assign_nearest(representations(model, x_ood_val), clusters.centroids));
            }
            if (selector.update(sc, epoch)) {
                pseudo = clusters.labels;
            }
            double loss = 0.0;
            const double lr = lr_at(schedule, epoch);
            if (config.epochs > 0) {
                loss = train_epoch_ce(model, state, x_ood, clusters.labels,
                                      static_cast<Eigen::Index>(split.n_ind_classes), m,
                                      config.batch_size, lr, rng);
            }
            report.curve.push_back({"align", epoch, loss, lr, sc});
            if (selector.should_stop()) {
                break;
            }
        }
    }

    report.model = train_joint_classifier(split, pretrained, pseudo, config, &report.curve, &report.best_epoch);
    finish(report, split, {}, start);
    return report;
}

RunReport run_deepaligned_mix(const GidSplit& split, const TrainConfig& config) {
    if (config.method != Method::deepaligned_mix) {
        throw ConfigError("run_deepaligned_mix: method must be deepaligned_mix");
    }
    config.validate();
    const auto start = Clock::now();
    RunReport report;
    report.method = config.method;
    report.seed = config.seed;

    JointModel model = pretrain_ind(split, with_pretrain_epochs(config), &report.curve);
    const auto n_ind = split.ind_train.size();
    const int k = static_cast<int>(split.n_classes());
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n_ind + split.ood_train.size()),
                      static_cast<Eigen::Index>(model.input_dim()));
    x << partition_matrix(split.ind_train), partition_matrix(split.ood_train);
    const auto ind_gold = partition_labels(split.ind_train);
    std::vector<std::int64_t> gold = ind_gold;
    const auto ood_gold = split.ood_train_gold();
    gold.insert(gold.end(), ood_gold.begin(), ood_gold.end());
    const Eigen::MatrixXd x_val = validation_matrix(split);

    const ScheduleConfig schedule = stage_schedule(config, std::max(config.epochs, 1));
    OptimizerState state = OptimizerState::for_model(model, config.momentum, config.weight_decay);
    std::mt19937_64 rng(derive_seed(config.seed, kMixTag));
    Selector selector(config.early_stop_patience, schedule.warmup_epochs);
    JointModel best = model;
    std::optional<Eigen::MatrixXd> previous;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        ClusterAssignment clusters =
            kmeans(representations(model, x), k,
                   derive_seed(derive_seed(config.seed, kClusterTag), static_cast<std::uint64_t>(epoch)),
                   config.kmeans);
        std::vector<int> targets;
        if (config.mix_gold_ind) {
            // Anchor clusters to gold IND classes by their IND membership, then
            // train IND rows on gold labels and OOD rows on mapped cluster ids.
            Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(k, k);
            for (std::size_t i = 0; i < n_ind; ++i) {
                cost(clusters.labels[i], ind_gold[i]) -= 1.0;
            }
            const Mapping anchor = hungarian(cost);
            targets.resize(clusters.labels.size());
            for (std::size_t i = 0; i < targets.size(); ++i) {
                targets[i] = i < n_ind ? static_cast<int>(ind_gold[i])
                                       : anchor.perm[static_cast<std::size_t>(clusters.labels[i])];
            }
        } else {
            if (previous) {
                align_to_previous(*previous, clusters);
            }
            previous = clusters.centroids;
            targets = clusters.labels;
        }
        report.pseudo_label_purity.push_back(cluster_purity(clusters.labels, gold));
        const double lr = lr_at(schedule, epoch);
        const double loss = train_epoch_ce(model, state, x, targets, 0, k, config.batch_size, lr, rng);
        const auto sc = val_sc(model, x_val);
        if (selector.update(sc, epoch)) {
            best = model;
        }
        report.curve.push_back({"mix", epoch, loss, lr, sc});
        if (selector.should_stop()) {
            break;
        }
    }
    report.best_epoch = selector.best_epoch();
    report.model = std::move(best);
    EvalOptions eval;
    eval.map_all_classes = true;
    finish(report, split, eval, start);
    return report;
}

RunReport run_e2e(const GidSplit& split, const TrainConfig& config) {
    if (config.method != Method::e2e) {
        throw ConfigError("run_e2e: method must be e2e");
    }
    config.validate();
    const auto start = Clock::now();
    RunReport report;
    report.method = config.method;
    report.seed = config.seed;
    if (config.batch_size < split.n_ood_classes) {
        report.warnings.push_back("batch_size " + std::to_string(config.batch_size) +
                                  " is below the number of OOD classes");
    }

    JointModel model = pretrain_ind(split, with_pretrain_epochs(config), &report.curve);
    const Eigen::MatrixXd x_ind = partition_matrix(split.ind_train);
    const auto ind_labels = to_int(partition_labels(split.ind_train));
    const Eigen::MatrixXd x_ood = partition_matrix(split.ood_train);
    const Eigen::MatrixXd x_val = validation_matrix(split);
    const auto ood_gold = split.ood_train_gold();
    const std::size_t n_i = static_cast<std::size_t>(x_ind.rows());
    const std::size_t n_o = static_cast<std::size_t>(x_ood.rows());
    const auto n_ind = static_cast<Eigen::Index>(split.n_ind_classes);
    const auto n_ood = static_cast<Eigen::Index>(split.n_ood_classes);
    const auto width = n_ind + n_ood;
    const auto repr_dim = static_cast<Eigen::Index>(model.repr_dim());

    const ScheduleConfig schedule = stage_schedule(config, std::max(config.epochs, 1));
    OptimizerState state = OptimizerState::for_model(model, config.momentum, config.weight_decay);
    const std::uint64_t e2e_seed = derive_seed(config.seed, kE2eTag);
    std::mt19937_64 rng(e2e_seed);
    Selector selector(config.early_stop_patience, schedule.warmup_epochs);
    JointModel best = model;

    // OOD-head pseudo-labels for one dropout view, as (N+M)-wide targets [0_N; y].
    auto pseudo_targets = [&](const Eigen::MatrixXd& view) {
        SinkhornProblem problem;
        problem.logits = heads_forward(model, view).ood.output.transpose();
        problem.epsilon = config.epsilon;
        problem.n_iter = config.sk_iters;
        Eigen::MatrixXd q = sinkhorn_pseudo_labels(problem).targets;
        if (config.hard_pseudo_labels) {
            q = harden_targets(q);
        }
        Eigen::MatrixXd t = Eigen::MatrixXd::Zero(view.rows(), width);
        t.rightCols(n_ood) = q.transpose();
        return t;
    };

    std::uint64_t step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at(schedule, epoch);
        const auto ind_order = shuffled(n_i, rng);
        const auto ood_order = shuffled(n_o, rng);
        const std::size_t n_batches = std::max<std::size_t>(1, (n_i + n_o + config.batch_size - 1) / config.batch_size);
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < n_batches; ++b, ++step) {
            const std::uint64_t batch_seed = derive_seed(e2e_seed, step);
            JointBatch batch;
            const std::size_t i0 = b * n_i / n_batches, i1 = (b + 1) * n_i / n_batches;
            const std::size_t o0 = b * n_o / n_batches, o1 = (b + 1) * n_o / n_batches;
            batch.ind_x = rows_of(x_ind, ind_order, i0, i1);
            batch.ind_targets = one_hot(ind_labels, ind_order, i0, i1, width);
            batch.ind_mask = dropout_mask(batch.ind_x.rows(), repr_dim, config.dropout_p, derive_seed(batch_seed, 0));
            batch.ood_x = rows_of(x_ood, ood_order, o0, o1);
            if (batch.ood_x.rows() > 0) {
                const Eigen::MatrixXd repr = representations(model, batch.ood_x);
                batch.ood_mask1 = dropout_mask(repr.rows(), repr_dim, config.dropout_p, derive_seed(batch_seed, 1));
                batch.ood_mask2 = dropout_mask(repr.rows(), repr_dim, config.dropout_p, derive_seed(batch_seed, 2));
                const Eigen::MatrixXd t1 = pseudo_targets(repr.cwiseProduct(batch.ood_mask1));
                const Eigen::MatrixXd t2 = pseudo_targets(repr.cwiseProduct(batch.ood_mask2));
                // Swapped prediction: each view learns the other view's pseudo-label.
                batch.ood_targets_for_view1 = t2;
                batch.ood_targets_for_view2 = t1;
            }
            JointLossResult result = joint_loss(model, batch);
            if (!std::isfinite(result.loss)) {
                throw DataError("e2e: non-finite joint loss at epoch " + std::to_string(epoch));
            }
            sgd_step(model, result.grads, state, lr);
            epoch_loss += result.loss * static_cast<double>((i1 - i0) + (o1 - o0));
        }
        epoch_loss /= static_cast<double>(std::max<std::size_t>(1, n_i + n_o));

        if (n_o > 0) {
            const ForwardPass pass = forward(model, x_ood);
            std::vector<int> assigned(n_o);
            for (std::size_t r = 0; r < n_o; ++r) {
                Eigen::Index arg = 0;
                pass.logits().row(static_cast<Eigen::Index>(r)).rightCols(n_ood).maxCoeff(&arg);
                assigned[r] = static_cast<int>(arg);
            }
            report.pseudo_label_purity.push_back(cluster_purity(assigned, ood_gold));
        }
        const auto sc = val_sc(model, x_val);
        if (selector.update(sc, epoch)) {
            best = model;
        }
        report.curve.push_back({"e2e", epoch, epoch_loss, lr, sc});
        if (selector.should_stop()) {
            break;
        }
    }
    report.best_epoch = selector.best_epoch();
    report.model = std::move(best);
    finish(report, split, {}, start);
    return report;
}

RunReport run_method(const GidSplit& split, const TrainConfig& config) {
    switch (config.method) {
        case Method::kmeans_pipeline:
        case Method::deepaligned_pipeline: return run_pipeline(split, config);
        case Method::deepaligned_mix: return run_deepaligned_mix(split, config);
        case Method::e2e: return run_e2e(split, config);
    }
    throw ConfigError("unknown method");
}

nlohmann::ordered_json train_config_to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["method"] = to_string(c.method);
    j["batch_size"] = c.batch_size;
    j["epochs"] = c.epochs;
    j["pretrain_epochs"] = c.pretrain_epochs;
    j["lr_base"] = c.schedule.lr_base;
    j["lr_min"] = c.schedule.lr_min;
    j["warmup_epochs"] = c.schedule.warmup_epochs;
    j["momentum"] = c.momentum;
    j["weight_decay"] = c.weight_decay;
    j["dropout"] = c.dropout_p;
    j["epsilon"] = c.epsilon;
    j["sk_iters"] = c.sk_iters;
    j["hard_pseudo_labels"] = c.hard_pseudo_labels;
    j["mix_gold_ind"] = c.mix_gold_ind;
    j["seed"] = c.seed;
    j["repr_dim"] = c.repr_dim;
    j["encoder_depth"] = c.encoder_depth;
    j["head_depth"] = c.head_depth;
    j["early_stop_patience"] = c.early_stop_patience;
    j["kmeans_restarts"] = c.kmeans.restarts;
    j["kmeans_max_iter"] = c.kmeans.max_iter;
    j["kmeans_tol"] = c.kmeans.tol;
    return j;
}

nlohmann::ordered_json run_report_to_json(const RunReport& report, bool include_timing) {
    nlohmann::ordered_json j;
    j["method"] = to_string(report.method);
    j["seed"] = report.seed;
    j["metrics"] = metrics_to_json(report.metrics);
    j["best_epoch"] = report.best_epoch;
    nlohmann::ordered_json curve = nlohmann::ordered_json::array();
    for (const auto& r : report.curve) {
        nlohmann::ordered_json e;
        e["stage"] = r.stage;
        e["epoch"] = r.epoch;
        e["loss"] = r.loss;
        e["lr"] = r.lr;
        e["val_sc"] = r.val_sc ? nlohmann::ordered_json(*r.val_sc) : nlohmann::ordered_json(nullptr);
        curve.push_back(std::move(e));
    }
    j["loss_curve"] = std::move(curve);
    j["pseudo_label_purity"] = report.pseudo_label_purity;
    j["warnings"] = report.warnings;
    j["checkpoint"] = report.checkpoint_path;
    if (include_timing) {
        j["elapsed_seconds"] = report.elapsed_seconds;
    }
    return j;
}

std::string loss_curve_csv(const RunReport& report) {
    std::ostringstream out;
    out.precision(17);
    out << "stage,epoch,loss,lr,val_sc\n";
    for (const auto& r : report.curve) {
        out << r.stage << ',' << r.epoch << ',' << r.loss << ',' << r.lr << ',';
        if (r.val_sc) {
            out << *r.val_sc;
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace gid
