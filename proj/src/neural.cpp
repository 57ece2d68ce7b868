#include "gid/neural.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "gid/common.hpp"
#include "json.hpp"

namespace gid {
namespace {

Dense make_dense(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    Dense layer;
    layer.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    layer.bias.resize(static_cast<Eigen::Index>(out));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
            layer.weight(r, c) = uniform(rng);
        }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
        layer.bias(r) = uniform(rng);
    }
    return layer;
}

Eigen::MatrixXd affine(const Dense& layer, const Eigen::MatrixXd& x) {
    Eigen::MatrixXd z = x * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    return z;
}

HeadCache head_forward(const std::vector<Dense>& head, const Eigen::MatrixXd& input) {
    HeadCache cache;
    cache.input = input;
    const Eigen::MatrixXd* current = &cache.input;
    for (std::size_t l = 0; l + 1 < head.size(); ++l) {
        cache.hidden.push_back(affine(head[l], *current).array().tanh().matrix());
        current = &cache.hidden.back();
    }
    cache.output = affine(head.back(), *current);
    return cache;
}

Eigen::MatrixXd head_backward(const std::vector<Dense>& head, const HeadCache& cache,
                              const Eigen::MatrixXd& dout, std::vector<Dense>& grads) {
    Eigen::MatrixXd delta = dout;  // derivative wrt the pre-activation of layer l
    for (std::size_t l = head.size(); l-- > 0;) {
        const Eigen::MatrixXd& in = l == 0 ? cache.input : cache.hidden[l - 1];
        grads[l].weight.noalias() += delta.transpose() * in;
        grads[l].bias += delta.colwise().sum().transpose();
        Eigen::MatrixXd din = delta * head[l].weight;
        if (l == 0) {
            return din;
        }
        delta = din.array() * (1.0 - cache.hidden[l - 1].array().square());
    }
    return {};
}

void check_batch(const JointModel& model, const Eigen::MatrixXd& batch) {
    if (static_cast<std::size_t>(batch.cols()) != model.input_dim()) {
        throw ValidationError("batch has " + std::to_string(batch.cols()) +
                              " columns, model expects " + std::to_string(model.input_dim()));
    }
}

template <typename Layers, typename Fn>
void for_each_layer(Layers& model, Fn&& fn) {
    for (auto& layer : model.encoder) fn(layer);
    for (auto& layer : model.ind_head) fn(layer);
    for (auto& layer : model.ood_head) fn(layer);
}

}  // namespace

void ModelShape::validate() const {
    if (input_dim == 0 || n_ind == 0 || n_ood == 0) {
        throw ValidationError("model shape needs positive input_dim, n_ind and n_ood");
    }
    if (encoder_depth < 1 || head_depth < 1) {
        throw ValidationError("encoder_depth and head_depth must be at least 1");
    }
}

JointModel JointModel::create(const ModelShape& shape, std::uint64_t seed) {
    shape.validate();
    const std::size_t repr = shape.repr_dim == 0 ? shape.input_dim : shape.repr_dim;
    std::mt19937_64 rng(seed);
    JointModel model;
    std::size_t in = shape.input_dim;
    for (int l = 0; l < shape.encoder_depth; ++l) {
        model.encoder.push_back(make_dense(in, repr, rng));
        in = repr;
    }
    for (int l = 0; l + 1 < shape.head_depth; ++l) {
        model.ind_head.push_back(make_dense(repr, repr, rng));
    }
    model.ind_head.push_back(make_dense(repr, shape.n_ind, rng));
    for (int l = 0; l + 1 < shape.head_depth; ++l) {
        model.ood_head.push_back(make_dense(repr, repr, rng));
    }
    model.ood_head.push_back(make_dense(repr, shape.n_ood, rng));
    return model;
}

JointModel JointModel::zeros_like() const {
    JointModel out = *this;
    for_each_layer(out, [](Dense& layer) {
        layer.weight.setZero();
        layer.bias.setZero();
    });
    return out;
}

std::size_t JointModel::input_dim() const { return static_cast<std::size_t>(encoder.front().weight.cols()); }
std::size_t JointModel::repr_dim() const { return static_cast<std::size_t>(encoder.back().weight.rows()); }
std::size_t JointModel::n_ind() const { return static_cast<std::size_t>(ind_head.back().weight.rows()); }
std::size_t JointModel::n_ood() const { return static_cast<std::size_t>(ood_head.back().weight.rows()); }

ModelShape JointModel::shape() const {
    ModelShape s;
    s.input_dim = input_dim();
    s.repr_dim = repr_dim();
    s.n_ind = n_ind();
    s.n_ood = n_ood();
    s.encoder_depth = static_cast<int>(encoder.size());
    s.head_depth = static_cast<int>(ind_head.size());
    return s;
}

std::vector<std::span<double>> JointModel::parameter_blocks() {
    std::vector<std::span<double>> blocks;
    for_each_layer(*this, [&](Dense& layer) {
        blocks.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
        blocks.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
    });
    return blocks;
}

std::vector<std::span<const double>> JointModel::parameter_blocks() const {
    std::vector<std::span<const double>> blocks;
    for_each_layer(*this, [&](const Dense& layer) {
        blocks.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
        blocks.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
    });
    return blocks;
}

std::size_t JointModel::parameter_count() const {
    std::size_t total = 0;
    for (const auto& block : parameter_blocks()) {
        total += block.size();
    }
    return total;
}

EncoderCache encode(const JointModel& model, const Eigen::MatrixXd& batch) {
    check_batch(model, batch);
    EncoderCache cache;
    cache.input = batch;
    const Eigen::MatrixXd* current = &cache.input;
    cache.activations.reserve(model.encoder.size());
    for (const auto& layer : model.encoder) {
        cache.activations.push_back(affine(layer, *current).array().tanh().matrix());
        current = &cache.activations.back();
    }
    return cache;
}

Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::uint64_t seed) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw ValidationError("dropout probability must be in [0, 1)");
    }
    Eigen::MatrixXd mask = Eigen::MatrixXd::Ones(rows, cols);
    if (p == 0.0) {
        return mask;
    }
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution keep(1.0 - p);
    const double scale = 1.0 / (1.0 - p);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            mask(r, c) = keep(rng) ? scale : 0.0;
        }
    }
    return mask;
}

ViewCache heads_forward(const JointModel& model, const Eigen::MatrixXd& view, Eigen::MatrixXd mask) {
    ViewCache cache;
    cache.mask = std::move(mask);
    cache.view = view;
    cache.ind = head_forward(model.ind_head, cache.view);
    cache.ood = head_forward(model.ood_head, cache.view);
    cache.logits.resize(view.rows(), static_cast<Eigen::Index>(model.n_classes()));
    cache.logits << cache.ind.output, cache.ood.output;
    return cache;
}

ForwardPass forward(const JointModel& model, const Eigen::MatrixXd& batch, double dropout_p,
                    std::uint64_t seed) {
    ForwardPass pass;
    pass.encoder = encode(model, batch);
    const Eigen::MatrixXd& repr = pass.encoder.representation();
    if (dropout_p > 0.0) {
        Eigen::MatrixXd mask = dropout_mask(repr.rows(), repr.cols(), dropout_p, seed);
        const Eigen::MatrixXd view = repr.cwiseProduct(mask);
        pass.view = heads_forward(model, view, std::move(mask));
    } else {
        if (dropout_p < 0.0) {
            throw ValidationError("dropout probability must be in [0, 1)");
        }
        pass.view = heads_forward(model, repr);
    }
    return pass;
}

Eigen::MatrixXd heads_backward(const JointModel& model, const ViewCache& view,
                               const Eigen::MatrixXd& dlogits, JointModel& grads) {
    const auto n_ind = static_cast<Eigen::Index>(model.n_ind());
    const auto n_ood = static_cast<Eigen::Index>(model.n_ood());
    Eigen::MatrixXd dview = head_backward(model.ind_head, view.ind, dlogits.leftCols(n_ind), grads.ind_head);
    dview += head_backward(model.ood_head, view.ood, dlogits.rightCols(n_ood), grads.ood_head);
    if (view.mask.size() > 0) {
        dview.array() *= view.mask.array();
    }
    return dview;
}

void encoder_backward(const JointModel& model, const EncoderCache& cache,
                      const Eigen::MatrixXd& drepr, JointModel& grads) {
    Eigen::MatrixXd dact = drepr;
    for (std::size_t l = model.encoder.size(); l-- > 0;) {
        const Eigen::MatrixXd delta = dact.array() * (1.0 - cache.activations[l].array().square());
        const Eigen::MatrixXd& in = l == 0 ? cache.input : cache.activations[l - 1];
        grads.encoder[l].weight.noalias() += delta.transpose() * in;
        grads.encoder[l].bias += delta.colwise().sum().transpose();
        if (l > 0) {
            dact = delta * model.encoder[l].weight;
        }
    }
}

JointModel backward(const JointModel& model, const ForwardPass& pass, const Eigen::MatrixXd& dlogits) {
    JointModel grads = model.zeros_like();
    const Eigen::MatrixXd drepr = heads_backward(model, pass.view, dlogits, grads);
    encoder_backward(model, pass.encoder, drepr, grads);
    return grads;
}

DropoutViews dropout_views(const JointModel& model, const Eigen::MatrixXd& batch, double p,
                           std::uint64_t seed) {
    DropoutViews out;
    out.representation = encode(model, batch).representation();
    const auto rows = out.representation.rows();
    const auto cols = out.representation.cols();
    out.mask1 = dropout_mask(rows, cols, p, derive_seed(seed, 1));
    out.mask2 = dropout_mask(rows, cols, p, derive_seed(seed, 2));
    out.view1 = out.representation.cwiseProduct(out.mask1);
    out.view2 = out.representation.cwiseProduct(out.mask2);
    return out;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd out = logits;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        out.row(r).array() -= out.row(r).maxCoeff();
        out.row(r) = out.row(r).array().exp().matrix();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

LossGrad cross_entropy(const Eigen::RowVectorXd& logits, const Eigen::RowVectorXd& target) {
    if (logits.size() != target.size() || logits.size() == 0) {
        throw ValidationError("cross_entropy: logits and target sizes differ");
    }
    if (!(target.minCoeff() >= 0.0) || std::abs(target.sum() - 1.0) > 1e-6) {
        throw ValidationError("cross_entropy: target is not a probability vector");
    }
    const double peak = logits.maxCoeff();
    const Eigen::RowVectorXd shifted = logits.array() - peak;
    const double log_norm = std::log(shifted.array().exp().sum());
    LossGrad out;
    const Eigen::RowVectorXd log_probs = shifted.array() - log_norm;
    for (Eigen::Index c = 0; c < logits.size(); ++c) {
        if (target(c) != 0.0) {
            out.loss -= target(c) * log_probs(c);
        }
    }
    out.grad = log_probs.array().exp().matrix() - target;
    return out;
}

BatchLoss batch_cross_entropy(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& targets,
                              double normaliser) {
    if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
        throw ValidationError("batch_cross_entropy: logits and targets shapes differ");
    }
    BatchLoss out;
    out.dlogits.resize(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        LossGrad lg = cross_entropy(logits.row(r), targets.row(r));
        out.loss += lg.loss;
        out.dlogits.row(r) = lg.grad / normaliser;
    }
    out.loss /= normaliser;
    return out;
}

JointLossResult joint_loss(const JointModel& model, const JointBatch& batch) {
    JointLossResult result;
    result.grads = model.zeros_like();
    const double normaliser = static_cast<double>(batch.ind_x.rows() + batch.ood_x.rows());
    if (normaliser == 0.0) {
        return result;
    }
    if (batch.ind_x.rows() > 0) {
        const EncoderCache enc = encode(model, batch.ind_x);
        const Eigen::MatrixXd& repr = enc.representation();
        ViewCache view = batch.ind_mask.size() > 0
                             ? heads_forward(model, repr.cwiseProduct(batch.ind_mask), batch.ind_mask)
                             : heads_forward(model, repr);
        const BatchLoss bl = batch_cross_entropy(view.logits, batch.ind_targets, normaliser);
        result.loss += bl.loss;
        encoder_backward(model, enc, heads_backward(model, view, bl.dlogits, result.grads), result.grads);
    }
    if (batch.ood_x.rows() > 0) {
        const EncoderCache enc = encode(model, batch.ood_x);
        const Eigen::MatrixXd& repr = enc.representation();
        const ViewCache v1 = heads_forward(model, repr.cwiseProduct(batch.ood_mask1), batch.ood_mask1);
        const ViewCache v2 = heads_forward(model, repr.cwiseProduct(batch.ood_mask2), batch.ood_mask2);
        // Each OOD sample contributes the mean of its two swapped terms.
        const BatchLoss l1 = batch_cross_entropy(v1.logits, batch.ood_targets_for_view1, 2.0 * normaliser);
        const BatchLoss l2 = batch_cross_entropy(v2.logits, batch.ood_targets_for_view2, 2.0 * normaliser);
        result.loss += l1.loss + l2.loss;
        Eigen::MatrixXd drepr = heads_backward(model, v1, l1.dlogits, result.grads);
        drepr += heads_backward(model, v2, l2.dlogits, result.grads);
        encoder_backward(model, enc, drepr, result.grads);
    }
    return result;
}

OptimizerState OptimizerState::for_model(const JointModel& model, double momentum, double weight_decay) {
    OptimizerState state;
    state.velocity = model.zeros_like();
    state.momentum = momentum;
    state.weight_decay = weight_decay;
    return state;
}

void sgd_step(JointModel& model, const JointModel& grads, OptimizerState& state, double lr) {
    auto params = model.parameter_blocks();
    const auto grad_blocks = grads.parameter_blocks();
    auto velocity = state.velocity.parameter_blocks();
    if (params.size() != grad_blocks.size() || params.size() != velocity.size()) {
        throw ValidationError("sgd_step: parameter and gradient layouts differ");
    }
    for (std::size_t b = 0; b < params.size(); ++b) {
        if (params[b].size() != grad_blocks[b].size() || params[b].size() != velocity[b].size()) {
            throw ValidationError("sgd_step: parameter and gradient shapes differ");
        }
        for (std::size_t i = 0; i < params[b].size(); ++i) {
            velocity[b][i] = state.momentum * velocity[b][i] + grad_blocks[b][i] +
                             state.weight_decay * params[b][i];
            params[b][i] -= lr * velocity[b][i];
        }
    }
    ++state.step;
}

void ScheduleConfig::validate() const {
    if (!(lr_min > 0.0) || !(lr_min <= lr_base)) {
        throw ValidationError("schedule needs 0 < lr_min <= lr_base");
    }
    if (warmup_epochs < 0 || total_epochs < 1 || warmup_epochs >= total_epochs) {
        throw ValidationError("schedule needs 0 <= warmup_epochs < total_epochs");
    }
}

double lr_at(const ScheduleConfig& schedule, int epoch) {
    schedule.validate();
    if (epoch < 0 || epoch >= schedule.total_epochs) {
        throw ValidationError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                              std::to_string(schedule.total_epochs) + ")");
    }
    if (epoch < schedule.warmup_epochs) {
        return schedule.lr_base * static_cast<double>(epoch + 1) /
               static_cast<double>(schedule.warmup_epochs);
    }
    const int span = schedule.total_epochs - 1 - schedule.warmup_epochs;
    const double progress = span > 0 ? static_cast<double>(epoch - schedule.warmup_epochs) / span : 1.0;
    return schedule.lr_min +
           0.5 * (schedule.lr_base - schedule.lr_min) * (1.0 + std::cos(M_PI * progress));
}

void save_checkpoint(const JointModel& model, const CheckpointInfo& info,
                     const std::filesystem::path& path) {
    nlohmann::ordered_json header;
    header["format"] = "gid-checkpoint";
    header["version"] = 1;
    const ModelShape shape = model.shape();
    header["input_dim"] = shape.input_dim;
    header["repr_dim"] = shape.repr_dim;
    header["n_ind"] = shape.n_ind;
    header["n_ood"] = shape.n_ood;
    header["encoder_depth"] = shape.encoder_depth;
    header["head_depth"] = shape.head_depth;
    header["seed"] = info.seed;
    header["epoch"] = info.epoch;
    header["parameter_count"] = model.parameter_count();

    std::string bytes = header.dump() + "\n";
    for (const auto& block : model.parameter_blocks()) {
        for (double value : block) {
            const float f = static_cast<float>(value);
            std::uint32_t bits;
            std::memcpy(&bits, &f, sizeof bits);
            for (int i = 0; i < 4; ++i) {
                bytes.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
            }
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write checkpoint " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::pair<JointModel, CheckpointInfo> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    std::string line;
    std::getline(in, line);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": bad checkpoint header: " + e.what());
    }
    if (header.value("format", "") != "gid-checkpoint" || header.value("version", 0) != 1) {
        throw FormatError(path.string() + ": not a version 1 gid checkpoint");
    }
    ModelShape shape;
    shape.input_dim = header.at("input_dim").get<std::size_t>();
    shape.repr_dim = header.at("repr_dim").get<std::size_t>();
    shape.n_ind = header.at("n_ind").get<std::size_t>();
    shape.n_ood = header.at("n_ood").get<std::size_t>();
    shape.encoder_depth = header.at("encoder_depth").get<int>();
    shape.head_depth = header.at("head_depth").get<int>();
    CheckpointInfo info;
    info.seed = header.at("seed").get<std::uint64_t>();
    info.epoch = header.at("epoch").get<int>();

    JointModel model = JointModel::create(shape, 0);
    std::ostringstream rest;
    rest << in.rdbuf();
    const std::string payload = rest.str();
    if (payload.size() != model.parameter_count() * 4) {
        throw FormatError(path.string() + ": parameter payload size mismatch");
    }
    std::size_t offset = 0;
    for (auto block : model.parameter_blocks()) {
        for (double& value : block) {
            std::uint32_t bits = 0;
            for (int i = 0; i < 4; ++i) {
                bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[offset + i])) << (8 * i);
            }
            offset += 4;
            float f;
            std::memcpy(&f, &bits, sizeof f);
            value = f;
        }
    }
    return {std::move(model), info};
}

}  // namespace gid
