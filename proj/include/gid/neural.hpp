#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace gid {

/// Affine map y = W x + b, W is out x in.
struct Dense {
    Eigen::MatrixXd weight;
    Eigen::VectorXd bias;
};

struct ModelShape {
    std::size_t input_dim = 0;
    /// Representation width; 0 means "same as input_dim".
    std::size_t repr_dim = 0;
    std::size_t n_ind = 0;
    std::size_t n_ood = 0;
    /// Number of affine+tanh layers in the encoder.
    int encoder_depth = 1;
    /// Number of affine layers per head (tanh between them, none after the last).
    int head_depth = 1;

    void validate() const;
};

/// Encoder plus an IND head and an OOD head whose outputs are concatenated
/// into N+M logits.
///
/// Rows are samples everywhere: a batch is a B x input_dim matrix and logits
/// are B x (N+M) with IND classes in the first N columns.
struct JointModel {
    std::vector<Dense> encoder;
    std::vector<Dense> ind_head;
    std::vector<Dense> ood_head;

    /// Weights and biases uniform in +-1/sqrt(fan_in).
    static JointModel create(const ModelShape& shape, std::uint64_t seed);
    /// Same layer shapes, all parameters zero.
    JointModel zeros_like() const;

    std::size_t input_dim() const;
    std::size_t repr_dim() const;
    std::size_t n_ind() const;
    std::size_t n_ood() const;
    std::size_t n_classes() const { return n_ind() + n_ood(); }
    ModelShape shape() const;

    /// Every parameter block in checkpoint order: encoder, IND head, OOD head;
    /// per layer the row-major weight then the bias.
    std::vector<std::span<double>> parameter_blocks();
    std::vector<std::span<const double>> parameter_blocks() const;
    std::size_t parameter_count() const;
};

struct EncoderCache {
    Eigen::MatrixXd input;
    /// tanh output of each encoder layer; back() is the representation.
    std::vector<Eigen::MatrixXd> activations;

    const Eigen::MatrixXd& representation() const { return activations.back(); }
};

struct HeadCache {
    Eigen::MatrixXd input;
    std::vector<Eigen::MatrixXd> hidden;  // tanh outputs between head layers
    Eigen::MatrixXd output;
};

/// Activations of one (possibly dropped-out) view through both heads.
struct ViewCache {
    /// Inverted-dropout multipliers (0 or 1/(1-p)); empty means no dropout.
    Eigen::MatrixXd mask;
    Eigen::MatrixXd view;
    HeadCache ind;
    HeadCache ood;
    Eigen::MatrixXd logits;
};

struct ForwardPass {
    EncoderCache encoder;
    ViewCache view;
    const Eigen::MatrixXd& logits() const { return view.logits; }
};

EncoderCache encode(const JointModel& model, const Eigen::MatrixXd& batch);

/// Bernoulli keep-mask with inverted scaling: entries are 0 with probability p
/// and 1/(1-p) otherwise.
Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::uint64_t seed);

/// Runs both heads on a representation (already masked when training).
ViewCache heads_forward(const JointModel& model, const Eigen::MatrixXd& view,
                        Eigen::MatrixXd mask = {});

/// Full forward pass. dropout_p > 0 selects training mode; dropout_p == 0 is
/// evaluation mode and ignores the seed.
ForwardPass forward(const JointModel& model, const Eigen::MatrixXd& batch, double dropout_p = 0.0,
                    std::uint64_t seed = 0);

/// Accumulates parameter gradients of a loss whose derivative with respect
/// to the view logits is `dlogits`; returns the derivative with respect to the
/// undropped representation.
Eigen::MatrixXd heads_backward(const JointModel& model, const ViewCache& view,
                               const Eigen::MatrixXd& dlogits, JointModel& grads);

/// Accumulates encoder gradients given the derivative wrt the representation.
void encoder_backward(const JointModel& model, const EncoderCache& cache,
                      const Eigen::MatrixXd& drepr, JointModel& grads);

/// Gradients of a loss with derivative `dlogits` (wrt pass.logits()).
JointModel backward(const JointModel& model, const ForwardPass& pass,
                    const Eigen::MatrixXd& dlogits);

struct DropoutViews {
    Eigen::MatrixXd representation;
    Eigen::MatrixXd mask1;
    Eigen::MatrixXd mask2;
    Eigen::MatrixXd view1;
    Eigen::MatrixXd view2;
};

/// Two independent dropout masks over one encoder output.
DropoutViews dropout_views(const JointModel& model, const Eigen::MatrixXd& batch, double p,
                           std::uint64_t seed);

struct LossGrad {
    double loss = 0.0;
    Eigen::RowVectorXd grad;
};

/// -sum_c target_c log softmax(logits)_c and its gradient softmax - target.
/// Targets must be non-negative and sum to 1.
LossGrad cross_entropy(const Eigen::RowVectorXd& logits, const Eigen::RowVectorXd& target);

struct BatchLoss {
    double loss = 0.0;
    /// Derivative of `loss` wrt the logits (already divided by the normaliser).
    Eigen::MatrixXd dlogits;
};

/// Sum of row-wise cross-entropies divided by `normaliser`.
BatchLoss batch_cross_entropy(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& targets,
                              double normaliser);

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

/// One mini-batch of the joint IND + OOD objective.
///
/// IND rows go through one dropout view and are scored against their
/// (N+M)-dim label. Each OOD row has two views; view 1 is scored against
/// `ood_targets_for_view1` (the pseudo-label computed from view 2) and view 2
/// against `ood_targets_for_view2`. Targets are constants of the loss.
struct JointBatch {
    Eigen::MatrixXd ind_x;
    Eigen::MatrixXd ind_targets;
    Eigen::MatrixXd ind_mask;
    Eigen::MatrixXd ood_x;
    Eigen::MatrixXd ood_mask1;
    Eigen::MatrixXd ood_mask2;
    Eigen::MatrixXd ood_targets_for_view1;
    Eigen::MatrixXd ood_targets_for_view2;
};

struct JointLossResult {
    /// (sum_IND CE + sum_OOD (CE_1 + CE_2) / 2) / (B_IND + B_OOD)
    double loss = 0.0;
    JointModel grads;
};

JointLossResult joint_loss(const JointModel& model, const JointBatch& batch);

struct OptimizerState {
    JointModel velocity;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    long step = 0;

    static OptimizerState for_model(const JointModel& model, double momentum = 0.9,
                                    double weight_decay = 1e-4);
};

/// SGD with momentum and L2 weight decay folded into the velocity:
///   v <- momentum * v + g + weight_decay * theta
///   theta <- theta - lr * v
void sgd_step(JointModel& model, const JointModel& grads, OptimizerState& state, double lr);

struct ScheduleConfig {
    double lr_base = 0.4;
    double lr_min = 0.01;
    int warmup_epochs = 10;
    int total_epochs = 100;

    void validate() const;
};

/// Linear warm-up to lr_base, then cosine annealing down to lr_min at the
/// final epoch.
double lr_at(const ScheduleConfig& schedule, int epoch);

struct CheckpointInfo {
    std::uint64_t seed = 0;
    int epoch = 0;
};

/// One JSON header line followed by float32 little-endian parameter blocks in
/// parameter_blocks() order.
void save_checkpoint(const JointModel& model, const CheckpointInfo& info,
                     const std::filesystem::path& path);
std::pair<JointModel, CheckpointInfo> load_checkpoint(const std::filesystem::path& path);

}  // namespace gid
