#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "ftnn/dataset.hpp"
#include "ftnn/layers.hpp"

namespace ftnn {

/// Optimizer and loop hyperparameters for one training run.  Everything a
/// run consumes randomness for is derived from `seed`.
struct TrainConfig {
    double learning_rate = 0.1;
    double momentum = 0.9;
    std::size_t batch_size = 128;
    std::size_t epochs = 10;
    double l2_coefficient = 0.0;
    std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

/// Stream ids hung off TrainConfig::seed (see SeededRng::derive).
namespace streams {
inline constexpr std::uint64_t shuffle = 1;
inline constexpr std::uint64_t dropout = 2;
inline constexpr std::uint64_t stage_init = 3;
inline constexpr std::uint64_t fc_init = 4;
inline constexpr std::uint64_t head_init = 5;
}  // namespace streams

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;      // mean over minibatches as trained
    double train_accuracy = 0.0;  // accumulated over minibatches (dropout active)
    double val_accuracy = 0.0;
    double test_accuracy = -1.0;  // -1 when no test set is attached
    double wall_seconds = 0.0;
};

/// One trainable stage (dense or conv, optionally pooled), an optional
/// non-frozen FC layer, and a softmax head.  The per-stage subproblem of the
/// greedy pipeline; also usable head-only (no stage) for linear classifiers.
struct ShallowNet {
    std::optional<std::variant<DenseLayer, ConvLayer>> stage;
    bool stage_pool = false;      // maxpool_2x2 after a conv stage
    DropoutSpec stage_dropout;    // on the flattened stage output
    std::optional<DenseLayer> intermediate_fc;
    DropoutSpec fc_dropout;       // between intermediate_fc and head
    OutputHead head;
    std::vector<std::size_t> input_shape;  // per-sample

    int n_classes() const { return static_cast<int>(head.n_classes()); }
};

/// Everything backward() needs from the matching forward pass.
struct ForwardCache {
    Tensor x_flat;           // dense stage / head-only input [B x d]
    Tensor cols;             // conv: im2col of the input batch
    std::vector<std::size_t> x_image_shape;  // conv: [B x C x H x W]
    Tensor stage_pre;        // pre-activation of the stage
    std::vector<std::uint32_t> pool_argmax;
    std::vector<std::size_t> pool_in_shape;
    Tensor stage_out;        // flattened post-activation(+pool) [B x d_stage]
    Tensor stage_mask;       // dropout mask on stage_out
    double stage_drop_keep = 1.0;  // survivor fraction the forward divided by
    Tensor stage_dropped;
    Tensor fc_pre;
    Tensor fc_mask;
    double fc_drop_keep = 1.0;
    Tensor fc_dropped;
    Tensor probs;            // [B x n_classes]
    std::vector<int> labels;
    std::uint64_t params_fingerprint = 0;
};

struct ForwardResult {
    double loss = 0.0;
    ForwardCache cache;
};

/// Mean over the batch of -log(probs[i][label_i]), probabilities floored at
/// 1e-12 before the log.
double cross_entropy(const Tensor& probs, const std::vector<int>& labels);

/// Loss = cross_entropy + l2 * sum of squared weights (biases excluded).
ForwardResult forward_loss(const ShallowNet& net, const Tensor& x, const std::vector<int>& labels,
                           SeededRng& dropout_rng, Mode mode, double l2);

/// Trainable parameter tensors in a fixed documented order:
/// stage weights, stage biases, [fc weights, fc biases,] head weights, head biases.
std::vector<Tensor*> trainable_params(ShallowNet& net);
std::vector<const Tensor*> trainable_params(const ShallowNet& net);

/// FNV fingerprint of all trainable parameters; backward() rejects caches
/// whose fingerprint no longer matches the net.
std::uint64_t params_fingerprint(const ShallowNet& net);

/// Analytic gradients of the cached loss, ordered like trainable_params().
std::vector<Tensor> backward(const ShallowNet& net, const ForwardCache& cache, double l2);

/// Classical momentum: v <- momentum*v - lr*g; p <- p + v.
void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, std::span<Tensor> velocity,
              const TrainConfig& cfg);

/// Eval-mode class probabilities / accuracy.
Tensor shallow_probs(const ShallowNet& net, const Tensor& x);
double shallow_accuracy(const ShallowNet& net, const Dataset& data);

/// Shuffled-minibatch SGD for config.epochs epochs (last partial batch kept).
/// Deterministic given config.seed; does not mutate the datasets.
std::vector<EpochMetrics> train_shallow(ShallowNet& net, const Dataset& train, const Dataset& val,
                                        const TrainConfig& cfg, const Dataset* test = nullptr);

/// Shared epoch loop: both the shallow trainer and the end-to-end baseline
/// run through this, so shuffle streams and metric bookkeeping agree exactly.
struct TrainHooks {
    // returns (batch mean loss, correct predictions in batch)
    std::function<std::pair<double, std::size_t>(const Tensor& x, const std::vector<int>& y)> train_step;
    std::function<double(const Dataset&)> accuracy;
};
std::vector<EpochMetrics> run_training_epochs(const Dataset& train, const Dataset& val, const Dataset* test,
                                              const TrainConfig& cfg, const TrainHooks& hooks);

/// Max over all trainable parameters of the relative disagreement between
/// analytic gradients and central finite differences.  Dropout is disabled
/// for the check; epsilon must lie in (0, 1e-3].  corrupt_delta, when
/// nonzero, is added to one analytic gradient entry first (negative-control
/// hook for the CLI's --corrupt flag).
double grad_check(const ShallowNet& net, const Tensor& x, const std::vector<int>& labels, double epsilon,
                  double l2 = 0.0, double corrupt_delta = 0.0);

/// Randomized grad_check presets (used by the CLI and the acceptance suite).
/// Nets and batches are resampled until every ReLU pre-activation clears the
/// kink threshold 1e-6.
double grad_check_dense_preset(std::uint64_t seed, double corrupt_delta = 0.0);
double grad_check_conv_preset(std::uint64_t seed, double corrupt_delta = 0.0);

}  // namespace ftnn
