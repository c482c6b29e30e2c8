#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "ftnn/dataset.hpp"
#include "ftnn/forward_thinking.hpp"
#include "ftnn/trainer.hpp"

namespace ftnn {

/// Architecture trained end-to-end with full chain-rule gradients; the
/// controlled comparison partner for the greedy pipeline.  Blocks run in
/// order; values are flattened on entry to any dense block or the head.
struct DeepNet {
    struct Block {
        std::variant<DenseLayer, ConvLayer> layer;
        bool pool_after = false;      // conv blocks only
        double dropout_after = 0.0;   // inverted dropout on the block output
    };
    std::vector<Block> blocks;
    OutputHead head;
    std::vector<std::size_t> input_shape;

    int n_classes() const { return static_cast<int>(head.n_classes()); }
};

/// The same architecture a stage schedule describes, with every parameter
/// trainable; init streams mirror make_stage_net, seeded per block.
DeepNet make_deep_net(const std::vector<StageSpec>& schedule, std::size_t final_fc_width, double final_fc_dropout,
                      const std::vector<std::size_t>& input_shape, int n_classes, std::uint64_t seed);

struct DeepCache {
    struct BlockCache {
        Tensor input;   // in the shape the block consumed
        Tensor cols;    // conv only
        Tensor pre;     // pre-activation
        std::vector<std::uint32_t> pool_argmax;
        std::vector<std::size_t> pool_in_shape;
        Tensor mask;    // dropout mask on the block output
        double drop_keep = 1.0;
        Tensor output;  // value passed to the next block (flattened if 2-D consumer)
    };
    std::vector<BlockCache> blocks;
    Tensor head_in;
    Tensor probs;
    std::vector<int> labels;
    std::uint64_t params_fingerprint = 0;
};

std::vector<Tensor*> trainable_params(DeepNet& net);
std::uint64_t params_fingerprint(const DeepNet& net);

/// Loss identical in form to the shallow trainer's; gradients for every
/// layer via reverse-mode chain rule.
std::pair<double, DeepCache> backprop_forward(const DeepNet& net, const Tensor& x, const std::vector<int>& labels,
                                              SeededRng& dropout_rng, Mode mode, double l2);
std::vector<Tensor> backprop_backward(const DeepNet& net, const DeepCache& cache, double l2);

Tensor deep_probs(const DeepNet& net, const Tensor& x);
double deep_accuracy(const DeepNet& net, const Dataset& data);

/// Same loop semantics (shuffling, optimizer, metrics) as train_shallow,
/// differing only in gradient scope.
std::vector<EpochMetrics> train_backprop(DeepNet& net, const Dataset& train, const Dataset& val,
                                         const TrainConfig& cfg, const Dataset* test = nullptr);

/// Central-difference check over every parameter of a DeepNet.
double deep_grad_check(const DeepNet& net, const Tensor& x, const std::vector<int>& labels, double epsilon,
                       double l2 = 0.0);

/// Side-by-side summary of two metric streams (cumulative wall clock,
/// accuracy-at-equal-time samples, bp/ft speed ratio).
struct RunSummary {
    double final_accuracy = 0.0;  // test when present, else validation
    double total_wall_seconds = 0.0;
    double seconds_per_epoch = 0.0;
    std::size_t epochs = 0;
};

struct ComparisonRow {
    double time = 0.0;  // cumulative seconds
    double acc_a = 0.0;
    double acc_b = 0.0;
};

struct ComparisonReport {
    RunSummary a, b;
    double speed_ratio = 0.0;  // b.total_wall_seconds / a.total_wall_seconds
    std::vector<ComparisonRow> timeline;
};

ComparisonReport compare_runs(const std::vector<EpochMetrics>& run_a, const std::vector<EpochMetrics>& run_b);

}  // namespace ftnn
