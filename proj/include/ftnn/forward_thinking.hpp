#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ftnn/dataset.hpp"
#include "ftnn/trainer.hpp"

namespace ftnn {

/// Recipe for one greedy stage: the trainable layer, the temporary head-side
/// layers used while training it, and the stage's own optimizer settings.
struct StageSpec {
    struct Dense {
        std::size_t width;
    };
    struct Conv {
        std::size_t filters;
        bool with_pool;
    };
    std::variant<Dense, Conv> kind{Dense{0}};
    /// Width of the non-frozen FC between stage and head (0 = head directly).
    std::size_t head_hidden_width = 0;
    double stage_dropout = 0.0;  // on the flattened stage output
    double fc_dropout = 0.0;     // between the FC and the head
    TrainConfig train;
};

/// A trained layer whose parameters are immutable from freeze time on.
struct FrozenStage {
    std::variant<DenseLayer, ConvLayer> layer;
    bool pooled = false;  // maxpool_2x2 folded into the stage transform
    std::size_t index = 0;
    std::uint64_t frozen_hash = 0;  // parameter hash taken at freeze time
};

std::uint64_t stage_params_hash(const FrozenStage& stage);

/// Frozen stages composed in order, with the final classifier on top.
struct StackedModel {
    std::vector<std::size_t> input_shape;
    int n_classes = 0;
    std::vector<FrozenStage> stages;
    std::optional<DenseLayer> final_fc;  // conv pipeline keeps the last trained FC
    OutputHead head;
    std::uint64_t seed = 0;
};

/// Plateau rule for growing the stack.
struct StoppingPolicy {
    double min_improvement = 0.001;  // validation-accuracy points
    std::size_t patience = 1;        // stages without improvement before stopping
    std::size_t max_stages = SIZE_MAX;
};

/// True when the best validation accuracy has not improved by at least
/// min_improvement for `patience` consecutive stages, or the stage count has
/// reached max_stages.
bool should_stop(const std::vector<double>& history, const StoppingPolicy& policy);

struct PhaseMetrics {
    std::string phase;      // "stage" or "head"
    std::size_t stage = 0;  // 1-based; 0 for the head phase
    std::vector<EpochMetrics> epochs;
};

struct ForwardThinkingResult {
    StackedModel model;
    std::vector<PhaseMetrics> phases;
    std::size_t stages_trained = 0;
    bool stopped_early = false;
    bool frozen_contract_ok = true;  // re-verified hashes of every frozen stage
};

/// Map a dataset through one frozen stage (activation and pooling included,
/// dropout excluded); labels carried over, output storage independent of the
/// input.  A nonempty spill_path streams features to that file and returns a
/// memory-mapped dataset.
Dataset freeze_and_transform(const FrozenStage& stage, const Dataset& data, const std::string& spill_path = "");

/// Build the per-stage shallow network for a spec (stage init from
/// streams::stage_init, FC from streams::fc_init, head from
/// streams::head_init, all hung off spec.train.seed).
ShallowNet make_stage_net(const StageSpec& spec, const std::vector<std::size_t>& input_shape, int n_classes);

/// Feature shape produced by a stage on the given input shape.
std::vector<std::size_t> stage_output_shape(const StageSpec& spec, const std::vector<std::size_t>& input_shape);

/// The greedy pipeline on flat features: train a stage, freeze it, map the
/// datasets forward, repeat, then train a fresh head on the final synthetic
/// dataset (every intermediate head is discarded).
ForwardThinkingResult train_forward_thinking(const Dataset& train, const Dataset& val,
                                             const std::vector<StageSpec>& schedule, const StoppingPolicy& policy,
                                             const TrainConfig& head_config, const Dataset* test = nullptr,
                                             const std::string& spill_dir = "");

/// Conv variant: each stage trains conv + pool + dropout + FC + head, but
/// only the conv stage (with its pooling) is frozen; the FC and head are
/// re-initialized per stage and the last trained pair is kept as the final
/// classifier.
ForwardThinkingResult train_forward_thinking_conv(const Dataset& train, const Dataset& val,
                                                  const std::vector<StageSpec>& schedule,
                                                  const StoppingPolicy& policy, const Dataset* test = nullptr,
                                                  const std::string& spill_dir = "");

/// Class probabilities / labels for a feature batch (dropout inactive).
Tensor predict_proba(const StackedModel& model, const Tensor& x);
std::vector<int> predict(const StackedModel& model, const Tensor& x);

/// Fraction of correct predictions, exact count / N.
double evaluate(const StackedModel& model, const Dataset& data);

}  // namespace ftnn
