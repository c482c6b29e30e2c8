#include "ftnn/forward_thinking.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "ftnn/error.hpp"
#include "ftnn/serialize_util.hpp"

namespace ftnn {

namespace {

std::size_t flat_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

Tensor stage_forward_batch(const FrozenStage& stage, const Tensor& x) {
    if (const auto* dense = std::get_if<DenseLayer>(&stage.layer)) {
        const std::size_t batch = x.dim(0);
        return dense_forward(*dense, x.reshaped({batch, x.size() / batch}));
    }
    const auto& conv = std::get<ConvLayer>(stage.layer);
    Tensor out = conv_forward(conv, x);
    if (stage.pooled) out = maxpool_2x2(out);
    return out;
}

std::vector<std::size_t> frozen_output_shape(const FrozenStage& stage, const std::vector<std::size_t>& in) {
    if (const auto* dense = std::get_if<DenseLayer>(&stage.layer)) return {dense->out_width()};
    const auto& conv = std::get<ConvLayer>(stage.layer);
    std::size_t h = in[1], w = in[2];
    if (stage.pooled) {
        h /= 2;
        w /= 2;
    }
    return {conv.filter_count(), h, w};
}

}  // namespace

std::uint64_t stage_params_hash(const FrozenStage& stage) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    if (const auto* dense = std::get_if<DenseLayer>(&stage.layer)) {
        h = tensor_hash(dense->weights, h);
        h = tensor_hash(dense->biases, h);
    } else {
        const auto& conv = std::get<ConvLayer>(stage.layer);
        h = tensor_hash(conv.filters, h);
        h = tensor_hash(conv.biases, h);
    }
    return h;
}

bool should_stop(const std::vector<double>& history, const StoppingPolicy& policy) {
    if (history.empty()) throw DomainError("should_stop: history must be nonempty");
    if (policy.patience < 1 || policy.max_stages < 1) {
        throw DomainError("stopping policy: patience and max_stages must be at least 1");
    }
    if (history.size() >= policy.max_stages) return true;
    double best = history[0];
    std::size_t streak = 0;
    for (std::size_t i = 1; i < history.size(); ++i) {
        if (history[i] >= best + policy.min_improvement) {
            best = history[i];
            streak = 0;
        } else {
            ++streak;
        }
    }
    return streak >= policy.patience;
}

Dataset freeze_and_transform(const FrozenStage& stage, const Dataset& data, const std::string& spill_path) {
    if (data.empty()) throw DomainError("freeze_and_transform: empty dataset");
    const bool is_conv = std::holds_alternative<ConvLayer>(stage.layer);
    if (is_conv && data.sample_shape().size() != 3) {
        throw DimensionError("freeze_and_transform: conv stage expects [C x H x W] samples");
    }
    const std::vector<std::size_t> out_sample = frozen_output_shape(stage, data.sample_shape());
    const std::size_t out_size = flat_size(out_sample);

    constexpr std::size_t kChunk = 512;
    std::vector<std::size_t> idx;

    if (!spill_path.empty()) {
        // stream chunks straight into the spill file, then map it
        std::ofstream f(spill_path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + spill_path);
        ByteWriter header;
        header.raw("FTDATA1\0", 8);
        header.u32(1);
        header.u32(static_cast<std::uint32_t>(data.n_classes()));
        header.u32(static_cast<std::uint32_t>(out_sample.size()));
        header.u64(data.size());
        for (auto d : out_sample) header.u64(d);
        for (int y : data.labels()) header.u32(static_cast<std::uint32_t>(y));
        while (header.bytes.size() % 8 != 0) header.bytes.push_back(0);
        f.write(reinterpret_cast<const char*>(header.bytes.data()),
                static_cast<std::streamsize>(header.bytes.size()));
        for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
            const std::size_t end = std::min(data.size(), begin + kChunk);
            idx.resize(end - begin);
            std::iota(idx.begin(), idx.end(), begin);
            const Tensor out = stage_forward_batch(stage, data.gather(idx));
            f.write(reinterpret_cast<const char*>(out.data()),
                    static_cast<std::streamsize>(out.size() * sizeof(double)));
        }
        if (!f) throw IoError("short write to " + spill_path);
        f.close();
        return Dataset::load(spill_path, /*map=*/true);
    }

    std::vector<std::size_t> full_shape{data.size()};
    full_shape.insert(full_shape.end(), out_sample.begin(), out_sample.end());
    Tensor features(std::move(full_shape));
    for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
        const std::size_t end = std::min(data.size(), begin + kChunk);
        idx.resize(end - begin);
        std::iota(idx.begin(), idx.end(), begin);
        const Tensor out = stage_forward_batch(stage, data.gather(idx));
        std::copy(out.data(), out.data() + out.size(), features.data() + begin * out_size);
    }
    return Dataset(std::move(features), data.labels(), data.n_classes());
}

std::vector<std::size_t> stage_output_shape(const StageSpec& spec, const std::vector<std::size_t>& input_shape) {
    if (const auto* dense = std::get_if<StageSpec::Dense>(&spec.kind)) return {dense->width};
    const auto& conv = std::get<StageSpec::Conv>(spec.kind);
    if (input_shape.size() != 3) throw DimensionError("conv stage expects [C x H x W] input");
    std::size_t h = input_shape[1], w = input_shape[2];
    if (conv.with_pool) {
        if (h < 2 || w < 2) throw DimensionError("conv stage with pooling needs spatial dims of at least 2");
        h /= 2;
        w /= 2;
    }
    return {conv.filters, h, w};
}

ShallowNet make_stage_net(const StageSpec& spec, const std::vector<std::size_t>& input_shape, int n_classes) {
    ShallowNet net;
    net.input_shape = input_shape;
    SeededRng stage_rng(SeededRng::derive(spec.train.seed, streams::stage_init));
    std::size_t stage_out;
    if (const auto* dense = std::get_if<StageSpec::Dense>(&spec.kind)) {
        if (dense->width == 0) throw DomainError("dense stage width must be positive");
        net.stage = make_dense_layer(flat_size(input_shape), dense->width, Activation::relu, stage_rng);
        stage_out = dense->width;
    } else {
        const auto& conv = std::get<StageSpec::Conv>(spec.kind);
        if (conv.filters == 0) throw DomainError("conv stage filter count must be positive");
        if (input_shape.size() != 3) throw DimensionError("conv stage expects [C x H x W] input");
        net.stage = make_conv_layer(input_shape[0], conv.filters, stage_rng);
        net.stage_pool = conv.with_pool;
        stage_out = flat_size(stage_output_shape(spec, input_shape));
    }
    net.stage_dropout.rate = spec.stage_dropout;
    net.fc_dropout.rate = spec.fc_dropout;
    if (spec.head_hidden_width > 0) {
        SeededRng fc_rng(SeededRng::derive(spec.train.seed, streams::fc_init));
        net.intermediate_fc = make_dense_layer(stage_out, spec.head_hidden_width, Activation::relu, fc_rng);
        stage_out = spec.head_hidden_width;
    }
    SeededRng head_rng(SeededRng::derive(spec.train.seed, streams::head_init));
    net.head = make_output_head(stage_out, static_cast<std::size_t>(n_classes), head_rng);
    return net;
}

namespace {

ForwardThinkingResult run_pipeline(const Dataset& train, const Dataset& val,
                                   const std::vector<StageSpec>& schedule, const StoppingPolicy& policy,
                                   const TrainConfig* head_config, bool keep_last_head, const Dataset* test,
                                   const std::string& spill_dir) {
    if (schedule.empty()) throw DomainError("forward thinking: schedule must be nonempty");
    if (train.empty() || val.empty()) throw DomainError("forward thinking: datasets must be nonempty");
    if (train.n_classes() != val.n_classes()) throw DimensionError("train/val class counts disagree");

    StoppingPolicy effective = policy;
    effective.max_stages = std::min(effective.max_stages, schedule.size());

    ForwardThinkingResult result;
    result.model.input_shape = train.sample_shape();
    result.model.n_classes = train.n_classes();

    Dataset cur_train = train;
    Dataset cur_val = val;
    Dataset cur_test;
    if (test != nullptr) cur_test = *test;

    auto spill_path = [&](std::size_t stage_idx, const char* role) -> std::string {
        if (spill_dir.empty()) return {};
        return (std::filesystem::path(spill_dir) / ("stage" + std::to_string(stage_idx) + "_" + role + ".ftd"))
            .string();
    };

    std::vector<double> history;
    ShallowNet net;  // survives the loop so the conv pipeline can keep the last head
    for (std::size_t k = 0; k < schedule.size(); ++k) {
        const StageSpec& spec = schedule[k];
        net = make_stage_net(spec, cur_train.sample_shape(), cur_train.n_classes());
        PhaseMetrics pm;
        pm.phase = "stage";
        pm.stage = k + 1;
        pm.epochs = train_shallow(net, cur_train, cur_val, spec.train, test != nullptr ? &cur_test : nullptr);

        FrozenStage frozen;
        frozen.layer = *net.stage;
        frozen.pooled = net.stage_pool;
        frozen.index = k + 1;
        frozen.frozen_hash = stage_params_hash(frozen);
        result.model.stages.push_back(frozen);
        const EpochMetrics stage_tail = pm.epochs.empty() ? EpochMetrics{} : pm.epochs.back();
        result.phases.push_back(std::move(pm));
        result.stages_trained = k + 1;

        const FrozenStage& tail = result.model.stages.back();
        const auto t0 = std::chrono::steady_clock::now();
        cur_train = freeze_and_transform(tail, cur_train, spill_path(k + 1, "train"));
        cur_val = freeze_and_transform(tail, cur_val, spill_path(k + 1, "val"));
        if (test != nullptr) cur_test = freeze_and_transform(tail, cur_test, spill_path(k + 1, "test"));
        // the transform is part of the pipeline's wall clock; parameters do
        // not change, so the accuracies simply carry over
        PhaseMetrics transform;
        transform.phase = "transform";
        transform.stage = k + 1;
        EpochMetrics tm = stage_tail;
        tm.epoch = 0;
        tm.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        transform.epochs.push_back(tm);
        result.phases.push_back(std::move(transform));

        history.push_back(stage_tail.val_accuracy);
        if (k + 1 < schedule.size() && should_stop(history, effective)) {
            result.stopped_early = true;
            break;
        }
    }

    if (keep_last_head) {
        if (!net.intermediate_fc) {
            throw ContractError("conv pipeline expects an intermediate FC before the head");
        }
        result.model.final_fc = net.intermediate_fc;
        result.model.head = net.head;
    } else {
        ShallowNet head_net;
        head_net.input_shape = cur_train.sample_shape();
        SeededRng head_rng(SeededRng::derive(head_config->seed, streams::head_init));
        head_net.head = make_output_head(cur_train.sample_size(),
                                         static_cast<std::size_t>(cur_train.n_classes()), head_rng);
        PhaseMetrics pm;
        pm.phase = "head";
        pm.stage = 0;
        pm.epochs = train_shallow(head_net, cur_train, cur_val, *head_config,
                                  test != nullptr ? &cur_test : nullptr);
        result.model.head = head_net.head;
        result.phases.push_back(std::move(pm));
    }

    for (const FrozenStage& stage : result.model.stages) {
        if (stage_params_hash(stage) != stage.frozen_hash) result.frozen_contract_ok = false;
    }
    return result;
}

}  // namespace

ForwardThinkingResult train_forward_thinking(const Dataset& train, const Dataset& val,
                                             const std::vector<StageSpec>& schedule,
                                             const StoppingPolicy& policy, const TrainConfig& head_config,
                                             const Dataset* test, const std::string& spill_dir) {
    for (const StageSpec& spec : schedule) {
        if (!std::holds_alternative<StageSpec::Dense>(spec.kind)) {
            throw DomainError("train_forward_thinking: dense schedule expected (use the conv variant)");
        }
    }
    return run_pipeline(train, val, schedule, policy, &head_config, /*keep_last_head=*/false, test, spill_dir);
}

ForwardThinkingResult train_forward_thinking_conv(const Dataset& train, const Dataset& val,
                                                  const std::vector<StageSpec>& schedule,
                                                  const StoppingPolicy& policy, const Dataset* test,
                                                  const std::string& spill_dir) {
    if (train.sample_shape().size() != 3) {
        throw DimensionError("train_forward_thinking_conv: image-shaped dataset [C x H x W] required");
    }
    for (const StageSpec& spec : schedule) {
        if (!std::holds_alternative<StageSpec::Conv>(spec.kind)) {
            throw DomainError("train_forward_thinking_conv: conv schedule expected");
        }
        if (spec.head_hidden_width == 0) {
            throw DomainError("train_forward_thinking_conv: stages need head_hidden_width (the kept FC)");
        }
    }
    return run_pipeline(train, val, schedule, policy, nullptr, /*keep_last_head=*/true, test, spill_dir);
}

Tensor predict_proba(const StackedModel& model, const Tensor& x) {
    Tensor cur = x;
    for (const FrozenStage& stage : model.stages) {
        cur = stage_forward_batch(stage, cur);
    }
    const std::size_t batch = cur.dim(0);
    cur = std::move(cur).reshaped({batch, cur.size() / batch});
    if (model.final_fc) cur = dense_forward(*model.final_fc, cur);
    return softmax_forward(model.head, cur);
}

std::vector<int> predict(const StackedModel& model, const Tensor& x) {
    return argmax_rows(predict_proba(model, x));
}

double evaluate(const StackedModel& model, const Dataset& data) {
    if (data.empty()) throw DomainError("evaluate: empty dataset");
    constexpr std::size_t kChunk = 512;
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
        const std::size_t end = std::min(data.size(), begin + kChunk);
        idx.resize(end - begin);
        std::iota(idx.begin(), idx.end(), begin);
        const std::vector<int> pred = predict(model, data.gather(idx));
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] == data.labels()[begin + i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace ftnn
