#include <cmath>

#include "doctest.h"

#include "ftnn/error.hpp"
#include "ftnn/forward_thinking.hpp"

using namespace ftnn;

namespace {

StageSpec dense_spec(std::size_t width, std::size_t epochs, std::uint64_t seed, double lr = 0.1) {
    StageSpec spec;
    spec.kind = StageSpec::Dense{width};
    spec.train.learning_rate = lr;
    spec.train.epochs = epochs;
    spec.train.batch_size = 32;
    spec.train.seed = seed;
    return spec;
}

FrozenStage identity_dense_stage(std::size_t width) {
    DenseLayer layer;
    layer.weights = Tensor::identity(width);
    layer.biases = Tensor({width});
    layer.activation = Activation::identity;
    FrozenStage stage;
    stage.layer = layer;
    stage.index = 1;
    stage.frozen_hash = 0;
    stage.frozen_hash = stage_params_hash(stage);
    return stage;
}

}  // namespace

TEST_CASE("freeze_and_transform: identity stage reproduces the dataset") {
    SeededRng rng(3);
    Tensor feats = uniform_init(rng, {10, 4}, 1.0);
    const Dataset data(feats, std::vector<int>(10, 0), 2);
    const Dataset out = freeze_and_transform(identity_dense_stage(4), data);
    REQUIRE(out.size() == data.size());
    for (std::size_t i = 0; i < data.size() * 4; ++i) {
        CHECK(out.feature_data()[i] == data.feature_data()[i]);
    }
    CHECK(out.labels() == data.labels());
}

TEST_CASE("freeze_and_transform: zero-weight relu stage zeroes features, keeps labels") {
    DenseLayer layer;
    layer.weights = Tensor({3, 4});
    layer.biases = Tensor({3});
    layer.activation = Activation::relu;
    FrozenStage stage;
    stage.layer = layer;
    SeededRng rng(5);
    const Dataset data(uniform_init(rng, {6, 4}, 1.0), {0, 1, 0, 1, 0, 1}, 2);
    const Dataset out = freeze_and_transform(stage, data);
    CHECK(out.sample_shape() == std::vector<std::size_t>{3});
    for (std::size_t i = 0; i < out.size() * 3; ++i) CHECK(out.feature_data()[i] == 0.0);
    CHECK(out.labels() == data.labels());
}

TEST_CASE("freeze_and_transform: matches per-sample forward oracle") {
    SeededRng rng(7);
    DenseLayer layer = make_dense_layer(5, 3, Activation::relu, rng);
    FrozenStage stage;
    stage.layer = layer;
    const Dataset data(uniform_init(rng, {9, 5}, 1.0), std::vector<int>(9, 1), 3);
    const Dataset out = freeze_and_transform(stage, data);
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::vector<std::size_t> one{i};
        const Tensor sample = data.gather(one);
        const Tensor expect = dense_forward(layer, sample);
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(std::abs(out.feature_data()[i * 3 + j] - expect[j]) < 1e-12);
        }
    }
}

TEST_CASE("freeze_and_transform: conv stage with pooling, and spill round trip") {
    SeededRng rng(9);
    ConvLayer conv = make_conv_layer(1, 2, rng);
    FrozenStage stage;
    stage.layer = conv;
    stage.pooled = true;
    const Dataset data(uniform_init(rng, {4, 1, 6, 6}, 1.0), {0, 1, 2, 0}, 3);
    const Dataset out = freeze_and_transform(stage, data);
    CHECK(out.sample_shape() == std::vector<std::size_t>{2, 3, 3});

    const std::string spill = "/tmp/ftnn_test_spill.ftd";
    const Dataset mapped = freeze_and_transform(stage, data, spill);
    CHECK(mapped.file_backed());
    REQUIRE(mapped.size() == out.size());
    for (std::size_t i = 0; i < out.size() * out.sample_size(); ++i) {
        CHECK(mapped.feature_data()[i] == out.feature_data()[i]);
    }
}

TEST_CASE("should_stop: spec cases") {
    StoppingPolicy policy;
    policy.min_improvement = 0.001;
    policy.patience = 2;
    policy.max_stages = 100;
    CHECK_FALSE(should_stop({0.90, 0.95, 0.96}, policy));
    CHECK(should_stop({0.95, 0.95, 0.95}, policy));
    CHECK_THROWS_AS(should_stop({}, policy), DomainError);
    StoppingPolicy capped;
    capped.max_stages = 3;
    CHECK(should_stop({0.1, 0.2, 0.3}, capped));
}

TEST_CASE("should_stop: randomized histories match a reference scan") {
    SeededRng rng(13);
    for (int trial = 0; trial < 200; ++trial) {
        StoppingPolicy policy;
        policy.min_improvement = rng.uniform(0.0, 0.05);
        policy.patience = 1 + rng.next_below(3);
        policy.max_stages = 1 + rng.next_below(8);
        std::vector<double> history(1 + rng.next_below(6));
        for (auto& h : history) h = rng.uniform(0.5, 1.0);

        // independent reference: recompute the non-improvement streak directly
        bool expect;
        if (history.size() >= policy.max_stages) {
            expect = true;
        } else {
            std::size_t streak = 0;
            double best = history[0];
            for (std::size_t i = 1; i < history.size(); ++i) {
                if (history[i] - best >= policy.min_improvement) {
                    best = history[i];
                    streak = 0;
                } else {
                    streak += 1;
                }
            }
            expect = streak >= policy.patience;
        }
        CHECK(should_stop(history, policy) == expect);
    }
}

TEST_CASE("predict: identity stages with a head hardwired to class 0") {
    StackedModel model;
    model.input_shape = {3};
    model.n_classes = 2;
    model.stages.push_back(identity_dense_stage(3));
    model.stages.push_back(identity_dense_stage(3));
    model.head.weights = Tensor({2, 3});
    model.head.biases = Tensor({2}, {5.0, -5.0});
    SeededRng rng(15);
    const Tensor x = uniform_init(rng, {7, 3}, 1.0);
    const std::vector<int> pred = predict(model, x);
    for (int p : pred) CHECK(p == 0);
}

TEST_CASE("evaluate: all-correct toy case and confusion-matrix oracle") {
    StackedModel model;
    model.input_shape = {2};
    model.n_classes = 2;
    model.head.weights = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});
    model.head.biases = Tensor({2});
    Tensor feats({4, 2}, {3, -3, -3, 3, 5, 0, 0, 5});
    const Dataset data(feats, {0, 1, 0, 1}, 2);
    CHECK(evaluate(model, data) == 1.0);

    // confusion-matrix trace oracle on a mixed dataset
    Tensor mixed({4, 2}, {3, -3, 3, -3, -3, 3, -3, 3});
    const Dataset mixed_data(mixed, {0, 1, 1, 1}, 2);
    const std::vector<int> pred = predict(model, mixed_data.features_tensor());
    std::size_t confusion[2][2] = {{0, 0}, {0, 0}};
    for (std::size_t i = 0; i < 4; ++i) {
        confusion[mixed_data.labels()[i]][pred[i]] += 1;
    }
    const double trace = static_cast<double>(confusion[0][0] + confusion[1][1]) / 4.0;
    CHECK(evaluate(model, mixed_data) == doctest::Approx(trace));
    CHECK_THROWS_AS(evaluate(model, Dataset{}), DomainError);
}

TEST_CASE("evaluate: uniform predictor scores about 1/n_classes") {
    StackedModel model;
    model.input_shape = {2};
    model.n_classes = 10;
    model.head.weights = Tensor({10, 2});
    model.head.biases = Tensor({10});
    // ties resolve to class 0, so measure against a permuted-label dataset
    SeededRng rng(17);
    Tensor feats({10000, 2});
    std::vector<int> labels(10000);
    for (std::size_t i = 0; i < 10000; ++i) labels[i] = static_cast<int>(rng.next_below(10));
    const Dataset data(feats, labels, 10);
    CHECK(std::abs(evaluate(model, data) - 0.1) < 0.02);
}

TEST_CASE("single-stage schedule is bit-identical to a direct train_shallow run") {
    const Dataset all = synth_xor(400, 0.2, 19);
    auto [train, val] = split(all, 0.25, 21);

    std::vector<StageSpec> schedule{dense_spec(8, 6, 23)};
    TrainConfig head_cfg;
    head_cfg.epochs = 4;
    head_cfg.batch_size = 32;
    head_cfg.seed = 29;
    const ForwardThinkingResult res =
        train_forward_thinking(train, val, schedule, StoppingPolicy{}, head_cfg);

    // mirror the stage by hand with the same spec
    ShallowNet net = make_stage_net(schedule[0], train.sample_shape(), train.n_classes());
    const auto direct = train_shallow(net, train, val, schedule[0].train);

    REQUIRE(res.phases.size() == 3);  // stage + transform + head
    CHECK(res.phases[1].phase == "transform");
    const auto& stage_epochs = res.phases[0].epochs;
    REQUIRE(stage_epochs.size() == direct.size());
    for (std::size_t i = 0; i < direct.size(); ++i) {
        CHECK(stage_epochs[i].train_loss == direct[i].train_loss);
        CHECK(stage_epochs[i].train_accuracy == direct[i].train_accuracy);
        CHECK(stage_epochs[i].val_accuracy == direct[i].val_accuracy);
    }
    // and the frozen stage holds exactly the directly-trained parameters
    const auto& frozen = std::get<DenseLayer>(res.model.stages[0].layer);
    const auto& direct_stage = std::get<DenseLayer>(*net.stage);
    CHECK(tensor_hash(frozen.weights) == tensor_hash(direct_stage.weights));
    CHECK(tensor_hash(frozen.biases) == tensor_hash(direct_stage.biases));
}

TEST_CASE("xor: one 8-neuron stage separates what a bare head cannot") {
    const Dataset all = synth_xor(2000, 0.2, 31);
    auto [train, val] = split(all, 0.2, 33);

    // head-only control (linear classifier)
    ShallowNet head_only;
    head_only.input_shape = {2};
    SeededRng rng(SeededRng::derive(35, streams::head_init));
    head_only.head = make_output_head(2, 2, rng);
    TrainConfig head_cfg;
    head_cfg.epochs = 60;
    head_cfg.batch_size = 32;
    head_cfg.seed = 37;
    train_shallow(head_only, train, val, head_cfg);
    const double linear_acc = shallow_accuracy(head_only, val);
    CHECK(linear_acc <= 0.60);

    std::vector<StageSpec> schedule{dense_spec(8, 60, 39)};
    TrainConfig final_head;
    final_head.epochs = 30;
    final_head.batch_size = 32;
    final_head.seed = 41;
    const ForwardThinkingResult res =
        train_forward_thinking(train, val, schedule, StoppingPolicy{}, final_head);
    CHECK(evaluate(res.model, val) >= 0.95);
}

TEST_CASE("frozen contract and composition equivalence hold after a run") {
    const Dataset all = synth_xor(600, 0.2, 43);
    auto [train, val] = split(all, 0.25, 45);
    std::vector<StageSpec> schedule{dense_spec(8, 8, 47), dense_spec(6, 8, 49)};
    TrainConfig head_cfg;
    head_cfg.epochs = 6;
    head_cfg.seed = 51;
    head_cfg.batch_size = 32;
    const ForwardThinkingResult res =
        train_forward_thinking(train, val, schedule, StoppingPolicy{}, head_cfg);
    CHECK(res.frozen_contract_ok);
    for (const FrozenStage& stage : res.model.stages) {
        CHECK(stage_params_hash(stage) == stage.frozen_hash);
    }

    // composition equivalence: stage-by-stage transform vs direct predict
    Dataset transformed = val;
    for (const FrozenStage& stage : res.model.stages) {
        transformed = freeze_and_transform(stage, transformed);
    }
    StackedModel head_model;
    head_model.input_shape = transformed.sample_shape();
    head_model.n_classes = res.model.n_classes;
    head_model.head = res.model.head;
    const std::vector<int> direct = predict(res.model, val.features_tensor());
    const std::vector<int> composed = predict(head_model, transformed.features_tensor());
    CHECK(direct == composed);

    // pipeline shape bookkeeping
    CHECK(transformed.sample_shape() == std::vector<std::size_t>{6});
    CHECK(res.stages_trained == 2);
}

TEST_CASE("plateau policy stops stage growth early") {
    const Dataset all = synth_xor(400, 0.2, 53);
    auto [train, val] = split(all, 0.25, 55);
    // three identical stages; patience 1 and a huge min_improvement force a stop
    std::vector<StageSpec> schedule{dense_spec(8, 4, 57), dense_spec(8, 4, 59), dense_spec(8, 4, 61)};
    StoppingPolicy policy;
    policy.min_improvement = 0.5;  // unattainable improvement
    policy.patience = 1;
    TrainConfig head_cfg;
    head_cfg.epochs = 2;
    head_cfg.seed = 63;
    const ForwardThinkingResult res = train_forward_thinking(train, val, schedule, policy, head_cfg);
    CHECK(res.stopped_early);
    CHECK(res.stages_trained == 2);  // stage 2 failed to improve by 0.5
    CHECK(res.model.stages.size() == 2);
}

TEST_CASE("conv pipeline: separable synthetic image task") {
    // filled squares vs hollow squares on 8x8 canvases
    SeededRng rng(65);
    const std::size_t n = 500;
    Tensor feats({n, 1, 8, 8});
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const bool filled = (i % 2) == 0;
        labels[i] = filled ? 1 : 0;
        const std::size_t top = 1 + rng.next_below(3), left = 1 + rng.next_below(3);
        const std::size_t size = 3 + rng.next_below(3);
        double* img = feats.data() + i * 64;
        for (std::size_t r = top; r < std::min<std::size_t>(top + size, 8); ++r) {
            for (std::size_t c = left; c < std::min<std::size_t>(left + size, 8); ++c) {
                const bool border = r == top || c == left || r == std::min<std::size_t>(top + size, 8) - 1 ||
                                    c == std::min<std::size_t>(left + size, 8) - 1;
                img[r * 8 + c] = (filled || border) ? 1.0 : 0.0;
            }
        }
    }
    const Dataset all(std::move(feats), std::move(labels), 2);
    auto [train, val] = split(all, 0.2, 67);

    StageSpec spec;
    spec.kind = StageSpec::Conv{6, true};
    spec.head_hidden_width = 16;
    spec.train.learning_rate = 0.05;
    spec.train.epochs = 30;
    spec.train.batch_size = 25;
    spec.train.seed = 69;
    const ForwardThinkingResult res = train_forward_thinking_conv(train, val, {spec}, StoppingPolicy{});
    CHECK(res.model.final_fc.has_value());
    CHECK(evaluate(res.model, val) >= 0.95);
}

TEST_CASE("conv pipeline: delta-kernel stage makes stage 2 see the original images") {
    SeededRng rng(71);
    const Dataset data(uniform_init(rng, {12, 1, 6, 6}, 1.0), std::vector<int>(12, 0), 2);
    ConvLayer delta;
    delta.filters = Tensor({1, 1, 3, 3});
    delta.filters[4] = 1.0;
    delta.biases = Tensor({1});
    FrozenStage stage;
    stage.layer = delta;
    stage.pooled = false;
    Dataset abs_data = data;
    {
        // make inputs nonnegative so relu(identity conv) stays the identity
        Tensor feats = data.features_tensor();
        for (std::size_t i = 0; i < feats.size(); ++i) feats[i] = std::abs(feats[i]);
        abs_data = Dataset(std::move(feats), data.labels(), data.n_classes());
    }
    const Dataset transformed = freeze_and_transform(stage, abs_data);
    for (std::size_t i = 0; i < abs_data.size() * abs_data.sample_size(); ++i) {
        CHECK(transformed.feature_data()[i] == abs_data.feature_data()[i]);
    }
}

TEST_CASE("full ft run is reproducible end-to-end") {
    const Dataset all = synth_xor(400, 0.2, 73);
    auto [train, val] = split(all, 0.25, 75);
    std::vector<StageSpec> schedule{dense_spec(8, 5, 77), dense_spec(6, 5, 79)};
    TrainConfig head_cfg;
    head_cfg.epochs = 4;
    head_cfg.seed = 81;
    const ForwardThinkingResult a = train_forward_thinking(train, val, schedule, StoppingPolicy{}, head_cfg);
    const ForwardThinkingResult b = train_forward_thinking(train, val, schedule, StoppingPolicy{}, head_cfg);
    REQUIRE(a.phases.size() == b.phases.size());
    for (std::size_t p = 0; p < a.phases.size(); ++p) {
        REQUIRE(a.phases[p].epochs.size() == b.phases[p].epochs.size());
        for (std::size_t e = 0; e < a.phases[p].epochs.size(); ++e) {
            CHECK(a.phases[p].epochs[e].train_loss == b.phases[p].epochs[e].train_loss);
            CHECK(a.phases[p].epochs[e].val_accuracy == b.phases[p].epochs[e].val_accuracy);
        }
    }
    CHECK(tensor_hash(a.model.head.weights) == tensor_hash(b.model.head.weights));
}
