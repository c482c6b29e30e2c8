#include "ftnn/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

#include "ftnn/error.hpp"
#include "reference_forward.hpp"

namespace ftnn {

namespace {

constexpr double kProbFloor = 1e-12;

std::size_t flat_size(std::span<const std::size_t> shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

void apply_relu_backward(Tensor& grad, const Tensor& pre) {
    double* g = grad.data();
    const double* p = pre.data();
    for (std::size_t i = 0; i < grad.size(); ++i)
        if (p[i] <= 0.0) g[i] = 0.0;
}

void add_l2_term(Tensor& grad, const Tensor& weights, double l2) {
    if (l2 == 0.0) return;
    double* g = grad.data();
    const double* w = weights.data();
    for (std::size_t i = 0; i < grad.size(); ++i) g[i] += 2.0 * l2 * w[i];
}

double squared_sum(const Tensor& t) {
    double s = 0.0;
    const double* p = t.data();
    for (std::size_t i = 0; i < t.size(); ++i) s += p[i] * p[i];
    return s;
}

/// dy masked and rescaled exactly as the forward pass was.
Tensor dropout_backward(const Tensor& dy, const Tensor& mask, double keep_fraction) {
    Tensor dx = dy;
    double* g = dx.data();
    const double* m = mask.data();
    for (std::size_t i = 0; i < dx.size(); ++i) g[i] = g[i] * m[i] / keep_fraction;
    return dx;
}

}  // namespace

void validate(const TrainConfig& cfg) {
    if (!(cfg.learning_rate > 0.0)) throw DomainError("train config: learning_rate must be positive");
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw DomainError("train config: momentum must lie in [0, 1)");
    if (cfg.batch_size < 1) throw DomainError("train config: batch_size must be at least 1");
    if (cfg.l2_coefficient < 0.0) throw DomainError("train config: l2_coefficient must be nonnegative");
}

double cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
    if (probs.rank() != 2 || probs.rows() != labels.size()) {
        throw DimensionError("cross_entropy: probs " + probs.shape_str() + " vs " +
                             std::to_string(labels.size()) + " labels");
    }
    const std::size_t n = probs.cols();
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= n) {
            throw DomainError("cross_entropy: label " + std::to_string(y) + " out of range [0, " +
                              std::to_string(n) + ")");
        }
        total -= std::log(std::max(probs.at(i, static_cast<std::size_t>(y)), kProbFloor));
    }
    return total / static_cast<double>(labels.size());
}

std::vector<Tensor*> trainable_params(ShallowNet& net) {
    std::vector<Tensor*> out;
    if (net.stage) {
        if (auto* d = std::get_if<DenseLayer>(&*net.stage)) {
            out.push_back(&d->weights);
            out.push_back(&d->biases);
        } else {
            auto& c = std::get<ConvLayer>(*net.stage);
            out.push_back(&c.filters);
            out.push_back(&c.biases);
        }
    }
    if (net.intermediate_fc) {
        out.push_back(&net.intermediate_fc->weights);
        out.push_back(&net.intermediate_fc->biases);
    }
    out.push_back(&net.head.weights);
    out.push_back(&net.head.biases);
    return out;
}

std::vector<const Tensor*> trainable_params(const ShallowNet& net) {
    auto mut = trainable_params(const_cast<ShallowNet&>(net));
    return {mut.begin(), mut.end()};
}

std::uint64_t params_fingerprint(const ShallowNet& net) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const Tensor* t : trainable_params(net)) h = tensor_hash(*t, h);
    return h;
}

ForwardResult forward_loss(const ShallowNet& net, const Tensor& x, const std::vector<int>& labels,
                           SeededRng& dropout_rng, Mode mode, double l2) {
    ForwardResult res;
    ForwardCache& cache = res.cache;
    cache.labels = labels;
    cache.params_fingerprint = params_fingerprint(net);

    const std::size_t batch = x.dim(0);
    if (batch != labels.size()) throw DimensionError("forward_loss: batch size does not match label count");

    Tensor current;  // flattened [B x d] stage output or raw input
    if (net.stage && std::holds_alternative<ConvLayer>(*net.stage)) {
        const auto& conv = std::get<ConvLayer>(*net.stage);
        if (x.rank() != 4) throw DimensionError("forward_loss: conv stage expects [B x C x H x W] input");
        cache.x_image_shape = x.shape();
        cache.cols = im2col_3x3(x);
        cache.stage_pre = conv_preactivation(conv, x);
        Tensor act = cache.stage_pre;
        double* p = act.data();
        for (std::size_t i = 0; i < act.size(); ++i) p[i] = relu(p[i]);
        if (net.stage_pool) {
            cache.pool_in_shape = act.shape();
            MaxPoolResult pooled = maxpool_2x2_with_argmax(act);
            cache.pool_argmax = std::move(pooled.argmax);
            act = std::move(pooled.output);
        }
        const std::size_t d = act.size() / batch;
        current = std::move(act).reshaped({batch, d});
    } else if (net.stage) {
        const auto& dense = std::get<DenseLayer>(*net.stage);
        cache.x_flat = x.reshaped({batch, x.size() / batch});
        cache.stage_pre = dense_preactivation(dense, cache.x_flat);
        current = cache.stage_pre;
        if (dense.activation == Activation::relu) {
            double* p = current.data();
            for (std::size_t i = 0; i < current.size(); ++i) p[i] = relu(p[i]);
        }
    } else {
        cache.x_flat = x.reshaped({batch, x.size() / batch});
        current = cache.x_flat;
    }

    if (net.stage) {
        cache.stage_out = current;
        DropoutResult drop = dropout_forward(current, net.stage_dropout, dropout_rng, mode);
        cache.stage_mask = std::move(drop.mask);
        cache.stage_drop_keep =
            (mode == Mode::train && net.stage_dropout.rate > 0.0) ? 1.0 - net.stage_dropout.rate : 1.0;
        cache.stage_dropped = std::move(drop.output);
        current = cache.stage_dropped;
    } else {
        cache.stage_dropped = current;
    }

    if (net.intermediate_fc) {
        cache.fc_pre = dense_preactivation(*net.intermediate_fc, current);
        Tensor act = cache.fc_pre;
        if (net.intermediate_fc->activation == Activation::relu) {
            double* p = act.data();
            for (std::size_t i = 0; i < act.size(); ++i) p[i] = relu(p[i]);
        }
        DropoutResult drop = dropout_forward(act, net.fc_dropout, dropout_rng, mode);
        cache.fc_mask = std::move(drop.mask);
        cache.fc_drop_keep =
            (mode == Mode::train && net.fc_dropout.rate > 0.0) ? 1.0 - net.fc_dropout.rate : 1.0;
        cache.fc_dropped = std::move(drop.output);
        current = cache.fc_dropped;
    }

    cache.probs = softmax_forward(net.head, current);

    double loss = cross_entropy(cache.probs, labels);
    if (l2 != 0.0) {
        double sq = squared_sum(net.head.weights);
        if (net.intermediate_fc) sq += squared_sum(net.intermediate_fc->weights);
        if (net.stage) {
            if (auto* d = std::get_if<DenseLayer>(&*net.stage)) {
                sq += squared_sum(d->weights);
            } else {
                sq += squared_sum(std::get<ConvLayer>(*net.stage).filters);
            }
        }
        loss += l2 * sq;
    }
    res.loss = loss;
    return res;
}

std::vector<Tensor> backward(const ShallowNet& net, const ForwardCache& cache, double l2) {
    if (cache.params_fingerprint != params_fingerprint(net)) {
        throw ContractError("backward: cache is stale, net parameters changed since forward_loss");
    }
    const std::size_t batch = cache.probs.rows();
    const double inv_batch = 1.0 / static_cast<double>(batch);

    // softmax + cross-entropy: dlogits = (probs - onehot) / batch
    Tensor dlogits = cache.probs;
    for (std::size_t i = 0; i < batch; ++i) {
        dlogits.at(i, static_cast<std::size_t>(cache.labels[i])) -= 1.0;
    }
    {
        double* p = dlogits.data();
        for (std::size_t i = 0; i < dlogits.size(); ++i) p[i] *= inv_batch;
    }

    const Tensor& head_in = net.intermediate_fc ? cache.fc_dropped : cache.stage_dropped;
    Tensor d_head_w = matmul_transposed_a(dlogits, head_in);
    add_l2_term(d_head_w, net.head.weights, l2);
    Tensor d_head_b = column_sums(dlogits);
    Tensor d_current = matmul(dlogits, net.head.weights);

    std::vector<Tensor> grads;  // assembled back-to-front, reversed at the end
    grads.push_back(std::move(d_head_b));
    grads.push_back(std::move(d_head_w));

    if (net.intermediate_fc) {
        Tensor d_fc_act = dropout_backward(d_current, cache.fc_mask, cache.fc_drop_keep);
        if (net.intermediate_fc->activation == Activation::relu) apply_relu_backward(d_fc_act, cache.fc_pre);
        Tensor d_fc_w = matmul_transposed_a(d_fc_act, cache.stage_dropped);
        add_l2_term(d_fc_w, net.intermediate_fc->weights, l2);
        Tensor d_fc_b = column_sums(d_fc_act);
        d_current = matmul(d_fc_act, net.intermediate_fc->weights);
        grads.push_back(std::move(d_fc_b));
        grads.push_back(std::move(d_fc_w));
    }

    if (net.stage) {
        Tensor d_stage_out = dropout_backward(d_current, cache.stage_mask, cache.stage_drop_keep);
        if (auto* dl = std::get_if<DenseLayer>(&*net.stage)) {
            if (dl->activation == Activation::relu) apply_relu_backward(d_stage_out, cache.stage_pre);
            Tensor d_w = matmul_transposed_a(d_stage_out, cache.x_flat);
            add_l2_term(d_w, dl->weights, l2);
            Tensor d_b = column_sums(d_stage_out);
            grads.push_back(std::move(d_b));
            grads.push_back(std::move(d_w));
        } else {
            const auto& conv = std::get<ConvLayer>(*net.stage);
            const std::size_t f = conv.filter_count(), c = conv.in_channels();
            Tensor d_act;
            if (net.stage_pool) {
                d_act = Tensor(cache.pool_in_shape);
                double* pd = d_act.data();
                const double* ps = d_stage_out.data();
                for (std::size_t i = 0; i < cache.pool_argmax.size(); ++i) {
                    pd[cache.pool_argmax[i]] += ps[i];
                }
            } else {
                d_act = d_stage_out.reshaped(cache.stage_pre.shape());
            }
            apply_relu_backward(d_act, cache.stage_pre);
            Tensor d_rows = to_position_major(d_act);
            Tensor d_filters = matmul_transposed_a(d_rows, cache.cols).reshaped({f, c, 3, 3});
            add_l2_term(d_filters, conv.filters, l2);
            Tensor d_bias({f});
            {
                const std::size_t hw = cache.stage_pre.dim(2) * cache.stage_pre.dim(3);
                const std::size_t b = cache.stage_pre.dim(0);
                const double* pg = d_act.data();
                double* pb = d_bias.data();
                for (std::size_t bi = 0; bi < b; ++bi)
                    for (std::size_t fi = 0; fi < f; ++fi) {
                        const double* src = pg + (bi * f + fi) * hw;
                        double s = 0.0;
                        for (std::size_t k = 0; k < hw; ++k) s += src[k];
                        pb[fi] += s;
                    }
            }
            grads.push_back(std::move(d_bias));
            grads.push_back(std::move(d_filters));
        }
    }

    std::reverse(grads.begin(), grads.end());
    return grads;
}

void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, std::span<Tensor> velocity,
              const TrainConfig& cfg) {
    if (params.size() != grads.size() || params.size() != velocity.size()) {
        throw DimensionError("sgd_step: params/grads/velocity counts disagree");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& g = grads[k];
        Tensor& v = velocity[k];
        if (!p.same_shape(g) || !p.same_shape(v)) {
            throw DimensionError("sgd_step: shape mismatch at parameter " + std::to_string(k) + ": " +
                                 p.shape_str() + " vs grad " + g.shape_str() + " vs velocity " + v.shape_str());
        }
        double* pp = p.data();
        const double* pg = g.data();
        double* pv = v.data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            pv[i] = cfg.momentum * pv[i] - cfg.learning_rate * pg[i];
            pp[i] += pv[i];
        }
    }
}

Tensor shallow_probs(const ShallowNet& net, const Tensor& x) {
    SeededRng unused(0);
    ForwardResult res = forward_loss(net, x, std::vector<int>(x.dim(0), 0), unused, Mode::eval, 0.0);
    return std::move(res.cache.probs);
}

double shallow_accuracy(const ShallowNet& net, const Dataset& data) {
    if (data.empty()) throw DomainError("accuracy: empty dataset");
    constexpr std::size_t kChunk = 512;
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
        const std::size_t end = std::min(data.size(), begin + kChunk);
        idx.resize(end - begin);
        std::iota(idx.begin(), idx.end(), begin);
        const Tensor probs = shallow_probs(net, data.gather(idx));
        const std::vector<int> pred = argmax_rows(probs);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] == data.labels()[begin + i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<EpochMetrics> run_training_epochs(const Dataset& train, const Dataset& val, const Dataset* test,
                                              const TrainConfig& cfg, const TrainHooks& hooks) {
    validate(cfg);
    if (train.empty() || val.empty()) throw DomainError("training requires nonempty train and val datasets");

    SeededRng shuffle_rng(SeededRng::derive(cfg.seed, streams::shuffle));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<EpochMetrics> metrics;
    metrics.reserve(cfg.epochs);
    std::vector<std::size_t> batch_idx;
    std::vector<int> batch_labels;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            batch_idx.assign(order.begin() + static_cast<long>(begin), order.begin() + static_cast<long>(end));
            batch_labels.resize(batch_idx.size());
            for (std::size_t i = 0; i < batch_idx.size(); ++i) batch_labels[i] = train.labels()[batch_idx[i]];
            const Tensor x = train.gather(batch_idx);
            auto [batch_loss, batch_correct] = hooks.train_step(x, batch_labels);
            loss_sum += batch_loss * static_cast<double>(batch_idx.size());
            correct += batch_correct;
        }
        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = loss_sum / static_cast<double>(train.size());
        em.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
        em.val_accuracy = hooks.accuracy(val);
        if (test != nullptr) em.test_accuracy = hooks.accuracy(*test);
        em.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        metrics.push_back(em);
    }
    return metrics;
}

std::vector<EpochMetrics> train_shallow(ShallowNet& net, const Dataset& train, const Dataset& val,
                                        const TrainConfig& cfg, const Dataset* test) {
    if (train.empty() || val.empty()) throw DomainError("training requires nonempty train and val datasets");
    const std::size_t expect = flat_size(net.input_shape);
    if (train.sample_size() != expect || val.sample_size() != expect) {
        throw DimensionError("train_shallow: dataset sample size does not match net input shape");
    }
    SeededRng dropout_rng(SeededRng::derive(cfg.seed, streams::dropout));
    auto params = trainable_params(net);
    std::vector<Tensor> velocity;
    velocity.reserve(params.size());
    for (Tensor* p : params) velocity.emplace_back(p->shape());

    TrainHooks hooks;
    hooks.train_step = [&](const Tensor& x, const std::vector<int>& y) {
        ForwardResult res = forward_loss(net, x, y, dropout_rng, Mode::train, cfg.l2_coefficient);
        const std::vector<Tensor> grads = backward(net, res.cache, cfg.l2_coefficient);
        sgd_step(params, grads, velocity, cfg);
        const std::vector<int> pred = argmax_rows(res.cache.probs);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < pred.size(); ++i)
            if (pred[i] == y[i]) ++correct;
        return std::make_pair(res.loss, correct);
    };
    hooks.accuracy = [&](const Dataset& d) { return shallow_accuracy(net, d); };
    return run_training_epochs(train, val, test, cfg, hooks);
}

namespace {

double min_relu_clearance(const ShallowNet& net, const ForwardCache& cache) {
    double clearance = std::numeric_limits<double>::infinity();
    auto scan = [&](const Tensor& pre) {
        const double* p = pre.data();
        for (std::size_t i = 0; i < pre.size(); ++i) clearance = std::min(clearance, std::abs(p[i]));
    };
    bool stage_relu = false;
    if (net.stage) {
        stage_relu = std::holds_alternative<ConvLayer>(*net.stage) ||
                     std::get<DenseLayer>(*net.stage).activation == Activation::relu;
    }
    if (stage_relu && cache.stage_pre.size() > 0) scan(cache.stage_pre);
    if (net.intermediate_fc && net.intermediate_fc->activation == Activation::relu && cache.fc_pre.size() > 0) {
        scan(cache.fc_pre);
    }
    return clearance;
}

}  // namespace

double grad_check(const ShallowNet& net, const Tensor& x, const std::vector<int>& labels, double epsilon,
                  double l2, double corrupt_delta) {
    if (!(epsilon > 0.0 && epsilon <= 1e-3)) throw DomainError("grad_check: epsilon must lie in (0, 1e-3]");

    ShallowNet probe = net;
    probe.stage_dropout.rate = 0.0;  // dropout disabled for the check
    probe.fc_dropout.rate = 0.0;

    SeededRng rng(0);
    const ForwardResult base = forward_loss(probe, x, labels, rng, Mode::eval, l2);
    std::vector<Tensor> analytic = backward(probe, base.cache, l2);
    if (corrupt_delta != 0.0) analytic[0][0] += corrupt_delta;

    // central differences on the independent naive-loop evaluator, in
    // extended precision, so the comparison measures gradient correctness
    // rather than kernel summation round-off
    auto params = trainable_params(probe);
    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double saved = p[i];
            p[i] = saved + epsilon;
            const long double up = detail::reference_shallow_loss<long double>(probe, x, labels, l2);
            p[i] = saved - epsilon;
            const long double down = detail::reference_shallow_loss<long double>(probe, x, labels, l2);
            p[i] = saved;
            const double numeric = static_cast<double>((up - down) / (2.0L * epsilon));
            const double a = analytic[k][i];
            const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

namespace {

/// Build a random batch whose ReLU pre-activations stay clear of the kink.
template <typename MakeNet>
double preset_grad_check(std::uint64_t seed, std::size_t batch, const std::vector<std::size_t>& sample_shape,
                         int n_classes, double corrupt_delta, const MakeNet& make_net) {
    for (std::uint64_t attempt = 0;; ++attempt) {
        SeededRng rng(SeededRng::derive(seed, 0xC0DE + attempt));
        ShallowNet net = make_net(rng);
        std::vector<std::size_t> shape{batch};
        shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
        Tensor x = uniform_init(rng, shape, 1.0);
        std::vector<int> labels(batch);
        for (auto& y : labels) y = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n_classes)));

        SeededRng probe_rng(0);
        const ForwardResult probe = forward_loss(net, x, labels, probe_rng, Mode::eval, 1e-4);
        if (min_relu_clearance(net, probe.cache) < 1e-6 && attempt < 100) continue;
        return grad_check(net, x, labels, 1e-6, 1e-4, corrupt_delta);
    }
}

}  // namespace

double grad_check_dense_preset(std::uint64_t seed, double corrupt_delta) {
    return preset_grad_check(seed, 6, {64}, 8, corrupt_delta, [](SeededRng& rng) {
        ShallowNet net;
        net.input_shape = {64};
        net.stage = make_dense_layer(64, 24, Activation::relu, rng);
        net.head = make_output_head(24, 8, rng);
        return net;
    });
}

double grad_check_conv_preset(std::uint64_t seed, double corrupt_delta) {
    return preset_grad_check(seed, 4, {1, 8, 8}, 3, corrupt_delta, [](SeededRng& rng) {
        ShallowNet net;
        net.input_shape = {1, 8, 8};
        net.stage = make_conv_layer(1, 4, rng);
        net.stage_pool = true;
        net.stage_dropout.rate = 0.0;
        net.intermediate_fc = make_dense_layer(4 * 4 * 4, 16, Activation::relu, rng);
        net.head = make_output_head(16, 3, rng);
        return net;
    });
}

}  // namespace ftnn
