#include "ftnn/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "ftnn/error.hpp"
#include "reference_forward.hpp"

namespace ftnn {

namespace {

std::size_t flat_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

void relu_inplace(Tensor& t) {
    double* p = t.data();
    for (std::size_t i = 0; i < t.size(); ++i) p[i] = relu(p[i]);
}

void relu_backward_inplace(Tensor& grad, const Tensor& pre) {
    double* g = grad.data();
    const double* p = pre.data();
    for (std::size_t i = 0; i < grad.size(); ++i)
        if (p[i] <= 0.0) g[i] = 0.0;
}

void add_l2(Tensor& grad, const Tensor& weights, double l2) {
    if (l2 == 0.0) return;
    double* g = grad.data();
    const double* w = weights.data();
    for (std::size_t i = 0; i < grad.size(); ++i) g[i] += 2.0 * l2 * w[i];
}

double squared_sum(const Tensor& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
    return s;
}

double run_accuracy(const EpochMetrics& m) { return m.test_accuracy >= 0.0 ? m.test_accuracy : m.val_accuracy; }

}  // namespace

DeepNet make_deep_net(const std::vector<StageSpec>& schedule, std::size_t final_fc_width,
                      double final_fc_dropout, const std::vector<std::size_t>& input_shape, int n_classes,
                      std::uint64_t seed) {
    if (schedule.empty()) throw DomainError("make_deep_net: schedule must be nonempty");
    DeepNet net;
    net.input_shape = input_shape;
    std::vector<std::size_t> shape = input_shape;
    for (std::size_t k = 0; k < schedule.size(); ++k) {
        const StageSpec& spec = schedule[k];
        SeededRng rng(SeededRng::derive(SeededRng::derive(seed, 0xB10C + k), streams::stage_init));
        DeepNet::Block block;
        if (const auto* dense = std::get_if<StageSpec::Dense>(&spec.kind)) {
            block.layer = make_dense_layer(flat_size(shape), dense->width, Activation::relu, rng);
            block.dropout_after = spec.stage_dropout;
            shape = {dense->width};
        } else {
            const auto& conv = std::get<StageSpec::Conv>(spec.kind);
            if (shape.size() != 3) throw DimensionError("make_deep_net: conv block expects [C x H x W]");
            block.layer = make_conv_layer(shape[0], conv.filters, rng);
            block.pool_after = conv.with_pool;
            // the stage dropout sits once before the FC, i.e. after the last conv
            block.dropout_after = (k + 1 == schedule.size()) ? spec.stage_dropout : 0.0;
            shape = stage_output_shape(spec, shape);
        }
        net.blocks.push_back(std::move(block));
    }
    if (final_fc_width > 0) {
        SeededRng rng(SeededRng::derive(SeededRng::derive(seed, 0xB10C + schedule.size()), streams::fc_init));
        DeepNet::Block block;
        block.layer = make_dense_layer(flat_size(shape), final_fc_width, Activation::relu, rng);
        block.dropout_after = final_fc_dropout;
        shape = {final_fc_width};
        net.blocks.push_back(std::move(block));
    }
    SeededRng head_rng(SeededRng::derive(seed, streams::head_init));
    net.head = make_output_head(flat_size(shape), static_cast<std::size_t>(n_classes), head_rng);
    return net;
}

std::vector<Tensor*> trainable_params(DeepNet& net) {
    std::vector<Tensor*> out;
    for (auto& block : net.blocks) {
        if (auto* d = std::get_if<DenseLayer>(&block.layer)) {
            out.push_back(&d->weights);
            out.push_back(&d->biases);
        } else {
            auto& c = std::get<ConvLayer>(block.layer);
            out.push_back(&c.filters);
            out.push_back(&c.biases);
        }
    }
    out.push_back(&net.head.weights);
    out.push_back(&net.head.biases);
    return out;
}

std::uint64_t params_fingerprint(const DeepNet& net) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const Tensor* t : trainable_params(const_cast<DeepNet&>(net))) h = tensor_hash(*t, h);
    return h;
}

std::pair<double, DeepCache> backprop_forward(const DeepNet& net, const Tensor& x,
                                              const std::vector<int>& labels, SeededRng& dropout_rng,
                                              Mode mode, double l2) {
    if (x.dim(0) != labels.size()) throw DimensionError("backprop_forward: batch/label count mismatch");
    DeepCache cache;
    cache.labels = labels;
    cache.params_fingerprint = params_fingerprint(net);
    cache.blocks.resize(net.blocks.size());

    const std::size_t batch = x.dim(0);
    Tensor cur = x;
    for (std::size_t i = 0; i < net.blocks.size(); ++i) {
        const auto& block = net.blocks[i];
        auto& bc = cache.blocks[i];
        Tensor act;
        if (const auto* dense = std::get_if<DenseLayer>(&block.layer)) {
            const std::size_t width = cur.size() / batch;
            bc.input = std::move(cur).reshaped({batch, width});
            bc.pre = dense_preactivation(*dense, bc.input);
            act = bc.pre;
            if (dense->activation == Activation::relu) relu_inplace(act);
        } else {
            const auto& conv = std::get<ConvLayer>(block.layer);
            if (cur.rank() != 4) throw DimensionError("backprop_forward: conv block expects [B x C x H x W]");
            bc.input = std::move(cur);
            bc.cols = im2col_3x3(bc.input);
            bc.pre = conv_preactivation(conv, bc.input);
            act = bc.pre;
            relu_inplace(act);
            if (block.pool_after) {
                bc.pool_in_shape = act.shape();
                MaxPoolResult pooled = maxpool_2x2_with_argmax(act);
                bc.pool_argmax = std::move(pooled.argmax);
                act = std::move(pooled.output);
            }
        }
        DropoutSpec spec{block.dropout_after};
        DropoutResult dropped = dropout_forward(act, spec, dropout_rng, mode);
        bc.mask = std::move(dropped.mask);
        bc.drop_keep =
            (mode == Mode::train && block.dropout_after > 0.0) ? 1.0 - block.dropout_after : 1.0;
        bc.output = std::move(dropped.output);
        cur = bc.output;
    }
    const std::size_t head_width = cur.size() / batch;
    cache.head_in = std::move(cur).reshaped({batch, head_width});
    cache.probs = softmax_forward(net.head, cache.head_in);

    double loss = cross_entropy(cache.probs, labels);
    if (l2 != 0.0) {
        double sq = squared_sum(net.head.weights);
        for (const auto& block : net.blocks) {
            if (const auto* d = std::get_if<DenseLayer>(&block.layer)) {
                sq += squared_sum(d->weights);
            } else {
                sq += squared_sum(std::get<ConvLayer>(block.layer).filters);
            }
        }
        loss += l2 * sq;
    }
    return {loss, std::move(cache)};
}

std::vector<Tensor> backprop_backward(const DeepNet& net, const DeepCache& cache, double l2) {
    if (cache.params_fingerprint != params_fingerprint(net)) {
        throw ContractError("backprop_backward: cache is stale, net parameters changed");
    }
    const std::size_t batch = cache.probs.rows();
    Tensor dlogits = cache.probs;
    for (std::size_t i = 0; i < batch; ++i) {
        dlogits.at(i, static_cast<std::size_t>(cache.labels[i])) -= 1.0;
    }
    {
        const double inv_batch = 1.0 / static_cast<double>(batch);
        double* p = dlogits.data();
        for (std::size_t i = 0; i < dlogits.size(); ++i) p[i] *= inv_batch;
    }

    std::vector<Tensor> grads;  // back-to-front, reversed at the end
    Tensor d_head_w = matmul_transposed_a(dlogits, cache.head_in);
    add_l2(d_head_w, net.head.weights, l2);
    grads.push_back(column_sums(dlogits));
    grads.push_back(std::move(d_head_w));

    Tensor d = matmul(dlogits, net.head.weights);
    for (std::size_t ri = net.blocks.size(); ri-- > 0;) {
        const auto& block = net.blocks[ri];
        const auto& bc = cache.blocks[ri];
        d.set_shape(bc.output.shape());
        if (bc.drop_keep != 1.0 || block.dropout_after > 0.0) {
            double* g = d.data();
            const double* m = bc.mask.data();
            for (std::size_t i = 0; i < d.size(); ++i) g[i] = g[i] * m[i] / bc.drop_keep;
        }
        const bool need_dx = ri > 0;
        if (const auto* dense = std::get_if<DenseLayer>(&block.layer)) {
            if (dense->activation == Activation::relu) relu_backward_inplace(d, bc.pre);
            Tensor d_w = matmul_transposed_a(d, bc.input);
            add_l2(d_w, dense->weights, l2);
            grads.push_back(column_sums(d));
            grads.push_back(std::move(d_w));
            if (need_dx) d = matmul(d, dense->weights);
        } else {
            const auto& conv = std::get<ConvLayer>(block.layer);
            const std::size_t f = conv.filter_count(), c = conv.in_channels();
            Tensor d_act;
            if (block.pool_after) {
                d_act = Tensor(bc.pool_in_shape);
                double* pd = d_act.data();
                const double* ps = d.data();
                for (std::size_t i = 0; i < bc.pool_argmax.size(); ++i) pd[bc.pool_argmax[i]] += ps[i];
            } else {
                d_act = d.reshaped(bc.pre.shape());
            }
            relu_backward_inplace(d_act, bc.pre);
            Tensor d_bias({f});
            {
                const std::size_t hw = bc.pre.dim(2) * bc.pre.dim(3);
                const double* pg = d_act.data();
                double* pb = d_bias.data();
                for (std::size_t bi = 0; bi < bc.pre.dim(0); ++bi)
                    for (std::size_t fi = 0; fi < f; ++fi) {
                        const double* src = pg + (bi * f + fi) * hw;
                        double s = 0.0;
                        for (std::size_t k = 0; k < hw; ++k) s += src[k];
                        pb[fi] += s;
                    }
            }
            Tensor d_rows = to_position_major(d_act);
            Tensor d_filters = matmul_transposed_a(d_rows, bc.cols).reshaped({f, c, 3, 3});
            add_l2(d_filters, conv.filters, l2);
            grads.push_back(std::move(d_bias));
            grads.push_back(std::move(d_filters));
            if (need_dx) {
                const Tensor flat = conv.filters.reshaped({f, c * 9});
                const Tensor d_cols = matmul(d_rows, flat);
                d = col2im_3x3(d_cols, bc.input.dim(0), c, bc.input.dim(2), bc.input.dim(3));
            }
        }
        if (need_dx) d.set_shape(cache.blocks[ri - 1].output.shape());
    }
    std::reverse(grads.begin(), grads.end());
    return grads;
}

Tensor deep_probs(const DeepNet& net, const Tensor& x) {
    SeededRng unused(0);
    auto [loss, cache] = backprop_forward(net, x, std::vector<int>(x.dim(0), 0), unused, Mode::eval, 0.0);
    (void)loss;
    return std::move(cache.probs);
}

double deep_accuracy(const DeepNet& net, const Dataset& data) {
    if (data.empty()) throw DomainError("accuracy: empty dataset");
    constexpr std::size_t kChunk = 512;
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
        const std::size_t end = std::min(data.size(), begin + kChunk);
        idx.resize(end - begin);
        std::iota(idx.begin(), idx.end(), begin);
        const std::vector<int> pred = argmax_rows(deep_probs(net, data.gather(idx)));
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] == data.labels()[begin + i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<EpochMetrics> train_backprop(DeepNet& net, const Dataset& train, const Dataset& val,
                                         const TrainConfig& cfg, const Dataset* test) {
    if (train.sample_size() != flat_size(net.input_shape)) {
        throw DimensionError("train_backprop: dataset sample size does not match net input shape");
    }
    SeededRng dropout_rng(SeededRng::derive(cfg.seed, streams::dropout));
    auto params = trainable_params(net);
    std::vector<Tensor> velocity;
    velocity.reserve(params.size());
    for (Tensor* p : params) velocity.emplace_back(p->shape());

    TrainHooks hooks;
    hooks.train_step = [&](const Tensor& x, const std::vector<int>& y) {
        auto [loss, cache] = backprop_forward(net, x, y, dropout_rng, Mode::train, cfg.l2_coefficient);
        const std::vector<Tensor> grads = backprop_backward(net, cache, cfg.l2_coefficient);
        sgd_step(params, grads, velocity, cfg);
        const std::vector<int> pred = argmax_rows(cache.probs);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < pred.size(); ++i)
            if (pred[i] == y[i]) ++correct;
        return std::make_pair(loss, correct);
    };
    hooks.accuracy = [&](const Dataset& d) { return deep_accuracy(net, d); };
    return run_training_epochs(train, val, test, cfg, hooks);
}

double deep_grad_check(const DeepNet& net, const Tensor& x, const std::vector<int>& labels, double epsilon,
                       double l2) {
    if (!(epsilon > 0.0 && epsilon <= 1e-3)) throw DomainError("deep_grad_check: epsilon must lie in (0, 1e-3]");
    DeepNet probe = net;
    for (auto& block : probe.blocks) block.dropout_after = 0.0;

    SeededRng rng(0);
    auto [base_loss, cache] = backprop_forward(probe, x, labels, rng, Mode::eval, l2);
    (void)base_loss;
    const std::vector<Tensor> analytic = backprop_backward(probe, cache, l2);

    auto params = trainable_params(probe);
    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double saved = p[i];
            p[i] = saved + epsilon;
            const long double up = detail::reference_deep_loss<long double>(probe, x, labels, l2);
            p[i] = saved - epsilon;
            const long double down = detail::reference_deep_loss<long double>(probe, x, labels, l2);
            p[i] = saved;
            const double numeric = static_cast<double>((up - down) / (2.0L * epsilon));
            const double a = analytic[k][i];
            const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

ComparisonReport compare_runs(const std::vector<EpochMetrics>& run_a, const std::vector<EpochMetrics>& run_b) {
    if (run_a.empty() || run_b.empty()) throw DomainError("compare_runs: both metric lists must be nonempty");
    auto summarize = [](const std::vector<EpochMetrics>& run) {
        RunSummary s;
        s.epochs = run.size();
        for (const auto& m : run) s.total_wall_seconds += m.wall_seconds;
        s.seconds_per_epoch = s.total_wall_seconds / static_cast<double>(run.size());
        s.final_accuracy = run_accuracy(run.back());
        return s;
    };
    ComparisonReport report;
    report.a = summarize(run_a);
    report.b = summarize(run_b);
    report.speed_ratio = report.a.total_wall_seconds > 0.0
                             ? report.b.total_wall_seconds / report.a.total_wall_seconds
                             : 0.0;

    auto cumulative = [](const std::vector<EpochMetrics>& run) {
        std::vector<std::pair<double, double>> points;  // (time, accuracy)
        double t = 0.0;
        for (const auto& m : run) {
            t += m.wall_seconds;
            points.emplace_back(t, run_accuracy(m));
        }
        return points;
    };
    const auto pa = cumulative(run_a);
    const auto pb = cumulative(run_b);
    std::set<double> times;
    for (const auto& [t, acc] : pa) times.insert(t);
    for (const auto& [t, acc] : pb) times.insert(t);
    auto acc_at = [](const std::vector<std::pair<double, double>>& pts, double t) {
        double acc = 0.0;  // no epoch finished yet
        for (const auto& [pt, pacc] : pts) {
            if (pt <= t) acc = pacc;
            else break;
        }
        return acc;
    };
    for (double t : times) {
        report.timeline.push_back({t, acc_at(pa, t), acc_at(pb, t)});
    }
    return report;
}

}  // namespace ftnn
