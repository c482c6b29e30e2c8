#pragma once

// Naive-loop loss evaluators used by the gradient checkers.  Deliberately
// independent of the kernel path (no im2col, no blocking, no shared code)
// and templated on the scalar type so finite differences can run in extended
// precision, keeping round-off out of the comparison.  Dropout is assumed
// disabled (the checkers zero the rates).

#include <algorithm>
#include <cmath>
#include <vector>

#include "ftnn/baseline.hpp"
#include "ftnn/trainer.hpp"

namespace ftnn::detail {

template <typename T>
struct RefValue {
    std::vector<T> data;
    std::size_t channels = 0, height = 0, width = 0;  // zero when flat
};

template <typename T>
void ref_dense(const DenseLayer& layer, const std::vector<T>& in, std::vector<T>& out) {
    const std::size_t n_out = layer.out_width(), n_in = layer.in_width();
    out.assign(n_out, T(0));
    for (std::size_t o = 0; o < n_out; ++o) {
        T acc = T(layer.biases[o]);
        for (std::size_t i = 0; i < n_in; ++i) acc += T(layer.weights[o * n_in + i]) * in[i];
        if (layer.activation == Activation::relu && acc < T(0)) acc = T(0);
        out[o] = acc;
    }
}

template <typename T>
void ref_conv_relu(const ConvLayer& layer, const RefValue<T>& in, RefValue<T>& out) {
    const std::size_t f_count = layer.filter_count(), channels = layer.in_channels();
    const std::size_t h = in.height, w = in.width;
    out.channels = f_count;
    out.height = h;
    out.width = w;
    out.data.assign(f_count * h * w, T(0));
    for (std::size_t f = 0; f < f_count; ++f) {
        for (long r = 0; r < static_cast<long>(h); ++r) {
            for (long c = 0; c < static_cast<long>(w); ++c) {
                T acc = T(layer.biases[f]);
                for (std::size_t ch = 0; ch < channels; ++ch) {
                    for (long kr = -1; kr <= 1; ++kr) {
                        for (long kc = -1; kc <= 1; ++kc) {
                            const long rr = r + kr, cc = c + kc;
                            if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w))
                                continue;
                            const double tap =
                                layer.filters[((f * channels + ch) * 3 + (kr + 1)) * 3 + (kc + 1)];
                            acc += T(tap) * in.data[(ch * h + rr) * w + cc];
                        }
                    }
                }
                if (acc < T(0)) acc = T(0);
                out.data[(f * h + r) * w + c] = acc;
            }
        }
    }
}

template <typename T>
void ref_maxpool(RefValue<T>& value) {
    const std::size_t oh = value.height / 2, ow = value.width / 2;
    std::vector<T> pooled(value.channels * oh * ow);
    for (std::size_t ch = 0; ch < value.channels; ++ch) {
        for (std::size_t r = 0; r < oh; ++r) {
            for (std::size_t c = 0; c < ow; ++c) {
                T best = value.data[(ch * value.height + 2 * r) * value.width + 2 * c];
                best = std::max(best, value.data[(ch * value.height + 2 * r) * value.width + 2 * c + 1]);
                best = std::max(best, value.data[(ch * value.height + 2 * r + 1) * value.width + 2 * c]);
                best = std::max(best, value.data[(ch * value.height + 2 * r + 1) * value.width + 2 * c + 1]);
                pooled[(ch * oh + r) * ow + c] = best;
            }
        }
    }
    value.data = std::move(pooled);
    value.height = oh;
    value.width = ow;
}

template <typename T>
T ref_cross_entropy_row(const OutputHead& head, const std::vector<T>& in, int label) {
    const std::size_t classes = head.n_classes(), n_in = head.in_width();
    std::vector<T> logits(classes);
    for (std::size_t o = 0; o < classes; ++o) {
        T acc = T(head.biases[o]);
        for (std::size_t i = 0; i < n_in; ++i) acc += T(head.weights[o * n_in + i]) * in[i];
        logits[o] = acc;
    }
    T mx = logits[0];
    for (std::size_t o = 1; o < classes; ++o) mx = std::max(mx, logits[o]);
    T denom = T(0);
    for (std::size_t o = 0; o < classes; ++o) denom += std::exp(logits[o] - mx);
    T p = std::exp(logits[static_cast<std::size_t>(label)] - mx) / denom;
    if (p < T(1e-12)) p = T(1e-12);
    return -std::log(p);
}

template <typename T>
T ref_squared_sum(const Tensor& t) {
    T s = T(0);
    for (std::size_t i = 0; i < t.size(); ++i) s += T(t[i]) * T(t[i]);
    return s;
}

template <typename T>
T reference_shallow_loss(const ShallowNet& net, const Tensor& x, const std::vector<int>& labels, double l2) {
    const std::size_t batch = x.dim(0);
    const std::size_t sample = x.size() / batch;
    T total = T(0);
    std::vector<T> flat, next;
    for (std::size_t b = 0; b < batch; ++b) {
        flat.assign(x.data() + b * sample, x.data() + (b + 1) * sample);
        if (net.stage && std::holds_alternative<ConvLayer>(*net.stage)) {
            RefValue<T> value;
            value.channels = x.dim(1);
            value.height = x.dim(2);
            value.width = x.dim(3);
            value.data = flat;
            RefValue<T> conv_out;
            ref_conv_relu(std::get<ConvLayer>(*net.stage), value, conv_out);
            if (net.stage_pool) ref_maxpool(conv_out);
            flat = std::move(conv_out.data);
        } else if (net.stage) {
            ref_dense(std::get<DenseLayer>(*net.stage), flat, next);
            flat = next;
        }
        if (net.intermediate_fc) {
            ref_dense(*net.intermediate_fc, flat, next);
            flat = next;
        }
        total += ref_cross_entropy_row(net.head, flat, labels[b]);
    }
    T loss = total / T(batch);
    if (l2 != 0.0) {
        T sq = ref_squared_sum<T>(net.head.weights);
        if (net.intermediate_fc) sq += ref_squared_sum<T>(net.intermediate_fc->weights);
        if (net.stage) {
            if (const auto* d = std::get_if<DenseLayer>(&*net.stage)) {
                sq += ref_squared_sum<T>(d->weights);
            } else {
                sq += ref_squared_sum<T>(std::get<ConvLayer>(*net.stage).filters);
            }
        }
        loss += T(l2) * sq;
    }
    return loss;
}

template <typename T>
T reference_deep_loss(const DeepNet& net, const Tensor& x, const std::vector<int>& labels, double l2) {
    const std::size_t batch = x.dim(0);
    const std::size_t sample = x.size() / batch;
    T total = T(0);
    std::vector<T> next;
    for (std::size_t b = 0; b < batch; ++b) {
        RefValue<T> value;
        if (x.rank() == 4) {
            value.channels = x.dim(1);
            value.height = x.dim(2);
            value.width = x.dim(3);
        }
        value.data.assign(x.data() + b * sample, x.data() + (b + 1) * sample);
        for (const auto& block : net.blocks) {
            if (const auto* dense = std::get_if<DenseLayer>(&block.layer)) {
                ref_dense(*dense, value.data, next);
                value.data = next;
                value.channels = value.height = value.width = 0;
            } else {
                RefValue<T> conv_out;
                ref_conv_relu(std::get<ConvLayer>(block.layer), value, conv_out);
                if (block.pool_after) ref_maxpool(conv_out);
                value = std::move(conv_out);
            }
        }
        total += ref_cross_entropy_row(net.head, value.data, labels[b]);
    }
    T loss = total / T(batch);
    if (l2 != 0.0) {
        T sq = ref_squared_sum<T>(net.head.weights);
        for (const auto& block : net.blocks) {
            if (const auto* d = std::get_if<DenseLayer>(&block.layer)) {
                sq += ref_squared_sum<T>(d->weights);
            } else {
                sq += ref_squared_sum<T>(std::get<ConvLayer>(block.layer).filters);
            }
        }
        loss += T(l2) * sq;
    }
    return loss;
}

}  // namespace ftnn::detail
