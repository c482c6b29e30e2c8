#include "ftnn/layers.hpp"

#include <cmath>
#include <string>

#include "ftnn/error.hpp"

namespace ftnn {

namespace {

void require_rank4(const Tensor& x, const char* who) {
    if (x.rank() != 4) {
        throw DimensionError(std::string(who) + ": expected [B x C x H x W], got " + x.shape_str());
    }
}

double init_bound(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace

DenseLayer make_dense_layer(std::size_t in, std::size_t out, Activation act, SeededRng& rng) {
    DenseLayer layer;
    layer.weights = uniform_init(rng, {out, in}, init_bound(in, out));
    layer.biases = Tensor({out});
    layer.activation = act;
    return layer;
}

ConvLayer make_conv_layer(std::size_t in_channels, std::size_t filters, SeededRng& rng) {
    ConvLayer layer;
    const std::size_t fan_in = in_channels * 9, fan_out = filters * 9;
    layer.filters = uniform_init(rng, {filters, in_channels, 3, 3}, init_bound(fan_in, fan_out));
    layer.biases = Tensor({filters});
    return layer;
}

OutputHead make_output_head(std::size_t in, std::size_t n_classes, SeededRng& rng) {
    OutputHead head;
    head.weights = uniform_init(rng, {n_classes, in}, init_bound(in, n_classes));
    head.biases = Tensor({n_classes});
    return head;
}

Tensor dense_preactivation(const DenseLayer& layer, const Tensor& x) {
    if (x.rank() != 2 || x.cols() != layer.in_width()) {
        throw DimensionError("dense_forward: input " + x.shape_str() + " does not match layer width " +
                             std::to_string(layer.in_width()));
    }
    Tensor pre = matmul_transposed_b(x, layer.weights);
    add_row_vector(pre, layer.biases);
    return pre;
}

Tensor dense_forward(const DenseLayer& layer, const Tensor& x) {
    Tensor pre = dense_preactivation(layer, x);
    if (layer.activation == Activation::relu) {
        double* p = pre.data();
        for (std::size_t i = 0; i < pre.size(); ++i) p[i] = relu(p[i]);
    }
    return pre;
}

Tensor im2col_3x3(const Tensor& x) {
    require_rank4(x, "im2col_3x3");
    const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor cols({b * h * w, c * 9});
    const double* px = x.data();
    double* pc = cols.data();
    const std::size_t row_len = c * 9;
    for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t cc = 0; cc < w; ++cc) {
                double* out = pc + ((bi * h + r) * w + cc) * row_len;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double* img = px + (bi * c + ch) * h * w;
                    for (int kr = -1; kr <= 1; ++kr) {
                        const long rr = static_cast<long>(r) + kr;
                        for (int kc = -1; kc <= 1; ++kc) {
                            const long sc = static_cast<long>(cc) + kc;
                            double v = 0.0;
                            if (rr >= 0 && rr < static_cast<long>(h) && sc >= 0 && sc < static_cast<long>(w)) {
                                v = img[rr * w + sc];
                            }
                            *out++ = v;
                        }
                    }
                }
            }
        }
    }
    return cols;
}

Tensor to_position_major(const Tensor& x) {
    require_rank4(x, "to_position_major");
    const std::size_t b = x.dim(0), f = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor rows({b * hw, f});
    const double* px = x.data();
    double* pr = rows.data();
    for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t fi = 0; fi < f; ++fi) {
            const double* src = px + (bi * f + fi) * hw;
            for (std::size_t pos = 0; pos < hw; ++pos) {
                pr[(bi * hw + pos) * f + fi] = src[pos];
            }
        }
    }
    return rows;
}

Tensor col2im_3x3(const Tensor& cols, std::size_t batch, std::size_t channels, std::size_t height,
                  std::size_t width) {
    if (cols.rank() != 2 || cols.rows() != batch * height * width || cols.cols() != channels * 9) {
        throw DimensionError("col2im_3x3: patch matrix " + cols.shape_str() + " does not match image dims");
    }
    Tensor x({batch, channels, height, width});
    double* px = x.data();
    const double* pc = cols.data();
    const std::size_t row_len = channels * 9;
    for (std::size_t bi = 0; bi < batch; ++bi) {
        for (std::size_t r = 0; r < height; ++r) {
            for (std::size_t cc = 0; cc < width; ++cc) {
                const double* in = pc + ((bi * height + r) * width + cc) * row_len;
                for (std::size_t ch = 0; ch < channels; ++ch) {
                    double* img = px + (bi * channels + ch) * height * width;
                    for (int kr = -1; kr <= 1; ++kr) {
                        const long rr = static_cast<long>(r) + kr;
                        for (int kc = -1; kc <= 1; ++kc) {
                            const long sc = static_cast<long>(cc) + kc;
                            const double v = *in++;
                            if (rr >= 0 && rr < static_cast<long>(height) && sc >= 0 &&
                                sc < static_cast<long>(width)) {
                                img[rr * width + sc] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    return x;
}

Tensor conv_preactivation(const ConvLayer& layer, const Tensor& x) {
    require_rank4(x, "conv_forward");
    if (x.dim(1) != layer.in_channels()) {
        throw DimensionError("conv_forward: input channels " + std::to_string(x.dim(1)) +
                             " do not match filter depth " + std::to_string(layer.in_channels()));
    }
    const std::size_t b = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t f = layer.filter_count(), c = layer.in_channels();
    const Tensor cols = im2col_3x3(x);
    const Tensor flat = layer.filters.reshaped({f, c * 9});
    // rows: (b, r, c) position-major; columns: filter
    const Tensor out_pos = matmul_transposed_b(cols, flat);
    Tensor out({b, f, h, w});
    const double* po = out_pos.data();
    const double* pb = layer.biases.data();
    double* px = out.data();
    const std::size_t hw = h * w;
    for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t pos = 0; pos < hw; ++pos) {
            const double* row = po + (bi * hw + pos) * f;
            for (std::size_t fi = 0; fi < f; ++fi) {
                px[(bi * f + fi) * hw + pos] = row[fi] + pb[fi];
            }
        }
    }
    return out;
}

Tensor conv_forward(const ConvLayer& layer, const Tensor& x) {
    Tensor pre = conv_preactivation(layer, x);
    double* p = pre.data();
    for (std::size_t i = 0; i < pre.size(); ++i) p[i] = relu(p[i]);
    return pre;
}

MaxPoolResult maxpool_2x2_with_argmax(const Tensor& x) {
    require_rank4(x, "maxpool_2x2");
    const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h < 2 || w < 2) {
        throw DimensionError("maxpool_2x2: spatial dims must be at least 2x2, got " + x.shape_str());
    }
    const std::size_t oh = h / 2, ow = w / 2;
    MaxPoolResult res{Tensor({b, c, oh, ow}), {}};
    res.argmax.resize(b * c * oh * ow);
    const double* px = x.data();
    double* po = res.output.data();
    std::size_t oi = 0;
    for (std::size_t bc = 0; bc < b * c; ++bc) {
        const double* img = px + bc * h * w;
        for (std::size_t r = 0; r < oh; ++r) {
            for (std::size_t cc = 0; cc < ow; ++cc) {
                std::size_t best = (2 * r) * w + 2 * cc;
                double bv = img[best];
                const std::size_t cand[3] = {(2 * r) * w + 2 * cc + 1, (2 * r + 1) * w + 2 * cc,
                                             (2 * r + 1) * w + 2 * cc + 1};
                for (std::size_t k : cand) {
                    if (img[k] > bv) {
                        bv = img[k];
                        best = k;
                    }
                }
                po[oi] = bv;
                res.argmax[oi] = static_cast<std::uint32_t>(bc * h * w + best);
                ++oi;
            }
        }
    }
    return res;
}

Tensor maxpool_2x2(const Tensor& x) { return maxpool_2x2_with_argmax(x).output; }

DropoutResult dropout_forward(const Tensor& x, const DropoutSpec& spec, SeededRng& rng, Mode mode) {
    if (spec.rate < 0.0 || spec.rate >= 1.0) throw DomainError("dropout rate must lie in [0, 1)");
    DropoutResult res{x, Tensor(x.shape())};
    double* mask = res.mask.data();
    if (mode == Mode::eval || spec.rate == 0.0) {
        for (std::size_t i = 0; i < res.mask.size(); ++i) mask[i] = 1.0;
        return res;
    }
    const double keep_fraction = 1.0 - spec.rate;
    double* out = res.output.data();
    for (std::size_t i = 0; i < res.output.size(); ++i) {
        const bool keep = rng.next_double() >= spec.rate;
        mask[i] = keep ? 1.0 : 0.0;
        out[i] = keep ? out[i] / keep_fraction : 0.0;  // exactly input * mask / (1-rate)
    }
    return res;
}

Tensor head_logits(const OutputHead& head, const Tensor& x) {
    if (x.rank() != 2 || x.cols() != head.in_width()) {
        throw DimensionError("softmax_forward: input " + x.shape_str() + " does not match head width " +
                             std::to_string(head.in_width()));
    }
    Tensor logits = matmul_transposed_b(x, head.weights);
    add_row_vector(logits, head.biases);
    return logits;
}

Tensor softmax_rows(const Tensor& logits) {
    Tensor probs = logits;
    const std::size_t n = probs.cols();
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        double* row = probs.data() + i * n;
        double mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
    }
    return probs;
}

Tensor softmax_forward(const OutputHead& head, const Tensor& x) { return softmax_rows(head_logits(head, x)); }

}  // namespace ftnn
