#include <cmath>

#include "doctest.h"

#include "ftnn/error.hpp"
#include "ftnn/layers.hpp"

using namespace ftnn;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.same_shape(b));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("dense_forward: identity weights pass input through") {
    DenseLayer layer;
    layer.weights = Tensor::identity(3);
    layer.biases = Tensor({3});
    layer.activation = Activation::identity;
    SeededRng rng(3);
    const Tensor x = uniform_init(rng, {5, 3}, 1.0);
    CHECK(max_abs_diff(dense_forward(layer, x), x) == 0.0);
}

TEST_CASE("dense_forward: zero input with relu gives zeros") {
    SeededRng rng(4);
    const DenseLayer layer = make_dense_layer(4, 6, Activation::relu, rng);
    DenseLayer no_bias = layer;
    no_bias.biases = Tensor({6});
    const Tensor out = dense_forward(no_bias, Tensor({2, 4}));
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
}

TEST_CASE("dense_forward: per-neuron dot-product oracle") {
    SeededRng rng(5);
    const DenseLayer layer = make_dense_layer(3, 5, Activation::relu, rng);
    const Tensor x = uniform_init(rng, {4, 3}, 1.0);
    const Tensor out = dense_forward(layer, x);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t o = 0; o < 5; ++o) {
            double pre = layer.biases[o];
            for (std::size_t t = 0; t < 3; ++t) pre += x.at(i, t) * layer.weights.at(o, t);
            const double expect = pre > 0.0 ? pre : 0.0;
            CHECK(std::abs(out.at(i, o) - expect) < 1e-12);
        }
    }
}

TEST_CASE("dense_forward: width mismatch raises dimension error") {
    SeededRng rng(6);
    const DenseLayer layer = make_dense_layer(3, 5, Activation::relu, rng);
    CHECK_THROWS_AS(dense_forward(layer, Tensor({2, 4})), DimensionError);
}

TEST_CASE("conv_forward: delta kernel is the identity on nonnegative images") {
    ConvLayer layer;
    layer.filters = Tensor({1, 1, 3, 3});
    layer.filters[4] = 1.0;  // center tap
    layer.biases = Tensor({1});
    SeededRng rng(7);
    Tensor x = uniform_init(rng, {2, 1, 5, 5}, 1.0);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::abs(x[i]);
    CHECK(max_abs_diff(conv_forward(layer, x), x) == 0.0);
}

TEST_CASE("conv_forward: all-ones filter on constant image counts the window") {
    ConvLayer layer;
    layer.filters = Tensor({1, 1, 3, 3}, std::vector<double>(9, 1.0));
    layer.biases = Tensor({1});
    Tensor x({1, 1, 5, 5}, std::vector<double>(25, 1.0));
    const Tensor out = conv_forward(layer, x);
    for (std::size_t r = 0; r < 5; ++r) {
        for (std::size_t c = 0; c < 5; ++c) {
            const bool edge_r = (r == 0 || r == 4), edge_c = (c == 0 || c == 4);
            const double expect = edge_r && edge_c ? 4.0 : (edge_r || edge_c ? 6.0 : 9.0);
            CHECK(out[r * 5 + c] == expect);
        }
    }
}

TEST_CASE("conv_forward: zero image gives zero output") {
    SeededRng rng(8);
    const ConvLayer layer = make_conv_layer(2, 3, rng);
    const Tensor out = conv_forward(layer, Tensor({2, 2, 4, 4}));
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
}

TEST_CASE("conv_forward: channel mismatch raises dimension error") {
    SeededRng rng(9);
    const ConvLayer layer = make_conv_layer(3, 2, rng);
    CHECK_THROWS_AS(conv_forward(layer, Tensor({1, 2, 4, 4})), DimensionError);
}

TEST_CASE("conv_forward: multichannel result matches direct summation oracle") {
    SeededRng rng(10);
    const ConvLayer layer = make_conv_layer(2, 3, rng);
    const Tensor x = uniform_init(rng, {2, 2, 6, 6}, 1.0);
    const Tensor out = conv_forward(layer, x);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t f = 0; f < 3; ++f)
            for (long r = 0; r < 6; ++r)
                for (long c = 0; c < 6; ++c) {
                    double acc = layer.biases[f];
                    for (std::size_t ch = 0; ch < 2; ++ch)
                        for (long kr = -1; kr <= 1; ++kr)
                            for (long kc = -1; kc <= 1; ++kc) {
                                const long rr = r + kr, cc = c + kc;
                                if (rr < 0 || cc < 0 || rr >= 6 || cc >= 6) continue;
                                const double pix = x[((b * 2 + ch) * 6 + rr) * 6 + cc];
                                const double tap =
                                    layer.filters[((f * 2 + ch) * 3 + (kr + 1)) * 3 + (kc + 1)];
                                acc += pix * tap;
                            }
                    const double expect = acc > 0.0 ? acc : 0.0;
                    CHECK(std::abs(out[((b * 3 + f) * 6 + r) * 6 + c] - expect) < 1e-12);
                }
}

TEST_CASE("conv and dense forwards: positive homogeneity through relu") {
    SeededRng rng(11);
    DenseLayer dense = make_dense_layer(4, 5, Activation::relu, rng);
    dense.biases = Tensor({5});
    ConvLayer conv = make_conv_layer(1, 2, rng);
    conv.biases = Tensor({2});
    const Tensor x = uniform_init(rng, {3, 4}, 1.0);
    const Tensor img = uniform_init(rng, {1, 1, 5, 5}, 1.0);
    const double c = 2.5;

    Tensor xc = x;
    for (std::size_t i = 0; i < xc.size(); ++i) xc[i] *= c;
    Tensor imgc = img;
    for (std::size_t i = 0; i < imgc.size(); ++i) imgc[i] *= c;

    Tensor scaled_out = dense_forward(dense, x);
    for (std::size_t i = 0; i < scaled_out.size(); ++i) scaled_out[i] *= c;
    CHECK(max_abs_diff(dense_forward(dense, xc), scaled_out) < 1e-12);

    Tensor conv_scaled = conv_forward(conv, img);
    for (std::size_t i = 0; i < conv_scaled.size(); ++i) conv_scaled[i] *= c;
    CHECK(max_abs_diff(conv_forward(conv, imgc), conv_scaled) < 1e-12);
}

TEST_CASE("maxpool_2x2: single window and constant image") {
    const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor out = maxpool_2x2(x);
    CHECK(out.size() == 1);
    CHECK(out[0] == 4.0);

    const Tensor constant({1, 1, 4, 4}, std::vector<double>(16, 3.5));
    const Tensor pooled = maxpool_2x2(constant);
    CHECK(pooled.shape() == std::vector<std::size_t>{1, 1, 2, 2});
    for (std::size_t i = 0; i < pooled.size(); ++i) CHECK(pooled[i] == 3.5);
}

TEST_CASE("maxpool_2x2: window-scan oracle on 6x6 and odd truncation") {
    SeededRng rng(12);
    const Tensor x = uniform_init(rng, {1, 1, 6, 6}, 1.0);
    const Tensor out = maxpool_2x2(x);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c) {
            double best = -1e300;
            for (std::size_t dr = 0; dr < 2; ++dr)
                for (std::size_t dc = 0; dc < 2; ++dc)
                    best = std::max(best, x[(2 * r + dr) * 6 + (2 * c + dc)]);
            CHECK(out[r * 3 + c] == best);
        }

    const Tensor odd = uniform_init(rng, {1, 1, 7, 7}, 1.0);
    CHECK(maxpool_2x2(odd).shape() == std::vector<std::size_t>{1, 1, 3, 3});
}

TEST_CASE("maxpool_2x2: rejects spatial dims below 2") {
    CHECK_THROWS_AS(maxpool_2x2(Tensor({1, 1, 1, 5})), DimensionError);
    CHECK_THROWS_AS(maxpool_2x2(Tensor({1, 1, 5, 1})), DimensionError);
}

TEST_CASE("dropout_forward: rate 0 and eval mode are the identity") {
    SeededRng rng(13);
    const Tensor x = uniform_init(rng, {4, 5}, 1.0);
    SeededRng d1(1);
    const DropoutResult r0 = dropout_forward(x, DropoutSpec{0.0}, d1, Mode::train);
    CHECK(max_abs_diff(r0.output, x) == 0.0);
    for (std::size_t i = 0; i < r0.mask.size(); ++i) CHECK(r0.mask[i] == 1.0);

    SeededRng d2(1);
    const DropoutResult re = dropout_forward(x, DropoutSpec{0.7}, d2, Mode::eval);
    CHECK(max_abs_diff(re.output, x) == 0.0);
}

TEST_CASE("dropout_forward: statistics and exact mask identity") {
    SeededRng rng(14);
    Tensor x = uniform_init(rng, {100, 1000}, 1.0);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::abs(x[i]);  // nonzero mean
    SeededRng drop_rng(99);
    const double rate = 0.3;
    const DropoutResult res = dropout_forward(x, DropoutSpec{rate}, drop_rng, Mode::train);

    std::size_t survivors = 0;
    double in_mean = 0.0, out_mean = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(res.output[i] == res.mask[i] * x[i] / (1.0 - rate));  // exact identity
        survivors += res.mask[i] == 1.0 ? 1 : 0;
        in_mean += x[i];
        out_mean += res.output[i];
    }
    const double frac = static_cast<double>(survivors) / static_cast<double>(x.size());
    CHECK(std::abs(frac - 0.7) < 0.01);
    in_mean /= static_cast<double>(x.size());
    out_mean /= static_cast<double>(x.size());
    CHECK(std::abs(out_mean - in_mean) < 0.01 * std::max(std::abs(in_mean), 0.05));
}

TEST_CASE("softmax_forward: equal logits give the uniform distribution") {
    OutputHead head;
    head.weights = Tensor({4, 3});
    head.biases = Tensor({4});
    const Tensor x({2, 3}, {1, 2, 3, -1, 0, 1});
    const Tensor probs = softmax_forward(head, x);
    for (std::size_t i = 0; i < probs.size(); ++i) CHECK(probs[i] == doctest::Approx(0.25));
}

TEST_CASE("softmax_rows: extreme logits do not overflow") {
    const Tensor logits({1, 2}, {1000.0, 0.0});
    const Tensor probs = softmax_rows(logits);
    CHECK(probs.all_finite());
    CHECK(probs[0] == doctest::Approx(1.0));
    CHECK(probs[1] == doctest::Approx(0.0));
}

TEST_CASE("softmax_rows: exp/sum oracle, simplex property") {
    SeededRng rng(15);
    const Tensor logits = uniform_init(rng, {6, 9}, 3.0);
    const Tensor probs = softmax_rows(logits);
    for (std::size_t i = 0; i < 6; ++i) {
        double denom = 0.0;
        for (std::size_t j = 0; j < 9; ++j) denom += std::exp(logits.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < 9; ++j) {
            const double expect = std::exp(logits.at(i, j)) / denom;
            CHECK(std::abs(probs.at(i, j) - expect) < 1e-12);
            CHECK(probs.at(i, j) > 0.0);
            sum += probs.at(i, j);
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax_forward: width mismatch raises dimension error") {
    SeededRng rng(16);
    const OutputHead head = make_output_head(5, 3, rng);
    CHECK_THROWS_AS(softmax_forward(head, Tensor({2, 4})), DimensionError);
}
