#include "ftnn/augment.hpp"

#include <cmath>
#include <cstring>

#include "ftnn/error.hpp"

namespace ftnn {

namespace {

constexpr double kPi = 3.14159265358979323846;

double bilinear(const double* img, std::size_t height, std::size_t width, double row, double col) {
    const double fr = std::floor(row), fc = std::floor(col);
    const long r0 = static_cast<long>(fr), c0 = static_cast<long>(fc);
    const double wr = row - fr, wc = col - fc;
    auto pixel = [&](long r, long c) -> double {
        if (r < 0 || c < 0 || r >= static_cast<long>(height) || c >= static_cast<long>(width)) return 0.0;
        return img[r * static_cast<long>(width) + c];
    };
    return (1.0 - wr) * ((1.0 - wc) * pixel(r0, c0) + wc * pixel(r0, c0 + 1)) +
           wr * ((1.0 - wc) * pixel(r0 + 1, c0) + wc * pixel(r0 + 1, c0 + 1));
}

}  // namespace

void affine_resample(const double* src, double* dst, std::size_t channels, std::size_t height,
                     std::size_t width, double angle_rad, double scale, double dx, double dy) {
    const double cx = (static_cast<double>(width) - 1.0) / 2.0;
    const double cy = (static_cast<double>(height) - 1.0) / 2.0;
    const double cos_a = std::cos(angle_rad), sin_a = std::sin(angle_rad);
    for (std::size_t ch = 0; ch < channels; ++ch) {
        const double* simg = src + ch * height * width;
        double* dimg = dst + ch * height * width;
        for (std::size_t r = 0; r < height; ++r) {
            for (std::size_t c = 0; c < width; ++c) {
                // invert the forward map (scale, rotate, shift about center)
                const double u = (static_cast<double>(c) - cx - dx) / scale;
                const double w = (static_cast<double>(r) - cy - dy) / scale;
                const double src_col = cx + u * cos_a + w * sin_a;
                const double src_row = cy - u * sin_a + w * cos_a;
                dimg[r * width + c] = bilinear(simg, height, width, src_row, src_col);
            }
        }
    }
}

Dataset augment(const Dataset& data, const AugmentConfig& config) {
    if (data.sample_shape().size() != 3) {
        throw ContractError("augment: image layout [N x C x H x W] required");
    }
    if (config.scale_lo > 1.0 || config.scale_hi < 1.0 || config.scale_lo <= 0.0) {
        throw DomainError("augment: scale range must contain 1.0 and be positive");
    }
    if (config.copies_per_image == 0) return data;

    const std::size_t n = data.size();
    const std::size_t channels = data.sample_shape()[0];
    const std::size_t height = data.sample_shape()[1];
    const std::size_t width = data.sample_shape()[2];
    const std::size_t sample = data.sample_size();
    const std::size_t total = n * (1 + config.copies_per_image);

    std::vector<std::size_t> shape{total, channels, height, width};
    Tensor features(std::move(shape));
    std::vector<int> labels(total);
    std::memcpy(features.data(), data.feature_data(), n * sample * sizeof(double));
    std::copy(data.labels().begin(), data.labels().end(), labels.begin());

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t copy = 0; copy < config.copies_per_image; ++copy) {
            // per-copy substream: deterministic and order-independent
            SeededRng rng(SeededRng::derive(config.seed, i * config.copies_per_image + copy));
            const double angle = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg) * kPi / 180.0;
            const double scale = rng.uniform(config.scale_lo, config.scale_hi);
            const double shift = static_cast<double>(config.max_shift_px);
            const double dx = rng.uniform(-shift, shift);
            const double dy = rng.uniform(-shift, shift);
            const std::size_t out_index = n + i * config.copies_per_image + copy;
            affine_resample(data.feature_data() + i * sample, features.data() + out_index * sample, channels,
                            height, width, angle, scale, dx, dy);
            labels[out_index] = data.labels()[i];
        }
    }
    return Dataset(std::move(features), std::move(labels), data.n_classes());
}

}  // namespace ftnn
