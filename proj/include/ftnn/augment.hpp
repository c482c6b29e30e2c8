#pragma once

#include <cstdint>

#include "ftnn/dataset.hpp"

namespace ftnn {

/// Magnitudes for the random affine copies appended by augment().
struct AugmentConfig {
    int max_shift_px = 2;
    double max_rotation_deg = 15.0;
    double scale_lo = 0.9;
    double scale_hi = 1.1;
    std::size_t copies_per_image = 1;
    std::uint64_t seed = 0;
};

/// Append copies_per_image transformed copies of every image.  Each copy
/// draws rotation ~ U[-max_rot, max_rot], scale ~ U[lo, hi] and shift
/// ~ U[-max_shift, max_shift]^2 from a per-copy substream derived from
/// (seed, image index, copy index), then resamples about the image center
/// with bilinear interpolation and zero fill.  Labels are duplicated.
/// Requires image layout [N x C x H x W].
Dataset augment(const Dataset& data, const AugmentConfig& config);

/// Resample one [C x H x W] image under the inverse affine map used by
/// augment(); exposed for oracle tests.  Positive angles rotate content in
/// the +column -> +row direction; shift moves content by (dx, dy) pixels.
void affine_resample(const double* src, double* dst, std::size_t channels, std::size_t height,
                     std::size_t width, double angle_rad, double scale, double dx, double dy);

}  // namespace ftnn
