#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ftnn/dataset.hpp"

namespace ftnn {

/// Raw IDX payload: grayscale images plus one byte label each.
struct RawDataset {
    std::vector<std::uint8_t> images;  // count * height * width bytes
    std::vector<std::uint8_t> labels;  // count bytes
    std::size_t count = 0;
    std::size_t height = 0;
    std::size_t width = 0;
};

/// Parse an IDX image/label file pair.  Magic numbers 0x00000803 (images)
/// and 0x00000801 (labels), big-endian dimension fields; files ending in
/// .gz are transparently decompressed.  Image and label counts must agree.
RawDataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Inverse of load_idx, bit-exact; used for fixtures and fetch output.
void write_idx(const RawDataset& raw, const std::string& images_path, const std::string& labels_path);

/// Header fields of a single IDX file, for inspection tooling.
struct IdxInfo {
    std::uint32_t magic = 0;
    std::vector<std::uint32_t> dims;
};
IdxInfo inspect_idx(const std::string& path);

enum class Layout : std::uint8_t { flat = 0, image = 1 };

/// Pixels scaled to [0,1]; flat layout gives [N x H*W], image layout
/// [N x 1 x H x W].  n_classes = max label + 1 (10 for MNIST).
Dataset normalize(const RawDataset& raw, Layout layout);
/// Same, with an explicit class count (for subsets that miss some digits).
Dataset normalize(const RawDataset& raw, Layout layout, int n_classes);

}  // namespace ftnn
