#include "ftnn/mnist.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "ftnn/error.hpp"

namespace ftnn {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

bool has_gz_suffix(const std::string& path) {
    return path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    if (has_gz_suffix(path)) {
        gzFile gz = gzopen(path.c_str(), "rb");
        if (gz == nullptr) throw IoError("cannot open " + path);
        std::vector<std::uint8_t> out;
        std::uint8_t buf[1 << 16];
        int n;
        while ((n = gzread(gz, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
        const bool bad = n < 0;
        gzclose(gz);
        if (bad) throw ParseError(path + ": gzip stream is corrupt");
        return out;
    }
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::string& path) {
    if (offset + 4 > bytes.size()) {
        throw ParseError(path + ": truncated header at offset " + std::to_string(offset));
    }
    return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
           (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
           (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) | static_cast<std::uint32_t>(bytes[offset + 3]);
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    if (has_gz_suffix(path)) {
        gzFile gz = gzopen(path.c_str(), "wb");
        if (gz == nullptr) throw IoError("cannot write " + path);
        const int written = gzwrite(gz, bytes.data(), static_cast<unsigned>(bytes.size()));
        gzclose(gz);
        if (written != static_cast<int>(bytes.size())) throw IoError("short gzip write to " + path);
        return;
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + path);
}

}  // namespace

IdxInfo inspect_idx(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    IdxInfo info;
    info.magic = read_be32(bytes, 0, path);
    const std::size_t ndims = info.magic & 0xFF;
    for (std::size_t i = 0; i < ndims; ++i) {
        info.dims.push_back(read_be32(bytes, 4 + 4 * i, path));
    }
    return info;
}

RawDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto img_bytes = read_file_bytes(images_path);
    const std::uint32_t img_magic = read_be32(img_bytes, 0, images_path);
    if (img_magic != kImageMagic) {
        char hex[16];
        std::snprintf(hex, sizeof(hex), "0x%08X", img_magic);
        throw ParseError(images_path + ": bad image magic " + hex + " at offset 0");
    }
    RawDataset raw;
    raw.count = read_be32(img_bytes, 4, images_path);
    raw.height = read_be32(img_bytes, 8, images_path);
    raw.width = read_be32(img_bytes, 12, images_path);
    const std::size_t expected = 16 + raw.count * raw.height * raw.width;
    if (img_bytes.size() < expected) {
        throw ParseError(images_path + ": truncated pixel data at offset " + std::to_string(img_bytes.size()) +
                         " (expected " + std::to_string(expected) + " bytes)");
    }
    raw.images.assign(img_bytes.begin() + 16, img_bytes.begin() + static_cast<long>(expected));

    const auto lbl_bytes = read_file_bytes(labels_path);
    const std::uint32_t lbl_magic = read_be32(lbl_bytes, 0, labels_path);
    if (lbl_magic != kLabelMagic) {
        char hex[16];
        std::snprintf(hex, sizeof(hex), "0x%08X", lbl_magic);
        throw ParseError(labels_path + ": bad label magic " + hex + " at offset 0");
    }
    const std::uint32_t lbl_count = read_be32(lbl_bytes, 4, labels_path);
    if (lbl_count != raw.count) {
        throw ParseError(labels_path + ": label count " + std::to_string(lbl_count) +
                         " does not match image count " + std::to_string(raw.count));
    }
    if (lbl_bytes.size() < 8 + raw.count) {
        throw ParseError(labels_path + ": truncated label data at offset " + std::to_string(lbl_bytes.size()));
    }
    raw.labels.assign(lbl_bytes.begin() + 8, lbl_bytes.begin() + 8 + static_cast<long>(raw.count));
    return raw;
}

void write_idx(const RawDataset& raw, const std::string& images_path, const std::string& labels_path) {
    std::vector<std::uint8_t> img;
    img.reserve(16 + raw.images.size());
    write_be32(img, kImageMagic);
    write_be32(img, static_cast<std::uint32_t>(raw.count));
    write_be32(img, static_cast<std::uint32_t>(raw.height));
    write_be32(img, static_cast<std::uint32_t>(raw.width));
    img.insert(img.end(), raw.images.begin(), raw.images.end());
    write_file_bytes(images_path, img);

    std::vector<std::uint8_t> lbl;
    lbl.reserve(8 + raw.labels.size());
    write_be32(lbl, kLabelMagic);
    write_be32(lbl, static_cast<std::uint32_t>(raw.count));
    lbl.insert(lbl.end(), raw.labels.begin(), raw.labels.end());
    write_file_bytes(labels_path, lbl);
}

Dataset normalize(const RawDataset& raw, Layout layout) {
    const std::size_t pixels = raw.height * raw.width;
    std::vector<std::size_t> shape;
    if (layout == Layout::flat) {
        shape = {raw.count, pixels};
    } else {
        shape = {raw.count, 1, raw.height, raw.width};
    }
    Tensor features(std::move(shape));
    double* p = features.data();
    for (std::size_t i = 0; i < raw.images.size(); ++i) {
        p[i] = static_cast<double>(raw.images[i]) / 255.0;
    }
    std::vector<int> labels(raw.labels.begin(), raw.labels.end());
    const int n_classes = labels.empty() ? 1 : *std::max_element(labels.begin(), labels.end()) + 1;
    return Dataset(std::move(features), std::move(labels), n_classes);
}

Dataset normalize(const RawDataset& raw, Layout layout, int n_classes) {
    Dataset base = normalize(raw, layout);
    if (n_classes < base.n_classes()) throw DomainError("normalize: n_classes below the largest label");
    return Dataset(base.features_tensor(), base.labels(), n_classes);
}

}  // namespace ftnn
