#include "ftnn/dataset.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "ftnn/error.hpp"
#include "ftnn/serialize_util.hpp"

namespace ftnn {

/// Read-only mmap of a spill file; unmapped on destruction.
class MappedFile {
public:
    explicit MappedFile(const std::string& path) {
        fd_ = ::open(path.c_str(), O_RDONLY);
        if (fd_ < 0) throw IoError("cannot open " + path);
        struct stat st{};
        if (::fstat(fd_, &st) != 0) {
            ::close(fd_);
            throw IoError("cannot stat " + path);
        }
        size_ = static_cast<std::size_t>(st.st_size);
        addr_ = ::mmap(nullptr, size_, PROT_READ, MAP_SHARED, fd_, 0);
        if (addr_ == MAP_FAILED) {
            ::close(fd_);
            throw IoError("cannot mmap " + path);
        }
    }
    ~MappedFile() {
        if (addr_ != MAP_FAILED && addr_ != nullptr) ::munmap(addr_, size_);
        if (fd_ >= 0) ::close(fd_);
    }
    MappedFile(const MappedFile&) = delete;
    MappedFile& operator=(const MappedFile&) = delete;

    const unsigned char* bytes() const { return static_cast<const unsigned char*>(addr_); }
    std::size_t size() const { return size_; }

private:
    int fd_ = -1;
    void* addr_ = nullptr;
    std::size_t size_ = 0;
};

namespace {

constexpr char kDataMagic[8] = {'F', 'T', 'D', 'A', 'T', 'A', '1', '\0'};
constexpr std::uint32_t kDataVersion = 1;

std::size_t shape_product(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

}  // namespace

Dataset::Dataset(Tensor features, std::vector<int> labels, int n_classes) {
    if (features.rank() < 1) throw DimensionError("dataset features need a sample axis");
    count_ = features.dim(0);
    if (count_ != labels.size()) {
        throw DimensionError("dataset: " + std::to_string(count_) + " samples vs " +
                             std::to_string(labels.size()) + " labels");
    }
    if (n_classes <= 0) throw DomainError("dataset: n_classes must be positive");
    for (int y : labels) {
        if (y < 0 || y >= n_classes) throw DomainError("dataset: label " + std::to_string(y) + " out of range");
    }
    sample_shape_.assign(features.shape().begin() + 1, features.shape().end());
    sample_size_ = shape_product(sample_shape_);
    labels_ = std::move(labels);
    n_classes_ = n_classes;
    auto holder = std::make_shared<std::vector<double>>(std::move(features.storage()));
    base_ = holder->data();
    memory_ = std::move(holder);
}

std::span<const double> Dataset::sample(std::size_t i) const {
    return {base_ + i * sample_size_, sample_size_};
}

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
    std::vector<std::size_t> shape{indices.size()};
    shape.insert(shape.end(), sample_shape_.begin(), sample_shape_.end());
    Tensor out(std::move(shape));
    double* dst = out.data();
    for (std::size_t k = 0; k < indices.size(); ++k) {
        std::memcpy(dst + k * sample_size_, base_ + indices[k] * sample_size_, sample_size_ * sizeof(double));
    }
    return out;
}

Tensor Dataset::features_tensor() const {
    std::vector<std::size_t> shape{count_};
    shape.insert(shape.end(), sample_shape_.begin(), sample_shape_.end());
    return Tensor(std::move(shape), std::vector<double>(base_, base_ + count_ * sample_size_));
}

Dataset Dataset::flattened() const {
    Dataset out = *this;
    out.sample_shape_ = {sample_size_};
    return out;
}

Dataset Dataset::reshaped_samples(std::vector<std::size_t> sample_shape) const {
    if (shape_product(sample_shape) != sample_size_) {
        throw DimensionError("reshaped_samples: incompatible sample shape");
    }
    Dataset out = *this;
    out.sample_shape_ = std::move(sample_shape);
    return out;
}

void Dataset::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    ByteWriter w;
    w.raw(kDataMagic, 8);
    w.u32(kDataVersion);
    w.u32(static_cast<std::uint32_t>(n_classes_));
    w.u32(static_cast<std::uint32_t>(sample_shape_.size()));
    w.u64(count_);
    for (auto d : sample_shape_) w.u64(d);
    for (int y : labels_) w.u32(static_cast<std::uint32_t>(y));
    while (w.bytes.size() % 8 != 0) w.bytes.push_back(0);  // align feature block
    f.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
    f.write(reinterpret_cast<const char*>(base_),
            static_cast<std::streamsize>(count_ * sample_size_ * sizeof(double)));
    if (!f) throw IoError("short write to " + path);
}

Dataset Dataset::load(const std::string& path, bool map) {
    auto mf = std::make_shared<MappedFile>(path);
    ByteReader r(mf->bytes(), mf->size());
    char magic[8];
    r.raw(magic, 8);
    if (std::memcmp(magic, kDataMagic, 8) != 0) throw ParseError(path + ": not a dataset spill file");
    const auto version = r.u32();
    if (version != kDataVersion) {
        throw ParseError(path + ": unsupported dataset version " + std::to_string(version));
    }
    Dataset d;
    d.n_classes_ = static_cast<int>(r.u32());
    const auto rank = r.u32();
    d.count_ = r.u64();
    d.sample_shape_.resize(rank);
    for (auto& dim : d.sample_shape_) dim = r.u64();
    d.sample_size_ = shape_product(d.sample_shape_);
    d.labels_.resize(d.count_);
    for (auto& y : d.labels_) y = static_cast<int>(r.u32());
    r.align(8);
    const std::size_t need = d.count_ * d.sample_size_ * sizeof(double);
    if (r.remaining() < need) throw ParseError(path + ": truncated feature block");
    if (map) {
        d.base_ = reinterpret_cast<const double*>(mf->bytes() + r.offset());
        d.mapped_ = std::move(mf);
    } else {
        auto holder = std::make_shared<std::vector<double>>(d.count_ * d.sample_size_);
        std::memcpy(holder->data(), mf->bytes() + r.offset(), need);
        d.base_ = holder->data();
        d.memory_ = std::move(holder);
    }
    return d;
}

std::pair<Dataset, Dataset> split(const Dataset& data, double val_fraction, std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw DomainError("split: val_fraction must lie in (0, 1)");
    }
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    SeededRng rng(SeededRng::derive(seed, 0x5EED5));
    rng.shuffle(order);
    const auto n_train =
        static_cast<std::size_t>(std::ceil(static_cast<double>(data.size()) * (1.0 - val_fraction)));
    auto build = [&](std::size_t begin, std::size_t end) {
        std::vector<std::size_t> idx(order.begin() + static_cast<long>(begin),
                                     order.begin() + static_cast<long>(end));
        Tensor feats = data.gather(idx);
        std::vector<int> labels(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = data.labels()[idx[i]];
        return Dataset(std::move(feats), std::move(labels), data.n_classes());
    };
    return {build(0, n_train), build(n_train, data.size())};
}

Dataset synth_xor(std::size_t n, double noise, std::uint64_t seed) {
    if (n < 4 || n % 4 != 0) throw DomainError("synth_xor: n must be >= 4 and divisible by 4");
    Tensor feats({n, 2});
    std::vector<int> labels(n);
    SeededRng rng(seed);
    const double centers[4][2] = {{1, 1}, {-1, 1}, {1, -1}, {-1, -1}};
    std::size_t i = 0;
    for (std::size_t cluster = 0; cluster < 4; ++cluster) {
        const bool differs = (centers[cluster][0] * centers[cluster][1]) < 0;
        for (std::size_t k = 0; k < n / 4; ++k, ++i) {
            feats.at(i, 0) = centers[cluster][0] + rng.normal(0.0, noise);
            feats.at(i, 1) = centers[cluster][1] + rng.normal(0.0, noise);
            labels[i] = differs ? 1 : 0;
        }
    }
    return Dataset(std::move(feats), std::move(labels), 2);
}

}  // namespace ftnn
