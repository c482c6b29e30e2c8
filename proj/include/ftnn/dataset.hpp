#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ftnn/tensor.hpp"

namespace ftnn {

/// Labeled feature set; the carrier for every pipeline stage's view of the
/// data.  Features are stored row-major, one sample per leading index, either
/// in memory or memory-mapped from a spill file; storage is immutable and
/// shared across copies.
class Dataset {
public:
    Dataset() = default;

    /// features: [N x sample dims...]; labels: N entries in [0, n_classes).
    Dataset(Tensor features, std::vector<int> labels, int n_classes);

    std::size_t size() const { return count_; }
    bool empty() const { return count_ == 0; }
    int n_classes() const { return n_classes_; }
    const std::vector<int>& labels() const { return labels_; }

    /// Per-sample feature shape, e.g. {784} or {1, 28, 28}.
    const std::vector<std::size_t>& sample_shape() const { return sample_shape_; }
    std::size_t sample_size() const { return sample_size_; }

    std::span<const double> sample(std::size_t i) const;
    const double* feature_data() const { return base_; }

    /// Batch features for the given sample indices, shape [idx.size() x dims].
    Tensor gather(std::span<const std::size_t> indices) const;

    /// All features as one tensor (copies when file-backed).
    Tensor features_tensor() const;

    /// Same samples with features viewed as flat vectors [N x d].
    Dataset flattened() const;
    /// Same samples with features viewed as [N x C x H x W].
    Dataset reshaped_samples(std::vector<std::size_t> sample_shape) const;

    bool file_backed() const { return mapped_ != nullptr; }

    /// Spill format (.ftd): see save_dataset below.
    void save(const std::string& path) const;
    static Dataset load(const std::string& path, bool map = true);

private:
    std::vector<std::size_t> sample_shape_;
    std::size_t sample_size_ = 0;
    std::size_t count_ = 0;
    std::vector<int> labels_;
    int n_classes_ = 0;

    std::shared_ptr<const std::vector<double>> memory_;
    std::shared_ptr<const class MappedFile> mapped_;
    const double* base_ = nullptr;
};

/// Seeded shuffle, then partition into ceil(N*(1-f)) train and the rest val.
std::pair<Dataset, Dataset> split(const Dataset& data, double val_fraction, std::uint64_t seed);

/// Four Gaussian clusters at (+-1, +-1); label 1 where the coordinate signs
/// differ.  n must be >= 4 and divisible by 4; classes are exactly balanced.
Dataset synth_xor(std::size_t n, double noise, std::uint64_t seed);

}  // namespace ftnn
