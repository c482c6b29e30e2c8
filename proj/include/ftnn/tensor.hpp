#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ftnn/rng.hpp"

namespace ftnn {

/// Dense row-major array of doubles with an explicit shape.
///
/// The batch axis, when present, is always the first one.  All kernels in
/// this module are pure and keep finite inputs finite.
class Tensor {
public:
    Tensor() = default;

    /// Zero-filled tensor of the given shape.
    explicit Tensor(std::vector<std::size_t> shape);

    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor identity(std::size_t n);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_[axis]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    /// Rows/cols of a rank-2 tensor.
    std::size_t rows() const;
    std::size_t cols() const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& operator[](std::size_t flat) { return data_[flat]; }
    double operator[](std::size_t flat) const { return data_[flat]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols_cache_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_cache_ + c]; }

    /// Reinterpret the same elements under a new shape (same total size).
    Tensor reshaped(std::vector<std::size_t> new_shape) const&;
    Tensor reshaped(std::vector<std::size_t> new_shape) &&;
    void set_shape(std::vector<std::size_t> new_shape);

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

    bool all_finite() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
    std::size_t cols_cache_ = 0;  // last axis extent, for at(r,c)

    void refresh_cache();
};

/// c[i][j] = sum_t a[i][t] * b[t][j]; shapes [m x k] * [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// c = a * b^T for a [m x k], b [n x k] -> [m x n].
Tensor matmul_transposed_b(const Tensor& a, const Tensor& b);

/// c = a^T * b for a [k x m], b [k x n] -> [m x n].
Tensor matmul_transposed_a(const Tensor& a, const Tensor& b);

Tensor elementwise_map(const Tensor& x, const std::function<double(double)>& f);

/// Per-row index of the maximal entry; ties break to the lowest index.
std::vector<int> argmax_rows(const Tensor& x);

/// i.i.d. uniform values on [-bound, +bound]; bound must be positive.
Tensor uniform_init(SeededRng& rng, std::vector<std::size_t> shape, double bound);

/// x[r][c] += row[c] for every r.
void add_row_vector(Tensor& x, const Tensor& row);

/// out[c] = sum_r x[r][c].
Tensor column_sums(const Tensor& x);

double relu(double v);

/// FNV-1a over the raw bytes of the tensor values, in storage order.
std::uint64_t fnv1a_bytes(const void* bytes, std::size_t n, std::uint64_t h = 0xCBF29CE484222325ULL);
std::uint64_t tensor_hash(const Tensor& t, std::uint64_t h = 0xCBF29CE484222325ULL);

/// Kernel-level worker count (row-partitioned loops only, so results are
/// bit-identical for any setting).  Initialized from FTNN_THREADS, else 1.
int thread_count();
void set_thread_count(int n);

}  // namespace ftnn
